"""Benchmark aggregation and cost accounting.

Per-problem grading results roll up into three headline numbers: the fraction
of problems solved correctly, the fraction with better-than-2x speedup, and
the geometric-mean speedup over clamped per-problem values. Monetary cost
comes from per-model token prices; compute cost uses the standard
24 * n_layer * d_model^2 FLOPS-per-token estimate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .agents import AgentUsage
from .evaluation import EvalResult, EvalStatus, clamped_speedup

REPORT_SCHEMA_VERSION = 1

DEFAULT_PRICING_PATH = Path(__file__).parent / "data" / "pricing.json"


class PricingError(KeyError):
    """A model in the usage ledger has no pricing entry."""


@dataclass
class PricingEntry:
    """Price of one model, either flat or split input/output, per 1M tokens."""

    model: str
    flat_per_mtok: float | None = None
    input_per_mtok: float | None = None
    output_per_mtok: float | None = None

    def __post_init__(self) -> None:
        flat = self.flat_per_mtok is not None
        pair = self.input_per_mtok is not None and self.output_per_mtok is not None
        half_pair = (self.input_per_mtok is None) != (self.output_per_mtok is None)
        if half_pair or flat == pair:
            raise ValueError(
                f"pricing for {self.model!r} must set exactly one of "
                "flat_per_mtok or the input/output pair"
            )

    def cost(self, usage: AgentUsage) -> float:
        if self.flat_per_mtok is not None:
            return (usage.input_tokens + usage.output_tokens) / 1e6 * self.flat_per_mtok
        assert self.input_per_mtok is not None and self.output_per_mtok is not None
        return (
            usage.input_tokens / 1e6 * self.input_per_mtok
            + usage.output_tokens / 1e6 * self.output_per_mtok
        )


@dataclass
class ModelShape:
    """Transformer geometry used for the FLOPS-per-token estimate."""

    n_layer: int
    d_model: int

    def __post_init__(self) -> None:
        if self.n_layer <= 0 or self.d_model <= 0:
            raise ValueError("model shape dimensions must be positive")


@dataclass
class BenchmarkSummary:
    correct_fraction: float
    gt2x_fraction: float
    geomean_speedup: float
    per_problem: list[tuple[str, float, str]]  # (problem id, clamped speedup, status)

    def to_dict(self) -> dict:
        return {
            "correct_fraction": self.correct_fraction,
            "gt2x_fraction": self.gt2x_fraction,
            "geomean_speedup": self.geomean_speedup,
            "per_problem": [
                {"problem": pid, "clamped_speedup": s, "status": status}
                for pid, s, status in self.per_problem
            ],
        }


def geomean(speedups: Sequence[float]) -> float:
    """Geometric mean, computed in log space for stability."""
    if not speedups:
        raise ValueError("geomean of an empty list is undefined")
    total = 0.0
    for value in speedups:
        if value <= 0:
            raise ValueError(f"geomean requires positive values, got {value}")
        total += math.log(value)
    return math.exp(total / len(speedups))


def summarize(results: Sequence[tuple[str, EvalResult]]) -> BenchmarkSummary:
    """Aggregate best-candidate gradings over a problem set.

    A problem counts as correct when its best candidate compiled, ran, and
    matched the baseline on every test input, regardless of speed. The >2x
    count is strict: exactly 2.0 does not qualify.
    """
    if not results:
        raise ValueError("summarize requires at least one result")
    clamped: list[float] = []
    correct = 0
    gt2x = 0
    per_problem: list[tuple[str, float, str]] = []
    for problem_id, result in results:
        value = clamped_speedup(result)
        clamped.append(value)
        ran = result.status in (EvalStatus.FASTER, EvalStatus.SLOWER)
        if ran and result.tests_passed == result.tests_total:
            correct += 1
        if value > 2.0:
            gt2x += 1
        per_problem.append((problem_id, value, result.status.value))
    n = len(results)
    return BenchmarkSummary(
        correct_fraction=correct / n,
        gt2x_fraction=gt2x / n,
        geomean_speedup=geomean(clamped),
        per_problem=per_problem,
    )


def load_pricing(path: str | Path | None = None) -> dict[str, PricingEntry]:
    """Read the pricing file (JSON array of entries) into a model lookup."""
    entries = json.loads(Path(path or DEFAULT_PRICING_PATH).read_text())
    pricing: dict[str, PricingEntry] = {}
    for raw in entries:
        entry = PricingEntry(
            model=raw["model"],
            flat_per_mtok=raw.get("flat_per_mtok"),
            input_per_mtok=raw.get("input_per_mtok"),
            output_per_mtok=raw.get("output_per_mtok"),
        )
        pricing[entry.model] = entry
    return pricing


def estimate_cost(
    usage: Mapping[str, AgentUsage], pricing: Mapping[str, PricingEntry]
) -> float:
    """Dollar cost of a run: per-model token usage priced and summed.

    The sum is exact; rounding to the 3 decimals used in reports happens once
    at presentation time.
    """
    total = 0.0
    for model, model_usage in usage.items():
        if model not in pricing:
            raise PricingError(f"no pricing entry for model {model!r}")
        total += pricing[model].cost(model_usage)
    return total


def flops_per_token(shape: ModelShape) -> int:
    """Forward-pass FLOPS per generated token: 24 * n_layer * d_model^2."""
    return 24 * shape.n_layer * shape.d_model**2


def run_flops(shape: ModelShape, usage: AgentUsage) -> int:
    """FLOPS proxy for run latency: per-token cost times total tokens."""
    return flops_per_token(shape) * usage.total_tokens


def build_report(
    summary: BenchmarkSummary,
    usage: Mapping[str, AgentUsage],
    cost: float | None,
    *,
    config_digest: str = "",
    seed: int = 0,
    ablation: str = "full",
    partial: bool = False,
) -> dict:
    """Assemble the canonical report document."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_digest": config_digest,
        "seed": seed,
        "ablation": ablation,
        "partial": partial,
        "summary": summary.to_dict(),
        "usage": {name: u.to_dict() for name, u in usage.items()},
        "cost_usd": round(cost, 3) if cost is not None else None,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_to_csv(report: dict) -> str:
    """Per-problem rows; everything needed to re-plot the summary externally."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["problem", "clamped_speedup", "status", "ablation", "seed"])
    for row in report["summary"]["per_problem"]:
        writer.writerow(
            [
                row["problem"],
                row["clamped_speedup"],
                row["status"],
                report["ablation"],
                report["seed"],
            ]
        )
    return buffer.getvalue()


def emit_report(
    report: dict, out_dir: str | Path, formats: Sequence[str] = ("json", "csv")
) -> list[Path]:
    """Write the report in each requested format; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == "json":
            path = out / "report.json"
            path.write_text(report_to_json(report))
        elif fmt == "csv":
            path = out / "report.csv"
            path.write_text(report_to_csv(report))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written
