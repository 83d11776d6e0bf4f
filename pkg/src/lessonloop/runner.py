"""Run persistence, deterministic replay, and report generation.

A run directory is append-only while a run executes: every agent reply and
every evaluation is captured as it happens, so a completed run can be replayed
offline and must reproduce its transcripts byte for byte. The start manifest
is written before any work; the final manifest (with ``completed: true``)
lands last, which is how an in-progress or aborted run is recognized.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .agents import (
    Agent,
    AgentSpec,
    AgentUsage,
    CompletionReply,
    PromptContext,
    ScriptedAgent,
    build_agent,
    strict_fixture_key,
)
from .embedding import HashedBagEmbedder, ResilientEmbedder
from .evaluation import (
    EvalResult,
    Evaluator,
    ScriptedEvaluator,
)
from .lessons import SelectionConfig
from .metrics import (
    build_report,
    emit_report,
    estimate_cost,
    load_pricing,
    summarize,
)
from .orchestrator import Ablation, RunConfig, RunResult, run as run_loop
from .problems import Problem, load_problem_set

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

DEFAULTS = {
    "rounds": 4,
    "mode": "optimize",
    "ablation": "full",
    "seed": 0,
    "repeats": 1,
    "selection": {"k": 4, "threshold": 1.1, "epsilon": 0.1},
    "pricing_path": None,
}


def config_digest(config: dict) -> str:
    """Digest of the effective configuration; stable under key reordering."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def effective_config(file_config: dict | None, overrides: dict | None) -> dict:
    """Merge precedence: CLI overrides > config file > built-in defaults."""
    merged: dict = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    for layer in (file_config or {}), (overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key == "selection" and isinstance(value, dict):
                merged.setdefault("selection", {}).update(
                    {k: v for k, v in value.items() if v is not None}
                )
            else:
                merged[key] = value
    merged.setdefault("agents", [])
    merged.setdefault("toolchain", {"kind": "scripted"})
    return merged


def derived_seed(base_seed: int, repeat: int) -> int:
    """Distinct, stable seed per repetition; repeat 0 keeps the base seed."""
    if repeat == 0:
        return base_seed
    digest = hashlib.sha256(f"{base_seed}:{repeat}".encode()).hexdigest()
    return int(digest[:16], 16)


class RecordingAgent(Agent):
    """Pass-through wrapper that captures replies keyed by full-prompt digest.

    Captures are scoped per agent: two agents may receive the identical
    prompt yet answer differently, so their replies must not share a key.
    """

    def __init__(self, inner: Agent, capture: dict) -> None:
        super().__init__(inner.spec)
        self.inner = inner
        self.capture = capture.setdefault(inner.spec.name, {})

    def complete(self, prompt: str, context: PromptContext) -> CompletionReply:
        reply = self.inner.complete(prompt, context)
        self.capture[strict_fixture_key(prompt)] = {
            "text": reply.text,
            "input_tokens": reply.usage_delta.input_tokens,
            "output_tokens": reply.usage_delta.output_tokens,
        }
        return reply


class RecordingEvaluator:
    """Pass-through wrapper that captures evaluations for replay."""

    def __init__(self, inner: Evaluator, capture: dict) -> None:
        self.inner = inner
        self.capture = capture

    def evaluate(
        self, problem, candidate_source: str, seed: int, round_index: int, agent_index: int
    ) -> EvalResult:
        result = self.inner.evaluate(
            problem, candidate_source, seed, round_index, agent_index
        )
        self.capture.setdefault(problem.id, {})[
            f"{agent_index}:{round_index}"
        ] = result.to_dict()
        return result


def _build_evaluator(toolchain_config: dict, config_dir: Path | None) -> Evaluator:
    kind = toolchain_config.get("kind", "local")
    if kind == "scripted":
        table = toolchain_config.get("table")
        if table is None:
            table_path = toolchain_config.get("table_path")
            if table_path is None:
                raise ValueError("scripted toolchain needs 'table' or 'table_path'")
            path = Path(table_path)
            if config_dir is not None and not path.is_absolute():
                path = config_dir / path
            table = json.loads(path.read_text())
        return ScriptedEvaluator(table)
    if kind == "local":
        from .evaluation import EpochPolicy, LocalEvaluator, ToolchainProfile
        from .harness_bridge import load_renderer

        profile = ToolchainProfile(
            compile_command_template=toolchain_config.get(
                "compile_command_template", "g++ {flags} {src} -o {out}"
            ),
            base_flags=toolchain_config.get("base_flags", ["-O2", "-std=c++17"]),
            parallel_flags=toolchain_config.get("parallel_flags", ["-fopenmp"]),
            compile_timeout=toolchain_config.get("compile_timeout", 60.0),
            run_timeout=toolchain_config.get("run_timeout", 60.0),
        )
        policy_cfg = toolchain_config.get("policy", {})
        policy = EpochPolicy(
            target=policy_cfg.get("target", 0.05),
            max_epochs=policy_cfg.get("max_epochs", 11),
            min_epochs=policy_cfg.get("min_epochs", 3),
        )
        harness_dir = toolchain_config.get("harness_dir")
        if harness_dir is None:
            raise ValueError("local toolchain needs 'harness_dir'")
        renderer = load_renderer(Path(harness_dir))
        return LocalEvaluator(profile, renderer, policy=policy)
    raise ValueError(f"unknown toolchain kind {kind!r}")


def _build_agents(
    agent_configs: Sequence[dict], config_dir: Path | None
) -> list[Agent]:
    agents: list[Agent] = []
    for raw in agent_configs:
        raw = dict(raw)
        fixture_path = raw.get("fixture_path")
        if fixture_path and config_dir is not None:
            path = Path(fixture_path)
            if not path.is_absolute():
                raw["fixture_path"] = str(config_dir / path)
        agents.append(build_agent(AgentSpec(**raw)))
    return agents


def _run_config_for(problem: Problem, config: dict, seed: int) -> RunConfig:
    return RunConfig(
        n_agents=len(config["agents"]),
        rounds=config["rounds"],
        selection=SelectionConfig(**config["selection"]),
        mode=config["mode"],
        ablation=Ablation(config["ablation"]),
        rng_seed=seed,
        parallel_mode_hint=problem.mode == "parallel",
        language=problem.language or config.get("language"),
    )


@dataclass
class RunOutcome:
    exit_code: int
    run_dir: Path | None
    messages: list[str] = field(default_factory=list)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _new_run_dir(out_root: Path, digest: str) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%d-%H%M%S")
    base = out_root / f"run-{stamp}-{digest[:8]}"
    run_dir = base
    counter = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{counter}")
        counter += 1
    run_dir.mkdir(parents=True)
    return run_dir


def execute_run(
    config: dict,
    problems_dir: str | Path,
    out_root: str | Path,
    config_dir: str | Path | None = None,
) -> RunOutcome:
    """Run the loop over a problem set and persist all artifacts.

    Exit code 0 means no infrastructure errors; incorrect or slow candidates
    are results, not errors.
    """
    config_dir = Path(config_dir) if config_dir else None
    problems = load_problem_set(problems_dir)
    if not problems:
        return RunOutcome(1, None, ["problem set is empty"])
    if not config.get("agents"):
        return RunOutcome(1, None, ["no agents configured"])

    digest = config_digest(_redacted_config(config))
    out_root = Path(out_root)
    run_dir = _new_run_dir(out_root, digest)

    start_manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "created_at": _now(),
        "config": _redacted_config(config),
        "config_digest": digest,
        "seed": config["seed"],
        "repeats": config["repeats"],
        "problem_ids": [p.id for p in problems],
    }
    _write_json(run_dir / "manifest.start.json", start_manifest)

    captured_replies: dict = {}
    captured_evals: dict = {}
    results_index: list[dict] = []
    messages: list[str] = []

    try:
        base_agents = _build_agents(config["agents"], config_dir)
        evaluator = RecordingEvaluator(
            _build_evaluator(config["toolchain"], config_dir), captured_evals
        )
        agents = [RecordingAgent(a, captured_replies) for a in base_agents]
    except Exception as exc:
        messages.append(f"configuration error: {exc}")
        return RunOutcome(2, run_dir, messages)

    rep_summaries: list[list[tuple[str, EvalResult]]] = []
    try:
        for rep in range(config["repeats"]):
            seed = derived_seed(config["seed"], rep)
            rep_results: list[tuple[str, EvalResult]] = []
            for problem in problems:
                run_config = _run_config_for(problem, config, seed)
                embedder = ResilientEmbedder(HashedBagEmbedder(), on_degrade=None)
                result = run_loop(problem, agents, run_config, evaluator, embedder)
                _persist_problem(run_dir, problem, rep, result, run_config, digest)
                results_index.append(
                    {"problem": problem.id, "repeat": rep, "best_clamped": result.best.clamped}
                )
                best_eval = result.best.eval
                if best_eval is None:
                    from .evaluation import EvalStatus

                    best_eval = EvalResult(status=EvalStatus.INCORRECT)
                rep_results.append((problem.id, best_eval))
            rep_summaries.append(rep_results)
    except Exception as exc:
        logger.exception("run failed")
        messages.append(f"run error: {exc}")
        _write_json(run_dir / "captured_replies.json", captured_replies)
        _write_json(run_dir / "captured_evals.json", captured_evals)
        return RunOutcome(2, run_dir, messages)

    _write_json(run_dir / "captured_replies.json", captured_replies)
    _write_json(run_dir / "captured_evals.json", captured_evals)

    usage = _aggregate_usage(run_dir, problems, config["repeats"])
    try:
        cost = _maybe_cost(config, usage, messages, config_dir)
    except Exception as exc:
        messages.append(f"pricing configuration error: {exc}")
        return RunOutcome(2, run_dir, messages)
    report = build_report(
        summarize(rep_summaries[0]),
        usage,
        cost,
        config_digest=digest,
        seed=config["seed"],
        ablation=config["ablation"],
        partial=False,
    )
    if config["repeats"] > 1:
        report["repeats"] = _repeat_stats(rep_summaries)
    emit_report(report, run_dir)

    final_manifest = dict(start_manifest)
    final_manifest["completed"] = True
    final_manifest["completed_at"] = _now()
    final_manifest["results"] = results_index
    _write_json(run_dir / "manifest.json", final_manifest)
    return RunOutcome(0, run_dir, messages)


def _redacted_config(config: dict) -> dict:
    """Effective config as persisted: agent key env NAMES only, never values."""
    redacted = {k: v for k, v in config.items() if k != "agents"}
    redacted["agents"] = [AgentSpec(**a).redacted() for a in config.get("agents", [])]
    return redacted


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _persist_problem(
    run_dir: Path,
    problem: Problem,
    rep: int,
    result: RunResult,
    run_config: RunConfig,
    digest: str,
) -> None:
    problem_dir = run_dir / "problems" / problem.id / f"rep{rep}"
    problem_dir.mkdir(parents=True)
    (problem_dir / "transcript.jsonl").write_text(result.transcript.to_jsonl())
    (problem_dir / "bank.jsonl").write_text(result.bank.dump_jsonl())
    document = result.to_dict()
    document["problem"] = problem.id
    document["config_digest"] = digest
    document["seed"] = run_config.rng_seed
    _write_json(problem_dir / "result.json", document)


def _aggregate_usage(
    run_dir: Path, problems: Sequence[Problem], repeats: int
) -> dict[str, AgentUsage]:
    usage: dict[str, AgentUsage] = {}
    for problem in problems:
        for rep in range(repeats):
            path = run_dir / "problems" / problem.id / f"rep{rep}" / "result.json"
            data = json.loads(path.read_text())
            for name, u in data["usage"].items():
                usage.setdefault(name, AgentUsage()).add(AgentUsage(**u))
    return usage


def _maybe_cost(
    config: dict,
    usage: dict[str, AgentUsage],
    messages: list[str],
    config_dir: Path | None,
) -> float | None:
    """Price the run when agent models are known; scripted agents are free."""
    by_model: dict[str, AgentUsage] = {}
    model_of = {a["name"]: a.get("model", "") for a in config.get("agents", [])}
    for name, u in usage.items():
        model = model_of.get(name, "")
        if model:
            by_model.setdefault(model, AgentUsage()).add(u)
    if not by_model:
        return None
    pricing_path = config.get("pricing_path")
    if pricing_path and config_dir is not None and not Path(pricing_path).is_absolute():
        pricing_path = str(config_dir / pricing_path)
    pricing = load_pricing(pricing_path)
    return estimate_cost(by_model, pricing)


def _repeat_stats(rep_summaries: list[list[tuple[str, EvalResult]]]) -> dict:
    stats: dict = {"count": len(rep_summaries)}
    metrics = {"correct_fraction": [], "gt2x_fraction": [], "geomean_speedup": []}
    for rep_results in rep_summaries:
        summary = summarize(rep_results)
        metrics["correct_fraction"].append(summary.correct_fraction)
        metrics["gt2x_fraction"].append(summary.gt2x_fraction)
        metrics["geomean_speedup"].append(summary.geomean_speedup)
    for key, values in metrics.items():
        stats[key] = {
            "mean": statistics.fmean(values),
            "std": statistics.pstdev(values) if len(values) > 1 else 0.0,
        }
    return stats


# --- replay -------------------------------------------------------------------


def replay_run(run_dir: str | Path, problems_dir: str | Path) -> RunOutcome:
    """Re-execute a completed run from its captures and compare transcripts.

    Any divergence (including a missing capture for a prompt) exits nonzero
    with a pointer to the first differing transcript line.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        return RunOutcome(1, run_dir, [f"missing manifest: {manifest_path}"])
    manifest = json.loads(manifest_path.read_text())
    replies_path = run_dir / "captured_replies.json"
    evals_path = run_dir / "captured_evals.json"
    for required in (replies_path, evals_path):
        if not required.is_file():
            return RunOutcome(1, run_dir, [f"missing capture file: {required}"])
    captured_replies = json.loads(replies_path.read_text())
    captured_evals = json.loads(evals_path.read_text())
    config = manifest["config"]

    agents: list[Agent] = [
        ScriptedAgent(
            AgentSpec(
                name=a["name"],
                kind="scripted",
                strict_fixture_keys=True,
            ),
            fixtures=captured_replies.get(a["name"], {}),
        )
        for a in config["agents"]
    ]
    evaluator = ScriptedEvaluator(captured_evals)
    problems = {p.id: p for p in load_problem_set(problems_dir)}

    messages: list[str] = []
    for problem_id in manifest["problem_ids"]:
        problem = problems.get(problem_id)
        if problem is None:
            return RunOutcome(1, run_dir, [f"problem {problem_id!r} not found"])
        for rep in range(manifest.get("repeats", 1)):
            seed = derived_seed(manifest["seed"], rep)
            run_config = _run_config_for(problem, config, seed)
            embedder = ResilientEmbedder(HashedBagEmbedder(), on_degrade=None)
            try:
                result = run_loop(problem, agents, run_config, evaluator, embedder)
            except Exception as exc:
                return RunOutcome(
                    1, run_dir, [f"replay of {problem_id!r} rep{rep} failed: {exc}"]
                )
            stored = (
                run_dir / "problems" / problem_id / f"rep{rep}" / "transcript.jsonl"
            ).read_text()
            fresh = result.transcript.to_jsonl()
            if fresh != stored:
                divergence = _first_divergence(stored, fresh)
                return RunOutcome(
                    1,
                    run_dir,
                    [f"transcript divergence for {problem_id!r} rep{rep}: {divergence}"],
                )
            messages.append(f"{problem_id} rep{rep}: transcript identical")
    return RunOutcome(0, run_dir, messages)


def _first_divergence(stored: str, fresh: str) -> str:
    stored_lines = stored.splitlines()
    fresh_lines = fresh.splitlines()
    for i, (a, b) in enumerate(zip(stored_lines, fresh_lines)):
        if a != b:
            return f"line {i + 1}: stored={a!r} fresh={b!r}"
    if len(stored_lines) != len(fresh_lines):
        return (
            f"length mismatch: stored {len(stored_lines)} lines, "
            f"fresh {len(fresh_lines)} lines"
        )
    return "identical"


# --- report -------------------------------------------------------------------


def report_run(
    run_dir: str | Path, formats: Sequence[str] = ("json", "csv")
) -> RunOutcome:
    """(Re)emit summary documents from a run directory's raw results."""
    run_dir = Path(run_dir)
    start_path = run_dir / "manifest.start.json"
    final_path = run_dir / "manifest.json"
    if not start_path.is_file() and not final_path.is_file():
        return RunOutcome(1, run_dir, [f"no manifest under {run_dir}"])
    partial = not final_path.is_file()
    manifest = json.loads((final_path if not partial else start_path).read_text())

    results: list[tuple[str, EvalResult]] = []
    usage: dict[str, AgentUsage] = {}
    problems_root = run_dir / "problems"
    if problems_root.is_dir():
        for result_path in sorted(problems_root.glob("*/rep0/result.json")):
            data = json.loads(result_path.read_text())
            best = data["best"]
            if best["eval"] is not None:
                results.append((data["problem"], EvalResult.from_dict(best["eval"])))
            else:
                from .evaluation import EvalStatus

                results.append((data["problem"], EvalResult(status=EvalStatus.INCORRECT)))
            for name, u in data["usage"].items():
                usage.setdefault(name, AgentUsage()).add(AgentUsage(**u))
    if not results:
        return RunOutcome(1, run_dir, ["no results to report"])

    config = manifest["config"]
    cost = _maybe_cost(config, usage, [], None)
    report = build_report(
        summarize(results),
        usage,
        cost,
        config_digest=manifest["config_digest"],
        seed=manifest["seed"],
        ablation=config["ablation"],
        partial=partial,
    )
    try:
        written = emit_report(report, run_dir, formats)
    except ValueError as exc:
        return RunOutcome(2, run_dir, [str(exc)])
    return RunOutcome(0, run_dir, [str(p) for p in written])


# --- ablation sweep -----------------------------------------------------------


def ablate_run(
    config: dict,
    problems_dir: str | Path,
    out_root: str | Path,
    variants: Sequence[str] | None = None,
    config_dir: str | Path | None = None,
) -> RunOutcome:
    """Sugar for a variant sweep: one sub-run per ablation variant."""
    variants = list(variants or [a.value for a in Ablation])
    out_root = Path(out_root)
    sweep_dir = out_root / f"ablate-{_dt.datetime.now(_dt.timezone.utc):%Y%m%d-%H%M%S}"
    sweep_dir.mkdir(parents=True)
    rows = []
    exit_code = 0
    for variant in variants:
        variant_config = dict(config)
        variant_config["ablation"] = variant
        outcome = execute_run(variant_config, problems_dir, sweep_dir, config_dir)
        if outcome.exit_code != 0 or outcome.run_dir is None:
            exit_code = outcome.exit_code
            rows.append({"variant": variant, "error": "; ".join(outcome.messages)})
            continue
        report = json.loads((outcome.run_dir / "report.json").read_text())
        rows.append(
            {
                "variant": variant,
                "run_dir": str(outcome.run_dir),
                "geomean_speedup": report["summary"]["geomean_speedup"],
                "correct_fraction": report["summary"]["correct_fraction"],
                "gt2x_fraction": report["summary"]["gt2x_fraction"],
            }
        )
    _write_json(sweep_dir / "ablate_summary.json", {"variants": rows})
    return RunOutcome(exit_code, sweep_dir, [str(sweep_dir / 'ablate_summary.json')])
