"""Grading of candidate rewrites: compile, check correctness, time, classify.

The compiled measurement harness is a separate component; this module renders
and drives it, parses its line-oriented output grammar, and turns the outcome
into one of the grading scenarios. Generation-mode candidates are graded by
running them against synthetic test cases in a sandboxed subprocess instead.

Harness output grammar, one line each:

    INPUT_DIGEST=<hex64>
    CORRECT=<0|1>
    TESTS_PASSED=<int>/<int>
    TIME_NS median=<int> samples=<int>     (one per epoch and entry)

When a harness times both the baseline and the candidate, TIME_NS lines
alternate baseline/candidate within each epoch.
"""

from __future__ import annotations

import logging
import random
import re
import statistics
import subprocess
import sys
import tempfile
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

logger = logging.getLogger(__name__)

OUTPUT_CAP_BYTES = 1 << 20  # bounded capture of untrusted process output
SANDBOX_ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "OMP_NUM_THREADS")


class EvalStatus(str, Enum):
    FASTER = "faster"
    SLOWER = "slower"
    INCORRECT = "incorrect"
    COMPILE_ERROR = "compile_error"
    TIMEOUT = "timeout"
    CRASH = "crash"
    PASS = "pass"  # generation mode only: every synthetic test passed


class HarnessParseError(ValueError):
    """Harness output violated the line grammar."""


class RenderError(ValueError):
    """The harness template could not be rendered for this problem."""


class EvaluationError(RuntimeError):
    """Infrastructure failure distinct from a graded candidate outcome."""


@dataclass
class TimingReport:
    """Summary of one adaptive measurement: median of epoch medians."""

    median_ns: int
    samples: int  # number of measurement epochs contributing
    relative_spread: float  # (max - min) / median across epochs

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if self.median_ns <= 0:
            raise ValueError(f"median_ns must be positive, got {self.median_ns}")


@dataclass
class EpochPolicy:
    """Stop measuring once epoch medians are stable or the cap is reached."""

    target: float = 0.05
    max_epochs: int = 11
    min_epochs: int = 3


@dataclass
class ToolchainProfile:
    """How candidate translation units are compiled and run."""

    compile_command_template: str = "g++ {flags} {src} -o {out}"
    base_flags: list[str] = field(default_factory=lambda: ["-O2", "-std=c++17"])
    parallel_flags: list[str] = field(default_factory=lambda: ["-fopenmp"])
    compile_timeout: float = 60.0
    run_timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.compile_timeout <= 0 or self.run_timeout <= 0:
            raise ValueError("toolchain timeouts must be positive")

    def compile_argv(self, src: Path, out: Path, parallel: bool) -> list[str]:
        flags = list(self.base_flags) + (list(self.parallel_flags) if parallel else [])
        command = self.compile_command_template.format(
            src=str(src), out=str(out), flags=" ".join(flags)
        )
        return command.split()


@dataclass
class EvalResult:
    """Final grading of one candidate."""

    status: EvalStatus
    speedup_raw: float | None = None
    compiler_output: str | None = None
    tests_passed: int = 0
    tests_total: int = 0
    timing_baseline: TimingReport | None = None
    timing_candidate: TimingReport | None = None
    note: str = ""  # timeout/crash context carried into solicitation

    def __post_init__(self) -> None:
        self.status = EvalStatus(self.status)
        if self.status == EvalStatus.FASTER and not (
            self.speedup_raw is not None and self.speedup_raw > 1
        ):
            raise ValueError("faster requires speedup_raw > 1")
        if self.status == EvalStatus.SLOWER and not (
            self.speedup_raw is not None and 0 < self.speedup_raw <= 1
        ):
            raise ValueError("slower requires 0 < speedup_raw <= 1")
        if self.tests_passed > self.tests_total:
            raise ValueError("tests_passed cannot exceed tests_total")

    @property
    def all_tests_passed(self) -> bool:
        return self.tests_total > 0 and self.tests_passed == self.tests_total

    @property
    def pass_fraction(self) -> float:
        return self.tests_passed / self.tests_total if self.tests_total else 0.0

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "speedup_raw": self.speedup_raw,
            "compiler_output": self.compiler_output,
            "tests_passed": self.tests_passed,
            "tests_total": self.tests_total,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalResult":
        return cls(
            status=EvalStatus(data["status"]),
            speedup_raw=data.get("speedup_raw"),
            compiler_output=data.get("compiler_output"),
            tests_passed=data.get("tests_passed", 0),
            tests_total=data.get("tests_total", 0),
            note=data.get("note", ""),
        )


def classify(result: EvalResult) -> str:
    """Map a final evaluation to grading scenario a, b, c, or d.

    Runtime timeouts and crashes are behavioral failures and land in (c); the
    failure note rides along into the solicitation prompt.
    """
    if result.status == EvalStatus.FASTER:
        return "a"
    if result.status == EvalStatus.SLOWER:
        return "b"
    if result.status == EvalStatus.COMPILE_ERROR:
        return "d"
    return "c"


def clamped_speedup(result: EvalResult) -> float:
    """Aggregation convention: any non-improving candidate counts as 1."""
    if result.status == EvalStatus.FASTER:
        assert result.speedup_raw is not None
        return result.speedup_raw
    return 1.0


# --- harness output parsing -------------------------------------------------

_DIGEST_RE = re.compile(r"^INPUT_DIGEST=([0-9a-fA-F]+)$")
_CORRECT_RE = re.compile(r"^CORRECT=([01])$")
_TESTS_RE = re.compile(r"^TESTS_PASSED=(\d+)/(\d+)$")
_TIME_RE = re.compile(r"^TIME_NS median=(\d+) samples=(\d+)$")


@dataclass
class HarnessOutput:
    input_digest: str | None
    correct: bool | None
    tests_passed: int
    tests_total: int
    series: list[list[int]]  # epoch medians per entry, entry-major
    iterations: list[list[int]]  # per-epoch call counts, same shape


def parse_harness_output(text: str, entries: int = 2) -> HarnessOutput:
    """Parse the harness grammar; any unrecognized line is an error."""
    if entries < 1:
        raise ValueError("entries must be >= 1")
    digest: str | None = None
    correct: bool | None = None
    passed = total = 0
    times: list[int] = []
    iters: list[int] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if m := _DIGEST_RE.match(line):
            digest = m.group(1).lower()
        elif m := _CORRECT_RE.match(line):
            correct = m.group(1) == "1"
        elif m := _TESTS_RE.match(line):
            passed, total = int(m.group(1)), int(m.group(2))
        elif m := _TIME_RE.match(line):
            times.append(int(m.group(1)))
            iters.append(int(m.group(2)))
        else:
            raise HarnessParseError(f"unparseable harness line: {line!r}")
    if len(times) % entries != 0:
        raise HarnessParseError(
            f"{len(times)} TIME_NS lines do not divide into {entries} entries"
        )
    series: list[list[int]] = [[] for _ in range(entries)]
    iterations: list[list[int]] = [[] for _ in range(entries)]
    for i, (t, s) in enumerate(zip(times, iters)):
        series[i % entries].append(t)
        iterations[i % entries].append(s)
    return HarnessOutput(
        input_digest=digest,
        correct=correct,
        tests_passed=passed,
        tests_total=total,
        series=series,
        iterations=iterations,
    )


def timing_report(epoch_medians: Sequence[int]) -> TimingReport:
    if not epoch_medians:
        raise ValueError("no epochs measured")
    med = statistics.median(epoch_medians)
    spread = (max(epoch_medians) - min(epoch_medians)) / med if med > 0 else 0.0
    return TimingReport(
        median_ns=max(1, round(med)),
        samples=len(epoch_medians),
        relative_spread=spread,
    )


# --- sandboxed subprocess execution ------------------------------------------


@dataclass
class SandboxResult:
    returncode: int
    stdout: str
    stderr: str
    timed_out: bool


def run_sandboxed(
    argv: Sequence[str],
    timeout: float,
    cwd: str | Path | None = None,
    extra_env: dict[str, str] | None = None,
) -> SandboxResult:
    """Run untrusted code with a wall-clock timeout, a stripped environment,
    and bounded output capture."""
    import os

    env = {k: os.environ[k] for k in SANDBOX_ENV_ALLOWLIST if k in os.environ}
    if extra_env:
        env.update(extra_env)
    try:
        proc = subprocess.run(
            list(argv),
            capture_output=True,
            timeout=timeout,
            cwd=str(cwd) if cwd else None,
            env=env,
        )
        out = proc.stdout[:OUTPUT_CAP_BYTES].decode("utf-8", "replace")
        err = proc.stderr[:OUTPUT_CAP_BYTES].decode("utf-8", "replace")
        return SandboxResult(proc.returncode, out, err, timed_out=False)
    except subprocess.TimeoutExpired as exc:
        out = (exc.stdout or b"")[:OUTPUT_CAP_BYTES].decode("utf-8", "replace")
        err = (exc.stderr or b"")[:OUTPUT_CAP_BYTES].decode("utf-8", "replace")
        return SandboxResult(-1, out, err, timed_out=True)
    except OSError as exc:  # e.g. binary not executable
        return SandboxResult(126, "", str(exc), timed_out=False)


class TimingTimeout(RuntimeError):
    """A measurement run exceeded the configured run timeout."""


def adaptive_time(
    binary: str | Path,
    entry: str,
    seed: int,
    policy: EpochPolicy | None = None,
    run_timeout: float = 60.0,
    entries: int = 1,
) -> TimingReport:
    """Run a harness-protocol binary and summarize its epoch medians.

    The binary receives ``<seed> <min_epochs> <max_epochs> <spread_target>``
    as arguments and emits TIME_NS lines until its epoch medians stabilize
    under the policy or the epoch cap is hit. ``entry`` selects which series
    to report when the binary times both the baseline and the candidate.
    """
    policy = policy or EpochPolicy()
    argv = [
        str(binary),
        str(seed),
        str(policy.min_epochs),
        str(policy.max_epochs),
        repr(policy.target),
    ]
    result = run_sandboxed(argv, timeout=run_timeout)
    if result.timed_out:
        raise TimingTimeout(f"timing run exceeded {run_timeout}s: {binary}")
    if result.returncode != 0:
        raise EvaluationError(
            f"timing binary exited {result.returncode}: {result.stderr[:500]}"
        )
    output = parse_harness_output(result.stdout, entries=entries)
    index = {"baseline": 0, "candidate": 1}.get(entry, 0)
    return timing_report(output.series[index])


# --- optimization-mode evaluation --------------------------------------------


class HarnessRenderer(Protocol):
    """Produces the compilable measurement translation unit for a problem."""

    def render(
        self, problem, candidate_source: str, seed: int, policy: EpochPolicy
    ) -> str:
        ...


_TIMING_DOMAIN_LOCK = threading.Lock()  # one timing measurement at a time per host


def evaluate_optimization(
    problem,
    candidate_source: str,
    toolchain: ToolchainProfile,
    seed: int,
    renderer: HarnessRenderer,
    policy: EpochPolicy | None = None,
    workdir: str | Path | None = None,
) -> EvalResult:
    """Compile and grade a candidate rewrite against the problem baseline.

    The rendered harness runs baseline and candidate on identical seeded
    inputs; a correctness mismatch grades as incorrect, otherwise the speedup
    is the ratio of the two timing medians. Compile failures carry the
    compiler's diagnostics; run failures map to timeout/crash.
    """
    policy = policy or EpochPolicy()
    unit = renderer.render(problem, candidate_source, seed, policy)

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        src = Path(tmp) / "harness_unit.cpp"
        out = Path(tmp) / "harness_bin"
        src.write_text(unit)
        argv = toolchain.compile_argv(src, out, parallel=problem.mode == "parallel")
        compile_result = run_sandboxed(argv, timeout=toolchain.compile_timeout)
        if compile_result.timed_out:
            return EvalResult(
                status=EvalStatus.COMPILE_ERROR,
                compiler_output=f"[compile timeout after {toolchain.compile_timeout}s]",
            )
        if compile_result.returncode != 0:
            return EvalResult(
                status=EvalStatus.COMPILE_ERROR,
                compiler_output=compile_result.stderr or compile_result.stdout,
            )

        with _TIMING_DOMAIN_LOCK:
            run_result = run_sandboxed(
                [
                    str(out),
                    str(seed),
                    str(policy.min_epochs),
                    str(policy.max_epochs),
                    repr(policy.target),
                ],
                timeout=toolchain.run_timeout,
            )
        if run_result.timed_out:
            return EvalResult(
                status=EvalStatus.TIMEOUT,
                note=f"run exceeded {toolchain.run_timeout}s",
            )
        if run_result.returncode != 0:
            return EvalResult(
                status=EvalStatus.CRASH,
                note=f"exit code {run_result.returncode}: {run_result.stderr[:500]}",
            )
        try:
            output = parse_harness_output(run_result.stdout, entries=2)
        except HarnessParseError as exc:
            return EvalResult(status=EvalStatus.CRASH, note=str(exc))

    if not output.correct:
        return EvalResult(
            status=EvalStatus.INCORRECT,
            tests_passed=output.tests_passed,
            tests_total=output.tests_total,
        )
    baseline = timing_report(output.series[0])
    candidate = timing_report(output.series[1])
    speedup = baseline.median_ns / candidate.median_ns
    status = EvalStatus.FASTER if speedup > 1 else EvalStatus.SLOWER
    return EvalResult(
        status=status,
        speedup_raw=speedup,
        tests_passed=output.tests_passed,
        tests_total=output.tests_total,
        timing_baseline=baseline,
        timing_candidate=candidate,
    )


# --- generation-mode evaluation ----------------------------------------------

_GENERATION_TEST_PROGRAM = """\
{candidate}

assert ({test}), "test case failed"
"""


def evaluate_generation(
    problem,
    candidate_source: str,
    tests: Sequence[str],
    timeout_per_test: float = 10.0,
) -> EvalResult:
    """Run a generated function against each synthetic test expression.

    Each test is a boolean expression evaluated after executing the candidate
    source in a sandboxed interpreter; timeouts and crashes count as failures.
    All tests passing is the loop's early-termination signal.
    """
    if not tests:
        raise ValueError("generation evaluation requires at least one test case")
    passed = 0
    for test in tests:
        program = _GENERATION_TEST_PROGRAM.format(candidate=candidate_source, test=test)
        result = run_sandboxed(
            [sys.executable, "-c", program], timeout=timeout_per_test
        )
        if not result.timed_out and result.returncode == 0:
            passed += 1
    total = len(tests)
    status = EvalStatus.PASS if passed == total else EvalStatus.INCORRECT
    return EvalResult(status=status, tests_passed=passed, tests_total=total)


# --- seeded random inputs ----------------------------------------------------


def generate_graph_input(
    num_vertices: int,
    rng: random.Random,
    edge_range: tuple[int, int] | None = None,
) -> list[tuple[int, int]]:
    """Random undirected edge list: draw the edge count, then each endpoint.

    The edge count is uniform over a bounded range (default [0, 2n]) so the
    sampled graphs span a wide range of connected-component counts instead of
    being almost surely connected. Self-loops are permitted. Deterministic for
    a given rng state.
    """
    if num_vertices < 1:
        raise ValueError(f"num_vertices must be >= 1, got {num_vertices}")
    lo, hi = edge_range if edge_range is not None else (0, 2 * num_vertices)
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid edge range [{lo}, {hi}]")
    count = rng.randint(lo, hi)
    return [
        (rng.randrange(num_vertices), rng.randrange(num_vertices))
        for _ in range(count)
    ]


# --- evaluator implementations -----------------------------------------------


class Evaluator(Protocol):
    """Submit one candidate for grading; implementations may serialize runs."""

    def evaluate(
        self, problem, candidate_source: str, seed: int, round_index: int, agent_index: int
    ) -> EvalResult:
        ...


class ScriptedEvaluator:
    """Table-driven evaluator for scripted runs and replays.

    The table maps "<agent_index>:<round_index>" to an EvalResult dict; a
    top-level problem-id key scopes tables when one file covers a problem set.
    """

    def __init__(self, table: dict) -> None:
        self.table = table

    def _lookup(self, problem, key: str) -> dict:
        scope = self.table
        if problem.id in scope:
            scope = scope[problem.id]
        if key not in scope:
            raise EvaluationError(f"no scripted evaluation for {problem.id!r} {key!r}")
        return scope[key]

    def evaluate(
        self, problem, candidate_source: str, seed: int, round_index: int, agent_index: int
    ) -> EvalResult:
        entry = self._lookup(problem, f"{agent_index}:{round_index}")
        return EvalResult.from_dict(entry)


class LocalEvaluator:
    """Real evaluator: renders the harness, compiles, and measures locally.

    ``submit`` offers the asynchronous form: compilations from concurrent
    submissions may overlap, but the timing section is serialized through the
    host-wide timing lock so measurements never contend for the machine.
    """

    def __init__(
        self,
        toolchain: ToolchainProfile,
        renderer: HarnessRenderer,
        policy: EpochPolicy | None = None,
        workdir: str | Path | None = None,
        max_workers: int = 2,
    ) -> None:
        self.toolchain = toolchain
        self.renderer = renderer
        self.policy = policy or EpochPolicy()
        self.workdir = workdir
        self._max_workers = max_workers
        self._executor: ThreadPoolExecutor | None = None

    def evaluate(
        self, problem, candidate_source: str, seed: int, round_index: int, agent_index: int
    ) -> EvalResult:
        if problem.task == "generate":
            return evaluate_generation(problem, candidate_source, problem.tests)
        return evaluate_optimization(
            problem,
            candidate_source,
            self.toolchain,
            seed,
            self.renderer,
            policy=self.policy,
            workdir=self.workdir,
        )

    def submit(
        self, problem, candidate_source: str, seed: int, round_index: int, agent_index: int
    ) -> Future:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self._max_workers)
        return self._executor.submit(
            self.evaluate, problem, candidate_source, seed, round_index, agent_index
        )

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
