"""Problem-set ingestion.

A problem set is a directory of subdirectories, one per problem. Each problem
carries a ``problem.json`` with its metadata, a ``baseline.src`` with the code
to optimize (or the signature-plus-docstring to implement in generation
tasks), and optionally a ``driver.json`` describing how the measurement
harness should generate inputs and compare outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

VALID_MODES = ("serial", "parallel")
VALID_TASKS = ("optimize", "generate")


class ProblemLoadError(ValueError):
    """A problem directory is malformed; the message names file and field."""


@dataclass
class Problem:
    """One benchmark problem."""

    id: str
    mode: str = "serial"
    task: str = "optimize"
    baseline_source: str = ""
    driver_spec: dict | None = None
    tests: list[str] = field(default_factory=list)
    language: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in VALID_MODES:
            raise ProblemLoadError(
                f"problem {self.id!r}: unknown mode {self.mode!r} "
                f"(expected one of {VALID_MODES})"
            )
        if self.task not in VALID_TASKS:
            raise ProblemLoadError(
                f"problem {self.id!r}: unknown task {self.task!r} "
                f"(expected one of {VALID_TASKS})"
            )
        if self.task == "optimize" and not self.baseline_source:
            raise ProblemLoadError(
                f"problem {self.id!r}: optimize task requires a nonempty baseline"
            )
        if self.task == "generate" and not self.tests:
            raise ProblemLoadError(
                f"problem {self.id!r}: generate task requires at least one test case"
            )


def _load_problem_dir(path: Path) -> Problem:
    meta_path = path / "problem.json"
    baseline_path = path / "baseline.src"
    driver_path = path / "driver.json"
    if not meta_path.is_file():
        raise ProblemLoadError(f"missing mandatory file: {meta_path}")
    if not baseline_path.is_file():
        raise ProblemLoadError(f"missing mandatory file: {baseline_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemLoadError(f"{meta_path}: invalid JSON ({exc})") from exc
    driver_spec = None
    if driver_path.is_file():
        try:
            driver_spec = json.loads(driver_path.read_text())
        except json.JSONDecodeError as exc:
            raise ProblemLoadError(f"{driver_path}: invalid JSON ({exc})") from exc
    try:
        return Problem(
            id=meta.get("id", path.name),
            mode=meta.get("mode", "serial"),
            task=meta.get("task", "optimize"),
            baseline_source=baseline_path.read_text(),
            driver_spec=driver_spec,
            tests=meta.get("tests", []),
            language=meta.get("language"),
        )
    except ProblemLoadError as exc:
        raise ProblemLoadError(f"{meta_path}: {exc}") from exc


def load_problem_set(dir_path: str | Path) -> list[Problem]:
    """Load every problem subdirectory, sorted by id."""
    root = Path(dir_path)
    if not root.is_dir():
        raise ProblemLoadError(f"problem-set directory does not exist: {root}")
    problems = [
        _load_problem_dir(sub) for sub in sorted(root.iterdir()) if sub.is_dir()
    ]
    problems.sort(key=lambda p: p.id)
    return problems
