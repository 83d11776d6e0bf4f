"""Loader for the compiled-measurement harness renderer.

The harness lives in its own component directory (template plus renderer);
this bridge imports the renderer module from that directory so the local
evaluator can produce translation units without the package depending on the
harness at import time.
"""

from __future__ import annotations

import importlib.util
import sys
from pathlib import Path

from .evaluation import EpochPolicy, HarnessRenderer, RenderError


def load_renderer(harness_dir: str | Path) -> HarnessRenderer:
    """Import ``render_harness.py`` from the harness directory."""
    harness_dir = Path(harness_dir)
    module_path = harness_dir / "render_harness.py"
    if not module_path.is_file():
        raise RenderError(f"no renderer found at {module_path}")
    spec = importlib.util.spec_from_file_location("timing_harness_renderer", module_path)
    assert spec is not None and spec.loader is not None
    module = importlib.util.module_from_spec(spec)
    sys.modules.setdefault("timing_harness_renderer", module)
    spec.loader.exec_module(module)
    return _RendererAdapter(module, harness_dir)


class _RendererAdapter:
    """Adapts the harness module's render function to the evaluator protocol."""

    def __init__(self, module, harness_dir: Path) -> None:
        self._module = module
        self._template = (harness_dir / "templates" / "timing_harness.cpp.in").read_text()

    def render(self, problem, candidate_source: str, seed: int, policy: EpochPolicy) -> str:
        if problem.driver_spec is None:
            raise RenderError(f"problem {problem.id!r} has no driver spec")
        return self._module.render_harness(
            self._template,
            problem.driver_spec,
            problem.baseline_source,
            candidate_source,
            seed,
            {
                "min_epochs": policy.min_epochs,
                "max_epochs": policy.max_epochs,
                "spread_target": policy.target,
            },
        )
