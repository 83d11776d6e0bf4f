"""Shared fixtures: a builder for fully scripted runs.

A scripted run is described by a plan mapping (agent_index, round_index) to
the candidate the agent "writes", its grading outcome, and the lesson text it
"solicits". The builder turns a plan into agent fixtures plus an evaluation
table so the whole loop replays deterministically with no network and no
compiler.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from scripted import (  # noqa: F401  (re-exported for test modules)
    ScriptedRun,
    build_scripted_run,
    default_plan,
    step,
)
