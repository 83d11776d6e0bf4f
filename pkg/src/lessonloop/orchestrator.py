"""The round-based multi-agent improvement loop.

One run optimizes (or generates) code for a single problem: every agent
produces an initial candidate and a lesson about it, then each of the T
improvement rounds selects lessons from the bank, prompts every agent with
them, grades the rewrites, solicits a fresh lesson per candidate, deposits the
lessons, and adjusts the effectiveness factors of the lessons that were
applied. The best candidate across all rounds is returned together with the
full transcript, bank snapshot, and token accounting.

Phase order within an improvement round is fixed: select, then n improve
prompts, n evaluations, n solicitations, n deposits, and one adjustment. The
bank is written only in the deposit and adjust phases, so selection results
are stable for the whole round.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .agents import (
    Agent,
    AgentConfigError,
    AgentTransportError,
    AgentUsage,
    CodeBlockError,
    PromptContext,
    extract_code_block,
)
from .embedding import Embedder
from .evaluation import (
    EvalResult,
    EvalStatus,
    Evaluator,
    clamped_speedup,
    classify,
)
from .lessons import (
    Lesson,
    LessonBank,
    LessonKind,
    SelectionConfig,
    adjust_factors,
    select,
    select_high_relevance,
    select_high_speedup,
)
from . import prompts
from .prompts import PromptClass

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Ablation(str, Enum):
    """Selection-mechanism variants (full method plus five ablations)."""

    FULL = "full"
    SPEEDUP_ONLY = "speedup_only"
    RELEVANCE_ONLY = "relevance_only"
    NO_ADJUSTMENT = "no_adjustment"
    RANDOM_K = "random_k"
    NO_LESSONS = "no_lessons"


class RunError(RuntimeError):
    """The run could not proceed (infrastructure, not candidate quality)."""

    def __init__(self, message: str, diagnostics: list[str] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass
class RunConfig:
    """Everything that shapes one run, sufficient to replay it."""

    n_agents: int = 3
    rounds: int = 4
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    mode: str = "optimize"  # "optimize" | "generate"
    ablation: Ablation = Ablation.FULL
    rng_seed: int = 0
    parallel_mode_hint: bool = False
    language: str | None = None
    significant_cutoff: float | None = None

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.mode not in ("optimize", "generate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.ablation = Ablation(self.ablation)

    @property
    def effective_language(self) -> str:
        if self.language:
            return self.language
        return "C++" if self.mode == "optimize" else "Python"

    @property
    def cutoff(self) -> float:
        """Speedup dividing 'slightly' from 'significantly improves'."""
        if self.significant_cutoff is not None:
            return self.significant_cutoff
        return self.selection.threshold

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "rounds": self.rounds,
            "selection": {
                "k": self.selection.k,
                "threshold": self.selection.threshold,
                "epsilon": self.selection.epsilon,
            },
            "mode": self.mode,
            "ablation": self.ablation.value,
            "rng_seed": self.rng_seed,
            "parallel_mode_hint": self.parallel_mode_hint,
            "language": self.effective_language,
            "significant_cutoff": self.cutoff,
        }


@dataclass
class Candidate:
    """One agent-produced rewrite plus its grading."""

    agent_id: int
    round_index: int
    source: str
    eval: EvalResult | None
    speedup: float | None  # raw ratio (optimize) or pass fraction (generate)
    kept_original: bool = False

    @property
    def clamped(self) -> float:
        if self.eval is None:
            return 1.0
        return clamped_speedup(self.eval)

    def adjustment_score(self, mode: str) -> float:
        """The s_j fed into factor adjustment; 0 when nothing was measured."""
        if self.eval is None:
            return 0.0
        if mode == "generate":
            return self.eval.pass_fraction
        return self.eval.speedup_raw if self.eval.speedup_raw is not None else 0.0

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "round": self.round_index,
            "source": self.source,
            "eval": self.eval.to_dict() if self.eval else None,
            "speedup": self.speedup,
            "kept_original": self.kept_original,
        }


def _digest(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Transcript:
    """Append-only event log with a logical clock.

    ``ts`` is a deterministic event counter rather than wall-clock time so
    replays of the same run produce byte-identical logs; wall-clock timestamps
    belong in the run manifest.
    """

    def __init__(self) -> None:
        self.events: list[dict] = []

    def append(
        self, phase: str, round_index: int, agent: int | None, payload: dict
    ) -> None:
        self.events.append(
            {
                "ts": len(self.events),
                "phase": phase,
                "round": round_index,
                "agent": agent,
                "payload_digest": _digest(payload),
            }
        )

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(event, sort_keys=True, separators=(",", ":"))
            for event in self.events
        ]
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class RunResult:
    """Full record of one run."""

    best: Candidate
    all_candidates: list[Candidate]
    bank: LessonBank
    selections_per_round: list[list[int]]
    usage: dict[str, AgentUsage]
    transcript: Transcript
    mode: str
    ablation: Ablation
    embedder_degraded: bool = False
    terminated_early: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "ablation": self.ablation.value,
            "best": self.best.to_dict(),
            "candidates": [c.to_dict() for c in self.all_candidates],
            "selections_per_round": self.selections_per_round,
            "usage": {name: u.to_dict() for name, u in self.usage.items()},
            "bank": [lesson.to_record() for lesson in self.bank],
            "embedder_degraded": self.embedder_degraded,
            "terminated_early": self.terminated_early,
        }


def best_solution(
    candidates: Sequence[Candidate],
    mode: str = "optimize",
    original_source: str = "",
) -> Candidate:
    """Pick the winner: max clamped speedup (optimize) or max pass fraction.

    Ties go to the earliest candidate (lowest round, then lowest agent id).
    If nothing compiled and ran, the original code is kept: the sentinel
    result carries a clamped speedup of exactly 1.
    """
    if not candidates:
        raise ValueError("best_solution requires at least one candidate")
    if mode == "generate":
        ranked = sorted(
            candidates,
            key=lambda c: (
                -(c.eval.pass_fraction if c.eval else 0.0),
                c.round_index,
                c.agent_id,
            ),
        )
        return ranked[0]
    runnable = [
        c
        for c in candidates
        if c.eval is not None and c.eval.status in (EvalStatus.FASTER, EvalStatus.SLOWER)
    ]
    if not runnable:
        return Candidate(
            agent_id=-1,
            round_index=-1,
            source=original_source,
            eval=None,
            speedup=None,
            kept_original=True,
        )
    ranked = sorted(runnable, key=lambda c: (-c.clamped, c.round_index, c.agent_id))
    return ranked[0]


def apply_ablation(
    config: RunConfig,
    bank: LessonBank,
    query_code: str,
    embedder: Embedder,
    rng: random.Random,
) -> list[Lesson]:
    """Per-round lesson selection under the configured variant.

    All variants except no_lessons keep the take-all shortcut for banks of at
    most k lessons; the variants only replace how an oversized bank is
    filtered.
    """
    ablation = config.ablation
    if ablation == Ablation.NO_LESSONS:
        return []
    pool = list(bank)
    k = config.selection.k
    if len(pool) <= k:
        return pool
    if ablation in (Ablation.FULL, Ablation.NO_ADJUSTMENT):
        return select(bank, config.selection, query_code, embedder)
    if ablation == Ablation.SPEEDUP_ONLY:
        return select_high_speedup(pool, k, config.selection.threshold)[0]
    if ablation == Ablation.RELEVANCE_ONLY:
        return select_high_relevance(pool, k, query_code, embedder)
    if ablation == Ablation.RANDOM_K:
        return rng.sample(pool, k)
    raise ValueError(f"unhandled ablation {ablation}")


_SOLICIT_CLASS = {
    "a": PromptClass.SOLICIT_SPEEDUP,
    "b": PromptClass.SOLICIT_SLOWDOWN,
    "c": PromptClass.SOLICIT_INCORRECT,
    "d": PromptClass.SOLICIT_COMPILE_ERROR,
}


def solicitation_prompt(
    original: str, candidate_source: str, result: EvalResult, mode: str = "optimize"
) -> tuple[str, PromptClass, LessonKind, float]:
    """Build the scenario-specific solicitation prompt for a graded candidate.

    Returns the prompt, its class (for fixture keying), and the kind/score the
    resulting lesson will carry.
    """
    if mode == "generate":
        prompt = prompts.solicit_generation_prompt(
            candidate_source, result.tests_passed, result.tests_total
        )
        return (
            prompt,
            PromptClass.SOLICIT_TEST_FAILURE,
            LessonKind.TEST_FAILURE,
            result.pass_fraction,
        )
    scenario = classify(result)
    if scenario == "a":
        assert result.speedup_raw is not None
        prompt = prompts.solicit_performance_prompt(
            original, candidate_source, result.speedup_raw, faster=True
        )
        return prompt, _SOLICIT_CLASS["a"], LessonKind.SPEEDUP, result.speedup_raw
    if scenario == "b":
        assert result.speedup_raw is not None
        prompt = prompts.solicit_performance_prompt(
            original, candidate_source, result.speedup_raw, faster=False
        )
        return prompt, _SOLICIT_CLASS["b"], LessonKind.SLOWDOWN, result.speedup_raw
    if scenario == "d":
        prompt = prompts.solicit_compile_error_prompt(
            original, candidate_source, result.compiler_output or ""
        )
        return prompt, _SOLICIT_CLASS["d"], LessonKind.COMPILE_ERROR, 0.0
    prompt = prompts.solicit_incorrect_prompt(
        original, candidate_source, note=result.note
    )
    return prompt, _SOLICIT_CLASS["c"], LessonKind.INCORRECT, 0.0


def solicit_lesson(
    agent: Agent,
    original: str,
    candidate_source: str,
    result: EvalResult,
    *,
    lesson_id: int,
    agent_index: int,
    round_index: int,
    mode: str = "optimize",
) -> tuple[Lesson, AgentUsage]:
    """Ask the agent that produced a candidate to explain its grading outcome."""
    prompt, prompt_class, kind, score = solicitation_prompt(
        original, candidate_source, result, mode
    )
    context = PromptContext(
        prompt_class=prompt_class, round_index=round_index, agent_name=agent.name
    )
    reply = agent.complete(prompt, context)
    lesson = Lesson(
        id=lesson_id,
        agent_id=agent_index,
        round_index=round_index,
        content=reply.text.strip(),
        kind=kind,
        score=score,
    )
    return lesson, reply.usage_delta


def assemble_improve_prompt(
    original: str, lessons: Sequence[Lesson], config: RunConfig
) -> str:
    """Render the rewrite request: with lesson items when any were selected,
    otherwise the plain initial request (initial round, no_lessons variant)."""
    language = config.effective_language
    generation = config.mode == "generate"
    if not lessons:
        if generation:
            return prompts.initial_generate_prompt(original, language)
        return prompts.initial_optimize_prompt(
            original, language, config.parallel_mode_hint
        )
    items = [
        prompts.render_lesson_item(
            lesson, idx, significant_cutoff=config.cutoff, generation_mode=generation
        )
        for idx, lesson in enumerate(lessons, start=1)
    ]
    if generation:
        return prompts.improve_generate_prompt(original, items, language)
    return prompts.improve_optimize_prompt(
        original, items, language, config.parallel_mode_hint
    )


class _Runner:
    """Mutable state for one run; single writer over bank and transcript."""

    def __init__(
        self,
        problem,
        agents: Sequence[Agent],
        config: RunConfig,
        evaluator: Evaluator,
        embedder: Embedder,
    ) -> None:
        if not agents:
            raise RunError("no agents configured")
        if config.n_agents != len(agents):
            raise RunError(
                f"config says {config.n_agents} agents but {len(agents)} supplied"
            )
        self.problem = problem
        self.agents = list(agents)
        self.config = config
        self.evaluator = evaluator
        self.embedder = embedder
        self.rng = random.Random(config.rng_seed)
        self.bank = LessonBank()
        self.transcript = Transcript()
        self.usage = {agent.name: AgentUsage() for agent in agents}
        self.candidates: list[Candidate] = []
        self.selections: list[list[int]] = []
        self.lesson_ids = itertools.count(1)
        self.terminated_early = False
        # route embedder degradation notices into the transcript
        if getattr(embedder, "on_degrade", "absent") is None:
            embedder.on_degrade = lambda msg: self.transcript.append(
                "degrade", -1, None, {"message": msg}
            )

    @property
    def original(self) -> str:
        return self.problem.baseline_source

    def run(self) -> RunResult:
        config = self.config
        self._play_round(0, selected=[])
        if not self.terminated_early:
            for t in range(1, config.rounds + 1):
                selected = apply_ablation(
                    config, self.bank, self.original, self.embedder, self.rng
                )
                self.transcript.append(
                    "select", t, None, {"selected_ids": [l.id for l in selected]}
                )
                self.selections.append([l.id for l in selected])
                self._play_round(t, selected)
                if self.terminated_early:
                    break
        best = best_solution(self.candidates, config.mode, self.original)
        self.transcript.append(
            "best",
            best.round_index,
            best.agent_id,
            {"clamped": best.clamped, "kept_original": best.kept_original},
        )
        return RunResult(
            best=best,
            all_candidates=self.candidates,
            bank=self.bank,
            selections_per_round=self.selections,
            usage=self.usage,
            transcript=self.transcript,
            mode=config.mode,
            ablation=config.ablation,
            embedder_degraded=getattr(self.embedder, "degraded", False),
            terminated_early=self.terminated_early,
        )

    def _play_round(self, t: int, selected: Sequence[Lesson]) -> None:
        produced = self._improve_and_evaluate(t, selected)
        if t == 0 and not any(produced):
            failures = [
                f"agent {self.agents[j].name!r} produced no candidate"
                for j, cand in enumerate(produced)
                if cand is None
            ]
            raise RunError("all agents failed on the initial round", failures)
        if self.config.mode == "generate" and any(
            c is not None and c.eval is not None and c.eval.all_tests_passed
            for c in produced
        ):
            self.terminated_early = True
            self.transcript.append("terminate", t, None, {"reason": "all_tests_passed"})
            return
        self._solicit_and_deposit(t, produced)
        self._adjust(t, selected, produced)

    def _improve_and_evaluate(
        self, t: int, selected: Sequence[Lesson]
    ) -> list[Candidate | None]:
        config = self.config
        prompt = assemble_improve_prompt(self.original, selected, config)
        prompt_class = PromptClass.INITIAL if t == 0 else PromptClass.IMPROVE
        produced: list[Candidate | None] = []
        replies: list[str | None] = []
        for j, agent in enumerate(self.agents):
            self.transcript.append(
                "improve",
                t,
                j,
                {"prompt_class": prompt_class.value, "prompt_sha": _digest({"p": prompt})},
            )
            try:
                reply = agent.complete(
                    prompt,
                    PromptContext(
                        prompt_class=prompt_class, round_index=t, agent_name=agent.name
                    ),
                )
            except (AgentTransportError, AgentConfigError) as exc:
                logger.warning("agent %s failed in round %d: %s", agent.name, t, exc)
                self.transcript.append("failure", t, j, {"error": str(exc)})
                replies.append(None)
                continue
            self.usage[agent.name].add(reply.usage_delta)
            replies.append(reply.text)

        for j, agent in enumerate(self.agents):
            if replies[j] is None:
                produced.append(None)
                continue
            candidate = self._grade(t, j, replies[j])
            produced.append(candidate)
            self.candidates.append(candidate)
        return produced

    def _grade(self, t: int, j: int, reply_text: str) -> Candidate:
        config = self.config
        try:
            source = extract_code_block(reply_text, fence_tag=config.effective_language)
            result = self.evaluator.evaluate(
                self.problem,
                source,
                seed=config.rng_seed,
                round_index=t,
                agent_index=j,
            )
        except CodeBlockError:
            source = reply_text
            result = EvalResult(
                status=EvalStatus.COMPILE_ERROR,
                compiler_output="no code block found in reply",
            )
        self.transcript.append(
            "evaluate",
            t,
            j,
            {
                "status": result.status.value,
                "speedup_raw": result.speedup_raw,
                "tests_passed": result.tests_passed,
                "tests_total": result.tests_total,
            },
        )
        if config.mode == "generate":
            speedup = result.pass_fraction
        else:
            speedup = result.speedup_raw
        return Candidate(
            agent_id=j, round_index=t, source=source, eval=result, speedup=speedup
        )

    def _solicit_and_deposit(self, t: int, produced: Sequence[Candidate | None]) -> None:
        pending: list[Lesson] = []
        for j, candidate in enumerate(produced):
            if candidate is None or candidate.eval is None:
                continue
            agent = self.agents[j]
            prompt, prompt_class, kind, score = solicitation_prompt(
                self.original, candidate.source, candidate.eval, self.config.mode
            )
            self.transcript.append(
                "solicit",
                t,
                j,
                {"prompt_class": prompt_class.value, "prompt_sha": _digest({"p": prompt})},
            )
            try:
                reply = agent.complete(
                    prompt,
                    PromptContext(
                        prompt_class=prompt_class, round_index=t, agent_name=agent.name
                    ),
                )
            except (AgentTransportError, AgentConfigError) as exc:
                logger.warning(
                    "agent %s failed to produce a lesson in round %d: %s",
                    agent.name,
                    t,
                    exc,
                )
                self.transcript.append("failure", t, j, {"error": str(exc)})
                continue
            self.usage[agent.name].add(reply.usage_delta)
            pending.append(
                Lesson(
                    id=next(self.lesson_ids),
                    agent_id=j,
                    round_index=t,
                    content=reply.text.strip(),
                    kind=kind,
                    score=score,
                )
            )
        for lesson in pending:
            self.bank.deposit(lesson)
            self.transcript.append(
                "deposit",
                t,
                lesson.agent_id,
                {"lesson_id": lesson.id, "kind": lesson.kind.value, "score": lesson.score},
            )

    def _adjust(
        self, t: int, selected: Sequence[Lesson], produced: Sequence[Candidate | None]
    ) -> None:
        if t == 0:
            return  # factors adjust only after rounds that applied lessons
        if self.config.ablation == Ablation.NO_ADJUSTMENT:
            self.transcript.append("adjust", t, None, {"skipped": True})
            return
        scores = [
            c.adjustment_score(self.config.mode) for c in produced if c is not None
        ]
        if selected and scores:
            adjust_factors(
                list(selected), scores, self.config.selection.epsilon, len(scores)
            )
        self.transcript.append(
            "adjust",
            t,
            None,
            {"factors": {str(l.id): l.factor for l in selected}},
        )


def run(
    problem,
    agents: Sequence[Agent],
    config: RunConfig,
    evaluator: Evaluator,
    embedder: Embedder,
) -> RunResult:
    """Execute the full loop for one problem and return the run record."""
    return _Runner(problem, agents, config, evaluator, embedder).run()
