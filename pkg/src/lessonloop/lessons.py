"""Lesson data model, the lesson bank, dual selection, and factor adjustment.

A lesson is one unit of banked knowledge produced by an agent after its
candidate was graded: prose content, the grading scenario, the score the
candidate earned, and a dynamic effectiveness factor. The bank keeps lessons
in deposit order; selection picks up to ``k`` of them per round, half by the
score-times-factor ranking and half by embedding similarity to the code being
optimized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np

if TYPE_CHECKING:
    from .embedding import Embedder


class LessonKind(str, Enum):
    """Grading scenario the lesson was solicited for."""

    SPEEDUP = "speedup"
    SLOWDOWN = "slowdown"
    INCORRECT = "incorrect"
    COMPILE_ERROR = "compile_error"
    TEST_FAILURE = "test_failure"  # generation mode: some synthetic tests failed


class DepositError(ValueError):
    """Raised when a deposit violates bank invariants (caller bug)."""


@dataclass
class Lesson:
    """One banked lesson.

    ``score`` is the measured speedup of the code the lesson was created with
    (a pass fraction in [0, 1] in generation mode; 0 for candidates that never
    ran). ``factor`` starts at 1.0 and is overwritten by adjustment rounds.
    """

    id: int
    agent_id: int
    round_index: int
    content: str
    kind: LessonKind
    score: float
    factor: float = 1.0
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)
    _embedding_sig: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.score < 0:
            raise ValueError(f"lesson score must be nonnegative, got {self.score}")
        self.kind = LessonKind(self.kind)

    def weight(self) -> float:
        """Ranking key for the high-score half of selection: score x factor."""
        return self.score * self.factor

    def ensure_embedding(self, embedder: "Embedder") -> np.ndarray:
        """Return the content embedding, computing it lazily.

        The cached vector is keyed to the embedder signature so a fallback
        switch mid-run invalidates vectors from the previous embedder.
        """
        sig = embedder.signature
        if self.embedding is None or self._embedding_sig != sig:
            self.embedding = embedder.embed(self.content)
            self._embedding_sig = sig
        return self.embedding

    def to_record(self) -> dict:
        """Serializable form; embeddings are recomputed on load, not stored."""
        return {
            "id": self.id,
            "agent_id": self.agent_id,
            "round": self.round_index,
            "kind": self.kind.value,
            "score": self.score,
            "factor": self.factor,
            "content": self.content,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Lesson":
        return cls(
            id=record["id"],
            agent_id=record["agent_id"],
            round_index=record["round"],
            content=record["content"],
            kind=LessonKind(record["kind"]),
            score=record["score"],
            factor=record.get("factor", 1.0),
        )


@dataclass
class SelectionConfig:
    """Knobs for per-round lesson selection and factor adjustment.

    Defaults are the reference hyperparameters: k=4 lessons per round,
    score-times-factor threshold 1.1, adjustment step epsilon 0.1.
    """

    k: int = 4
    threshold: float = 1.1
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")


class LessonBank:
    """Ordered store of all lessons deposited during one run.

    Deposit order is preserved; ids must be unique and strictly increasing.
    Lessons are never removed, so a lesson may be selected (and its factor
    overwritten) in any number of later rounds.
    """

    def __init__(self, lessons: Iterable[Lesson] = ()) -> None:
        self._lessons: list[Lesson] = []
        for lesson in lessons:
            self.deposit(lesson)

    def __len__(self) -> int:
        return len(self._lessons)

    def __iter__(self) -> Iterator[Lesson]:
        return iter(self._lessons)

    def __getitem__(self, index: int) -> Lesson:
        return self._lessons[index]

    @property
    def lessons(self) -> tuple[Lesson, ...]:
        return tuple(self._lessons)

    def deposit(self, lesson: Lesson) -> None:
        """Append a fresh lesson. The factor must still be the initial 1.0."""
        if lesson.factor != 1.0:
            raise DepositError(
                f"lesson {lesson.id} deposited with factor {lesson.factor}, expected 1.0"
            )
        if self._lessons and lesson.id <= self._lessons[-1].id:
            raise DepositError(
                f"lesson id {lesson.id} not strictly greater than last id "
                f"{self._lessons[-1].id}"
            )
        self._lessons.append(lesson)

    def get(self, lesson_id: int) -> Lesson:
        for lesson in self._lessons:
            if lesson.id == lesson_id:
                return lesson
        raise KeyError(f"no lesson with id {lesson_id}")

    def dump_jsonl(self) -> str:
        """One JSON object per line, in deposit order."""
        lines = [
            json.dumps(lesson.to_record(), sort_keys=True, separators=(",", ":"))
            for lesson in self._lessons
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def load_jsonl(cls, text: str) -> "LessonBank":
        """Rebuild a bank from a dump; adjusted factors are preserved as-is."""
        bank = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            lesson = Lesson.from_record(json.loads(line))
            if bank._lessons and lesson.id <= bank._lessons[-1].id:
                raise DepositError(
                    f"lesson id {lesson.id} not strictly greater than last id "
                    f"{bank._lessons[-1].id}"
                )
            bank._lessons.append(lesson)
        return bank


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors compare as 0 by convention."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


def select_high_speedup(
    lessons: Sequence[Lesson] | LessonBank,
    cnt: int,
    threshold: float,
) -> tuple[list[Lesson], list[Lesson]]:
    """Pick up to ``cnt`` lessons with the largest score-times-factor product.

    Only lessons whose product clears ``threshold`` qualify, so fewer than
    ``cnt`` may be returned. The remainder keeps its original order. Ties on
    the product go to the earlier-deposited lesson (lower id) so replays are
    deterministic.
    """
    if cnt < 0:
        raise ValueError(f"cnt must be >= 0, got {cnt}")
    pool = list(lessons)
    ranked = sorted(pool, key=lambda l: (-l.weight(), l.id))
    selected = [l for l in ranked if l.weight() >= threshold][:cnt]
    selected_ids = {l.id for l in selected}
    remain = [l for l in pool if l.id not in selected_ids]
    return selected, remain


def select_high_relevance(
    remain: Sequence[Lesson],
    cnt: int,
    query_code: str,
    embedder: "Embedder",
) -> list[Lesson]:
    """Pick the ``cnt`` lessons most similar to the code being optimized.

    Similarity is the cosine between the lesson-content embedding and the
    query-code embedding. Ties go to the lower lesson id.
    """
    if cnt < 0:
        raise ValueError(f"cnt must be >= 0, got {cnt}")
    if cnt == 0 or not remain:
        return []
    query_vec = embedder.embed(query_code)
    # similarities are quantized so mathematically-equal values tie exactly
    # and the id tie-break stays deterministic across float summation orders
    scored = [
        (round(cosine(l.ensure_embedding(embedder), query_vec), 12), l) for l in remain
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1].id))
    return [l for _, l in scored[:cnt]]


def select(
    bank: LessonBank,
    config: SelectionConfig,
    query_code: str,
    embedder: "Embedder",
) -> list[Lesson]:
    """Dual-criterion selection of at most ``k`` lessons for the next round.

    A bank of at most ``k`` lessons is returned whole. Otherwise the top
    ceil(k/2) by score-times-factor (threshold applying) come first, then the
    top floor(k/2) of the remainder by relevance to ``query_code``. The two
    halves are disjoint by construction. If the threshold starves the first
    half, the relevance half still takes exactly floor(k/2): the total may
    fall short of ``k``.
    """
    if len(bank) <= config.k:
        return list(bank)
    high_cnt = math.ceil(config.k / 2)
    rel_cnt = config.k // 2
    selected, remain = select_high_speedup(bank, high_cnt, config.threshold)
    relevant = select_high_relevance(remain, rel_cnt, query_code, embedder)
    return selected + relevant


def adjust_factors(
    selected: Sequence[Lesson],
    round_scores: Sequence[float],
    epsilon: float,
    n: int,
) -> None:
    """Overwrite the factor of each selected lesson from this round's scores.

    For a lesson with score ``s``, every agent whose round score exceeds ``s``
    contributes 1+epsilon and every other agent 1-epsilon (equality lands in
    the 1-epsilon branch); the factor becomes the mean contribution. Factors
    are overwritten, never compounded, so they always stay within
    [1-epsilon, 1+epsilon]. Non-selected lessons and all scores are untouched.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(round_scores) != n:
        raise ValueError(f"expected {n} round scores, got {len(round_scores)}")
    for lesson in selected:
        c = 0.0
        for s_j in round_scores:
            if lesson.score < s_j:
                c += 1.0 + epsilon
            else:
                c += 1.0 - epsilon
        lesson.factor = c / n
