"""Embedding contract plus the deterministic offline default.

Any embedding model can back lesson retrieval; the only requirements are a
fixed output dimension, unit length, and determinism. The default here is a
hashed token-bag: dependency-free, deterministic across processes, and good
enough to rank short prose lessons against source code.
"""

from __future__ import annotations

import hashlib
import logging
import re
from typing import Callable, Protocol, runtime_checkable

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 256

_TOKEN_SPLIT = re.compile(r"[^0-9a-zA-Z]+")


@runtime_checkable
class Embedder(Protocol):
    """Embedding contract: fixed dimension, unit length, deterministic."""

    dimension: int

    @property
    def signature(self) -> str:
        """Stable identifier used to key cached vectors."""
        ...

    def embed(self, text: str) -> np.ndarray:
        ...


def _bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


def default_embed(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Hashed token-bag embedding, L2-normalized.

    Tokenization lowercases and splits on non-alphanumerics, so whitespace
    variants of the same text embed identically. Text with no tokens maps to
    the zero vector (which cosine treats as similarity 0).
    """
    counts = np.zeros(dimension, dtype=float)
    for token in _TOKEN_SPLIT.split(text.lower()):
        if token:
            counts[_bucket(token, dimension)] += 1.0
    norm = np.linalg.norm(counts)
    if norm == 0.0:
        return counts
    return counts / norm


class HashedBagEmbedder:
    """The default offline embedder; see :func:`default_embed`."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION) -> None:
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        self.dimension = dimension

    @property
    def signature(self) -> str:
        return f"hashed-bag-{self.dimension}"

    def embed(self, text: str) -> np.ndarray:
        return default_embed(text, self.dimension)


class ResilientEmbedder:
    """Wraps a primary embedder with a permanent fallback on failure.

    Lesson selection must not abort an optimization run, so once the primary
    raises, the wrapper switches to the fallback for the remainder of the run
    and reports the degradation through ``on_degrade`` (the run transcript
    hooks in here). The signature changes on degradation, which invalidates
    vectors cached from the primary.
    """

    def __init__(
        self,
        primary: Embedder,
        fallback: Embedder | None = None,
        on_degrade: Callable[[str], None] | None = None,
    ) -> None:
        self.primary = primary
        self.fallback = fallback or HashedBagEmbedder()
        self.on_degrade = on_degrade
        self.degraded = False

    @property
    def dimension(self) -> int:
        return self.fallback.dimension if self.degraded else self.primary.dimension

    @property
    def signature(self) -> str:
        if self.degraded:
            return f"degraded:{self.fallback.signature}"
        return self.primary.signature

    def embed(self, text: str) -> np.ndarray:
        if not self.degraded:
            try:
                return self.primary.embed(text)
            except Exception as exc:
                self.degraded = True
                message = f"embedder {self.primary.signature} failed ({exc}); falling back"
                logger.warning(message)
                if self.on_degrade is not None:
                    self.on_degrade(message)
        return self.fallback.embed(text)
