"""Deterministic hashed-bag embedding and the fallback wrapper."""

from __future__ import annotations

import numpy as np
import pytest

from lessonloop.embedding import (
    HashedBagEmbedder,
    ResilientEmbedder,
    _bucket,
    default_embed,
)
from lessonloop.lessons import cosine


class TestDefaultEmbed:
    def test_deterministic(self):
        a = default_embed("for loop unroll")
        b = default_embed("for loop unroll")
        assert np.array_equal(a, b)
        assert cosine(a, b) == pytest.approx(1.0)

    def test_whitespace_collapsed(self):
        a = default_embed("for loop unroll")
        b = default_embed("  for\t loop \n unroll ")
        assert cosine(a, b) == pytest.approx(1.0)

    def test_case_and_punctuation_folded(self):
        a = default_embed("For-Loop, Unroll!")
        b = default_embed("for loop unroll")
        assert cosine(a, b) == pytest.approx(1.0)

    def test_disjoint_vocabulary_orthogonal(self):
        left = "alpha beta gamma"
        right = "delta epsilon zeta"
        buckets_left = {_bucket(t, 256) for t in left.split()}
        buckets_right = {_bucket(t, 256) for t in right.split()}
        assert buckets_left.isdisjoint(buckets_right)  # collision-free vocabulary
        assert cosine(default_embed(left), default_embed(right)) == 0.0

    def test_unit_norm(self):
        vec = default_embed("reorder loops to improve cache locality")
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_empty_text_zero_vector(self):
        vec = default_embed("")
        assert not vec.any()
        assert cosine(vec, default_embed("something")) == 0.0

    def test_fixed_dimension(self):
        assert default_embed("abc").shape == (256,)
        assert default_embed("abc", dimension=64).shape == (64,)


class FailingEmbedder:
    dimension = 8
    signature = "failing"
    calls = 0

    def embed(self, text):
        self.calls += 1
        raise ConnectionError("endpoint unavailable")


class TestResilientEmbedder:
    def test_falls_back_permanently(self):
        primary = FailingEmbedder()
        notices = []
        embedder = ResilientEmbedder(primary, on_degrade=notices.append)
        vec = embedder.embed("loop cache")
        assert embedder.degraded
        assert np.array_equal(vec, default_embed("loop cache"))
        assert len(notices) == 1
        # the primary is never consulted again
        embedder.embed("another text")
        assert primary.calls == 1

    def test_signature_changes_on_degrade(self):
        embedder = ResilientEmbedder(FailingEmbedder())
        before = embedder.signature
        embedder.embed("x")
        assert embedder.signature != before

    def test_healthy_primary_used(self):
        primary = HashedBagEmbedder(dimension=32)
        embedder = ResilientEmbedder(primary)
        vec = embedder.embed("tile the matrix")
        assert vec.shape == (32,)
        assert not embedder.degraded
