"""Compiled-harness checks: determinism, stability, known-ratio calibration.

These tests compile rendered translation units with g++ and parse the output
grammar with the engine's parser, exercising the real measurement path end to
end.
"""

from __future__ import annotations

import re
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from render_harness import (
    DEFAULT_POLICY,
    RenderError,
    build_driver_body,
    load_template,
    render_harness,
)

from lessonloop.evaluation import (
    EpochPolicy,
    EvalStatus,
    LocalEvaluator,
    ToolchainProfile,
    parse_harness_output,
    timing_report,
)
from lessonloop.harness_bridge import load_renderer
from lessonloop.problems import Problem

HARNESS_DIR = Path(__file__).resolve().parents[1]
GXX = shutil.which("g++")

pytestmark = pytest.mark.skipif(GXX is None, reason="g++ not available")


MIX_BASELINE = """\
#include <cstdint>
#include <vector>

uint64_t mix_chain(const std::vector<uint64_t>& data) {
  uint64_t acc = 0x9E3779B97F4A7C15ULL;
  for (uint64_t v : data) {
    acc ^= v;
    acc *= 0xBF58476D1CE4E5B9ULL;
    acc ^= acc >> 29;
  }
  return acc;
}
"""

# same result, twice the arithmetic; the volatile store keeps the extra
# chain alive under -O2
MIX_DOUBLE_WORK = """\
#include <cstdint>
#include <vector>

uint64_t mix_chain(const std::vector<uint64_t>& data) {
  uint64_t acc = 0x9E3779B97F4A7C15ULL;
  for (uint64_t v : data) {
    acc ^= v;
    acc *= 0xBF58476D1CE4E5B9ULL;
    acc ^= acc >> 29;
  }
  uint64_t acc2 = 0x7F4A7C159E3779B9ULL;
  for (uint64_t v : data) {
    acc2 ^= v;
    acc2 *= 0x94D049BB133111EBULL;
    acc2 ^= acc2 >> 31;
  }
  volatile uint64_t keep = acc2;
  (void)keep;
  return acc;
}
"""

MIX_DRIVER = {
    "entry": "mix_chain",
    "args": [{"kind": "array_u64", "size": 300000, "max_value": 1000000}],
    "result": {"source": "return", "type": "uint64_t", "compare": "exact"},
    "tests": 3,
}

IDENTITY_BASELINE = """\
#include <vector>

int first_element(const std::vector<int>& xs) {
  return xs.empty() ? 0 : xs[0];
}
"""

IDENTITY_DRIVER = {
    "entry": "first_element",
    "args": [{"kind": "array_int", "size": 64, "low": 0, "high": 9}],
    "result": {"source": "return", "type": "int", "compare": "exact"},
    "tests": 3,
}

HEAVY_BASELINE = """\
#include <cstdint>

uint64_t long_mix(uint64_t rounds) {
  uint64_t acc = rounds | 1ULL;
  for (uint64_t i = 0; i < 20000000ULL; ++i) {
    acc ^= i;
    acc *= 0xBF58476D1CE4E5B9ULL;
    acc ^= acc >> 29;
  }
  return acc;
}
"""

HEAVY_DRIVER = {
    "entry": "long_mix",
    "args": [{"kind": "scalar_int", "value": 3}],
    "result": {"source": "return", "type": "uint64_t", "compare": "exact"},
    "tests": 1,
}

GRAPH_BASELINE = """\
#include <vector>
#include <cstddef>

int max_degree(const std::vector<int>& adj, size_t n) {
  int best = 0;
  for (size_t i = 0; i < n; ++i) {
    int degree = 0;
    for (size_t j = 0; j < n; ++j) degree += adj[i * n + j];
    if (degree > best) best = degree;
  }
  return best;
}
"""

GRAPH_DRIVER = {
    "entry": "max_degree",
    "args": [
        {"kind": "graph_adj", "vertices": 64, "max_edges": 96},
        {"kind": "scalar_size", "value": 64},
    ],
    "result": {"source": "return", "type": "int", "compare": "exact"},
    "tests": 3,
}

CLASH_BASELINE = """\
#include <cstdint>
#include <vector>

static uint64_t helper(uint64_t x) { return x * 3u; }

uint64_t mix_chain(const std::vector<uint64_t>& data) {
  uint64_t acc = 1;
  for (uint64_t v : data) acc += helper(v);
  return acc;
}
"""

CLASH_CANDIDATE = """\
#include <cstdint>
#include <vector>

static uint64_t helper(uint64_t x) { return x + x + x; }

uint64_t mix_chain(const std::vector<uint64_t>& data) {
  uint64_t acc = 1;
  for (uint64_t v : data) acc += helper(v);
  return acc;
}
"""

PREFIX_BASELINE = """\
#include <vector>
#include <cstddef>

double sum_prefix_sums(const std::vector<double>& xs) {
  double total = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double prefix = 0.0;
    for (size_t j = 0; j <= i; ++j) prefix += xs[j];
    total += prefix;
  }
  return total;
}
"""

PREFIX_LINEAR = """\
#include <vector>

double sum_prefix_sums(const std::vector<double>& xs) {
  double prefix = 0.0;
  double total = 0.0;
  for (double x : xs) {
    prefix += x;
    total += prefix;
  }
  return total;
}
"""

PREFIX_DRIVER = {
    "entry": "sum_prefix_sums",
    "args": [{"kind": "array_double", "size": 1500, "low": 0.0, "high": 1.0}],
    "result": {"source": "return", "type": "double", "compare": "tolerance"},
    "tests": 3,
}

GRAMMAR_LINE = re.compile(
    r"^(INPUT_DIGEST=[0-9a-f]{16}"
    r"|CORRECT=[01]"
    r"|TESTS_PASSED=\d+/\d+"
    r"|TIME_NS median=\d+ samples=\d+)$"
)


def compile_unit(unit: str, tmp_path: Path, name: str) -> Path:
    src = tmp_path / f"{name}.cpp"
    binary = tmp_path / name
    src.write_text(unit)
    proc = subprocess.run(
        [GXX, "-O2", "-std=c++17", str(src), "-o", str(binary)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return binary


def run_binary(binary: Path, seed: int = 7, min_epochs: int = 3, max_epochs: int = 11,
               target: float = 0.05) -> str:
    proc = subprocess.run(
        [str(binary), str(seed), str(min_epochs), str(max_epochs), str(target)],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def render(driver, baseline, candidate, seed=7, policy=None):
    return render_harness(load_template(), driver, baseline, candidate, seed, policy)


@pytest.fixture(scope="module")
def mix_identity_binary(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("mix-identity")
    unit = render(MIX_DRIVER, MIX_BASELINE, MIX_BASELINE)
    return compile_unit(unit, tmp, "mix_identity")


@pytest.fixture(scope="module")
def mix_double_binary(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("mix-double")
    unit = render(MIX_DRIVER, MIX_BASELINE, MIX_DOUBLE_WORK)
    return compile_unit(unit, tmp, "mix_double")


class TestRendering:
    def test_no_slot_left_unexpanded(self):
        unit = render(MIX_DRIVER, MIX_BASELINE, MIX_BASELINE)
        for token in ("{baseline_decl}", "{candidate_decl}", "{driver_body}", "{seed}", "{epoch_policy}", "{hoisted_includes}"):
            assert token not in unit

    def test_missing_entry_is_render_error(self):
        with pytest.raises(RenderError, match="entry"):
            build_driver_body({"args": [{"kind": "scalar_int", "value": 1}]})

    def test_unknown_kind_is_render_error(self):
        with pytest.raises(RenderError, match="unknown generator kind"):
            build_driver_body({"entry": "f", "args": [{"kind": "array_complex"}]})

    def test_result_arg_must_be_out_array(self):
        spec = {
            "entry": "f",
            "args": [{"kind": "array_int", "size": 4}],
            "result": {"source": "arg", "index": 0},
        }
        with pytest.raises(RenderError, match="out array"):
            build_driver_body(spec)

    def test_bounded_value_ranges_rendered(self):
        body = build_driver_body(
            {
                "entry": "f",
                "args": [{"kind": "array_int", "size": 8, "low": -5, "high": 5}],
                "result": {"source": "return", "type": "int"},
            }
        )
        assert "next_below(11ULL)" in body  # high - low + 1 keeps magnitudes capped

    def test_symbol_clash_isolated_by_namespaces(self, tmp_path):
        unit = render(MIX_DRIVER, CLASH_BASELINE, CLASH_CANDIDATE)
        binary = compile_unit(unit, tmp_path, "clash")
        output = parse_harness_output(run_binary(binary), entries=2)
        assert output.correct is True  # 3x == x+x+x


class TestGrammarConformance:
    def test_every_line_matches_grammar(self, mix_identity_binary):
        for seed in (1, 2, 3):
            text = run_binary(mix_identity_binary, seed=seed)
            for line in text.splitlines():
                assert GRAMMAR_LINE.match(line), line
            parse_harness_output(text, entries=2)

    def test_trivial_problem_output_shape(self, tmp_path):
        unit = render(IDENTITY_DRIVER, IDENTITY_BASELINE, IDENTITY_BASELINE)
        binary = compile_unit(unit, tmp_path, "identity")
        output = parse_harness_output(run_binary(binary), entries=2)
        assert output.correct is True
        assert output.tests_passed == output.tests_total == 3
        assert len(output.series[0]) == len(output.series[1]) >= 3

    def test_submicrosecond_function_batches_many_calls(self, tmp_path):
        unit = render(IDENTITY_DRIVER, IDENTITY_BASELINE, IDENTITY_BASELINE)
        binary = compile_unit(unit, tmp_path, "identity_iters")
        output = parse_harness_output(run_binary(binary), entries=2)
        assert all(iters > 100 for iters in output.iterations[0])

    def test_long_function_runs_single_iteration_epochs(self, tmp_path):
        unit = render(HEAVY_DRIVER, HEAVY_BASELINE, HEAVY_BASELINE)
        binary = compile_unit(unit, tmp_path, "heavy")
        output = parse_harness_output(
            run_binary(binary, min_epochs=2, max_epochs=2), entries=2
        )
        assert all(iters == 1 for iters in output.iterations[0])


class TestDeterminism:
    def test_same_seed_same_digest_across_processes(self, mix_identity_binary):
        first = parse_harness_output(run_binary(mix_identity_binary, seed=11), entries=2)
        second = parse_harness_output(run_binary(mix_identity_binary, seed=11), entries=2)
        assert first.input_digest == second.input_digest
        print(f"ACCEPTANCE PASS: harness determinism (digest {first.input_digest})")

    def test_different_seed_changes_digest(self, mix_identity_binary):
        a = parse_harness_output(run_binary(mix_identity_binary, seed=11), entries=2)
        b = parse_harness_output(run_binary(mix_identity_binary, seed=12), entries=2)
        assert a.input_digest != b.input_digest

    def test_graph_inputs_deterministic(self, tmp_path):
        unit = render(GRAPH_DRIVER, GRAPH_BASELINE, GRAPH_BASELINE)
        binary = compile_unit(unit, tmp_path, "graph")
        a = parse_harness_output(run_binary(binary, seed=5), entries=2)
        b = parse_harness_output(run_binary(binary, seed=5), entries=2)
        c = parse_harness_output(run_binary(binary, seed=6), entries=2)
        assert a.input_digest == b.input_digest
        assert a.input_digest != c.input_digest
        assert a.correct is True


class TestTimingQuality:
    def test_millisecond_workload_stable_across_runs(self, mix_identity_binary):
        medians = []
        for _ in range(2):
            output = parse_harness_output(run_binary(mix_identity_binary, seed=21), entries=2)
            medians.append(timing_report(output.series[0]).median_ns)
        low, high = min(medians), max(medians)
        assert (high - low) / low <= 0.10, medians
        print(f"ACCEPTANCE PASS: timing stability (medians {medians})")

    def test_baseline_vs_itself_measures_near_unity(self, mix_identity_binary):
        output = parse_harness_output(run_binary(mix_identity_binary, seed=31), entries=2)
        base = timing_report(output.series[0]).median_ns
        cand = timing_report(output.series[1]).median_ns
        assert 0.9 <= base / cand <= 1.1

    def test_double_work_candidate_measures_half_speed(self, mix_double_binary):
        output = parse_harness_output(run_binary(mix_double_binary, seed=41), entries=2)
        assert output.correct is True
        base = timing_report(output.series[0]).median_ns
        cand = timing_report(output.series[1]).median_ns
        speedup_raw = base / cand
        assert 0.40 <= speedup_raw <= 0.60, speedup_raw
        print(f"ACCEPTANCE PASS: known-ratio calibration (speedup_raw {speedup_raw:.3f})")


class TestEngineIntegration:
    """The engine's local evaluator driving the real compiled harness."""

    def toolchain(self):
        return ToolchainProfile(
            compile_command_template="g++ {flags} {src} -o {out}",
            base_flags=["-O2", "-std=c++17"],
            parallel_flags=["-fopenmp"],
            compile_timeout=120,
            run_timeout=120,
        )

    def problem(self):
        return Problem(
            id="prefix",
            mode="serial",
            task="optimize",
            baseline_source=PREFIX_BASELINE,
            driver_spec=PREFIX_DRIVER,
        )

    def test_linear_rewrite_graded_faster(self):
        evaluator = LocalEvaluator(
            self.toolchain(),
            load_renderer(HARNESS_DIR),
            policy=EpochPolicy(target=0.10, max_epochs=5, min_epochs=3),
        )
        result = evaluator.evaluate(
            self.problem(), PREFIX_LINEAR, seed=3, round_index=0, agent_index=0
        )
        assert result.status == EvalStatus.FASTER
        assert result.speedup_raw is not None and result.speedup_raw > 2.0
        assert result.tests_passed == result.tests_total == 3

    def test_broken_rewrite_graded_compile_error(self):
        evaluator = LocalEvaluator(
            self.toolchain(),
            load_renderer(HARNESS_DIR),
            policy=EpochPolicy(target=0.10, max_epochs=4, min_epochs=2),
        )
        result = evaluator.evaluate(
            self.problem(),
            "double sum_prefix_sums(const std::vector<double>& xs) { return xs[0]",
            seed=3,
            round_index=0,
            agent_index=0,
        )
        assert result.status == EvalStatus.COMPILE_ERROR
        assert result.compiler_output

    def test_wrong_rewrite_graded_incorrect(self):
        evaluator = LocalEvaluator(
            self.toolchain(),
            load_renderer(HARNESS_DIR),
            policy=EpochPolicy(target=0.10, max_epochs=4, min_epochs=2),
        )
        wrong = "#include <vector>\ndouble sum_prefix_sums(const std::vector<double>& xs) { return 0.0; }\n"
        result = evaluator.evaluate(
            self.problem(), wrong, seed=3, round_index=0, agent_index=0
        )
        assert result.status == EvalStatus.INCORRECT
        assert result.tests_passed == 0
