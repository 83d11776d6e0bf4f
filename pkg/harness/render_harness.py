#!/usr/bin/env python3
"""Render the measurement-harness translation unit for one problem.

The driver spec (``driver.json`` of a problem) declares the entry point, how
each argument is generated, how outputs are compared, and how many seeded test
instances to check:

    {
      "entry": "mix_chain",
      "args": [
        {"kind": "array_u64", "size": 300000, "max_value": 1000000},
        {"kind": "scalar_size", "value": 300000}
      ],
      "result": {"source": "return", "type": "uint64_t", "compare": "exact"},
      "tests": 3
    }

Argument kinds: array_double (size, low, high), array_int (size, low, high),
array_u64 (size, max_value), grid_int (n, low, high), graph_adj (vertices,
max_edges), graph_edges (vertices, max_edges), scalar_size (value),
scalar_int (value), out_array_double (size), out_array_int (size).

Results come either from the entry's return value ("source": "return",
"type": scalar C++ type) or from an output-array argument
("source": "arg", "index": i). Comparisons: "exact" or "tolerance"
(rtol 1e-6 / atol 1e-9 unless overridden).

Usage as a script:

    python3 render_harness.py --problem-dir PROBLEM --candidate FILE \
        --seed 42 --out harness.cpp
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

HARNESS_DIR = Path(__file__).parent
TEMPLATE_PATH = HARNESS_DIR / "templates" / "timing_harness.cpp.in"

SLOT_TOKENS = (
    "{hoisted_includes}",
    "{baseline_decl}",
    "{candidate_decl}",
    "{driver_body}",
    "{seed}",
    "{epoch_policy}",
)

DEFAULT_POLICY = {"min_epochs": 3, "max_epochs": 11, "spread_target": 0.05}
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9


class RenderError(ValueError):
    """The template cannot be rendered for this problem."""


def split_preprocessor(source: str) -> tuple[list[str], list[str]]:
    """Hoist #include lines (and drop #pragma once) so the remainder of the
    source can live inside a namespace."""
    includes: list[str] = []
    body: list[str] = []
    for line in source.splitlines():
        stripped = line.strip()
        if stripped.startswith("#include"):
            includes.append(stripped)
        elif stripped.startswith("#pragma once"):
            continue  # meaningless inside a rendered unit
        else:
            body.append(line)
    return includes, body


def _arg_member(index: int) -> str:
    return f"arg{index}"


def _generator_code(index: int, arg: dict) -> tuple[str, str, bool]:
    """Return (member declaration, generation statements, is_out_arg)."""
    member = _arg_member(index)
    kind = arg.get("kind")
    if kind == "array_double":
        size = int(arg["size"])
        low = float(arg.get("low", 0.0))
        high = float(arg.get("high", 1.0))
        decl = f"std::vector<double> {member};"
        gen = (
            f"  in.{member}.resize({size});\n"
            f"  for (size_t i = 0; i < in.{member}.size(); ++i) "
            f"in.{member}[i] = {low} + ({high} - {low}) * rng.next_unit();\n"
            f"  if (dig) dig->absorb_vec(in.{member});"
        )
        return decl, gen, False
    if kind == "array_int":
        size = int(arg["size"])
        low = int(arg.get("low", 0))
        high = int(arg.get("high", 100))
        if high < low:
            raise RenderError(f"args[{index}]: high < low")
        decl = f"std::vector<int> {member};"
        gen = (
            f"  in.{member}.resize({size});\n"
            f"  for (size_t i = 0; i < in.{member}.size(); ++i) "
            f"in.{member}[i] = {low} + (int)rng.next_below({high - low + 1}ULL);\n"
            f"  if (dig) dig->absorb_vec(in.{member});"
        )
        return decl, gen, False
    if kind == "array_u64":
        size = int(arg["size"])
        max_value = int(arg.get("max_value", (1 << 32) - 1))
        decl = f"std::vector<uint64_t> {member};"
        gen = (
            f"  in.{member}.resize({size});\n"
            f"  for (size_t i = 0; i < in.{member}.size(); ++i) "
            f"in.{member}[i] = rng.next_below({max_value + 1}ULL);\n"
            f"  if (dig) dig->absorb_vec(in.{member});"
        )
        return decl, gen, False
    if kind == "grid_int":
        n = int(arg["n"])
        low = int(arg.get("low", 0))
        high = int(arg.get("high", 255))
        decl = f"std::vector<int> {member};"
        gen = (
            f"  in.{member}.resize({n * n});\n"
            f"  for (size_t i = 0; i < in.{member}.size(); ++i) "
            f"in.{member}[i] = {low} + (int)rng.next_below({high - low + 1}ULL);\n"
            f"  if (dig) dig->absorb_vec(in.{member});"
        )
        return decl, gen, False
    if kind in ("graph_adj", "graph_edges"):
        vertices = int(arg["vertices"])
        max_edges = int(arg.get("max_edges", 2 * vertices))
        if kind == "graph_adj":
            decl = f"std::vector<int> {member};"
            gen = (
                f"  in.{member}.assign({vertices * vertices}, 0);\n"
                f"  {{\n"
                f"    uint64_t edges = rng.next_below({max_edges + 1}ULL);\n"
                f"    for (uint64_t e = 0; e < edges; ++e) {{\n"
                f"      int u = (int)rng.next_below({vertices}ULL);\n"
                f"      int v = (int)rng.next_below({vertices}ULL);\n"
                f"      in.{member}[(size_t)u * {vertices} + v] = 1;\n"
                f"      in.{member}[(size_t)v * {vertices} + u] = 1;\n"
                f"    }}\n"
                f"  }}\n"
                f"  if (dig) dig->absorb_vec(in.{member});"
            )
            return decl, gen, False
        decl = f"std::vector<std::pair<int, int>> {member};"
        gen = (
            f"  {{\n"
            f"    uint64_t edges = rng.next_below({max_edges + 1}ULL);\n"
            f"    in.{member}.reserve(edges);\n"
            f"    for (uint64_t e = 0; e < edges; ++e) {{\n"
            f"      int u = (int)rng.next_below({vertices}ULL);\n"
            f"      int v = (int)rng.next_below({vertices}ULL);\n"
            f"      in.{member}.push_back(std::make_pair(u, v));\n"
            f"    }}\n"
            f"  }}\n"
            f"  if (dig) dig->absorb_edges(in.{member});"
        )
        return decl, gen, False
    if kind == "scalar_size":
        value = int(arg["value"])
        decl = f"size_t {member};"
        gen = f"  in.{member} = {value};\n  if (dig) dig->absorb(in.{member});"
        return decl, gen, False
    if kind == "scalar_int":
        value = int(arg["value"])
        decl = f"int {member};"
        gen = f"  in.{member} = {value};\n  if (dig) dig->absorb(in.{member});"
        return decl, gen, False
    if kind in ("out_array_double", "out_array_int"):
        size = int(arg["size"])
        ctype = "double" if kind == "out_array_double" else "int"
        decl = f"std::vector<{ctype}> {member};"
        gen = (
            f"  in.{member}.assign({size}, ({ctype})0);\n"
            f"  if (dig) dig->absorb((uint64_t)in.{member}.size());"
        )
        return decl, gen, True
    raise RenderError(f"args[{index}]: unknown generator kind {kind!r}")


def _comparison_code(result: dict, output_type: str) -> str:
    compare = result.get("compare", "tolerance" if "double" in output_type else "exact")
    rtol = float(result.get("rtol", DEFAULT_RTOL))
    atol = float(result.get("atol", DEFAULT_ATOL))
    if compare == "exact":
        return "static bool outputs_match(const Output& a, const Output& b) {\n  return a == b;\n}"
    if compare != "tolerance":
        raise RenderError(f"result: unknown comparison kind {compare!r}")
    if output_type.startswith("std::vector"):
        return (
            "static bool outputs_match(const Output& a, const Output& b) {\n"
            "  if (a.size() != b.size()) return false;\n"
            "  for (size_t i = 0; i < a.size(); ++i) {\n"
            f"    if (std::fabs((double)a[i] - (double)b[i]) > {atol} + {rtol} * std::fabs((double)b[i])) return false;\n"
            "  }\n"
            "  return true;\n"
            "}"
        )
    return (
        "static bool outputs_match(const Output& a, const Output& b) {\n"
        f"  return std::fabs((double)a - (double)b) <= {atol} + {rtol} * std::fabs((double)b);\n"
        "}"
    )


def _signal_code(output_type: str) -> str:
    if output_type.startswith("std::vector"):
        return (
            "static double output_signal(const Output& v) {\n"
            "  return v.empty() ? 0.0 : (double)v.front() + (double)v.back();\n"
            "}"
        )
    return "static double output_signal(const Output& v) {\n  return (double)v;\n}"


def build_driver_body(spec: dict) -> str:
    """Generate the Inputs struct, seeded generators, call shims, and compare."""
    entry = spec.get("entry")
    if not entry:
        raise RenderError("driver spec is missing 'entry'")
    args = spec.get("args")
    if not args:
        raise RenderError("driver spec is missing 'args'")
    result = spec.get("result", {"source": "return", "type": "double"})
    tests = int(spec.get("tests", 3))
    if tests < 1:
        raise RenderError("driver spec needs at least one test instance")

    decls, gens, out_flags = [], [], []
    for i, arg in enumerate(args):
        decl, gen, is_out = _generator_code(i, arg)
        decls.append("  " + decl)
        gens.append(gen)
        out_flags.append(is_out)

    source = result.get("source", "return")
    if source == "return":
        output_type = result.get("type", "double")
        out_index = None
    elif source == "arg":
        out_index = int(result["index"])
        if not (0 <= out_index < len(args)) or not out_flags[out_index]:
            raise RenderError(f"result arg index {out_index} is not an out array")
        output_type = (
            "std::vector<double>"
            if args[out_index]["kind"] == "out_array_double"
            else "std::vector<int>"
        )
    else:
        raise RenderError(f"result: unknown source {source!r}")

    copies, call_args = [], []
    for i, is_out in enumerate(out_flags):
        if is_out:
            copies.append(f"  auto local{i} = in.{_arg_member(i)};")
            call_args.append(f"local{i}")
        else:
            call_args.append(f"in.{_arg_member(i)}")
    arglist = ", ".join(call_args)

    def call_fn(which: str) -> str:
        lines = [f"static Output call_{which}(const Inputs& in) {{"]
        lines.extend(copies)
        if out_index is None:
            lines.append(f"  return {which}_impl::{entry}({arglist});")
        else:
            lines.append(f"  {which}_impl::{entry}({arglist});")
            lines.append(f"  return local{out_index};")
        lines.append("}")
        return "\n".join(lines)

    parts = [
        "struct Inputs {",
        *decls,
        "};",
        "",
        f"static const int kNumTests = {tests};",
        "",
        "static Inputs make_inputs(uint64_t seed, int test_index, Fnv1a* dig) {",
        "  SplitMix64 rng(subsequence_seed(seed, test_index));",
        "  Inputs in;",
        *gens,
        "  return in;",
        "}",
        "",
        f"using Output = {output_type};",
        "",
        call_fn("baseline"),
        "",
        call_fn("candidate"),
        "",
        _comparison_code(result, output_type),
        "",
        _signal_code(output_type),
    ]
    return "\n".join(parts)


def render_harness(
    template: str,
    driver_spec: dict,
    baseline_source: str,
    candidate_source: str,
    seed: int,
    policy: dict | None = None,
) -> str:
    """Fill every slot of the harness template; error if any slot survives."""
    policy = {**DEFAULT_POLICY, **(policy or {})}
    base_includes, base_body = split_preprocessor(baseline_source)
    cand_includes, cand_body = split_preprocessor(candidate_source)
    hoisted = []
    for line in base_includes + cand_includes:
        if line not in hoisted:
            hoisted.append(line)

    epoch_policy = "\n".join(
        [
            f"static const int kMinEpochs = {int(policy['min_epochs'])};",
            f"static const int kMaxEpochs = {int(policy['max_epochs'])};",
            f"static const double kSpreadTarget = {float(policy['spread_target'])};",
        ]
    )

    rendered = template
    rendered = rendered.replace("{hoisted_includes}", "\n".join(hoisted))
    rendered = rendered.replace("{baseline_decl}", "\n".join(base_body))
    rendered = rendered.replace("{candidate_decl}", "\n".join(cand_body))
    rendered = rendered.replace("{driver_body}", build_driver_body(driver_spec))
    rendered = rendered.replace("{epoch_policy}", epoch_policy)
    rendered = rendered.replace("{seed}", str(int(seed)))

    for token in SLOT_TOKENS:
        if token in rendered:
            raise RenderError(f"slot {token} was not expanded")
    return rendered


def load_template() -> str:
    return TEMPLATE_PATH.read_text()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--problem-dir", required=True, help="directory with baseline.src and driver.json")
    parser.add_argument("--candidate", required=True, help="candidate source file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output .cpp path")
    parser.add_argument("--min-epochs", type=int, default=DEFAULT_POLICY["min_epochs"])
    parser.add_argument("--max-epochs", type=int, default=DEFAULT_POLICY["max_epochs"])
    parser.add_argument(
        "--spread-target", type=float, default=DEFAULT_POLICY["spread_target"]
    )
    args = parser.parse_args(argv)

    problem_dir = Path(args.problem_dir)
    driver_spec = json.loads((problem_dir / "driver.json").read_text())
    baseline = (problem_dir / "baseline.src").read_text()
    candidate = Path(args.candidate).read_text()
    policy = {
        "min_epochs": args.min_epochs,
        "max_epochs": args.max_epochs,
        "spread_target": args.spread_target,
    }
    unit = render_harness(load_template(), driver_spec, baseline, candidate, args.seed, policy)
    Path(args.out).write_text(unit)
    return 0


if __name__ == "__main__":
    sys.exit(main())
