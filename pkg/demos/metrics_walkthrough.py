#!/usr/bin/env python3
"""Tour of the benchmark metrics: clamping, geometric mean, cost, FLOPS.

Run with:  python3 demos/metrics_walkthrough.py
"""

from lessonloop import (
    AgentUsage,
    EvalResult,
    EvalStatus,
    ModelShape,
    estimate_cost,
    flops_per_token,
    summarize,
)
from lessonloop.metrics import load_pricing


def main() -> None:
    # A slow rewrite, a broken rewrite, and a 3x win: the slow and broken ones
    # clamp to 1 because keeping the original code is always an option.
    results = [
        ("p0", EvalResult(status=EvalStatus.SLOWER, speedup_raw=0.5,
                          tests_passed=3, tests_total=3)),
        ("p1", EvalResult(status=EvalStatus.INCORRECT, tests_passed=1, tests_total=3)),
        ("p2", EvalResult(status=EvalStatus.FASTER, speedup_raw=3.0,
                          tests_passed=3, tests_total=3)),
    ]
    summary = summarize(results)
    print("=== benchmark summary over three problems ===")
    print(f"  correct fraction : {summary.correct_fraction:.2f}")
    print(f"  >2x fraction     : {summary.gt2x_fraction:.2f}")
    print(f"  geomean speedup  : {summary.geomean_speedup:.4f}  (cube root of 3)")

    pricing = load_pricing()
    print("\n=== pricing one run's token usage ===")
    single = {"Qwen2.5-Coder-14B-Instruct": AgentUsage(23421, 33550, 24)}
    print(f"  one 14B agent        : ${estimate_cost(single, pricing):.3f}")
    team = {
        "deepseek-coder-7b-instruct-v1.5": AgentUsage(336453, 129331, 120),
        "Qwen2.5-Coder-7B-Instruct": AgentUsage(336453, 129331, 120),
        "Qwen2.5-Coder-14B-Instruct": AgentUsage(336453, 129332, 120),
    }
    print(f"  three-agent team     : ${estimate_cost(team, pricing):.3f}")
    large = {"gpt-4o": AgentUsage(20815, 27800, 60)}
    print(f"  one large closed LLM : ${estimate_cost(large, pricing):.3f}")

    print("\n=== FLOPS-per-token estimates (24 * layers * width^2) ===")
    for name, shape in [
        ("7B-class  (32 x 4096) ", ModelShape(32, 4096)),
        ("14B-class (48 x 5120) ", ModelShape(48, 5120)),
        ("frontier  (63 x 16384)", ModelShape(63, 16384)),
    ]:
        print(f"  {name}: {flops_per_token(shape):,}")


if __name__ == "__main__":
    main()
