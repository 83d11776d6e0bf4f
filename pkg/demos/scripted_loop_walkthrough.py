#!/usr/bin/env python3
"""Walk through one fully scripted optimization run.

Three scripted "agents" rewrite a naive matrix multiply over two improvement
rounds. Their replies and the grading outcomes are canned, so the demo runs
offline and deterministically: it shows lesson deposit, dual selection,
factor adjustment, and how the best candidate is chosen.

Run with:  python3 demos/scripted_loop_walkthrough.py
"""

from lessonloop import (
    AgentSpec,
    HashedBagEmbedder,
    Problem,
    RunConfig,
    ScriptedAgent,
    ScriptedEvaluator,
    SelectionConfig,
    run,
)

ORIGINAL = """\
for (int i = 0; i < n; ++i)
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      C[i][j] += A[i][k] * B[k][j];
"""

REORDERED = """\
for (int i = 0; i < n; ++i)
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      C[i][j] += A[i][k] * B[k][j];
"""

COMBINED = """\
#pragma omp parallel for
for (int i = 0; i < n; ++i)
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      C[i][j] += A[i][k] * B[k][j];
"""


def reply(code: str) -> dict:
    return {"text": f"Here is my rewrite.\n```C++\n{code}\n```\n"}


def lesson(text: str) -> dict:
    return {"text": text}


FIXTURES = {
    "alice": {
        "initial:0:alice": reply(REORDERED),
        "solicit_speedup:0:alice": lesson(
            "Swapping the inner loops to (i,k,j) order keeps the innermost "
            "accesses contiguous, so the caches are used far better."
        ),
        "improve:1:alice": reply(COMBINED),
        "solicit_speedup:1:alice": lesson(
            "Stacking the loop reorder with an OpenMP parallel-for on the "
            "outer loop multiplies both gains."
        ),
        "improve:2:alice": reply(COMBINED),
        "solicit_speedup:2:alice": lesson("The combined version holds up."),
    },
    "bob": {
        "initial:0:bob": reply("#pragma omp parallel for\n" + ORIGINAL),
        "solicit_speedup:0:bob": lesson(
            "Parallelizing the outermost loop with OpenMP spreads rows "
            "across threads with little scheduling overhead."
        ),
        "improve:1:bob": reply("int tmp;\n" + ORIGINAL),
        "solicit_slowdown:1:bob": lesson(
            "Adding a temporary without restructuring the loops just slowed "
            "things down."
        ),
        "improve:2:bob": reply(COMBINED),
        "solicit_speedup:2:bob": lesson("Adopting the combined rewrite works."),
    },
    "carol": {
        "initial:0:carol": reply("// no change\n" + ORIGINAL),
        "solicit_slowdown:0:carol": lesson("Leaving the code unchanged gives no win."),
        "improve:1:carol": reply(REORDERED),
        "solicit_speedup:1:carol": lesson("The (i,k,j) reorder alone already pays off."),
        "improve:2:carol": reply(REORDERED),
        "solicit_speedup:2:carol": lesson("Reordering remains a solid single change."),
    },
}

# what the (mocked) measurement harness reports per agent and round
GRADES = {
    "0:0": {"status": "faster", "speedup_raw": 2.5, "tests_passed": 3, "tests_total": 3},
    "1:0": {"status": "faster", "speedup_raw": 4.0, "tests_passed": 3, "tests_total": 3},
    "2:0": {"status": "slower", "speedup_raw": 1.0, "tests_passed": 3, "tests_total": 3},
    "0:1": {"status": "faster", "speedup_raw": 9.4, "tests_passed": 3, "tests_total": 3},
    "1:1": {"status": "slower", "speedup_raw": 0.8, "tests_passed": 3, "tests_total": 3},
    "2:1": {"status": "faster", "speedup_raw": 2.4, "tests_passed": 3, "tests_total": 3},
    "0:2": {"status": "faster", "speedup_raw": 9.5, "tests_passed": 3, "tests_total": 3},
    "1:2": {"status": "faster", "speedup_raw": 9.3, "tests_passed": 3, "tests_total": 3},
    "2:2": {"status": "faster", "speedup_raw": 2.5, "tests_passed": 3, "tests_total": 3},
}


def main() -> None:
    problem = Problem(id="matmul", mode="parallel", task="optimize", baseline_source=ORIGINAL)
    agents = [
        ScriptedAgent(AgentSpec(name=name, kind="scripted"), fixtures=fixtures)
        for name, fixtures in FIXTURES.items()
    ]
    config = RunConfig(
        n_agents=3,
        rounds=2,
        selection=SelectionConfig(k=4, threshold=1.1, epsilon=0.1),
        parallel_mode_hint=True,
        rng_seed=7,
    )
    result = run(problem, agents, config, ScriptedEvaluator({"matmul": GRADES}), HashedBagEmbedder())

    print("=== lesson bank after the run ===")
    for lesson_entry in result.bank:
        print(
            f"  #{lesson_entry.id} round {lesson_entry.round_index} "
            f"agent {lesson_entry.agent_id} kind={lesson_entry.kind.value:13s} "
            f"score={lesson_entry.score:<5.2f} factor={lesson_entry.factor:.3f}"
        )
    print("\n=== selections per improvement round ===")
    for t, ids in enumerate(result.selections_per_round, start=1):
        print(f"  round {t}: lessons {ids}")
    print("\n=== best candidate ===")
    print(f"  agent {result.best.agent_id}, round {result.best.round_index}, "
          f"clamped speedup {result.best.clamped:.2f}x")
    print(result.best.source)


if __name__ == "__main__":
    main()
