"""Prompt assembly for the optimization and generation loops.

All agent-facing text lives here: the initial rewrite request, the
with-lessons variant, the per-scenario lesson solicitations, and the
generation-task counterparts. Lesson items are rendered 1-based in selection
order; the parallelization sentence is injected only when the run asks for
parallel code.
"""

from __future__ import annotations

from enum import Enum
from typing import Sequence, TYPE_CHECKING

if TYPE_CHECKING:
    from .lessons import Lesson

OPENMP_SENTENCE = "You should use OpenMP to parallelize the code."

INITIAL_OPTIMIZE_TEMPLATE = (
    "You are given a piece of code written in {language}. Your task is to rewrite it "
    "in the same language to improve its performance (i.e., execution time).{parallel} "
    "Do not change the input/output behaviors of the code. Include the generated code "
    "between ```{language} and ```.\n"
    "\n"
    "// Code:\n"
    "\n"
    "{source_code}\n"
)

IMPROVE_OPTIMIZE_TEMPLATE = (
    "You are given a piece of code written in {language}. Your task is to rewrite it "
    "in the same language to improve its performance (i.e., execution time).{parallel} "
    "Do not change the input/output behaviors of the code. Some lessons regarding "
    "correctness and performance are provided to help you rewrite the code. Include "
    "the generated code between ```{language} and ```.\n"
    "\n"
    "// Code:\n"
    "\n"
    "{source_code}\n"
    "\n"
    "While you rewrite the code, consider the following lessons. If Code A and Code B "
    "appear in the lessons, Code A refers to the given code and Code B refers to an "
    "attempted rewrite. Code B may not be optimal and it could be even worse than "
    "Code A.\n"
    "\n"
    "{lesson_items}\n"
    "\n"
    "Besides the above lessons, consider other optimization strategies that can more "
    "significantly improve the performance of the given code.\n"
)

SOLICIT_PERFORMANCE_TEMPLATE = (
    "The following are two functionally equivalent codes. They are compiled by using "
    "the same compiler and executed in the same environment. Code B runs "
    "{faster_or_slower} than Code A with a speedup {speedup}x. Explain why Code B is "
    "{faster_or_slower}. Be brief in the explanations. Use only one or two sentences.\n"
    "\n"
    "// Code A:\n"
    "\n"
    "{source_code}\n"
    "\n"
    "// Code B:\n"
    "\n"
    "{target_code}\n"
)

SOLICIT_INCORRECT_TEMPLATE = (
    "The following two codes are not functionally equivalent; that is, given the same "
    "input, they produce different outputs. Explain the reasons that make Code B "
    "nonequivalent to Code A. Be brief in the explanations. Use only one or two "
    "sentences.\n"
    "\n"
    "// Code A:\n"
    "\n"
    "{source_code}\n"
    "\n"
    "// Code B:\n"
    "\n"
    "{target_code}\n"
)

SOLICIT_COMPILE_ERROR_TEMPLATE = (
    "The following are two codes. Code B attempts to improve the performance of "
    "Code A, but it has syntactic errors. Explain why Code B cannot be compiled. You "
    "may get hints from the compiler output provided after Code B. Be brief in the "
    "explanations. Use only one or two sentences.\n"
    "\n"
    "// Code A:\n"
    "\n"
    "{source_code}\n"
    "\n"
    "// Code B:\n"
    "\n"
    "{target_code}\n"
    "\n"
    "Compiler output:\n"
    "\n"
    "{compiler_output}\n"
)

LESSON_ITEM_SLIGHT = (
    "Lesson {idx} slightly improves the code performance. {content} However, despite "
    "the code performance improvement, the speedup is only marginal."
)
LESSON_ITEM_SIGNIFICANT = (
    "Lesson {idx} significantly improves the code performance. {content}"
)
LESSON_ITEM_DEGRADES = "Lesson {idx} degrades the code performance. {content}"
LESSON_ITEM_INCORRECT = "Lesson {idx} compromises code equivalence. {content}"
LESSON_ITEM_NONCOMPILABLE = "Lesson {idx} produces non-compilable code. {content}"
LESSON_ITEM_GENERATION = (
    "Lesson {idx} reasons why the code does not pass all test cases. {content}"
)

GENERATION_EXAMPLE_SIGNATURE = (
    "def sum(a: float, b: float) -> float:\n"
    '  """ Return the sum of two floats a and b """'
)
GENERATION_EXAMPLE_COMPLETION = (
    "```Python\n"
    "def sum(a: float, b: float) -> float:\n"
    '  """ Return the sum of two floats a and b """\n'
    "  return a + b\n"
    "```"
)

INITIAL_GENERATE_TEMPLATE = (
    "You are given a function signature in {language} together with a docstring that "
    "explains what the function does. Your task is to implement the function "
    "according to the docstring. You should restate the function signature and "
    "docstring. Include the generated code between ```{language} and ```. For "
    "example, given the function signature and docstring\n"
    "\n"
    "{example_signature}\n"
    "\n"
    "You should respond with\n"
    "\n"
    "{example_completion}\n"
    "\n"
    "### Here is the function to implement:\n"
    "\n"
    "{signature}\n"
)

IMPROVE_GENERATE_TEMPLATE = (
    "You are given a function signature in {language} together with a docstring that "
    "explains what the function does. Your task is to implement the function "
    "according to the docstring. You should restate the function signature and "
    "docstring. Some lessons are provided to help you implement the function. "
    "Include the generated code between ```{language} and ```. For example, given "
    "the function signature and docstring\n"
    "\n"
    "{example_signature}\n"
    "\n"
    "You should respond with\n"
    "\n"
    "{example_completion}\n"
    "\n"
    "### Here is the function to implement:\n"
    "\n"
    "{signature}\n"
    "\n"
    "While you implement the function, consider the following lessons.\n"
    "\n"
    "{lesson_items}\n"
)

SOLICIT_GENERATION_TEMPLATE = (
    "The following completed code is incorrect; i.e., it does not exactly reflect "
    "the description in the docstring. The code passes only {num_pass_cases} test "
    "cases out of {num_total_cases}, leaving {num_fail_cases} failed. Explain why "
    "the code is incorrect (that is, why it fails some test cases). Be brief in the "
    "explanations. Use only one or two sentences.\n"
    "\n"
    "### Completed code:\n"
    "\n"
    "{completed_code}\n"
)


class PromptClass(str, Enum):
    """Coarse prompt category; scripted agents key fixtures on this."""

    INITIAL = "initial"
    IMPROVE = "improve"
    SOLICIT_SPEEDUP = "solicit_speedup"
    SOLICIT_SLOWDOWN = "solicit_slowdown"
    SOLICIT_INCORRECT = "solicit_incorrect"
    SOLICIT_COMPILE_ERROR = "solicit_compile_error"
    SOLICIT_TEST_FAILURE = "solicit_test_failure"


def _parallel_slot(parallel_hint: bool) -> str:
    return f" {OPENMP_SENTENCE}" if parallel_hint else ""


def format_speedup(value: float) -> str:
    """Speedup as shown to agents, e.g. 1.71 -> '1.71'."""
    return f"{value:.2f}"


def render_lesson_item(
    lesson: "Lesson",
    idx: int,
    significant_cutoff: float = 1.1,
    generation_mode: bool = False,
) -> str:
    """Render one selected lesson for the improve prompt.

    ``idx`` is the 1-based position within the selected list. Speedup lessons
    at or above ``significant_cutoff`` use the "significantly improves"
    wording; anything between 1 and the cutoff is only a marginal improvement.
    """
    from .lessons import LessonKind

    if generation_mode or lesson.kind == LessonKind.TEST_FAILURE:
        return LESSON_ITEM_GENERATION.format(idx=idx, content=lesson.content)
    if lesson.kind == LessonKind.SPEEDUP:
        if lesson.score >= significant_cutoff:
            return LESSON_ITEM_SIGNIFICANT.format(idx=idx, content=lesson.content)
        return LESSON_ITEM_SLIGHT.format(idx=idx, content=lesson.content)
    if lesson.kind == LessonKind.SLOWDOWN:
        return LESSON_ITEM_DEGRADES.format(idx=idx, content=lesson.content)
    if lesson.kind == LessonKind.INCORRECT:
        return LESSON_ITEM_INCORRECT.format(idx=idx, content=lesson.content)
    if lesson.kind == LessonKind.COMPILE_ERROR:
        return LESSON_ITEM_NONCOMPILABLE.format(idx=idx, content=lesson.content)
    raise ValueError(f"unhandled lesson kind {lesson.kind}")


def initial_optimize_prompt(source_code: str, language: str, parallel_hint: bool) -> str:
    return INITIAL_OPTIMIZE_TEMPLATE.format(
        language=language,
        parallel=_parallel_slot(parallel_hint),
        source_code=source_code,
    )


def improve_optimize_prompt(
    source_code: str,
    lesson_items: Sequence[str],
    language: str,
    parallel_hint: bool,
) -> str:
    return IMPROVE_OPTIMIZE_TEMPLATE.format(
        language=language,
        parallel=_parallel_slot(parallel_hint),
        source_code=source_code,
        lesson_items="\n\n".join(lesson_items),
    )


def initial_generate_prompt(signature: str, language: str) -> str:
    return INITIAL_GENERATE_TEMPLATE.format(
        language=language,
        example_signature=GENERATION_EXAMPLE_SIGNATURE,
        example_completion=GENERATION_EXAMPLE_COMPLETION,
        signature=signature,
    )


def improve_generate_prompt(
    signature: str, lesson_items: Sequence[str], language: str
) -> str:
    return IMPROVE_GENERATE_TEMPLATE.format(
        language=language,
        example_signature=GENERATION_EXAMPLE_SIGNATURE,
        example_completion=GENERATION_EXAMPLE_COMPLETION,
        signature=signature,
        lesson_items="\n\n".join(lesson_items),
    )


def solicit_performance_prompt(
    source_code: str, target_code: str, speedup: float, faster: bool
) -> str:
    word = "faster" if faster else "slower"
    return SOLICIT_PERFORMANCE_TEMPLATE.format(
        faster_or_slower=word,
        speedup=format_speedup(speedup),
        source_code=source_code,
        target_code=target_code,
    )


def solicit_incorrect_prompt(source_code: str, target_code: str, note: str = "") -> str:
    prompt = SOLICIT_INCORRECT_TEMPLATE.format(
        source_code=source_code, target_code=target_code
    )
    if note:
        prompt += f"\nNote: {note}\n"
    return prompt


def solicit_compile_error_prompt(
    source_code: str, target_code: str, compiler_output: str
) -> str:
    return SOLICIT_COMPILE_ERROR_TEMPLATE.format(
        source_code=source_code,
        target_code=target_code,
        compiler_output=compiler_output,
    )


def solicit_generation_prompt(completed_code: str, passed: int, total: int) -> str:
    return SOLICIT_GENERATION_TEMPLATE.format(
        num_pass_cases=passed,
        num_total_cases=total,
        num_fail_cases=total - passed,
        completed_code=completed_code,
    )
