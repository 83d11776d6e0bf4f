"""Lesson-banking multi-agent code optimization.

Agents propose rewrites of a piece of code, an evaluation harness grades
them, and the explanation each agent gives for its outcome is banked as a
lesson. Later rounds select the most promising lessons (by measured speedup
and by relevance to the code) and feed them back into the prompts, adjusting
each lesson's effectiveness factor by how well it transferred.
"""

from .agents import (
    Agent,
    AgentSpec,
    AgentUsage,
    CompletionReply,
    PromptContext,
    RemoteAgent,
    ScriptedAgent,
    count_tokens,
    extract_code_block,
)
from .embedding import Embedder, HashedBagEmbedder, ResilientEmbedder, default_embed
from .evaluation import (
    EpochPolicy,
    EvalResult,
    EvalStatus,
    LocalEvaluator,
    ScriptedEvaluator,
    TimingReport,
    ToolchainProfile,
    adaptive_time,
    clamped_speedup,
    classify,
    evaluate_generation,
    evaluate_optimization,
    generate_graph_input,
)
from .lessons import (
    Lesson,
    LessonBank,
    LessonKind,
    SelectionConfig,
    adjust_factors,
    cosine,
    select,
    select_high_relevance,
    select_high_speedup,
)
from .metrics import (
    BenchmarkSummary,
    ModelShape,
    PricingEntry,
    estimate_cost,
    flops_per_token,
    geomean,
    summarize,
)
from .orchestrator import (
    Ablation,
    Candidate,
    RunConfig,
    RunResult,
    apply_ablation,
    assemble_improve_prompt,
    best_solution,
    run,
    solicit_lesson,
)
from .problems import Problem, load_problem_set

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "Agent",
    "AgentSpec",
    "AgentUsage",
    "BenchmarkSummary",
    "Candidate",
    "CompletionReply",
    "Embedder",
    "EpochPolicy",
    "EvalResult",
    "EvalStatus",
    "HashedBagEmbedder",
    "Lesson",
    "LessonBank",
    "LessonKind",
    "LocalEvaluator",
    "ModelShape",
    "PricingEntry",
    "Problem",
    "PromptContext",
    "RemoteAgent",
    "ResilientEmbedder",
    "RunConfig",
    "RunResult",
    "ScriptedAgent",
    "ScriptedEvaluator",
    "SelectionConfig",
    "TimingReport",
    "ToolchainProfile",
    "adaptive_time",
    "adjust_factors",
    "apply_ablation",
    "assemble_improve_prompt",
    "best_solution",
    "clamped_speedup",
    "classify",
    "cosine",
    "count_tokens",
    "default_embed",
    "estimate_cost",
    "evaluate_generation",
    "evaluate_optimization",
    "extract_code_block",
    "flops_per_token",
    "generate_graph_input",
    "geomean",
    "load_problem_set",
    "run",
    "select",
    "select_high_relevance",
    "select_high_speedup",
    "solicit_lesson",
    "summarize",
]
