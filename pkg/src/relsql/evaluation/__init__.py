from .executor import ExecError, MiniDatabase, Result, execute, load_database
from .metrics import (
    ClauseDecomposition,
    EvalReport,
    GoldExecError,
    decompose,
    difficulty,
    evaluate_corpus,
    exact_set_match,
    execution_match,
    results_match,
)

__all__ = [
    "ExecError", "MiniDatabase", "Result", "execute", "load_database", "ClauseDecomposition",
    "EvalReport", "GoldExecError", "decompose", "difficulty", "evaluate_corpus",
    "exact_set_match", "execution_match", "results_match",
]
