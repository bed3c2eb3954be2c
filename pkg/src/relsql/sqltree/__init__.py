from .grammar import (
    AGG_RULES,
    BINARY_RULES,
    COMPARISONS,
    LEAF_RULES,
    OPERATOR_RULES,
    SET_OPS,
    UNARY_RULES,
    Literal,
    Rule,
    RuleTypeError,
    SemType,
    SqlTree,
    apply_rule,
    canonicalize,
    column_leaf,
    decompose_by_height,
    deserialize,
    gold_frontier,
    is_canonical_pair,
    rules_used,
    serialize,
    star_leaf,
    table_leaf,
    try_apply,
    value_leaf,
)
from .sql import IncompleteTree, UnknownIdentifier, UnsupportedSql, emit_sql, literal_sql, parse_sql

__all__ = [
    "AGG_RULES", "BINARY_RULES", "COMPARISONS", "LEAF_RULES", "OPERATOR_RULES", "SET_OPS",
    "UNARY_RULES", "Literal", "Rule", "RuleTypeError", "SemType", "SqlTree", "apply_rule",
    "canonicalize", "column_leaf", "decompose_by_height", "deserialize", "gold_frontier", "is_canonical_pair",
    "rules_used", "serialize", "star_leaf", "table_leaf", "try_apply", "value_leaf",
    "IncompleteTree", "UnknownIdentifier", "UnsupportedSql", "emit_sql", "literal_sql", "parse_sql",
]
