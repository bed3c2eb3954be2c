"""Exact-set-match and execution-accuracy metrics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from ..sqltree import Rule, SemType, SqlTree
from ..sqltree.grammar import LIMITED, ORDERED, SETOP
from .executor import ExecError, MiniDatabase, execute

MASK = "<value>"


@dataclass(frozen=True)
class ClauseDecomposition:
    select_items: frozenset
    select_distinct: bool
    from_tables: frozenset
    join_preds: frozenset
    where_preds: frozenset
    where_conn: tuple
    group_cols: frozenset
    having_preds: frozenset
    having_conn: tuple
    order_spec: tuple
    limit_present: bool
    set_op: tuple | None = None  # (op, left decomposition, right decomposition)


def _items(t: SqlTree) -> list[SqlTree]:
    out = []
    while t.sem is SemType.LIST:
        out.append(t.children[0])
        t = t.children[1]
    out.append(t)
    return out


def _unit(t: SqlTree) -> tuple:
    """Column or aggregate signature; distinct flags kept, values never appear here."""
    if t.sem is SemType.AGG:
        inner = t.children[0]
        return (t.rule.value, _col(inner), inner.rule is Rule.DISTINCT)
    return ("none", _col(t), t.rule is Rule.DISTINCT)


def _col(t: SqlTree):
    if t.rule is Rule.DISTINCT:
        t = t.children[0]
    return "*" if t.is_star else t.payload


def _atoms(p: SqlTree | None, negated: bool = False) -> tuple[list, list]:
    """Flatten a predicate into masked atoms and the connectors between them."""
    if p is None:
        return [], []
    if p.rule in (Rule.AND, Rule.OR):
        la, lc = _atoms(p.children[0], negated)
        ra, rc = _atoms(p.children[1], negated)
        return la + ra, lc + rc + [p.rule.value.lower()]
    if p.rule is Rule.NOT:
        return _atoms(p.children[0], not negated)
    left, right = p.children
    if right.sem is SemType.R:
        rhs = decompose(right)
    elif right.sem is SemType.C:
        rhs = ("col", _col(right))
    else:
        rhs = MASK
    return [(negated, p.rule.value, _unit(left), rhs)], []


def decompose(t: SqlTree) -> ClauseDecomposition:
    """Clause-wise view of a canonical query with literal values masked."""
    if t.stage == SETOP:
        left, right = t.children
        base = decompose(left)
        return ClauseDecomposition(
            frozenset(), False, frozenset(), frozenset(), frozenset(), (), frozenset(), frozenset(),
            (), (), False, (t.rule.value, base, decompose(right)))
    limit = order = None
    if t.stage == LIMITED:
        limit, t = t.children
    if t.stage == ORDERED:
        order, t = t.children
    sel, rel = t.children
    having = group = where = on = None
    if rel.rule is Rule.HAVING:
        having, rel = rel.children
    if rel.rule is Rule.GROUPBY:
        group, rel = rel.children
    if rel.rule is Rule.SELECTION:
        where, rel = rel.children
    if rel.rule is Rule.JOIN_ON:
        on, rel = rel.children
    items = _items(sel)
    w_atoms, w_conn = _atoms(where)
    h_atoms, h_conn = _atoms(having)
    j_atoms, _ = _atoms(on)
    order_spec = ()
    if order is not None:
        order_spec = ((_unit(order.children[0]), order.rule.value),)
    return ClauseDecomposition(
        select_items=frozenset(Counter(_unit(i) for i in items).items()),
        select_distinct=items[0].rule is Rule.DISTINCT,
        from_tables=frozenset(rel.tables),
        join_preds=frozenset(Counter(j_atoms).items()),
        where_preds=frozenset(Counter(w_atoms).items()),
        where_conn=tuple(sorted(w_conn)),
        group_cols=frozenset(_col(c) for c in _items(group)) if group is not None else frozenset(),
        having_preds=frozenset(Counter(h_atoms).items()),
        having_conn=tuple(sorted(h_conn)),
        order_spec=order_spec,
        limit_present=limit is not None,
    )


def exact_set_match(pred: SqlTree | None, gold: SqlTree) -> bool:
    if pred is None or not pred.complete:
        return False
    return decompose(pred) == decompose(gold)


def _norm_cell(v):
    if isinstance(v, float):
        if math.isfinite(v) and v.is_integer():
            return int(v)
        return round(v, 9)
    return v


def _norm_rows(rows):
    return [tuple(_norm_cell(v) for v in r) for r in rows]


def results_match(pred_rows, gold_rows, ordered: bool) -> bool:
    a, b = _norm_rows(pred_rows), _norm_rows(gold_rows)
    if ordered:
        return a == b
    return Counter(a) == Counter(b)


class GoldExecError(RuntimeError):
    pass


def execution_match(pred: SqlTree | None, gold: SqlTree, db: MiniDatabase) -> bool:
    """Result equality on ``db``; order-sensitive only when the gold query orders."""
    try:
        g = execute(gold, db)
    except ExecError as exc:
        raise GoldExecError(str(exc)) from exc
    if pred is None or not pred.complete:
        return False
    try:
        p = execute(pred, db)
    except ExecError:
        return False
    return results_match(p.rows, g.rows, g.ordered)


# ---------------------------------------------------------------- difficulty

def _component_counts(t: SqlTree) -> tuple[int, int, int]:
    """(clause components, nestings/set-ops, aggregates) over the whole tree."""
    comp = nest = agg = 0
    for s in t.subtrees():
        if s.rule in (Rule.SELECTION, Rule.GROUPBY, Rule.HAVING, Rule.ORDERBY, Rule.LIMIT,
                      Rule.JOIN_ON, Rule.OR, Rule.LIKE):
            comp += 1
        if s.rule in (Rule.UNION, Rule.INTERSECT, Rule.EXCEPT, Rule.IN, Rule.NOT_IN) or (
                s.sem is SemType.P and any(c.sem is SemType.R for c in s.children)):
            nest += 1
        if s.sem is SemType.AGG:
            agg += 1
    return comp, nest, agg


def difficulty(t: SqlTree) -> str:
    """Bucket by counted features: clause components, nesting/set-ops, aggregates.

    easy: at most one component, no nesting, at most one aggregate.
    medium: at most two components, no nesting.
    hard: at most three components with at most one nesting.
    extra: everything else.
    """
    comp, nest, agg = _component_counts(t)
    if comp <= 1 and nest == 0 and agg <= 1:
        return "easy"
    if comp <= 2 and nest == 0:
        return "medium"
    if comp <= 3 and nest <= 1:
        return "hard"
    return "extra"


BUCKETS = ("easy", "medium", "hard", "extra")


@dataclass
class ExampleResult:
    index: int
    em: bool
    exec: bool | None
    difficulty: str
    pred_sql: str | None = None
    gold_sql: str = ""
    note: str = ""


@dataclass
class EvalReport:
    examples: list[ExampleResult] = field(default_factory=list)

    def _rate(self, xs) -> float:
        xs = list(xs)
        return sum(xs) / len(xs) if xs else 0.0

    @property
    def em_rate(self) -> float:
        return self._rate(e.em for e in self.examples)

    @property
    def exec_rate(self) -> float:
        return self._rate(e.exec for e in self.examples if e.exec is not None)

    def by_bucket(self) -> dict[str, dict[str, float]]:
        out = {}
        for b in BUCKETS:
            ex = [e for e in self.examples if e.difficulty == b]
            out[b] = {
                "count": len(ex),
                "em_rate": self._rate(e.em for e in ex),
                "exec_rate": self._rate(e.exec for e in ex if e.exec is not None),
            }
        return out

    def to_json(self) -> dict:
        return {
            "count": len(self.examples),
            "em_rate": self.em_rate,
            "exec_rate": self.exec_rate,
            "buckets": self.by_bucket(),
            "examples": [
                {"index": e.index, "em": e.em, "exec": e.exec, "difficulty": e.difficulty,
                 "pred": e.pred_sql, "gold": e.gold_sql, "note": e.note}
                for e in self.examples
            ],
        }

    def table(self) -> str:
        lines = [f"{'bucket':<8} {'count':>6} {'EM':>7} {'EXEC':>7}"]
        for b, row in self.by_bucket().items():
            lines.append(f"{b:<8} {row['count']:>6} {row['em_rate']:>7.3f} {row['exec_rate']:>7.3f}")
        lines.append(f"{'all':<8} {len(self.examples):>6} {self.em_rate:>7.3f} {self.exec_rate:>7.3f}")
        return "\n".join(lines)


def evaluate_corpus(predictions, examples, schemas, dbs=None) -> EvalReport:
    """Score predictions against gold examples.

    ``predictions`` is a sequence of SQL strings (None or "" for no output) or
    a callable mapping an example to one.  Unparseable predictions count as
    misses on both metrics; examples whose gold fails to execute are left out
    of the execution rate.
    """
    from ..sqltree import parse_sql

    dbs = dbs or {}
    report = EvalReport()
    for i, ex in enumerate(examples):
        schema = schemas[ex.db_id]
        gold = parse_sql(ex.gold_sql, schema)
        sql = predictions(ex) if callable(predictions) else predictions[i]
        pred = None
        note = ""
        if sql:
            try:
                pred = parse_sql(sql, schema)
            except Exception as exc:  # any parse failure is a miss
                note = f"unparseable prediction: {exc}"
        exec_ok = None
        db = dbs.get(ex.db_id)
        if db is not None:
            try:
                exec_ok = execution_match(pred, gold, db)
            except GoldExecError as exc:
                note = f"gold failed to execute: {exc}"
        report.examples.append(ExampleResult(i, exact_set_match(pred, gold), exec_ok,
                                             difficulty(gold), sql, ex.gold_sql, note))
    return report
