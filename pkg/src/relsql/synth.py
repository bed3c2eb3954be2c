"""Templated synthetic (question, SQL) corpus over fixture databases.

Template variants are visited round-robin, so any 100 consecutive examples
use every operator rule at least once (KEEP is a decoder device and never
appears inside a tree).
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass

from .data import Example
from .evaluation import MiniDatabase
from .schema import NUMBER, TEXT, Schema
from .sqltree import OPERATOR_RULES, Rule, SqlTree, parse_sql, rules_used

MAX_HEIGHT = 9

AGG_WORDS = {"sum": "total", "avg": "average", "min": "minimum", "max": "maximum"}
CMP_WORDS = {">": "greater than", ">=": "at least", "<": "less than", "<=": "at most",
             "=": "equal to", "!=": "not equal to"}
SETOP_WORDS = {"UNION": "together with", "INTERSECT": "that are also among", "EXCEPT": "excluding"}


@dataclass
class _Ctx:
    s: Schema
    db: MiniDatabase
    rng: random.Random

    def name(self, c: int) -> str:
        return " ".join(self.s.columns[c].name)

    def tname(self, t: int) -> str:
        return " ".join(self.s.tables[t].name)

    def col(self, c: int) -> str:
        return self.s.columns[c].original

    def tab(self, t: int) -> str:
        return self.s.tables[t].original

    def cells(self, c: int) -> list:
        t = self.s.columns[c].table_index
        return [v for v in self.db.tables[t].get(c, []) if v is not None]

    def value(self, c: int):
        vals = [v for v in self.cells(c) if not (isinstance(v, str) and "'" in v)]
        return self.rng.choice(vals) if vals else None


def _cols(cx: _Ctx, t: int, tag: str | None = None, key: bool | None = None) -> list[int]:
    s = cx.s
    out = []
    for c in s.table_columns(t):
        col = s.columns[c]
        if tag is not None and col.type_tag != tag:
            continue
        is_key = col.is_primary_key or any(c in fk for fk in s.foreign_keys)
        if key is not None and is_key != key:
            continue
        if not cx.cells(c):
            continue
        out.append(c)
    return out


def _pick(cx: _Ctx, xs):
    return cx.rng.choice(xs) if xs else None


def _num(v) -> str:
    return repr(v)


# ------------------------------------------------------------ templates
# each returns (question, sql) or None when the table lacks what it needs

def t_project(cx, t):
    c = _pick(cx, _cols(cx, t))
    return c is not None and (f"Show the {cx.name(c)} of all {cx.tname(t)}.",
                              f"SELECT {cx.col(c)} FROM {cx.tab(t)}")


def t_distinct(cx, t):
    c = _pick(cx, _cols(cx, t, TEXT))
    return c is not None and (f"List the distinct {cx.name(c)} of {cx.tname(t)}.",
                              f"SELECT DISTINCT {cx.col(c)} FROM {cx.tab(t)}")


def t_count(cx, t):
    return (f"How many {cx.tname(t)} are there?", f"SELECT count(*) FROM {cx.tab(t)}")


def t_agg(op):
    def f(cx, t):
        c = _pick(cx, _cols(cx, t, NUMBER, key=False))
        return c is not None and (f"What is the {AGG_WORDS[op]} {cx.name(c)} of {cx.tname(t)}?",
                                  f"SELECT {op}({cx.col(c)}) FROM {cx.tab(t)}")
    return f


def t_compare(op):
    def f(cx, t):
        n = _pick(cx, _cols(cx, t, NUMBER, key=False))
        c = _pick(cx, _cols(cx, t, TEXT))
        if n is None or c is None:
            return None
        v = cx.value(n)
        return (f"Show the {cx.name(c)} of {cx.tname(t)} with {cx.name(n)} {CMP_WORDS[op]} {_num(v)}.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(n)} {op} {_num(v)}")
    return f


def t_text_eq(op):
    def f(cx, t):
        texts = _cols(cx, t, TEXT)
        if len(texts) < 2:
            return None
        c, w = cx.rng.sample(texts, 2)
        v = cx.value(w)
        if v is None:
            return None
        neg = " not" if op == "!=" else ""
        return (f"Show the {cx.name(c)} of {cx.tname(t)} whose {cx.name(w)} is{neg} '{v}'.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(w)} {op} '{v}'")
    return f


def t_like(cx, t):
    texts = _cols(cx, t, TEXT)
    if len(texts) < 2:
        return None
    c, w = cx.rng.sample(texts, 2)
    v = cx.value(w)
    if v is None:
        return None
    word = cx.rng.choice(v.split())
    return (f"Find the {cx.name(c)} of {cx.tname(t)} whose {cx.name(w)} contains '{word}'.",
            f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(w)} LIKE '%{word}%'")


def t_not(cx, t):
    n = _pick(cx, _cols(cx, t, NUMBER, key=False))
    c = _pick(cx, _cols(cx, t, TEXT))
    if n is None or c is None:
        return None
    v = cx.value(n)
    return (f"Show the {cx.name(c)} of {cx.tname(t)} where it is not the case that "
            f"{cx.name(n)} is greater than {_num(v)}.",
            f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE NOT ({cx.col(n)} > {_num(v)})")


def t_conj(conn):
    def f(cx, t):
        n = _pick(cx, _cols(cx, t, NUMBER, key=False))
        texts = _cols(cx, t, TEXT)
        if n is None or len(texts) < 2:
            return None
        c, w = cx.rng.sample(texts, 2)
        a, v = cx.value(n), cx.value(w)
        if v is None:
            return None
        return (f"Show the {cx.name(c)} of {cx.tname(t)} with {cx.name(n)} less than {_num(a)} "
                f"{conn.lower()} {cx.name(w)} equal to '{v}'.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(n)} < {_num(a)} {conn} {cx.col(w)} = '{v}'")
    return f


def t_group_count(cx, t):
    c = _pick(cx, _cols(cx, t, TEXT))
    return c is not None and (f"Show each {cx.name(c)} of {cx.tname(t)} and the number of rows with it.",
                              f"SELECT {cx.col(c)}, count(*) FROM {cx.tab(t)} GROUP BY {cx.col(c)}")


def t_group_agg(cx, t):
    c = _pick(cx, _cols(cx, t, TEXT))
    n = _pick(cx, _cols(cx, t, NUMBER, key=False))
    if c is None or n is None:
        return None
    op = cx.rng.choice(sorted(AGG_WORDS))
    return (f"For each {cx.name(c)}, what is the {AGG_WORDS[op]} {cx.name(n)} of {cx.tname(t)}?",
            f"SELECT {cx.col(c)}, {op}({cx.col(n)}) FROM {cx.tab(t)} GROUP BY {cx.col(c)}")


def t_having(cx, t):
    c = _pick(cx, _cols(cx, t, TEXT))
    if c is None:
        return None
    k = cx.rng.choice([2, 3])
    return (f"Which {cx.name(c)} of {cx.tname(t)} appear at least {k} times?",
            f"SELECT {cx.col(c)} FROM {cx.tab(t)} GROUP BY {cx.col(c)} HAVING count(*) >= {k}")


def t_order(direction):
    word = "ascending" if direction == "ASC" else "descending"

    def f(cx, t):
        c = _pick(cx, _cols(cx, t, TEXT))
        n = _pick(cx, _cols(cx, t, NUMBER, key=False))
        if c is None or n is None:
            return None
        return (f"List the {cx.name(c)} of {cx.tname(t)} sorted by {cx.name(n)} in {word} order.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} ORDER BY {cx.col(n)} {direction}")
    return f


def t_limit(top_one: bool):
    def f(cx, t):
        c = _pick(cx, _cols(cx, t, TEXT))
        n = _pick(cx, _cols(cx, t, NUMBER, key=False))
        if c is None or n is None:
            return None
        if top_one:
            return (f"What is the {cx.name(c)} of the {cx.tname(t)} with the highest {cx.name(n)}?",
                    f"SELECT {cx.col(c)} FROM {cx.tab(t)} ORDER BY {cx.col(n)} DESC LIMIT 1")
        k = cx.rng.choice([2, 3])
        return (f"Show the {cx.name(c)} of the {k} {cx.tname(t)} with the lowest {cx.name(n)}.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} ORDER BY {cx.col(n)} ASC LIMIT {k}")
    return f


def _fk_pairs(cx: _Ctx, t: int):
    """Foreign keys leaving table ``t`` as (source column, target column, target table)."""
    s = cx.s
    return [(a, b, s.columns[b].table_index) for a, b in s.foreign_keys
            if s.columns[a].table_index == t and s.columns[b].table_index != t]


def t_join(with_where: bool):
    def f(cx, t):
        fk = _pick(cx, _fk_pairs(cx, t))
        if fk is None:
            return None
        a, b, u = fk
        c1 = _pick(cx, _cols(cx, t, TEXT)) or _pick(cx, _cols(cx, t))
        c2 = _pick(cx, _cols(cx, u, TEXT))
        if c1 is None or c2 is None:
            return None
        q = (f"Show the {cx.name(c1)} of {cx.tname(t)} together with the {cx.name(c2)} "
             f"of the {cx.tname(u)} they belong to")
        sql = (f"SELECT T1.{cx.col(c1)}, T2.{cx.col(c2)} FROM {cx.tab(t)} AS T1 JOIN {cx.tab(u)} AS T2 "
               f"ON T1.{cx.col(a)} = T2.{cx.col(b)}")
        if with_where:
            v = cx.value(c2)
            if v is None:
                return None
            q += f", for {cx.name(c2)} '{v}'"
            sql += f" WHERE T2.{cx.col(c2)} = '{v}'"
        return q + ".", sql
    return f


def t_chain(cx, t):
    fks = _fk_pairs(cx, t)
    pairs = [(x, y) for x in fks for y in fks if x[2] < y[2]]
    if not pairs:
        return None
    (a1, b1, u1), (a2, b2, u2) = cx.rng.choice(pairs)
    c1, c2 = _pick(cx, _cols(cx, u1, TEXT)), _pick(cx, _cols(cx, u2, TEXT))
    if c1 is None or c2 is None:
        return None
    return (f"Show the {cx.name(c1)} of each {cx.tname(u1)} and the {cx.name(c2)} of each "
            f"{cx.tname(u2)} linked through {cx.tname(t)}.",
            f"SELECT T2.{cx.col(c1)}, T3.{cx.col(c2)} FROM {cx.tab(t)} AS T1 "
            f"JOIN {cx.tab(u1)} AS T2 ON T1.{cx.col(a1)} = T2.{cx.col(b1)} "
            f"JOIN {cx.tab(u2)} AS T3 ON T1.{cx.col(a2)} = T3.{cx.col(b2)}")


def t_member(negated: bool):
    def f(cx, t):
        fk = _pick(cx, _fk_pairs(cx, t))
        if fk is None:
            return None
        a, b, u = fk
        c = _pick(cx, _cols(cx, u, TEXT))
        if c is None:
            return None
        kw, word = ("NOT IN", "never appears") if negated else ("IN", "appears")
        return (f"Show the {cx.name(c)} of {cx.tname(u)} whose {cx.name(b)} {word} in {cx.tname(t)}.",
                f"SELECT {cx.col(c)} FROM {cx.tab(u)} WHERE {cx.col(b)} {kw} "
                f"(SELECT {cx.col(a)} FROM {cx.tab(t)})")
    return f


def t_scalar_sub(cx, t):
    n = _pick(cx, _cols(cx, t, NUMBER, key=False))
    c = _pick(cx, _cols(cx, t, TEXT))
    if n is None or c is None:
        return None
    return (f"Show the {cx.name(c)} of {cx.tname(t)} whose {cx.name(n)} is above the average {cx.name(n)}.",
            f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(n)} > "
            f"(SELECT avg({cx.col(n)}) FROM {cx.tab(t)})")


def t_setop(op):
    def f(cx, t):
        n = _pick(cx, _cols(cx, t, NUMBER, key=False))
        c = _pick(cx, _cols(cx, t, TEXT))
        if n is None or c is None:
            return None
        a, b = cx.value(n), cx.value(n)
        return (f"List the {cx.name(c)} of {cx.tname(t)} with {cx.name(n)} above {_num(a)}, "
                f"{SETOP_WORDS[op]} those with {cx.name(n)} below {_num(b)}.",
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(n)} > {_num(a)} {op} "
                f"SELECT {cx.col(c)} FROM {cx.tab(t)} WHERE {cx.col(n)} < {_num(b)}")
    return f


def t_two_cols(cx, t):
    cols = _cols(cx, t)
    if len(cols) < 2:
        return None
    c1, c2 = cx.rng.sample(cols, 2)
    return (f"Show the {cx.name(c1)} and {cx.name(c2)} of {cx.tname(t)}.",
            f"SELECT {cx.col(c1)}, {cx.col(c2)} FROM {cx.tab(t)}")


TEMPLATES = (
    [("project", t_project), ("distinct", t_distinct), ("count", t_count)]
    + [(f"agg-{op}", t_agg(op)) for op in ("sum", "avg", "min", "max")]
    + [(f"cmp{op}", t_compare(op)) for op in (">", ">=", "<", "<=", "=", "!=")]
    + [(f"text{op}", t_text_eq(op)) for op in ("=", "!=")]
    + [("like", t_like), ("not", t_not), ("and", t_conj("AND")), ("or", t_conj("OR")),
       ("group-count", t_group_count), ("group-agg", t_group_agg), ("having", t_having),
       ("order-asc", t_order("ASC")), ("order-desc", t_order("DESC")),
       ("limit-1", t_limit(True)), ("limit-k", t_limit(False)),
       ("join", t_join(False)), ("join-where", t_join(True)), ("join-chain", t_chain),
       ("in", t_member(False)), ("not-in", t_member(True)), ("scalar-sub", t_scalar_sub)]
    + [(f"set-{op.lower()}", t_setop(op)) for op in ("UNION", "INTERSECT", "EXCEPT")]
    + [("two-cols", t_two_cols)]
)

COVERED_RULES = tuple(r for r in OPERATOR_RULES if r is not Rule.KEEP)


def generate_synthetic(seed: int, n: int, schema_pool: dict[str, tuple[Schema, MiniDatabase]],
                       max_tries: int = 50) -> list[Example]:
    """``n`` examples; template ``i % len(TEMPLATES)`` produces example ``i``."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = random.Random(seed)
    dbs = sorted(schema_pool)
    out: list[Example] = []
    for i in range(n):
        name, fn = TEMPLATES[i % len(TEMPLATES)]
        for _ in range(max_tries):
            db_id = rng.choice(dbs)
            s, db = schema_pool[db_id]
            cx = _Ctx(s, db, rng)
            made = fn(cx, rng.randrange(len(s.tables)))
            if not made:
                continue
            question, sql = made
            tree = parse_sql(sql, s)
            if tree.height <= MAX_HEIGHT:
                out.append(Example(question, db_id, sql, tree))
                break
        else:
            raise RuntimeError(f"template {name} found no usable table in {max_tries} tries")
    return out


def rule_coverage(trees: list[SqlTree]) -> Counter:
    c: Counter = Counter()
    for t in trees:
        c.update(r for r in rules_used(t) if r in COVERED_RULES)
    return c
