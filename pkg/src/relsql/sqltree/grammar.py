"""Typed relational-algebra trees for a Spider-sized SQL subset.

Every node carries a coarse semantic type plus a handful of attributes that
the rule signatures check (column tag, referenced tables, clause stage for
relations).  ``apply_rule`` is the single place where trees get built, so any
tree that exists is type-valid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from ..schema import NUMBER, TEXT, Schema


class SemType(str, Enum):
    R = "R"        # relation or query
    C = "C"        # column reference
    V = "V"        # literal value
    P = "P"        # predicate
    AGG = "Agg"    # aggregated column
    ORD = "Ord"    # order key with direction
    LIST = "List"  # select / group list


# clause stages a relation passes through, in SQL evaluation order
SRC, JOINED, FILTERED, GROUPED, HAVING_STAGE, PROJECTED, ORDERED, LIMITED, SETOP = range(9)
COMPLETE = PROJECTED


class Rule(str, Enum):
    COLUMN = "col"
    TABLE = "tab"
    VALUE = "val"
    KEEP = "KEEP"
    DISTINCT = "DISTINCT"
    COUNT = "COUNT"
    SUM = "SUM"
    AVG = "AVG"
    MIN = "MIN"
    MAX = "MAX"
    ASC = "ASC"
    DESC = "DESC"
    NOT = "NOT"
    EQ = "EQ"
    NE = "NE"
    GT = "GT"
    GE = "GE"
    LT = "LT"
    LE = "LE"
    LIKE = "LIKE"
    IN = "IN"
    NOT_IN = "NOT_IN"
    AND = "AND"
    OR = "OR"
    SELECTION = "SELECTION"
    PROJECT = "PROJECT"
    GROUPBY = "GROUPBY"
    HAVING = "HAVING"
    ORDERBY = "ORDERBY"
    LIMIT = "LIMIT"
    JOIN_ON = "JOIN_ON"
    CROSS_JOIN = "CROSS_JOIN"
    UNION = "UNION"
    INTERSECT = "INTERSECT"
    EXCEPT = "EXCEPT"
    LIST = "LIST"


LEAF_RULES = (Rule.COLUMN, Rule.TABLE, Rule.VALUE)
UNARY_RULES = (Rule.KEEP, Rule.DISTINCT, Rule.COUNT, Rule.SUM, Rule.AVG, Rule.MIN, Rule.MAX,
               Rule.ASC, Rule.DESC, Rule.NOT)
BINARY_RULES = (Rule.EQ, Rule.NE, Rule.GT, Rule.GE, Rule.LT, Rule.LE, Rule.LIKE, Rule.IN,
                Rule.NOT_IN, Rule.AND, Rule.OR, Rule.SELECTION, Rule.PROJECT, Rule.GROUPBY,
                Rule.HAVING, Rule.ORDERBY, Rule.LIMIT, Rule.JOIN_ON, Rule.CROSS_JOIN, Rule.UNION,
                Rule.INTERSECT, Rule.EXCEPT, Rule.LIST)
OPERATOR_RULES = UNARY_RULES + BINARY_RULES
ARITY = {**{r: 0 for r in LEAF_RULES}, **{r: 1 for r in UNARY_RULES}, **{r: 2 for r in BINARY_RULES}}

AGG_RULES = (Rule.COUNT, Rule.SUM, Rule.AVG, Rule.MIN, Rule.MAX)
COMPARISONS = (Rule.EQ, Rule.NE, Rule.GT, Rule.GE, Rule.LT, Rule.LE)
NUMERIC_COMPARISONS = (Rule.GT, Rule.GE, Rule.LT, Rule.LE)
SET_OPS = (Rule.UNION, Rule.INTERSECT, Rule.EXCEPT)
# rules whose operands may be swapped without changing meaning
COMMUTATIVE = (Rule.AND, Rule.OR)

# which operand sem types each operator accepts; checked before the finer rules
SIGNATURES: dict[Rule, tuple[frozenset, ...]] = {
    Rule.DISTINCT: (frozenset({SemType.C}),),
    **{r: (frozenset({SemType.C}),) for r in AGG_RULES},
    Rule.ASC: (frozenset({SemType.C, SemType.AGG}),),
    Rule.DESC: (frozenset({SemType.C, SemType.AGG}),),
    Rule.NOT: (frozenset({SemType.P}),),
    **{r: (frozenset({SemType.C, SemType.AGG}), frozenset({SemType.V, SemType.R, SemType.C}))
       for r in COMPARISONS},
    Rule.LIKE: (frozenset({SemType.C}), frozenset({SemType.V})),
    Rule.IN: (frozenset({SemType.C}), frozenset({SemType.R})),
    Rule.NOT_IN: (frozenset({SemType.C}), frozenset({SemType.R})),
    Rule.AND: (frozenset({SemType.P}), frozenset({SemType.P})),
    Rule.OR: (frozenset({SemType.P}), frozenset({SemType.P})),
    Rule.SELECTION: (frozenset({SemType.P}), frozenset({SemType.R})),
    Rule.PROJECT: (frozenset({SemType.C, SemType.AGG, SemType.LIST}), frozenset({SemType.R})),
    Rule.GROUPBY: (frozenset({SemType.C, SemType.LIST}), frozenset({SemType.R})),
    Rule.HAVING: (frozenset({SemType.P}), frozenset({SemType.R})),
    Rule.ORDERBY: (frozenset({SemType.ORD}), frozenset({SemType.R})),
    Rule.LIMIT: (frozenset({SemType.V}), frozenset({SemType.R})),
    Rule.JOIN_ON: (frozenset({SemType.P}), frozenset({SemType.R})),
    Rule.CROSS_JOIN: (frozenset({SemType.R}), frozenset({SemType.R})),
    **{r: (frozenset({SemType.R}), frozenset({SemType.R})) for r in SET_OPS},
    Rule.LIST: (frozenset({SemType.C, SemType.AGG}),
                frozenset({SemType.C, SemType.AGG, SemType.LIST})),
}


class RuleTypeError(TypeError):
    """A rule was applied to operands outside its signature."""

    def __init__(self, rule: Rule, got_types: tuple, reason: str = ""):
        # the message is built lazily: frontier enumeration raises these by the thousand
        super().__init__(rule, got_types, reason)
        self.rule = rule
        self.got_types = got_types
        self.reason = reason

    def __str__(self) -> str:
        got = ", ".join(str(getattr(g, "value", g)) for g in self.got_types)
        return f"{self.rule.value}({got}) is ill-typed" + (f": {self.reason}" if self.reason else "")


@dataclass(frozen=True)
class Literal:
    value: int | float | str
    tag: str
    source: str = field(default="gold", compare=False)

    @staticmethod
    def number(text: str | int | float, source: str = "gold") -> "Literal":
        if isinstance(text, str):
            v = float(text) if any(ch in text for ch in ".eE") else int(text)
        else:
            v = text
        if isinstance(v, float) and v.is_integer() and not isinstance(text, str):
            v = int(v)
        return Literal(v, NUMBER, source)

    @staticmethod
    def text(s: str, source: str = "gold") -> "Literal":
        return Literal(s, TEXT, source)


class SqlTree:
    """Immutable typed tree node.  Build through the leaf helpers and ``apply_rule``."""

    __slots__ = ("rule", "children", "payload", "sem", "height", "stage", "refs", "tables",
                 "tag", "has_agg", "width", "out_tags", "distinct", "all_cols", "distinct_head",
                 "table_index", "_key", "_hash")

    def __init__(self, rule: Rule, children: tuple = (), payload=None, sem: SemType = SemType.R, **attrs):
        self.rule = rule
        self.children = children
        self.payload = payload
        self.sem = sem
        self.height = 0 if not children else 1 + max(c.height for c in children)
        self.stage = attrs.get("stage", -1)
        self.refs: frozenset = attrs.get("refs", frozenset())
        self.tables: frozenset = attrs.get("tables", frozenset())
        self.tag = attrs.get("tag")
        self.has_agg = attrs.get("has_agg", False)
        self.width = attrs.get("width", 0)
        self.out_tags = attrs.get("out_tags", ())
        self.distinct = attrs.get("distinct", False)
        self.all_cols = attrs.get("all_cols", False)
        self.distinct_head = attrs.get("distinct_head", False)
        self.table_index = attrs.get("table_index", -1)
        self._key = None
        self._hash = None

    # identity is the serialisation
    @property
    def key(self) -> str:
        if self._key is None:
            self._key = serialize(self)
        return self._key

    def __eq__(self, other) -> bool:
        return isinstance(other, SqlTree) and self.key == other.key

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def __repr__(self) -> str:
        return f"SqlTree({self.key})"

    @property
    def kind(self) -> str:
        return ("leaf", "unary", "binary")[len(self.children)]

    @property
    def is_star(self) -> bool:
        return self.rule is Rule.COLUMN and self.payload == -1

    @property
    def complete(self) -> bool:
        return self.sem is SemType.R and self.stage >= COMPLETE

    def subtrees(self):
        yield self
        for c in self.children:
            yield from c.subtrees()


# ---------------------------------------------------------------- leaves

STAR = -1


def column_leaf(schema: Schema | None, index: int, tag: str | None = None, table: int | None = None) -> SqlTree:
    if index == STAR:
        return SqlTree(Rule.COLUMN, (), STAR, SemType.C, refs=frozenset(), tag=None)
    if schema is not None:
        col = schema.columns[index]
        tag, table = col.type_tag, col.table_index
    return SqlTree(Rule.COLUMN, (), index, SemType.C, refs=frozenset({table}), tag=tag,
                   table_index=table)


def star_leaf() -> SqlTree:
    return column_leaf(None, STAR)


def table_leaf(index: int) -> SqlTree:
    return SqlTree(Rule.TABLE, (), index, SemType.R, stage=SRC, tables=frozenset({index}),
                   table_index=index)


def value_leaf(lit: Literal) -> SqlTree:
    return SqlTree(Rule.VALUE, (), lit, SemType.V, tag=lit.tag)


# ---------------------------------------------------------------- rule application

def _fail(rule, kids, reason=""):
    raise RuleTypeError(rule, tuple(k.sem for k in kids), reason)


def _plain_col(t: SqlTree) -> bool:
    return t.sem is SemType.C and not t.is_star and not t.distinct


def apply_rule(rule: Rule, *children: SqlTree) -> SqlTree:
    """Build ``rule(children)`` or raise RuleTypeError."""
    if ARITY.get(rule, 0) != len(children) or rule in LEAF_RULES:
        raise RuleTypeError(rule, tuple(c.sem for c in children), "wrong arity")
    if rule is Rule.KEEP:
        return children[0]
    sig = SIGNATURES[rule]
    for want, got in zip(sig, children):
        if got.sem not in want:
            _fail(rule, children, "operand type outside signature")
    return _BUILDERS[rule](rule, *children)


def _distinct(rule, c):
    if c.is_star or c.distinct:
        _fail(rule, (c,), "DISTINCT needs a plain column")
    return SqlTree(rule, (c,), None, SemType.C, refs=c.refs, tag=c.tag, distinct=True,
                   table_index=c.table_index)


def _agg(rule, c):
    if rule is not Rule.COUNT:
        if c.is_star:
            _fail(rule, (c,), "only COUNT takes *")
        if rule in (Rule.SUM, Rule.AVG) and c.tag != NUMBER:
            _fail(rule, (c,), "SUM/AVG need a number column")
    tag = NUMBER if rule in (Rule.COUNT, Rule.SUM, Rule.AVG) else c.tag
    return SqlTree(rule, (c,), None, SemType.AGG, refs=c.refs, tag=tag, has_agg=True)


def _order(rule, c):
    if c.sem is SemType.C and not _plain_col(c):
        _fail(rule, (c,), "order key must be a plain column or aggregate")
    return SqlTree(rule, (c,), None, SemType.ORD, refs=c.refs, has_agg=c.sem is SemType.AGG)


def _not(rule, p):
    return SqlTree(rule, (p,), None, SemType.P, refs=p.refs, has_agg=p.has_agg)


def _compare(rule, left, right):
    if left.sem is SemType.C and not _plain_col(left):
        _fail(rule, (left, right), "comparison needs a plain column")
    if right.sem is SemType.R:
        if not right.complete or right.width != 1:
            _fail(rule, (left, right), "subquery must be a complete single-column query")
        rtag = right.out_tags[0]
    elif right.sem is SemType.C:
        if rule not in (Rule.EQ, Rule.NE) or left.sem is not SemType.C or not _plain_col(right):
            _fail(rule, (left, right), "column-column comparison is EQ/NE on plain columns")
        if left.payload == right.payload:
            _fail(rule, (left, right), "column compared with itself")
        rtag = right.tag
    else:
        rtag = right.tag
    if rule in NUMERIC_COMPARISONS:
        if left.tag != NUMBER or rtag != NUMBER:
            _fail(rule, (left, right), "ordering comparison needs numbers")
    elif left.tag != rtag:
        _fail(rule, (left, right), "equality between different type tags")
    refs = left.refs | (right.refs if right.sem is SemType.C else frozenset())
    return SqlTree(rule, (left, right), None, SemType.P, refs=refs, has_agg=left.sem is SemType.AGG)


def _like(rule, left, right):
    if not _plain_col(left) or left.tag != TEXT or right.tag != TEXT:
        _fail(rule, (left, right), "LIKE needs a text column and a text pattern")
    return SqlTree(rule, (left, right), None, SemType.P, refs=left.refs)


def _in(rule, left, right):
    if not _plain_col(left):
        _fail(rule, (left, right), "IN needs a plain column")
    if not right.complete or right.width != 1 or right.out_tags[0] != left.tag:
        _fail(rule, (left, right), "IN needs a single-column subquery of matching tag")
    return SqlTree(rule, (left, right), None, SemType.P, refs=left.refs)


def _conj(rule, a, b):
    return SqlTree(rule, (a, b), None, SemType.P, refs=a.refs | b.refs, has_agg=a.has_agg or b.has_agg)


def _scoped(rule, item, rel):
    if not item.refs <= rel.tables:
        _fail(rule, (item, rel), "column outside the relation's tables")


def _carry(rel):
    return dict(tables=rel.tables, width=rel.width, out_tags=rel.out_tags)


def _selection(rule, p, rel):
    if rel.stage > JOINED:
        _fail(rule, (p, rel), "WHERE must precede grouping and projection")
    if p.has_agg:
        _fail(rule, (p, rel), "aggregate in WHERE")
    _scoped(rule, p, rel)
    return SqlTree(rule, (p, rel), None, SemType.R, stage=FILTERED, tables=rel.tables)


def _join_on(rule, p, rel):
    if rel.stage != SRC or len(rel.tables) < 2:
        _fail(rule, (p, rel), "ON needs a product of at least two tables")
    if p.has_agg:
        _fail(rule, (p, rel), "aggregate in ON")
    _scoped(rule, p, rel)
    return SqlTree(rule, (p, rel), None, SemType.R, stage=JOINED, tables=rel.tables)


def _cross(rule, left, right):
    if left.stage != SRC or right.rule is not Rule.TABLE:
        _fail(rule, (left, right), "joins extend a table product by one table")
    if right.table_index in left.tables:
        _fail(rule, (left, right), "table already joined")
    return SqlTree(rule, (left, right), None, SemType.R, stage=SRC, tables=left.tables | right.tables)


def _groupby(rule, g, rel):
    if g.sem is SemType.C and not _plain_col(g):
        _fail(rule, (g, rel), "group key must be a plain column")
    if g.sem is SemType.LIST and (not g.all_cols or g.distinct_head):
        _fail(rule, (g, rel), "group list must hold plain columns")
    if rel.stage > FILTERED:
        _fail(rule, (g, rel), "GROUP BY after projection or grouping")
    _scoped(rule, g, rel)
    return SqlTree(rule, (g, rel), None, SemType.R, stage=GROUPED, tables=rel.tables)


def _having(rule, p, rel):
    if rel.stage != GROUPED:
        _fail(rule, (p, rel), "HAVING needs GROUP BY")
    _scoped(rule, p, rel)
    return SqlTree(rule, (p, rel), None, SemType.R, stage=HAVING_STAGE, tables=rel.tables)


def _project(rule, sel, rel):
    if rel.stage > HAVING_STAGE:
        _fail(rule, (sel, rel), "relation already projected")
    _scoped(rule, sel, rel)
    if sel.sem is SemType.LIST:
        width, tags = sel.width, sel.out_tags
    elif sel.is_star:
        width, tags = -1, ()
    else:
        width, tags = 1, (sel.tag,)
    return SqlTree(rule, (sel, rel), None, SemType.R, stage=PROJECTED, tables=rel.tables,
                   width=width, out_tags=tags)


def _orderby(rule, o, rel):
    if rel.stage != PROJECTED:
        _fail(rule, (o, rel), "ORDER BY applies to a projected query")
    _scoped(rule, o, rel)
    return SqlTree(rule, (o, rel), None, SemType.R, **_carry(rel), stage=ORDERED)


def _limit(rule, v, rel):
    if v.tag != NUMBER or not isinstance(v.payload.value, int) or v.payload.value <= 0:
        _fail(rule, (v, rel), "LIMIT needs a positive integer")
    if rel.stage not in (PROJECTED, ORDERED):
        _fail(rule, (v, rel), "LIMIT applies to a projected or ordered query")
    return SqlTree(rule, (v, rel), None, SemType.R, **_carry(rel), stage=LIMITED)


def _setop(rule, left, right):
    if left.stage not in (PROJECTED, SETOP) or right.stage != PROJECTED:
        _fail(rule, (left, right), "set operations combine projected queries")
    if left.width < 1 or left.width != right.width or left.out_tags != right.out_tags:
        _fail(rule, (left, right), "set operands differ in shape")
    return SqlTree(rule, (left, right), None, SemType.R, stage=SETOP, tables=frozenset(),
                   width=left.width, out_tags=left.out_tags)


def _list(rule, head, rest):
    if head.sem is SemType.C and head.is_star:
        _fail(rule, (head, rest), "* cannot be listed")
    if rest.sem is SemType.C and (rest.distinct or rest.is_star):
        _fail(rule, (head, rest), "DISTINCT only heads a list")
    if rest.sem is SemType.LIST and rest.distinct_head:
        _fail(rule, (head, rest), "DISTINCT only heads a list")
    rest_w = rest.width if rest.sem is SemType.LIST else 1
    rest_tags = rest.out_tags if rest.sem is SemType.LIST else (rest.tag,)
    rest_cols = rest.all_cols if rest.sem is SemType.LIST else rest.sem is SemType.C
    return SqlTree(rule, (head, rest), None, SemType.LIST, refs=head.refs | rest.refs,
                   width=1 + rest_w, out_tags=(head.tag,) + rest_tags,
                   all_cols=head.sem is SemType.C and rest_cols,
                   distinct_head=head.distinct, has_agg=head.has_agg or rest.has_agg)


_BUILDERS = {
    Rule.DISTINCT: _distinct,
    **{r: _agg for r in AGG_RULES},
    Rule.ASC: _order,
    Rule.DESC: _order,
    Rule.NOT: _not,
    **{r: _compare for r in COMPARISONS},
    Rule.LIKE: _like,
    Rule.IN: _in,
    Rule.NOT_IN: _in,
    Rule.AND: _conj,
    Rule.OR: _conj,
    Rule.SELECTION: _selection,
    Rule.PROJECT: _project,
    Rule.GROUPBY: _groupby,
    Rule.HAVING: _having,
    Rule.ORDERBY: _orderby,
    Rule.LIMIT: _limit,
    Rule.JOIN_ON: _join_on,
    Rule.CROSS_JOIN: _cross,
    **{r: _setop for r in SET_OPS},
    Rule.LIST: _list,
}


def try_apply(rule: Rule, *children: SqlTree) -> SqlTree | None:
    try:
        return apply_rule(rule, *children)
    except RuleTypeError:
        return None


# ---------------------------------------------------------------- serialisation

def _lit_text(lit: Literal) -> str:
    if lit.tag == NUMBER:
        return f"(val number {lit.value!r})"
    return f"(val text {json.dumps(lit.value)})"


def serialize(t: SqlTree) -> str:
    """Parenthesised s-expression, e.g. ``(PROJECT (col 0) (tab 1))``."""
    if t._key is not None:
        return t._key
    if t.rule is Rule.COLUMN:
        s = "(col *)" if t.payload == STAR else f"(col {t.payload})"
    elif t.rule is Rule.TABLE:
        s = f"(tab {t.payload})"
    elif t.rule is Rule.VALUE:
        s = _lit_text(t.payload)
    else:
        s = "(" + t.rule.value + " " + " ".join(serialize(c) for c in t.children) + ")"
    t._key = s
    return s


def _sexpr_tokens(text: str) -> list:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        elif ch == '"':
            dec = json.JSONDecoder()
            val, end = dec.raw_decode(text, i)
            out.append(("str", val))
            i = end
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def deserialize(text: str, schema: Schema) -> SqlTree:
    toks = _sexpr_tokens(text)
    pos = 0

    def walk():
        nonlocal pos
        if toks[pos] != "(":
            raise ValueError(f"expected '(' in s-expression at token {pos}")
        head = toks[pos + 1]
        pos += 2
        if head == "col":
            a = toks[pos]
            pos += 2
            return star_leaf() if a == "*" else column_leaf(schema, int(a))
        if head == "tab":
            a = toks[pos]
            pos += 2
            return table_leaf(int(a))
        if head == "val":
            tag, raw = toks[pos], toks[pos + 1]
            pos += 3
            if tag == NUMBER:
                return value_leaf(Literal.number(raw))
            return value_leaf(Literal.text(raw[1]))
        kids = []
        while toks[pos] != ")":
            kids.append(walk())
        pos += 1
        return apply_rule(Rule(head), *kids)

    tree = walk()
    if pos != len(toks):
        raise ValueError("trailing tokens after s-expression")
    return tree


def canonicalize(t: SqlTree) -> SqlTree:
    """Order commutative operands and join chains by serialisation."""
    if not t.children:
        return t
    if t.rule is Rule.CROSS_JOIN:
        leaves = sorted(_join_tables(t), key=lambda x: x.key)
        out = leaves[0]
        for nxt in leaves[1:]:
            out = apply_rule(Rule.CROSS_JOIN, out, nxt)
        return out
    kids = [canonicalize(c) for c in t.children]
    if t.rule in COMMUTATIVE or (t.rule in (Rule.EQ, Rule.NE) and kids[1].sem is SemType.C):
        kids.sort(key=lambda x: x.key)
    return apply_rule(t.rule, *kids)


def _join_tables(t: SqlTree) -> list[SqlTree]:
    if t.rule is Rule.CROSS_JOIN:
        return _join_tables(t.children[0]) + _join_tables(t.children[1])
    return [t]


def is_canonical_pair(rule: Rule, left: SqlTree, right: SqlTree) -> bool:
    """Whether ``rule(left, right)`` is already in canonical operand order."""
    if rule in COMMUTATIVE or (rule in (Rule.EQ, Rule.NE) and right.sem is SemType.C):
        return left.key <= right.key
    if rule is Rule.CROSS_JOIN:
        return all(t.key < right.key for t in _join_tables(left))
    return True


def decompose_by_height(t: SqlTree, h: int) -> set[SqlTree]:
    """Distinct sub-trees of height at most ``h``.

    Shorter branches stay in the set at every larger ``h``; in the decoder they
    survive between steps through KEEP, which leaves trees unchanged.
    """
    if h < 0:
        raise ValueError("height bound must be non-negative")
    return {s for s in t.subtrees() if s.height <= h}


def gold_frontier(t: SqlTree, h: int) -> set[SqlTree]:
    """The part of ``decompose_by_height(t, h)`` still needed after step ``h``.

    A sub-tree stays while some occurrence of it has a parent taller than
    ``h`` (or it is the root), so from step ``height(t)`` on only the root
    remains.  Finished sub-queries stop counting as targets once consumed.
    """
    if h < 0:
        raise ValueError("height bound must be non-negative")
    out: set[SqlTree] = set()

    def walk(node: SqlTree, parent_height: int) -> None:
        if node.height <= h < parent_height:
            out.add(node)
        if node.height > h:
            for c in node.children:
                walk(c, node.height)
    walk(t, h + 1 if t.height <= h else t.height + 1)
    return out


def rules_used(t: SqlTree) -> set[Rule]:
    return {s.rule for s in t.subtrees()}
