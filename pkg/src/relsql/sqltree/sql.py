"""SQL text <-> SqlTree for the supported subset."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..schema import NUMBER, Schema
from .grammar import (
    COMMUTATIVE,
    LIMITED,
    ORDERED,
    SETOP,
    Literal,
    Rule,
    RuleTypeError,
    SemType,
    SqlTree,
    apply_rule,
    canonicalize,
    column_leaf,
    star_leaf,
    table_leaf,
    value_leaf,
)


class UnsupportedSql(ValueError):
    def __init__(self, construct: str):
        self.construct = construct
        super().__init__(f"unsupported SQL construct: {construct}")


class IncompleteTree(ValueError):
    pass


class UnknownIdentifier(ValueError):
    pass


CMP_TEXT = {Rule.EQ: "=", Rule.NE: "!=", Rule.GT: ">", Rule.GE: ">=", Rule.LT: "<", Rule.LE: "<="}
TEXT_CMP = {v: k for k, v in CMP_TEXT.items()} | {"<>": Rule.NE, "==": Rule.EQ}
AGG_TEXT = {Rule.COUNT: "count", Rule.SUM: "sum", Rule.AVG: "avg", Rule.MIN: "min", Rule.MAX: "max"}
TEXT_AGG = {v: k for k, v in AGG_TEXT.items()}
SETOP_TEXT = {Rule.UNION: "UNION", Rule.INTERSECT: "INTERSECT", Rule.EXCEPT: "EXCEPT"}


# ================================================================ emission

def _quote(s: str) -> str:
    return "'" + s.replace("'", "''") + "'"


def literal_sql(lit: Literal) -> str:
    if lit.tag == NUMBER:
        return repr(lit.value)
    return _quote(lit.value)


class _Emitter:
    def __init__(self, schema: Schema):
        self.s = schema

    def query(self, t: SqlTree) -> str:
        if not t.complete:
            raise IncompleteTree(f"not a complete query: {t.key}")
        if t.stage == SETOP:
            left, right = t.children
            return f"{self.query(left)} {SETOP_TEXT[t.rule]} {self.query(right)}"
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
        tables = _join_leaves(rel)
        qualify = len(tables) > 1
        col = lambda c: self.col(c, qualify)  # noqa: E731
        items = _list_items(sel)
        distinct = bool(items) and items[0].distinct
        parts = ["SELECT " + ("DISTINCT " if distinct else "") + ", ".join(self.item(i, qualify) for i in items)]
        parts.append("FROM " + " JOIN ".join(self.s.tables[x.payload].original for x in tables))
        if on is not None:
            parts.append("ON " + self.pred(on, qualify))
        if where is not None:
            parts.append("WHERE " + self.pred(where, qualify))
        if group is not None:
            parts.append("GROUP BY " + ", ".join(col(c) for c in _list_items(group)))
        if having is not None:
            parts.append("HAVING " + self.pred(having, qualify))
        if order is not None:
            key = order.children[0]
            parts.append(f"ORDER BY {self.item(key, qualify)} {order.rule.value}")
        if limit is not None:
            parts.append(f"LIMIT {literal_sql(limit.payload)}")
        return " ".join(parts)

    def col(self, c: SqlTree, qualify: bool) -> str:
        if c.rule is Rule.DISTINCT:
            c = c.children[0]
        if c.is_star:
            return "*"
        column = self.s.columns[c.payload]
        if qualify:
            return f"{self.s.tables[column.table_index].original}.{column.original}"
        return column.original

    def item(self, t: SqlTree, qualify: bool) -> str:
        if t.sem is SemType.AGG:
            inner = t.children[0]
            d = "DISTINCT " if inner.distinct else ""
            return f"{AGG_TEXT[t.rule]}({d}{self.col(inner, qualify)})"
        return self.col(t, qualify)

    def pred(self, p: SqlTree, qualify: bool) -> str:
        r = p.rule
        if r in (Rule.AND, Rule.OR):
            left, right = p.children
            ls = self.pred(left, qualify)
            rs = self.pred(right, qualify)
            if not (_atomic(left) or left.rule is r):
                ls = f"({ls})"
            if not _atomic(right):
                rs = f"({rs})"
            return f"{ls} {r.value} {rs}"
        if r is Rule.NOT:
            return f"NOT ({self.pred(p.children[0], qualify)})"
        left, right = p.children
        lhs = self.item(left, qualify)
        if r in (Rule.IN, Rule.NOT_IN):
            kw = "IN" if r is Rule.IN else "NOT IN"
            return f"{lhs} {kw} ({self.query(right)})"
        op = "LIKE" if r is Rule.LIKE else CMP_TEXT[r]
        if right.sem is SemType.R:
            rhs = f"({self.query(right)})"
        elif right.sem is SemType.C:
            rhs = self.col(right, qualify)
        else:
            rhs = literal_sql(right.payload)
        return f"{lhs} {op} {rhs}"


def _atomic(p: SqlTree) -> bool:
    return p.rule not in (Rule.AND, Rule.OR)


def _join_leaves(rel: SqlTree) -> list[SqlTree]:
    if rel.rule is Rule.CROSS_JOIN:
        return _join_leaves(rel.children[0]) + _join_leaves(rel.children[1])
    return [rel]


def _list_items(t: SqlTree) -> list[SqlTree]:
    out = []
    while t.sem is SemType.LIST:
        out.append(t.children[0])
        t = t.children[1]
    out.append(t)
    return out


def emit_sql(t: SqlTree, schema: Schema) -> str:
    """Render a complete query as SQL text with upper-case keywords."""
    return _Emitter(schema).query(t)


# ================================================================ lexing

_SQL_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
      | (?P<str>'(?:[^']|'')*'|"(?:[^"]|"")*")
      | (?P<op>>=|<=|!=|<>|==|[=<>(),*;])
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.(?:[A-Za-z_][A-Za-z0-9_]*|\*))?)
      | (?P<bad>\S)
    )""",
    re.VERBOSE,
)

KEYWORDS = {
    "select", "from", "where", "group", "by", "having", "order", "limit", "join", "on", "as",
    "and", "or", "not", "in", "like", "distinct", "asc", "desc", "union", "intersect", "except",
    "count", "sum", "avg", "min", "max", "between", "is", "null", "exists", "inner", "left",
    "right", "outer", "case", "when", "all",
}


@dataclass
class _Tok:
    kind: str  # num | str | op | kw | name
    text: str


def _lex(sql: str) -> list[_Tok]:
    out = []
    pos = 0
    sql = sql.strip()
    while pos < len(sql):
        m = _SQL_TOKEN.match(sql, pos)
        if m is None or m.end() == pos:
            break
        pos = m.end()
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "bad":
            raise UnsupportedSql(f"character {text!r}")
        if kind == "name" and text.lower() in KEYWORDS:
            out.append(_Tok("kw", text.lower()))
        elif kind == "str":
            q = text[0]
            out.append(_Tok("str", text[1:-1].replace(q + q, q)))
        else:
            out.append(_Tok(kind, text))
    if out and out[-1].kind == "op" and out[-1].text == ";":
        out.pop()
    return out


# ================================================================ raw syntax

@dataclass
class _ColRef:
    qualifier: str | None
    name: str  # "*" for star


@dataclass
class _Item:
    agg: Rule | None
    distinct: bool
    col: _ColRef


@dataclass
class _Cmp:
    op: Rule
    left: _Item
    right: object  # Literal | _ColRef | _Select


@dataclass
class _BoolOp:
    op: Rule
    args: list


@dataclass
class _Not:
    arg: object


@dataclass
class _Select:
    distinct: bool = False
    items: list = field(default_factory=list)
    tables: list = field(default_factory=list)  # (name, alias)
    on: list = field(default_factory=list)
    where: object = None
    group: list = field(default_factory=list)
    having: object = None
    order: tuple | None = None  # (_Item, "ASC"/"DESC")
    limit: Literal | None = None
    setop: tuple | None = None  # (Rule, _Select)


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self, k: int = 0) -> _Tok | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at_kw(self, *words) -> bool:
        t = self.peek()
        return t is not None and t.kind == "kw" and t.text in words

    def at_op(self, *ops) -> bool:
        t = self.peek()
        return t is not None and t.kind == "op" and t.text in ops

    def take(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise UnsupportedSql("unexpected end of query")
        self.i += 1
        return t

    def expect_kw(self, w: str) -> None:
        t = self.take()
        if t.kind != "kw" or t.text != w:
            raise UnsupportedSql(f"expected {w.upper()} near {t.text!r}")

    def expect_op(self, o: str) -> None:
        t = self.take()
        if t.kind != "op" or t.text != o:
            raise UnsupportedSql(f"expected {o!r} near {t.text!r}")

    # query := core ((UNION|INTERSECT|EXCEPT) core)*
    def query(self) -> _Select:
        q = self.core()
        node = q
        while self.at_kw("union", "intersect", "except"):
            op = {"union": Rule.UNION, "intersect": Rule.INTERSECT, "except": Rule.EXCEPT}[self.take().text]
            nxt = self.core()
            node.setop = (op, nxt)
            node = nxt
        return q

    def core(self) -> _Select:
        if self.at_op("("):
            raise UnsupportedSql("parenthesised set operand")
        self.expect_kw("select")
        s = _Select()
        if self.at_kw("distinct"):
            self.take()
            s.distinct = True
        if self.at_kw("all"):
            raise UnsupportedSql("SELECT ALL")
        s.items.append(self.item())
        while self.at_op(","):
            self.take()
            s.items.append(self.item())
        self.expect_kw("from")
        self.from_clause(s)
        if self.at_kw("where"):
            self.take()
            s.where = self.cond()
        if self.at_kw("group"):
            self.take()
            self.expect_kw("by")
            s.group.append(self.colref())
            while self.at_op(","):
                self.take()
                s.group.append(self.colref())
        if self.at_kw("having"):
            self.take()
            s.having = self.cond()
        if self.at_kw("order"):
            self.take()
            self.expect_kw("by")
            key = self.item()
            direction = "ASC"
            if self.at_kw("asc", "desc"):
                direction = self.take().text.upper()
            if self.at_op(","):
                raise UnsupportedSql("multi-key ORDER BY")
            s.order = (key, direction)
        if self.at_kw("limit"):
            self.take()
            t = self.take()
            if t.kind != "num":
                raise UnsupportedSql("non-numeric LIMIT")
            s.limit = Literal.number(t.text)
        return s

    def from_clause(self, s: _Select) -> None:
        s.tables.append(self.table_ref())
        while True:
            if self.at_op(","):
                self.take()
                s.tables.append(self.table_ref())
            elif self.at_kw("join", "inner"):
                if self.take().text == "inner":
                    self.expect_kw("join")
                s.tables.append(self.table_ref())
                if self.at_kw("on"):
                    self.take()
                    s.on.append(self.cond())
            elif self.at_kw("left", "right", "outer"):
                raise UnsupportedSql("outer join")
            else:
                return

    def table_ref(self) -> tuple[str, str | None]:
        if self.at_op("("):
            raise UnsupportedSql("subquery in FROM")
        t = self.take()
        if t.kind != "name" or "." in t.text:
            raise UnsupportedSql(f"table reference {t.text!r}")
        alias = None
        if self.at_kw("as"):
            self.take()
            alias = self.take().text
        elif self.peek() is not None and self.peek().kind == "name":
            alias = self.take().text
        return t.text, alias

    def colref(self) -> _ColRef:
        t = self.take()
        if t.kind == "op" and t.text == "*":
            return _ColRef(None, "*")
        if t.kind != "name":
            raise UnsupportedSql(f"expected a column near {t.text!r}")
        if "." in t.text:
            q, _, n = t.text.partition(".")
            return _ColRef(q, n)
        return _ColRef(None, t.text)

    def item(self) -> _Item:
        if self.at_kw(*TEXT_AGG):
            agg = TEXT_AGG[self.take().text]
            self.expect_op("(")
            distinct = False
            if self.at_kw("distinct"):
                self.take()
                distinct = True
            c = self.colref()
            self.expect_op(")")
            return _Item(agg, distinct, c)
        if self.at_kw("distinct"):
            raise UnsupportedSql("DISTINCT inside the select list")
        c = self.colref()
        if self.at_op("(") or self.at_op("+") or self.at_op("-"):
            raise UnsupportedSql("expression in select list")
        return _Item(None, False, c)

    # cond := and (OR and)* ; and := not (AND not)* ; not := NOT not | primary
    def cond(self):
        args = [self.conj()]
        while self.at_kw("or"):
            self.take()
            args.append(self.conj())
        return args[0] if len(args) == 1 else _BoolOp(Rule.OR, args)

    def conj(self):
        args = [self.neg()]
        while self.at_kw("and"):
            self.take()
            args.append(self.neg())
        return args[0] if len(args) == 1 else _BoolOp(Rule.AND, args)

    def neg(self):
        if self.at_kw("not"):
            self.take()
            return _Not(self.neg())
        if self.at_op("("):
            self.take()
            inner = self.cond()
            self.expect_op(")")
            return inner
        return self.atom()

    def atom(self):
        left = self.item()
        if self.at_kw("not"):
            self.take()
            if self.at_kw("in"):
                self.take()
                return _Cmp(Rule.NOT_IN, left, self.subquery())
            if self.at_kw("like"):
                self.take()
                return _Not(_Cmp(Rule.LIKE, left, self.value()))
            raise UnsupportedSql("NOT after operand")
        if self.at_kw("in"):
            self.take()
            return _Cmp(Rule.IN, left, self.subquery())
        if self.at_kw("like"):
            self.take()
            return _Cmp(Rule.LIKE, left, self.value())
        if self.at_kw("between"):
            raise UnsupportedSql("BETWEEN")
        if self.at_kw("is"):
            raise UnsupportedSql("IS NULL")
        t = self.take()
        if t.kind != "op" or t.text not in TEXT_CMP:
            raise UnsupportedSql(f"operator {t.text!r}")
        op = TEXT_CMP[t.text]
        if self.at_op("("):
            return _Cmp(op, left, self.subquery())
        nxt = self.peek()
        if nxt is not None and nxt.kind == "name":
            return _Cmp(op, left, self.colref())
        return _Cmp(op, left, self.value())

    def subquery(self) -> _Select:
        self.expect_op("(")
        if not self.at_kw("select"):
            raise UnsupportedSql("value list")
        q = self.query()
        self.expect_op(")")
        return q

    def value(self) -> Literal:
        t = self.take()
        if t.kind == "num":
            return Literal.number(t.text)
        if t.kind == "str":
            return Literal.text(t.text)
        raise UnsupportedSql(f"value {t.text!r}")


# ================================================================ resolution

class _Scope:
    def __init__(self, schema: Schema, tables: list[tuple[str, str | None]]):
        self.s = schema
        self.entries = []
        for name, alias in tables:
            try:
                ti = schema.table_named(name)
            except Exception:
                raise UnknownIdentifier(f"unknown table {name!r}") from None
            if any(ti == e[0] for e in self.entries):
                raise UnsupportedSql("self join")
            self.entries.append((ti, name.lower(), alias.lower() if alias else None))

    def table_indices(self) -> list[int]:
        return [e[0] for e in self.entries]

    def resolve(self, ref: _ColRef) -> SqlTree:
        if ref.name == "*":
            return star_leaf()
        if ref.qualifier is not None:
            q = ref.qualifier.lower()
            hits = [e[0] for e in self.entries if q in (e[1], e[2])]
            if not hits:
                raise UnknownIdentifier(f"unknown table qualifier {ref.qualifier!r}")
            cands = [c for c in self.s.columns_named(ref.name) if self.s.columns[c].table_index == hits[0]]
        else:
            scope = set(self.table_indices())
            cands = [c for c in self.s.columns_named(ref.name) if self.s.columns[c].table_index in scope]
            if len(cands) > 1:
                raise UnknownIdentifier(f"ambiguous column {ref.name!r}")
        if not cands:
            raise UnknownIdentifier(f"unknown column {ref.name!r}")
        return column_leaf(self.s, cands[0])


def _apply(rule: Rule, *kids: SqlTree) -> SqlTree:
    try:
        return apply_rule(rule, *kids)
    except RuleTypeError as exc:
        raise UnsupportedSql(f"ill-typed {rule.value}: {exc.reason}") from None


def _chain(rule: Rule, items: list[SqlTree], right_leaning: bool) -> SqlTree:
    if right_leaning:
        out = items[-1]
        for it in reversed(items[:-1]):
            out = _apply(rule, it, out)
        return out
    out = items[0]
    for it in items[1:]:
        out = _apply(rule, out, it)
    return out


class _Builder:
    def __init__(self, schema: Schema):
        self.s = schema

    def query(self, q: _Select) -> SqlTree:
        tree = self.core(q)
        node = q
        while node.setop is not None:
            op, nxt = node.setop
            tree = _apply(op, tree, self.core(nxt))
            node = nxt
        return tree

    def core(self, q: _Select) -> SqlTree:
        scope = _Scope(self.s, q.tables)
        rel = _chain(Rule.CROSS_JOIN, [table_leaf(t) for t in scope.table_indices()], right_leaning=False)
        if q.on:
            rel = _apply(Rule.JOIN_ON, _chain(Rule.AND, [self.pred(p, scope) for p in q.on], False), rel)
        if q.where is not None:
            rel = _apply(Rule.SELECTION, self.pred(q.where, scope), rel)
        if q.group:
            keys = [scope.resolve(c) for c in q.group]
            rel = _apply(Rule.GROUPBY, _chain(Rule.LIST, keys, right_leaning=True), rel)
        if q.having is not None:
            rel = _apply(Rule.HAVING, self.pred(q.having, scope), rel)
        items = [self.item(it, scope) for it in q.items]
        if q.distinct:
            if items[0].sem is not SemType.C:
                raise UnsupportedSql("SELECT DISTINCT over an aggregate")
            items[0] = _apply(Rule.DISTINCT, items[0])
        rel = _apply(Rule.PROJECT, _chain(Rule.LIST, items, right_leaning=True), rel)
        if q.order is not None:
            key, direction = q.order
            rel = _apply(Rule.ORDERBY, _apply(Rule(direction), self.item(key, scope)), rel)
        if q.limit is not None:
            rel = _apply(Rule.LIMIT, value_leaf(q.limit), rel)
        return rel

    def item(self, it: _Item, scope: _Scope) -> SqlTree:
        c = scope.resolve(it.col)
        if it.distinct:
            c = _apply(Rule.DISTINCT, c)
        if it.agg is not None:
            return _apply(it.agg, c)
        return c

    def pred(self, p, scope: _Scope) -> SqlTree:
        if isinstance(p, _BoolOp):
            return _chain(p.op, [self.pred(a, scope) for a in p.args], right_leaning=False)
        if isinstance(p, _Not):
            return _apply(Rule.NOT, self.pred(p.arg, scope))
        left = self.item(p.left, scope)
        r = p.right
        if isinstance(r, _Select):
            right = self.query(r)
        elif isinstance(r, _ColRef):
            right = scope.resolve(r)
        else:
            right = value_leaf(r)
        return _apply(p.op, left, right)


def parse_sql(sql: str, schema: Schema) -> SqlTree:
    """Parse SQL into a canonical typed tree.

    Raises UnsupportedSql for constructs outside the grammar and
    UnknownIdentifier for names the schema does not resolve.
    """
    toks = _lex(sql)
    if not toks:
        raise UnsupportedSql("empty query")
    p = _Parser(toks)
    q = p.query()
    if p.peek() is not None:
        raise UnsupportedSql(f"trailing text near {p.peek().text!r}")
    return canonicalize(_Builder(schema).query(q))


__all__ = ["emit_sql", "parse_sql", "UnsupportedSql", "IncompleteTree", "UnknownIdentifier",
           "literal_sql", "COMMUTATIVE"]
