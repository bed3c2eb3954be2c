"""In-memory execution of typed query trees.

Bag semantics throughout except the set operators.  NULL fails every
comparison (including under NOT).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from ..schema import NUMBER, Schema, SchemaError
from ..sqltree import Rule, SemType, SqlTree
from ..sqltree.grammar import LIMITED, ORDERED, SETOP


class ExecError(RuntimeError):
    pass


@dataclass
class MiniDatabase:
    schema: Schema
    tables: list[dict[int, list]]  # per table: column index -> cells

    def __post_init__(self):
        for ti, cols in enumerate(self.tables):
            lengths = {len(v) for v in cols.values()}
            if len(lengths) > 1:
                raise SchemaError(f"{self.schema.db_id}: ragged columns in table {ti}")
            for ci, cells in cols.items():
                tag = self.schema.columns[ci].type_tag
                for v in cells:
                    if v is None:
                        continue
                    if (tag == NUMBER) != isinstance(v, (int, float)) or isinstance(v, bool):
                        raise SchemaError(
                            f"{self.schema.db_id}: cell {v!r} does not fit {tag} column {ci}")

    def rows(self, t: int) -> list[dict]:
        cols = self.tables[t]
        n = len(next(iter(cols.values()))) if cols else 0
        return [{ci: cells[k] for ci, cells in cols.items()} for k in range(n)]

    def cell_values(self) -> dict[int, tuple[str, ...]]:
        out = {}
        for cols in self.tables:
            for ci, cells in cols.items():
                out[ci] = tuple(dict.fromkeys(str(v) for v in cells if v is not None))
        return out

    @classmethod
    def from_json(cls, doc: dict, schema: Schema) -> "MiniDatabase":
        tables: list[dict[int, list]] = [dict() for _ in schema.tables]
        for tname, cols in doc["tables"].items():
            ti = schema.table_named(tname)
            for cname, cells in cols.items():
                hits = [c for c in schema.columns_named(cname) if schema.columns[c].table_index == ti]
                if not hits:
                    raise SchemaError(f"{schema.db_id}: fixture column {tname}.{cname} not in schema")
                tables[ti][hits[0]] = list(cells)
        for ti in range(len(schema.tables)):
            for ci in schema.table_columns(ti):
                if ci not in tables[ti]:
                    n = len(next(iter(tables[ti].values()))) if tables[ti] else 0
                    tables[ti][ci] = [None] * n
        return cls(schema, tables)

    def to_json(self) -> dict:
        s = self.schema
        return {
            "db_id": s.db_id,
            "tables": {
                s.tables[ti].original: {s.columns[ci].original: list(cells) for ci, cells in cols.items()}
                for ti, cols in enumerate(self.tables)
            },
        }


def load_database(path: str | Path, schema: Schema) -> MiniDatabase:
    return MiniDatabase.from_json(json.loads(Path(path).read_text()), schema)


@dataclass
class Result:
    rows: list[tuple]
    ordered: bool


# ---------------------------------------------------------------- helpers

def _sort_key(v):
    # NULL < numbers < text, matching SQLite's ordering of storage classes
    if v is None:
        return (0, 0)
    if isinstance(v, (int, float)):
        return (1, v)
    return (2, v)


def _like(value: str, pattern: str) -> bool:
    rx = "".join(".*" if ch == "%" else "." if ch == "_" else re.escape(ch) for ch in pattern)
    return re.fullmatch(rx, value, flags=re.IGNORECASE | re.DOTALL) is not None


def _check_comparable(a, b, op: Rule) -> None:
    if isinstance(a, str) != isinstance(b, str):
        raise ExecError(f"{op.value} between {type(a).__name__} and {type(b).__name__}")


class _Runner:
    def __init__(self, db: MiniDatabase):
        self.db = db
        self._scalar_cache: dict[str, object] = {}

    # ---- queries
    def query(self, t: SqlTree) -> Result:
        if not t.complete:
            raise ExecError(f"incomplete query {t.key}")
        if t.stage == SETOP:
            left, right = t.children
            a = self.query(left).rows
            b = self.query(right).rows
            if t.rule is Rule.UNION:
                out = list(dict.fromkeys(a + b))
            elif t.rule is Rule.INTERSECT:
                bs = set(b)
                out = [r for r in dict.fromkeys(a) if r in bs]
            else:
                bs = set(b)
                out = [r for r in dict.fromkeys(a) if r not in bs]
            return Result(out, False)
        limit = order = None
        if t.stage == LIMITED:
            limit, t = t.children
        if t.stage == ORDERED:
            order, t = t.children
        sel, rel = t.children
        units, grouped = self.relation(rel)
        items = _list_items(sel)
        if not grouped and any(i.sem is SemType.AGG for i in items):
            units = [[r for u in units for r in u]]
            grouped = True
        self._star_cols = _source_columns(rel, self.db.schema)
        out = [(self.project(items, u, grouped), u) for u in units]
        if items[0].sem is SemType.C and items[0].distinct:
            seen, dedup = set(), []
            for row, u in out:
                if row not in seen:
                    seen.add(row)
                    dedup.append((row, u))
            out = dedup
        if order is not None:
            key = order.children[0]
            reverse = order.rule is Rule.DESC
            out.sort(key=lambda ru: _sort_key(self.value(key, ru[1], grouped)), reverse=reverse)
        if limit is not None:
            out = out[: limit.payload.value]
        return Result([row for row, _ in out], order is not None)

    def relation(self, t: SqlTree) -> tuple[list[list[dict]], bool]:
        """Return units (single rows, or groups) and whether they are groups."""
        r = t.rule
        if r is Rule.TABLE:
            return [[row] for row in self.db.rows(t.payload)], False
        if r is Rule.CROSS_JOIN:
            left, _ = self.relation(t.children[0])
            right, _ = self.relation(t.children[1])
            return [[{**a[0], **b[0]}] for a in left for b in right], False
        if r in (Rule.SELECTION, Rule.JOIN_ON):
            p, rel = t.children
            units, grouped = self.relation(rel)
            return [u for u in units if self.pred(p, u, grouped)], grouped
        if r is Rule.GROUPBY:
            g, rel = t.children
            units, _ = self.relation(rel)
            keys = _list_items(g)
            groups: dict[tuple, list[dict]] = {}
            for u in units:
                k = tuple(u[0].get(c.payload) for c in keys)
                groups.setdefault(k, []).append(u[0])
            return list(groups.values()), True
        if r is Rule.HAVING:
            p, rel = t.children
            units, grouped = self.relation(rel)
            return [u for u in units if self.pred(p, u, True)], grouped
        raise ExecError(f"not a relation: {t.key}")

    # ---- values
    def project(self, items: list[SqlTree], unit: list[dict], grouped: bool) -> tuple:
        out = []
        for it in items:
            if it.sem is SemType.C and it.is_star:
                if not unit:
                    continue
                out.extend(unit[0][ci] for ci in self._star_cols)
            else:
                out.append(self.value(it, unit, grouped))
        return tuple(out)

    def value(self, t: SqlTree, unit: list[dict], grouped: bool):
        if t.sem is SemType.AGG:
            return self.aggregate(t, unit)
        if t.rule is Rule.DISTINCT:
            t = t.children[0]
        if not unit:
            return None
        return unit[0].get(t.payload)

    def aggregate(self, t: SqlTree, rows: list[dict]):
        inner = t.children[0]
        if inner.is_star:
            return len(rows)
        col = inner.children[0].payload if inner.rule is Rule.DISTINCT else inner.payload
        vals = [r[col] for r in rows if r.get(col) is not None]
        if inner.rule is Rule.DISTINCT:
            vals = list(dict.fromkeys(vals))
        if t.rule is Rule.COUNT:
            return len(vals)
        if not vals:
            return None
        if t.rule is Rule.SUM:
            return sum(vals)
        if t.rule is Rule.AVG:
            return sum(vals) / len(vals)
        if t.rule is Rule.MIN:
            return min(vals, key=_sort_key)
        return max(vals, key=_sort_key)

    def scalar(self, q: SqlTree):
        if q.key not in self._scalar_cache:
            rows = self.query(q).rows
            self._scalar_cache[q.key] = rows[0][0] if rows else None
        return self._scalar_cache[q.key]

    def column_set(self, q: SqlTree) -> set:
        key = "set:" + q.key
        if key not in self._scalar_cache:
            self._scalar_cache[key] = {r[0] for r in self.query(q).rows}
        return self._scalar_cache[key]

    def pred(self, p: SqlTree, unit: list[dict], grouped: bool) -> bool:
        r = p.rule
        if r is Rule.AND:
            return self.pred(p.children[0], unit, grouped) and self.pred(p.children[1], unit, grouped)
        if r is Rule.OR:
            return self.pred(p.children[0], unit, grouped) or self.pred(p.children[1], unit, grouped)
        if r is Rule.NOT:
            return not self.pred(p.children[0], unit, grouped)
        left, right = p.children
        a = self.value(left, unit, grouped)
        if r in (Rule.IN, Rule.NOT_IN):
            if a is None:
                return False
            hit = a in self.column_set(right)
            return hit if r is Rule.IN else not hit
        if right.sem is SemType.R:
            b = self.scalar(right)
        elif right.sem is SemType.C:
            b = self.value(right, unit, grouped)
        else:
            b = right.payload.value
        if a is None or b is None:
            return False
        if r is Rule.LIKE:
            if not isinstance(a, str) or not isinstance(b, str):
                raise ExecError("LIKE on non-text operands")
            return _like(a, b)
        _check_comparable(a, b, r)
        if r is Rule.EQ:
            return a == b
        if r is Rule.NE:
            return a != b
        if r is Rule.GT:
            return a > b
        if r is Rule.GE:
            return a >= b
        if r is Rule.LT:
            return a < b
        return a <= b


def _source_columns(rel: SqlTree, schema: Schema) -> list[int]:
    while rel.rule not in (Rule.TABLE, Rule.CROSS_JOIN):
        rel = rel.children[1]
    stack, order = [rel], []
    while stack:
        node = stack.pop()
        if node.rule is Rule.TABLE:
            order.append(node.payload)
        else:
            stack.extend(reversed(node.children))
    return [ci for t in order for ci in schema.table_columns(t)]


def _list_items(t: SqlTree) -> list[SqlTree]:
    out = []
    while t.sem is SemType.LIST:
        out.append(t.children[0])
        t = t.children[1]
    out.append(t)
    return out


def execute(t: SqlTree, db: MiniDatabase) -> Result:
    """Run a complete query tree; raises ExecError on runtime type errors."""
    return _Runner(db).query(t)
