"""Database schemas, question tokenisation and Spider-format ingestion."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

NUMBER = "number"
TEXT = "text"
TYPE_TAGS = (NUMBER, TEXT)


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Table:
    name: tuple[str, ...]
    original: str


@dataclass(frozen=True)
class Column:
    name: tuple[str, ...]
    table_index: int
    type_tag: str
    is_primary_key: bool = False
    original: str = ""


@dataclass(frozen=True)
class Schema:
    db_id: str
    tables: tuple[Table, ...]
    columns: tuple[Column, ...]
    foreign_keys: tuple[tuple[int, int], ...] = ()
    cell_values: dict[int, tuple[str, ...]] | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        nt, nc = len(self.tables), len(self.columns)
        if nt == 0:
            raise SchemaError(f"{self.db_id}: schema without tables")
        for i, c in enumerate(self.columns):
            if not 0 <= c.table_index < nt:
                raise SchemaError(f"{self.db_id}: column {i} points at table {c.table_index}")
            if c.type_tag not in TYPE_TAGS:
                raise SchemaError(f"{self.db_id}: column {i} has type tag {c.type_tag!r}")
            if not c.name:
                raise SchemaError(f"{self.db_id}: column {i} has an empty name")
        for a, b in self.foreign_keys:
            if not (0 <= a < nc and 0 <= b < nc) or a == b:
                raise SchemaError(f"{self.db_id}: bad foreign key {a} -> {b}")
        if self.cell_values:
            for ci in self.cell_values:
                if not 0 <= ci < nc:
                    raise SchemaError(f"{self.db_id}: cell values for unknown column {ci}")

    def table_columns(self, t: int) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.table_index == t]

    def primary_keys(self, t: int) -> list[int]:
        return [i for i in self.table_columns(t) if self.columns[i].is_primary_key]

    def table_named(self, name: str) -> int:
        key = name.lower()
        for i, t in enumerate(self.tables):
            if t.original.lower() == key:
                return i
        raise SchemaError(f"{self.db_id}: unknown table {name!r}")

    def columns_named(self, name: str) -> list[int]:
        key = name.lower()
        return [i for i, c in enumerate(self.columns) if c.original.lower() == key]

    def with_cell_values(self, values: dict[int, tuple[str, ...]]) -> "Schema":
        return Schema(self.db_id, self.tables, self.columns, self.foreign_keys, dict(values))


@dataclass(frozen=True)
class QuestionTokens:
    raw: str
    tokens: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.tokens)


_TOKEN_RE = re.compile(r"[0-9]+(?:\.[0-9]+)?|[a-z0-9_]+|[^\sa-z0-9_]", re.IGNORECASE)


def tokenize(text: str) -> QuestionTokens:
    """Lowercase and split on whitespace and punctuation, keeping punctuation."""
    if not text or not text.strip():
        raise ValueError("cannot tokenize an empty question")
    toks, spans = [], []
    for m in _TOKEN_RE.finditer(text):
        toks.append(m.group(0).lower())
        spans.append((m.start(), m.end()))
    return QuestionTokens(text, tuple(toks), tuple(spans))


def split_name(name: str) -> tuple[str, ...]:
    return tuple(w for w in re.split(r"[\s_]+", name.strip().lower()) if w)


# ---------------------------------------------------------------- Spider ingestion

def _tag(spider_type: str) -> str:
    return NUMBER if spider_type == "number" else TEXT


def schema_from_spider(entry: dict) -> Schema:
    """Build a Schema from one ``tables.json`` record.

    Spider reserves column 0 for ``*``; it is dropped and indices shift by one.
    """
    try:
        db_id = entry["db_id"]
        t_orig = entry["table_names_original"]
        t_nat = entry.get("table_names", t_orig)
        c_orig = entry["column_names_original"]
        c_nat = entry.get("column_names", c_orig)
        c_types = entry["column_types"]
        pks = entry.get("primary_keys", [])
        fks = entry.get("foreign_keys", [])
    except KeyError as exc:
        raise SchemaError(f"tables.json record missing field {exc}") from None

    def shift(ix: int) -> int:
        return ix - 1 if c_orig and c_orig[0][0] == -1 else ix

    flat_pks: set[int] = set()
    for pk in pks:
        for p in pk if isinstance(pk, list) else [pk]:
            flat_pks.add(shift(p))
    tables = tuple(Table(split_name(n), o) for n, o in zip(t_nat, t_orig))
    columns = []
    for i, ((ti, orig), (_, nat), ty) in enumerate(zip(c_orig, c_nat, c_types)):
        if ti == -1:
            continue
        columns.append(Column(split_name(nat), ti, _tag(ty), shift(i) in flat_pks, orig))
    fk = tuple((shift(a), shift(b)) for a, b in fks)
    return Schema(db_id, tables, tuple(columns), fk)


def schema_to_spider(s: Schema) -> dict:
    return {
        "db_id": s.db_id,
        "table_names_original": [t.original for t in s.tables],
        "table_names": [" ".join(t.name) for t in s.tables],
        "column_names_original": [[-1, "*"]] + [[c.table_index, c.original] for c in s.columns],
        "column_names": [[-1, "*"]] + [[c.table_index, " ".join(c.name)] for c in s.columns],
        "column_types": ["text"] + [c.type_tag for c in s.columns],
        "primary_keys": [i + 1 for i, c in enumerate(s.columns) if c.is_primary_key],
        "foreign_keys": [[a + 1, b + 1] for a, b in s.foreign_keys],
    }


def load_schemas(path: str | Path) -> dict[str, Schema]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    out = {}
    for i, rec in enumerate(records):
        try:
            s = schema_from_spider(rec)
        except SchemaError as exc:
            raise SchemaError(f"{path}: record {i}: {exc}") from None
        out[s.db_id] = s
    return out


def load_cell_values(path: str | Path, schemas: dict[str, Schema]) -> dict[str, Schema]:
    """Attach a sidecar ``{db_id: {"table.column": [values...]}}`` file."""
    doc = json.loads(Path(path).read_text())
    out = dict(schemas)
    for db_id, cols in doc.items():
        if db_id not in schemas:
            continue
        s = schemas[db_id]
        values = {}
        for key, vals in cols.items():
            tname, _, cname = key.partition(".")
            ti = s.table_named(tname)
            hits = [c for c in s.columns_named(cname) if s.columns[c].table_index == ti]
            if not hits:
                raise SchemaError(f"{path}: {db_id} has no column {key!r}")
            values[hits[0]] = tuple(str(v) for v in vals if v is not None)
        out[db_id] = s.with_cell_values(values)
    return out
