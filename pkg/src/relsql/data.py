"""Spider-format example files, database fixtures and the bundled mini corpus."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import MiniDatabase, load_database
from .schema import Schema, SchemaError, load_schemas
from .sqltree import SqlTree, parse_sql

log = logging.getLogger(__name__)

BUNDLED = Path(__file__).parent / "data"


@dataclass
class Example:
    question: str
    db_id: str
    gold_sql: str
    tree: SqlTree | None = field(default=None, repr=False, compare=False)


@dataclass
class LoadReport:
    loaded: int = 0
    unknown_db: list[int] = field(default_factory=list)
    unparseable: list[tuple[int, str]] = field(default_factory=list)

    @property
    def excluded(self) -> int:
        return len(self.unknown_db) + len(self.unparseable)


def read_examples(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(records, list):
        raise SchemaError(f"{path}: expected a JSON list of examples")
    for i, r in enumerate(records):
        for k in ("db_id", "question", "query"):
            if not isinstance(r, dict) or k not in r:
                raise SchemaError(f"{path}: example {i} lacks field {k!r}")
    return records


def load_dataset(schema_path: str | Path, examples_path: str | Path | None,
                 db_dir: str | Path | None = None):
    """Return (schemas, examples, dbs, report).

    Examples on unknown databases or with gold SQL outside the supported
    grammar are dropped and counted in the report.  When ``db_dir`` holds
    ``<db_id>.json`` fixtures, their cells become the schemas' cell values.
    ``examples_path=None`` loads schemas and fixtures only.
    """
    schemas = load_schemas(schema_path)
    dbs: dict[str, MiniDatabase] = {}
    if db_dir is not None:
        for db_id, s in list(schemas.items()):
            p = Path(db_dir) / f"{db_id}.json"
            if p.exists():
                db = load_database(p, s)
                schemas[db_id] = s.with_cell_values(db.cell_values())
                dbs[db_id] = MiniDatabase(schemas[db_id], db.tables)
    records = read_examples(examples_path) if examples_path is not None else []
    if examples_path is not None and not records:
        log.warning("%s: no examples", examples_path)
    report = LoadReport()
    examples = []
    for i, r in enumerate(records):
        s = schemas.get(r["db_id"])
        if s is None:
            report.unknown_db.append(i)
            continue
        try:
            tree = parse_sql(r["query"], s)
        except Exception as exc:  # grammar gaps are reported, not fatal
            report.unparseable.append((i, str(exc)))
            continue
        examples.append(Example(r["question"], r["db_id"], r["query"], tree))
    report.loaded = len(examples)
    if report.excluded:
        log.warning("%s: excluded %d unknown-db and %d unparseable examples", examples_path,
                    len(report.unknown_db), len(report.unparseable))
    return schemas, examples, dbs, report


def load_bundled():
    """The three-database fixture shipped with the package."""
    return load_dataset(BUNDLED / "tables.json", BUNDLED / "examples.json", BUNDLED / "databases")


def write_examples(path: str | Path, examples: list[Example]) -> None:
    doc = [{"db_id": e.db_id, "question": e.question, "query": e.gold_sql} for e in examples]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
