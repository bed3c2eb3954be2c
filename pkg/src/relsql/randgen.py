"""Random schemas, NULL-free databases and queries for property and differential tests."""

from __future__ import annotations

import random

from .evaluation import MiniDatabase
from .schema import NUMBER, TEXT, Column, Schema, Table
from .sqltree import SqlTree, parse_sql

WORDS = ("alpha", "bravo", "cedar", "delta", "ember", "fjord", "grove", "harbor", "iris", "jade",
         "kite", "lumen", "maple", "north", "opal", "pine", "quartz", "river", "stone", "tide")
NAME_WORDS = ("name", "title", "city", "rank", "score", "size", "year", "price", "code", "level",
              "age", "genre", "color", "weight", "height", "kind")
TABLE_WORDS = ("artist", "album", "track", "venue", "player", "team", "course", "room", "ship", "store")


def random_schema(rng: random.Random, db_id: str = "rand", max_tables: int = 4) -> Schema:
    """Tables with an ``id`` primary key, 1-4 more columns and foreign keys to earlier tables."""
    n_tab = rng.randint(1, max_tables)
    tnames = rng.sample(TABLE_WORDS, n_tab)
    tables, columns, fks = [], [], []
    for ti, tn in enumerate(tnames):
        tables.append(Table((tn,), tn))
        columns.append(Column((tn, "id"), ti, NUMBER, True, f"{tn}_id"))
        for w in rng.sample(NAME_WORDS, rng.randint(1, 4)):
            tag = rng.choice((NUMBER, TEXT))
            columns.append(Column((w,), ti, tag, False, w))
        if ti > 0 and rng.random() < 0.8:
            target = rng.randrange(ti)
            target_pk = next(c for c, col in enumerate(columns) if col.table_index == target and col.is_primary_key)
            ref = tnames[target]
            columns.append(Column((ref, "id"), ti, NUMBER, False, f"{ref}_id"))
            fks.append((len(columns) - 1, target_pk))
    return Schema(db_id, tuple(tables), tuple(columns), tuple(fks))


def random_database(s: Schema, rng: random.Random, min_rows: int = 3, max_rows: int = 7) -> MiniDatabase:
    """Every cell filled; within a non-key column all values are distinct, so sorts never tie."""
    tables: list[dict[int, list]] = [dict() for _ in s.tables]
    n_rows = [rng.randint(min_rows, max_rows) for _ in s.tables]
    fk_src = dict(s.foreign_keys)
    for ti in range(len(s.tables)):
        n = n_rows[ti]
        for ci in s.table_columns(ti):
            col = s.columns[ci]
            if col.is_primary_key:
                tables[ti][ci] = list(range(1, n + 1))
            elif ci in fk_src:
                target_rows = n_rows[s.columns[fk_src[ci]].table_index]
                tables[ti][ci] = [rng.randint(1, target_rows) for _ in range(n)]
            elif col.type_tag == NUMBER:
                tables[ti][ci] = rng.sample(range(0, 100), n)
            else:
                tables[ti][ci] = rng.sample(WORDS, n)
    return MiniDatabase(s, tables)


def _unique_cols(s: Schema, t: int) -> list[int]:
    fk_src = {a for a, _ in s.foreign_keys}
    return [c for c in s.table_columns(t) if c not in fk_src]


class _QueryGen:
    def __init__(self, s: Schema, db: MiniDatabase, rng: random.Random):
        self.s, self.db, self.rng = s, db, rng

    def col(self, c: int, alias: str | None = None) -> str:
        name = self.s.columns[c].original
        return f"{alias}.{name}" if alias else name

    def cells(self, c: int) -> list:
        return self.db.tables[self.s.columns[c].table_index][c]

    def literal(self, c: int) -> str:
        v = self.rng.choice(self.cells(c))
        return repr(v) if isinstance(v, int) else f"'{v}'"

    def cols(self, t: int, tag: str | None = None) -> list[int]:
        return [c for c in self.s.table_columns(t) if tag is None or self.s.columns[c].type_tag == tag]

    # ---- predicates over one table (optionally aliased)
    def atom(self, t: int, alias: str | None, depth: int) -> str:
        r = self.rng
        c = r.choice(self.cols(t))
        num = self.s.columns[c].type_tag == NUMBER
        kind = r.random()
        if depth > 0 and kind < 0.12:
            return f"NOT ({self.atom(t, alias, depth - 1)})"
        if depth > 0 and kind < 0.22 and num:
            return f"{self.col(c, alias)} > (SELECT avg({self.col(c)}) FROM {self.s.tables[t].original})"
        if depth > 0 and kind < 0.32:
            other = self._in_source(c)
            if other is not None:
                kw = r.choice(("IN", "NOT IN"))
                u = self.s.columns[other].table_index
                return f"{self.col(c, alias)} {kw} (SELECT {self.col(other)} FROM {self.s.tables[u].original})"
        if num:
            op = r.choice((">", ">=", "<", "<=", "=", "!="))
            return f"{self.col(c, alias)} {op} {self.literal(c)}"
        if kind < 0.6:
            word = r.choice(self.cells(c))
            frag = word[r.randrange(len(word)):][:3] or word
            return f"{self.col(c, alias)} LIKE '%{frag}%'"
        return f"{self.col(c, alias)} {r.choice(('=', '!='))} {self.literal(c)}"

    def _in_source(self, c: int) -> int | None:
        tag = self.s.columns[c].type_tag
        pool = [o for o in range(len(self.s.columns)) if self.s.columns[o].type_tag == tag and o != c]
        return self.rng.choice(pool) if pool else None

    def predicate(self, t: int, alias: str | None = None, depth: int = 2) -> str:
        r = self.rng
        if depth > 0 and r.random() < 0.35:
            conn = r.choice(("AND", "OR"))
            return f"{self.atom(t, alias, depth - 1)} {conn} {self.atom(t, alias, depth - 1)}"
        return self.atom(t, alias, depth)

    # ---- whole queries
    def single(self, allow_order: bool = True) -> str:
        r = self.rng
        s = self.s
        t = r.randrange(len(s.tables))
        tn = s.tables[t].original
        where = f" WHERE {self.predicate(t)}" if r.random() < 0.5 else ""
        shape = r.random()
        if shape < 0.25:
            g = r.choice(self.cols(t))
            nums = self.cols(t, NUMBER)
            agg = "count(*)" if r.random() < 0.5 or not nums else f"{r.choice(('sum', 'avg', 'min', 'max'))}({self.col(r.choice(nums))})"
            sql = f"SELECT {self.col(g)}, {agg} FROM {tn}{where} GROUP BY {self.col(g)}"
            if r.random() < 0.4:
                sql += f" HAVING count(*) >= {r.randint(1, 2)}"
            if allow_order and r.random() < 0.4:
                sql += f" ORDER BY {self.col(g)} {r.choice(('ASC', 'DESC'))}"
            return sql
        if shape < 0.4:
            nums = self.cols(t, NUMBER)
            c = r.choice(nums)
            fn = r.choice(("count", "sum", "avg", "min", "max"))
            return f"SELECT {fn}({self.col(c)}) FROM {tn}{where}"
        if shape < 0.47:
            return f"SELECT count(*) FROM {tn}{where}"
        if shape < 0.55:
            return f"SELECT DISTINCT {self.col(r.choice(self.cols(t)))} FROM {tn}{where}"
        if shape < 0.6:
            return f"SELECT * FROM {tn}{where}"
        picked = r.sample(self.cols(t), min(len(self.cols(t)), r.randint(1, 2)))
        sql = f"SELECT {', '.join(self.col(c) for c in picked)} FROM {tn}{where}"
        if allow_order and r.random() < 0.4:
            key = r.choice(_unique_cols(s, t))
            sql += f" ORDER BY {self.col(key)} {r.choice(('ASC', 'DESC'))}"
            if r.random() < 0.5:
                sql += f" LIMIT {r.randint(1, 3)}"
        return sql

    def join(self) -> str | None:
        r = self.rng
        s = self.s
        if not s.foreign_keys:
            return None
        a, b = r.choice(s.foreign_keys)
        t, u = s.columns[a].table_index, s.columns[b].table_index
        c1, c2 = r.choice(self.cols(t)), r.choice(self.cols(u))
        sql = (f"SELECT T1.{self.col(c1)}, T2.{self.col(c2)} FROM {s.tables[t].original} AS T1 "
               f"JOIN {s.tables[u].original} AS T2 ON T1.{self.col(a)} = T2.{self.col(b)}")
        if r.random() < 0.5:
            sql += f" WHERE {self.predicate(u, 'T2', depth=1)}"
        return sql

    def setop(self) -> str:
        r = self.rng
        s = self.s
        t = r.randrange(len(s.tables))
        c = r.choice(self.cols(t))
        tn = s.tables[t].original
        op = r.choice(("UNION", "INTERSECT", "EXCEPT"))
        return (f"SELECT {self.col(c)} FROM {tn} WHERE {self.predicate(t, depth=1)} {op} "
                f"SELECT {self.col(c)} FROM {tn} WHERE {self.predicate(t, depth=1)}")

    def query(self) -> str:
        x = self.rng.random()
        if x < 0.2:
            sql = self.join()
            if sql is not None:
                return sql
        if x < 0.32:
            return self.setop()
        return self.single()


def random_sql(s: Schema, db: MiniDatabase, rng: random.Random) -> str:
    return _QueryGen(s, db, rng).query()


def random_query(s: Schema, db: MiniDatabase, rng: random.Random) -> tuple[str, SqlTree]:
    sql = random_sql(s, db, rng)
    return sql, parse_sql(sql, s)


def random_case(seed: int) -> tuple[Schema, MiniDatabase, str, SqlTree]:
    """One (schema, database, query) triple, fully determined by ``seed``."""
    rng = random.Random(seed)
    s = random_schema(rng, db_id=f"rand{seed}")
    db = random_database(s, rng)
    sql, tree = random_query(s, db, rng)
    return s, db, sql, tree
