from __future__ import annotations

import pytest
from conftest import BOOKS_SQL, differential_mismatches

from relsql.data import Example
from relsql.evaluation import (ExecError, MiniDatabase, decompose, evaluate_corpus, exact_set_match,
                               execute, execution_match)
from relsql.evaluation.metrics import GoldExecError
from relsql.sqltree import Literal, Rule, apply_rule, column_leaf, parse_sql, table_leaf, value_leaf


def _t(sql, s):
    return parse_sql(sql, s)


def test_em_identity_values_and_commutativity(culture):
    s, _ = culture
    a = _t(BOOKS_SQL, s)
    assert exact_set_match(a, a)
    assert exact_set_match(_t("SELECT category FROM book_club WHERE year > 1989", s),
                           _t("SELECT category FROM book_club WHERE year > 2000", s))
    assert exact_set_match(
        _t("SELECT title FROM movie WHERE year > 1 AND director = 'x'", s),
        _t("SELECT title FROM movie WHERE director = 'y' AND year > 2", s))


def test_em_keeps_structure(culture):
    s, _ = culture
    base = _t("SELECT title FROM movie WHERE year > 1", s)
    for other in ("SELECT title FROM movie WHERE year < 1",
                  "SELECT title FROM movie WHERE budget_million > 1",
                  "SELECT director FROM movie WHERE year > 1",
                  "SELECT title FROM movie"):
        assert not exact_set_match(_t(other, s), base)
    asc = _t("SELECT title FROM movie ORDER BY year ASC", s)
    desc = _t("SELECT title FROM movie ORDER BY year DESC", s)
    assert not exact_set_match(asc, desc)
    assert exact_set_match(_t("SELECT title, year FROM movie", s), _t("SELECT year, title FROM movie", s))


def test_em_is_symmetric_and_handles_missing_prediction(bundled):
    schemas, examples, _, _ = bundled
    trees = [e.tree for e in examples if e.db_id == "concert_singer"]
    for a in trees:
        assert not exact_set_match(None, a)
        for b in trees:
            assert exact_set_match(a, b) == exact_set_match(b, a)


def test_decomposition_is_deterministic(culture):
    s, _ = culture
    assert decompose(_t(BOOKS_SQL, s)) == decompose(_t(BOOKS_SQL, s))
    d = decompose(_t(BOOKS_SQL, s))
    assert d.group_cols == frozenset({2}) and not d.limit_present


def test_execute_books_on_fixture(culture):
    s, db = culture
    res = execute(_t(BOOKS_SQL, s), db)
    assert sorted(res.rows) == [("Fiction",), ("Mystery",)]


def test_execute_empty_table_and_count(culture):
    s, db = culture
    empty = MiniDatabase(s, [{c: [] for c in s.table_columns(t)} for t in range(len(s.tables))])
    assert execute(_t("SELECT title FROM movie", s), empty).rows == []
    n = len(db.rows(0))
    assert execute(_t("SELECT count(*) FROM book_club", s), db).rows == [(n,)]


def _mistyped(s):
    # a tree typed against a stale schema: title is text but claims to be a number
    title = column_leaf(None, s.columns_named("title")[0], tag="number", table=1)
    pred = apply_rule(Rule.GT, title, value_leaf(Literal.number(3)))
    return apply_rule(Rule.PROJECT, title, apply_rule(Rule.SELECTION, pred, table_leaf(1)))


def test_execute_type_mismatch_raises(culture):
    s, db = culture
    with pytest.raises(ExecError):
        execute(_mistyped(s), db)


def test_execution_match_cases(culture):
    s, db = culture
    gold = _t("SELECT title FROM movie WHERE year > 1995", s)
    assert execution_match(gold, gold, db)
    same = _t("SELECT title FROM movie WHERE NOT (year <= 1995)", s)
    assert execution_match(same, gold, db)
    asc = _t("SELECT title FROM movie ORDER BY gross_worldwide ASC", s)
    desc = _t("SELECT title FROM movie ORDER BY gross_worldwide DESC", s)
    assert not execution_match(desc, asc, db)
    broken = _mistyped(s)
    assert not execution_match(broken, gold, db)
    with pytest.raises(GoldExecError):
        execution_match(gold, broken, db)


def test_em_equal_pair_can_differ_in_execution(culture):
    s, db = culture
    a = _t("SELECT title FROM movie WHERE year > 1990", s)
    b = _t("SELECT title FROM movie WHERE year > 3000", s)
    assert exact_set_match(a, b)
    assert not execution_match(a, b, db)


def test_executor_agrees_with_sqlite():
    assert differential_mismatches(range(200)) == []


def _corpus(bundled):
    schemas, examples, dbs, _ = bundled
    return schemas, examples[:10], dbs


def test_corpus_rates(bundled):
    schemas, ex, dbs = _corpus(bundled)
    golds = [e.gold_sql for e in ex]
    rep = evaluate_corpus(golds, ex, schemas, dbs)
    assert rep.em_rate == rep.exec_rate == 1.0
    rep = evaluate_corpus([""] * len(ex), ex, schemas, dbs)
    assert rep.em_rate == rep.exec_rate == 0.0
    mixed = golds[:7] + ["SELECT nonsense", None, golds[0]]
    rep = evaluate_corpus(mixed, ex, schemas, dbs)
    assert rep.em_rate == pytest.approx(0.7, abs=1e-12)
    assert "unparseable" in rep.examples[7].note


def test_report_buckets_partition_examples(bundled):
    schemas, examples, dbs, _ = bundled
    rep = evaluate_corpus([e.gold_sql for e in examples], examples, schemas, dbs)
    buckets = rep.by_bucket()
    assert sum(b["count"] for b in buckets.values()) == len(examples)
    doc = rep.to_json()
    assert doc["count"] == len(examples) and len(doc["examples"]) == len(examples)
    assert rep.table().splitlines()[-1].split()[:2] == ["all", str(len(examples))]


def test_callable_predictions(bundled):
    schemas, ex, dbs = _corpus(bundled)
    rep = evaluate_corpus(lambda e: e.gold_sql, ex, schemas, dbs)
    assert rep.em_rate == 1.0
    assert isinstance(ex[0], Example)
