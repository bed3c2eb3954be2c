from __future__ import annotations

import json

import pytest
import yaml
from conftest import BOOKS_QUESTION, BOOKS_SQL

from relsql.cli import DEFAULT_CONFIG, main
from relsql.data import BUNDLED, load_dataset
from relsql.schema import SchemaError
from relsql.synth import COVERED_RULES, generate_synthetic, rule_coverage
from relsql.train import TrainConfig, load_config, train

# small dims keep the loop tests quick; the overfit criteria use the desk profile
TINY = dict(epochs=3, batch_size=2, grad_accum=1, lr_encoder=3e-3, lr_decoder=3e-3, d_x=16, heads=2,
            n_layers=1, d_ff=32, dropout=0.1, d_b=16, ctx_heads=2, ff_hidden=16, composer_heads=2,
            composer_ff=32, K=8, T=6, heldout_fraction=0.25)


def _pool(bundled):
    schemas, _, dbs, _ = bundled
    return {k: (schemas[k], dbs[k]) for k in sorted(dbs)}


def test_bundled_fixture_loads(bundled):
    schemas, examples, dbs, report = bundled
    assert len(schemas) == len(dbs) == 3
    assert report.excluded == 0 and report.loaded == len(examples) > 0


def test_empty_and_unknown_db_examples(tmp_path, caplog):
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    _, ex, _, rep = load_dataset(BUNDLED / "tables.json", empty)
    assert ex == [] and rep.excluded == 0
    assert "no examples" in caplog.text
    odd = tmp_path / "odd.json"
    odd.write_text(json.dumps([
        {"db_id": "nowhere", "question": "q", "query": "SELECT a FROM b"},
        {"db_id": "culture_company", "question": "q", "query": "SELECT year + 1 FROM movie"},
        {"db_id": "culture_company", "question": "q", "query": "SELECT year FROM movie"}]))
    _, ex, _, rep = load_dataset(BUNDLED / "tables.json", odd)
    assert len(ex) == 1 and rep.unknown_db == [0] and [i for i, _ in rep.unparseable] == [1]


def test_malformed_examples_file_names_context(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('[{"db_id": "x", "question": "q"}]')
    with pytest.raises(SchemaError, match="example 0 lacks field 'query'"):
        load_dataset(BUNDLED / "tables.json", bad)
    bad.write_text("[\n{,}\n]")
    with pytest.raises(SchemaError, match="line 2"):
        load_dataset(BUNDLED / "tables.json", bad)


def test_synthetic_corpus_is_deterministic_and_covering(bundled):
    pool = _pool(bundled)
    a = generate_synthetic(0, 200, pool)
    b = generate_synthetic(0, 200, pool)
    assert [(e.question, e.gold_sql) for e in a] == [(e.question, e.gold_sql) for e in b]
    assert [e.gold_sql for e in generate_synthetic(1, 200, pool)] != [e.gold_sql for e in a]
    assert all(e.tree.height <= 9 for e in a)
    cov = rule_coverage([e.tree for e in a])
    assert [r.value for r in COVERED_RULES if cov[r] == 0] == []
    for start in range(0, 200, 100):
        cov = rule_coverage([e.tree for e in a[start:start + 100]])
        assert all(cov[r] >= 1 for r in COVERED_RULES)
    with pytest.raises(ValueError):
        generate_synthetic(0, 0, pool)


def test_synthetic_questions_mention_schema_names(bundled):
    from relsql.decoder import DecoderConfig, gold_leaves_reachable
    from relsql.schema import tokenize

    schemas = bundled[0]
    ex = generate_synthetic(3, 60, _pool(bundled))
    cfg = DecoderConfig(K=10, T=9)
    assert all(gold_leaves_reachable(tokenize(e.question), schemas[e.db_id], cfg, e.tree) for e in ex)


def test_config_defaults_match_published_regime():
    cfg = load_config(DEFAULT_CONFIG)
    assert (cfg.K, cfg.T, cfg.dropout, cfg.lr_encoder, cfg.lr_decoder) == (30, 9, 0.2, 3e-6, 1.86e-4)
    assert (cfg.epochs, cfg.batch_size, cfg.grad_accum) == (520, 12, 5)
    assert (cfg.composer_layers, cfg.composer_heads, cfg.composer_ff, cfg.d_b) == (1, 8, 256, 256)
    assert TrainConfig() == cfg


def test_config_profile_and_overrides():
    desk = load_config(DEFAULT_CONFIG, "desk", {"seed": 4})
    assert desk.seed == 4 and desk.max_steps == 1000
    with pytest.raises(KeyError):
        load_config(DEFAULT_CONFIG, "nope")
    doc = yaml.safe_load(DEFAULT_CONFIG.read_text())
    assert set(doc["profiles"]["desk"]) <= set(TrainConfig.__dataclass_fields__)


def test_train_writes_metrics_and_checkpoints(tmp_path, bundled):
    schemas, examples, _, _ = bundled
    res = train(TrainConfig(**TINY), examples[:8], schemas, tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == res.epochs_run == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "step", "loss", "train_em", "heldout_em"}
    assert rec["heldout_em"] is not None
    assert (tmp_path / "best.ckpt.json").exists() and (tmp_path / "last.ckpt.json").exists()


def test_resume_reproduces_next_epoch(tmp_path, bundled):
    schemas, examples, _, _ = bundled
    ex = examples[:8]
    full = train(TrainConfig(**TINY), ex, schemas, tmp_path / "full")
    train(TrainConfig(**{**TINY, "epochs": 1}), ex, schemas, tmp_path / "part")
    resumed = train(TrainConfig(**TINY), ex, schemas, tmp_path / "part",
                    resume=tmp_path / "part" / "last.ckpt.json")
    assert resumed.history[0]["step"] == full.history[1]["step"]
    assert abs(resumed.history[0]["loss"] - full.history[1]["loss"]) <= 1e-9
    a = (tmp_path / "full" / "metrics.jsonl").read_text()
    b = (tmp_path / "part" / "metrics.jsonl").read_text()
    assert a == b


def test_divergence_aborts(tmp_path, bundled, monkeypatch):
    import relsql.train as T

    schemas, examples, _, _ = bundled
    monkeypatch.setattr(T, "train_step", lambda *a, **k: float("nan"))
    with pytest.raises(T.TrainingDiverged, match="last good checkpoint"):
        train(TrainConfig(**TINY), examples[:4], schemas, tmp_path)


def test_cli_link(capsys):
    assert main(["link", "--db", "culture_company", "--question", BOOKS_QUESTION]) == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.splitlines()]
    assert ["Q9:year", "C1:book_club.year", "QC-EXACT-MATCH"] in rows
    assert all(len(r) == 3 for r in rows)


def test_cli_unknown_db_exits_nonzero(capsys, tmp_path):
    assert main(["link", "--db", "nope", "--question", "x"]) == 1
    assert "unknown db_id" in capsys.readouterr().err


def test_cli_eval_on_gold_predictions(tmp_path, capsys, bundled):
    examples = bundled[1]
    preds = tmp_path / "preds.txt"
    preds.write_text("".join(e.gold_sql + "\n" for e in examples))
    report = tmp_path / "report.json"
    assert main(["eval", "--predictions", str(preds), "--json", str(report), "--dump-trees"]) == 0
    doc = json.loads(report.read_text())
    assert doc["em_rate"] == doc["exec_rate"] == 1.0
    assert all("gold_tree" in r for r in doc["examples"])
    assert capsys.readouterr().out.splitlines()[-1].split()[-2:] == ["1.000", "1.000"]
    preds.write_text("SELECT 1\n")
    assert main(["eval", "--predictions", str(preds)]) == 1


def test_cli_synth(tmp_path, capsys):
    out = tmp_path / "syn.json"
    assert main(["synth", "--seed", "2", "--n", "30", "--out", str(out), "--dump-trees"]) == 0
    doc = json.loads(out.read_text())
    assert len(doc) == 30 and all({"db_id", "question", "query", "tree"} <= set(r) for r in doc)


def test_cli_train_parse_and_eval(tmp_path, capsys):
    ex = tmp_path / "one.json"
    ex.write_text(json.dumps([{"db_id": "culture_company", "question": BOOKS_QUESTION, "query": BOOKS_SQL}]))
    out = tmp_path / "run"
    args = ["train", "--examples", str(ex), "--out", str(out), "--profile", "desk", "--max-steps", "40"]
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["train_em"] == 1.0
    ck = str(out / "best.ckpt.json")
    parse = ["parse", "--checkpoint", ck, "--db", "culture_company", "--question", BOOKS_QUESTION,
             "--trace", str(tmp_path / "trace.jsonl"), "--dump-trees"]
    assert main(parse) == 0
    first = capsys.readouterr()
    assert first.out.strip() == BOOKS_SQL
    assert first.err.strip().startswith("(PROJECT")
    assert main(parse) == 0
    assert capsys.readouterr().out == first.out
    records = [json.loads(ln) for ln in (tmp_path / "trace.jsonl").read_text().splitlines()]
    assert records[0]["step"] == 0 and records[-1]["step"] == 6
    assert main(["parse", "--checkpoint", ck, "--db", "nope", "--question", "x"]) == 1
    assert main(["eval", "--examples", str(ex), "--checkpoint", ck]) == 0
    assert capsys.readouterr().out.splitlines()[-1].split()[-2:] == ["1.000", "1.000"]


def test_cli_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    assert "ok at tolerance" in capsys.readouterr().out
