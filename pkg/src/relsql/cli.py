"""Command-line entry point: link, train, parse, eval, gradcheck, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import BUNDLED, Example, load_dataset, write_examples
from .decoder import NoParse
from .evaluation import evaluate_corpus
from .linking import build_relation_matrix
from .schema import SchemaError, tokenize
from .sqltree import serialize

DEFAULT_CONFIG = BUNDLED / "config.yaml"
log = logging.getLogger("relsql")


def _data_args(p: argparse.ArgumentParser, examples: bool = True) -> None:
    p.add_argument("--tables", default=str(BUNDLED / "tables.json"), help="Spider tables.json")
    p.add_argument("--db-dir", default=str(BUNDLED / "databases"),
                   help="directory of <db_id>.json fixtures (cell values, execution)")
    if examples:
        p.add_argument("--examples", default=str(BUNDLED / "examples.json"), help="Spider-format examples")


def _schemas(args):
    """Schemas with cell values attached when fixtures exist, plus the fixtures."""
    schemas, _, dbs, _ = load_dataset(args.tables, None, args.db_dir)
    return schemas, dbs


# ---------------------------------------------------------------- link

def cmd_link(args) -> int:
    schemas, _ = _schemas(args)
    if args.db not in schemas:
        print(f"error: unknown db_id {args.db!r}", file=sys.stderr)
        return 1
    m = build_relation_matrix(tokenize(args.question), schemas[args.db])
    for src, dst, label in m.rows():
        print(f"{src}\t{dst}\t{label.value}")
    return 0


# ---------------------------------------------------------------- train

def _overrides(args) -> dict:
    keys = ("epochs", "batch_size", "grad_accum", "lr_encoder", "lr_decoder", "max_steps", "seed",
            "K", "T", "dropout")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def cmd_train(args) -> int:
    from .synth import generate_synthetic
    from .train import TrainingDiverged, load_config, train

    cfg = load_config(args.config, args.profile, _overrides(args))
    schemas, examples, dbs, _ = load_dataset(args.tables, args.examples, args.db_dir)
    if args.synth:
        pool = {k: (schemas[k], dbs[k]) for k in sorted(dbs)}
        examples = generate_synthetic(cfg.seed, args.synth, pool)
    try:
        result = train(cfg, examples, schemas, args.out, resume=args.resume)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"steps": result.steps, "epochs": result.epochs_run, "best_em": result.best_em,
                      "train_em": result.last_train_em}, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parse

def cmd_parse(args) -> int:
    from .decoder import complete_for_emission
    from .model import Model
    from .sqltree import emit_sql

    schemas, _ = _schemas(args)
    if args.db not in schemas:
        print(f"error: unknown db_id {args.db!r}", file=sys.stderr)
        return 1
    model, _, _ = Model.load(args.checkpoint)
    trace: list | None = [] if args.trace else None
    try:
        tree = model.predict(args.question, schemas[args.db], trace=trace)
        sql = emit_sql(complete_for_emission(tree), schemas[args.db])
    except NoParse as exc:
        print(f"no parse: {exc}", file=sys.stderr)
        return 2
    finally:
        if trace is not None:
            Path(args.trace).write_text("".join(json.dumps(r) + "\n" for r in trace))
    print(sql)
    if args.dump_trees:
        print(serialize(tree), file=sys.stderr)
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    schemas, examples, dbs, _ = load_dataset(args.tables, args.examples, args.db_dir)
    if args.predictions:
        lines = Path(args.predictions).read_text().splitlines()
        if len(lines) != len(examples):
            print(f"error: {len(lines)} predictions for {len(examples)} examples", file=sys.stderr)
            return 1
        preds = [ln.strip() for ln in lines]
    else:
        from .model import Model

        model, _, _ = Model.load(args.checkpoint)

        def preds(ex: Example) -> str:
            try:
                return model.predict_sql(ex.question, schemas[ex.db_id])
            except NoParse:
                return ""
    rep = evaluate_corpus(preds, examples, schemas, dbs)
    print(rep.table())
    doc = rep.to_json()
    if args.dump_trees:
        for e, row in zip(examples, doc["examples"]):
            row["gold_tree"] = serialize(e.tree)
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if args.write_predictions:
        Path(args.write_predictions).write_text("".join((e.pred_sql or "") + "\n" for e in rep.examples))
    return 0


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    from .checks import gradient_report

    worst = 0.0
    for name, err in gradient_report(seed=args.seed).items():
        worst = max(worst, err)
        print(f"{name}\t{err:.3e}")
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'} at tolerance {args.tol:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from .synth import generate_synthetic

    schemas, dbs = _schemas(args)
    if not dbs:
        print("error: synthetic generation needs database fixtures (--db-dir)", file=sys.stderr)
        return 1
    pool = {k: (schemas[k], dbs[k]) for k in sorted(dbs)}
    examples = generate_synthetic(args.seed, args.n, pool)
    if args.dump_trees:
        doc = [{"db_id": e.db_id, "question": e.question, "query": e.gold_sql, "tree": serialize(e.tree)}
               for e in examples]
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    else:
        write_examples(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relsql", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("link", help="print the relation matrix for a question")
    _data_args(p, examples=False)
    p.add_argument("--db", required=True)
    p.add_argument("--question", required=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    p.add_argument("--config", default=str(DEFAULT_CONFIG))
    p.add_argument("--profile", default=None, help="named override block in the config file")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p.add_argument("--synth", type=int, default=0, help="train on N synthetic examples instead")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    for flag, ty in (("epochs", int), ("batch-size", int), ("grad-accum", int), ("lr-encoder", float),
                     ("lr-decoder", float), ("max-steps", int), ("seed", int), ("K", int), ("T", int),
                     ("dropout", float)):
        p.add_argument(f"--{flag}", type=ty, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="translate one question to SQL")
    _data_args(p, examples=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--trace", default=None, help="write per-step beams as JSON lines to this file")
    p.add_argument("--dump-trees", action="store_true", help="print the tree s-expression to stderr")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predictions (or a checkpoint) against gold SQL")
    _data_args(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="file with one SQL per line")
    src.add_argument("--checkpoint", help="predict with this model")
    p.add_argument("--json", default=None, help="write the machine-readable report here")
    p.add_argument("--write-predictions", default=None)
    p.add_argument("--dump-trees", action="store_true", help="include gold trees in the JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model's gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _data_args(p, examples=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-trees", action="store_true", help="add each gold tree's s-expression")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SchemaError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:  # output piped into head and friends
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
