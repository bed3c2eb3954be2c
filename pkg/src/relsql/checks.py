"""Finite-difference gradient checks on small fixtures (shared by tests and the CLI)."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .decoder import (DecoderConfig, candidate_leaves, compose_batch, contextualize, declare_decoder,
                      enumerate_frontier, leaf_vectors, score_frontier, training_loss)
from .encoder import EncoderConfig, Vocab, declare_encoder, encode, rat_layer
from .linking import RELATIONS
from .params import ParamStore, grad_check
from .schema import Column, Schema, Table, tokenize
from .sqltree import parse_sql

TOY_SCHEMA = Schema("toy", (Table(("singer",), "singer"),),
                    (Column(("name",), 0, "text", False, "name"), Column(("age",), 0, "number", False, "age")))
TOY_QUESTION = "singer name list"
TOY_SQL = "SELECT name FROM singer"
# central-difference step; at 1e-6 round-off on a loss near 25 swamps gradients near 1e-6
EPS = 1e-5


def toy_model(seed: int = 0, d: int = 8, heads: int = 2):
    q = tokenize(TOY_QUESTION)
    vocab = Vocab.build([q], [TOY_SCHEMA])
    enc_cfg = EncoderConfig(d_x=d, heads=heads, n_layers=1, d_ff=2 * d, dropout=0.0, vocab_size=len(vocab))
    dec_cfg = DecoderConfig(K=8, T=2, d_b=d, d_x=d, ctx_heads=heads, ff_hidden=d, composer_layers=1,
                            composer_heads=heads, composer_ff=2 * d, dropout=0.0)
    store = ParamStore(seed)
    declare_encoder(store, enc_cfg)
    declare_decoder(store, dec_cfg)
    # score heads start at zero; randomise them so every path carries gradient
    rng = np.random.default_rng(seed + 1)
    for name in ("dec.w_leaf", "dec.w_u", "dec.w_b"):
        store[name].data[...] = rng.normal(0, 0.5, store[name].data.shape)
    # zero biases put ReLUs fed by all-zero rows exactly on their kink, where
    # central differences and backprop legitimately disagree
    for name in store.names():
        if name.endswith(".b") and ".ln" not in name:
            store[name].data[...] = rng.normal(0, 0.1, store[name].data.shape)
    return q, vocab, enc_cfg, dec_cfg, store


def check_rat_layer(seed: int = 0, n: int = 5, d: int = 8, heads: int = 2) -> float:
    store = ParamStore(seed)
    declare_encoder(store, EncoderConfig(d_x=d, heads=heads, n_layers=1, d_ff=2 * d, dropout=0.0))
    rng = np.random.default_rng(seed)
    x = store.add("x", rng.normal(size=(n, d)))
    R = rng.integers(0, len(RELATIONS), size=(n, n))
    w = rng.normal(size=(n, d))
    names = [k for k in store.names() if k.startswith("enc.L0")]

    def f():
        return nx.sum(nx.mul(rat_layer(x, R, store, 0, heads), nx.Tensor(w)))
    return grad_check(f, store, eps=EPS, names=names + ["x"])


def check_compose_and_score(seed: int = 0) -> float:
    q, vocab, enc_cfg, dec_cfg, store = toy_model(seed)
    leaves = candidate_leaves(q, TOY_SCHEMA, dec_cfg)
    trees = [c.tree for c in leaves]
    cands = enumerate_frontier(trees, None, TOY_SCHEMA.db_id)
    rng = np.random.default_rng(seed)
    w = rng.normal(size=len(cands))
    # fixed random read-out; a plain sum of squares is constant after layer norm
    v = rng.normal(size=dec_cfg.d_b)
    binary = [c for c in cands if c.j >= 0][:6]
    unary = [c for c in cands if c.j < 0 and c.rule.name != "KEEP"][:6]

    def f():
        e = encode(q, TOY_SCHEMA, store, enc_cfg, vocab)
        Z = leaf_vectors(leaves, e, store)
        Zc = contextualize(Z, e.token_reps, store, dec_cfg.ctx_heads)
        total = nx.sum(nx.mul(score_frontier(cands, Z, Zc, store), nx.Tensor(w)))
        if binary:
            zb = compose_batch([c.rule for c in binary], nx.take(Z, [c.i for c in binary]),
                               nx.take(Z, [c.j for c in binary]), store, dec_cfg)
            total = nx.add(total, nx.sum(nx.matmul(zb, nx.Tensor(v))))
        if unary:
            zu = compose_batch([c.rule for c in unary], nx.take(Z, [c.i for c in unary]), None,
                               store, dec_cfg)
            total = nx.add(total, nx.sum(nx.matmul(zu, nx.Tensor(v))))
        return total
    return grad_check(f, store, eps=EPS)


def check_training_loss(seed: int = 0) -> float:
    q, vocab, enc_cfg, dec_cfg, store = toy_model(seed)
    gold = parse_sql(TOY_SQL, TOY_SCHEMA)

    def f():
        enc = encode(q, TOY_SCHEMA, store, enc_cfg, vocab)
        return training_loss(enc, q, TOY_SCHEMA, store, dec_cfg, gold, training=False)
    return grad_check(f, store, eps=EPS)


def gradient_report(seed: int = 0) -> dict[str, float]:
    """Max relative error of backprop against central differences, per fixture."""
    return {
        "rat_layer": check_rat_layer(seed),
        "compose_and_score": check_compose_and_score(seed),
        "training_loss": check_training_loss(seed),
    }
