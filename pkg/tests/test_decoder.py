from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import BOOKS_QUESTION, BOOKS_SQL

from relsql import decoder as D
from relsql import numerics as nx
from relsql.checks import TOY_QUESTION, TOY_SCHEMA, TOY_SQL, toy_model
from relsql.decoder import (Beam, DecoderConfig, NoParse, candidate_leaves, compose, contextualize,
                            decode, enumerate_frontier, oracle_scorer, select_final, training_loss,
                            uniform_loss)
from relsql.encoder import EncoderConfig, Vocab, encode
from relsql.model import Model
from relsql.params import ParamStore
from relsql.schema import tokenize
from relsql.sqltree import (BINARY_RULES, UNARY_RULES, Literal, Rule, SemType, apply_rule, column_leaf,
                            deserialize, is_canonical_pair, parse_sql, serialize, table_leaf,
                            try_apply, value_leaf)


def _books_model(K=8, T=6, seed=0):
    schemas_q = tokenize(BOOKS_QUESTION)
    from relsql.data import load_bundled
    schemas = load_bundled()[0]
    s = schemas["culture_company"]
    vocab = Vocab.build([schemas_q], [s])
    enc = EncoderConfig(d_x=16, heads=2, n_layers=1, d_ff=32, dropout=0.0)
    dec = DecoderConfig(K=K, T=T, d_b=16, d_x=16, ctx_heads=2, ff_hidden=16, composer_heads=2,
                        composer_ff=32, dropout=0.0)
    m = Model.create(vocab, enc, dec, seed)
    rng = np.random.default_rng(seed + 7)
    for name in ("dec.w_leaf", "dec.w_u", "dec.w_b"):
        m.params[name].data[...] = rng.normal(0, 1.0, m.params[name].data.shape)
    return m, s


def test_books_leaf_candidates(culture):
    s, _ = culture
    q = tokenize(BOOKS_QUESTION)
    keys = {c.tree.key for c in candidate_leaves(q, s, DecoderConfig())}
    assert {"(col 2)", "(tab 0)", "(val number 1989)"} <= keys
    lit = next(c.tree.payload for c in candidate_leaves(q, s, DecoderConfig())
               if c.kind == "value" and c.span == (q.tokens.index("1989"),))
    assert lit == Literal.number(1989) and lit.tag == "number"


def test_large_k_keeps_every_leaf(culture):
    s, _ = culture
    q = tokenize(BOOKS_QUESTION)
    cfg = DecoderConfig(K=500, T=0)
    beam = D.init_leaves(None, q, s, None, cfg, oracle=lambda t: 0.0)
    assert len(beam) == len(candidate_leaves(q, s, cfg))


def test_contextualize_single_repeated_token():
    ps = ParamStore(0)
    d = 4
    for n in ("W_Q", "W_K", "W_V"):
        ps.matrix(f"dec.ctx.{n}", d, d)
    tok = np.random.default_rng(1).normal(size=d)
    Z = nx.Tensor(np.random.default_rng(2).normal(size=(3, d)))
    out, a = contextualize(Z, nx.Tensor(np.tile(tok, (5, 1))), ps, 2, return_weights=True)
    assert np.allclose(out.data, np.tile(tok @ ps["dec.ctx.W_V"].data, (3, 1)), atol=1e-12)
    assert np.max(np.abs(a.data - 0.2)) <= 1e-12


def test_contextualize_matches_hand_computation():
    ps = ParamStore(0)
    ps.add("dec.ctx.W_Q", np.array([[1.0, 0.0], [0.0, 2.0]]))
    ps.add("dec.ctx.W_K", np.array([[1.0, 1.0], [0.0, 1.0]]))
    ps.add("dec.ctx.W_V", np.array([[0.5, 0.0], [1.0, -1.0]]))
    Z = [[1.0, 0.5], [-1.0, 2.0]]
    X = [[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]]
    out, a = contextualize(nx.Tensor(Z), nx.Tensor(X), ps, 1, return_weights=True)
    for r in range(2):
        q = (Z[r][0], 2 * Z[r][1])
        keys = [(x[0], x[0] + x[1]) for x in X]
        vals = [(0.5 * x[0] + x[1], -x[1]) for x in X]
        e = [(q[0] * k[0] + q[1] * k[1]) / math.sqrt(2) for k in keys]
        w = [math.exp(v) / sum(math.exp(u) for u in e) for v in e]
        assert np.max(np.abs(a.data[0, r] - w)) <= 1e-9
        want = [sum(w[j] * vals[j][c] for j in range(3)) for c in range(2)]
        assert np.max(np.abs(out.data[r] - want)) <= 1e-9
        assert abs(a.data[0, r].sum() - 1.0) <= 1e-9


def test_single_item_frontier_has_keep(culture):
    s, _ = culture
    cands = enumerate_frontier([column_leaf(s, 1)])
    assert cands[0].rule is Rule.KEEP and cands[0].tree == column_leaf(s, 1)


def test_year_and_1989_frontier_contains_gt(culture):
    s, _ = culture
    year, v = column_leaf(s, 1), value_leaf(Literal.number(1989))
    got = {(c.rule, c.i, c.j) for c in enumerate_frontier([year, v])}
    assert (Rule.GT, 0, 1) in got
    assert (Rule.GT, 1, 0) not in got


def _brute_force_frontier(trees):
    on_beam = {t.key for t in trees}
    out = [(Rule.KEEP, i, -1) for i in range(len(trees))]
    for i, t in enumerate(trees):
        for r in UNARY_RULES:
            if r is not Rule.KEEP:
                nt = try_apply(r, t)
                if nt is not None and nt.key not in on_beam:
                    out.append((r, i, -1))
    for i, a in enumerate(trees):
        for j, b in enumerate(trees):
            for r in BINARY_RULES:
                nt = try_apply(r, a, b)
                if nt is not None and nt.key not in on_beam and is_canonical_pair(r, a, b):
                    out.append((r, i, j))
    return out


def test_frontier_matches_brute_force(culture):
    s, _ = culture
    beams = [
        [column_leaf(s, 1), value_leaf(Literal.number(1989)), table_leaf(0)],
        [apply_rule(Rule.GT, column_leaf(s, 1), value_leaf(Literal.number(1))),
         apply_rule(Rule.LT, column_leaf(s, 1), value_leaf(Literal.number(9))), table_leaf(0)],
        [parse_sql("SELECT year FROM book_club", s), column_leaf(s, 1), column_leaf(s, 8)],
    ]
    for trees in beams:
        got = [(c.rule, c.i, c.j) for c in enumerate_frontier(trees)]
        assert sorted(got) == sorted(_brute_force_frontier(trees))
        assert len(got) == len(set(got))


def test_keep_compose_is_bit_exact_and_binary_is_ordered():
    _, _, _, dec_cfg, store = toy_model(0)
    rng = np.random.default_rng(3)
    a = nx.Tensor(rng.normal(size=dec_cfg.d_b))
    b = nx.Tensor(rng.normal(size=dec_cfg.d_b))
    assert compose(Rule.KEEP, a, None, store, dec_cfg) is a
    ab = compose(Rule.GT, a, b, store, dec_cfg).data
    ba = compose(Rule.GT, b, a, store, dec_cfg).data
    assert not np.allclose(ab, ba)


def test_oracle_decode_recovers_books(culture):
    s, _ = culture
    gold = parse_sql(BOOKS_SQL, s)
    got = decode(None, tokenize(BOOKS_QUESTION), s, None, DecoderConfig(K=30, T=9), oracle=oracle_scorer(gold))
    assert got == gold


def test_oracle_decode_recovers_bundled_corpus(bundled):
    schemas, examples, _, _ = bundled
    cfg = DecoderConfig(K=30, T=9)
    for e in examples:
        got = decode(None, tokenize(e.question), schemas[e.db_id], None, cfg, oracle=oracle_scorer(e.tree))
        assert got == e.tree, e.gold_sql


def test_zero_steps_returns_a_table_or_noparse(culture):
    s, _ = culture
    q = tokenize(BOOKS_QUESTION)
    got = decode(None, q, s, None, DecoderConfig(K=30, T=0), oracle=lambda t: float(t.key == "(tab 1)"))
    assert got == table_leaf(1)
    beam = Beam(0, [column_leaf(s, 1)], None, np.zeros(1))
    with pytest.raises(NoParse):
        select_final([beam])


def test_final_selection_prefers_complete_queries(culture):
    s, _ = culture
    full = parse_sql("SELECT year FROM book_club", s)
    last = Beam(3, [table_leaf(0), full], None, np.array([5.0, 1.0]))
    assert select_final([last]) == full


def test_learned_decode_invariants(culture):
    m, s = _books_model()
    q = tokenize(BOOKS_QUESTION)
    enc = encode(q, s, m.params, m.enc_cfg, m.vocab)
    run = D._run(enc, q, s, m.params, m.dec_cfg)
    for prev, nxt in zip(run.beams, run.beams[1:]):
        assert len(nxt) <= m.dec_cfg.K
        assert list(nxt.scores) == sorted(nxt.scores, reverse=True)
        assert np.all(np.isfinite(nxt.vecs.data))
        before = {t.key: i for i, t in enumerate(prev.trees)}
        for r, t in enumerate(nxt.trees):
            assert deserialize(serialize(t), s) == t
            if t.key in before:
                assert np.array_equal(nxt.vecs.data[r], prev.vecs.data[before[t.key]])
            else:
                assert all(c.key in before for c in t.children)
    assert m.predict_sql(BOOKS_QUESTION, s) == m.predict_sql(BOOKS_QUESTION, s)


def test_trace_has_one_record_per_step(culture):
    m, s = _books_model(T=3)
    trace = []
    m.predict(BOOKS_QUESTION, s, trace=trace)
    assert [r["step"] for r in trace] == [0, 1, 2, 3]
    assert all(len(r["beam"]) <= m.dec_cfg.K for r in trace)


def test_unique_gold_candidate_gives_zero_step_loss():
    scores = nx.Tensor(np.array([0.3]), requires_grad=True)
    assert D._step_loss(scores, ["a"], {"a"}, 0).item() == 0.0


def test_initial_loss_equals_uniform_frontier_entropy(monkeypatch):
    q, vocab, enc_cfg, dec_cfg, store = toy_model(0)
    for name in ("dec.w_leaf", "dec.w_u", "dec.w_b"):
        store[name].data[...] = 0.0
    sizes, golds = [], []
    real = D._step_loss

    def spy(scores, keys, gold_keys, step):
        sizes.append(len(keys))
        golds.append(len(gold_keys))
        return real(scores, keys, gold_keys, step)

    monkeypatch.setattr(D, "_step_loss", spy)
    enc = encode(q, TOY_SCHEMA, store, enc_cfg, vocab)
    loss = training_loss(enc, q, TOY_SCHEMA, store, dec_cfg, parse_sql(TOY_SQL, TOY_SCHEMA), training=False)
    assert len(sizes) == dec_cfg.T + 1
    assert abs(loss.item() - uniform_loss(sizes, golds)) <= 1e-9


def test_training_loss_rejects_tall_gold(culture):
    m, s = _books_model(T=2)
    gold = parse_sql(BOOKS_SQL, s)
    q = tokenize(BOOKS_QUESTION)
    enc = encode(q, s, m.params, m.enc_cfg, m.vocab)
    with pytest.raises(ValueError):
        training_loss(enc, q, s, m.params, m.dec_cfg, gold)


def test_training_loss_backpropagates_to_every_decoder_group():
    q, vocab, enc_cfg, dec_cfg, store = toy_model(0)
    enc = encode(q, TOY_SCHEMA, store, enc_cfg, vocab)
    loss = training_loss(enc, q, TOY_SCHEMA, store, dec_cfg, parse_sql(TOY_SQL, TOY_SCHEMA), training=False)
    loss.backward()
    for name in ("dec.w_u", "dec.w_b", "dec.w_leaf", "dec.rule_emb", "dec.ctx.W_Q", "enc.tok_emb"):
        assert np.any(store.grad_of(name)), name


def test_decoder_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(K=0)
    with pytest.raises(ValueError):
        DecoderConfig(d_b=10, ctx_heads=3)
    assert DecoderConfig(K=4).frontier_cap == 10 * 4 * (len(UNARY_RULES) + len(BINARY_RULES))


def test_toy_question_has_expected_tokens():
    assert tokenize(TOY_QUESTION).tokens == ("singer", "name", "list")
    assert SemType.R is parse_sql(TOY_SQL, TOY_SCHEMA).sem


def test_loss_decreases_under_gradient_descent():
    q, vocab, enc_cfg, dec_cfg, store = toy_model(0)
    gold = parse_sql(TOY_SQL, TOY_SCHEMA)
    losses = []
    for _ in range(50):
        store.zero_grad()
        loss = training_loss(encode(q, TOY_SCHEMA, store, enc_cfg, vocab), q, TOY_SCHEMA, store, dec_cfg,
                             gold, training=False)
        loss.backward()
        losses.append(loss.item())
        for _, p in store.items():
            if p.grad is not None:
                p.data -= 0.01 * p.grad
    # a plateau is a run of steps that fail to lower the loss; at most 5 allowed
    run = longest = 0
    for a, b in zip(losses, losses[1:]):
        run = run + 1 if b >= a else 0
        longest = max(longest, run)
    assert longest <= 5 and losses[-1] < losses[0] / 2
