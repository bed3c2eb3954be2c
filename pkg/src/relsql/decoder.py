"""Semi-autoregressive bottom-up beam decoder and its teacher-forced objective.

Step 0 scores candidate leaves (columns, ``*``, tables, literals found in the
question or matched against cell values).  Every later step contextualizes
the beam against the question tokens, scores the type-valid one-rule
extensions of the beam (KEEP included), keeps the top K and composes vectors
for the survivors only.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .encoder import EncoderOutput
from .nn import (attention, check_finite, declare_layer_norm, declare_linear, layer_norm, linear,
                 merge_heads, split_heads)
from .numerics import Tensor
from .params import ParamStore
from .schema import NUMBER, TEXT, QuestionTokens, Schema, tokenize
from .sqltree import (BINARY_RULES, OPERATOR_RULES, UNARY_RULES, Literal, Rule, SemType, SqlTree,
                      column_leaf, decompose_by_height, gold_frontier, is_canonical_pair, star_leaf,
                      table_leaf, try_apply, value_leaf)
from .sqltree.grammar import SIGNATURES

NUMBER_WORDS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
                "eight": 8, "nine": 9, "ten": 10}
_NUMBER_TOKEN = re.compile(r"[0-9]+(?:\.[0-9]+)?")
_QUOTED = re.compile(r"\"([^\"]+)\"|(?<![\w])'([^']+)'(?![\w])")

UNARY_INDEX = {r: i for i, r in enumerate(UNARY_RULES)}
BINARY_INDEX = {r: i for i, r in enumerate(BINARY_RULES)}
RULE_INDEX = {r: i for i, r in enumerate(OPERATOR_RULES)}


class NoParse(RuntimeError):
    """No relation-typed tree appeared on any beam."""


class DegenerateSchema(ValueError):
    """The question/schema pair yields no leaf candidates at all."""


@dataclass
class DecoderConfig:
    K: int = 30
    T: int = 9
    d_b: int = 256
    d_x: int = 64
    ctx_heads: int = 8
    ff_hidden: int = 256
    composer_layers: int = 1
    composer_heads: int = 8
    composer_ff: int = 256
    dropout: float = 0.2
    frontier_cap: int | None = None  # default 10 * K * number of operator rules
    number_words: bool = True
    like_variants: bool = True
    default_numbers: tuple = (1,)

    def __post_init__(self):
        for k in ("K", "d_b", "d_x", "ctx_heads", "ff_hidden", "composer_layers", "composer_heads",
                  "composer_ff"):
            if getattr(self, k) <= 0:
                raise ValueError(f"decoder {k} must be positive")
        if self.T < 0:
            raise ValueError("decoder T must be non-negative")
        if self.d_b % self.ctx_heads or self.d_b % self.composer_heads:
            raise ValueError(f"d_b={self.d_b} must be divisible by the attention head counts")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.default_numbers = tuple(self.default_numbers)
        if self.frontier_cap is None:
            self.frontier_cap = 10 * self.K * len(OPERATOR_RULES)


def declare_decoder(store: ParamStore, cfg: DecoderConfig) -> None:
    d, h = cfg.d_b, cfg.ff_hidden
    for kind in ("col", "tab", "val"):
        declare_linear(store, f"dec.leaf_{kind}", cfg.d_x, d)
    store.embedding("dec.star", 1, d)
    store.embedding("dec.pattern", 1, d)
    store.embedding("dec.const", max(1, len(cfg.default_numbers)), d)
    store.zeros("dec.w_leaf", d)
    store.matrix("dec.ctx.W_Q", d, d)
    store.matrix("dec.ctx.W_K", cfg.d_x, d)
    store.matrix("dec.ctx.W_V", cfg.d_x, d)
    declare_linear(store, "dec.ffu.1", 2 * d, h)
    declare_linear(store, "dec.ffu.2", h, h)
    store.zeros("dec.w_u", h, len(UNARY_RULES))
    declare_linear(store, "dec.ffb.1", 4 * d, h)
    declare_linear(store, "dec.ffb.2", h, h)
    store.zeros("dec.w_b", h, len(BINARY_RULES))
    store.embedding("dec.rule_emb", len(OPERATOR_RULES), d)
    store.embedding("dec.pos_emb", 3, d)
    for l in range(cfg.composer_layers):
        p = f"dec.comp{l}"
        for w in ("W_Q", "W_K", "W_V", "W_O"):
            store.matrix(f"{p}.{w}", d, d)
        declare_layer_norm(store, f"{p}.ln1", d)
        declare_linear(store, f"{p}.ff1", d, cfg.composer_ff)
        declare_linear(store, f"{p}.ff2", cfg.composer_ff, d)
        declare_layer_norm(store, f"{p}.ln2", d)


# ---------------------------------------------------------------- leaves

@dataclass(frozen=True)
class LeafCandidate:
    tree: SqlTree
    kind: str  # column | star | table | value | const
    index: int = -1  # column/table index, or position in default_numbers
    span: tuple[int, ...] = ()
    pattern: bool = False


def _span_of(q: QuestionTokens, start: int, end: int) -> tuple[int, ...]:
    return tuple(i for i, (a, b) in enumerate(q.spans) if a >= start and b <= end)


def _find_tokens(hay: tuple[str, ...], needle: tuple[str, ...]) -> int:
    n = len(needle)
    for i in range(len(hay) - n + 1):
        if hay[i:i + n] == needle:
            return i
    return -1


def _cell_literal(v: str, tag: str) -> Literal | None:
    if tag == NUMBER:
        try:
            return Literal.number(v.strip())
        except ValueError:
            return None
    return Literal.text(v)


def extract_values(q: QuestionTokens, s: Schema, cfg: DecoderConfig) -> list[tuple[Literal, tuple, bool]]:
    """Literal candidates as (literal, token span, is LIKE pattern), first occurrence wins."""
    found: list[tuple[Literal, tuple, bool]] = []

    def add(lit, span, text_pattern=True):
        found.append((lit, span, False))
        if cfg.like_variants and text_pattern and lit.tag == TEXT:
            found.append((Literal.text(f"%{lit.value}%"), span, True))

    for m in _QUOTED.finditer(q.raw):
        g = 1 if m.group(1) is not None else 2
        span = _span_of(q, m.start(g), m.end(g))
        if span:
            add(Literal.text(m.group(g)), span)
    for i, tok in enumerate(q.tokens):
        if _NUMBER_TOKEN.fullmatch(tok):
            add(Literal.number(tok), (i,))
        elif cfg.number_words and tok in NUMBER_WORDS:
            add(Literal.number(NUMBER_WORDS[tok]), (i,))
    if s.cell_values:
        for ci in sorted(s.cell_values):
            tag = s.columns[ci].type_tag
            for v in s.cell_values[ci]:
                if not v.strip():
                    continue
                toks = tokenize(v).tokens
                at = _find_tokens(q.tokens, toks)
                lit = _cell_literal(v, tag)
                if at >= 0 and lit is not None:
                    add(lit, tuple(range(at, at + len(toks))))
    seen, out = set(), []
    for lit, span, pat in found:
        if (lit, pat) not in seen:
            seen.add((lit, pat))
            out.append((lit, span, pat))
    return out


def candidate_leaves(q: QuestionTokens, s: Schema, cfg: DecoderConfig) -> list[LeafCandidate]:
    out = [LeafCandidate(column_leaf(s, i), "column", i) for i in range(len(s.columns))]
    out.append(LeafCandidate(star_leaf(), "star"))
    out += [LeafCandidate(table_leaf(i), "table", i) for i in range(len(s.tables))]
    seen = set()
    for lit, span, pat in extract_values(q, s, cfg):
        seen.add(lit)
        out.append(LeafCandidate(value_leaf(lit), "value", -1, span, pat))
    for k, n in enumerate(cfg.default_numbers):
        lit = Literal.number(n)
        if lit not in seen:
            out.append(LeafCandidate(value_leaf(lit), "const", k))
    return out


def leaf_vectors(leaves: list[LeafCandidate], enc: EncoderOutput, params: ParamStore) -> Tensor:
    """Project each leaf's encoder representation into the tree-vector space."""
    X = enc.node_reps
    cols = [c.index for c in leaves if c.kind == "column"]
    tabs = [enc.table(c.index) for c in leaves if c.kind == "table"]
    vals = [c for c in leaves if c.kind == "value"]
    consts = [c.index for c in leaves if c.kind == "const"]
    parts = []
    if cols:
        parts.append(linear(params, "dec.leaf_col", nx.take(X, cols)))
    if any(c.kind == "star" for c in leaves):
        parts.append(params["dec.star"])
    if tabs:
        parts.append(linear(params, "dec.leaf_tab", nx.take(X, tabs)))
    if vals:
        n_tok = enc.relations.n - enc.n_columns - enc.n_tables
        pool = np.zeros((len(vals), n_tok))
        pat = np.zeros((len(vals), 1))
        for r, c in enumerate(vals):
            pool[r, list(c.span)] = 1.0 / len(c.span)
            pat[r, 0] = float(c.pattern)
        v = linear(params, "dec.leaf_val", nx.matmul(nx.Tensor(pool), enc.token_reps))
        parts.append(nx.add(v, nx.matmul(nx.Tensor(pat), params["dec.pattern"])))
    if consts:
        parts.append(nx.take(params["dec.const"], consts))
    order = ["column", "star", "table", "value", "const"]
    kinds = [c.kind for c in leaves]
    if kinds != sorted(kinds, key=order.index):
        raise ValueError("leaf candidates must be grouped column, star, table, value, const")
    return nx.concat(parts, axis=0)


# ---------------------------------------------------------------- beam

@dataclass
class Beam:
    step: int
    trees: list[SqlTree]
    vecs: Tensor | None
    scores: np.ndarray

    def __post_init__(self):
        if self.vecs is not None and self.vecs.shape[0] != len(self.trees):
            raise ValueError("beam vectors and trees differ in count")

    def __len__(self) -> int:
        return len(self.trees)


def select_top_k(keys: list[str], scores: np.ndarray, K: int, forced=()) -> list[int]:
    """Indices of the K best by (score desc, key asc); ``forced`` indices always survive."""
    if not np.all(np.isfinite(scores)):
        raise nx.NumericError("non-finite candidate scores")
    order = sorted(range(len(keys)), key=lambda i: (-scores[i], keys[i]))
    keep = order[:K]
    forced = set(forced)
    missing = [i for i in order if i in forced and i not in set(keep)]
    if missing:
        kept = set(keep)
        room = [i for i in reversed(keep) if i not in forced]
        for m, drop in zip(missing, room):
            kept.discard(drop)
            kept.add(m)
        kept.update(missing)  # more golds than K: keep them all
        keep = sorted(kept, key=lambda i: (-scores[i], keys[i]))
    return keep


def init_leaves(enc: EncoderOutput | None, q: QuestionTokens, s: Schema, params: ParamStore | None,
                cfg: DecoderConfig, oracle: Callable[[SqlTree], float] | None = None) -> Beam:
    beam, _, _ = _leaf_step(enc, q, s, params, cfg, oracle)
    return beam


def _leaf_step(enc, q, s, params, cfg, oracle, forced_keys=frozenset()):
    leaves = candidate_leaves(q, s, cfg)
    if not leaves:
        raise DegenerateSchema(f"{s.db_id}: no leaf candidates")
    trees = [c.tree for c in leaves]
    if oracle is not None:
        vecs, score_t = None, None
        scores = np.array([oracle(t) for t in trees], dtype=float)
    else:
        vecs = leaf_vectors(leaves, enc, params)
        score_t = nx.matmul(vecs, params["dec.w_leaf"])
        scores = score_t.data
    keys = [t.key for t in trees]
    forced = [i for i, k in enumerate(keys) if k in forced_keys]
    keep = select_top_k(keys, scores, cfg.K, forced)
    beam = Beam(0, [trees[i] for i in keep], None if vecs is None else nx.take(vecs, keep),
                scores[keep])
    return beam, score_t, keys


# ---------------------------------------------------------------- contextualize / score / compose

def contextualize(Z: Tensor, token_reps: Tensor, params: ParamStore, heads: int,
                  return_weights: bool = False):
    """Cross-attention from tree vectors (queries) to question tokens (keys/values)."""
    q = split_heads(nx.matmul(Z, params["dec.ctx.W_Q"]), heads)
    k = split_heads(nx.matmul(token_reps, params["dec.ctx.W_K"]), heads)
    v = split_heads(nx.matmul(token_reps, params["dec.ctx.W_V"]), heads)
    out, a = attention(q, k, v)
    out = merge_heads(out)
    return (out, a) if return_weights else out


@dataclass(frozen=True)
class Candidate:
    rule: Rule
    i: int
    j: int  # -1 for unary rules
    tree: SqlTree


# sem-type pairs each binary rule accepts, precomputed
_BINARY_BY_SEMS: dict[tuple, tuple[Rule, ...]] = {}
for _a in SemType:
    for _b in SemType:
        _BINARY_BY_SEMS[(_a, _b)] = tuple(r for r in BINARY_RULES
                                          if _a in SIGNATURES[r][0] and _b in SIGNATURES[r][1])
_UNARY_BY_SEM = {a: tuple(r for r in UNARY_RULES if r is not Rule.KEEP and a in SIGNATURES[r][0])
                 for a in SemType}


def _unary_results(t: SqlTree) -> tuple:
    out = []
    for r in _UNARY_BY_SEM[t.sem]:
        nt = try_apply(r, t)
        if nt is not None:
            out.append((r, nt))
    return tuple(out)


def _binary_results(a: SqlTree, b: SqlTree) -> tuple:
    out = []
    for r in _BINARY_BY_SEMS[(a.sem, b.sem)]:
        if is_canonical_pair(r, a, b):
            nt = try_apply(r, a, b)
            if nt is not None:
                out.append((r, nt))
    return tuple(out)


class RuleCache:
    """Memo of the valid rule applications per operand (pair).

    Serialisations name columns by index only, so keys carry the database id:
    ``(col 7)`` is a different column in every schema.
    """

    def __init__(self, limit: int = 400_000):
        self.limit = limit
        self.table: dict[tuple, tuple] = {}

    def _get(self, key, make):
        try:
            return self.table[key]
        except KeyError:
            pass
        if len(self.table) >= self.limit:
            self.table.clear()
        out = self.table[key] = make()
        return out

    def unary(self, scope: str, t: SqlTree) -> tuple:
        return self._get((scope, t.key), lambda: _unary_results(t))

    def binary(self, scope: str, a: SqlTree, b: SqlTree) -> tuple:
        return self._get((scope, a.key, b.key), lambda: _binary_results(a, b))


def enumerate_frontier(trees: list[SqlTree], cache: RuleCache | None = None,
                       scope: str = "") -> list[Candidate]:
    """All type-valid one-rule extensions of the beam, in a fixed order.

    KEEP of every item comes first in item order, then other unary rules,
    then binary rules over ordered pairs (i, j) including i == j.  Results that
    are already on the beam (reachable through KEEP) and non-canonical operand
    orders of commutative rules are left out.
    """
    if cache is None:
        unary = lambda t: _unary_results(t)  # noqa: E731
        binary = lambda a, b: _binary_results(a, b)  # noqa: E731
    else:
        unary = lambda t: cache.unary(scope, t)  # noqa: E731
        binary = lambda a, b: cache.binary(scope, a, b)  # noqa: E731
    on_beam = {t.key for t in trees}
    out = [Candidate(Rule.KEEP, i, -1, t) for i, t in enumerate(trees)]
    for i, t in enumerate(trees):
        for r, nt in unary(t):
            if nt.key not in on_beam:
                out.append(Candidate(r, i, -1, nt))
    for i, a in enumerate(trees):
        for j, b in enumerate(trees):
            if not _BINARY_BY_SEMS[(a.sem, b.sem)]:
                continue
            for r, nt in binary(a, b):
                if nt.key not in on_beam:
                    out.append(Candidate(r, i, j, nt))
    return out


def _ff(params: ParamStore, name: str, x: Tensor) -> Tensor:
    return nx.relu(linear(params, f"{name}.2", nx.relu(linear(params, f"{name}.1", x))))


def score_frontier(cands: list[Candidate], Z: Tensor, Zc: Tensor, params: ParamStore) -> Tensor:
    """Scores for every candidate: w_u·FF_U([z;z']) or w_b·FF_B([z_i;z_i';z_j;z_j'])."""
    K = Z.shape[0]
    nU, nB = len(UNARY_RULES), len(BINARY_RULES)
    flat = []
    U = nx.matmul(_ff(params, "dec.ffu", nx.concat([Z, Zc], axis=-1)), params["dec.w_u"])
    pairs: dict[tuple[int, int], int] = {}
    for c in cands:
        if c.j >= 0 and (c.i, c.j) not in pairs:
            pairs[(c.i, c.j)] = len(pairs)
    parts = [nx.reshape(U, (K * nU,))]
    if pairs:
        ii = [p[0] for p in pairs]
        jj = [p[1] for p in pairs]
        x = nx.concat([nx.take(Z, ii), nx.take(Zc, ii), nx.take(Z, jj), nx.take(Zc, jj)], axis=-1)
        B = nx.matmul(_ff(params, "dec.ffb", x), params["dec.w_b"])
        parts.append(nx.reshape(B, (len(pairs) * nB,)))
    for c in cands:
        if c.j < 0:
            flat.append(c.i * nU + UNARY_INDEX[c.rule])
        else:
            flat.append(K * nU + pairs[(c.i, c.j)] * nB + BINARY_INDEX[c.rule])
    return nx.take(nx.concat(parts, axis=0), flat)


def compose_batch(rules: list[Rule], left: Tensor, right: Tensor | None, params: ParamStore,
                  cfg: DecoderConfig, rng=None, training: bool = False) -> Tensor:
    """Transformer over [e_rule, z_i(, z_j)] per row; the e_rule position is read out."""
    n = len(rules)
    seq = [nx.take(params["dec.rule_emb"], [RULE_INDEX[r] for r in rules]), left]
    if right is not None:
        seq.append(right)
    L = len(seq)
    x = nx.add(nx.stack(seq, axis=1), nx.take(params["dec.pos_emb"], list(range(L))))  # (n, L, d)
    for l in range(cfg.composer_layers):
        p = f"dec.comp{l}"
        q = split_heads(nx.matmul(x, params[f"{p}.W_Q"]), cfg.composer_heads)
        k = split_heads(nx.matmul(x, params[f"{p}.W_K"]), cfg.composer_heads)
        v = split_heads(nx.matmul(x, params[f"{p}.W_V"]), cfg.composer_heads)
        att, _ = attention(q, k, v, rng, cfg.dropout, training)
        att = nx.matmul(merge_heads(att), params[f"{p}.W_O"])
        x = layer_norm(params, f"{p}.ln1", nx.add(x, att))
        ff = linear(params, f"{p}.ff2", nx.relu(linear(params, f"{p}.ff1", x)))
        x = layer_norm(params, f"{p}.ln2", nx.add(x, nx.dropout(ff, cfg.dropout, rng, training)))
    out = nx.reshape(nx.index(x, (slice(None), 0)), (n, cfg.d_b))
    return check_finite(out, "compose")


def compose(rule: Rule, z_i: Tensor, z_j: Tensor | None, params: ParamStore, cfg: DecoderConfig) -> Tensor:
    """Vector for one new tree; KEEP hands back ``z_i`` itself."""
    if rule is Rule.KEEP:
        return z_i
    d = cfg.d_b
    left = nx.reshape(z_i, (1, d))
    right = None if z_j is None else nx.reshape(z_j, (1, d))
    return nx.reshape(compose_batch([rule], left, right, params, cfg), (d,))


def _next_vectors(picked: list[Candidate], Z: Tensor, params, cfg, rng, training) -> Tensor:
    """Beam matrix for the survivors, in ``picked`` order."""
    groups = {"keep": [], "unary": [], "binary": []}
    for pos, c in enumerate(picked):
        g = "keep" if c.rule is Rule.KEEP else ("unary" if c.j < 0 else "binary")
        groups[g].append(pos)
    parts, where = [], []
    if groups["keep"]:
        parts.append(nx.take(Z, [picked[p].i for p in groups["keep"]]))
        where += groups["keep"]
    if groups["unary"]:
        cs = [picked[p] for p in groups["unary"]]
        parts.append(compose_batch([c.rule for c in cs], nx.take(Z, [c.i for c in cs]), None,
                                   params, cfg, rng, training))
        where += groups["unary"]
    if groups["binary"]:
        cs = [picked[p] for p in groups["binary"]]
        parts.append(compose_batch([c.rule for c in cs], nx.take(Z, [c.i for c in cs]),
                                   nx.take(Z, [c.j for c in cs]), params, cfg, rng, training))
        where += groups["binary"]
    stacked = nx.concat(parts, axis=0)
    inverse = np.empty(len(where), dtype=np.int64)
    inverse[np.asarray(where)] = np.arange(len(where))
    return nx.take(stacked, inverse)


# ---------------------------------------------------------------- decoding loop

@dataclass
class DecodeRun:
    beams: list[Beam] = field(default_factory=list)
    loss: Tensor | None = None
    trace: list[dict] = field(default_factory=list)


def _run(enc, q, s, params, cfg: DecoderConfig, *, oracle=None, gold: SqlTree | None = None,
         rng=None, training=False, cache: RuleCache | None = None, want_trace=False) -> DecodeRun:
    run = DecodeRun()
    gold_sets = [{t.key for t in gold_frontier(gold, h)} for h in range(cfg.T + 1)] if gold else None
    beam, leaf_scores, leaf_keys = _leaf_step(enc, q, s, params, cfg, oracle,
                                              gold_sets[0] if gold_sets else frozenset())
    losses = []
    if gold_sets is not None:
        losses.append(_step_loss(leaf_scores, leaf_keys, gold_sets[0], 0))
    run.beams.append(beam)
    if want_trace:
        run.trace.append(_trace_record(beam))
    for t in range(1, cfg.T + 1):
        cands = enumerate_frontier(beam.trees, cache, s.db_id)
        keys = [c.tree.key for c in cands]
        if oracle is not None:
            score_t = None
            scores = np.array([oracle(c.tree) for c in cands], dtype=float)
        else:
            Zc = contextualize(beam.vecs, enc.token_reps, params, cfg.ctx_heads)
            score_t = score_frontier(cands, beam.vecs, Zc, params)
            scores = score_t.data
        forced = [i for i, k in enumerate(keys) if gold_sets and k in gold_sets[t]]
        if len(cands) > cfg.frontier_cap:
            idx = select_top_k(keys, scores, cfg.frontier_cap, forced)
            idx.sort()
            cands = [cands[i] for i in idx]
            keys = [keys[i] for i in idx]
            scores = scores[idx]
            if score_t is not None:
                score_t = nx.take(score_t, idx)
            forced = [i for i, k in enumerate(keys) if gold_sets and k in gold_sets[t]]
        if gold_sets is not None:
            losses.append(_step_loss(score_t, keys, gold_sets[t], t))
        keep = select_top_k(keys, scores, cfg.K, forced)
        picked = [cands[i] for i in keep]
        vecs = None if oracle is not None else _next_vectors(picked, beam.vecs, params, cfg, rng, training)
        beam = Beam(t, [c.tree for c in picked], vecs, scores[keep])
        run.beams.append(beam)
        if want_trace:
            run.trace.append(_trace_record(beam))
    if losses and losses[0] is not None:
        total = losses[0]
        for x in losses[1:]:
            total = nx.add(total, x)
        run.loss = total
    return run


def _step_loss(scores: Tensor | None, keys: list[str], gold_keys: set[str], step: int) -> Tensor | None:
    if scores is None:
        return None
    idx = [i for i, k in enumerate(keys) if k in gold_keys]
    if len(idx) != len(gold_keys):
        missing = sorted(gold_keys - {keys[i] for i in idx})
        raise ValueError(f"step {step}: gold sub-trees missing from the frontier: {missing[:3]}")
    lp = nx.log_softmax(scores, axis=-1)
    return nx.scale(nx.sum(nx.take(lp, idx)), -1.0)


def _trace_record(beam: Beam) -> dict:
    return {"step": beam.step,
            "beam": [[t.key, float(sc)] for t, sc in zip(beam.trees, beam.scores)]}


def select_final(beams: list[Beam]) -> SqlTree:
    """Best complete query on the last beam, else best relation anywhere, else NoParse.

    Ties on score go to the taller tree, then to the smaller serialisation.
    """
    def best(items):
        return min(items, key=lambda p: (-p[1], -p[0].height, p[0].key))[0]

    last = beams[-1]
    done = [(t, s) for t, s in zip(last.trees, last.scores) if t.complete]
    if done:
        return best(done)
    rel = [(t, s) for b in beams for t, s in zip(b.trees, b.scores) if t.sem is SemType.R]
    if rel:
        return best(rel)
    raise NoParse("no relation-typed tree on any beam")


def decode(enc: EncoderOutput | None, q: QuestionTokens, s: Schema, params: ParamStore | None,
           cfg: DecoderConfig, oracle: Callable[[SqlTree], float] | None = None,
           trace: list | None = None, cache: RuleCache | None = None) -> SqlTree:
    """Run T beam steps and return the selected tree.

    With ``oracle`` the learned scores are replaced by ``oracle(tree)`` and no
    vectors are computed.  When ``trace`` is a list, one record per step is
    appended to it.
    """
    run = _run(enc, q, s, params, cfg, oracle=oracle, cache=cache, want_trace=trace is not None)
    if trace is not None:
        trace.extend(run.trace)
    return select_final(run.beams)


def training_loss(enc: EncoderOutput, q: QuestionTokens, s: Schema, params: ParamStore,
                  cfg: DecoderConfig, gold: SqlTree, rng=None, training: bool = True,
                  cache: RuleCache | None = None) -> Tensor:
    """Teacher-forced cross-entropy summed over steps 0..T.

    The gold sub-trees still needed at step t (``gold_frontier``) are forced
    onto beam t; each contributes its negative log-probability under a
    softmax over the whole (capped) frontier.  Once a sub-query has been
    consumed by a taller gold node it is no longer a target, so from step
    height(gold) on only the root is, which is what the final selection reads.
    """
    if gold.height > cfg.T:
        raise ValueError(f"gold height {gold.height} exceeds T={cfg.T}")
    return _run(enc, q, s, params, cfg, gold=gold, rng=rng, training=training, cache=cache).loss


def gold_leaves_reachable(q: QuestionTokens, s: Schema, cfg: DecoderConfig, gold: SqlTree) -> bool:
    keys = {c.tree.key for c in candidate_leaves(q, s, cfg)}
    return all(t.key in keys for t in decompose_by_height(gold, 0))


def oracle_scorer(gold: SqlTree) -> Callable[[SqlTree], float]:
    """+1 for sub-trees of ``gold``, 0 otherwise."""
    keys = {t.key for t in gold.subtrees()}
    return lambda t: 1.0 if t.key in keys else 0.0


def uniform_loss(frontier_sizes: list[int], gold_counts: list[int]) -> float:
    """Loss of a scorer that gives every candidate the same score."""
    return sum(g * math.log(n) for n, g in zip(frontier_sizes, gold_counts))


def complete_for_emission(t: SqlTree) -> SqlTree:
    """Wrap an unprojected relation as ``SELECT *`` so it can be printed."""
    if t.complete:
        return t
    out = try_apply(Rule.PROJECT, star_leaf(), t)
    if out is None:
        raise NoParse(f"cannot complete {t.key}")
    return out

