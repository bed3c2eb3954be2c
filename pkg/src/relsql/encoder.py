"""Relation-aware transformer encoder over the joint question/schema graph."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .linking import RELATIONS, RelationMatrix, build_relation_matrix
from .nn import check_finite, declare_layer_norm, declare_linear, layer_norm, linear
from .numerics import Tensor
from .params import ParamStore
from .schema import QuestionTokens, Schema

PAD, UNK = "<pad>", "<unk>"
KINDS = ("C", "T", "Q")
TAGS = ("number", "text")


class Vocab:
    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for t in tokens:
            self.add(t)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(tok, 1)

    @classmethod
    def build(cls, questions, schemas) -> "Vocab":
        toks = set()
        for q in questions:
            toks.update(q.tokens)
        for s in schemas:
            for t in s.tables:
                toks.update(t.name)
            for c in s.columns:
                toks.update(c.name)
        return cls(sorted(toks))


@dataclass
class EncoderConfig:
    d_x: int = 64
    heads: int = 8
    n_layers: int = 4
    d_ff: int = 256
    dropout: float = 0.2
    vocab_size: int = 2

    def __post_init__(self):
        for k in ("d_x", "heads", "d_ff", "vocab_size"):
            if getattr(self, k) <= 0:
                raise ValueError(f"encoder {k} must be positive")
        if self.n_layers < 0:
            raise ValueError("encoder n_layers must be non-negative")
        if self.d_x % self.heads:
            raise ValueError(f"d_x={self.d_x} is not divisible by heads={self.heads}")


@dataclass
class EncoderOutput:
    node_reps: Tensor  # (|C|+|T|+|Q|, d_x), columns then tables then tokens
    n_columns: int
    n_tables: int
    relations: RelationMatrix

    @property
    def token_reps(self) -> Tensor:
        return self.node_reps[self.n_columns + self.n_tables:]

    def column(self, i: int) -> int:
        return i

    def table(self, i: int) -> int:
        return self.n_columns + i

    def token(self, i: int) -> int:
        return self.n_columns + self.n_tables + i


def declare_encoder(store: ParamStore, cfg: EncoderConfig) -> None:
    d, dh = cfg.d_x, cfg.d_x // cfg.heads
    store.embedding("enc.tok_emb", cfg.vocab_size, d, std=0.02)
    store.embedding("enc.kind_emb", len(KINDS), d, std=0.02)
    store.embedding("enc.tag_emb", len(TAGS), d, std=0.02)
    for l in range(cfg.n_layers):
        p = f"enc.L{l}"
        store.matrix(f"{p}.W_Q", d, d)
        store.matrix(f"{p}.W_K", d, d)
        store.matrix(f"{p}.W_V", d, d)
        store.embedding(f"{p}.rel_K", len(RELATIONS), dh, std=0.02)
        store.embedding(f"{p}.rel_V", len(RELATIONS), dh, std=0.02)
        declare_layer_norm(store, f"{p}.ln1", d)
        declare_linear(store, f"{p}.ff1", d, cfg.d_ff)
        declare_linear(store, f"{p}.ff2", cfg.d_ff, d)
        declare_layer_norm(store, f"{p}.ln2", d)


def node_token_ids(q: QuestionTokens, s: Schema, vocab: Vocab) -> list[list[int]]:
    ids = [[vocab[w] for w in c.name] for c in s.columns]
    ids += [[vocab[w] for w in t.name] for t in s.tables]
    ids += [[vocab[w]] for w in q.tokens]
    return ids


def embed_initial(q: QuestionTokens, s: Schema, params: ParamStore, vocab: Vocab) -> Tensor:
    """Mean of each node's name-token embeddings plus kind (and column tag) embeddings."""
    ids = node_token_ids(q, s, vocab)
    flat = [i for row in ids for i in row]
    pool = np.zeros((len(ids), len(flat)))
    k = 0
    for n, row in enumerate(ids):
        pool[n, k:k + len(row)] = 1.0 / len(row)
        k += len(row)
    words = nx.matmul(nx.Tensor(pool), nx.take(params["enc.tok_emb"], flat))
    nc, nt = len(s.columns), len(s.tables)
    kinds = [0] * nc + [1] * nt + [2] * len(q.tokens)
    x = nx.add(words, nx.take(params["enc.kind_emb"], kinds))
    tag_sel = np.zeros((len(ids), len(TAGS)))
    for i, c in enumerate(s.columns):
        tag_sel[i, TAGS.index(c.type_tag)] = 1.0
    return nx.add(x, nx.matmul(nx.Tensor(tag_sel), params["enc.tag_emb"]))


def rat_layer(X: Tensor, R: np.ndarray, params: ParamStore, layer: int, heads: int,
              dropout: float = 0.0, rng=None, training: bool = False,
              return_attention: bool = False):
    """One relation-aware self-attention layer.

    Attention logits for head h add the relation key embedding of pair (i, j)
    to node j's key; values likewise add the relation value embedding.
    Relation embeddings are shared by all heads of the layer.
    """
    p = f"enc.L{layer}"
    n, d = X.shape
    dh = d // heads

    def heads_of(name):  # (n, d) -> (H, n, dh)
        return nx.transpose(nx.reshape(nx.matmul(X, params[f"{p}.{name}"]), (n, heads, dh)), (1, 0, 2))

    q, k, v = heads_of("W_Q"), heads_of("W_K"), heads_of("W_V")
    flat = np.asarray(R).reshape(-1)
    rK = nx.reshape(nx.take(params[f"{p}.rel_K"], flat), (n, n, dh))
    rV = nx.reshape(nx.take(params[f"{p}.rel_V"], flat), (n, n, dh))

    content = nx.matmul(q, nx.swap_last(k))  # (H, n, n)
    q_by_node = nx.transpose(q, (1, 0, 2))  # (n, H, dh)
    relational = nx.transpose(nx.matmul(q_by_node, nx.swap_last(rK)), (1, 0, 2))  # (H, n, n)
    logits = nx.scale(nx.add(content, relational), 1.0 / math.sqrt(dh))
    alpha = nx.softmax(logits, axis=-1)
    a = nx.dropout(alpha, dropout, rng, training)

    z = nx.matmul(a, v)  # (H, n, dh)
    z_rel = nx.transpose(nx.matmul(nx.transpose(a, (1, 0, 2)), rV), (1, 0, 2))
    z = nx.add(z, z_rel)
    z = nx.reshape(nx.transpose(z, (1, 0, 2)), (n, d))

    y1 = layer_norm(params, f"{p}.ln1", nx.add(X, z))
    ff = linear(params, f"{p}.ff2", nx.relu(linear(params, f"{p}.ff1", y1)))
    y = layer_norm(params, f"{p}.ln2", nx.add(y1, nx.dropout(ff, dropout, rng, training)))
    check_finite(y, f"RAT layer {layer}")
    return (y, alpha) if return_attention else y


def encode(q: QuestionTokens, s: Schema, params: ParamStore, cfg: EncoderConfig, vocab: Vocab,
           relations: RelationMatrix | None = None, rng=None, training: bool = False) -> EncoderOutput:
    R = relations if relations is not None else build_relation_matrix(q, s)
    x = embed_initial(q, s, params, vocab)
    for l in range(cfg.n_layers):
        x = rat_layer(x, R.labels, params, l, cfg.heads, cfg.dropout, rng, training)
    return EncoderOutput(x, len(s.columns), len(s.tables), R)
