"""Small layer helpers over ``numerics`` shared by the encoder and decoder."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .params import ParamStore


def declare_linear(store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True) -> None:
    store.matrix(f"{name}.W", d_in, d_out)
    if bias:
        store.zeros(f"{name}.b", d_out)


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    y = nx.matmul(x, store[f"{name}.W"])
    b = f"{name}.b"
    return nx.add(y, store[b]) if b in store else y


def declare_layer_norm(store: ParamStore, name: str, d: int) -> None:
    store.ones(f"{name}.g", d)
    store.zeros(f"{name}.b", d)


def layer_norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return nx.layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d/heads)."""
    *lead, n, d = x.shape
    y = nx.reshape(x, tuple(lead) + (n, heads, d // heads))
    k = len(lead)
    axes = list(range(k)) + [k + 1, k, k + 2]
    return nx.transpose(y, axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, n, dh) -> (..., n, heads*dh)."""
    *lead, h, n, dh = x.shape
    k = len(lead)
    axes = list(range(k)) + [k + 1, k, k + 2]
    return nx.reshape(nx.transpose(x, axes), tuple(lead) + (n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, rng=None, rate: float = 0.0,
              training: bool = False) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes; returns (output, weights)."""
    dh = q.shape[-1]
    e = nx.scale(nx.matmul(q, nx.swap_last(k)), 1.0 / math.sqrt(dh))
    a = nx.softmax(e, axis=-1)
    out = nx.matmul(nx.dropout(a, rate, rng, training), v)
    return out, a


def check_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise nx.NumericError(f"{what}: non-finite values")
    return t
