from __future__ import annotations

import decimal
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relsql import numerics as N
from relsql.numerics import GraphError, NumericError, ShapeError, Tensor
from relsql.params import ParamStore, grad_check, read_checkpoint, save_checkpoint


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = N.tensor_ops(a, Tensor(np.eye(2)), "matmul")
    assert out.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_add_zeros_is_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert np.array_equal(N.tensor_ops(x, N.zeros((3, 4)), "add").data, x.data)


def test_matmul_matches_triple_loop():
    rng = random.Random(3)
    a = [[rng.uniform(-1, 1) for _ in range(4)] for _ in range(3)]
    b = [[rng.uniform(-1, 1) for _ in range(2)] for _ in range(4)]
    ref = [[sum(a[i][k] * b[k][j] for k in range(4)) for j in range(2)] for i in range(3)]
    out = N.matmul(Tensor(a), Tensor(b)).data
    assert np.allclose(out, ref, atol=1e-15, rtol=0)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        N.tensor_ops(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))), "matmul")
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        N.tensor_ops(Tensor(np.zeros(2)), Tensor(np.zeros(3)), "add")


def test_concat_and_scale():
    a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0]])
    assert N.tensor_ops(a, b, "concat").data.tolist() == [[1.0, 2.0, 3.0]]
    assert N.tensor_ops(a, 2.0, "scale").data.tolist() == [[2.0, 4.0]]


def test_softmax_examples():
    assert np.allclose(N.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    assert N.softmax(Tensor([1000.0, 1000.0])).data.tolist() == [0.5, 0.5]


def test_softmax_matches_high_precision_oracle():
    ctx = decimal.Context(prec=50)
    xs = [decimal.Decimal(v) for v in (1, 2, 3)]
    es = [ctx.exp(v) for v in xs]
    total = sum(es)
    ref = [float(e / total) for e in es]
    out = N.softmax(Tensor([1.0, 2.0, 3.0])).data
    assert np.max(np.abs(out - ref)) <= 1e-15


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        N.softmax(Tensor([1.0, np.nan]))
    with pytest.raises(NumericError):
        N.softmax(Tensor([np.inf, 0.0]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.integers(0, 1))
def test_softmax_slices_sum_to_one(vals, axis):
    x = np.array(vals)
    x = np.stack([x, x[::-1]]) if axis == 0 else x.reshape(1, -1)
    out = N.softmax(Tensor(x), axis=axis).data
    assert np.all(out >= 0)
    assert np.max(np.abs(out.sum(axis=axis) - 1.0)) <= 1e-9


def _ln(x):
    d = np.asarray(x).shape[-1]
    return N.layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data


def test_layer_norm_examples():
    assert _ln([[5.0, 5.0, 5.0]]).tolist() == [[0.0, 0.0, 0.0]]
    assert np.allclose(_ln([[1.0, 3.0]]), [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_random_row_statistics():
    row = np.random.default_rng(7).normal(3.0, 2.5, size=(1, 16))
    out = _ln(row)[0]
    assert abs(out.mean()) <= 1e-6
    assert abs(out.var() - 1.0) <= 1e-6


def test_layer_norm_zero_width_rejected():
    with pytest.raises(ShapeError):
        N.layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


def test_backward_linear_and_quadratic():
    ps = ParamStore(0)
    w = ps.matrix("w", 3, 2)
    N.sum(w).backward()
    assert np.array_equal(ps.grad_of("w"), np.ones((3, 2)))
    ps.zero_grad()
    N.sum(w * w).backward()
    assert np.allclose(ps.grad_of("w"), 2 * w.data, atol=0)


def test_backward_twice_raises_and_unused_params_have_zero_grad():
    ps = ParamStore(0)
    w = ps.matrix("w", 2, 2)
    ps.matrix("unused", 2, 2)
    loss = N.sum(w)
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()
    assert not np.any(ps.grad_of("unused"))


def test_grad_check_linear_is_exact():
    ps = ParamStore(1)
    w = ps.matrix("w", 4, 3)
    c = Tensor(np.random.default_rng(2).normal(size=(4, 3)))
    assert grad_check(lambda: N.sum(w * c), ps, eps=1e-5) <= 1e-8


def test_grad_check_softmax_cross_entropy():
    ps = ParamStore(2)
    w = ps.matrix("w", 5, 4)
    x = Tensor(np.random.default_rng(4).normal(size=(3, 5)))
    onehot = Tensor(np.eye(4)[[0, 2, 3]])

    def f():
        return N.scale(N.sum(N.log_softmax(x @ w) * onehot), -1.0)

    assert grad_check(f, ps, eps=1e-5) <= 1e-5


def test_grad_check_validates_eps_and_finiteness():
    ps = ParamStore(0)
    w = ps.matrix("w", 2, 2)
    with pytest.raises(ValueError):
        grad_check(lambda: N.sum(w), ps, eps=0.1)
    with np.errstate(divide="ignore"), pytest.raises(NumericError):
        grad_check(lambda: N.sum(N.log(N.scale(w, 0.0))), ps, eps=1e-5)


def test_composite_ops_match_finite_differences():
    ps = ParamStore(5)
    a = ps.matrix("a", 3, 4)
    b = ps.matrix("b", 4, 4)
    g = ps.add("g", np.ones(4))
    bias = ps.zeros("bias", 4)
    v = Tensor(np.random.default_rng(9).normal(size=(3, 4)))

    def f():
        h = N.relu(a @ b)
        h = N.layer_norm(h + a, g, bias)
        h = N.softmax(N.concat([h, N.exp(N.scale(a, 0.3))], axis=0), axis=0)
        return N.sum(N.take(h, [0, 2, 4], axis=0) * v)

    assert grad_check(f, ps, eps=1e-5) <= 1e-4


def test_same_seed_same_initialisation():
    def build(seed):
        ps = ParamStore(seed)
        ps.matrix("w", 5, 3)
        ps.embedding("e", 4, 3, std=0.02)
        return ps.state()

    a, b, c = build(11), build(11), build(12)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["w"], c["w"])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    ps = ParamStore(3)
    ps.matrix("w", 7, 5)
    ps.embedding("e", 3, 5)
    path = tmp_path / "ck.json"
    save_checkpoint(path, ps, meta={"step": 4}, extra={"m": np.arange(3.0) / 7})
    seed, params, extra, meta = read_checkpoint(path)
    assert seed == 3 and meta == {"step": 4}
    assert all(np.array_equal(params[k], ps[k].data) for k in ps)
    assert np.array_equal(extra["m"], np.arange(3.0) / 7)


def test_dropout_is_identity_outside_training():
    x = Tensor(np.ones((4, 4)))
    assert N.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    y = N.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
