"""Tensor primitives: forward values, FD gradient checks, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partbridge import numcore as nc
from fdcheck import check_gradients, fd_grad

SEEDS = range(20)


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    x = nc.Tensor(rng(0).normal(size=(3, 3)))
    out = nc.matmul(nc.Tensor(np.eye(3, dtype=np.float32)), x)
    np.testing.assert_allclose(out.data, x.data, rtol=1e-6)


def test_leaky_relu_definition():
    out = nc.leaky_relu(nc.Tensor([-1.0]), alpha=0.2)
    np.testing.assert_allclose(out.data, [-0.2], rtol=1e-6)


def test_mean_value():
    assert nc.mean(nc.Tensor([1.0, 2.0, 3.0, 6.0])).item() == pytest.approx(3.0)


def test_softmax_sums_to_one():
    s = nc.softmax(nc.Tensor(rng(1).normal(size=(4, 12))))
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(4), rtol=1e-5)


def test_shape_mismatch_is_typed_and_named():
    with pytest.raises(nc.ShapeError, match="matmul"):
        nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((2, 3))))
    with pytest.raises(nc.ShapeError, match="concat"):
        nc.concat([nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((3, 4)))], axis=1)


def test_non_scalar_loss_rejected():
    x = nc.Tensor(np.ones(3), requires_grad=True)
    with nc.Tape() as tape:
        y = nc.square(x)
        with pytest.raises(nc.ShapeError):
            tape.backward(y)


# ---------------------------------------------------------------------------
# backward basics


def test_sum_of_squares_gradient():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    with nc.Tape() as tape:
        loss = nc.sum_(nc.square(x))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)


def test_constant_loss_yields_no_gradients():
    c = nc.Tensor(3.0)
    with nc.Tape() as tape:
        tape.backward(c)
    assert c.grad is None
    assert len(tape) == 0


def test_reused_input_accumulates():
    x = nc.Tensor([2.0], requires_grad=True)
    with nc.Tape() as tape:
        loss = nc.sum_(nc.add(x, x))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0])


# ---------------------------------------------------------------------------
# FD gradient oracle, per primitive, 20 seeds each


def _unary_cases(seed):
    r = rng(seed)
    x = r.normal(size=(3, 4))
    xs = np.sign(x) * (np.abs(x) + 0.3)  # keep away from kinks/poles
    return x, xs


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise_ops(seed):
    x, xs = _unary_cases(seed)
    check_gradients(lambda ls: nc.sum_(nc.square(ls[0])), [x])
    check_gradients(lambda ls: nc.sum_(nc.tanh(ls[0])), [x])
    check_gradients(lambda ls: nc.sum_(nc.exp(ls[0])), [x * 0.5])
    check_gradients(lambda ls: nc.sum_(nc.log(ls[0])), [np.abs(x) + 0.5])
    check_gradients(lambda ls: nc.sum_(nc.sqrt(ls[0])), [np.abs(x) + 0.5])
    check_gradients(lambda ls: nc.sum_(nc.sigmoid(ls[0])), [x])
    check_gradients(lambda ls: nc.sum_(nc.leaky_relu(ls[0], 0.2)), [xs])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_binary_and_matmul(seed):
    r = rng(seed)
    a, b = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    m, n = r.normal(size=(3, 5)), r.normal(size=(5, 2))
    check_gradients(lambda ls: nc.sum_(nc.mul(ls[0], ls[1])), [a, b])
    check_gradients(lambda ls: nc.sum_(nc.sub(ls[0], ls[1])), [a, b])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.matmul(ls[0], ls[1]))), [m, n])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_reductions_and_shape_ops(seed):
    r = rng(seed)
    x = r.normal(size=(2, 3, 4))
    check_gradients(lambda ls: nc.mean(nc.square(ls[0])), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.mean(ls[0], axis=(0, 2)))), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.reshape(ls[0], (6, 4)))), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.narrow(ls[0], 2, 1, 2))), [x])
    a, b = r.normal(size=(2, 3)), r.normal(size=(2, 5))
    check_gradients(lambda ls: nc.sum_(nc.square(nc.concat(ls, axis=1))), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_softmax_and_cross_entropy(seed):
    r = rng(seed)
    logits = r.normal(size=(4, 6))
    onehot = np.eye(6)[r.integers(0, 6, size=4)]
    check_gradients(lambda ls: nc.sum_(nc.square(nc.softmax(ls[0]))), [logits])
    check_gradients(
        lambda ls: nc.mean(nc.softmax_cross_entropy(ls[0], nc.Tensor(onehot, dtype=np.float64))),
        [logits])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_image_ops(seed):
    r = rng(seed)
    x = r.normal(size=(2, 6, 6, 2))
    w = r.normal(size=(3, 3, 2, 3))
    check_gradients(lambda ls: nc.sum_(nc.square(nc.conv2d(ls[0], ls[1]))), [x, w])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.pad2d(ls[0], 2, "reflect"))), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.pad2d(ls[0], 1, "zero"))), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.avg_pool2x(ls[0]))), [x])
    check_gradients(lambda ls: nc.sum_(nc.square(nc.upsample2x(ls[0]))), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_three_layer_mlp_vs_fd(seed):
    """Random 3-layer MLP: analytic vs central differences, rel err < 1e-3."""
    r = rng(seed)
    dims = [5, 7, 6, 2]
    arrays = [r.normal(size=(4, 5))]
    for i in range(3):
        arrays.append(r.normal(size=(dims[i], dims[i + 1])) / np.sqrt(dims[i]))
        arrays.append(r.normal(size=(dims[i + 1],)) * 0.1)

    def build(ls):
        h = ls[0]
        for i in range(3):
            h = nc.add(nc.matmul(h, ls[1 + 2 * i]), ls[2 + 2 * i])
            if i < 2:
                h = nc.leaky_relu(h, 0.2)
        return nc.mean(nc.square(h))

    check_gradients(build, arrays)


# ---------------------------------------------------------------------------
# broadcast-add linearity property


@settings(max_examples=40, deadline=None)
@given(b=st.integers(1, 4), n=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_broadcast_add_backward_sums_over_broadcast_dim(b, n, seed):
    r = rng(seed)
    x = r.normal(size=(b, n))
    bias = r.normal(size=(n,))

    def build(ls):
        return nc.sum_(nc.square(nc.add(ls[0], ls[1])))

    def scalar_fn(arrs):
        return float((np.square(arrs[0] + arrs[1])).sum())

    leaves = [nc.Tensor(x, requires_grad=True, dtype=np.float64),
              nc.Tensor(bias, requires_grad=True, dtype=np.float64)]
    with nc.Tape() as tape:
        tape.backward(build(leaves))
    fd = fd_grad(scalar_fn, [x.copy(), bias.copy()])
    np.testing.assert_allclose(leaves[0].grad, fd[0], atol=1e-6)
    np.testing.assert_allclose(leaves[1].grad, fd[1], atol=1e-6)
    # bias gradient equals the column sum of the elementwise gradient
    np.testing.assert_allclose(leaves[1].grad, leaves[0].grad.sum(axis=0), atol=1e-9)


# ---------------------------------------------------------------------------
# determinism


def test_identical_runs_are_bitwise_identical():
    def run():
        r = rng(123)
        x = nc.Tensor(r.normal(size=(4, 6)).astype(np.float32), requires_grad=True)
        w = nc.Tensor(r.normal(size=(6, 3)).astype(np.float32), requires_grad=True)
        with nc.Tape() as tape:
            loss = nc.mean(nc.square(nc.tanh(nc.matmul(x, w))))
            tape.backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_debug_finite_flag_raises():
    nc.tensor.DEBUG_CHECK_FINITE = True
    try:
        with pytest.raises(nc.NonFiniteError):
            nc.log(nc.Tensor([0.0]))
    finally:
        nc.tensor.DEBUG_CHECK_FINITE = False
