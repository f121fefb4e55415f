"""Finite-difference checks of every layer and of the whole network (float64)."""

import numpy as np
import pytest

from swarm_mimic.nn import layers as L
from swarm_mimic.nn.network import NetworkConfig, init_network, loss_and_gradients

H = 1e-5
TOL = 1e-4


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


def numeric_grad(f, x):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + H
        fp = f()
        x[i] = old - H
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * H)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv(rng, stride):
    x = rng.normal(size=(2, 6, 7, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    out, _ = L.conv_forward(x, w, b, stride)
    dout = rng.normal(size=out.shape)

    def f():
        return float(np.sum(L.conv_forward(x, w, b, stride)[0] * dout))

    _, cache = L.conv_forward(x, w, b, stride)
    dx, dw, db = L.conv_backward(dout, cache)
    assert rel_error(dx, numeric_grad(f, x)) < TOL
    assert rel_error(dw, numeric_grad(f, w)) < TOL
    assert rel_error(db, numeric_grad(f, b)) < TOL


def test_conv_against_direct_loops(rng):
    x = rng.normal(size=(1, 5, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    out, _ = L.conv_forward(x, w, b, 2)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 3, 3, 3))
    for r in range(3):
        for c in range(3):
            patch = xp[0, 2 * r:2 * r + 3, 2 * c:2 * c + 3]
            for o in range(3):
                ref[0, r, c, o] = np.sum(patch * w[..., o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_residual(rng):
    h = rng.normal(size=(2, 4, 5, 3))
    w = rng.normal(size=(3, 3, 3, 3)) * 0.3
    b = rng.normal(size=3)
    out, cache = L.residual_forward(h, w, b)
    dout = rng.normal(size=out.shape)

    def f():
        return float(np.sum(L.residual_forward(h, w, b)[0] * dout))

    dh, dw, db = L.residual_backward(dout, cache)
    assert rel_error(dh, numeric_grad(f, h)) < TOL
    assert rel_error(dw, numeric_grad(f, w)) < TOL
    assert rel_error(db, numeric_grad(f, b)) < TOL


def test_relu(rng):
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 1e-3] = 0.5
    dout = rng.normal(size=x.shape)
    _, mask = L.relu_forward(x)

    def f():
        return float(np.sum(L.relu_forward(x)[0] * dout))

    assert rel_error(L.relu_backward(dout, mask), numeric_grad(f, x)) < TOL


def test_dense(rng):
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(7, 3))
    b = rng.normal(size=3)
    dout = rng.normal(size=(3, 3))

    def f():
        return float(np.sum(L.dense_forward(x, w, b)[0] * dout))

    _, cache = L.dense_forward(x, w, b)
    dx, dw, db = L.dense_backward(dout, cache, w)
    assert rel_error(dx, numeric_grad(f, x)) < TOL
    assert rel_error(dw, numeric_grad(f, w)) < TOL
    assert rel_error(db, numeric_grad(f, b)) < TOL


def test_dropout(rng):
    x = rng.normal(size=(3, 8))
    mask = L.dropout_mask(x.shape, 0.5, rng)
    assert set(np.unique(mask)) <= {0.0, 2.0}
    dout = rng.normal(size=x.shape)

    def f():
        return float(np.sum(L.dropout_forward(x, mask)[0] * dout))

    assert rel_error(L.dropout_backward(dout, mask), numeric_grad(f, x)) < TOL


def test_mse(rng):
    p = rng.normal(size=(4, 3))
    t = rng.normal(size=(4, 3))
    loss, g = L.mse_loss(p, t)
    assert loss == pytest.approx(np.mean((p - t) ** 2))
    assert rel_error(g, numeric_grad(lambda: L.mse_loss(p, t)[0], p)) < TOL


@pytest.mark.parametrize("train_mode", [False, True])
def test_full_network(rng, train_mode):
    cfg = NetworkConfig(height=16, width=32, widths=(3, 4), dropout=0.5)
    net = init_network(cfg, rng)
    for k in net.params:
        if k.endswith(".b"):
            net.params[k] = rng.normal(0, 0.1, net.params[k].shape)
    assert net.n_params <= 10_000
    x = rng.normal(size=(3, 16, 32))
    t = rng.normal(size=(3, 3))

    def loss():
        return loss_and_gradients(net, x, t, 5e-4, train_mode, np.random.default_rng(7), chunk=2)[0]

    _, grads = loss_and_gradients(net, x, t, 5e-4, train_mode, np.random.default_rng(7), chunk=2)
    for name, p in net.params.items():
        assert rel_error(grads[name], numeric_grad(loss, p)) < TOL, name


def test_chunking_does_not_change_gradients(rng):
    cfg = NetworkConfig(height=16, width=32, widths=(3, 4))
    net = init_network(cfg, rng)
    x = rng.normal(size=(5, 16, 32))
    t = rng.normal(size=(5, 3))
    l1, g1 = loss_and_gradients(net, x, t, 5e-4, False, chunk=1)
    l5, g5 = loss_and_gradients(net, x, t, 5e-4, False, chunk=5)
    assert l1 == pytest.approx(l5, rel=1e-12)
    for k in g1:
        np.testing.assert_allclose(g1[k], g5[k], rtol=1e-10, atol=1e-14)
