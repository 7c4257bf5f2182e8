import json

import numpy as np
import pytest

from fpreg.numerics import (
    Adam,
    DimensionError,
    ParameterStore,
    Tensor,
    grad_check,
    load_checkpoint,
    no_grad,
    ops,
    save_checkpoint,
)

TOL = 1e-4


def T(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def away_from_zero(rng, *shape):
    v = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(v, requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def weighted(t, rng):
    # project to a scalar with fixed random weights so every output coordinate matters
    w = rng.normal(size=t.shape)
    return ops.sum(ops.mul(t, w))


class TestGradients:
    def test_elementwise(self, rng):
        w = rng.normal(size=(3, 4))
        a, b = T(rng, 3, 4), T(rng, 3, 4)
        assert grad_check(lambda a, b: ops.sum(ops.mul(ops.add(a, b), w)), [a, b]) < TOL
        assert grad_check(lambda a, b: ops.sum(ops.mul(ops.sub(a, b), w)), [a, b]) < TOL
        assert grad_check(lambda a, b: ops.sum(ops.mul(ops.mul(a, b), w)), [a, b]) < TOL
        assert grad_check(lambda a: ops.sum(ops.mul(ops.exp(a), w)), [T(rng, 3, 4, scale=0.5)]) < TOL
        assert grad_check(lambda a: ops.sum(ops.mul(ops.relu(a), w)), [away_from_zero(rng, 3, 4)]) < TOL

    def test_broadcasting(self, rng):
        a, b = T(rng, 2, 3, 4), T(rng, 4)
        w = rng.normal(size=(2, 3, 4))
        assert grad_check(lambda a, b: ops.sum(ops.mul(ops.mul(a, b), w)), [a, b]) < TOL
        assert grad_check(lambda a, b: ops.sum(ops.mul(ops.add(a, b), w)), [a, b]) < TOL

    def test_reductions_and_shapes(self, rng):
        x = T(rng, 2, 3, 4)
        assert grad_check(lambda x: weighted(ops.sum(x, axis=1), rng_fixed(5)), [x]) < TOL
        assert grad_check(lambda x: weighted(ops.mean(x, axis=2), rng_fixed(6)), [x]) < TOL
        assert grad_check(lambda x: ops.mean(ops.mul(x, x)), [x]) < TOL
        assert grad_check(lambda x: weighted(ops.reshape(x, (6, 4)), rng_fixed(7)), [x]) < TOL
        y = T(rng, 2, 3, 2)
        assert grad_check(lambda x, y: weighted(ops.concat([x, y], axis=-1), rng_fixed(8)), [x, y]) < TOL

    def test_gather_and_where(self, rng):
        x = T(rng, 2, 5, 3)
        idx = np.array([[0, 0, 1, 4, 4, 4], [2, 3, 3, 3, 1, 0]])
        assert grad_check(lambda x: weighted(ops.gather_rows(x, idx), rng_fixed(9)), [x]) < TOL
        a, b = T(rng, 2, 5, 3), T(rng, 2, 5, 3)
        m = rng.random((2, 5)) > 0.5
        assert grad_check(lambda a, b: weighted(ops.where_rows(m, a, b), rng_fixed(10)), [a, b]) < TOL

    def test_linear_conv_norm(self, rng):
        x, W, b = T(rng, 2, 5, 3), T(rng, 3, 4), T(rng, 4)
        assert grad_check(lambda x, W, b: weighted(ops.linear(x, W, b), rng_fixed(11)), [x, W, b]) < TOL
        Wc, bc = T(rng, 3, 3, 4), T(rng, 4)
        assert grad_check(lambda x, W, b: weighted(ops.conv1d(x, W, b), rng_fixed(12)), [x, Wc, bc]) < TOL
        g, beta = T(rng, 3), T(rng, 3)
        assert grad_check(lambda x, g, b: weighted(ops.layer_norm(x, g, b), rng_fixed(13)), [x, g, beta]) < TOL

    def test_embeddings(self, rng):
        table = T(rng, 6, 3)
        ids = np.array([[0, 5, 5], [2, 1, 0]])
        assert grad_check(lambda t: weighted(ops.embedding(t, ids), rng_fixed(14)), [table]) < TOL
        # keep values off bin centres, where the interpolation has kinks
        centres = np.linspace(-2, 2, 6)
        v = centres[:-1] + (centres[1] - centres[0]) * rng.uniform(0.2, 0.8, size=5)
        vals = Tensor(v.reshape(1, 5), requires_grad=True)
        assert grad_check(lambda t, v: weighted(ops.interp_embedding(t, v, -2.0, 2.0), rng_fixed(15)), [table, vals]) < TOL

    def test_losses(self, rng):
        p, t = T(rng, 2, 4, 3), T(rng, 2, 4, 3)
        mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=bool)
        # keep |p - t| away from the L1 kink
        t.value = p.value + rng.uniform(0.1, 1.0, size=p.shape) * rng.choice([-1, 1], size=p.shape)
        assert grad_check(lambda p, t: ops.l1_loss(p, t, mask), [p, t]) < TOL
        assert grad_check(lambda p, t: ops.mse_loss(p, t, mask), [p, t]) < TOL
        logits = T(rng, 5, 4)
        labels = np.array([0, 3, 1, 1, 2])
        assert grad_check(lambda z: ops.softmax_cross_entropy(z, labels), [logits]) < TOL

    def test_quadratic_exact(self):
        # f(x) = sum(x^2): analytic 2x, central difference is exact up to rounding
        x = Tensor(np.linspace(-1, 1, 7), requires_grad=True)
        assert grad_check(lambda x: ops.sum(ops.mul(x, x)), [x]) < 1e-8

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = ops.mul(x, x)
        z = ops.sum(ops.add(y, y))
        z.backward()
        np.testing.assert_allclose(x.grad, 4 * x.value)


def rng_fixed(seed):
    return np.random.default_rng(seed)


class TestForwardValues:
    def test_conv1d_matches_direct_sum(self, rng):
        x = rng.normal(size=(1, 6, 2))
        W = rng.normal(size=(3, 2, 4))
        out = ops.conv1d(Tensor(x), Tensor(W)).value
        padded = np.pad(x[0], ((1, 1), (0, 0)))
        ref = np.array([sum(padded[t + j] @ W[j] for j in range(3)) for t in range(6)])
        np.testing.assert_allclose(out[0], ref, atol=1e-12)

    def test_layer_norm_stats(self, rng):
        x = rng.normal(3.0, 2.0, size=(4, 8))
        y = ops.layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).value
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)

    def test_interp_embedding_hits_rows_at_centres(self, rng):
        table = rng.normal(size=(5, 3))
        centres = np.linspace(-1, 1, 5)
        out = ops.interp_embedding(Tensor(table), centres, -1.0, 1.0).value
        np.testing.assert_allclose(out, table, atol=1e-12)
        clipped = ops.interp_embedding(Tensor(table), np.array([-9.0, 9.0]), -1.0, 1.0).value
        np.testing.assert_allclose(clipped, table[[0, -1]])

    def test_masked_l1_mean(self):
        p = Tensor(np.array([[1.0, 2.0], [3.0, 100.0]]))
        loss = ops.l1_loss(p, np.zeros((2, 2)), np.array([[1, 1], [1, 0]], dtype=bool))
        assert float(loss.value) == pytest.approx(2.0)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3))))
        with pytest.raises(DimensionError):
            ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(DimensionError):
            Tensor(np.zeros(3), requires_grad=True).backward()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.sum(ops.mul(x, x))
        assert y._backward is None


class TestAdam:
    def test_matches_reference_update(self):
        # independent re-derivation of the Adam recurrences
        g_seq = [np.array([0.5, -1.0]), np.array([0.1, 0.3]), np.array([-0.2, 0.0])]
        params = ParameterStore({"w": np.array([1.0, 2.0])})
        opt = Adam(lr=0.01)
        w = np.array([1.0, 2.0])
        m = v = np.zeros(2)
        for t, g in enumerate(g_seq, 1):
            params["w"].grad = g.copy()
            opt.step(params)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["w"].value, w, rtol=0, atol=1e-15)

    def test_defaults(self):
        opt = Adam()
        assert (opt.lr, opt.beta1, opt.beta2, opt.eps) == (1e-3, 0.9, 0.999, 1e-8)

    def test_converges_on_quadratic(self):
        params = ParameterStore({"x": np.array([3.0, -4.0])})
        opt = Adam(lr=0.1)
        for _ in range(500):
            params.zero_grad()
            ops.sum(ops.mul(params["x"], params["x"])).backward()
            opt.step(params)
        assert np.abs(params["x"].value).max() < 1e-2


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = ParameterStore({"a": np.arange(6.0).reshape(2, 3), "b": np.array([0.1])})
        opt = Adam()
        params["a"].grad = np.ones((2, 3))
        params["b"].grad = np.ones(1)
        opt.step(params)
        path = tmp_path / "ck.json"
        save_checkpoint(path, params, optimizer=opt, rng_state={"seed": 3}, step=1, extra={"k": "v"})
        ck = load_checkpoint(path)
        assert ck.params.digest() == params.digest()
        assert ck.optimizer.step_count == 1
        np.testing.assert_array_equal(ck.optimizer.m["a"], opt.m["a"])
        assert ck.extra == {"k": "v"} and ck.step == 1 and ck.rng_state == {"seed": 3}
        json.loads(path.read_text())

    def test_frozen_copy_is_independent(self):
        params = ParameterStore({"a": np.zeros(3)})
        frozen = params.frozen()
        params["a"].value += 1.0
        assert not frozen["a"].requires_grad
        assert frozen.digest() != params.digest()
