"""Numerical-core checks: forward semantics, gradients vs central finite
differences, Adam behavior, Gaussian densities and sampling."""

import math

import numpy as np
import pytest

from dynreward.nncore import (
    AdamState,
    DiagonalGaussian,
    MlpParams,
    adam_step,
    backward,
    forward,
    forward_cached,
    gaussian_log_prob,
    gaussian_sample,
    grad_sqnorm_backward,
    gradient,
    init_mlp,
    input_gradients,
    init_adam,
    load_mlp,
    save_mlp,
)

FD_STEP = 1e-5
FD_REL_TOL = 1e-4


def fd_gradient(loss_at, params, n_coords, rng, step=FD_STEP):
    """Central finite differences on randomly chosen parameter coordinates.

    Yields (array_index, coord_index, fd_value); mutates params temporarily.
    """
    arrays = params.as_arrays()
    for _ in range(n_coords):
        k = int(rng.integers(0, len(arrays)))
        a = arrays[k]
        idx = tuple(int(rng.integers(0, s)) for s in a.shape)
        orig = a[idx]
        a[idx] = orig + step
        up = loss_at(params)
        a[idx] = orig - step
        down = loss_at(params)
        a[idx] = orig
        yield k, idx, (up - down) / (2.0 * step)


def flat_grads(dws, dbs):
    out = []
    for w, b in zip(dws, dbs):
        out.extend([w, b])
    return out


class TestForward:
    def test_zero_weights_returns_last_bias(self):
        rng = np.random.default_rng(0)
        params = init_mlp([3, 4, 2], "tanh", rng)
        for w in params.weights:
            w[:] = 0.0
        params.biases[-1][:] = [1.5, -2.5]
        out = forward(params, rng.standard_normal(3))
        np.testing.assert_allclose(out, [1.5, -2.5])

    def test_identity_linear_layer(self):
        params = MlpParams([3, 3], [np.eye(3)], [np.zeros(3)], "tanh")
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_allclose(forward(params, x), x)

    def test_matches_straight_line_arithmetic(self):
        # independent re-implementation of a 2-4-1 tanh net, scalar loops only
        rng = np.random.default_rng(42)
        params = init_mlp([2, 4, 1], "tanh", rng)
        x = np.array([0.7, -0.2])
        hidden = []
        for j in range(4):
            acc = params.biases[0][j]
            for i in range(2):
                acc += x[i] * params.weights[0][i, j]
            hidden.append(math.tanh(acc))
        expected = params.biases[1][0]
        for j in range(4):
            expected += hidden[j] * params.weights[1][j, 0]
        np.testing.assert_allclose(forward(params, x), [expected], rtol=1e-14)

    def test_dimension_mismatch_rejected(self):
        params = init_mlp([3, 2], "relu", np.random.default_rng(0))
        with pytest.raises(ValueError, match="first layer size"):
            forward(params, np.zeros(4))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        params = init_mlp([5, 8, 3], "relu", rng)
        x = rng.standard_normal((6, 5))
        np.testing.assert_array_equal(forward(params, x), forward(params, x))


class TestGradient:
    def test_constant_loss_zero_gradients(self):
        params = init_mlp([2, 3, 1], "tanh", np.random.default_rng(1))
        loss, (dws, dbs) = gradient(
            params, lambda y: (5.0, np.zeros_like(y)), np.ones((4, 2))
        )
        assert loss == 5.0
        for g in flat_grads(dws, dbs):
            np.testing.assert_array_equal(g, 0.0)

    def test_scalar_linear_squared_loss_analytic(self):
        # model y = w x + b, loss (y - t)^2: dw = 2(wx+b-t) x, db = 2(wx+b-t)
        w0, b0, x0, t0 = 0.8, -0.3, 1.7, 2.0
        params = MlpParams([1, 1], [np.array([[w0]])], [np.array([b0])], "tanh")
        _, (dws, dbs) = gradient(
            params,
            lambda y: (float(((y - t0) ** 2).sum()), 2.0 * (y - t0)),
            np.array([[x0]]),
        )
        resid = w0 * x0 + b0 - t0
        np.testing.assert_allclose(dws[0], [[2.0 * resid * x0]], rtol=1e-12)
        np.testing.assert_allclose(dbs[0], [2.0 * resid], rtol=1e-12)

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_finite_difference_agreement(self, activation):
        rng = np.random.default_rng(11)
        params = init_mlp([4, 8, 6, 2], activation, rng)
        x = rng.standard_normal((5, 4))
        target = rng.standard_normal((5, 2))

        def loss_fn(y):
            return float(((y - target) ** 2).sum()), 2.0 * (y - target)

        def loss_at(p):
            y = forward(p, x)
            return float(((y - target) ** 2).sum())

        _, (dws, dbs) = gradient(params, loss_fn, x)
        grads = flat_grads(dws, dbs)
        checked = 0
        for k, idx, fd in fd_gradient(loss_at, params, 80, rng):
            an = grads[k][idx]
            if abs(fd) < 1e-7 and abs(an) < 1e-7:
                continue  # relu kink can zero out a coordinate
            assert abs(an - fd) / max(abs(fd), 1e-8) < FD_REL_TOL
            checked += 1
            if checked >= 25:
                break
        assert checked >= 20

    def test_non_finite_loss_rejected(self):
        params = init_mlp([2, 2], "tanh", np.random.default_rng(0))
        with pytest.raises(FloatingPointError):
            gradient(params, lambda y: (float("nan"), np.zeros_like(y)), np.ones((1, 2)))

    def test_input_gradients_match_fd(self):
        rng = np.random.default_rng(3)
        params = init_mlp([3, 6, 1], "tanh", rng)
        x = rng.standard_normal((4, 3))
        _, g = input_gradients(params, x)
        h = 1e-6
        for b in range(4):
            for i in range(3):
                xp, xm = x.copy(), x.copy()
                xp[b, i] += h
                xm[b, i] -= h
                fd = (forward(params, xp)[b, 0] - forward(params, xm)[b, 0]) / (2 * h)
                assert abs(fd - g[b, i]) < 1e-6 * max(1.0, abs(fd))


class TestGradSqnormBackward:
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_penalty_gradient_matches_fd(self, activation):
        rng = np.random.default_rng(19)
        params = init_mlp([3, 7, 5, 1], activation, rng)
        x = rng.standard_normal((6, 3))
        scale = rng.uniform(0.5, 2.0, size=6)

        def pen_at(p):
            _, g = input_gradients(p, x)
            return float((scale * (g * g).sum(axis=1)).sum())

        sqnorms, (dws, dbs) = grad_sqnorm_backward(params, x, scale)
        _, g = input_gradients(params, x)
        np.testing.assert_allclose(sqnorms, (g * g).sum(axis=1), rtol=1e-12)

        grads = flat_grads(dws, dbs)
        checked = 0
        for k, idx, fd in fd_gradient(pen_at, params, 80, rng):
            an = grads[k][idx]
            if abs(fd) < 1e-6 and abs(an) < 1e-6:
                continue
            assert abs(an - fd) / max(abs(fd), abs(an), 1e-6) < FD_REL_TOL
            checked += 1
            if checked >= 25:
                break
        assert checked >= 20


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        rng = np.random.default_rng(0)
        arrays = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        state = init_adam(arrays)
        new, state2 = adam_step(arrays, [np.zeros_like(a) for a in arrays], state, 1e-2)
        for a, b in zip(arrays, new):
            np.testing.assert_array_equal(a, b)
        assert state2.t == 1

    def test_first_step_magnitude_is_lr(self):
        # bias correction makes the first update lr * sign(g) up to eps
        g = 0.37
        arrays = [np.array([1.0])]
        state = init_adam(arrays)
        new, _ = adam_step(arrays, [np.array([g])], state, lr=1e-3)
        step = float(arrays[0][0] - new[0][0])
        assert step == pytest.approx(1e-3, rel=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        arrays = [rng.standard_normal((4, 4))]
        grads = [rng.standard_normal((4, 4))]
        out1, s1 = adam_step(arrays, grads, init_adam(arrays), 1e-2)
        out2, s2 = adam_step(arrays, grads, init_adam(arrays), 1e-2)
        np.testing.assert_array_equal(out1[0], out2[0])
        assert s1.t == s2.t

    def test_shape_mismatch_rejected(self):
        arrays = [np.zeros((2, 2))]
        with pytest.raises(ValueError):
            adam_step(arrays, [np.zeros(3)], init_adam(arrays), 1e-3)


class TestDiagonalGaussian:
    def test_standard_normal_density_at_mean(self):
        dist = DiagonalGaussian(np.zeros(1), np.zeros(1))
        lp = gaussian_log_prob(dist, np.zeros(1))
        assert lp == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_mean_is_mode(self):
        rng = np.random.default_rng(2)
        dist = DiagonalGaussian(rng.standard_normal(4), rng.uniform(-1, 1, 4))
        lp_mean = gaussian_log_prob(dist, dist.mean)
        for _ in range(50):
            other = dist.mean + rng.standard_normal(4)
            assert lp_mean >= gaussian_log_prob(dist, other)

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(123)
        dist = DiagonalGaussian(np.array([1.3, -0.4]), np.log(np.array([0.5, 2.0])))
        draws = gaussian_sample(dist, rng, size=100_000)
        se = dist.std / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - dist.mean) < 3.0 * se)

    def test_log_std_clamped(self):
        dist = DiagonalGaussian(np.zeros(2), np.array([-50.0, 50.0]), bounds=(-10.0, 2.0))
        assert dist.log_std[0] == -10.0
        assert dist.log_std[1] == 2.0
        assert np.exp(-10.0) <= dist.std[0] <= np.exp(2.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        params = init_mlp([4, 6, 2], "relu", rng)
        path = tmp_path / "net.npz"
        save_mlp(path, params, extra={"in_mean": np.array([1.0, 2.0, 3.0, 4.0])})
        loaded, extra = load_mlp(path)
        assert loaded.layer_sizes == params.layer_sizes
        assert loaded.activation == params.activation
        for a, b in zip(params.as_arrays(), loaded.as_arrays()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(extra["in_mean"], [1.0, 2.0, 3.0, 4.0])
