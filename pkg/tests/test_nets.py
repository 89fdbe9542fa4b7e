import json
import math

import numpy as np
import pytest

from fisherdyn.nets import (AdamState, GruSpec, LayerSpec,
                            LearnedDynamicsModel, NetworkParams,
                            PhysicsGuardBounds, adam_step, gru_backward,
                            gru_forward, gru_forward_cache, init_adam,
                            init_gru, init_network, mish, mlp_forward,
                            mlp_forward_cache, mlp_input_jacobian,
                            mlp_param_gradient, mlp_vjp, physics_guard,
                            physics_guard_derivative)
from fisherdyn.numerics import central_difference_jacobian


def fd_param_gradient(params, inputs, targets, entries, h=1e-6):
    """Central differences of the batch MSE loss over chosen parameter entries."""
    def loss():
        y = mlp_forward(params, inputs)
        return float(np.mean(np.sum((y - targets) ** 2, axis=1)))

    out = []
    for arr, idx in entries:
        old = arr[idx]
        step = h * max(1.0, abs(old))
        arr[idx] = old + step
        lp = loss()
        arr[idx] = old - step
        lm = loss()
        arr[idx] = old
        out.append((lp - lm) / (2 * step))
    return out


class TestForward:
    def test_zero_net_is_zero(self):
        params = init_network(3, (LayerSpec(4, "tanh"), LayerSpec(2, "linear")))
        for w in params.weights:
            w[:] = 0.0
        assert np.allclose(mlp_forward(params, np.array([1.0, -2.0, 0.5])), 0.0)

    def test_identity_layer(self):
        params = init_network(3, (LayerSpec(3, "linear"),))
        params.weights[0][:] = np.eye(3)
        x = np.array([0.3, -0.7, 2.0])
        assert np.allclose(mlp_forward(params, x), x)

    def test_hand_composition(self):
        params = init_network(2, (LayerSpec(2, "tanh"), LayerSpec(1, "linear")))
        params.weights[0][:] = [[0.1, 0.2], [-0.3, 0.4]]
        params.biases[0][:] = [0.05, -0.05]
        params.weights[1][:] = [[0.5, -0.6]]
        params.biases[1][:] = [0.1]
        x = np.array([0.3, 0.7])
        h1 = math.tanh(0.1 * 0.3 + 0.2 * 0.7 + 0.05)
        h2 = math.tanh(-0.3 * 0.3 + 0.4 * 0.7 - 0.05)
        expect = 0.5 * h1 - 0.6 * h2 + 0.1
        assert mlp_forward(params, x)[0] == pytest.approx(expect, abs=1e-12)

    def test_batched_matches_single(self):
        params = init_network(4, (LayerSpec(8, "mish"), LayerSpec(3, "linear")), seed=3)
        xs = np.random.default_rng(0).normal(size=(10, 4))
        batched = mlp_forward(params, xs)
        for i in range(10):
            assert np.allclose(batched[i], mlp_forward(params, xs[i]))

    def test_dimension_mismatch(self):
        params = init_network(3, (LayerSpec(2, "linear"),))
        with pytest.raises(ValueError):
            mlp_forward(params, np.zeros(4))


class TestParamGradient:
    def test_perfect_fit_zero_gradient(self):
        params = init_network(2, (LayerSpec(3, "tanh"), LayerSpec(2, "linear")), seed=1)
        xs = np.random.default_rng(1).normal(size=(5, 2))
        targets = mlp_forward(params, xs)
        loss, grads = mlp_param_gradient(params, xs, targets)
        assert loss == pytest.approx(0.0, abs=1e-28)
        for dw, db in grads:
            assert np.allclose(dw, 0.0, atol=1e-13)
            assert np.allclose(db, 0.0, atol=1e-13)

    def test_single_linear_neuron(self):
        params = init_network(1, (LayerSpec(1, "linear"),))
        params.weights[0][:] = 1.0
        loss, grads = mlp_param_gradient(params, np.array([[1.0]]), np.array([[0.0]]))
        assert loss == pytest.approx(1.0)
        assert grads[0][0][0, 0] == pytest.approx(2.0)

    @pytest.mark.parametrize("act", ["tanh", "sigmoid", "mish", "relu"])
    def test_gradient_vs_finite_difference(self, act):
        rng = np.random.default_rng(hash(act) % 2**32)
        params = init_network(3, (LayerSpec(16, act), LayerSpec(12, act),
                                  LayerSpec(2, "linear")), seed=5)
        xs = rng.normal(size=(20, 3))
        targets = rng.normal(size=(20, 2))
        if act == "relu":  # keep away from the kink
            xs = xs + 0.05
        _, grads = mlp_param_gradient(params, xs, targets)
        flat_p = params.param_list()
        flat_g = [a for dw_db in grads for a in dw_db]
        entries = []
        for _ in range(50):
            k = rng.integers(len(flat_p))
            idx = tuple(rng.integers(s) for s in flat_p[k].shape)
            entries.append((k, idx))
        fd = fd_param_gradient(params, xs, targets, [(flat_p[k], i) for k, i in entries])
        for (k, idx), fd_val in zip(entries, fd):
            an = flat_g[k][idx]
            assert abs(an - fd_val) <= 1e-5 * max(abs(an), abs(fd_val), 1e-6)


class TestInputJacobian:
    def test_linear_layer_columns(self):
        params = init_network(3, (LayerSpec(2, "linear"),), seed=2)
        jac = mlp_input_jacobian(params, np.array([0.1, 0.2, 0.3]), [0, 2])
        assert np.allclose(jac, params.weights[0][:, [0, 2]])

    def test_zero_net(self):
        params = init_network(3, (LayerSpec(4, "tanh"), LayerSpec(2, "linear")))
        for w in params.weights:
            w[:] = 0.0
        assert np.allclose(mlp_input_jacobian(params, np.ones(3)), 0.0)

    def test_vs_finite_difference(self):
        params = init_network(5, (LayerSpec(32, "tanh"), LayerSpec(32, "mish"),
                                  LayerSpec(3, "linear")), seed=7)
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.normal(size=5)
            analytic = mlp_input_jacobian(params, x)
            fd = central_difference_jacobian(lambda xx: mlp_forward(params, xx), x)
            assert np.linalg.norm(fd - analytic) <= 1e-6 * max(
                1.0, np.linalg.norm(analytic))


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = [np.array([1.0, 2.0]), np.array([[3.0]])]
        st = init_adam(p)
        adam_step(p, [np.zeros(2), np.zeros((1, 1))], st)
        assert np.allclose(p[0], [1.0, 2.0]) and p[1][0, 0] == 3.0
        assert st.step_count == 1

    def test_first_step_closed_form(self):
        g = np.array([0.3, -4.0])
        p = [np.zeros(2)]
        st = init_adam(p, lr=1e-2)
        adam_step(p, [g.copy()], st)
        expect = -1e-2 * g / (np.abs(g) + st.epsilon)
        assert np.allclose(p[0], expect, rtol=1e-9)

    def test_constant_gradient_asymptote(self):
        p = [np.zeros(1)]
        st = init_adam(p, lr=1e-3)
        prev = 0.0
        for _ in range(5000):
            prev = p[0][0]
            adam_step(p, [np.array([2.5])], st)
        assert abs(prev - p[0][0]) == pytest.approx(1e-3, rel=1e-3)


class TestPhysicsGuard:
    bounds = PhysicsGuardBounds(np.array([-1.0, 2.0]), np.array([1.0, 6.0]))

    def test_midpoint(self):
        assert np.allclose(physics_guard(np.zeros(2), self.bounds), [0.0, 4.0])

    def test_saturation_near_upper(self):
        out = physics_guard(np.array([20.0, 20.0]), self.bounds)
        assert np.all(self.bounds.upper - out < 1e-8)
        assert np.all(out < self.bounds.upper)

    def test_strictly_inside_for_huge_z(self):
        for z in (-1e6, -50.0, 50.0, 1e6):
            out = physics_guard(np.full(2, z), self.bounds)
            assert np.all(out > self.bounds.lower) and np.all(out < self.bounds.upper)

    def test_monotone(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            z1, z2 = sorted(rng.normal(scale=3.0, size=2))
            out1 = physics_guard(np.array([z1, z1]), self.bounds)
            out2 = physics_guard(np.array([z2, z2]), self.bounds)
            if z1 != z2:
                assert np.all(out1 < out2)

    def test_derivative_matches_fd(self):
        z = np.array([0.3, -1.2])
        h = 1e-6
        fd = (physics_guard(z + h, self.bounds) - physics_guard(z - h, self.bounds)) / (2 * h)
        assert np.allclose(physics_guard_derivative(z, self.bounds), fd, rtol=1e-6)

    def test_collapse_adjacent_bounds(self):
        b = PhysicsGuardBounds(np.array([1.0]), np.array([1.0 + 1e-6]))
        out = physics_guard(np.array([123.0]), b)
        assert 1.0 <= out[0] <= 1.0 + 1e-6

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            PhysicsGuardBounds(np.array([1.0]), np.array([1.0]))


class TestMish:
    def test_zero(self):
        assert mish(np.zeros(1))[0] == 0.0

    def test_derivative_at_zero_is_point_six(self):
        h = 1e-6
        fd = (mish(np.array([h])) - mish(np.array([-h])))[0] / (2 * h)
        assert fd == pytest.approx(0.6, abs=1e-6)


def tiny_gru():
    spec = init_gru(2, 2, seed=9)
    return spec


class TestGru:
    def test_zero_params_zero_hidden(self):
        spec = init_gru(3, 4, seed=0)
        for arr in spec.param_list():
            arr[:] = 0.0
        h = gru_forward(spec, np.random.default_rng(0).normal(size=(6, 3)))
        assert np.allclose(h, 0.0)

    def test_single_step_base_case(self):
        spec = tiny_gru()
        x = np.array([[0.4, -0.2]])
        h1 = gru_forward(spec, x)
        # manual single step from h = 0
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        z = sig(spec.Wz @ x[0] + spec.bz)
        r = sig(spec.Wr @ x[0] + spec.br)
        n = np.tanh(spec.Wn @ x[0] + spec.bn)
        assert np.allclose(h1, (1 - z) * n, atol=1e-12)

    def test_hand_unrolled_two_steps(self):
        spec = tiny_gru()
        xs = np.array([[0.4, -0.2], [-0.1, 0.3]])
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        h = np.zeros(2)
        for x in xs:
            z = sig(spec.Wz @ x + spec.Uz @ h + spec.bz)
            r = sig(spec.Wr @ x + spec.Ur @ h + spec.br)
            n = np.tanh(spec.Wn @ x + spec.Un @ (r * h) + spec.bn)
            h = (1 - z) * n + z * h
        assert np.allclose(gru_forward(spec, xs), h, atol=1e-12)

    def test_backward_vs_finite_difference(self):
        spec = init_gru(3, 5, seed=11)
        rng = np.random.default_rng(11)
        hist = rng.normal(size=(4, 6, 3))
        w = rng.normal(size=(4, 5))  # random linear functional of h_final

        def loss():
            return float(np.sum(w * gru_forward(spec, hist)))

        h_final, cache = gru_forward_cache(spec, hist)
        grads = gru_backward(spec, cache, w)
        params = spec.param_list()
        for k in range(len(params)):
            arr, ga = params[k], grads[k]
            for _ in range(4):
                idx = tuple(rng.integers(s) for s in arr.shape)
                old = arr[idx]
                h = 1e-6
                arr[idx] = old + h
                lp = loss()
                arr[idx] = old - h
                lm = loss()
                arr[idx] = old
                fd = (lp - lm) / (2 * h)
                assert abs(fd - ga[idx]) <= 1e-5 * max(abs(fd), abs(ga[idx]), 1e-6)


class TestDeterminism:
    def test_same_seed_same_net(self):
        a = init_network(4, (LayerSpec(8, "tanh"), LayerSpec(2, "linear")), seed=21)
        b = init_network(4, (LayerSpec(8, "tanh"), LayerSpec(2, "linear")), seed=21)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        x = np.ones(4)
        assert np.array_equal(mlp_forward(a, x), mlp_forward(b, x))


class TestLearnedDynamicsModel:
    def make(self):
        params = init_network(5, (LayerSpec(16, "tanh"), LayerSpec(3, "linear")), seed=13)
        return LearnedDynamicsModel(params, 3, 2,
                                    offset=np.array([0.0, 0.0, 0.0, 2.5, 0.0]),
                                    scale=np.array([100.0, 10.0, 0.5236, 2.5, 0.5236]))

    def test_jacobian_accounts_for_scaling(self):
        model = self.make()
        s, u = np.array([3.0, -1.0, 0.2]), np.array([2.0, 0.1])
        analytic = model.jacobian(s, u)
        fd = central_difference_jacobian(lambda x, uu: model.rhs(x, uu), s, u)
        assert np.linalg.norm(fd - analytic) <= 1e-6 * max(1.0, np.linalg.norm(analytic))

    def test_checkpoint_round_trip(self, tmp_path):
        model = self.make()
        path = tmp_path / "net.json"
        model.save(path)
        loaded = LearnedDynamicsModel.load(path)
        for wa, wb in zip(model.params.weights, loaded.params.weights):
            assert np.array_equal(wa, wb)
        assert np.array_equal(model.offset, loaded.offset)
        s, u = np.array([1.0, 2.0, 0.1]), np.array([1.5, -0.2])
        assert np.array_equal(model.rhs(s, u), loaded.rhs(s, u))

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError):
            LearnedDynamicsModel.load(path)
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            LearnedDynamicsModel.load(path)
