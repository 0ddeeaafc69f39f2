"""Dense-network engine tests against independent numerical oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfl import nn


def make_net(dims, seed, output_activation="identity", box=None):
    lo, hi = (None, None) if box is None else box
    return nn.init_net(dims, seed, output_activation, lo, hi)


def flatten_params(net):
    return np.concatenate([np.r_[l.weights.ravel(), l.bias] for l in net.layers])


def net_with_params(net, theta):
    """Rebuild a network from a flat parameter vector (finite-difference helper)."""
    layers = []
    i = 0
    for layer in net.layers:
        wsize = layer.weights.size
        w = theta[i : i + wsize].reshape(layer.weights.shape)
        i += wsize
        b = theta[i : i + layer.bias.size]
        i += layer.bias.size
        layers.append(nn.Layer(w, b, layer.activation, layer.box_lo, layer.box_hi))
    return nn.DenseNet(tuple(layers))


def relative_error(a, b, floor=1e-3):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestForward:
    def test_identity_layer_passes_through(self):
        net = nn.DenseNet((nn.Layer(np.eye(2), np.zeros(2), "identity"),))
        assert np.allclose(nn.forward(net, [3.0, -1.0]), [3.0, -1.0])

    def test_zero_weights_return_bias(self):
        b = np.array([0.5, -2.0, 7.0])
        net = nn.DenseNet((nn.Layer(np.zeros((3, 4)), b, "identity"),))
        assert np.allclose(nn.forward(net, [1.0, 2.0, 3.0, 4.0]), b)

    def test_two_layer_tanh_matches_hand_composition(self):
        # Oracle: explicit affine + tanh chain written out by hand.
        net = make_net([3, 5, 2], seed=42)
        x = np.array([0.3, -1.2, 0.8])
        w1, b1 = net.layers[0].weights, net.layers[0].bias
        w2, b2 = net.layers[1].weights, net.layers[1].bias
        expected = w2 @ np.tanh(w1 @ x + b1) + b2
        assert np.allclose(nn.forward(net, x), expected, rtol=0, atol=1e-14)

    def test_bounded_output_stays_in_box(self):
        lo = np.array([-1.0, 0.0])
        hi = np.array([1.0, 10.0])
        net = make_net([3, 8, 2], seed=7, output_activation="bounded", box=(lo, hi))
        rng = np.random.default_rng(0)
        for _ in range(50):
            y = nn.forward(net, rng.normal(0, 50, size=3))
            assert np.all(y > lo) and np.all(y < hi)

    def test_dimension_mismatch_raises(self):
        net = make_net([3, 2], seed=0)
        with pytest.raises(ValueError):
            nn.forward(net, [1.0, 2.0])

    def test_non_finite_input_raises(self):
        net = make_net([2, 2], seed=0)
        with pytest.raises(ValueError):
            nn.forward(net, [np.nan, 0.0])

    def test_forward_deterministic(self):
        net = make_net([4, 6, 3], seed=11)
        x = np.random.default_rng(1).normal(size=4)
        a = nn.forward(net, x)
        b = nn.forward(net, x)
        assert np.array_equal(a, b)


class TestGradParams:
    def test_zero_upstream_gives_zero_gradient(self):
        net = make_net([3, 4, 2], seed=5)
        g = nn.grad_params(net, np.ones(3), np.zeros(2))
        assert all(np.all(dw == 0) for dw in g.weights)
        assert all(np.all(db == 0) for db in g.biases)

    def test_linear_layer_closed_form(self):
        # For a single identity layer, d(u . (Wx + b)) = (outer(u, x), u).
        net = make_net([3, 2], seed=9)
        x = np.array([1.0, -2.0, 0.5])
        u = np.array([0.3, 0.7])
        g = nn.grad_params(net, x, u)
        assert np.allclose(g.weights[0], np.outer(u, x))
        assert np.allclose(g.biases[0], u)

    @pytest.mark.parametrize("dims", [[6, 64, 11], [11, 64, 6], [1, 1]])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_central_finite_differences(self, dims, seed):
        net = make_net(dims, seed=seed)
        rng = np.random.default_rng(seed + 1000)
        x = rng.normal(size=dims[0])
        u = rng.normal(size=dims[-1])
        g = nn.grad_params(net, x, u)
        analytic = np.concatenate(
            [np.r_[dw.ravel(), db] for dw, db in zip(g.weights, g.biases)]
        )
        theta = flatten_params(net)
        h = 1e-5
        fd = np.empty_like(theta)
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fp = u @ nn.forward(net_with_params(net, tp), x)
            fm = u @ nn.forward(net_with_params(net, tm), x)
            fd[i] = (fp - fm) / (2 * h)
        assert np.max(relative_error(analytic, fd)) <= 1e-5


class TestJacobianInput:
    def test_single_linear_layer_returns_weight_matrix(self):
        net = make_net([4, 3], seed=2)
        x = np.zeros(4)
        assert np.allclose(nn.jacobian_input(net, x), net.layers[0].weights)

    def test_stacked_linear_layers_compose(self):
        w1 = np.random.default_rng(3).normal(size=(3, 4))
        w2 = np.random.default_rng(4).normal(size=(2, 3))
        net = nn.DenseNet(
            (
                nn.Layer(w1, np.zeros(3), "identity"),
                nn.Layer(w2, np.zeros(2), "identity"),
            )
        )
        assert np.allclose(nn.jacobian_input(net, np.ones(4)), w2 @ w1)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_directional_finite_differences(self, seed):
        net = make_net([5, 16, 4], seed=seed)
        rng = np.random.default_rng(seed + 77)
        x = rng.normal(size=5)
        J = nn.jacobian_input(net, x)
        h = 1e-5
        for _ in range(6):
            v = rng.normal(size=5)
            v /= np.linalg.norm(v)
            fd = (nn.forward(net, x + h * v) - nn.forward(net, x - h * v)) / (2 * h)
            assert np.max(relative_error(J @ v, fd)) <= 1e-5

    def test_batch_jacobians_match_single(self):
        net = make_net([4, 8, 3], seed=1)
        X = np.random.default_rng(8).normal(size=(6, 4))
        batch = nn.batch_input_jacobians(net, X)
        for i in range(6):
            assert np.allclose(batch[i], nn.jacobian_input(net, X[i]))


class TestInducedNorm:
    def test_identity(self):
        assert nn.induced_l2_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-10)

    def test_diagonal(self):
        assert nn.induced_l2_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-9)

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(12)
        A = rng.normal(size=(6, 11))
        top = np.linalg.svd(A, compute_uv=False)[0]
        assert nn.induced_l2_norm(A) == pytest.approx(top, abs=1e-6)

    @pytest.mark.parametrize("shape", [(2, 2), (5, 3), (9, 16), (16, 16)])
    def test_svd_oracle_various_shapes(self, shape):
        rng = np.random.default_rng(shape[0] * 31 + shape[1])
        A = rng.normal(size=shape)
        top = np.linalg.svd(A, compute_uv=False)[0]
        assert abs(nn.induced_l2_norm(A) - top) <= 1e-6

    def test_lower_bounds_operator_ratio(self):
        rng = np.random.default_rng(99)
        A = rng.normal(size=(7, 7))
        estimate = nn.induced_l2_norm(A)
        for _ in range(100):
            v = rng.normal(size=7)
            assert estimate >= np.linalg.norm(A @ v) / np.linalg.norm(v) - 1e-8

    def test_empty_matrix_raises(self):
        with pytest.raises(ValueError):
            nn.induced_l2_norm(np.zeros((0, 3)))


class TestGdStep:
    def test_zero_rate_is_identity(self):
        net = make_net([3, 4, 2], seed=6)
        g = nn.grad_params(net, np.ones(3), np.ones(2))
        stepped = nn.gd_step(net, g, 0.0)
        for a, b in zip(net.layers, stepped.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)

    def test_scalar_arithmetic(self):
        net = nn.DenseNet((nn.Layer(np.array([[2.0]]), np.zeros(1), "identity"),))
        g = nn.GradientSet((np.array([[0.5]]),), (np.zeros(1),))
        stepped = nn.gd_step(net, g, 0.01)
        assert stepped.layers[0].weights[0, 0] == pytest.approx(1.995, abs=1e-15)

    def test_trajectory_matches_scripted_descent(self):
        # Oracle: a hand-written descent loop on f(W, b) = ||W x + b - y||^2.
        rng = np.random.default_rng(21)
        x = rng.normal(size=3)
        y = rng.normal(size=2)
        w0 = rng.normal(size=(2, 3))
        net = nn.DenseNet((nn.Layer(w0, np.zeros(2), "identity"),))
        w_ref = w0.copy()
        b_ref = np.zeros(2)
        alpha = 0.05
        for _ in range(25):
            resid = nn.forward(net, x) - y
            g = nn.grad_params(net, x, 2 * resid)
            net = nn.gd_step(net, g, alpha)
            resid_ref = w_ref @ x + b_ref - y
            w_ref = w_ref - alpha * np.outer(2 * resid_ref, x)
            b_ref = b_ref - alpha * 2 * resid_ref
            assert np.allclose(net.layers[0].weights, w_ref, atol=1e-12)
            assert np.allclose(net.layers[0].bias, b_ref, atol=1e-12)

    def test_shape_mismatch_raises(self):
        net = make_net([3, 2], seed=0)
        bad = nn.GradientSet((np.zeros((2, 2)),), (np.zeros(2),))
        with pytest.raises(ValueError):
            nn.gd_step(net, bad, 0.1)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        net = make_net([2, 3], seed=4)
        state = nn.adam_init_for_net(net)
        stepped, new_state = nn.adam_step(net, nn.zero_gradients(net), state, 0.1)
        assert np.array_equal(stepped.layers[0].weights, net.layers[0].weights)
        assert new_state.step == 1

    def test_first_step_magnitude(self):
        # First bias-corrected step has magnitude ~eta regardless of |g|.
        net = nn.DenseNet((nn.Layer(np.array([[2.0]]), np.zeros(1), "identity"),))
        g = nn.GradientSet((np.array([[0.37]]),), (np.zeros(1),))
        eta = 0.05
        stepped, _ = nn.adam_step(net, g, nn.adam_init_for_net(net), eta)
        delta = abs(stepped.layers[0].weights[0, 0] - 2.0)
        assert delta == pytest.approx(eta, rel=1e-6)

    def test_converges_on_quadratic_and_matches_scripted_adam(self):
        # Oracle: an independently scripted Adam loop on f(t) = (t - 3)^2.
        # The oracle trajectory dips close to the optimum and then rings with
        # a bounded envelope; we assert bitwise agreement plus convergence of
        # the distance well below the starting gap.
        theta = np.array([[0.0]])
        net = nn.DenseNet((nn.Layer(theta, np.zeros(1), "identity"),))
        state = nn.adam_init_for_net(net)
        t_ref = 0.0
        m = v = 0.0
        eta, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        distances = []
        for k in range(1, 51):
            w = net.layers[0].weights[0, 0]
            g_val = 2 * (w - 3.0)
            grads = nn.GradientSet(
                (np.array([[g_val]]),), (np.zeros(1),)
            )
            net, state = nn.adam_step(net, grads, state, eta)
            g_ref = 2 * (t_ref - 3.0)
            m = b1 * m + (1 - b1) * g_ref
            v = b2 * v + (1 - b2) * g_ref * g_ref
            t_ref = t_ref - eta * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
            assert net.layers[0].weights[0, 0] == pytest.approx(t_ref, abs=1e-12)
            distances.append(abs(net.layers[0].weights[0, 0] - 3.0))
        assert distances[-1] < 0.1 * 3.0
        assert min(distances) < 0.01


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        lo = np.array([-1.0] * 3)
        hi = np.array([1.0] * 3)
        net = make_net([4, 16, 3], seed=13, output_activation="bounded", box=(lo, hi))
        path = tmp_path / "model.dnet"
        nn.save_net(net, path)
        loaded = nn.load_net(path)
        assert len(loaded.layers) == len(net.layers)
        for a, b in zip(net.layers, loaded.layers):
            assert a.activation == b.activation
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
        x = np.random.default_rng(3).normal(size=4)
        assert np.array_equal(nn.forward(net, x), nn.forward(loaded, x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            nn.load_net(path)


class TestInvariants:
    def test_init_is_seed_deterministic(self):
        a = make_net([5, 8, 2], seed=123)
        b = make_net([5, 8, 2], seed=123)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)

    def test_dimension_chain_enforced(self):
        with pytest.raises(ValueError):
            nn.DenseNet(
                (
                    nn.Layer(np.zeros((3, 2)), np.zeros(3), "tanh"),
                    nn.Layer(np.zeros((2, 4)), np.zeros(2), "identity"),
                )
            )

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_gate_step_norm_shrinks_with_smaller_rate(self, seed):
        net = make_net([3, 4, 2], seed=seed)
        rng = np.random.default_rng(seed)
        g = nn.grad_params(net, rng.normal(size=3), rng.normal(size=2))
        if g.squared_norm() == 0:
            return
        big = nn.gd_step(net, g, 0.01)
        small = nn.gd_step(net, g, 0.0099)
        def dist(a, b):
            return sum(
                float(np.sum((la.weights - lb.weights) ** 2) + np.sum((la.bias - lb.bias) ** 2))
                for la, lb in zip(a.layers, b.layers)
            )
        assert dist(small, net) < dist(big, net)
