import numpy as np
import pytest

from bottleneck_rl import nn
from bottleneck_rl.nn import (
    AdamState,
    DenseLayer,
    GraphConvLayer,
    NumericsError,
    adam_init,
    adam_step,
    dense_backward,
    dense_forward,
    dense_forward_cached,
    finite_diff_check,
    finite_diff_grads,
    graphconv_backward,
    graphconv_forward,
    graphconv_forward_cached,
    init_dense,
    init_graphconv,
)
from bottleneck_rl.obs import build_adjacency, normalize_adjacency


class TestDenseForward:
    def test_identity(self):
        layer = DenseLayer(W=np.eye(3), b=np.zeros(3), activation="linear")
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(dense_forward(x, layer), x)

    def test_hand_case(self):
        layer = DenseLayer(W=np.array([[1.0], [1.0]]), b=np.array([0.5]), activation="linear")
        np.testing.assert_allclose(dense_forward(np.array([[1.0, 2.0]]), layer), [[3.5]])

    def test_relu(self):
        layer = DenseLayer(W=np.eye(2), b=np.zeros(2), activation="relu")
        np.testing.assert_array_equal(dense_forward(np.array([[-1.0, 2.0]]), layer), [[0.0, 2.0]])

    def test_shape_mismatch(self):
        layer = DenseLayer(W=np.eye(3), b=np.zeros(3))
        with pytest.raises(ValueError):
            dense_forward(np.ones((1, 2)), layer)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_nonfinite_detected(self):
        layer = DenseLayer(W=np.eye(2), b=np.zeros(2))
        with pytest.raises(NumericsError):
            dense_forward(np.array([[np.inf, 0.0]]), layer)

    def test_batched_leading_dims(self, rng):
        layer = init_dense(4, 3, rng, "relu")
        x = rng.normal(size=(5, 2, 4))
        out = dense_forward(x, layer)
        assert out.shape == (5, 2, 3)
        np.testing.assert_allclose(out[3, 1], dense_forward(x[3, 1:2], layer)[0])


class TestGraphConvForward:
    def test_identity_propagation(self):
        layer = GraphConvLayer(W=np.eye(2), b=np.zeros(2))
        H = np.array([[1.0, 2.0], [3.0, 0.5]])
        np.testing.assert_array_equal(graphconv_forward(H, np.eye(2), layer), H)

    def test_two_node_mixing(self):
        layer = GraphConvLayer(W=np.eye(2), b=np.zeros(2))
        S = np.full((2, 2), 0.5)
        H = np.array([[2.0, 0.0], [0.0, 2.0]])
        np.testing.assert_allclose(graphconv_forward(H, S, layer), np.ones((2, 2)))

    def test_large_negative_bias_zeroes_output(self, rng):
        layer = GraphConvLayer(W=np.eye(2), b=np.full(2, -100.0))
        H = rng.uniform(0, 1, size=(3, 2))
        S = normalize_adjacency(build_adjacency(3))
        np.testing.assert_array_equal(graphconv_forward(H, S, layer), np.zeros((3, 2)))

    def test_complete_graph_is_mean_aggregation(self, rng):
        for n in range(1, 9):
            S = normalize_adjacency(build_adjacency(n))
            H = rng.normal(size=(n, 4))
            np.testing.assert_allclose(S @ H, np.tile(H.mean(axis=0), (n, 1)), atol=1e-12)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        layer = init_dense(3, 2, rng)
        out, cache = dense_forward_cached(rng.normal(size=(4, 3)), layer)
        gx, gW, gb = dense_backward(np.zeros_like(out), cache, layer)
        assert not gx.any() and not gW.any() and not gb.any()

    def test_linear_layer_weight_grad_is_input(self):
        layer = DenseLayer(W=np.zeros((3, 1)), b=np.zeros(1), activation="linear")
        x = np.array([[1.0, 2.0, 3.0]])
        _, cache = dense_forward_cached(x, layer)
        _, gW, gb = dense_backward(np.ones((1, 1)), cache, layer)
        np.testing.assert_allclose(gW, x.T)
        np.testing.assert_allclose(gb, [1.0])

    def test_backward_requires_cache(self):
        layer = DenseLayer(W=np.eye(2), b=np.zeros(2))
        with pytest.raises(ValueError):
            dense_backward(np.ones((1, 2)), None, layer)

    def test_two_layer_net_matches_finite_differences(self, rng):
        l1 = init_dense(4, 5, rng, "relu")
        l2 = init_dense(5, 1, rng, "linear")
        xs = rng.normal(size=(5, 4))
        params = {"l1.W": l1.W, "l1.b": l1.b, "l2.W": l2.W, "l2.b": l2.b}

        def loss():
            return float(dense_forward(dense_forward(xs, l1), l2).sum())

        h1, c1 = dense_forward_cached(xs, l1)
        out, c2 = dense_forward_cached(h1, l2)
        gh, gW2, gb2 = dense_backward(np.ones_like(out), c2, l2)
        _, gW1, gb1 = dense_backward(gh, c1, l1)
        analytic = {"l1.W": gW1, "l1.b": gb1, "l2.W": gW2, "l2.b": gb2}
        assert finite_diff_check(loss, params, analytic) < 1e-6

    def test_graphconv_matches_finite_differences(self, rng):
        layer = init_graphconv(3, 4, rng)
        S = normalize_adjacency(build_adjacency(4))
        H = rng.normal(size=(4, 3))
        params = {"W": layer.W, "b": layer.b}

        def loss():
            return float(graphconv_forward(H, S, layer).sum())

        out, cache = graphconv_forward_cached(H, S, layer)
        gH, gW, gb = graphconv_backward(np.ones_like(out), cache, layer)
        assert finite_diff_check(loss, params, {"W": gW, "b": gb}) < 1e-6
        # input gradient via finite differences too
        num = finite_diff_grads(loss, {"H": H})["H"]
        np.testing.assert_allclose(gH, num, atol=1e-6)


class TestAdam:
    def test_zero_grad_keeps_params(self):
        p = {"w": np.array([1.0, 2.0])}
        st = adam_init(p)
        adam_step(p, {"w": np.zeros(2)}, st, lr=1e-3)
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])
        assert st.step_count == 1

    def test_zero_lr_keeps_params(self):
        p = {"w": np.array([1.0])}
        st = adam_init(p)
        adam_step(p, {"w": np.array([0.7])}, st, lr=0.0)
        np.testing.assert_array_equal(p["w"], [1.0])

    def test_first_step_magnitude(self):
        p = {"w": np.array([0.0])}
        st = adam_init(p)
        adam_step(p, {"w": np.array([0.5])}, st, lr=1e-3)
        assert p["w"][0] == pytest.approx(-1e-3, rel=1e-6)

    def test_shape_mismatch_rejected(self):
        p = {"w": np.zeros(2)}
        st = adam_init(p)
        with pytest.raises(ValueError):
            adam_step(p, {"w": np.zeros(3)}, st, lr=1e-3)


class TestFiniteDiff:
    def test_quadratic(self):
        w = np.array([3.0])

        def f():
            return float(w[0] ** 2)

        err = finite_diff_check(f, {"w": w}, {"w": np.array([6.0])})
        assert err < 1e-8


class TestDeterminism:
    def test_forward_bit_identical(self, rng):
        layer = init_dense(6, 32, rng, "relu")
        x = rng.normal(size=(3, 6))
        a = dense_forward(x, layer)
        b = dense_forward(x.copy(), layer)
        assert np.array_equal(a, b)
