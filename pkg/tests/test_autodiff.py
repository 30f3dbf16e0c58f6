"""Tensor ops, recorded gradients, and the finite-difference harness."""
import numpy as np
import pytest

from sketchfill.autodiff import (
    Graph,
    ShapeError,
    Tensor,
    absval,
    add,
    backprop,
    bilinear_resize,
    broadcast_channel,
    channel_mean,
    channel_stats,
    concat_channels,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    mean_all,
    mul,
    sigmoid,
    square,
    sub,
    sum_all,
)
from sketchfill.gradcheck import grad_check
from conftest import conv_oracle, conv_transpose_oracle


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        y = conv2d(x, w, b, 1, 0)
        assert y.shape == (1, 1, 3, 3)
        assert np.array_equal(y.data, np.ones((1, 1, 3, 3)))

    def test_full_window_sum(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        w = Tensor(np.ones((1, 1, 2, 2)))
        y = conv2d(x, w, Tensor(np.zeros(1)), 1, 0)
        assert y.shape == (1, 1, 1, 1)
        assert y.data.reshape(()) == 10.0

    def test_randomized_matches_oracle(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1)
        assert np.abs(y.data - conv_oracle(x, w, b, 2, 1)).max() < 1e-12

    def test_channel_mismatch_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((1, 3, 3, 3)))
        with pytest.raises(ShapeError, match="channel"):
            conv2d(x, w, Tensor(np.zeros(1)), 1, 1)

    def test_kernel_larger_than_input_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 2, 2)))
        w = Tensor(rng.standard_normal((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            conv2d(x, w, Tensor(np.zeros(1)), 1, 0)


class TestConvTranspose2d:
    def test_adjoint_identity(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        k = rng.standard_normal((4, 3, 3, 3))
        y = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(4)), 1, 1)
        probe = rng.standard_normal(y.shape)
        back = conv_transpose2d(Tensor(probe), Tensor(k), Tensor(np.zeros(3)), 1, 1)
        assert abs((y.data * probe).sum() - (x * back.data).sum()) < 1e-10

    def test_single_value_broadcast(self):
        x = Tensor(np.full((1, 1, 1, 1), 2.0))
        w = Tensor(np.ones((1, 1, 2, 2)))
        y = conv_transpose2d(x, w, Tensor(np.zeros(1)), 1, 0)
        assert y.shape == (1, 1, 2, 2)
        assert np.array_equal(y.data, np.full((1, 1, 2, 2), 2.0))

    def test_randomized_matches_scatter_oracle(self, rng):
        y = rng.standard_normal((2, 4, 4, 4))
        w = rng.standard_normal((4, 3, 4, 4))
        b = rng.standard_normal(3)
        out = conv_transpose2d(Tensor(y), Tensor(w), Tensor(b), 2, 1)
        ref = conv_transpose_oracle(y, w, b, 2, 1)
        assert out.shape == ref.shape
        assert np.abs(out.data - ref).max() < 1e-12


class TestChannelStats:
    def test_constant(self):
        st = channel_stats(np.full((1, 3, 4, 4), 5.0), 1e-5)
        assert np.allclose(st.mean, 5.0) and np.allclose(st.std, 0.0)

    def test_two_point(self):
        st = channel_stats(np.array([1.0, 3.0]).reshape(1, 1, 1, 2), 1e-5)
        assert st.mean[0, 0] == 2.0 and st.std[0, 0] == 1.0

    def test_matches_two_pass_oracle(self, rng):
        x = rng.standard_normal((1, 4, 6, 6))
        st = channel_stats(x, 1e-5)
        for c in range(4):
            vals = x[0, c].ravel()
            m = vals.sum() / vals.size
            v = ((vals - m) ** 2).sum() / vals.size
            assert abs(st.mean[0, c] - m) < 1e-12
            assert abs(st.std[0, c] - np.sqrt(v)) < 1e-12

    def test_bad_epsilon(self, rng):
        with pytest.raises(ValueError):
            channel_stats(rng.standard_normal((1, 1, 2, 2)), 0.0)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.zeros((1, 1, 1, 1)))).data.reshape(()) == 0.5

    def test_channel_mean(self):
        x = Tensor(np.array([3.0, 6.0, 9.0]).reshape(1, 3, 1, 1))
        assert channel_mean(x).data.reshape(()) == 6.0

    def test_concat_preserves_order(self, rng):
        a = Tensor(rng.standard_normal((1, 2, 4, 4)))
        b = Tensor(rng.standard_normal((1, 1, 4, 4)))
        cat = concat_channels([a, b])
        assert cat.shape == (1, 3, 4, 4)
        assert np.array_equal(cat.data[:, :2], a.data)
        assert np.array_equal(cat.data[:, 2:], b.data)

    def test_broadcast_channel(self, rng):
        a = Tensor(rng.standard_normal((2, 1, 3, 3)))
        out = broadcast_channel(a, 5)
        assert out.shape == (2, 5, 3, 3)
        assert np.array_equal(out.data[:, 3], a.data[:, 0])

    def test_incompatible_shapes_rejected(self, rng):
        a = Tensor(rng.standard_normal((1, 2, 4, 4)))
        b = Tensor(rng.standard_normal((1, 2, 5, 4)))
        with pytest.raises(ShapeError):
            add(a, b)

    def test_finite_outputs(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 8, 8)) * 500.0)
        assert np.all(np.isfinite(sigmoid(x).data))
        assert np.all(np.isfinite(leaky_relu(x, 0.2).data))


class TestBackward:
    def test_square(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        out = sum_all(mul(w, w))
        backprop(out)
        assert w.grad[0] == 6.0

    def test_product_gradient_is_other_factor(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        backprop(sum_all(mul(a, b)))
        assert np.array_equal(a.grad, b.data)
        assert np.array_equal(b.grad, a.data)

    def test_accumulation_and_reset(self):
        g = Graph({"w": Tensor(np.array([2.0]))})
        w = g["w"]
        grads = g.backward(sum_all(mul(w, w)))
        assert grads["w"][0] == 4.0
        g.backward(sum_all(mul(w, w)))
        assert w.grad[0] == 8.0  # accumulates without reset
        g.zero_grad()
        assert np.array_equal(w.grad, np.zeros(1))

    def test_unreachable_parameter_gets_zeros(self):
        g = Graph({"used": Tensor(np.array([1.0])), "idle": Tensor(np.ones(3))})
        grads = g.backward(sum_all(square(g["used"])))
        assert np.array_equal(grads["idle"], np.zeros(3))

    def test_non_scalar_rejected(self, rng):
        t = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            backprop(t)


class TestGradCheck:
    def test_quadratic_is_exact(self, rng):
        w = Tensor(rng.standard_normal(5))
        err = grad_check(lambda p: sum_all(square(p[0])), [w])
        assert err < 1e-10

    def test_sigmoid_chain(self, rng):
        w = Tensor(rng.standard_normal((1, 2, 4, 4)))
        err = grad_check(lambda p: mean_all(sigmoid(sigmoid(p[0]))), [w])
        assert err < 1e-6

    def test_nonfinite_reports_failure(self):
        w = Tensor(np.array([1.0]))
        err = grad_check(lambda p: Tensor(np.array([np.nan])), [w])
        assert err == np.inf

    def test_bilinear_resize_and_abs(self, rng):
        w = Tensor(rng.standard_normal((1, 2, 6, 6)))
        err = grad_check(lambda p: mean_all(absval(bilinear_resize(p[0], 4, 9))), [w])
        assert err <= 1e-6


def test_batched_graph_determinism(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))

    def run():
        xt = Tensor(x.copy(), requires_grad=True)
        out = mean_all(square(conv2d(xt, Tensor(w.copy()), Tensor(np.zeros(4)), 1, 1)))
        backprop(out)
        return out.data.copy(), xt.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_normalization_core_statistics(rng):
    # standardized features: per-channel mean ~ 0, std ~ sigma/sqrt(sigma^2+eps)
    eps = 1e-5
    x = rng.standard_normal((2, 4, 8, 8)) * rng.uniform(1.0, 3.0, (1, 4, 1, 1))
    st = channel_stats(x, eps)
    xt = Tensor(x)
    from sketchfill.autodiff import add_const, div, spatial_mean, sqrt

    mu = spatial_mean(xt)
    centered = sub(xt, mu)
    var = spatial_mean(square(centered))
    core = div(centered, sqrt(add_const(var, eps)))
    st2 = channel_stats(core, eps)
    assert np.abs(st2.mean).max() < 1e-10
    expected = st.std / np.sqrt(st.std**2 + eps)
    assert np.abs(st2.std - expected).max() < 1e-9
