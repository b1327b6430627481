"""Autodiff core: forward oracles against scipy/numpy, gradients against
central finite differences."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from sketchgen.nn import Tensor, check_gradients, projection_loss
from sketchgen.nn import tensor as T

TOL = 1e-4


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def check(build_loss, inputs):
    assert check_gradients(build_loss, inputs) < TOL


class TestElementwise:
    def test_add_mul_broadcast(self, rng):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4)
        check(lambda: projection_loss(a * 2.0 + b * a - 1.5), [a, b])

    def test_div_pow(self, rng):
        a = leaf(rng, 5)
        b = Tensor(rng.uniform(0.5, 2.0, size=5), requires_grad=True)
        check(lambda: projection_loss(a / b + b**3), [a, b])

    def test_exp_log_sqrt(self, rng):
        a = Tensor(rng.uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
        check(lambda: projection_loss(T.log(a) + T.sqrt(a) + T.exp(a * 0.1)), [a])

    def test_sigmoid_tanh_lrelu(self, rng):
        a = leaf(rng, 4, 3)
        check(
            lambda: projection_loss(T.sigmoid(a) + T.tanh(a) + T.leaky_relu(a, 0.2)),
            [a],
        )

    def test_abs(self, rng):
        a = Tensor(rng.uniform(0.2, 1.0, size=6) * rng.choice([-1, 1], size=6))
        a.requires_grad = True
        check(lambda: T.absval(a).sum(), [a])

    def test_clip_gradient_masks_saturated(self):
        a = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
        T.clip(a, 0.0, 1.0).sum().backward()
        np.testing.assert_array_equal(a.grad, [0.0, 1.0, 0.0])

    def test_sum_mean_axes(self, rng):
        a = leaf(rng, 2, 3, 4)
        check(lambda: projection_loss(a.sum(axis=(0, 2), keepdims=True)), [a])
        check(lambda: a.mean(axis=1).sum(), [a])

    def test_mean_matches_numpy(self, rng):
        a = leaf(rng, 3, 5)
        np.testing.assert_allclose(a.mean(axis=0).data, a.data.mean(axis=0))


class TestGraph:
    def test_reused_node_accumulates(self, rng):
        a = leaf(rng, 3)
        b = a * a  # a used twice
        check(lambda: (a * a).sum() + (a * 3.0).sum(), [a])
        b.sum().backward()
        np.testing.assert_allclose(b.grad, np.ones(3))

    def test_no_grad_builds_no_graph(self, rng):
        a = leaf(rng, 3)
        with T.no_grad():
            out = a * 2.0
        assert not out.requires_grad
        assert out._backward is None

    def test_backward_requires_scalar(self, rng):
        a = leaf(rng, 3)
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_detach_blocks_gradient(self, rng):
        a = leaf(rng, 3)
        (a.detach() * a).sum().backward()
        np.testing.assert_allclose(a.grad, a.data)


class TestMatmulSoftmax:
    def test_matmul_2d(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        np.testing.assert_allclose(T.matmul(a, b).data, a.data @ b.data)
        check(lambda: projection_loss(T.matmul(a, b)), [a, b])

    def test_matmul_batched(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
        check(lambda: projection_loss(T.matmul(a, b)), [a, b])

    def test_matmul_batched_by_2d(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        check(lambda: projection_loss(T.matmul(a, b)), [a, b])

    def test_softmax_forward_rows_sum_to_one(self, rng):
        a = leaf(rng, 3, 7)
        out = T.softmax(a, axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(3))
        e = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
        np.testing.assert_allclose(out.data, e / e.sum(axis=-1, keepdims=True))

    def test_softmax_gradient(self, rng):
        a = leaf(rng, 2, 5)
        check(lambda: projection_loss(T.softmax(a, axis=-1)), [a])

    def test_softmax_shift_invariant(self, rng):
        a = leaf(rng, 4)
        np.testing.assert_allclose(
            T.softmax(a).data, T.softmax(a + 1000.0).data, atol=1e-12
        )


def conv_oracle(x, w, stride=1):
    """Per-channel scipy valid correlation, then stride subsampling."""
    kh, kw, cin, cout = w.shape
    out = []
    for co in range(cout):
        acc = np.zeros((x.shape[0] - kh + 1, x.shape[1] - kw + 1))
        for ci in range(cin):
            acc += signal.correlate2d(x[:, :, ci], w[:, :, ci, co], mode="valid")
        out.append(acc[::stride, ::stride])
    return np.stack(out, axis=-1)


class TestConv:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("kernel", [1, 3])
    def test_forward_matches_scipy(self, rng, stride, kernel):
        x = rng.normal(size=(7, 6, 3))
        w = rng.normal(size=(kernel, kernel, 3, 2))
        got = T.conv2d(Tensor(x), Tensor(w), stride=stride).data
        np.testing.assert_allclose(got, conv_oracle(x, w, stride), atol=1e-12)

    def test_forward_batched(self, rng):
        x = rng.normal(size=(2, 5, 5, 2))
        w = rng.normal(size=(3, 3, 2, 4))
        got = T.conv2d(Tensor(x), Tensor(w)).data
        for i in range(2):
            np.testing.assert_allclose(got[i], conv_oracle(x[i], w), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, rng, stride):
        x = leaf(rng, 2, 5, 6, 2)
        w = leaf(rng, 3, 3, 2, 3)
        check(lambda: projection_loss(T.conv2d(x, w, stride=stride)), [x, w])

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            T.conv2d(leaf(rng, 4, 4, 3), leaf(rng, 3, 3, 2, 1))


class TestSpatial:
    def test_pad_reflect_matches_numpy(self, rng):
        x = rng.normal(size=(2, 5, 4, 3))
        got = T.pad_reflect(Tensor(x), 2).data
        want = np.pad(x, ((0, 0), (2, 2), (2, 2), (0, 0)), mode="reflect")
        np.testing.assert_array_equal(got, want)

    def test_pad_reflect_gradient(self, rng):
        x = leaf(rng, 4, 5, 2)
        check(lambda: projection_loss(T.pad_reflect(x, 2)), [x])

    def test_pad_zero_gradient(self, rng):
        x = leaf(rng, 3, 4, 2)
        check(lambda: projection_loss(T.pad_zero(x, ((1, 2), (0, 3)))), [x])

    def test_crop_place_roundtrip(self, rng):
        x = rng.normal(size=(6, 6, 2))
        cropped = T.crop(Tensor(x), 1, 4, 2, 5)
        np.testing.assert_array_equal(cropped.data, x[1:4, 2:5])
        placed = T.place(cropped, 1, 2, 6, 6)
        want = np.zeros_like(x)
        want[1:4, 2:5] = x[1:4, 2:5]
        np.testing.assert_array_equal(placed.data, want)

    def test_crop_gradient(self, rng):
        x = leaf(rng, 5, 5, 2)
        check(lambda: projection_loss(T.crop(x, 1, 4, 0, 3)), [x])

    def test_place_out_of_bounds_raises(self, rng):
        with pytest.raises(ValueError):
            T.place(leaf(rng, 4, 4, 1), 3, 0, 6, 6)

    def test_upsample2x_forward(self):
        x = Tensor(np.arange(4.0).reshape(2, 2, 1))
        got = T.upsample2x(x).data[:, :, 0]
        want = np.array(
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], dtype=float
        )
        np.testing.assert_array_equal(got, want)

    def test_upsample2x_gradient(self, rng):
        x = leaf(rng, 2, 3, 3, 2)
        check(lambda: projection_loss(T.upsample2x(x)), [x])

    def test_concat_gradient(self, rng):
        a, b = leaf(rng, 3, 3, 2), leaf(rng, 3, 3, 1)
        check(lambda: projection_loss(T.concat([a, b], axis=-1)), [a, b])


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 6))
def test_unbroadcast_inverts_broadcast(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(rows, 1)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, cols)), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_allclose(a.grad, np.full((rows, 1), float(cols)))
    np.testing.assert_allclose(b.grad, np.full((1, cols), float(rows)))
