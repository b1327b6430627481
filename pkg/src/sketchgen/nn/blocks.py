"""Differentiable building blocks shared across the pipeline.

Conventions: channels-last tensors, leaky rectifier slope 0.2, reflect padding
wherever spatial dimensions must be preserved, coordinate channels normalized
to [-1, 1] with channel order (x, y).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .module import Module, param, zeros_param
from .tensor import Tensor

LEAK = 0.2


def make_coordinate_map(n_x, n_y):
    """Static coordinate grid of shape (n_y, n_x, 2).

    Channel 0 is the normalized column (x) coordinate, channel 1 the
    normalized row (y) coordinate, both spanning [-1, 1].  A degenerate axis
    (length 1) gets coordinate 0.
    """
    if n_x < 1 or n_y < 1:
        raise ValueError(f"coordinate map dims must be positive, got ({n_x}, {n_y})")
    xs = np.linspace(-1.0, 1.0, n_x) if n_x > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, n_y) if n_y > 1 else np.zeros(1)
    xv, yv = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([xv, yv], axis=-1)


class Conv2d(Module):
    """3x3 (by default) convolution with optional stride and padding mode.

    padding: "same" preserves spatial dims via reflect padding, "same_zero"
    via zero padding, "valid" pads nothing.
    """

    def __init__(self, rng, in_ch, out_ch, kernel=3, stride=1, padding="same"):
        # param() already carries the sqrt(2/fan_in) factor; this gain only
        # corrects for the leaky slope
        self.w = param(rng, kernel, kernel, in_ch, out_ch, gain=np.sqrt(1.0 / (1 + LEAK**2)))
        self.b = zeros_param(out_ch)
        self.stride = stride
        self.padding = padding
        self.kernel = kernel

    def __call__(self, x):
        p = (self.kernel - 1) // 2
        if self.padding == "same" and p > 0:
            x = T.pad_reflect(x, p)
        elif self.padding == "same_zero" and p > 0:
            x = T.pad_zero(x, ((p, p), (p, p)))
        return T.conv2d(x, self.w, stride=self.stride) + self.b


class Dense(Module):
    def __init__(self, rng, in_dim, out_dim):
        self.w = param(rng, in_dim, out_dim)
        self.b = zeros_param(out_dim)

    def __call__(self, x):
        return T.matmul(x, self.w) + self.b


class SPConv(Module):
    """Spatial-dimension-preserving convolution with appended coordinate
    channels: the input is augmented with the static (x, y) grid, reflect
    padded, and convolved at stride 1."""

    def __init__(self, rng, in_ch, out_ch, kernel=3):
        self.conv = Conv2d(rng, in_ch + 2, out_ch, kernel=kernel, stride=1, padding="same")

    def __call__(self, x):
        x = T.as_tensor(x)
        h, w = x.shape[-3], x.shape[-2]
        coords = make_coordinate_map(w, h)
        if x.ndim == 4:
            coords = np.broadcast_to(coords, (x.shape[0], h, w, 2)).copy()
        aug = T.concat([x, T.constant(coords)], axis=-1)
        return self.conv(aug)


class GatingNetwork(Module):
    """Two-layer convolutional head over the coordinate map, ending in a
    sigmoid; emits a single-channel spatial mask in (0, 1)."""

    def __init__(self, rng, hidden=16):
        self.conv1 = Conv2d(rng, 2, hidden)
        self.conv2 = Conv2d(rng, hidden, 1)

    def __call__(self, coords):
        h = T.leaky_relu(self.conv1(T.as_tensor(coords)), LEAK)
        return T.sigmoid(self.conv2(h))

    def mask_for(self, n_x, n_y):
        return self(T.constant(make_coordinate_map(n_x, n_y)))


def gated_fuse(h_out, gate_mask):
    """Positionwise product of convolved features with the gating mask,
    broadcast over channels."""
    h_out = T.as_tensor(h_out)
    gate_mask = T.as_tensor(gate_mask)
    if h_out.shape[-3:-1] != gate_mask.shape[-3:-1]:
        raise ValueError(
            f"gate mask spatial dims {gate_mask.shape[-3:-1]} do not match "
            f"features {h_out.shape[-3:-1]}"
        )
    return h_out * gate_mask


class SelfAttention(Module):
    """Scaled dot-product attention over all spatial positions with a learned
    residual scale initialized to zero (the block starts as the identity)."""

    def __init__(self, rng, channels, key_dim=None):
        key_dim = key_dim or max(1, channels // 8)
        self.wq = param(rng, channels, key_dim)
        self.wk = param(rng, channels, key_dim)
        self.wv = param(rng, channels, channels)
        self.gamma = zeros_param()
        self.key_dim = key_dim

    def __call__(self, x, return_attention=False):
        x = T.as_tensor(x)
        batched = x.ndim == 4
        h, w, c = x.shape[-3], x.shape[-2], x.shape[-1]
        n = x.shape[0] if batched else 1
        flat = x.reshape((n, h * w, c)) if batched else x.reshape((1, h * w, c))
        q = T.matmul(flat, self.wq)
        k = T.matmul(flat, self.wk)
        v = T.matmul(flat, self.wv)
        scores = T.matmul(q, k.transpose((0, 2, 1))) * (1.0 / np.sqrt(self.key_dim))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v).reshape(x.shape)
        out = x + self.gamma * ctx
        if return_attention:
            return out, attn
        return out


class ResidualBlock(Module):
    """x + f(x) with f a two-convolution leaky-rectifier stack."""

    def __init__(self, rng, channels):
        self.conv1 = Conv2d(rng, channels, channels)
        self.conv2 = Conv2d(rng, channels, channels)

    def __call__(self, x):
        x = T.as_tensor(x)
        f = self.conv2(T.leaky_relu(self.conv1(x), LEAK))
        return x + f


class SFTModulate(Module):
    """Spatial feature transform: out = gamma(cond) * features + beta(cond).

    gamma and beta come from small two-convolution heads over the condition;
    the heads can be forced to constants for identity tests (zero the final
    weights and set the bias)."""

    def __init__(self, rng, cond_ch, feat_ch, hidden=16):
        self.gamma_head1 = Conv2d(rng, cond_ch, hidden)
        self.gamma_head2 = Conv2d(rng, hidden, feat_ch)
        self.beta_head1 = Conv2d(rng, cond_ch, hidden)
        self.beta_head2 = Conv2d(rng, hidden, feat_ch)

    def __call__(self, features, condition):
        features = T.as_tensor(features)
        condition = T.as_tensor(condition)
        if features.shape[-3:-1] != condition.shape[-3:-1]:
            raise ValueError(
                f"condition spatial dims {condition.shape[-3:-1]} do not match "
                f"features {features.shape[-3:-1]}"
            )
        gamma = self.gamma_head2(T.leaky_relu(self.gamma_head1(condition), LEAK))
        beta = self.beta_head2(T.leaky_relu(self.beta_head1(condition), LEAK))
        return gamma * features + beta

    def force_identity(self):
        """Pin gamma == 1 and beta == 0 regardless of the condition."""
        self.gamma_head2.w.data[:] = 0.0
        self.gamma_head2.b.data[:] = 1.0
        self.beta_head2.w.data[:] = 0.0
        self.beta_head2.b.data[:] = 0.0


class DemodConv(Module):
    """Convolution whose kernel is demodulated per output channel
    (w / sqrt(sum w^2 + eps)), the weight-normalization trick of style-based
    decoders, without noise or style inputs."""

    def __init__(self, rng, in_ch, out_ch, kernel=3, eps=1e-8):
        self.w = param(rng, kernel, kernel, in_ch, out_ch)
        self.b = zeros_param(out_ch)
        self.eps = eps
        self.kernel = kernel

    def __call__(self, x):
        norm = T.sqrt((self.w * self.w).sum(axis=(0, 1, 2), keepdims=True) + self.eps)
        w = self.w / norm
        p = (self.kernel - 1) // 2
        if p > 0:
            x = T.pad_reflect(x, p)
        return T.conv2d(x, w) + self.b
