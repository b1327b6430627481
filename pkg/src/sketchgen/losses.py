"""Training objectives: pixel, adversarial, perceptual and style terms.

All losses accept numpy arrays or autodiff tensors and return a scalar
:class:`~sketchgen.nn.Tensor`, so they can sit directly in a training graph.
Feature-based terms take a pluggable extractor; the default is a fixed-seed
random convolutional pyramid, so no pre-trained weights are involved and every
value is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import tensor as T
from .nn.tensor import Tensor

PROB_EPS = 1e-7


def _pair(a, b):
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(generated, real) -> Tensor:
    """Mean absolute difference over all elements."""
    a, b = _pair(generated, real)
    return T.absval(a - b).mean()


def gan_loss_d(d_real, d_fake) -> Tensor:
    """Adversarial value mean(log d(real)) + mean(log(1 - d(fake))).

    The discriminator maximizes this (the trainer negates it for descent);
    it is <= 0, approaching 0 only for a perfect discriminator.  Inputs are
    clamped to [eps, 1-eps] so the logs stay finite.
    """
    r = T.clip(T.as_tensor(d_real), PROB_EPS, 1.0 - PROB_EPS)
    f = T.clip(T.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    return T.log(r).mean() + T.log(1.0 - f).mean()


def gan_loss_g(d_fake) -> Tensor:
    """Non-saturating generator loss -mean(log d(fake)); >= 0."""
    f = T.clip(T.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    return -(T.log(f).mean())


class IdentityExtractor:
    """Single tap returning the image itself; handy for closed-form tests."""

    def __call__(self, image) -> list:
        return [T.as_tensor(image)]


class RandomConvPyramid:
    """Fixed-seed random convolutional feature pyramid.

    Each stage reflect-pads, convolves 3x3 at stride 2, applies a leaky
    rectifier, and emits a tap.  Stages stop early once the spatial extent
    drops below 2, so small inputs still produce at least one tap.  Weights
    are frozen constants: the same seed always yields the same features.
    """

    def __init__(self, in_channels=3, widths=(8, 16, 32, 64), seed=0):
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.kernels = []
        self.biases = []
        cin = in_channels
        for cout in self.widths:
            std = np.sqrt(2.0 / (9 * cin))
            self.kernels.append(T.constant(rng.normal(0.0, std, size=(3, 3, cin, cout))))
            self.biases.append(T.constant(rng.normal(0.0, 0.1, size=cout)))
            cin = cout

    def __call__(self, image) -> list:
        x = T.as_tensor(image)
        if x.ndim == 2:
            x = x.reshape(x.shape[0], x.shape[1], 1)
        if x.shape[-1] != self.in_channels:
            raise ValueError(
                f"extractor expects {self.in_channels} channels, got {x.shape[-1]}"
            )
        taps = []
        for w, b in zip(self.kernels, self.biases):
            h, wid = x.shape[-3], x.shape[-2]
            if min(h, wid) < 2:
                break
            x = T.leaky_relu(T.conv2d(T.pad_reflect(x, 1), w, stride=2) + b, 0.2)
            taps.append(x)
        return taps

    @property
    def embed_dim(self):
        return self.widths[-1]

    def embed(self, image) -> np.ndarray:
        """Spatial mean of the deepest tap; a fixed-length descriptor."""
        with T.no_grad():
            taps = self(image)
        deep = taps[-1].data
        return deep.mean(axis=tuple(range(deep.ndim - 1)))

    def embed_many(self, images) -> np.ndarray:
        return np.stack([self.embed(img) for img in images])


@dataclass
class GramWeights:
    """Per-tap weights for the style term; all non-negative."""

    alphas: Sequence[float]

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if any(a < 0 for a in self.alphas):
            raise ValueError("tap weights must be non-negative")

    @classmethod
    def uniform(cls, taps: int) -> "GramWeights":
        return cls([1.0 / taps] * taps)


def perceptual_from_taps(taps_a, taps_b) -> Tensor:
    """Mean over taps of the root-mean-square feature difference."""
    terms = [T.sqrt(((fa - fb) ** 2).mean()) for fa, fb in zip(taps_a, taps_b)]
    return sum(terms) * (1.0 / len(terms))


def perceptual_loss(generated, real, extractor) -> Tensor:
    a, b = _pair(generated, real)
    return perceptual_from_taps(extractor(a), extractor(b))


def gram_matrix(features) -> Tensor:
    """Channel correlation matrix X^T X / (h*w*C) of an (h, w, C) or
    (positions, C) feature tensor."""
    x = T.as_tensor(features)
    if x.ndim >= 3:
        c = x.shape[-1]
        x = x.reshape(x.size // c, c)
    elif x.ndim != 2:
        raise ValueError(f"expected (..., C) features, got {x.shape}")
    n, c = x.shape
    return T.matmul(x.transpose((1, 0)), x) * (1.0 / (n * c))


def gram_from_taps(taps_a, taps_b, weights: GramWeights | None = None) -> Tensor:
    """Weighted mean over taps of the Frobenius distance between channel
    correlation matrices."""
    n_taps = len(taps_a)
    if weights is None:
        weights = GramWeights.uniform(n_taps)
    if len(weights.alphas) != n_taps:
        raise ValueError(f"{len(weights.alphas)} weights for {n_taps} taps")
    total = 0.0
    for alpha, fa, fb in zip(weights.alphas, taps_a, taps_b):
        diff = gram_matrix(fa) - gram_matrix(fb)
        total = total + alpha * T.sqrt((diff * diff).sum())
    return total * (1.0 / n_taps)


def gram_loss(generated, real, extractor, weights: GramWeights | None = None) -> Tensor:
    a, b = _pair(generated, real)
    return gram_from_taps(extractor(a), extractor(b), weights)


