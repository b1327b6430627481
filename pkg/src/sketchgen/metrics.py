"""Evaluation metrics with pluggable embedders and deterministic reports.

Distances that normally rely on pre-trained networks (FID, KID, LPIPS) take
any embedder/extractor object here; the desk-scale default is the fixed-seed
random pyramid from :mod:`sketchgen.losses`.  Values are therefore internally
consistent and reproducible but not comparable to published numbers from
Inception-based implementations.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .nn import tensor as T

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class EmbeddingSet:
    """A stack of n embedding vectors, optionally tagged with identity labels."""

    vectors: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"expected (n, d) embeddings, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embeddings must be finite")
        if self.labels is not None and len(self.labels) != len(self.vectors):
            raise ValueError("one label per embedding required")

    def __len__(self):
        return len(self.vectors)


def _vectors(x) -> np.ndarray:
    return x.vectors if isinstance(x, EmbeddingSet) else np.asarray(x, dtype=np.float64)


def _check_shapes(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a, b, c1, c2):
    if min(a.shape) < SSIM_WINDOW:
        # too small to window: fall back to global statistics
        mu_a, mu_b = a.mean(), b.mean()
        var_a, var_b = a.var(), b.var()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        return num / den
    win = _gaussian_window()
    mu_a = signal.correlate2d(a, win, mode="valid")
    mu_b = signal.correlate2d(b, win, mode="valid")
    e_aa = signal.correlate2d(a * a, win, mode="valid")
    e_bb = signal.correlate2d(b * b, win, mode="valid")
    e_ab = signal.correlate2d(a * b, win, mode="valid")
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim(a, b) -> float:
    """Windowed structural similarity, dynamic range 1.0, in [-1, 1]."""
    a, b = _check_shapes(a, b)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    if a.ndim == 2:
        return float(_ssim_channel(a, b, c1, c2))
    if a.ndim == 3:
        vals = [_ssim_channel(a[..., c], b[..., c], c1, c2) for c in range(a.shape[-1])]
        return float(np.mean(vals))
    raise ValueError(f"expected 2-D or 3-D images, got shape {a.shape}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for dynamic range 1.0; +inf when equal."""
    a, b = _check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10 * np.log10(1.0 / mse))


def _sqrtm_psd(m):
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_moments(mu1, sigma1, mu2, sigma2) -> float:
    """Fréchet distance between two Gaussians given exact moments."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    root1 = _sqrtm_psd(sigma1)
    inner = _sqrtm_psd(root1 @ sigma2 @ root1)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2 * np.trace(inner))
    return value


def fid(real, fake) -> float:
    """Fréchet distance between embedding sets, covariances regularized by
    1e-6 on the diagonal."""
    r, f = _vectors(real), _vectors(fake)
    if len(r) < 2 or len(f) < 2:
        raise ValueError("distributional metrics need at least 2 embeddings per set")
    reg = 1e-6 * np.eye(r.shape[1])
    mu_r, mu_f = r.mean(axis=0), f.mean(axis=0)
    sigma_r = np.cov(r, rowvar=False) + reg
    sigma_f = np.cov(f, rowvar=False) + reg
    return fid_from_moments(mu_r, sigma_r, mu_f, sigma_f)


def _poly_kernel(x, y):
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(real, fake) -> float:
    """Unbiased squared maximum mean discrepancy with the cubic kernel
    (x.y/d + 1)^3; may be slightly negative.

    Every pairwise sum excludes its diagonal (for equally sized sets this is
    the U-statistic, so kid(A, A) == 0 exactly); unequal sizes have no paired
    diagonal and use the plain cross mean."""
    x, y = _vectors(real), _vectors(fake)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("distributional metrics need at least 2 embeddings per set")
    m, n = len(x), len(y)
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    sum_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    if m == n:
        cross = (kxy.sum() - np.trace(kxy)) / (m * (m - 1))
    else:
        cross = kxy.mean()
    return float(sum_xx + sum_yy - 2 * cross)


def inception_score(probs) -> float:
    """exp of the mean KL divergence between per-image class posteriors and
    the marginal; in [1, K]."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected (n, K) probabilities, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must be probability distributions")
    marginal = p.mean(axis=0)
    safe_p = np.where(p > 0, p, 1.0)
    kl = (p * (np.log(safe_p) - np.log(np.maximum(marginal, 1e-300)))).sum(axis=1)
    return float(np.exp(kl.mean()))


def lpips(a, b, extractor, tap_weights=None) -> float:
    """Perceptual patch distance: unit-normalize features along channels at
    each position, then average squared difference norms; taps weighted 1.0
    by default."""
    a, b = _check_shapes(a, b)
    with T.no_grad():
        taps_a = extractor(a)
        taps_b = extractor(b)
    if tap_weights is None:
        tap_weights = [1.0] * len(taps_a)
    total = 0.0
    for w, fa, fb in zip(tap_weights, taps_a, taps_b):
        fa, fb = fa.data, fb.data
        na = fa / np.sqrt((fa**2).sum(axis=-1, keepdims=True) + 1e-12)
        nb = fb / np.sqrt((fb**2).sum(axis=-1, keepdims=True) + 1e-12)
        total += w * float(((na - nb) ** 2).sum(axis=-1).mean())
    return total


def top_k_hit_score(queries: EmbeddingSet, gallery: EmbeddingSet, k: int) -> float:
    """Fraction of queries whose identity appears among the k most
    cosine-similar gallery entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if queries.labels is None or gallery.labels is None:
        raise ValueError("both sets need identity labels")
    if len(gallery) == 0:
        raise ValueError("gallery must be non-empty")
    q = queries.vectors / np.linalg.norm(queries.vectors, axis=1, keepdims=True)
    g = gallery.vectors / np.linalg.norm(gallery.vectors, axis=1, keepdims=True)
    sims = q @ g.T
    hits = 0
    for i, label in enumerate(queries.labels):
        top = np.argsort(-sims[i], kind="stable")[:k]
        if any(gallery.labels[j] == label for j in top):
            hits += 1
    return hits / len(queries)


@dataclass
class MetricReport:
    """Named metric values plus the config fingerprint that produced them.

    Serialization is deterministic apart from the timestamp; infinite values
    (perfect-reconstruction psnr) become the string "inf".
    """

    values: dict
    config_fingerprint: str = ""
    timestamp: float = field(default_factory=time.time)

    KNOWN = ("fid", "kid", "is", "ssim", "psnr", "lpips", "top3_hit")

    def __post_init__(self):
        for key, val in self.values.items():
            if key not in self.KNOWN:
                raise ValueError(f"unknown metric {key!r}")
            if not np.isfinite(val) and not (key == "psnr" and val == float("inf")):
                raise ValueError(f"metric {key!r} must be finite, got {val}")

    @staticmethod
    def _encode(val):
        if val == float("inf"):
            return "inf"
        return float(val)

    def to_dict(self, with_timestamp=True):
        out = {k: self._encode(v) for k, v in sorted(self.values.items())}
        doc = {"metrics": out, "config_fingerprint": self.config_fingerprint}
        if with_timestamp:
            doc["timestamp"] = self.timestamp
        return doc

    def to_json(self, with_timestamp=True) -> str:
        return json.dumps(self.to_dict(with_timestamp), sort_keys=True, indent=2)

    def csv_row(self, config_name: str) -> str:
        order = ("fid", "is", "kid", "ssim", "psnr", "lpips")
        cells = [config_name]
        for key in order:
            if key in self.values:
                cells.append("inf" if self.values[key] == float("inf") else repr(float(self.values[key])))
            else:
                cells.append("")
        return ",".join(cells)

    @staticmethod
    def csv_header() -> str:
        return "config,fid,is,kid,ssim,psnr,lpips"
