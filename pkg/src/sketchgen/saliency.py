"""Non-facial layout adaptation: saliency, thresholding, density clustering.

For subjects without the fixed facial component grid, component regions are
discovered instead: a saliency map highlights informative strokes, multi-level
thresholding keeps the strongest bands, and density-based clustering of the
salient pixels yields bounding boxes that play the role of component
rectangles.  Cluster ids are canonical (ordered by each cluster's
lexicographically smallest member), so results do not depend on point order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

DEFAULT_LEVELS = (0.5, 0.75, 0.9)
DEFAULT_EPS = 2.5
DEFAULT_MIN_PTS = 8


def compute_saliency(sketch, smoothing_sigma=1.0) -> np.ndarray:
    """Gaussian-smoothed gradient magnitude of the sketch, max-normalized to
    [0, 1].  Constant inputs give an all-zero map."""
    s = np.asarray(sketch, dtype=np.float64)
    if s.ndim == 3 and s.shape[-1] == 1:
        s = s[..., 0]
    if s.ndim != 2:
        raise ValueError(f"expected a single-channel sketch, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("sketch contains non-finite values")
    gy, gx = np.gradient(s)
    mag = ndimage.gaussian_filter(np.hypot(gx, gy), smoothing_sigma)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def multilevel_threshold(saliency_map, levels=DEFAULT_LEVELS) -> np.ndarray:
    """Band index per pixel: band k collects values strictly above quantile k
    (and at most quantile k+1), so bands 0..len(levels) partition the map."""
    m = np.asarray(saliency_map, dtype=np.float64)
    levels = tuple(levels)
    if not levels or any(not 0 < q < 1 for q in levels):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("quantile levels must be strictly increasing")
    cuts = np.quantile(m, levels)
    bands = np.zeros(m.shape, dtype=np.int64)
    for cut in cuts:
        bands += (m > cut).astype(np.int64)
    return bands


def salient_pixels(bands, min_band=len(DEFAULT_LEVELS) - 1) -> np.ndarray:
    """(row, col) coordinates of pixels in bands >= min_band; the default
    keeps the top two of the four default bands."""
    return np.argwhere(np.asarray(bands) >= min_band)


@dataclass
class ClusterResult:
    """Cluster labels aligned to the input points plus per-cluster boxes.

    labels: -1 marks noise, 0..K-1 canonical cluster ids.
    boxes: half-open (x0, y0, x1, y1) rectangles, index k for cluster k.
    """

    points: np.ndarray
    labels: np.ndarray
    boxes: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.boxes)

    def members(self, cluster: int) -> np.ndarray:
        return self.points[self.labels == cluster]


def _bounding_box(points) -> tuple:
    ys, xs = points[:, 0], points[:, 1]
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def dbscan_cluster(points, eps: float, min_pts: int) -> ClusterResult:
    """Density-based clustering over 2-D pixel coordinates.

    A point is core when at least min_pts points (itself included) lie within
    eps.  Clusters are the connected components of the core points under the
    eps adjacency; non-core points adjacent to a core join the
    lowest-numbered such cluster, everything else is noise.  Cluster ids are
    assigned by each component's lexicographically smallest core, so labels
    are independent of input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return ClusterResult(pts, np.empty(0, dtype=np.int64), [])

    dist = cdist(pts, pts)
    within = dist <= eps
    core = within.sum(axis=1) >= min_pts

    labels = np.full(n, -1, dtype=np.int64)
    comp = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    for i in np.flatnonzero(core):
        if comp[i] != -1:
            continue
        stack = [i]
        comp[i] = n_comp
        while stack:
            j = stack.pop()
            for k in np.flatnonzero(within[j] & core):
                if comp[k] == -1:
                    comp[k] = n_comp
                    stack.append(k)
        n_comp += 1

    # canonical ids: order components by their smallest member coordinate
    order = sorted(
        range(n_comp),
        key=lambda c: min(map(tuple, pts[(comp == c) & core])),
    )
    relabel = {old: new for new, old in enumerate(order)}
    for i in np.flatnonzero(core):
        labels[i] = relabel[comp[i]]

    for i in np.flatnonzero(~core):
        near_cores = np.flatnonzero(within[i] & core)
        if near_cores.size:
            labels[i] = labels[near_cores].min()

    boxes = [_bounding_box(pts[labels == c]) for c in range(n_comp)]
    return ClusterResult(pts, labels, boxes)


@dataclass
class RegionSet:
    """Variable-count component regions discovered from clusters; rectangles
    may overlap (unlike the strict facial layout)."""

    regions: dict
    canvas_size: tuple

    def items(self):
        return self.regions.items()

    def __len__(self):
        return len(self.regions)


def _pad_box(box, canvas_size) -> tuple:
    x0, y0, x1, y1 = box
    h, w = canvas_size
    mx = int((x1 - x0) * 0.1 + 0.5)
    my = int((y1 - y0) * 0.1 + 0.5)
    return (max(x0 - mx, 0), max(y0 - my, 0), min(x1 + mx, w), min(y1 + my, h))


def clusters_to_layout(result: ClusterResult, max_components: int, canvas_size) -> RegionSet:
    """Top clusters by pixel count become margin-padded bounding-box regions;
    zero clusters fall back to a single full-canvas region."""
    h, w = canvas_size
    if result.n_clusters == 0:
        return RegionSet({"region_0": (0, 0, w, h)}, (h, w))
    counts = [(int((result.labels == c).sum()), c) for c in range(result.n_clusters)]
    counts.sort(key=lambda t: (-t[0], t[1]))
    chosen = [c for _, c in counts[:max_components]]
    regions = {
        f"region_{i}": _pad_box(result.boxes[c], (h, w)) for i, c in enumerate(chosen)
    }
    return RegionSet(regions, (h, w))


def nonfacial_layout(
    sketch,
    max_components=4,
    levels=DEFAULT_LEVELS,
    eps=DEFAULT_EPS,
    min_pts=DEFAULT_MIN_PTS,
) -> RegionSet:
    """Full adaptation pipeline: saliency, banding, clustering, regions."""
    sal = compute_saliency(sketch)
    bands = multilevel_threshold(sal, levels)
    pixels = salient_pixels(bands, min_band=len(levels) - 1)
    clusters = dbscan_cluster(pixels, eps, min_pts) if len(pixels) else ClusterResult(
        np.empty((0, 2)), np.empty(0, dtype=np.int64), []
    )
    return clusters_to_layout(clusters, max_components, sal.shape)
