"""Datasets: paired sketches and photos, component layouts, splits.

Rectangles are half-open integer pixel boxes (x0, y0, x1, y1) on an (H, W)
canvas.  The facial layout is a strict partition: the four component boxes
never overlap, and the remainder (everything else) is kept as a full-canvas
image with the boxes zeroed, so pasting the crops back reproduces the sketch
pixel for pixel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

COMPONENT_NAMES = ("left_eye", "right_eye", "nose", "mouth")

# width/height fractions of the canonical frontal-face boxes
DEFAULT_FRACTIONS = {
    "left_eye": (0.18, 0.30, 0.46, 0.48),
    "right_eye": (0.54, 0.30, 0.82, 0.48),
    "nose": (0.38, 0.48, 0.62, 0.64),
    "mouth": (0.30, 0.64, 0.70, 0.82),
}


def _rects_overlap(a, b) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


@dataclass
class ComponentLayout:
    """The four named facial boxes plus the implicit remainder region."""

    regions: dict
    canvas_size: tuple

    def __post_init__(self):
        if tuple(self.regions) != COMPONENT_NAMES:
            got = tuple(self.regions)
            if sorted(got) != sorted(COMPONENT_NAMES):
                raise ValueError(f"layout needs exactly {COMPONENT_NAMES}, got {got}")
            self.regions = {name: self.regions[name] for name in COMPONENT_NAMES}
        h, w = self.canvas_size
        for name, rect in self.regions.items():
            x0, y0, x1, y1 = (int(v) for v in rect)
            self.regions[name] = (x0, y0, x1, y1)
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise ValueError(f"{name} box {rect} outside canvas {h}x{w} or empty")
        names = list(self.regions)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                if _rects_overlap(self.regions[a], self.regions[b]):
                    raise ValueError(f"{a} and {b} boxes overlap")

    @classmethod
    def default(cls, height: int, width: int) -> "ComponentLayout":
        regions = {
            name: (
                int(fx0 * width),
                int(fy0 * height),
                int(fx1 * width),
                int(fy1 * height),
            )
            for name, (fx0, fy0, fx1, fy1) in DEFAULT_FRACTIONS.items()
        }
        return cls(regions, (height, width))

    @classmethod
    def from_config(cls, layout_cfg: dict, canvas_size) -> "ComponentLayout":
        return cls({k: tuple(v) for k, v in layout_cfg.items()}, tuple(canvas_size))

    def scaled(self, stride: int) -> "ComponentLayout":
        """Integer-divide every box and the canvas by stride.  Flooring both
        edges of a shared boundary preserves disjointness."""
        h, w = self.canvas_size
        regions = {
            name: (x0 // stride, y0 // stride, x1 // stride, y1 // stride)
            for name, (x0, y0, x1, y1) in self.regions.items()
        }
        return ComponentLayout(regions, (h // stride, w // stride))

    def component_shape(self, name: str) -> tuple:
        x0, y0, x1, y1 = self.regions[name]
        return (y1 - y0, x1 - x0)

    def remainder_mask(self) -> np.ndarray:
        h, w = self.canvas_size
        mask = np.ones((h, w))
        for x0, y0, x1, y1 in self.regions.values():
            mask[y0:y1, x0:x1] = 0.0
        return mask


@dataclass
class ComponentSet:
    """Four crops plus the masked full-canvas remainder."""

    components: dict
    remainder: np.ndarray

    def __getitem__(self, name: str):
        return self.remainder if name == "remainder" else self.components[name]


def extract_components(sketch, layout: ComponentLayout) -> ComponentSet:
    s = np.asarray(sketch, dtype=np.float64)
    h, w = s.shape[:2]
    if (h, w) != tuple(layout.canvas_size):
        raise ValueError(f"sketch {h}x{w} does not match layout canvas {layout.canvas_size}")
    crops = {}
    remainder = s.copy()
    for name, (x0, y0, x1, y1) in layout.regions.items():
        crops[name] = s[y0:y1, x0:x1].copy()
        remainder[y0:y1, x0:x1] = 0.0
    return ComponentSet(crops, remainder)


def reassemble(component_set: ComponentSet, layout: ComponentLayout) -> np.ndarray:
    out = component_set.remainder.copy()
    for name, (x0, y0, x1, y1) in layout.regions.items():
        out[y0:y1, x0:x1] = component_set.components[name]
    return out


@dataclass
class ImagePair:
    sketch: np.ndarray
    photo: np.ndarray
    identity_id: str

    def __post_init__(self):
        self.sketch = np.asarray(self.sketch, dtype=np.float64)
        self.photo = np.asarray(self.photo, dtype=np.float64)
        if self.sketch.shape[:2] != self.photo.shape[:2]:
            raise ValueError(
                f"sketch {self.sketch.shape[:2]} and photo {self.photo.shape[:2]} differ"
            )
        for name, img in (("sketch", self.sketch), ("photo", self.photo)):
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError(f"{name} values must lie in [0, 1]")
        if not self.identity_id:
            raise ValueError("identity_id must be non-empty")


@dataclass
class SketchParams:
    """Extended difference-of-Gaussians edge rendering settings."""

    sigma: float = 1.0
    k: float = 1.6
    tau: float = 0.8
    phi: float = 10.0


def synthesize_sketch(photo, params: SketchParams | None = None) -> np.ndarray:
    """Line-drawing rendition of a photo: white on smooth regions, dark along
    luminance edges.  Output is single channel, same H and W, in [0, 1]."""
    params = params or SketchParams()
    p = np.asarray(photo, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("photo contains non-finite values")
    if p.ndim == 3:
        if p.shape[-1] == 3:
            luma = p @ np.array([0.299, 0.587, 0.114])
        else:
            luma = p.mean(axis=-1)
    elif p.ndim == 2:
        luma = p
    else:
        raise ValueError(f"expected (H, W) or (H, W, C) photo, got shape {p.shape}")
    g_narrow = ndimage.gaussian_filter(luma, params.sigma)
    g_wide = ndimage.gaussian_filter(luma, params.k * params.sigma)
    d = g_narrow - params.tau * g_wide
    out = np.where(d >= 0, 1.0, 1.0 + np.tanh(params.phi * d))
    return np.clip(out, 0.0, 1.0)


@dataclass
class DatasetManifest:
    """Entries of (sketch path, photo path, identity id) plus split settings."""

    entries: list
    split_seed: int = 0
    split_ratio: float = 0.9

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split ratio must be in (0, 1), got {self.split_ratio}")
        self.entries = [tuple(e) for e in self.entries]
        for e in self.entries:
            if len(e) != 3:
                raise ValueError(f"manifest entry needs (sketch, photo, id), got {e}")

    def save(self, path):
        path = Path(path)
        with path.open("w") as fh:
            for sketch, photo, ident in self.entries:
                fh.write(
                    json.dumps({"sketch": str(sketch), "photo": str(photo), "id": ident})
                    + "\n"
                )

    @classmethod
    def load(cls, path, split_seed=0, split_ratio=0.9) -> "DatasetManifest":
        entries = []
        with Path(path).open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                entries.append((doc["sketch"], doc["photo"], doc["id"]))
        return cls(entries, split_seed=split_seed, split_ratio=split_ratio)


def split_dataset(manifest: DatasetManifest):
    """Deterministic shuffle-then-cut split; train gets floor(ratio * N)."""
    n = len(manifest.entries)
    if n < 2:
        raise ValueError("need at least 2 entries to split")
    order = np.random.default_rng(manifest.split_seed).permutation(n)
    n_train = int(np.floor(manifest.split_ratio * n))
    train = [manifest.entries[i] for i in order[:n_train]]
    test = [manifest.entries[i] for i in order[n_train:]]
    return train, test


def load_image(path, grayscale=False) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        img = img.convert("L" if grayscale else "RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr


def save_image(path, array):
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path)


def load_pair(sketch_path, photo_path, target_size: int, identity_id="unknown") -> ImagePair:
    """Load, stretch-resize to target_size x target_size, normalize to [0,1]."""
    sketch = _resize(load_image(sketch_path, grayscale=True), target_size)
    photo = _resize(load_image(photo_path), target_size)
    return ImagePair(sketch, photo, identity_id)


def _resize(arr, size: int) -> np.ndarray:
    mode = "L" if arr.ndim == 2 else "RGB"
    img = Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode=mode)
    out = np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    return out


# -- procedural desk-scale faces ----------------------------------------------


def make_toy_face(identity: int, size: int = 64, jitter: float = 0.0, sample: int = 0) -> np.ndarray:
    """A procedural face photo whose geometry and palette are a deterministic
    function of the identity number; optional per-sample jitter shifts the
    features by a few pixels."""
    rng = np.random.default_rng(identity * 7919 + 13)
    jrng = np.random.default_rng((identity * 7919 + 13) * 104729 + sample)
    layout = ComponentLayout.default(size, size)

    def shade(lo=60, hi=220):
        return tuple(int(v) for v in rng.integers(lo, hi, size=3))

    def jit():
        return (jrng.uniform(-jitter, jitter), jrng.uniform(-jitter, jitter)) if jitter else (0.0, 0.0)

    img = Image.new("RGB", (size, size), shade(170, 250))
    draw = ImageDraw.Draw(img)

    skin = tuple(int(v) for v in (rng.integers(180, 245), rng.integers(140, 210), rng.integers(110, 180)))
    face_pad = int(size * rng.uniform(0.02, 0.08))
    draw.ellipse([face_pad, face_pad, size - face_pad, size - face_pad], fill=skin)

    hair = shade(20, 120)
    hair_depth = int(size * rng.uniform(0.12, 0.22))
    draw.chord([face_pad, face_pad, size - face_pad, size - face_pad], 180, 360, fill=hair)
    draw.rectangle([face_pad, face_pad, size - face_pad, hair_depth], fill=hair)

    iris = shade(30, 150)
    for eye in ("left_eye", "right_eye"):
        x0, y0, x1, y1 = layout.regions[eye]
        dx, dy = jit()
        cx, cy = (x0 + x1) / 2 + dx, (y0 + y1) / 2 + dy
        rx = (x1 - x0) * rng.uniform(0.28, 0.42)
        ry = (y1 - y0) * rng.uniform(0.25, 0.40)
        draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=(245, 245, 245), outline=(40, 40, 40))
        pr = min(rx, ry) * rng.uniform(0.45, 0.7)
        draw.ellipse([cx - pr, cy - pr, cx + pr, cy + pr], fill=iris)

    x0, y0, x1, y1 = layout.regions["nose"]
    dx, dy = jit()
    cx = (x0 + x1) / 2 + dx
    nw = (x1 - x0) * rng.uniform(0.12, 0.25)
    nose_shade = tuple(max(c - 40, 0) for c in skin)
    draw.polygon(
        [(cx, y0 + 1 + dy), (cx - nw, y1 - 2 + dy), (cx + nw, y1 - 2 + dy)],
        fill=nose_shade,
    )

    x0, y0, x1, y1 = layout.regions["mouth"]
    dx, dy = jit()
    lip = tuple(int(v) for v in (rng.integers(140, 220), rng.integers(30, 90), rng.integers(40, 100)))
    mw = (x1 - x0) * rng.uniform(0.30, 0.48)
    mh = (y1 - y0) * rng.uniform(0.16, 0.34)
    cx, cy = (x0 + x1) / 2 + dx, (y0 + y1) / 2 + dy
    draw.ellipse([cx - mw, cy - mh, cx + mw, cy + mh], fill=lip)

    return np.asarray(img, dtype=np.float64) / 255.0


def make_toy_dataset(
    root,
    n_identities: int = 8,
    per_identity: int = 1,
    size: int = 64,
    jitter: float = 0.0,
    split_seed: int = 0,
    split_ratio: float = 0.9,
    sketch_params: SketchParams | None = None,
) -> DatasetManifest:
    """Write a procedural photo/sketch corpus plus its manifest; returns the
    manifest."""
    root = Path(root)
    entries = []
    for ident in range(n_identities):
        for sample in range(per_identity):
            photo = make_toy_face(ident, size=size, jitter=jitter, sample=sample)
            sketch = synthesize_sketch(photo, sketch_params)
            photo_path = root / "photos" / f"id{ident:03d}_{sample:02d}.png"
            sketch_path = root / "sketches" / f"id{ident:03d}_{sample:02d}.png"
            save_image(photo_path, photo)
            save_image(sketch_path, sketch)
            entries.append((str(sketch_path), str(photo_path), f"id{ident:03d}"))
    manifest = DatasetManifest(entries, split_seed=split_seed, split_ratio=split_ratio)
    manifest.save(root / "manifest.ndjson")
    return manifest
