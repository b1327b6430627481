"""Data pipeline: layouts partition the canvas, sketches render edges,
splits are deterministic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchgen.data import (
    COMPONENT_NAMES,
    ComponentLayout,
    DatasetManifest,
    ImagePair,
    SketchParams,
    extract_components,
    load_pair,
    make_toy_dataset,
    make_toy_face,
    reassemble,
    save_image,
    split_dataset,
    synthesize_sketch,
)


class TestLayout:
    def test_default_has_four_disjoint_boxes(self):
        layout = ComponentLayout.default(64, 64)
        assert tuple(layout.regions) == COMPONENT_NAMES
        assert layout.regions["left_eye"] == (11, 19, 29, 30)
        assert layout.regions["right_eye"] == (34, 19, 52, 30)

    def test_right_eye_mirrors_left(self):
        layout = ComponentLayout.default(64, 64)
        lx0, ly0, lx1, ly1 = layout.regions["left_eye"]
        rx0, ry0, rx1, ry1 = layout.regions["right_eye"]
        assert (ly0, ly1) == (ry0, ry1)
        assert lx1 - lx0 == rx1 - rx0

    def test_overlap_rejected(self):
        regions = dict(ComponentLayout.default(64, 64).regions)
        regions["nose"] = (10, 18, 40, 40)  # collides with both eyes
        with pytest.raises(ValueError, match="overlap"):
            ComponentLayout(regions, (64, 64))

    def test_out_of_bounds_rejected(self):
        regions = dict(ComponentLayout.default(64, 64).regions)
        regions["mouth"] = (30, 50, 70, 60)
        with pytest.raises(ValueError):
            ComponentLayout(regions, (64, 64))

    def test_empty_box_rejected(self):
        regions = dict(ComponentLayout.default(64, 64).regions)
        regions["nose"] = (30, 40, 30, 50)
        with pytest.raises(ValueError):
            ComponentLayout(regions, (64, 64))

    def test_wrong_names_rejected(self):
        with pytest.raises(ValueError, match="exactly"):
            ComponentLayout({"eye": (0, 0, 4, 4)}, (8, 8))

    @given(st.integers(16, 96), st.integers(16, 96))
    @settings(max_examples=30)
    def test_default_valid_at_any_size(self, h, w):
        layout = ComponentLayout.default(h, w)
        scaled = layout.scaled(2)
        assert scaled.canvas_size == (h // 2, w // 2)

    def test_scaled_boxes_floor(self):
        layout = ComponentLayout.default(64, 64).scaled(2)
        assert layout.regions["left_eye"] == (5, 9, 14, 15)

    def test_remainder_mask_covers_complement(self):
        layout = ComponentLayout.default(64, 64)
        mask = layout.remainder_mask()
        box_area = sum(
            (x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in layout.regions.values()
        )
        assert mask.sum() == 64 * 64 - box_area


class TestExtract:
    def test_crop_shapes(self, rng):
        sketch = rng.uniform(size=(64, 64))
        regions = {
            "left_eye": (8, 16, 32, 32),
            "right_eye": (36, 16, 56, 32),
            "nose": (24, 34, 40, 44),
            "mouth": (20, 46, 44, 56),
        }
        layout = ComponentLayout(regions, (64, 64))
        parts = extract_components(sketch, layout)
        assert parts.components["left_eye"].shape == (16, 24)

    def test_remainder_masking(self, rng):
        sketch = rng.uniform(0.1, 1.0, size=(64, 64))
        layout = ComponentLayout.default(64, 64)
        parts = extract_components(sketch, layout)
        x0, y0, x1, y1 = layout.regions["nose"]
        cy, cx = (y0 + y1) // 2, (x0 + x1) // 2
        assert parts.remainder[cy, cx] == 0.0
        assert parts.remainder[0, 0] == sketch[0, 0]

    def test_round_trip_exact(self, rng):
        sketch = rng.uniform(size=(64, 64))
        layout = ComponentLayout.default(64, 64)
        rebuilt = reassemble(extract_components(sketch, layout), layout)
        np.testing.assert_array_equal(rebuilt, sketch)

    def test_canvas_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            extract_components(rng.uniform(size=(32, 32)), ComponentLayout.default(64, 64))


class TestSketchSynthesis:
    def test_constant_image_is_white(self):
        out = synthesize_sketch(np.full((32, 32), 0.5))
        np.testing.assert_array_equal(out, 1.0)

    def test_shape_preserved(self, rng):
        assert synthesize_sketch(rng.uniform(size=(32, 48, 3))).shape == (32, 48)

    def test_step_edge_renders_dark_band(self):
        img = np.zeros((64, 64))
        img[:, 32:] = 1.0
        params = SketchParams()
        sketch = synthesize_sketch(img, params)

        # oracle: brute-force difference of explicit Gaussian kernels on the
        # 1-D step profile locates the band (most negative response)
        def kernel(sigma):
            radius = int(4 * sigma + 0.5)
            g = np.exp(-np.arange(-radius, radius + 1) ** 2 / (2 * sigma**2))
            return g / g.sum()

        profile = img[0]
        pad = 10
        padded = np.pad(profile, pad, mode="reflect")
        narrow = np.convolve(padded, kernel(params.sigma), mode="same")[pad:-pad]
        wide = np.convolve(padded, kernel(params.k * params.sigma), mode="same")[pad:-pad]
        oracle_band = int(np.argmin(narrow - params.tau * wide))
        assert abs(oracle_band - 32) <= 2

        darkest = int(np.argmin(sketch.min(axis=0)))
        assert darkest == oracle_band
        assert sketch[:, darkest].max() < 0.5
        off_band = np.abs(np.arange(64) - 32) > 2
        frac_white = (sketch[:, off_band] >= 0.9).mean()
        assert frac_white >= 0.9

    def test_deterministic(self, rng):
        photo = rng.uniform(size=(32, 32, 3))
        np.testing.assert_array_equal(synthesize_sketch(photo), synthesize_sketch(photo))

    def test_rejects_nan(self):
        img = np.full((8, 8), 0.5)
        img[3, 3] = np.nan
        with pytest.raises(ValueError):
            synthesize_sketch(img)


class TestSplit:
    def make_manifest(self, n, seed=0, ratio=0.9):
        entries = [(f"s{i}.png", f"p{i}.png", f"id{i}") for i in range(n)]
        return DatasetManifest(entries, split_seed=seed, split_ratio=ratio)

    def test_188_gives_169_19(self):
        train, test = split_dataset(self.make_manifest(188))
        assert (len(train), len(test)) == (169, 19)

    def test_two_entries(self):
        train, test = split_dataset(self.make_manifest(2))
        assert (len(train), len(test)) == (1, 1)

    def test_deterministic(self):
        m = self.make_manifest(50, seed=7)
        assert split_dataset(m) == split_dataset(m)

    @given(st.integers(2, 200), st.integers(0, 20))
    @settings(max_examples=30)
    def test_partition(self, n, seed):
        train, test = split_dataset(self.make_manifest(n, seed=seed))
        assert len(train) == int(np.floor(0.9 * n))
        assert sorted(train + test) == sorted(self.make_manifest(n).entries)
        assert not set(train) & set(test)

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            self.make_manifest(10, ratio=1.0)

    def test_manifest_round_trip(self, tmp_path):
        m = self.make_manifest(5)
        m.save(tmp_path / "m.ndjson")
        loaded = DatasetManifest.load(tmp_path / "m.ndjson")
        assert loaded.entries == m.entries


class TestPairsAndToyData:
    def test_image_pair_validation(self, rng):
        with pytest.raises(ValueError, match="identity"):
            ImagePair(rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8, 3)), "")
        with pytest.raises(ValueError, match="differ"):
            ImagePair(rng.uniform(size=(8, 8)), rng.uniform(size=(9, 8, 3)), "a")
        with pytest.raises(ValueError, match="0, 1"):
            ImagePair(rng.uniform(size=(8, 8)) + 1.0, rng.uniform(size=(8, 8, 3)), "a")

    def test_load_pair_resizes(self, tmp_path, rng):
        save_image(tmp_path / "s.png", rng.uniform(size=(128, 128)))
        save_image(tmp_path / "p.png", rng.uniform(size=(100, 90, 3)))
        pair = load_pair(tmp_path / "s.png", tmp_path / "p.png", 64, identity_id="x")
        assert pair.sketch.shape == (64, 64)
        assert pair.photo.shape == (64, 64, 3)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.png"):
            load_pair(tmp_path / "nope.png", tmp_path / "nope.png", 64)

    def test_toy_faces_deterministic_and_distinct(self):
        a = make_toy_face(1)
        b = make_toy_face(1)
        c = make_toy_face(2)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a - c).max() > 0.1
        assert a.shape == (64, 64, 3) and a.min() >= 0 and a.max() <= 1

    def test_toy_dataset_builds_manifest(self, tmp_path):
        manifest = make_toy_dataset(tmp_path, n_identities=3, per_identity=2, size=32)
        assert len(manifest.entries) == 6
        pair = load_pair(*manifest.entries[0][:2], 32, identity_id=manifest.entries[0][2])
        assert pair.photo.shape == (32, 32, 3)
        loaded = DatasetManifest.load(tmp_path / "manifest.ndjson")
        assert loaded.entries == manifest.entries
