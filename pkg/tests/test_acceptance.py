"""Acceptance suite: one verdict per criterion, printed as a PASS/FAIL line.

Fast criteria run inline; the desk-scale experiments (overfit runs, the
ablation sweep, determinism) share session-scoped fixtures and assert both
the quality target and the wall-clock budget."""

import json
import time

import numpy as np
import pytest

from sketchgen.afig import (
    CGFGenerator,
    load_stage2,
    one_step_improvement,
    train_stage2,
)
from sketchgen.checkpoint import latest_epoch, load_checkpoint
from sketchgen.config import (
    DataConfig,
    ExperimentConfig,
    LossConfig,
    ModelConfig,
    Toggles,
    TrainConfig,
)
from sketchgen.data import (
    COMPONENT_NAMES,
    ComponentLayout,
    extract_components,
    load_pair,
    make_toy_dataset,
    reassemble,
)
from sketchgen.harness import run_ablation_suite, run_experiment
from sketchgen.losses import (
    RandomConvPyramid,
    gan_loss_d,
    gan_loss_g,
    gram_loss,
    l1_loss,
    perceptual_loss,
)
from sketchgen.metrics import (
    EmbeddingSet,
    fid,
    fid_from_moments,
    inception_score,
    kid,
    lpips,
    psnr,
    ssim,
    top_k_hit_score,
)
from sketchgen import nn
from sketchgen.nn import (
    Conv2d,
    GatingNetwork,
    ResidualBlock,
    SelfAttention,
    SFTModulate,
    SPConv,
    Tensor,
    check_gradients,
    gated_fuse,
    projection_loss,
)
from sketchgen.saliency import dbscan_cluster
from sketchgen.sarr import identity_loss, train_sarr
from sketchgen.stage1 import train_stage1

GRAD_TOL = 1e-4


def verdict(num: int, ok: bool, detail: str):
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def load_corpus(root, n_identities, size=64):
    manifest = make_toy_dataset(root, n_identities=n_identities, per_identity=1, size=size)
    return [load_pair(s, p, size, identity_id=i) for s, p, i in manifest.entries]


# ---------------------------------------------------------------------------
# criterion 1: finite-difference gradient suite


class TestCriterion01Gradients:
    def test_gradient_suite(self, rng):
        start = time.monotonic()
        worst = {}

        x = Tensor(rng.normal(size=(4, 4, 3)), requires_grad=True)
        block = SelfAttention(rng, 3)
        block.gamma.data[()] = 0.5
        worst["self_attention"] = check_gradients(
            lambda: projection_loss(block(x)), [x] + block.parameters()
        )

        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        sp = SPConv(rng, 2, 3)
        worst["spconv"] = check_gradients(
            lambda: projection_loss(sp(x)), [x] + sp.parameters()
        )

        h = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        gate = GatingNetwork(rng, hidden=4)
        worst["gated_fuse"] = check_gradients(
            lambda: projection_loss(gated_fuse(h, gate.mask_for(4, 4))),
            [h] + gate.parameters(),
        )

        feats = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        cond = Tensor(rng.normal(size=(4, 4, 3)), requires_grad=True)
        sft = SFTModulate(rng, 3, 2, hidden=4)
        worst["sft_modulate"] = check_gradients(
            lambda: projection_loss(sft(feats, cond)),
            [feats, cond] + sft.parameters(),
        )

        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        res = ResidualBlock(rng, 2)
        worst["residual_block"] = check_gradients(
            lambda: projection_loss(res(x)), [x] + res.parameters()
        )

        g = Tensor(rng.uniform(size=(4, 4)), requires_grad=True)
        r = rng.uniform(size=(4, 4))
        worst["l1"] = check_gradients(lambda: l1_loss(g, r), [g])

        d_real = Tensor(rng.uniform(0.2, 0.8, size=4), requires_grad=True)
        d_fake = Tensor(rng.uniform(0.2, 0.8, size=4), requires_grad=True)
        worst["gan_d"] = check_gradients(
            lambda: gan_loss_d(d_real, d_fake), [d_real, d_fake]
        )
        worst["gan_g"] = check_gradients(lambda: gan_loss_g(d_fake), [d_fake])

        ext = RandomConvPyramid(in_channels=3, widths=(4, 8), seed=1)
        g = Tensor(rng.uniform(size=(4, 4, 3)), requires_grad=True)
        r = rng.uniform(size=(4, 4, 3))
        worst["perceptual"] = check_gradients(
            lambda: perceptual_loss(g, r, ext), [g]
        )
        worst["gram"] = check_gradients(lambda: gram_loss(g, r, ext), [g])

        embed_conv = Conv2d(rng, 3, 4)
        refined = Tensor(rng.uniform(size=(4, 4, 3)), requires_grad=True)
        real = rng.uniform(size=(4, 4, 3))
        embedder = lambda img: embed_conv(nn.as_tensor(img)).mean(axis=(0, 1))
        worst["identity"] = check_gradients(
            lambda: identity_loss(refined, real, embedder, 1.0), [refined]
        )

        elapsed = time.monotonic() - start
        peak = max(worst.values())
        ok = peak < GRAD_TOL and elapsed < 120
        verdict(
            1,
            ok,
            f"finite differences on {len(worst)} ops, worst rel err "
            f"{peak:.2e} (< {GRAD_TOL}), {elapsed:.0f}s (< 120s)",
        )


# ---------------------------------------------------------------------------
# criterion 2: gating identity


class TestCriterion02GatingIdentity:
    def test_ones_equals_bypass_and_zeros_kill_features(self, rng):
        gen = CGFGenerator(rng, feature_channels=6, width=8)
        canvas = rng.normal(size=(1, 8, 8, 6))
        with nn.no_grad():
            ones_out = gen(canvas, gate_mode="ones").data
            bypass_out = gen(canvas, gate_mode="bypass").data
            zero_feats = gen.fuse(nn.as_tensor(canvas), gate_mode="zeros").data
        gap = float(np.max(np.abs(ones_out - bypass_out)))
        dead = float(np.max(np.abs(zero_feats)))
        ok = gap < 1e-6 and dead == 0.0
        verdict(
            2,
            ok,
            f"all-ones gate matches bypass within {gap:.2e} (< 1e-6); "
            f"all-zeros gate gives max |feature| {dead}",
        )


# ---------------------------------------------------------------------------
# criterion 3: loss arithmetic


class TestCriterion03LossArithmetic:
    def test_exact_values(self, rng):
        l1 = l1_loss(np.ones((4, 4)), np.zeros((4, 4))).item()
        gan = gan_loss_d(np.array([0.5]), np.array([0.5])).item()
        gan_err = abs(gan - 2 * np.log(0.5))
        ident = identity_loss(
            np.array([0.2, 0.9]), np.array([0.1, 0.5]), lambda v: nn.as_tensor(v), 1.0
        ).item()
        a = rng.uniform(size=(8, 8, 3))
        gram = gram_loss(a, a.copy(), RandomConvPyramid(in_channels=3, widths=(4, 8))).item()
        ok = l1 == 1.0 and gan_err < 1e-9 and ident == 0.5 and gram == 0.0
        verdict(
            3,
            ok,
            f"L1(1,0)={l1}; GAN_d(0.5)=2log0.5 err {gan_err:.1e}; "
            f"identity 2-pixel={ident}; gram(a,a)={gram}",
        )


# ---------------------------------------------------------------------------
# criterion 4: metric oracles


class TestCriterion04MetricOracles:
    def test_oracles(self):
        start = time.monotonic()
        d = 8
        shift = np.zeros(d)
        shift[0] = 2.0
        exact = fid_from_moments(np.zeros(d), np.eye(d), shift, np.eye(d))
        exact_err = abs(exact - 4.0)

        rng = np.random.default_rng(1234)
        sampled = fid(
            rng.standard_normal((5000, d)), rng.standard_normal((5000, d)) + shift
        )
        sampled_err = abs(sampled - 4.0)

        def kid_brute(x, y):
            m, n, dd = len(x), len(y), x.shape[1]
            k = lambda a, b: (float(a @ b) / dd + 1.0) ** 3
            sxx = sum(
                k(x[i], x[j]) for i in range(m) for j in range(m) if i != j
            ) / (m * (m - 1))
            syy = sum(
                k(y[i], y[j]) for i in range(n) for j in range(n) if i != j
            ) / (n * (n - 1))
            if m == n:
                cross = sum(
                    k(x[i], y[j]) for i in range(m) for j in range(m) if i != j
                ) / (m * (m - 1))
            else:
                cross = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
            return sxx + syy - 2 * cross

        kid_err = 0.0
        for m, n in [(2, 2), (5, 5), (32, 32), (4, 9), (17, 32)]:
            x = rng.standard_normal((m, 6))
            y = rng.standard_normal((n, 6)) * 0.5 + 0.3
            kid_err = max(kid_err, abs(kid(x, y) - kid_brute(x, y)))

        is_err = abs(inception_score(np.eye(7)) - 7.0)

        a = rng.uniform(size=(16, 16, 3))
        ssim_val = ssim(a, a.copy())
        lpips_val = lpips(a, a.copy(), RandomConvPyramid(in_channels=3, widths=(4, 8)))
        psnr_err = abs(psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) - 20.0)

        elapsed = time.monotonic() - start
        ok = (
            exact_err < 1e-9
            and sampled_err < 0.25
            and kid_err < 1e-10
            and is_err < 1e-9
            and ssim_val == 1.0
            and lpips_val == 0.0
            and psnr_err < 1e-9
            and elapsed < 300
        )
        verdict(
            4,
            ok,
            f"FID exact err {exact_err:.1e}, sampled err {sampled_err:.3f} (< 0.25), "
            f"KID vs brute force {kid_err:.1e}, IS err {is_err:.1e}, "
            f"SSIM(a,a)={ssim_val}, LPIPS(a,a)={lpips_val}, PSNR err {psnr_err:.1e}, "
            f"{elapsed:.0f}s (< 300s)",
        )


# ---------------------------------------------------------------------------
# criterion 5: lossless component partition


class TestCriterion05Partition:
    def test_round_trip_100_layouts(self, rng):
        failures = 0
        for _ in range(100):
            h = int(rng.integers(16, 49))
            w = int(rng.integers(16, 49))
            sx = int(rng.integers(2, w - 1))
            sy = int(rng.integers(2, h - 1))
            quads = [(0, 0, sx, sy), (sx, 0, w, sy), (0, sy, sx, h), (sx, sy, w, h)]
            regions = {}
            for name, qi in zip(COMPONENT_NAMES, rng.permutation(4)):
                qx0, qy0, qx1, qy1 = quads[qi]
                x0 = int(rng.integers(qx0, qx1))
                x1 = int(rng.integers(x0 + 1, qx1 + 1))
                y0 = int(rng.integers(qy0, qy1))
                y1 = int(rng.integers(y0 + 1, qy1 + 1))
                regions[name] = (x0, y0, x1, y1)
            layout = ComponentLayout(regions, (h, w))
            sketch = rng.normal(size=(h, w))
            back = reassemble(extract_components(sketch, layout), layout)
            if not np.array_equal(back, sketch):
                failures += 1
        verdict(
            5,
            failures == 0,
            f"extract/reassemble bit-exact on 100 random non-overlapping layouts "
            f"({failures} failures)",
        )


# ---------------------------------------------------------------------------
# desk-scale fixtures for criteria 6-8


def overfit_train_config(**overrides):
    kw = dict(
        lr=2e-3,
        beta1=0.9,
        batch_size=8,
        steps_stage1=2000,
        steps_stage2=3000,
        steps_sarr=2000,
        steps_embedder=300,
        steps_per_epoch=250,
        target_l1_stage1=0.045,
        target_l1_stage2=0.075,
        log_every=50,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


@pytest.fixture(scope="session")
def stage1_overfit(tmp_path_factory):
    """Criterion 6: 8 pairs at 64x64, latent 64."""
    tmp = tmp_path_factory.mktemp("accept6")
    pairs = load_corpus(tmp / "data", n_identities=8)
    config = ExperimentConfig(
        data=DataConfig(root=str(tmp / "data"), target_size=64, n_identities=8),
        model=ModelConfig(latent_dim=64, base_channels=16),
        train=overfit_train_config(),
        out_dir=str(tmp / "run"),
    )
    start = time.monotonic()
    result = train_stage1(pairs, config, out_dir=config.out_dir)
    return result, time.monotonic() - start


@pytest.fixture(scope="session")
def pipeline_overfit(tmp_path_factory):
    """Criteria 7-8: 4-pair pipeline through stage 2 and refinement."""
    tmp = tmp_path_factory.mktemp("accept78")
    pairs = load_corpus(tmp / "data", n_identities=4)
    config = ExperimentConfig(
        data=DataConfig(root=str(tmp / "data"), target_size=64, n_identities=4),
        model=ModelConfig(latent_dim=64, base_channels=16),
        # a heavy identity weight makes the refiner drive the identity term
        # toward the photo instead of parking at the GAN-noise equilibrium;
        # stage 2 never reads this weight
        loss=LossConfig(identity=10.0),
        train=overfit_train_config(batch_size=4, beta1=0.5, lr=1e-3),
        out_dir=str(tmp / "run"),
    )
    times = {}
    start = time.monotonic()
    stage1 = train_stage1(pairs, config, out_dir=config.out_dir)
    times["stage1"] = time.monotonic() - start

    start = time.monotonic()
    stage2 = train_stage2(pairs, config, stage1=stage1, out_dir=config.out_dir)
    times["stage2"] = time.monotonic() - start
    return {"pairs": pairs, "config": config, "stage1": stage1, "stage2": stage2,
            "times": times}


@pytest.fixture(scope="session")
def sarr_overfit(pipeline_overfit):
    pairs = pipeline_overfit["pairs"]
    config = pipeline_overfit["config"]
    start = time.monotonic()
    result = train_sarr(
        pairs, config, stage2=pipeline_overfit["stage2"], out_dir=config.out_dir
    )
    return result, time.monotonic() - start


# ---------------------------------------------------------------------------
# criterion 6: stage-1 overfit


class TestCriterion06Stage1Overfit:
    def test_mean_component_l1(self, stage1_overfit):
        result, elapsed = stage1_overfit
        mean_l1 = result.mean_l1
        budget = 15 * 60
        ok = mean_l1 < 0.05 and elapsed < budget
        per = ", ".join(f"{n} {v:.3f}" for n, v in sorted(result.final_losses.items()))
        verdict(
            6,
            ok,
            f"8-pair stage-1 overfit mean L1 {mean_l1:.4f} (< 0.05) [{per}], "
            f"{elapsed:.0f}s (< {budget}s)",
        )


# ---------------------------------------------------------------------------
# criterion 7: stage-2 overfit + one-step improvement


class TestCriterion07Stage2Overfit:
    def test_l1_and_one_step(self, pipeline_overfit):
        pairs = pipeline_overfit["pairs"]
        config = pipeline_overfit["config"]
        final_l1 = pipeline_overfit["stage2"].final_l1
        steps_used = pipeline_overfit["stage2"].history[-1]["step"] + 1

        # run the perturbing one-step check on a reloaded copy so the shared
        # bundle keeps its trained parameters bit-exact
        start = time.monotonic()
        bundle = load_stage2(config.out_dir, config, stage1=pipeline_overfit["stage1"]).bundle
        sketches = np.stack([p.sketch for p in pairs])
        photos = np.stack([p.photo for p in pairs])
        before, after = one_step_improvement(bundle, sketches, photos, lr=1e-6)
        one_step_time = time.monotonic() - start

        elapsed = pipeline_overfit["times"]["stage1"] + pipeline_overfit["times"][
            "stage2"
        ] + one_step_time
        budget = 30 * 60
        ok = final_l1 < 0.08 and steps_used <= 3000 and after < before and elapsed < budget
        verdict(
            7,
            ok,
            f"4-pair stage-2 overfit L1 {final_l1:.4f} (< 0.08) in {steps_used} steps "
            f"(<= 3000); one lr=1e-6 step moves loss {before:.6f} -> {after:.6f} "
            f"(improved: {after < before}); {elapsed:.0f}s (< {budget}s)",
        )


# ---------------------------------------------------------------------------
# criterion 8: refinement non-degradation


class TestCriterion08SarrNonDegradation:
    def test_psnr_and_identity_decay(self, pipeline_overfit, sarr_overfit):
        result, sarr_time = sarr_overfit
        pairs = pipeline_overfit["pairs"]
        bundle = pipeline_overfit["stage2"].bundle

        coarse_psnr, refined_psnr = [], []
        for p in pairs:
            coarse = bundle.generate_from_sketch(p.sketch)
            refined = result.refine(coarse, p.sketch)[0]
            coarse_psnr.append(psnr(p.photo, coarse))
            refined_psnr.append(psnr(p.photo, refined))
        mean_coarse = float(np.mean(coarse_psnr))
        mean_refined = float(np.mean(refined_psnr))

        identity_curve = [row["identity"] for row in result.history]
        initial, final = identity_curve[0], identity_curve[-1]
        ratio = final / initial if initial > 0 else float("inf")

        budget = 30 * 60
        ok = mean_refined >= mean_coarse and ratio < 0.10 and sarr_time < budget
        verdict(
            8,
            ok,
            f"PSNR refined {mean_refined:.2f} >= coarse {mean_coarse:.2f}; "
            f"identity term {initial:.4f} -> {final:.4f} (ratio {ratio:.3f} < 0.10); "
            f"{sarr_time:.0f}s (< {budget}s)",
        )


# ---------------------------------------------------------------------------
# criterion 9: ablation sweep with structural toggle semantics


def smoke_config(tmp):
    return ExperimentConfig(
        data=DataConfig(
            root=str(tmp / "data"), target_size=32, n_identities=2,
            per_identity=1, split_ratio=0.9,
        ),
        model=ModelConfig(
            latent_dim=8, base_channels=4, feature_channels=8, gen_channels=8,
            disc_channels=4, sarr_channels=4, feedback_depth=1, embed_dim=16,
        ),
        train=TrainConfig(
            lr=1e-3, batch_size=2, steps_stage1=2, steps_stage2=2, steps_sarr=2,
            steps_embedder=2, steps_per_epoch=2, log_every=1,
        ),
        out_dir=str(tmp / "ablate"),
    )


def stage1_has_attention(run_dir):
    stage_dir = run_dir / "stage1"
    comp_dir = next(d for d in sorted(stage_dir.iterdir()) if d.is_dir())
    ckpt = load_checkpoint(comp_dir / f"epoch_{latest_epoch(comp_dir)}.ckpt")
    return any(name.startswith("attention.") for name in ckpt.parameter_names())


def stage2_prefixes(run_dir):
    stage_dir = run_dir / "stage2"
    ckpt = load_checkpoint(stage_dir / f"epoch_{latest_epoch(stage_dir)}.ckpt")
    return {name.split(".", 1)[0] for name in ckpt.parameter_names()}


class TestCriterion09Ablation:
    def test_seven_rows_and_structure(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("accept9")
        start = time.monotonic()
        result = run_ablation_suite(smoke_config(tmp), out_dir=tmp / "ablate")
        elapsed = time.monotonic() - start

        lines = result["csv"].read_text().strip().splitlines()
        rows_ok = len(lines) == 8 and not result["failures"]

        structure_ok = True
        problems = []
        for tag, record in result["records"].items():
            run_dir = tmp / "ablate" / tag
            toggles = record.config["toggles"]
            if stage1_has_attention(run_dir) != toggles["sa"]:
                structure_ok = False
                problems.append(f"{tag}: attention params vs sa toggle")
            prefixes = stage2_prefixes(run_dir)
            if toggles["afig"] != ({"fm", "cgf"} <= prefixes):
                structure_ok = False
                problems.append(f"{tag}: fm/cgf params vs afig toggle")
            if toggles["afig"] == ("fallback" in prefixes):
                structure_ok = False
                problems.append(f"{tag}: fallback params vs afig toggle")
            header = (run_dir / "stage2" / "losses.csv").read_text().splitlines()[0]
            if toggles["gm"] != ("gram" in header):
                structure_ok = False
                problems.append(f"{tag}: gram column vs gm toggle")
            if toggles["sarr"] != (run_dir / "sarr").exists():
                structure_ok = False
                problems.append(f"{tag}: sarr checkpoints vs sarr toggle")
            if not record.curves["stage2"]:
                structure_ok = False
                problems.append(f"{tag}: no stage-2 steps ran")

        budget = 20 * 60
        ok = rows_ok and structure_ok and elapsed < budget
        verdict(
            9,
            ok,
            f"7/7 toggle configs ran >= 1 step per stage, combined CSV "
            f"{len(lines) - 1} rows, structural toggle semantics verified via "
            f"checkpoint parameter sets{'; ' + '; '.join(problems) if problems else ''}; "
            f"{elapsed:.0f}s (< {budget}s)",
        )


# ---------------------------------------------------------------------------
# criterion 10: clustering equivalence


def dbscan_oracle(points, eps, min_pts):
    """Independent reference: full distance matrix, union-find over core
    points, the same canonical labeling and border tie-break the public
    implementation documents."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    within = d2 <= eps * eps
    core = within.sum(axis=1) >= min_pts

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        if not core[i]:
            continue
        for j in range(i + 1, n):
            if core[j] and within[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj

    comps = {}
    for i in range(n):
        if core[i]:
            comps.setdefault(find(i), []).append(i)
    ordered = sorted(comps.values(), key=lambda idx: min(map(tuple, pts[idx])))
    for lab, members in enumerate(ordered):
        for i in members:
            labels[i] = lab
    for i in range(n):
        if not core[i]:
            near = [labels[j] for j in range(n) if core[j] and within[i, j]]
            if near:
                labels[i] = min(near)
    return labels


class TestCriterion10Dbscan:
    def test_matches_oracle_and_two_blobs(self):
        rng = np.random.default_rng(7)
        mismatches = 0
        for _ in range(50):
            n = int(rng.integers(1, 201))
            pts = rng.uniform(0, 30, size=(n, 2))
            eps = float(rng.uniform(1.5, 4.0))
            min_pts = int(rng.integers(2, 11))
            got = dbscan_cluster(pts, eps, min_pts).labels
            if not np.array_equal(got, dbscan_oracle(pts, eps, min_pts)):
                mismatches += 1

        blob = np.concatenate(
            [rng.normal(0, 0.5, size=(50, 2)), rng.normal(20, 0.5, size=(50, 2))]
        )
        n_blobs = dbscan_cluster(blob, eps=2.0, min_pts=4).n_clusters

        ok = mismatches == 0 and n_blobs == 2
        verdict(
            10,
            ok,
            f"labels identical to union-find oracle on 50 random sets "
            f"({mismatches} mismatches); two-blob case -> {n_blobs} clusters (== 2)",
        )


# ---------------------------------------------------------------------------
# criterion 11: top-3 hit score


class TestCriterion11TopK:
    def test_fixture_and_self_match(self):
        gallery_angles = np.deg2rad([0, 10, 20, 30, 40, 50, 60, 70, 80, 90])
        gallery = EmbeddingSet(
            np.stack([np.cos(gallery_angles), np.sin(gallery_angles)], axis=1),
            list("ABCDEFGHIJ"),
        )
        # hand-ranked: queries at 1, 11, 31 degrees have their identity in the
        # three nearest gallery angles; 21 (J) and 41 (A) do not
        query_angles = np.deg2rad([1, 11, 21, 31, 41])
        queries = EmbeddingSet(
            np.stack([np.cos(query_angles), np.sin(query_angles)], axis=1),
            ["A", "B", "J", "D", "A"],
        )
        score = top_k_hit_score(queries, gallery, k=3)
        self_score = top_k_hit_score(gallery, gallery, k=1)
        ok = score == 0.6 and self_score == 1.0
        verdict(
            11,
            ok,
            f"5-query/10-gallery fixture scores {score} (== 0.6); "
            f"self-match at k=1 scores {self_score} (== 1.0)",
        )


# ---------------------------------------------------------------------------
# criterion 12: determinism


class TestCriterion12Determinism:
    def test_repeat_run_bit_identical(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("accept12")
        base = smoke_config(tmp)
        base.train.steps_stage1 = 10
        base.train.steps_stage2 = 10
        base.train.steps_sarr = 10
        base.train.steps_embedder = 10
        base.train.steps_per_epoch = 10

        records = []
        for run in ("a", "b"):
            cfg = ExperimentConfig.from_dict(json.loads(json.dumps(base.to_dict())))
            cfg.out_dir = str(tmp / run)
            records.append(run_experiment(cfg))
        first, second = records

        losses_a, losses_b = first.final_losses(), second.final_losses()
        worst = max(
            abs(losses_a[k] - losses_b[k]) for k in losses_a
        ) if losses_a.keys() == losses_b.keys() else float("inf")
        json_a = first.metrics.to_json(with_timestamp=False)
        json_b = second.metrics.to_json(with_timestamp=False)
        ok = worst < 1e-6 and json_a == json_b
        verdict(
            12,
            ok,
            f"two fresh runs: worst final-loss gap {worst:.2e} (< 1e-6); "
            f"metric JSON bit-identical: {json_a == json_b}",
        )
