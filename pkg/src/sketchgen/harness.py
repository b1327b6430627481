"""Experiment orchestration: end-to-end runs, evaluation, reporting, and the
ablation sweep over the architecture toggles."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .afig import Stage2Result, load_stage2, train_stage2
from .config import ExperimentConfig
from .data import (
    DatasetManifest,
    SketchParams,
    load_pair,
    make_toy_dataset,
    save_image,
    split_dataset,
)
from .metrics import EmbeddingSet, MetricReport
from .sarr import SARRResult, load_sarr, train_sarr
from .stage1 import load_stage1, train_stage1

ABLATION_ROWS = (
    (),
    ("sa",),
    ("sa", "afig"),
    ("sa", "afig", "sarr"),
    ("sa", "afig", "gm"),
    ("sa", "sarr"),
    ("sa", "afig", "gm", "sarr"),
)


class StageError(RuntimeError):
    """A pipeline stage failed; carries which stage for triage."""

    def __init__(self, stage: str, original: Exception):
        super().__init__(f"stage {stage!r} failed: {original}")
        self.stage = stage
        self.original = original


def code_hash() -> str:
    """Content hash of every package source file, for provenance in reports."""
    root = Path(__file__).resolve().parent
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def load_dataset(config: ExperimentConfig):
    """Train/test ImagePair lists from the configured root, synthesizing the
    procedural corpus on first use."""
    root = Path(config.data.root)
    manifest_path = root / "manifest.ndjson"
    if manifest_path.exists():
        manifest = DatasetManifest.load(
            manifest_path,
            split_seed=config.data.split_seed,
            split_ratio=config.data.split_ratio,
        )
    else:
        manifest = make_toy_dataset(
            root,
            n_identities=config.data.n_identities,
            per_identity=config.data.per_identity,
            size=config.data.target_size,
            jitter=config.data.jitter,
            split_seed=config.data.split_seed,
            split_ratio=config.data.split_ratio,
            sketch_params=SketchParams(**config.data.sketch),
        )
    train_entries, test_entries = split_dataset(manifest)
    size = config.data.target_size

    def load(entries):
        return [load_pair(s, p, size, identity_id=i) for s, p, i in entries]

    return load(train_entries), load(test_entries)


@dataclass
class RunRecord:
    config: dict
    fingerprint: str
    code_hash: str
    tag: str
    curves: dict = field(default_factory=dict)
    metrics: MetricReport | None = None
    eval_set: str = "test"
    wall_clock: float = 0.0
    out_dir: str = ""
    outputs: dict = field(default_factory=dict)  # name -> arrays for the grid

    def final_losses(self) -> dict:
        """Last logged value of every loss term, flattened across stages."""
        out = {}
        for comp, curve in self.curves.get("stage1", {}).items():
            if curve:
                out[f"stage1.{comp}"] = curve[-1]
        for stage in ("stage2", "sarr"):
            rows = self.curves.get(stage, [])
            if rows:
                for key, value in rows[-1].items():
                    if key != "step":
                        out[f"{stage}.{key}"] = value
        return out

    def to_dict(self, with_timestamp=True) -> dict:
        doc = {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "code_hash": self.code_hash,
            "tag": self.tag,
            "curves": self.curves,
            "eval_set": self.eval_set,
            "final_losses": self.final_losses(),
            "metrics": self.metrics.to_dict(with_timestamp) if self.metrics else None,
        }
        if with_timestamp:
            doc["wall_clock"] = self.wall_clock
        return doc


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(
    pairs,
    stage2: Stage2Result,
    sarr: SARRResult | None,
    config: ExperimentConfig,
):
    """MetricReport over an evaluation set, plus the per-pair images used."""
    bundle = stage2.bundle
    sketches, truths, coarse, refined, labels = [], [], [], [], []
    for pair in pairs:
        sk = np.asarray(pair.sketch, dtype=np.float64)
        img = bundle.generate_from_sketch(sk)
        sketches.append(sk)
        truths.append(np.asarray(pair.photo, dtype=np.float64))
        coarse.append(img)
        labels.append(pair.identity_id)
        if sarr is not None:
            refined.append(sarr.refine(img, sk)[0])
    final = refined if sarr is not None else coarse

    extractor = bundle.extractor
    emb_real = extractor.embed_many(truths)
    emb_fake = extractor.embed_many(final)
    values = {
        "fid": M.fid(emb_real, emb_fake),
        "kid": M.kid(emb_real, emb_fake),
        "is": M.inception_score(_softmax_rows(emb_fake)),
        "ssim": float(np.mean([M.ssim(t, f) for t, f in zip(truths, final)])),
        "psnr": float(np.mean([M.psnr(t, f) for t, f in zip(truths, final)])),
        "lpips": float(
            np.mean([M.lpips(t, f, extractor) for t, f in zip(truths, final)])
        ),
        "top3_hit": M.top_k_hit_score(
            EmbeddingSet(emb_fake, labels), EmbeddingSet(emb_real, labels), k=3
        ),
    }
    report = MetricReport(values, config_fingerprint=config.fingerprint())
    outputs = {
        "sketch": sketches,
        "truth": truths,
        "coarse": coarse,
        "refined": refined if sarr is not None else None,
    }
    return report, outputs


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunRecord:
    """Full pipeline: stage-1 autoencoders, coarse generation, optional
    refinement, then metric evaluation on the held-out split (falling back to
    all pairs when the split leaves fewer than two).  Failures are re-raised
    tagged with the stage that died."""
    if out_dir is None:
        out_dir = config.out_dir
    out_dir = str(out_dir)
    started = time.monotonic()
    record = RunRecord(
        config=config.to_dict(),
        fingerprint=config.fingerprint(),
        code_hash=code_hash(),
        tag=config.toggles.tag(),
        out_dir=out_dir,
    )

    try:
        train_pairs, test_pairs = load_dataset(config)
    except Exception as e:
        raise StageError("data", e) from e

    try:
        stage1 = train_stage1(train_pairs, config, out_dir=out_dir)
        record.curves["stage1"] = stage1.history
    except Exception as e:
        raise StageError("stage1", e) from e

    try:
        stage2 = train_stage2(train_pairs, config, stage1=stage1, out_dir=out_dir)
        record.curves["stage2"] = stage2.history
    except Exception as e:
        raise StageError("stage2", e) from e

    sarr = None
    if config.toggles.sarr:
        try:
            sarr = train_sarr(train_pairs, config, stage2=stage2, out_dir=out_dir)
            record.curves["sarr"] = sarr.history
        except Exception as e:
            raise StageError("sarr", e) from e

    try:
        eval_pairs = test_pairs
        record.eval_set = "test"
        if len(eval_pairs) < 2:
            eval_pairs = train_pairs + test_pairs
            record.eval_set = "all"
        record.metrics, record.outputs = evaluate(eval_pairs, stage2, sarr, config)
    except Exception as e:
        raise StageError("evaluate", e) from e

    record.wall_clock = time.monotonic() - started
    return record


def record_from_checkpoints(config: ExperimentConfig, out_dir=None) -> RunRecord:
    """Rebuild a RunRecord from a completed run directory without retraining:
    curves come from checkpoint metadata, metrics from a fresh evaluation.
    Checkpoints are consumed read-only."""
    if out_dir is None:
        out_dir = config.out_dir
    out_dir = str(out_dir)
    started = time.monotonic()
    record = RunRecord(
        config=config.to_dict(),
        fingerprint=config.fingerprint(),
        code_hash=code_hash(),
        tag=config.toggles.tag(),
        out_dir=out_dir,
    )
    try:
        train_pairs, test_pairs = load_dataset(config)
    except Exception as e:
        raise StageError("data", e) from e

    try:
        stage1 = load_stage1(out_dir, config)
        record.curves["stage1"] = stage1.history
        stage2 = load_stage2(out_dir, config, stage1=stage1)
        record.curves["stage2"] = stage2.history
        sarr = None
        if config.toggles.sarr:
            sarr = load_sarr(out_dir, config)
            record.curves["sarr"] = sarr.history
    except Exception as e:
        raise StageError("checkpoint", e) from e

    try:
        eval_pairs = test_pairs
        record.eval_set = "test"
        if len(eval_pairs) < 2:
            eval_pairs = train_pairs + test_pairs
            record.eval_set = "all"
        record.metrics, record.outputs = evaluate(eval_pairs, stage2, sarr, config)
    except Exception as e:
        raise StageError("evaluate", e) from e

    record.wall_clock = time.monotonic() - started
    return record


def _to_rgb(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    if img.shape[-1] == 1:
        return np.repeat(img, 3, axis=2)
    return img


def write_grid(record: RunRecord, path):
    """One row per evaluation pair: sketch, ground truth, coarse output,
    refined output (white when refinement was disabled)."""
    outputs = record.outputs
    if not outputs:
        raise ValueError("record has no evaluation outputs to render")
    n = len(outputs["sketch"])
    h = outputs["sketch"][0].shape[0]
    w = outputs["sketch"][0].shape[1]
    grid = np.ones((n * h, 4 * w, 3))
    for row in range(n):
        cells = [
            outputs["sketch"][row],
            outputs["truth"][row],
            outputs["coarse"][row],
            outputs["refined"][row] if outputs.get("refined") else None,
        ]
        for col, cell in enumerate(cells):
            if cell is None:
                continue
            grid[row * h : (row + 1) * h, col * w : (col + 1) * w] = _to_rgb(cell)
    save_image(path, grid)


def emit_report(record: RunRecord, out_dir=None) -> dict:
    """Write report.json, losses.csv, metrics.csv, and grid.png; returns the
    paths."""
    out_dir = Path(out_dir if out_dir is not None else record.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    paths["report"] = report_path

    losses_path = out_dir / "losses.csv"
    terms = ["L1", "GAN_g", "GAN_d", "perc", "gram", "identity"]
    with open(losses_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "step", *terms])
        for comp, curve in record.curves.get("stage1", {}).items():
            for epoch, value in enumerate(curve):
                writer.writerow([f"stage1.{comp}", epoch, value] + [""] * (len(terms) - 1))
        for stage in ("stage2", "sarr"):
            for row in record.curves.get(stage, []):
                writer.writerow(
                    [stage, row["step"]] + [row.get(t, "") for t in terms]
                )
    paths["losses"] = losses_path

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        fh.write(MetricReport.csv_header() + "\n")
        if record.metrics is not None:
            fh.write(record.metrics.csv_row(record.tag) + "\n")
    paths["metrics"] = metrics_path

    if record.outputs:
        grid_path = out_dir / "grid.png"
        write_grid(record, grid_path)
        paths["grid"] = grid_path
    return paths


def run_ablation_suite(base_config: ExperimentConfig, out_dir=None) -> dict:
    """Run the seven toggle combinations with shared seeds and data.

    Produces {out_dir}/ablation.csv with exactly one metrics row per
    combination; a failed row is recorded with its stage and the sweep
    continues.  Returns {"records": ..., "failures": ..., "csv": path}."""
    out_dir = Path(out_dir if out_dir is not None else base_config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = {}
    failures = {}
    base = base_config.to_dict()

    rows = []
    for combo in ABLATION_ROWS:
        cfg = ExperimentConfig.from_dict(json.loads(json.dumps(base)))
        for name in ("sa", "afig", "gm", "sarr"):
            setattr(cfg.toggles, name, name in combo)
        tag = cfg.toggles.tag()
        cfg.out_dir = str(out_dir / tag)
        try:
            record = run_experiment(cfg)
            records[tag] = record
            emit_report(record)
            rows.append(record.metrics.csv_row(tag))
        except StageError as e:
            failures[tag] = {"stage": e.stage, "error": str(e.original)}
            rows.append(f"{tag},,,,,,")

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(MetricReport.csv_header() + "\n")
        for row in rows:
            fh.write(row + "\n")

    summary = {
        "failures": failures,
        "fingerprints": {tag: rec.fingerprint for tag, rec in records.items()},
    }
    (out_dir / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return {"records": records, "failures": failures, "csv": csv_path}
