"""Command-line front end over the training, evaluation, and adaptation
pipelines.  Every subcommand reads the same YAML experiment config."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import nn
from .afig import load_stage2, train_stage2
from .config import ExperimentConfig
from .data import DatasetManifest, SketchParams, load_image, make_toy_dataset, save_image
from .harness import (
    StageError,
    emit_report,
    load_dataset,
    record_from_checkpoints,
    run_ablation_suite,
)
from .metrics import MetricReport
from .saliency import DEFAULT_EPS, DEFAULT_MIN_PTS, nonfacial_layout
from .sarr import load_sarr, sarr_forward, train_sarr
from .stage1 import load_stage1, train_stage1


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return ExperimentConfig.load(args.config)
    return ExperimentConfig()


def _out_dir(args, config) -> str:
    return getattr(args, "out_dir", None) or config.out_dir


def cmd_prepare_data(args) -> int:
    config = _config(args)
    root = args.root or config.data.root
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
    print(f"wrote {len(manifest.entries)} sketch/photo pairs under {root}")
    return 0


def cmd_train_stage1(args) -> int:
    config = _config(args)
    train_set, _ = load_dataset(config)
    result = train_stage1(train_set, config, out_dir=_out_dir(args, config))
    for name, value in sorted(result.final_losses.items()):
        print(f"{name}: L1 {value:.4f}")
    print(f"mean L1 {result.mean_l1:.4f}")
    return 0


def cmd_train_stage2(args) -> int:
    config = _config(args)
    out_dir = _out_dir(args, config)
    train_set, _ = load_dataset(config)
    stage1 = load_stage1(args.stage1 or out_dir, config)
    result = train_stage2(train_set, config, stage1=stage1, out_dir=out_dir)
    print(f"final L1 {result.final_l1:.4f}; losses logged to {result.csv_path}")
    return 0


def cmd_train_sarr(args) -> int:
    config = _config(args)
    out_dir = _out_dir(args, config)
    train_set, _ = load_dataset(config)
    stage2 = load_stage2(args.stage2 or out_dir, config)
    result = train_sarr(train_set, config, stage2=stage2, out_dir=out_dir)
    print(f"final L1 {result.final_l1:.4f}; losses logged to {result.csv_path}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    out_dir = _out_dir(args, config)
    record = record_from_checkpoints(config, out_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(record.metrics.to_json())
    with open(out / "metrics.csv", "w") as fh:
        fh.write(MetricReport.csv_header() + "\n")
        fh.write(record.metrics.csv_row(record.tag) + "\n")
    print(record.metrics.to_json())
    return 0


def cmd_refine(args) -> int:
    config = _config(args)
    result = load_sarr(args.model_dir or config.out_dir, config)
    coarse = load_image(args.input)
    sketch = load_image(args.sketch, grayscale=True)
    iters = args.iters if args.iters is not None else result.iters
    with nn.no_grad():
        refined = sarr_forward(coarse, sketch, result.model, iters).data[0]
    save_image(args.out, refined)
    print(f"refined image ({iters} iterations) written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    config = _config(args)
    result = run_ablation_suite(config, out_dir=_out_dir(args, config))
    print(f"combined metric table: {result['csv']}")
    for tag, info in sorted(result["failures"].items()):
        print(f"{tag}: stage {info['stage']} failed: {info['error']}", file=sys.stderr)
    return 1 if result["failures"] else 0


def cmd_adapt_nonfacial(args) -> int:
    config = _config(args)
    if args.sketch:
        paths = [Path(p) for p in args.sketch]
    else:
        manifest_path = Path(config.data.root) / "manifest.ndjson"
        if not manifest_path.exists():
            raise FileNotFoundError(
                f"{manifest_path} not found; run prepare-data or pass --sketch"
            )
        manifest = DatasetManifest.load(manifest_path)
        paths = [Path(s) for s, _, _ in manifest.entries]
    out = Path(_out_dir(args, config)) / "regions"
    out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        sketch = load_image(path, grayscale=True)
        regions = nonfacial_layout(
            sketch,
            max_components=args.max_components,
            eps=args.eps,
            min_pts=args.min_pts,
        )
        doc = {
            "sketch": str(path),
            "canvas_size": list(regions.canvas_size),
            "regions": {name: list(map(int, box)) for name, box in regions.items()},
        }
        target = out / f"{path.stem}.json"
        target.write_text(json.dumps(doc, indent=2, sort_keys=True))
        print(f"{path.name}: {len(regions)} regions -> {target}")
    return 0


def cmd_report(args) -> int:
    config = _config(args)
    record = record_from_checkpoints(config, _out_dir(args, config))
    paths = emit_report(record)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchgen",
        description="Component-aware sketch-to-image training and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment config (defaults apply if omitted)")
        p.set_defaults(func=func)
        return p

    p = add("prepare-data", cmd_prepare_data, "generate the procedural sketch/photo corpus")
    p.add_argument("--root", help="corpus directory (default: config data.root)")

    p = add("train-stage1", cmd_train_stage1, "train the per-component autoencoders")
    p.add_argument("--out-dir", help="run directory (default: config out_dir)")

    p = add("train-stage2", cmd_train_stage2, "train the coarse fusion generator")
    p.add_argument("--stage1", help="run directory holding stage-1 checkpoints")
    p.add_argument("--out-dir", help="run directory (default: config out_dir)")

    p = add("train-sarr", cmd_train_sarr, "train the refinement stage")
    p.add_argument("--stage2", help="run directory holding stage-2 checkpoints")
    p.add_argument("--out-dir", help="run directory (default: config out_dir)")

    p = add("evaluate", cmd_evaluate, "score checkpoints on the test split")
    p.add_argument("--out-dir", help="run directory (default: config out_dir)")

    p = add("refine", cmd_refine, "refine one image with a trained model")
    p.add_argument("--input", required=True, help="coarse image to refine")
    p.add_argument("--sketch", required=True, help="conditioning sketch")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--iters", type=int, help="feedback iterations (default: trained value)")
    p.add_argument("--model-dir", help="run directory holding refinement checkpoints")

    p = add("ablate", cmd_ablate, "run all seven toggle combinations")
    p.add_argument("--out-dir", help="sweep directory (default: config out_dir)")

    p = add("adapt-nonfacial", cmd_adapt_nonfacial, "derive saliency regions per sketch")
    p.add_argument("--sketch", nargs="*", help="specific sketch files (default: whole corpus)")
    p.add_argument("--max-components", type=int, default=4)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS)
    p.add_argument("--out-dir", help="where regions/ is written (default: config out_dir)")

    p = add("report", cmd_report, "emit report.json, loss/metric CSVs, and the image grid")
    p.add_argument("--out-dir", help="run directory (default: config out_dir)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as e:
        print(f"sketchgen {args.command} [{e.stage}]: {e.original}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"sketchgen {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
