"""One-call experiments, reports, and the seven-row ablation suite.

`run_experiment` drives the whole pipeline from a single config: toy data,
the five component autoencoders, the coarse generator, the refiner, and a
metric evaluation — with every stage checkpointed and resumable.
`run_ablation_suite` then re-runs it under seven toggle combinations
(attention off, monolithic fallback decoder, style loss off, refiner off,
...) and collates one CSV row per variant.

Budgets here are intentionally minuscule (two optimizer steps per stage):
the point is the orchestration and the artifacts, not the image quality.
"""

import json
from pathlib import Path

from sketchgen.config import DataConfig, ExperimentConfig, ModelConfig, TrainConfig
from sketchgen.harness import emit_report, run_ablation_suite, run_experiment

OUT = Path(__file__).parent / "output" / "06_experiment_harness"
OUT.mkdir(parents=True, exist_ok=True)

config = ExperimentConfig(
    data=DataConfig(root=str(OUT / "data"), target_size=32, n_identities=3,
                    per_identity=2, split_ratio=0.8),
    model=ModelConfig(latent_dim=8, base_channels=4, feature_channels=8,
                      gen_channels=8, disc_channels=4, sarr_channels=4,
                      feedback_depth=1, embed_dim=16),
    train=TrainConfig(lr=1e-3, batch_size=2, steps_stage1=2, steps_stage2=2,
                      steps_sarr=2, steps_embedder=2, steps_per_epoch=2,
                      log_every=1),
    out_dir=str(OUT / "run"),
)

# ------------------------------------------------------------ one experiment
print("running one end-to-end experiment (tiny budgets)...")
record = run_experiment(config)
print(f"  config fingerprint: {record.fingerprint}  (wall clock {record.wall_clock:.1f}s)")
print(f"  stages trained: stage1({len(record.curves['stage1'])} components), "
      f"stage2({len(record.curves['stage2'])} log rows), "
      f"sarr({len(record.curves['sarr'])} log rows)")
print(f"  evaluated on the {record.eval_set!r} split")
print("  metrics:")
for name, value in sorted(record.metrics.values.items()):
    print(f"    {name:>8s}: {value:.4f}")

paths = emit_report(record)
print("  report artifacts:")
for kind, path in sorted(paths.items()):
    print(f"    {kind:>8s}: {path}")

# ------------------------------------------------------------ ablation suite
print("\nrunning the seven-variant ablation suite...")
suite = run_ablation_suite(config, out_dir=str(OUT / "ablation"))
print(f"  completed: {len(suite['records'])}, failed: {len(suite['failures'])}")
print(f"\n{Path(suite['csv']).read_text()}")

summary = json.loads((Path(OUT / "ablation") / "ablation.json").read_text())
print("variant fingerprints (same data seed, different architecture toggles):")
for tag, fp in summary["fingerprints"].items():
    print(f"  {tag:>24s}: {fp}")
