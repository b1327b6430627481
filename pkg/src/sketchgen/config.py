"""Experiment configuration: one YAML file, nested sections, a stable
fingerprint, and a single seed that SKETCH2IMG_SEED can override."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

SEED_ENV_VAR = "SKETCH2IMG_SEED"


@dataclass
class DataConfig:
    root: str = "data/toy"
    target_size: int = 64
    split_ratio: float = 0.9
    split_seed: int = 0
    layout: dict | None = None  # name -> [x0, y0, x1, y1]; None = default boxes
    sketch: dict = field(
        default_factory=lambda: {"sigma": 1.0, "k": 1.6, "tau": 0.8, "phi": 10.0}
    )
    # toy corpus generation knobs (prepare-data)
    n_identities: int = 8
    per_identity: int = 1
    jitter: float = 0.0


@dataclass
class ModelConfig:
    latent_dim: int = 64
    base_channels: int = 16
    feature_stride: int = 2
    feature_channels: int = 32
    gen_channels: int = 32
    disc_channels: int = 16
    sarr_channels: int = 16
    feedback_depth: int = 2
    embed_dim: int = 128


@dataclass
class LossConfig:
    l1: float = 100.0
    gan: float = 1.0
    perc: float = 1.0
    gram: float = 50.0
    identity: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    steps_stage1: int = 2000
    steps_stage2: int = 3000
    steps_sarr: int = 2000
    steps_embedder: int = 300
    steps_per_epoch: int = 500
    joint_finetune: bool = True
    target_l1_stage1: float = 0.0  # early stop thresholds; 0 disables
    target_l1_stage2: float = 0.0
    log_every: int = 25


@dataclass
class Toggles:
    """Ablation switches; off means the module is structurally absent."""

    sa: bool = True
    afig: bool = True
    gm: bool = True
    sarr: bool = True

    def tag(self) -> str:
        on = [k for k in ("sa", "afig", "gm", "sarr") if getattr(self, k)]
        return "+".join(on) if on else "none"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    toggles: Toggles = field(default_factory=Toggles)
    seed: int = 0
    out_dir: str = "runs/default"
    deterministic: bool = True

    def __post_init__(self):
        override = os.environ.get(SEED_ENV_VAR)
        if override is not None:
            self.seed = int(override)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        doc = self.to_dict()
        doc.pop("out_dir")  # where results land does not change the experiment
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc or {})
        sections = {
            "data": DataConfig,
            "model": ModelConfig,
            "loss": LossConfig,
            "train": TrainConfig,
            "toggles": Toggles,
        }
        kwargs = {}
        for key, klass in sections.items():
            sub = doc.pop(key, {})
            known = {f.name for f in fields(klass)}
            unknown = set(sub) - known
            if unknown:
                raise ValueError(f"unknown {key} config keys: {sorted(unknown)}")
            kwargs[key] = klass(**sub)
        known_top = {"seed", "out_dir", "deterministic"}
        unknown = set(doc) - known_top
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(doc)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})
