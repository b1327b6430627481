"""Per-component sketch autoencoders.

Each named component (four facial boxes plus the full-canvas remainder)
gets its own convolutional autoencoder: stride-2 downsampling stages with
self-attention at the deepest resolution, a fully connected bottleneck of
shared width, and a mirrored upsampling decoder that reproduces the exact
crop shape.  The remainder model runs one extra downsampling stage because
it sees the whole canvas.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import latest_epoch, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import ComponentLayout, extract_components
from .losses import l1_loss
from .nn import Tensor

REMAINDER = "remainder"



def component_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-component stream, independent of training order, so
    sequential and parallel component training produce identical weights."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class ComponentAutoencoder(nn.Module):
    def __init__(
        self,
        rng,
        in_shape,
        latent_dim: int = 64,
        base_channels: int = 16,
        in_channels: int = 1,
        use_attention: bool = True,
        extra_stage: bool = False,
    ):
        h, w = (int(v) for v in in_shape)
        if h < 1 or w < 1:
            raise ValueError(f"component shape must be positive, got {(h, w)}")
        self.in_shape = (h, w)
        self.in_channels = in_channels
        self.latent_dim = latent_dim
        planned = 5 if extra_stage else 4
        widths = [base_channels, 2 * base_channels] + [4 * base_channels] * (planned - 2)

        self.spatial = [(h, w)]
        self.channels = [in_channels]
        self.enc_convs = []
        for width in widths:
            cur_h, cur_w = self.spatial[-1]
            if min(cur_h, cur_w) < 2:
                break  # reflect padding needs at least 2 pixels per axis
            self.enc_convs.append(nn.Conv2d(rng, self.channels[-1], width, kernel=3, stride=2))
            self.spatial.append((math.ceil(cur_h / 2), math.ceil(cur_w / 2)))
            self.channels.append(width)
        if not self.enc_convs:
            raise ValueError(f"component {(h, w)} too small for any downsampling stage")

        deep_h, deep_w = self.spatial[-1]
        deep_c = self.channels[-1]
        self.attention = nn.SelfAttention(rng, deep_c) if use_attention else None
        flat = deep_h * deep_w * deep_c
        self.to_latent = nn.Dense(rng, flat, latent_dim)
        self.from_latent = nn.Dense(rng, latent_dim, flat)
        self.dec_convs = [
            nn.Conv2d(
                rng,
                self.channels[i],
                self.channels[i - 1] if i > 1 else in_channels,
                kernel=3,
                stride=1,
            )
            for i in range(len(self.enc_convs), 0, -1)
        ]
        # per-position head bias: upsampling convs alone cannot express
        # pixel-level structure on very small crops
        self.pos_bias = nn.zeros_param(h, w, in_channels)

    def _batched(self, x) -> Tensor:
        t = nn.as_tensor(x)
        if t.data.ndim == 2:
            t = t.reshape(1, *t.shape, 1)
        elif t.data.ndim == 3:
            t = t.reshape(1, *t.shape)
        if t.data.shape[1:3] != self.in_shape or t.data.shape[3] != self.in_channels:
            raise ValueError(
                f"expected input {self.in_shape + (self.in_channels,)}, got {t.data.shape[1:]}"
            )
        return t

    def encode(self, x) -> Tensor:
        t = self._batched(x)
        for conv in self.enc_convs:
            t = nn.leaky_relu(conv(t))
        if self.attention is not None:
            t = self.attention(t)
        n = t.data.shape[0]
        return self.to_latent(t.reshape(n, -1))

    def decode_raw(self, latent) -> Tensor:
        """Unsquashed reconstruction; the training objective runs on this so
        saturated stroke values keep a live gradient (a sigmoid would only
        approach 0/1 asymptotically and a hard clip would zero the gradient)."""
        z = nn.as_tensor(latent)
        if z.data.ndim == 1:
            z = z.reshape(1, -1)
        if z.data.shape[-1] != self.latent_dim:
            raise ValueError(f"latent width {z.data.shape[-1]} != {self.latent_dim}")
        n = z.data.shape[0]
        deep_h, deep_w = self.spatial[-1]
        t = nn.leaky_relu(self.from_latent(z)).reshape(n, deep_h, deep_w, self.channels[-1])
        for stage, conv in zip(range(len(self.enc_convs), 0, -1), self.dec_convs):
            target_h, target_w = self.spatial[stage - 1]
            t = nn.upsample2x(t)
            t = nn.crop(t, 0, target_h, 0, target_w)
            t = conv(t)
            if stage > 1:
                t = nn.leaky_relu(t)
        return t + self.pos_bias

    def decode(self, latent) -> Tensor:
        """Reconstruction squashed to [0,1]; projecting onto the target range
        never increases the L1 error against in-range targets."""
        return nn.clip(self.decode_raw(latent), 0.0, 1.0)

    def __call__(self, x) -> Tensor:
        return self.decode(self.encode(x))


def encode_component(sketch_component, model: ComponentAutoencoder) -> np.ndarray:
    with nn.no_grad():
        return model.encode(sketch_component).data[0]


def decode_component(latent, model: ComponentAutoencoder) -> np.ndarray:
    with nn.no_grad():
        return model.decode(latent).data[0, :, :, 0]


def build_models(config: ExperimentConfig, layout) -> dict:
    """One autoencoder per named region plus the remainder, seeded per name."""
    mc = config.model
    models = {}
    for name in layout.regions:
        models[name] = ComponentAutoencoder(
            component_rng(config.seed, name),
            layout.component_shape(name),
            latent_dim=mc.latent_dim,
            base_channels=mc.base_channels,
            use_attention=config.toggles.sa,
        )
    models[REMAINDER] = ComponentAutoencoder(
        component_rng(config.seed, REMAINDER),
        layout.canvas_size,
        latent_dim=mc.latent_dim,
        base_channels=mc.base_channels,
        use_attention=config.toggles.sa,
        extra_stage=True,
    )
    return models


def layout_from_config(config: ExperimentConfig) -> ComponentLayout:
    size = config.data.target_size
    if config.data.layout:
        return ComponentLayout.from_config(config.data.layout, (size, size))
    return ComponentLayout.default(size, size)


def component_batches(train_set, layout) -> dict:
    """Stack each component's crops across the training pairs: name -> (n, h, w, 1)."""
    if len(train_set) == 0:
        raise ValueError("stage-1 training requires at least one pair")
    stacks = {name: [] for name in list(layout.regions) + [REMAINDER]}
    for pair in train_set:
        parts = extract_components(pair.sketch, layout)
        for name in stacks:
            stacks[name].append(parts[name][..., None])
    return {name: np.stack(arrs) for name, arrs in stacks.items()}


@dataclass
class Stage1Result:
    models: dict
    layout: ComponentLayout
    history: dict = field(default_factory=dict)  # name -> per-epoch eval L1
    epochs: int = 0

    @property
    def final_losses(self) -> dict:
        return {name: curve[-1] for name, curve in self.history.items() if curve}

    @property
    def mean_l1(self) -> float:
        losses = self.final_losses
        return float(np.mean(list(losses.values()))) if losses else float("nan")


def _eval_l1(model, data, chunk=16) -> float:
    total = 0.0
    with nn.no_grad():
        for i in range(0, len(data), chunk):
            batch = data[i : i + chunk]
            recon = model(batch).data
            total += float(np.abs(recon - batch).sum())
    return total / data.size


def _stage_dir(out_dir) -> Path:
    return Path(out_dir) / "stage1"


def train_stage1(train_set, config: ExperimentConfig, layout=None, out_dir=None) -> Stage1Result:
    """Train all five component autoencoders on sketch crops.

    Checkpoints land in {out_dir}/stage1/{component}/epoch_{k}.ckpt and
    training resumes from the newest one, optimizer state included.  A
    non-finite loss aborts with the offending component and step.
    """
    if layout is None:
        layout = layout_from_config(config)
    if out_dir is None:
        out_dir = config.out_dir
    stacks = component_batches(train_set, layout)
    models = build_models(config, layout)
    tc = config.train
    steps_per_epoch = max(1, min(tc.steps_per_epoch, tc.steps_stage1))
    total_epochs = math.ceil(tc.steps_stage1 / steps_per_epoch)
    base = _stage_dir(out_dir)
    history = {}
    epochs_done = {}

    for name, model in models.items():
        data = stacks[name]
        optim = nn.Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2))
        comp_dir = base / name
        start_epoch = 0
        curve = []
        resumed = latest_epoch(comp_dir)
        if resumed is not None:
            ckpt = load_checkpoint(comp_dir / f"epoch_{resumed}.ckpt")
            model.load_state_dict(ckpt.params)
            if ckpt.opt_state is not None:
                optim.load_state_dict(ckpt.opt_state)
            start_epoch = resumed + 1
            curve = list(ckpt.meta.get("history", []))

        batch = min(tc.batch_size, len(data))
        for epoch in range(start_epoch, total_epochs):
            # per-epoch stream so a resumed run draws the same batches an
            # uninterrupted run would
            rng = component_rng(config.seed, f"batches:{name}:{epoch}")
            for step in range(steps_per_epoch):
                idx = rng.choice(len(data), size=batch, replace=False)
                x = data[idx]
                model.zero_grad()
                loss = l1_loss(model.decode_raw(model.encode(x)), nn.constant(x))
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"stage-1 diverged: component {name}, epoch {epoch}, "
                        f"step {step}, loss {value}"
                    )
                loss.backward()
                optim.step()
            eval_l1 = _eval_l1(model, data)
            curve.append(eval_l1)
            save_checkpoint(
                comp_dir / f"epoch_{epoch}.ckpt",
                model.state_dict(),
                optim.state_dict(),
                meta={
                    "component": name,
                    "epoch": epoch,
                    "fingerprint": config.fingerprint(),
                    "history": curve,
                },
            )
            if tc.target_l1_stage1 > 0 and eval_l1 < tc.target_l1_stage1:
                break
        history[name] = curve
        epochs_done[name] = len(curve)

    meta = {
        "components": list(models),
        "latent_dim": config.model.latent_dim,
        "fingerprint": config.fingerprint(),
        "epochs": epochs_done,
        "canvas_size": list(layout.canvas_size),
        "attention": config.toggles.sa,
    }
    base.mkdir(parents=True, exist_ok=True)
    (base / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return Stage1Result(models=models, layout=layout, history=history, epochs=total_epochs)


def load_stage1(out_dir, config: ExperimentConfig, layout=None) -> Stage1Result:
    """Rebuild the component models from the newest stage-1 checkpoints."""
    if layout is None:
        layout = layout_from_config(config)
    base = _stage_dir(out_dir)
    if not (base / "meta.json").exists():
        raise FileNotFoundError(f"no stage-1 checkpoints under {base}")
    models = build_models(config, layout)
    history = {}
    for name, model in models.items():
        comp_dir = base / name
        epoch = latest_epoch(comp_dir)
        if epoch is None:
            raise FileNotFoundError(f"no stage-1 checkpoint for component {name} under {comp_dir}")
        ckpt = load_checkpoint(comp_dir / f"epoch_{epoch}.ckpt")
        model.load_state_dict(ckpt.params)
        history[name] = list(ckpt.meta.get("history", []))
    return Stage1Result(models=models, layout=layout, history=history)


def encode_all(models: dict, sketch, layout) -> dict:
    """Component latents for one sketch: name -> (latent_dim,) array."""
    parts = extract_components(sketch, layout)
    return {name: encode_component(parts[name], model) for name, model in models.items()}
