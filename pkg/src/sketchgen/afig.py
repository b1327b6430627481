"""Coarse generation: component latents are projected to spatial feature
maps, assembled into a feature canvas partitioned exactly like the sketch,
and decoded by a coordinate-gated convolutional generator against a patch
discriminator.

The gating path evaluates a small network on the static coordinate grid and
multiplies the resulting mask into the convolved canvas, so position alone
can modulate how strongly each region's features pass through.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import latest_epoch, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import ComponentLayout, extract_components
from .losses import (
    RandomConvPyramid,
    gan_loss_d,
    gan_loss_g,
    gram_from_taps,
    l1_loss,
    perceptual_from_taps,
)
from .nn import Tensor
from .stage1 import REMAINDER, Stage1Result, component_rng, load_stage1

log = logging.getLogger(__name__)

GATE_MODES = ("learned", "ones", "zeros", "bypass")


class FeatureDecoder(nn.Module):
    """Fresh latent -> (h, w, channels) projection head for one component;
    independent of the stage-1 reconstruction decoder."""

    def __init__(self, rng, latent_dim, out_shape, channels):
        h, w = (int(v) for v in out_shape)
        if h < 1 or w < 1:
            raise ValueError(f"feature map shape must be positive, got {(h, w)}")
        self.out_shape = (h, w)
        self.channels = channels
        self.spatial = [(h, w)]
        for _ in range(2):
            ch, cw = self.spatial[-1]
            if min(ch, cw) < 2:
                break
            self.spatial.append((math.ceil(ch / 2), math.ceil(cw / 2)))
        deep_h, deep_w = self.spatial[-1]
        self.fc = nn.Dense(rng, latent_dim, deep_h * deep_w * 2 * channels)
        self.convs = [
            nn.Conv2d(rng, 2 * channels, 2 * channels, kernel=3)
            for _ in range(len(self.spatial) - 1)
        ]
        self.head = nn.Conv2d(rng, 2 * channels, channels, kernel=3)

    def __call__(self, latent) -> Tensor:
        z = nn.as_tensor(latent)
        if z.data.ndim == 1:
            z = z.reshape(1, -1)
        n = z.data.shape[0]
        deep_h, deep_w = self.spatial[-1]
        t = nn.leaky_relu(self.fc(z)).reshape(n, deep_h, deep_w, 2 * self.channels)
        for level, conv in zip(range(len(self.spatial) - 2, -1, -1), self.convs):
            th, tw = self.spatial[level]
            t = nn.upsample2x(t)
            t = nn.crop(t, 0, th, 0, tw)
            t = nn.leaky_relu(conv(t))
        return self.head(t)


def build_feature_decoders(config: ExperimentConfig, feature_layout) -> dict:
    mc = config.model
    decoders = {}
    for name in feature_layout.regions:
        decoders[name] = FeatureDecoder(
            component_rng(config.seed, f"fm:{name}"),
            mc.latent_dim,
            feature_layout.component_shape(name),
            mc.feature_channels,
        )
    decoders[REMAINDER] = FeatureDecoder(
        component_rng(config.seed, f"fm:{REMAINDER}"),
        mc.latent_dim,
        feature_layout.canvas_size,
        mc.feature_channels,
    )
    return decoders


def feature_map_project(latents: dict, decoders: dict) -> dict:
    """Run every component latent through its projection head."""
    missing = set(decoders) - set(latents)
    if missing:
        raise ValueError(f"missing latents for components: {sorted(missing)}")
    return {name: decoders[name](latents[name]) for name in decoders}


def write_count_map(layout) -> np.ndarray:
    """How many writers touch each canvas position during assembly: the
    remainder covers the complement of the named boxes, so an exact partition
    is all-ones."""
    h, w = layout.canvas_size
    count = np.zeros((h, w), dtype=np.int64)
    for x0, y0, x1, y1 in layout.regions.values():
        count[y0:y1, x0:x1] += 1
    count += (count == 0).astype(np.int64)  # remainder writes where nothing else did
    return count


def assemble_canvas(maps: dict, layout, allow_overlap: bool = False) -> Tensor:
    """Place component feature maps into their boxes over the masked remainder
    map.  Default mode requires an exact partition; overlapping layouts must
    opt in, and later components then overwrite earlier ones."""
    h, w = layout.canvas_size
    count = write_count_map(layout)
    if not allow_overlap and not np.all(count == 1):
        worst = int(count.max())
        raise ValueError(
            f"layout does not partition the canvas (max write count {worst}); "
            "pass allow_overlap=True for saliency-derived layouts"
        )
    if allow_overlap and count.max() > 1:
        log.warning(
            "assembling canvas with overlapping regions; later components "
            "overwrite earlier ones"
        )

    remainder = nn.as_tensor(maps[REMAINDER])
    if remainder.data.ndim == 3:
        remainder = remainder.reshape(1, *remainder.shape)
    rh, rw = remainder.data.shape[1:3]
    if (rh, rw) != (h, w):
        raise ValueError(f"remainder map {rh}x{rw} does not cover canvas {h}x{w}")
    mask = layout.remainder_mask()[None, :, :, None]
    canvas = remainder * nn.constant(mask)
    for name, rect in layout.regions.items():
        x0, y0, x1, y1 = rect
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"{name} box {rect} outside canvas {h}x{w}")
        comp = nn.as_tensor(maps[name])
        if comp.data.ndim == 3:
            comp = comp.reshape(1, *comp.shape)
        if comp.data.shape[1:3] != (y1 - y0, x1 - x0):
            raise ValueError(
                f"{name} map shape {comp.data.shape[1:3]} does not match box {rect}"
            )
        placed = nn.place(comp, y0, x0, h, w)
        if allow_overlap:
            keep = np.ones((h, w))
            keep[y0:y1, x0:x1] = 0.0
            canvas = canvas * nn.constant(keep[None, :, :, None]) + placed
        else:
            canvas = canvas + placed
    return canvas


class CGFGenerator(nn.Module):
    """Feature canvas -> photo: coordinate-augmented convolution, learned
    positional gating, a residual trunk that upsamples to photo resolution,
    and an auxiliary hop that feeds the post-fusion coarse features directly
    into the last residual block."""

    def __init__(self, rng, feature_channels, width=32, out_channels=3, gate_hidden=16):
        self.spconv = nn.SPConv(rng, feature_channels, width)
        self.gate = nn.GatingNetwork(rng, hidden=gate_hidden)
        self.res1 = nn.ResidualBlock(rng, width)
        self.up_conv = nn.Conv2d(rng, width, width, kernel=3)
        self.merge = nn.Conv2d(rng, 2 * width, width, kernel=1)
        self.res2 = nn.ResidualBlock(rng, width)
        self.head = nn.Conv2d(rng, width, out_channels, kernel=3)
        self.width = width

    def fuse(self, canvas, gate_mode: str = "learned") -> Tensor:
        if gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}, got {gate_mode!r}")
        x = nn.as_tensor(canvas)
        if x.data.ndim == 3:
            x = x.reshape(1, *x.shape)
        feats = self.spconv(x)
        n, h, w, _ = feats.data.shape
        if gate_mode == "bypass":
            return feats
        if gate_mode == "learned":
            mask = self.gate.mask_for(w, h)
        elif gate_mode == "ones":
            mask = nn.constant(np.ones((h, w, 1)))
        else:
            mask = nn.constant(np.zeros((h, w, 1)))
        return nn.gated_fuse(feats, mask)

    def __call__(self, canvas, gate_mode: str = "learned", return_features: bool = False):
        fused = self.fuse(canvas, gate_mode)
        t = self.res1(fused)
        t = nn.leaky_relu(self.up_conv(nn.upsample2x(t)))
        aux = nn.upsample2x(fused)
        t = nn.leaky_relu(self.merge(nn.concat([t, aux], axis=-1)))
        t = self.res2(t)
        image = nn.sigmoid(self.head(t))
        if return_features:
            return image, fused
        return image


class FallbackDecoder(nn.Module):
    """Generator used when coordinate-gated assembly is toggled off: all
    component latents are concatenated and decoded monolithically."""

    def __init__(self, rng, n_components, latent_dim, out_size, width=32, out_channels=3):
        self.out_size = int(out_size)
        self.width = width
        levels = []
        size = self.out_size
        while size > 4 and len(levels) < 4:
            levels.append(size)
            size = math.ceil(size / 2)
        self.base = size
        self.levels = levels[::-1]  # coarse -> fine target sizes
        self.fc = nn.Dense(rng, n_components * latent_dim, size * size * width)
        self.convs = [nn.Conv2d(rng, width, width, kernel=3) for _ in self.levels]
        self.head = nn.Conv2d(rng, width, out_channels, kernel=3)

    def __call__(self, latents: dict) -> Tensor:
        parts = [nn.as_tensor(latents[name]) for name in sorted(latents)]
        parts = [p.reshape(1, -1) if p.data.ndim == 1 else p for p in parts]
        z = nn.concat(parts, axis=-1)
        n = z.data.shape[0]
        t = nn.leaky_relu(self.fc(z)).reshape(n, self.base, self.base, self.width)
        for target, conv in zip(self.levels, self.convs):
            t = nn.upsample2x(t)
            t = nn.crop(t, 0, target, 0, target)
            t = nn.leaky_relu(conv(t))
        return nn.sigmoid(self.head(t))


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack ending in a sigmoid patch realness map; a 64x64
    input with the default four downsamplings yields a 4x4 map."""

    def __init__(self, rng, in_channels=3, base=16, downsamplings=4):
        widths = [base, 2 * base] + [4 * base] * (downsamplings - 2)
        self.convs = []
        ch = in_channels
        for width in widths[:downsamplings]:
            self.convs.append(nn.Conv2d(rng, ch, width, kernel=3, stride=2))
            ch = width
        self.head = nn.Conv2d(rng, ch, 1, kernel=3)

    def __call__(self, x) -> Tensor:
        t = nn.as_tensor(x)
        if t.data.ndim == 3:
            t = t.reshape(1, *t.shape)
        for conv in self.convs:
            t = nn.leaky_relu(conv(t))
        return nn.sigmoid(self.head(t))


@dataclass
class Stage2Bundle:
    """Everything the coarse generator needs at inference time."""

    config: ExperimentConfig
    layout: ComponentLayout
    feature_layout: ComponentLayout | None
    encoders: dict
    fm: dict | None
    cgf: CGFGenerator | None
    fallback: FallbackDecoder | None
    disc: PatchDiscriminator
    extractor: RandomConvPyramid

    @property
    def uses_afig(self) -> bool:
        return self.cgf is not None

    def generator_modules(self) -> dict:
        mods = {}
        if self.uses_afig:
            mods.update({f"fm.{name}": dec for name, dec in self.fm.items()})
            mods["cgf"] = self.cgf
        else:
            mods["fallback"] = self.fallback
        return mods

    def generator_parameters(self, include_encoders: bool = False) -> list:
        params = []
        for mod in self.generator_modules().values():
            params.extend(mod.parameters())
        if include_encoders:
            for enc in self.encoders.values():
                params.extend(enc.parameters())
        return params

    def encode_batch(self, sketches: np.ndarray, with_grad: bool = False) -> dict:
        """Component latents for a batch of sketches: name -> (n, latent)."""
        crops = {name: [] for name in list(self.layout.regions) + [REMAINDER]}
        for sketch in sketches:
            parts = extract_components(sketch, self.layout)
            for name in crops:
                crops[name].append(parts[name][..., None])
        stacks = {name: np.stack(arrs) for name, arrs in crops.items()}
        if with_grad:
            return {name: self.encoders[name].encode(stacks[name]) for name in stacks}
        with nn.no_grad():
            return {
                name: nn.constant(self.encoders[name].encode(stacks[name]).data)
                for name in stacks
            }

    def generate(self, latents: dict, gate_mode: str = "learned") -> Tensor:
        if self.uses_afig:
            maps = feature_map_project(latents, self.fm)
            canvas = assemble_canvas(maps, self.feature_layout)
            return self.cgf(canvas, gate_mode=gate_mode)
        return self.fallback(latents)

    def generate_from_sketch(self, sketch, gate_mode: str = "learned") -> np.ndarray:
        with nn.no_grad():
            latents = self.encode_batch(np.asarray(sketch)[None])
            return self.generate(latents, gate_mode=gate_mode).data[0]


def build_stage2(config: ExperimentConfig, stage1: Stage1Result) -> Stage2Bundle:
    mc = config.model
    layout = stage1.layout
    if config.toggles.afig:
        feature_layout = layout.scaled(mc.feature_stride)
        fm = build_feature_decoders(config, feature_layout)
        cgf = CGFGenerator(
            component_rng(config.seed, "cgf"),
            mc.feature_channels,
            width=mc.gen_channels,
        )
        fallback = None
    else:
        feature_layout = None
        fm = None
        cgf = None
        fallback = FallbackDecoder(
            component_rng(config.seed, "fallback"),
            n_components=len(layout.regions) + 1,
            latent_dim=mc.latent_dim,
            out_size=layout.canvas_size[0],
            width=mc.gen_channels,
        )
    disc = PatchDiscriminator(component_rng(config.seed, "disc"), base=mc.disc_channels)
    extractor = RandomConvPyramid(seed=config.seed)
    return Stage2Bundle(
        config=config,
        layout=layout,
        feature_layout=feature_layout,
        encoders=stage1.models,
        fm=fm,
        cgf=cgf,
        fallback=fallback,
        disc=disc,
        extractor=extractor,
    )


def generator_loss(bundle: Stage2Bundle, fake: Tensor, real: np.ndarray):
    """Composite generator objective; returns (total, parts dict)."""
    weights = bundle.config.loss
    real_t = nn.constant(real)
    parts = {}
    parts["L1"] = l1_loss(fake, real_t)
    parts["GAN_g"] = gan_loss_g(bundle.disc(fake))
    fake_taps = bundle.extractor(fake)
    real_taps = bundle.extractor(real_t)
    parts["perc"] = perceptual_from_taps(fake_taps, real_taps)
    total = (
        nn.constant(weights.l1) * parts["L1"]
        + nn.constant(weights.gan) * parts["GAN_g"]
        + nn.constant(weights.perc) * parts["perc"]
    )
    if bundle.config.toggles.gm:
        parts["gram"] = gram_from_taps(fake_taps, real_taps)
        total = total + nn.constant(weights.gram) * parts["gram"]
    return total, parts


def _loss_columns(config: ExperimentConfig) -> list:
    cols = ["step", "L1", "GAN_g", "GAN_d", "perc"]
    if config.toggles.gm:
        cols.append("gram")
    return cols


@dataclass
class Stage2Result:
    bundle: Stage2Bundle
    history: list = field(default_factory=list)  # dicts matching the CSV columns
    csv_path: Path | None = None
    epochs: int = 0

    @property
    def final_l1(self) -> float:
        return self.history[-1]["L1"] if self.history else float("nan")


def _flat_params(bundle: Stage2Bundle) -> dict:
    params = {}
    for prefix, mod in bundle.generator_modules().items():
        for name, tensor in mod.named_parameters():
            params[f"{prefix}.{name}"] = tensor
    for name, tensor in bundle.disc.named_parameters():
        params[f"disc.{name}"] = tensor
    for comp, enc in bundle.encoders.items():
        for name, tensor in enc.named_parameters():
            params[f"encoder.{comp}.{name}"] = tensor
    return params


def _state_of(bundle: Stage2Bundle) -> dict:
    return {name: t.data.copy() for name, t in _flat_params(bundle).items()}


def _load_state(bundle: Stage2Bundle, state: dict):
    own = _flat_params(bundle)
    missing = set(own) - set(state)
    unexpected = set(state) - set(own)
    if missing or unexpected:
        raise KeyError(
            f"stage-2 state mismatch: missing={sorted(missing)} "
            f"unexpected={sorted(unexpected)}"
        )
    for name, tensor in own.items():
        tensor.data = np.asarray(state[name], dtype=np.float64).copy()


def train_stage2(
    train_set,
    config: ExperimentConfig,
    stage1: Stage1Result | None = None,
    out_dir=None,
) -> Stage2Result:
    """Adversarial training of the coarse generator against a patch
    discriminator, alternating one discriminator and one generator update.

    Losses per logged step go to {out_dir}/stage2/losses.csv; checkpoints to
    {out_dir}/stage2/epoch_{k}.ckpt.  Stage-1 checkpoints must exist unless a
    Stage1Result is passed in.  Component encoders only receive gradients
    when config.train.joint_finetune is set.
    """
    if len(train_set) == 0:
        raise ValueError("stage-2 training requires at least one pair")
    if out_dir is None:
        out_dir = config.out_dir
    if stage1 is None:
        stage1 = load_stage1(out_dir, config)  # raises FileNotFoundError if absent

    bundle = build_stage2(config, stage1)
    tc = config.train
    finetune = bool(tc.joint_finetune)
    photos = np.stack([np.asarray(p.photo, dtype=np.float64) for p in train_set])
    sketches = np.stack([np.asarray(p.sketch, dtype=np.float64) for p in train_set])

    g_opt = nn.Adam(
        bundle.generator_parameters(include_encoders=finetune),
        lr=tc.lr,
        betas=(tc.beta1, tc.beta2),
    )
    d_opt = nn.Adam(bundle.disc.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2))

    stage_dir = Path(out_dir) / "stage2"
    steps_per_epoch = max(1, min(tc.steps_per_epoch, tc.steps_stage2))
    total_epochs = math.ceil(tc.steps_stage2 / steps_per_epoch)
    start_epoch = 0
    history: list = []
    resumed = latest_epoch(stage_dir)
    if resumed is not None:
        ckpt = load_checkpoint(stage_dir / f"epoch_{resumed}.ckpt")
        _load_state(bundle, ckpt.params)
        g_opt.load_state_dict(ckpt.opt_states["gen"])
        d_opt.load_state_dict(ckpt.opt_states["disc"])
        start_epoch = resumed + 1
        history = list(ckpt.meta.get("history", []))

    columns = _loss_columns(config)
    batch = min(tc.batch_size, len(train_set))
    stage_dir.mkdir(parents=True, exist_ok=True)
    csv_path = stage_dir / "losses.csv"
    mode = "a" if (resumed is not None and csv_path.exists()) else "w"
    csv_file = open(csv_path, mode, newline="")
    writer = csv.writer(csv_file)
    if mode == "w":
        writer.writerow(columns)

    try:
        for epoch in range(start_epoch, total_epochs):
            rng = component_rng(config.seed, f"stage2:batches:{epoch}")
            for step_in_epoch in range(steps_per_epoch):
                step = epoch * steps_per_epoch + step_in_epoch
                idx = rng.choice(len(train_set), size=batch, replace=False)
                real = photos[idx]
                latents = bundle.encode_batch(sketches[idx], with_grad=finetune)

                # discriminator ascends E[log D(real)] + E[log(1 - D(fake))]
                with nn.no_grad():
                    fake_detached = bundle.generate(
                        {k: nn.constant(v.data) for k, v in latents.items()}
                    ).data
                bundle.disc.zero_grad()
                d_value = gan_loss_d(
                    bundle.disc(nn.constant(real)),
                    bundle.disc(nn.constant(fake_detached)),
                )
                d_loss = -d_value
                d_loss.backward()
                d_opt.step()

                for mod in bundle.generator_modules().values():
                    mod.zero_grad()
                for enc in bundle.encoders.values():
                    enc.zero_grad()
                fake = bundle.generate(latents)
                total, parts = generator_loss(bundle, fake, real)
                values = {k: v.item() for k, v in parts.items()}
                values["GAN_d"] = d_loss.item()
                if not all(np.isfinite(list(values.values()))):
                    raise RuntimeError(
                        f"stage-2 diverged: epoch {epoch}, step {step}, losses {values}"
                    )
                total.backward()
                g_opt.step()

                if step % max(1, tc.log_every) == 0 or step_in_epoch == steps_per_epoch - 1:
                    row = {"step": step, **{c: values[c] for c in columns if c != "step"}}
                    history.append(row)
                    writer.writerow([row[c] for c in columns])
                    csv_file.flush()

            save_checkpoint(
                stage_dir / f"epoch_{epoch}.ckpt",
                _state_of(bundle),
                {"gen": g_opt.state_dict(), "disc": d_opt.state_dict()},
                meta={
                    "epoch": epoch,
                    "fingerprint": config.fingerprint(),
                    "history": history,
                    "finetune": finetune,
                },
            )
            if tc.target_l1_stage2 > 0 and history and history[-1]["L1"] < tc.target_l1_stage2:
                break
    finally:
        csv_file.close()

    return Stage2Result(
        bundle=bundle,
        history=history,
        csv_path=csv_path,
        epochs=total_epochs,
    )


def one_step_improvement(bundle: Stage2Bundle, sketches, photos, lr=1e-6):
    """Composite generator loss on a frozen batch before and after a single
    small optimizer step; a correct gradient strictly decreases it."""
    sketches = np.asarray(sketches, dtype=np.float64)
    photos = np.asarray(photos, dtype=np.float64)
    opt = nn.Adam(bundle.generator_parameters(), lr=lr)

    def compute():
        latents = bundle.encode_batch(sketches)
        fake = bundle.generate(latents)
        total, _ = generator_loss(bundle, fake, photos)
        return total

    for mod in bundle.generator_modules().values():
        mod.zero_grad()
    loss = compute()
    before = loss.item()
    loss.backward()
    opt.step()
    with nn.no_grad():
        after = compute().item()
    return before, after


def load_stage2(out_dir, config: ExperimentConfig, stage1: Stage1Result | None = None) -> Stage2Result:
    """Rebuild the stage-2 bundle from the newest checkpoint."""
    if stage1 is None:
        stage1 = load_stage1(out_dir, config)
    stage_dir = Path(out_dir) / "stage2"
    epoch = latest_epoch(stage_dir)
    if epoch is None:
        raise FileNotFoundError(f"no stage-2 checkpoint under {stage_dir}")
    bundle = build_stage2(config, stage1)
    ckpt = load_checkpoint(stage_dir / f"epoch_{epoch}.ckpt")
    _load_state(bundle, ckpt.params)
    return Stage2Result(
        bundle=bundle,
        history=list(ckpt.meta.get("history", [])),
        csv_path=stage_dir / "losses.csv",
    )
