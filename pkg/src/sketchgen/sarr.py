"""Sketch-guided refinement of the coarse generator output.

A UNet consumes the channel-concatenated (image, sketch) pair; its decoder
uses demodulated convolutions with per-level spatial feature transforms
conditioned on the encoder skips (no stochastic noise injection).  The head
is zero-initialized and predicts a residual that is added to the incoming
image and clipped to [0,1], so an untrained refiner is exactly the identity
and cannot degrade the coarse result.  Refinement runs T feedback
iterations with shared weights, each consuming the previous output plus the
original sketch.  An identity embedder trained once on labelled toy faces
(then frozen) supplies a face-consistency penalty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .afig import PatchDiscriminator, Stage2Result, load_stage2
from .checkpoint import latest_epoch, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .losses import gan_loss_d, gan_loss_g, l1_loss, perceptual_from_taps
from .nn import Tensor
from .stage1 import component_rng


class SARRModel(nn.Module):
    def __init__(self, rng, width=16, levels=2, image_channels=3, sketch_channels=1):
        self.image_channels = image_channels
        self.sketch_channels = sketch_channels
        self.levels = levels
        widths = [min(width * 2**i, 4 * width) for i in range(levels + 1)]
        self.stem = nn.Conv2d(rng, image_channels + sketch_channels, widths[0])
        self.downs = [
            nn.Conv2d(rng, widths[i], widths[i + 1], kernel=3, stride=2)
            for i in range(levels)
        ]
        self.bottleneck = nn.ResidualBlock(rng, widths[-1])
        self.dconvs = [
            nn.DemodConv(rng, widths[i + 1], widths[i]) for i in reversed(range(levels))
        ]
        self.sfts = [
            nn.SFTModulate(rng, widths[i], widths[i]) for i in reversed(range(levels))
        ]
        self.head = nn.Conv2d(rng, widths[0], image_channels)
        self.head.w.data[:] = 0.0  # start as the identity refiner
        self.head.b.data[:] = 0.0
        self.sft_enabled = True

    def force_plain(self):
        """Pin every spatial modulation to gamma=1, beta=0."""
        for sft in self.sfts:
            sft.force_identity()

    def delta(self, image, sketch) -> Tensor:
        """Residual the UNet proposes for one iteration."""
        img = nn.as_tensor(image)
        sk = nn.as_tensor(sketch)
        if img.data.ndim == 3:
            img = img.reshape(1, *img.shape)
        if sk.data.ndim == 2:
            sk = sk.reshape(1, *sk.shape, 1)
        elif sk.data.ndim == 3:
            if sk.data.shape[-1] == self.sketch_channels:
                sk = sk.reshape(1, *sk.shape)  # single channelled sketch
            else:
                sk = sk.reshape(*sk.shape, 1)  # batch of plain 2-D sketches
        if img.data.shape[1:3] != sk.data.shape[1:3]:
            raise ValueError(
                f"image {img.data.shape[1:3]} and sketch {sk.data.shape[1:3]} "
                "spatial dims differ"
            )
        t = nn.leaky_relu(self.stem(nn.concat([img, sk], axis=-1)))
        skips = [t]
        shapes = [t.data.shape[1:3]]
        for down in self.downs:
            t = nn.leaky_relu(down(t))
            skips.append(t)
            shapes.append(t.data.shape[1:3])
        t = self.bottleneck(t)
        for level, (dconv, sft) in enumerate(zip(self.dconvs, self.sfts)):
            target = shapes[self.levels - 1 - level]
            t = nn.upsample2x(t)
            t = nn.crop(t, 0, target[0], 0, target[1])
            t = dconv(t)
            if self.sft_enabled:
                t = sft(t, skips[self.levels - 1 - level])
            t = nn.leaky_relu(t)
        return self.head(t)

    def __call__(self, image, sketch) -> Tensor:
        img = nn.as_tensor(image)
        if img.data.ndim == 3:
            img = img.reshape(1, *img.shape)
        return nn.clip(img + self.delta(img, sketch), 0.0, 1.0)


def sarr_forward(coarse, sketch, model: SARRModel, iters: int) -> Tensor:
    """T shared-weight feedback iterations; iteration t consumes the previous
    output concatenated with the original sketch."""
    if iters < 1:
        raise ValueError(f"refinement needs at least one iteration, got {iters}")
    out = nn.as_tensor(coarse)
    if out.data.ndim == 3:
        out = out.reshape(1, *out.shape)
    for _ in range(iters):
        out = model(out, sketch)
    return out


class IdentityEmbedder(nn.Module):
    """Four stride-2 convolutions, spatial mean, linear head to embed_dim."""

    def __init__(self, rng, in_channels=3, base=8, embed_dim=128):
        widths = [base, 2 * base, 4 * base, 4 * base]
        self.convs = []
        ch = in_channels
        for width in widths:
            self.convs.append(nn.Conv2d(rng, ch, width, kernel=3, stride=2))
            ch = width
        self.fc = nn.Dense(rng, ch, embed_dim)
        self.embed_dim = embed_dim

    def __call__(self, x) -> Tensor:
        t = nn.as_tensor(x)
        if t.data.ndim == 3:
            t = t.reshape(1, *t.shape)
        for conv in self.convs:
            t = nn.leaky_relu(conv(t))
        pooled = t.mean(axis=(1, 2))
        return self.fc(pooled)

    def embed(self, x) -> np.ndarray:
        with nn.no_grad():
            return self(x).data


def identity_loss(refined, real, embedder, lambda_id: float = 1.0) -> Tensor:
    """Scaled sum of absolute embedding differences between the refined and
    real images."""
    e_refined = embedder(refined)
    e_real = embedder(real)
    e_refined = nn.as_tensor(e_refined)
    e_real = nn.as_tensor(e_real)
    if e_refined.data.shape[-1] != e_real.data.shape[-1]:
        raise ValueError(
            f"embedding widths differ: {e_refined.data.shape[-1]} vs "
            f"{e_real.data.shape[-1]}"
        )
    return nn.constant(lambda_id) * nn.absval(e_refined - e_real).sum()


def train_identity_embedder(train_set, config: ExperimentConfig, margin: float = 1.0) -> IdentityEmbedder:
    """Margin contrastive training on identity labels: same-identity photo
    pairs are pulled together, different-identity pairs pushed past the
    margin.  The returned embedder is meant to be frozen afterwards."""
    if len(train_set) == 0:
        raise ValueError("embedder training requires at least one pair")
    photos = np.stack([np.asarray(p.photo, dtype=np.float64) for p in train_set])
    labels = [p.identity_id for p in train_set]
    embedder = IdentityEmbedder(
        component_rng(config.seed, "identity-embedder"),
        base=max(4, config.model.base_channels),
        embed_dim=config.model.embed_dim,
    )
    opt = nn.Adam(embedder.parameters(), lr=config.train.lr, betas=(0.9, 0.999))
    rng = component_rng(config.seed, "identity-embedder:batches")
    n = len(photos)
    if n < 2:
        return embedder
    for _ in range(config.train.steps_embedder):
        i, j = rng.choice(n, size=2, replace=False)
        embedder.zero_grad()
        d = embedder(photos[i][None]) - embedder(photos[j][None])
        dist_sq = (d * d).sum()
        if labels[i] == labels[j]:
            loss = dist_sq
        else:
            gap = nn.constant(margin) - nn.sqrt(dist_sq + nn.constant(1e-12))
            gap = nn.maximum(gap, 0.0)
            loss = gap * gap
        loss.backward()
        opt.step()
    return embedder


@dataclass
class SARRResult:
    model: SARRModel
    embedder: IdentityEmbedder | None
    history: list = field(default_factory=list)
    csv_path: Path | None = None
    iters: int = 2

    @property
    def final_l1(self) -> float:
        return self.history[-1]["L1"] if self.history else float("nan")

    def refine(self, coarse, sketch) -> np.ndarray:
        with nn.no_grad():
            return sarr_forward(coarse, sketch, self.model, self.iters).data


_COLUMNS = ["step", "L1", "GAN_g", "GAN_d", "perc", "identity"]


def train_sarr(
    train_set,
    config: ExperimentConfig,
    stage2: Stage2Result | None = None,
    out_dir=None,
) -> SARRResult:
    """Train the refiner against frozen coarse outputs with a fresh
    discriminator.  Loss rows go to {out_dir}/sarr/losses.csv; checkpoints to
    {out_dir}/sarr/epoch_{k}.ckpt.  The identity column logs exactly 0.0 when
    the identity weight is zero."""
    if len(train_set) == 0:
        raise ValueError("refinement training requires at least one pair")
    if out_dir is None:
        out_dir = config.out_dir
    if stage2 is None:
        stage2 = load_stage2(out_dir, config)

    tc = config.train
    mc = config.model
    bundle = stage2.bundle
    photos = np.stack([np.asarray(p.photo, dtype=np.float64) for p in train_set])
    sketches = np.stack([np.asarray(p.sketch, dtype=np.float64) for p in train_set])
    coarse = np.stack([bundle.generate_from_sketch(s) for s in sketches])

    model = SARRModel(
        component_rng(config.seed, "sarr"),
        width=mc.sarr_channels,
        levels=2,
    )
    disc = PatchDiscriminator(
        component_rng(config.seed, "sarr:disc"), base=mc.disc_channels
    )
    lambda_id = config.loss.identity
    embedder = None
    if lambda_id > 0:
        embedder = train_identity_embedder(train_set, config)

    g_opt = nn.Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2))
    d_opt = nn.Adam(disc.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2))

    stage_dir = Path(out_dir) / "sarr"
    steps_per_epoch = max(1, min(tc.steps_per_epoch, tc.steps_sarr))
    total_epochs = math.ceil(tc.steps_sarr / steps_per_epoch)
    start_epoch = 0
    history: list = []
    resumed = latest_epoch(stage_dir)
    if resumed is not None:
        ckpt = load_checkpoint(stage_dir / f"epoch_{resumed}.ckpt")
        model_state = {
            k[len("model."):]: v for k, v in ckpt.params.items() if k.startswith("model.")
        }
        disc_state = {
            k[len("disc."):]: v for k, v in ckpt.params.items() if k.startswith("disc.")
        }
        model.load_state_dict(model_state)
        disc.load_state_dict(disc_state)
        g_opt.load_state_dict(ckpt.opt_states["gen"])
        d_opt.load_state_dict(ckpt.opt_states["disc"])
        if embedder is not None and (stage_dir / "embedder.ckpt").exists():
            embedder.load_state_dict(load_checkpoint(stage_dir / "embedder.ckpt").params)
        start_epoch = resumed + 1
        history = list(ckpt.meta.get("history", []))

    stage_dir.mkdir(parents=True, exist_ok=True)
    if embedder is not None and resumed is None:
        save_checkpoint(stage_dir / "embedder.ckpt", embedder.state_dict())

    csv_path = stage_dir / "losses.csv"
    mode = "a" if (resumed is not None and csv_path.exists()) else "w"
    csv_file = open(csv_path, mode, newline="")
    writer = csv.writer(csv_file)
    if mode == "w":
        writer.writerow(_COLUMNS)

    batch = min(tc.batch_size, len(train_set))
    weights = config.loss
    try:
        for epoch in range(start_epoch, total_epochs):
            rng = component_rng(config.seed, f"sarr:batches:{epoch}")
            for step_in_epoch in range(steps_per_epoch):
                step = epoch * steps_per_epoch + step_in_epoch
                idx = rng.choice(len(train_set), size=batch, replace=False)
                real = photos[idx]
                sk = sketches[idx][..., None]
                base = coarse[idx]

                with nn.no_grad():
                    refined_detached = sarr_forward(
                        nn.constant(base), nn.constant(sk), model, mc.feedback_depth
                    ).data
                disc.zero_grad()
                d_value = gan_loss_d(
                    disc(nn.constant(real)), disc(nn.constant(refined_detached))
                )
                d_loss = -d_value
                d_loss.backward()
                d_opt.step()

                model.zero_grad()
                refined = sarr_forward(
                    nn.constant(base), nn.constant(sk), model, mc.feedback_depth
                )
                parts = {
                    "L1": l1_loss(refined, nn.constant(real)),
                    "GAN_g": gan_loss_g(disc(refined)),
                    "perc": perceptual_from_taps(
                        bundle.extractor(refined), bundle.extractor(nn.constant(real))
                    ),
                }
                total = (
                    nn.constant(weights.l1) * parts["L1"]
                    + nn.constant(weights.gan) * parts["GAN_g"]
                    + nn.constant(weights.perc) * parts["perc"]
                )
                if lambda_id > 0:
                    parts["identity"] = identity_loss(
                        refined, nn.constant(real), embedder, lambda_id
                    )
                    total = total + parts["identity"]

                values = {k: v.item() for k, v in parts.items()}
                values.setdefault("identity", 0.0)
                values["GAN_d"] = d_loss.item()
                if not all(np.isfinite(list(values.values()))):
                    raise RuntimeError(
                        f"refinement diverged: epoch {epoch}, step {step}, losses {values}"
                    )
                total.backward()
                g_opt.step()

                if step % max(1, tc.log_every) == 0 or step_in_epoch == steps_per_epoch - 1:
                    row = {"step": step, **{c: values[c] for c in _COLUMNS if c != "step"}}
                    history.append(row)
                    writer.writerow([row[c] for c in _COLUMNS])
                    csv_file.flush()

            params = {f"model.{k}": v for k, v in model.state_dict().items()}
            params.update({f"disc.{k}": v for k, v in disc.state_dict().items()})
            save_checkpoint(
                stage_dir / f"epoch_{epoch}.ckpt",
                params,
                {"gen": g_opt.state_dict(), "disc": d_opt.state_dict()},
                meta={
                    "epoch": epoch,
                    "fingerprint": config.fingerprint(),
                    "history": history,
                    "iters": mc.feedback_depth,
                },
            )
    finally:
        csv_file.close()

    return SARRResult(
        model=model,
        embedder=embedder,
        history=history,
        csv_path=csv_path,
        iters=mc.feedback_depth,
    )


def load_sarr(out_dir, config: ExperimentConfig) -> SARRResult:
    stage_dir = Path(out_dir) / "sarr"
    epoch = latest_epoch(stage_dir)
    if epoch is None:
        raise FileNotFoundError(f"no refinement checkpoint under {stage_dir}")
    ckpt = load_checkpoint(stage_dir / f"epoch_{epoch}.ckpt")
    model = SARRModel(
        component_rng(config.seed, "sarr"),
        width=config.model.sarr_channels,
        levels=2,
    )
    model.load_state_dict(
        {k[len("model."):]: v for k, v in ckpt.params.items() if k.startswith("model.")}
    )
    embedder = None
    if (stage_dir / "embedder.ckpt").exists():
        embedder = IdentityEmbedder(
            component_rng(config.seed, "identity-embedder"),
            base=max(4, config.model.base_channels),
            embed_dim=config.model.embed_dim,
        )
        embedder.load_state_dict(load_checkpoint(stage_dir / "embedder.ckpt").params)
    return SARRResult(
        model=model,
        embedder=embedder,
        history=list(ckpt.meta.get("history", [])),
        csv_path=stage_dir / "losses.csv",
        iters=ckpt.meta.get("iters", config.model.feedback_depth),
    )
