"""Alternating generator/discriminator training of the two translators."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autodiff import NonFiniteGradientError, Tensor, adam_step, backward, l1_distance, no_grad
from ..autodiff.checkpoint import save_checkpoint
from ..raster import MultibandImage, NormalizationSpec, TileDataset, fit_normalization, normalize
from ..seeding import stream
from .losses import (
    ADVERSARIAL_MODES,
    LossReport,
    cycle_loss,
    discriminator_loss,
    full_objective,
    generator_adversarial_loss,
)
from .networks import CycleNets, TranslatorParams
from .replay import ReplayBuffer

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    """A loss or gradient became non-finite; ``report`` holds the offending values."""

    def __init__(self, message: str, report: Optional[dict] = None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class TrainConfig:
    lambda_cyc: float = 10.0
    epochs: int = 1000
    decay_start_epoch: int = 500
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    patch_size: int = 32
    adversarial_mode: str = "least_squares"
    replay_capacity: int = 50
    identity_weight: float = 0.0
    base_width: int = 8
    n_res: int = 2
    disc_layers: int = 3
    checkpoint_every: int = 0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not self.lambda_cyc >= 0:
            raise ConfigError(f"lambda_cyc must be >= 0, got {self.lambda_cyc}")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise ConfigError(
                f"decay_start_epoch {self.decay_start_epoch} must lie in [0, epochs={self.epochs}]")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.patch_size < 8 or self.patch_size % 4:
            raise ConfigError("patch_size must be a multiple of 4 and at least 8")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ConfigError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        if self.replay_capacity < 0 or self.identity_weight < 0:
            raise ConfigError("replay_capacity and identity_weight must be non-negative")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(epoch: float, config: TrainConfig) -> float:
    """Constant ``lr`` before ``decay_start_epoch``, then linear down to 0 at ``epochs``."""
    if epoch < config.decay_start_epoch:
        return config.lr
    span = config.epochs - config.decay_start_epoch
    if span <= 0:
        return config.lr if epoch < config.epochs else 0.0
    frac = (config.epochs - epoch) / span
    return config.lr * min(1.0, max(0.0, frac))


def init_nets(channels: int, config: TrainConfig, dtype=np.float32) -> CycleNets:
    return CycleNets.init(
        channels, stream(config.seed, "init"), base=config.base_width, n_res=config.n_res,
        disc_base=config.base_width, disc_layers=config.disc_layers,
        sigmoid_output=config.adversarial_mode == "cross_entropy", dtype=dtype)


@contextlib.contextmanager
def frozen(*nets: TranslatorParams):
    """Skip weight-gradient bookkeeping for ``nets`` inside the block."""
    tensors = [t for n in nets for t in n.params.tensors()]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t in tensors:
            t.requires_grad = True


def generator_objective(nets: CycleNets, x: Tensor, y: Tensor, config: TrainConfig):
    """Generator-side loss (adversarial terms + weighted cycle loss) and its parts."""
    mode = config.adversarial_mode
    fake_y = nets.G(x)
    rec_x = nets.F(fake_y)
    fake_x = nets.F(y)
    rec_y = nets.G(fake_x)
    adv_g = generator_adversarial_loss(nets.D_Y(fake_y), mode)
    adv_f = generator_adversarial_loss(nets.D_X(fake_x), mode)
    cyc = cycle_loss(x, rec_x, y, rec_y)
    total = adv_g + adv_f + cyc * config.lambda_cyc
    if config.identity_weight > 0:
        ident = l1_distance(nets.G(y), y) + l1_distance(nets.F(x), x)
        total = total + ident * config.identity_weight
    parts = {"adv_g": adv_g, "adv_f": adv_f, "cyc": cyc, "fake_y": fake_y, "fake_x": fake_x}
    return total, parts


def discriminator_objectives(nets: CycleNets, x: np.ndarray, y: np.ndarray,
                             fake_x: np.ndarray, fake_y: np.ndarray, mode: str):
    dt = nets.D_X.params.dtype
    d_x = discriminator_loss(nets.D_X(Tensor(x.astype(dt))), nets.D_X(Tensor(fake_x.astype(dt))), mode)
    d_y = discriminator_loss(nets.D_Y(Tensor(y.astype(dt))), nets.D_Y(Tensor(fake_y.astype(dt))), mode)
    return d_x, d_y


def _adam(net: TranslatorParams, lr: float, config: TrainConfig) -> None:
    adam_step(net.params, lr=lr, beta1=config.beta1, beta2=config.beta2)


def train_step(batch_x: np.ndarray, batch_y: np.ndarray, nets: CycleNets, config: TrainConfig,
               *, lr: Optional[float] = None, pools: Optional[dict] = None,
               epoch: int = 0, step: int = 0) -> LossReport:
    """One alternating update; returns losses measured before the update.

    Generators step first on the generator objective; then each discriminator
    steps on real images against fakes drawn through its replay pool.
    """
    lr = config.lr if lr is None else lr
    pools = pools if pools is not None else {}
    dt = nets.G.params.dtype
    x = Tensor(np.asarray(batch_x, dtype=dt))
    y = Tensor(np.asarray(batch_y, dtype=dt))

    for net in nets.members().values():
        net.params.zero_grad()
    with frozen(nets.D_X, nets.D_Y):
        gen_total, parts = generator_objective(nets, x, y, config)
    adv_g, adv_f, cyc = float(parts["adv_g"]), float(parts["adv_f"]), float(parts["cyc"])
    total = full_objective(adv_g, adv_f, cyc, config.lambda_cyc)

    fake_y = parts["fake_y"].data
    fake_x = parts["fake_x"].data
    if "X" in pools:
        fake_x = pools["X"].query(fake_x)
    if "Y" in pools:
        fake_y = pools["Y"].query(fake_y)
    d_x, d_y = discriminator_objectives(nets, x.data, y.data, fake_x, fake_y, config.adversarial_mode)

    report = LossReport(epoch, step, adv_g, adv_f, float(d_x), float(d_y), cyc, total, lr)
    if not all(math.isfinite(v) for v in (float(gen_total), report.d_x_loss, report.d_y_loss, total)):
        raise TrainingDivergedError(f"non-finite loss at epoch {epoch} step {step}", report.as_dict())

    try:
        with frozen(nets.D_X, nets.D_Y):
            backward(gen_total)
        _adam(nets.G, lr, config)
        _adam(nets.F, lr, config)
        backward(d_x)
        _adam(nets.D_X, lr, config)
        backward(d_y)
        _adam(nets.D_Y, lr, config)
    except NonFiniteGradientError as exc:
        raise TrainingDivergedError(str(exc), report.as_dict()) from exc
    return report


def _crop(rng: np.random.Generator, tile: np.ndarray, size: int) -> np.ndarray:
    _, h, w = tile.shape
    if h == size and w == size:
        return tile
    if h < size or w < size:
        raise ConfigError(f"tile {h}x{w} is smaller than patch size {size}")
    r = int(rng.integers(h - size + 1))
    c = int(rng.integers(w - size + 1))
    return tile[:, r:r + size, c:c + size]


def _center_crop(tile: np.ndarray, multiple: int) -> np.ndarray:
    _, h, w = tile.shape
    hh, ww = h - h % multiple, w - w % multiple
    r, c = (h - hh) // 2, (w - ww) // 2
    return tile[:, r:r + hh, c:c + ww]


def heldout_cycle_loss(nets: CycleNets, val_x: np.ndarray, val_y: np.ndarray) -> float:
    """Mean cycle loss over held-out tiles, paired index-wise up to the shorter set."""
    n = min(len(val_x), len(val_y))
    if n == 0:
        return float("nan")
    f = nets.G.downsample_factor
    dt = nets.G.params.dtype
    total = 0.0
    with no_grad():
        for i in range(n):
            x = Tensor(_center_crop(val_x[i], f)[None].astype(dt))
            y = Tensor(_center_crop(val_y[i], f)[None].astype(dt))
            total += float(cycle_loss(x, nets.F(nets.G(x)), y, nets.G(nets.F(y))))
    return total / n


@dataclass
class TrainResult:
    nets: CycleNets
    normalization: NormalizationSpec
    history: list[LossReport] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def checkpoint_meta(net: TranslatorParams, norm: NormalizationSpec, config: TrainConfig,
                    epoch: int) -> dict:
    return {"role": net.role, "arch": net.arch, "normalization": norm.to_dict(),
            "epoch": epoch, "train_config": config.to_dict()}


def save_nets(nets: CycleNets, norm: NormalizationSpec, config: TrainConfig, epoch: int,
              directory) -> Path:
    directory = Path(directory)
    for role, net in nets.members().items():
        save_checkpoint(net.params, directory / role, checkpoint_meta(net, norm, config, epoch))
    return directory


def _normalized_stack(images: Sequence[MultibandImage], norm: NormalizationSpec) -> np.ndarray:
    if not images:
        return np.zeros((0,), dtype=np.float32)
    return np.stack([normalize(im, norm).data for im in images]).astype(np.float32)


def train(x_train: Sequence[MultibandImage], y_train: Sequence[MultibandImage],
          config: TrainConfig, out_dir=None, *, x_val: Sequence[MultibandImage] = (),
          y_val: Sequence[MultibandImage] = (), norm: Optional[NormalizationSpec] = None,
          progress=None) -> TrainResult:
    """Train G: X -> Y and F: Y -> X for ``config.epochs`` epochs.

    One normalization is fit on the pooled training tiles of both domains
    unless given. When ``out_dir`` is set, writes ``loss_history.csv``,
    ``validation.csv``, periodic ``checkpoints/epoch_NNNN/`` and ``final/``.
    ``progress(epoch, validation_row)`` is called after every epoch.
    """
    config.validate()
    if not x_train or not y_train:
        raise ValueError("both training domains must be non-empty")
    channels = x_train[0].bands
    if any(im.bands != channels for im in list(x_train) + list(y_train)):
        raise ValueError("all training images must share band count")
    if norm is None:
        norm = fit_normalization(list(x_train) + list(y_train), 1.0, 99.0, clamp=True)

    xs = _normalized_stack(x_train, norm)
    ys = _normalized_stack(y_train, norm)
    vx = _normalized_stack(x_val, norm)
    vy = _normalized_stack(y_val, norm)

    nets = init_nets(channels, config)
    data_rng = stream(config.seed, "data")
    replay_rng = stream(config.seed, "replay")
    pools = {"X": ReplayBuffer(config.replay_capacity, replay_rng),
             "Y": ReplayBuffer(config.replay_capacity, replay_rng)}
    result = TrainResult(nets, norm)

    out = Path(out_dir) if out_dir is not None else None
    loss_file = val_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        loss_file = open(out / "loss_history.csv", "w", newline="")
        val_file = open(out / "validation.csv", "w", newline="")
    try:
        loss_writer = csv.writer(loss_file, lineterminator="\n") if loss_file else None
        val_writer = csv.writer(val_file, lineterminator="\n") if val_file else None
        if loss_writer:
            loss_writer.writerow(LossReport.CSV_COLUMNS)
            val_writer.writerow(["epoch", "heldout_cyc", "train_cyc_mean"])

        bs = config.batch_size
        steps = max(1, max(len(xs), len(ys)) // bs)
        global_step = 0
        for epoch in range(config.epochs):
            lr = lr_at(epoch, config)
            order_x = np.concatenate([data_rng.permutation(len(xs))
                                      for _ in range(math.ceil(steps * bs / len(xs)))])
            order_y = np.concatenate([data_rng.permutation(len(ys))
                                      for _ in range(math.ceil(steps * bs / len(ys)))])
            cyc_sum = 0.0
            for s in range(steps):
                bx = np.stack([_crop(data_rng, xs[i], config.patch_size)
                               for i in order_x[s * bs:(s + 1) * bs]])
                by = np.stack([_crop(data_rng, ys[i], config.patch_size)
                               for i in order_y[s * bs:(s + 1) * bs]])
                rep = train_step(bx, by, nets, config, lr=lr, pools=pools,
                                 epoch=epoch, step=global_step)
                result.history.append(rep)
                cyc_sum += rep.cyc
                global_step += 1
                if loss_writer:
                    loss_writer.writerow(rep.csv_row())
            row = {"epoch": epoch, "heldout_cyc": heldout_cycle_loss(nets, vx, vy),
                   "train_cyc_mean": cyc_sum / steps}
            result.validation.append(row)
            if val_writer:
                val_writer.writerow([epoch, repr(row["heldout_cyc"]), repr(row["train_cyc_mean"])])
            log.info("epoch %d lr %.3g train cyc %.4f held-out cyc %.4f",
                     epoch, lr, row["train_cyc_mean"], row["heldout_cyc"])
            if progress is not None:
                progress(epoch, row)
            if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                result.checkpoints.append(
                    save_nets(nets, norm, config, epoch + 1, out / "checkpoints" / f"epoch_{epoch + 1:04d}"))
        if out is not None:
            result.checkpoints.append(save_nets(nets, norm, config, config.epochs, out / "final"))
    finally:
        if loss_file:
            loss_file.close()
            val_file.close()
    return result


def train_datasets(ds_x: TileDataset, ds_y: TileDataset, config: TrainConfig, out_dir=None,
                   progress=None) -> TrainResult:
    if not ds_x.paths or not ds_y.paths:
        raise ValueError("both datasets must be non-empty")
    return train(ds_x.load_train(), ds_y.load_train(), config, out_dir,
                 x_val=ds_x.load_validation(), y_val=ds_y.load_validation(), progress=progress)
