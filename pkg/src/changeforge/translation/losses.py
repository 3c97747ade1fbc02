"""Adversarial and cycle-consistency losses and the combined objective."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Tensor, add, l1_distance, mean_log, mean_square_to_const, scalar_mul

ADVERSARIAL_MODES = ("least_squares", "cross_entropy")


def _as_tensor(t) -> Tensor:
    return t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))


def _check_mode(mode: str) -> None:
    if mode not in ADVERSARIAL_MODES:
        raise ValueError(f"adversarial mode must be one of {ADVERSARIAL_MODES}, got {mode!r}")


def _check_probabilities(t: Tensor) -> None:
    if np.any(t.data <= 0) or np.any(t.data >= 1):
        raise ValueError("cross_entropy mode needs discriminator scores strictly inside (0, 1)")


def discriminator_loss(real_scores, fake_scores, mode: str = "least_squares") -> Tensor:
    """Loss the discriminator minimizes: push real scores to 1 and fake scores to 0."""
    _check_mode(mode)
    real, fake = _as_tensor(real_scores), _as_tensor(fake_scores)
    if real.shape != fake.shape:
        raise ValueError(f"real/fake score shapes differ: {real.shape} vs {fake.shape}")
    if mode == "least_squares":
        return add(mean_square_to_const(real, 1.0), mean_square_to_const(fake, 0.0))
    _check_probabilities(real)
    _check_probabilities(fake)
    # -mean log D(real) - mean log(1 - D(fake))
    return scalar_mul(add(mean_log(real), mean_log(1.0 - fake)), -1.0)


def generator_adversarial_loss(fake_scores, mode: str = "least_squares") -> Tensor:
    """Non-saturating generator loss on the scores of its own outputs."""
    _check_mode(mode)
    fake = _as_tensor(fake_scores)
    if mode == "least_squares":
        return mean_square_to_const(fake, 1.0)
    _check_probabilities(fake)
    return scalar_mul(mean_log(fake), -1.0)


def adversarial_loss(real_scores, fake_scores, mode: str = "least_squares") -> tuple[float, float]:
    """(discriminator loss, generator loss) for one batch of scores."""
    d = discriminator_loss(real_scores, fake_scores, mode)
    g = generator_adversarial_loss(fake_scores, mode)
    return float(d), float(g)


def cycle_loss(x, x_rec, y, y_rec) -> Tensor:
    """Mean absolute reconstruction error of both cycles, summed."""
    return add(l1_distance(_as_tensor(x_rec), _as_tensor(x)),
               l1_distance(_as_tensor(y_rec), _as_tensor(y)))


def full_objective(adv_g: float, adv_f: float, cyc: float, lam: float) -> float:
    return adv_g + adv_f + lam * cyc


@dataclass
class LossReport:
    epoch: int
    step: int
    adv_g: float
    adv_f: float
    d_x_loss: float
    d_y_loss: float
    cyc: float
    total: float
    lr: float

    CSV_COLUMNS = ("epoch", "step", "advG", "advF", "d_x_loss", "d_y_loss", "cyc", "total", "lr")

    def csv_row(self) -> list[str]:
        return [str(self.epoch), str(self.step)] + [
            repr(float(v)) for v in (self.adv_g, self.adv_f, self.d_x_loss, self.d_y_loss,
                                     self.cyc, self.total, self.lr)]

    def as_dict(self) -> dict:
        return asdict(self)
