"""Encoder and decoder distillation objectives.

Reductions: every term is a mean over its elements except feature matching,
which sums per-layer means over layers and periods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .alignment import HardAlignment, SoftAlignment, binarization_loss, forward_sum_loss
from .decoder import DiscOutput
from .dsp import multiscale_spec_distance
from .encoder import GaussianParams
from .tensor import ShapeError


class DomainError(ValueError):
    """Raised when a standard deviation is not strictly positive."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class EncoderLossReport:
    l_forward_sum: float
    l_bin: float
    l_kl: float

    @property
    def total(self) -> float:
        return self.l_forward_sum + self.l_bin + self.l_kl

    def items(self):
        return [("l_forward_sum", self.l_forward_sum), ("l_bin", self.l_bin), ("l_kl", self.l_kl), ("total", self.total)]


@dataclass(frozen=True)
class DecoderLossReport:
    l_adv_disc: float
    l_adv_gen: float
    l_fmatch: float
    l_recon: float
    l_ged: float

    @property
    def total(self) -> float:
        return self.l_adv_disc + self.l_adv_gen + self.l_fmatch + self.l_recon + self.l_ged

    def items(self):
        return [
            ("l_adv_disc", self.l_adv_disc),
            ("l_adv_gen", self.l_adv_gen),
            ("l_fmatch", self.l_fmatch),
            ("l_recon", self.l_recon),
            ("l_ged", self.l_ged),
            ("total", self.total),
        ]


def _gaussian_arrays(teacher: GaussianParams, student: GaussianParams):
    if teacher.shape != student.shape:
        raise ShapeError(f"teacher params {teacher.shape} and student params {student.shape} differ")
    mu_t = np.asarray(teacher.mu, dtype=np.float64)
    sd_t = np.asarray(teacher.sigma, dtype=np.float64)
    mu_s = np.asarray(student.mu, dtype=np.float64)
    sd_s = np.asarray(student.sigma, dtype=np.float64)
    if not (np.all(sd_t > 0) and np.all(sd_s > 0)):
        raise DomainError("sigma must be strictly positive on both sides")
    return mu_t, sd_t, mu_s, sd_s


def kl_gaussian(teacher: GaussianParams, student: GaussianParams) -> float:
    """Mean over cells of ``KL(N(mu_s, sd_s) || N(mu_t, sd_t))``."""
    mu_t, sd_t, mu_s, sd_s = _gaussian_arrays(teacher, student)
    kl = -0.5 + np.log(sd_t / sd_s) + (sd_s**2 + (mu_s - mu_t) ** 2) / (2.0 * sd_t**2)
    return float(np.mean(kl))


def kl_gaussian_grad(teacher: GaussianParams, student: GaussianParams) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`kl_gaussian` with respect to the student mean and std."""
    mu_t, sd_t, mu_s, sd_s = _gaussian_arrays(teacher, student)
    n = mu_t.size
    d_mu = (mu_s - mu_t) / sd_t**2 / n
    d_sd = (-1.0 / sd_s + sd_s / sd_t**2) / n
    return d_mu, d_sd


def encoder_loss(
    soft: SoftAlignment, hard: HardAlignment, teacher: GaussianParams, student: GaussianParams
) -> EncoderLossReport:
    return EncoderLossReport(
        l_forward_sum=forward_sum_loss(soft.log_probs),
        l_bin=binarization_loss(soft, hard),
        l_kl=kl_gaussian(teacher, student),
    )


def _flat(logits: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(l, dtype=np.float64).ravel() for l in logits])


def adversarial_losses(real_logits: Sequence[np.ndarray], fake_logits: Sequence[np.ndarray]) -> Tuple[float, float]:
    """Least-squares GAN losses ``(discriminator, generator)``.

    Means are taken over all logit cells of all periods.
    """
    real, fake = _flat(real_logits), _flat(fake_logits)
    if real.shape != fake.shape:
        raise ShapeError(f"real logits {real.shape} and fake logits {fake.shape} differ")
    l_disc = float(np.mean((real - 1.0) ** 2 + fake**2))
    l_gen = float(np.mean((fake - 1.0) ** 2))
    return l_disc, l_gen


def feature_matching_loss(real_fmaps: Sequence[Sequence[np.ndarray]], fake_fmaps: Sequence[Sequence[np.ndarray]]) -> float:
    """Sum over periods and layers of the per-layer mean absolute difference."""
    if len(real_fmaps) != len(fake_fmaps):
        raise ShapeError(f"got {len(real_fmaps)} real and {len(fake_fmaps)} fake feature-map groups")
    total = 0.0
    for rs, fs in zip(real_fmaps, fake_fmaps):
        if len(rs) != len(fs):
            raise ShapeError(f"layer counts differ: {len(rs)} vs {len(fs)}")
        for r, f in zip(rs, fs):
            r = np.asarray(r, dtype=np.float64)
            f = np.asarray(f, dtype=np.float64)
            if r.shape != f.shape:
                raise ShapeError(f"feature map shapes differ: {r.shape} vs {f.shape}")
            total += float(np.mean(np.abs(r - f)))
    return total


def recon_loss(x_m: np.ndarray, x_m_hat: np.ndarray) -> float:
    a = np.asarray(x_m, dtype=np.float64)
    b = np.asarray(x_m_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mel shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def ged_loss(x_w: np.ndarray, x_hat_a: np.ndarray, x_hat_b: np.ndarray) -> float:
    """Generalized energy distance ``2 d(x, a) - d(a, b)`` with one sample pair."""
    return 2.0 * multiscale_spec_distance(x_w, x_hat_a) - multiscale_spec_distance(x_hat_a, x_hat_b)


def decoder_loss(
    x_w: np.ndarray,
    x_hat_a: np.ndarray,
    x_hat_b: np.ndarray,
    x_m: np.ndarray,
    x_m_hat: np.ndarray,
    real_disc_out: DiscOutput,
    fake_disc_out: DiscOutput,
) -> DecoderLossReport:
    l_disc, l_gen = adversarial_losses([o[0] for o in real_disc_out], [o[0] for o in fake_disc_out])
    return DecoderLossReport(
        l_adv_disc=l_disc,
        l_adv_gen=l_gen,
        l_fmatch=feature_matching_loss([o[1] for o in real_disc_out], [o[1] for o in fake_disc_out]),
        l_recon=recon_loss(x_m, x_m_hat),
        l_ged=ged_loss(x_w, x_hat_a, x_hat_b),
    )


def project_gaussian(features: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> GaussianParams:
    """Linear head: ``[mu; log_var] = weight @ features + bias``."""
    stats = weight @ features + bias[:, None]
    c = weight.shape[0] // 2
    return GaussianParams(stats[:c], np.exp(0.5 * stats[c:]))


def fit_kl_demo(
    teacher: GaussianParams,
    features: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    steps: int = 200,
    lr: float = 0.1,
) -> List[float]:
    """Plain gradient descent on a linear Gaussian head against ``teacher``.

    ``features`` is ``[H, K]``; ``weight`` is ``[2C, H]`` and ``bias`` ``[2C]``
    where the first ``C`` outputs are means and the rest log-variances.
    The returned list holds ``l_kl`` before each update and after the last one.

    Raises:
        DivergenceError: if the loss stops being finite.
    """
    h = np.asarray(features, dtype=np.float64)
    w = np.array(weight, dtype=np.float64)
    b = np.array(bias, dtype=np.float64)
    trajectory: List[float] = []
    for step in range(steps + 1):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            student = project_gaussian(h, w, b)
            loss = kl_gaussian(teacher, student) if np.all(student.sigma > 0) else math.nan
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        trajectory.append(loss)
        if step == steps:
            break
        g_mu, g_sd = kl_gaussian_grad(teacher, student)
        # d sigma / d log_var = sigma / 2
        g_stats = np.concatenate([g_mu, 0.5 * student.sigma * g_sd], axis=0)
        w -= lr * (g_stats @ h.T)
        b -= lr * g_stats.sum(axis=1)
    return trajectory


def default_kl_demo(seed: int = 0, channels: int = 4, hidden: int = 8, frames: int = 32):
    """Synthetic teacher, features and zero-initialized head for :func:`fit_kl_demo`.

    The teacher is itself produced by a linear head of the features, so the
    optimum (zero loss) is reachable.
    """
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((hidden, frames))
    w_true = 0.3 * rng.standard_normal((2 * channels, hidden))
    b_true = 0.3 * rng.standard_normal(2 * channels)
    teacher = project_gaussian(h, w_true, b_true)
    return teacher, h, np.zeros((2 * channels, hidden)), np.zeros(2 * channels)
