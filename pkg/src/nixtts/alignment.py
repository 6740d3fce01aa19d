"""Text-to-frame alignment: soft affinity, monotonic alignment search,
durations, length expansion and the alignment losses.

Alignment matrices are laid out ``[K frames, J tokens]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .tensor import ShapeError, log_softmax


class AlignmentError(ValueError):
    """Raised when no monotonic alignment exists (more tokens than frames)."""


@dataclass(frozen=True)
class SoftAlignment:
    """Row-stochastic frame-over-token probabilities, kept in log space."""

    log_probs: np.ndarray  # [K, J] float64

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.log_probs.shape

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "SoftAlignment":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)))


@dataclass(frozen=True)
class HardAlignment:
    """Monotonic path: ``path[k]`` is the token assigned to frame ``k``."""

    path: np.ndarray  # [K] int64
    num_tokens: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.path.size, self.num_tokens), dtype=np.float32)
        m[np.arange(self.path.size), self.path] = 1.0
        return m

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.path.size, self.num_tokens)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "HardAlignment":
        mask = np.asarray(mask)
        if mask.ndim != 2 or not np.all(mask.sum(axis=1) == 1):
            raise ValueError("mask must be [K, J] with exactly one 1 per row")
        return cls(np.argmax(mask, axis=1).astype(np.int64), mask.shape[1])

    def is_valid(self) -> bool:
        p = self.path
        if p.size == 0 or p[0] != 0 or p[-1] != self.num_tokens - 1:
            return False
        steps = np.diff(p)
        return bool(np.all((steps == 0) | (steps == 1)))


def soft_alignment(c_enc: np.ndarray, x_enc: np.ndarray) -> SoftAlignment:
    """Softmax over tokens of the negative squared distance.

    Args:
        c_enc: Token embeddings ``[J, D]``.
        x_enc: Frame embeddings ``[K, D]``.
    """
    c = np.asarray(c_enc, dtype=np.float64)
    x = np.asarray(x_enc, dtype=np.float64)
    if c.ndim != 2 or x.ndim != 2 or c.shape[1] != x.shape[1]:
        raise ShapeError(f"embedding dims differ: c_enc {c.shape} vs x_enc {x.shape}")
    dist = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ c.T)
        + np.sum(c * c, axis=1)[None, :]
    )
    return SoftAlignment(log_softmax(-np.maximum(dist, 0.0), axis=1))


def _check_feasible(k: int, j: int) -> None:
    if j < 1 or k < j:
        raise AlignmentError(f"no monotonic alignment of {j} tokens onto {k} frames")


def mas(soft: SoftAlignment) -> HardAlignment:
    """Monotonic alignment search.

    Returns the path maximizing the summed log-probabilities. Among equally
    scoring paths the one that advances to each next token as late as
    possible is chosen.
    """
    lp = np.asarray(soft.log_probs, dtype=np.float64)
    k_len, j_len = lp.shape
    _check_feasible(k_len, j_len)
    q = np.full((k_len, j_len), -np.inf)
    q[0, 0] = lp[0, 0]
    for k in range(1, k_len):
        prev = q[k - 1]
        best = prev.copy()
        best[1:] = np.maximum(prev[1:], prev[:-1])
        q[k] = best + lp[k]
        q[k, k + 1 :] = -np.inf
    path = np.empty(k_len, dtype=np.int64)
    j = j_len - 1
    for k in range(k_len - 1, -1, -1):
        path[k] = j
        if k == 0:
            break
        # ties go to the advance so that earlier frames stay on earlier tokens
        if j > 0 and (j > k - 1 or q[k - 1, j - 1] >= q[k - 1, j]):
            j -= 1
    return HardAlignment(path, j_len)


def durations_from_hard(hard: HardAlignment) -> np.ndarray:
    """Frames per token (column sums of the hard mask)."""
    return np.bincount(hard.path, minlength=hard.num_tokens).astype(np.int64)


def expand_by_durations(c_hidden: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Repeat row ``j`` of ``c_hidden`` ([J, H]) ``durations[j]`` times."""
    c = np.asarray(c_hidden)
    d = np.asarray(durations)
    if d.ndim != 1 or c.ndim < 1 or c.shape[0] != d.size:
        raise ValueError(f"durations of length {d.size} do not match c_hidden rows {c.shape}")
    if np.any(d < 0):
        raise ValueError("durations must be non-negative")
    return np.repeat(c, d.astype(np.int64), axis=0)


def forward_sum(log_probs: np.ndarray) -> Tuple[float, bool]:
    """Forward-sum loss and a feasibility flag.

    Returns ``(inf, False)`` when ``K < J``.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    k_len, j_len = lp.shape
    if j_len < 1 or k_len < j_len:
        return math.inf, False
    alpha = np.full(j_len, -np.inf)
    alpha[0] = lp[0, 0]
    for k in range(1, k_len):
        moved = np.full(j_len, -np.inf)
        moved[1:] = alpha[:-1]
        alpha = np.logaddexp(alpha, moved) + lp[k]
    return float(-alpha[-1]), True


def forward_sum_loss(log_probs: np.ndarray) -> float:
    """Negative log of the total probability of all monotonic complete paths."""
    return forward_sum(log_probs)[0]


def binarization_loss(soft: SoftAlignment, hard: HardAlignment) -> float:
    """``-(1/K) * sum(mask * log probs)``."""
    if soft.shape != hard.shape:
        raise ShapeError(f"soft alignment {soft.shape} and hard alignment {hard.shape} differ")
    k_len = hard.path.size
    picked = soft.log_probs[np.arange(k_len), hard.path]
    return float(-np.sum(picked) / k_len)


def duration_loss(predicted_log_d: np.ndarray, durations: np.ndarray) -> float:
    """MSE between predicted log-durations and ``log(d)``."""
    p = np.asarray(predicted_log_d, dtype=np.float64).ravel()
    d = np.asarray(durations, dtype=np.float64).ravel()
    if p.size != d.size:
        raise ShapeError(f"predicted {p.size} durations for {d.size} tokens")
    return float(np.mean((p - np.log(d)) ** 2))


def round_durations(log_d: np.ndarray, length_scale: float = 1.0) -> np.ndarray:
    """Inference-time durations: ``max(1, round(exp(log_d) * length_scale))``."""
    d = np.rint(np.exp(np.asarray(log_d, dtype=np.float64)) * length_scale)
    return np.maximum(d, 1).astype(np.int64)
