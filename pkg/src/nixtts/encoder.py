"""Student encoder: text encoder, aligner encoders, duration predictor and
latent encoder.

Weights live in a flat ``dict`` mapping dotted names to float32 arrays, e.g.
``text_encoder.blocks.0.conv.weight``. Network functions accept either a
single example (``[C, T]``) or a batch (``[B, C, T]``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .alignment import expand_by_durations, round_durations
from .tensor import (
    ConfigError,
    Conv1dSpec,
    ShapeError,
    conv1d,
    layer_norm,
    positional_encoding,
    same_padding,
    silu,
)

Weights = Dict[str, np.ndarray]

UNK = "<unk>"
DEFAULT_SYMBOLS: Tuple[str, ...] = (
    (UNK,) + tuple(" !'(),-.:;?\"") + tuple("abcdefghijklmnopqrstuvwxyz") + tuple("0123456789")
)


class TokenError(ValueError):
    """Raised for empty text or out-of-range token ids."""


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = len(DEFAULT_SYMBOLS)
    hidden: int = 192
    kernel_size: int = 5
    dilations: Tuple[int, ...] = (1, 2, 4)
    n_blocks_text: int = 6
    n_blocks_latent: int = 6
    spec_channels: int = 513
    aligner_dim: int = 80
    # None: hidden width of each aligner stack equals its input width
    aligner_hidden: Optional[int] = None
    duration_kernel: int = 3
    duration_hidden: int = 192
    latent_channels: int = 192

    def __post_init__(self):
        for name in ("kernel_size", "duration_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"{name} must be odd, got {getattr(self, name)}")
        if self.hidden <= 0 or self.hidden % 2:
            raise ConfigError(f"hidden must be positive and even, got {self.hidden}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")

    def dilation(self, block: int) -> int:
        return self.dilations[block % len(self.dilations)]


@dataclass(frozen=True)
class GaussianParams:
    """Diagonal Gaussian ``N(mu, sigma)`` over ``[channels, frames]``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ")

    @property
    def shape(self):
        return self.mu.shape


def tokenize(text: str, symbols: Sequence[str] = DEFAULT_SYMBOLS) -> np.ndarray:
    """Lowercase character-level tokenization; unknown characters map to ``<unk>``."""
    norm = " ".join(text.lower().split())
    if not norm:
        raise TokenError("text is empty after normalization")
    table = {s: i for i, s in enumerate(symbols)}
    unk = table.get(UNK, 0)
    return np.array([table.get(ch, unk) for ch in norm], dtype=np.int64)


def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected [C, T] or [B, C, T], got shape {x.shape}")


def _conv(w: Weights, name: str, x: np.ndarray, dilation: int = 1) -> np.ndarray:
    weight = w[f"{name}.weight"]
    spec = Conv1dSpec(weight, w.get(f"{name}.bias"), dilation=dilation, padding=same_padding(weight.shape[-1], dilation))
    return conv1d(x, spec)


def _residual_stack(w: Weights, prefix: str, x: np.ndarray, n_blocks: int, cfg: EncoderConfig) -> np.ndarray:
    for i in range(n_blocks):
        p = f"{prefix}.blocks.{i}"
        h = silu(_conv(w, f"{p}.conv", x, cfg.dilation(i)))
        h = layer_norm(h, w[f"{p}.norm.gain"], w[f"{p}.norm.bias"], axis=1)
        x = x + h
    return x


def _add_positions(x: np.ndarray) -> np.ndarray:
    pe = positional_encoding(x.shape[-1], x.shape[1]).T
    return (x + pe[None]).astype(np.float32)


def encode_text(ids: np.ndarray, weights: Weights, cfg: EncoderConfig) -> np.ndarray:
    """Token ids ``[J]`` (or ``[B, J]``) to ``c_hidden`` of shape ``[hidden, J]``."""
    ids = np.asarray(ids)
    single = ids.ndim == 1
    ids2 = ids[None] if single else ids
    if ids2.size == 0:
        raise TokenError("empty token sequence")
    if ids2.min() < 0 or ids2.max() >= cfg.vocab_size:
        raise TokenError(f"token ids must lie in [0, {cfg.vocab_size}), got range [{ids2.min()}, {ids2.max()}]")
    emb = weights["text_encoder.embedding.weight"]
    x = np.ascontiguousarray(emb[ids2].transpose(0, 2, 1))
    x = _add_positions(x)
    x = _residual_stack(weights, "text_encoder", x, cfg.n_blocks_text, cfg)
    return x[0] if single else x


def _aligner_stack(w: Weights, prefix: str, x: np.ndarray) -> np.ndarray:
    h = silu(_conv(w, f"{prefix}.0", x))
    return _conv(w, f"{prefix}.1", h)


def aligner_encode(c_hidden: np.ndarray, x_s: Optional[np.ndarray], weights: Weights) -> Tuple[np.ndarray, np.ndarray]:
    """Project text states and linear spectrogram to the aligner space.

    Returns ``c_enc`` of shape ``[J, aligner_dim]`` and ``x_enc`` of shape
    ``[K, aligner_dim]`` (batched inputs give a leading batch axis).
    """
    if x_s is None:
        raise ValueError("aligner_encode needs the teacher linear spectrogram x_s")
    c, single = _batched(np.asarray(c_hidden, dtype=np.float32))
    s, _ = _batched(np.asarray(x_s, dtype=np.float32))
    if c.shape[0] != s.shape[0]:
        raise ShapeError(f"batch sizes differ: c_hidden {c.shape} vs x_s {s.shape}")
    c_enc = _aligner_stack(weights, "aligner.text", c).transpose(0, 2, 1)
    x_enc = _aligner_stack(weights, "aligner.spec", s).transpose(0, 2, 1)
    if single:
        return c_enc[0], x_enc[0]
    return c_enc, x_enc


def predict_durations(c_hidden: np.ndarray, weights: Weights) -> np.ndarray:
    """Per-token log-durations ``[J]`` (or ``[B, J]``)."""
    x, single = _batched(np.asarray(c_hidden, dtype=np.float32))
    h = silu(_conv(weights, "duration_predictor.conv.0", x))
    h = silu(_conv(weights, "duration_predictor.conv.1", h))
    out = _conv(weights, "duration_predictor.proj", h)[:, 0, :]
    return out[0] if single else out


def encode_latent(c_aligned: np.ndarray, weights: Weights, cfg: EncoderConfig) -> GaussianParams:
    """Frame-rate text states ``[hidden, K]`` to Gaussian parameters ``[latent_channels, K]``."""
    x, single = _batched(np.asarray(c_aligned, dtype=np.float32))
    if x.shape[1] != cfg.hidden:
        raise ShapeError(f"c_aligned has {x.shape[1]} channels, expected {cfg.hidden}")
    x = _add_positions(x)
    x = _residual_stack(weights, "latent_encoder", x, cfg.n_blocks_latent, cfg)
    stats = _conv(weights, "latent_encoder.proj", x).astype(np.float64)
    c = cfg.latent_channels
    mu = stats[:, :c].astype(np.float32)
    sigma = np.exp(0.5 * stats[:, c:]).astype(np.float32)
    if single:
        return GaussianParams(mu[0], sigma[0])
    return GaussianParams(mu, sigma)


def encoder_infer(
    ids: np.ndarray, weights: Weights, cfg: EncoderConfig, length_scale: float = 1.0
) -> Tuple[GaussianParams, np.ndarray]:
    """Text-only inference path: returns latent parameters and the durations used."""
    c_hidden = encode_text(ids, weights, cfg)
    log_d = predict_durations(c_hidden, weights)
    durations = round_durations(log_d, length_scale)
    c_aligned = expand_by_durations(c_hidden.T, durations).T
    return encode_latent(c_aligned, weights, cfg), durations


def encoder_shapes(cfg: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape for every encoder tensor."""
    h = cfg.hidden
    shapes: Dict[str, Tuple[int, ...]] = {"text_encoder.embedding.weight": (cfg.vocab_size, h)}
    for prefix, n in (("text_encoder", cfg.n_blocks_text), ("latent_encoder", cfg.n_blocks_latent)):
        for i in range(n):
            p = f"{prefix}.blocks.{i}"
            shapes[f"{p}.conv.weight"] = (h, h, cfg.kernel_size)
            shapes[f"{p}.conv.bias"] = (h,)
            shapes[f"{p}.norm.gain"] = (h,)
            shapes[f"{p}.norm.bias"] = (h,)
    for name, c_in in (("text", h), ("spec", cfg.spec_channels)):
        mid = cfg.aligner_hidden or c_in
        shapes[f"aligner.{name}.0.weight"] = (mid, c_in, 3)
        shapes[f"aligner.{name}.0.bias"] = (mid,)
        shapes[f"aligner.{name}.1.weight"] = (cfg.aligner_dim, mid, 3)
        shapes[f"aligner.{name}.1.bias"] = (cfg.aligner_dim,)
    k, dh = cfg.duration_kernel, cfg.duration_hidden
    shapes["duration_predictor.conv.0.weight"] = (dh, h, k)
    shapes["duration_predictor.conv.0.bias"] = (dh,)
    shapes["duration_predictor.conv.1.weight"] = (dh, dh, k)
    shapes["duration_predictor.conv.1.bias"] = (dh,)
    shapes["duration_predictor.proj.weight"] = (1, dh, 1)
    shapes["duration_predictor.proj.bias"] = (1,)
    shapes["latent_encoder.proj.weight"] = (2 * cfg.latent_channels, h, 1)
    shapes["latent_encoder.proj.bias"] = (2 * cfg.latent_channels,)
    return shapes


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, frames_per_token: float = 5.0) -> Weights:
    """Random encoder weights.

    The duration head starts near ``log(frames_per_token)`` so untrained
    models produce speech-length outputs.
    """
    w: Weights = {}
    for name, shape in encoder_shapes(cfg).items():
        if name.endswith("norm.gain"):
            t = np.ones(shape)
        elif name.endswith("bias"):
            t = np.zeros(shape)
        elif name == "text_encoder.embedding.weight":
            t = rng.standard_normal(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            t = rng.standard_normal(shape) / np.sqrt(fan_in)
        w[name] = t.astype(np.float32)
    w["duration_predictor.proj.weight"] *= np.float32(0.01)
    w["duration_predictor.proj.bias"][:] = np.log(frames_per_token)
    w["latent_encoder.proj.weight"] *= np.float32(0.1)
    return w
