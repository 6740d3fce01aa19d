"""Linear/mel spectrograms and the multi-scale spectrogram distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_FLOOR = 1e-5
DSPEC_FFT_SIZES = (64, 128, 256, 512, 1024, 2048)


class SignalError(ValueError):
    """Raised for empty, non-finite or mismatched waveforms."""


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: Optional[float] = None
    mel_scale: str = "slaney"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.win_length <= self.n_fft):
            raise ValueError(
                f"need 0 < hop_length <= win_length <= n_fft, got "
                f"{self.hop_length}, {self.win_length}, {self.n_fft}"
            )
        if not (0 < self.n_mels < self.n_freqs):
            raise ValueError(f"n_mels={self.n_mels} must be in (0, {self.n_freqs})")
        if self.mel_scale not in ("slaney", "htk"):
            raise ValueError(f"mel_scale must be 'slaney' or 'htk', got {self.mel_scale!r}")

    @property
    def n_freqs(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def f_max(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    def num_frames(self, num_samples: int) -> int:
        return num_samples // self.hop_length + 1


def _as_wave(wave: np.ndarray) -> np.ndarray:
    w = np.asarray(wave)
    if w.ndim == 2 and w.shape[0] == 1:
        w = w[0]
    if w.ndim != 1:
        raise SignalError(f"expected a mono waveform [T] or [1, T], got shape {w.shape}")
    if w.size == 0:
        raise SignalError("empty waveform")
    if not np.all(np.isfinite(w)):
        raise SignalError("waveform contains non-finite samples")
    return w.astype(np.float64)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _stft(w: np.ndarray, n_fft: int, hop: int, win_length: int) -> np.ndarray:
    pad = n_fft // 2
    x = np.pad(w, pad, mode="reflect") if w.size > 1 else np.pad(w, pad, mode="edge")
    window = np.zeros(n_fft)
    left = (n_fft - win_length) // 2
    window[left : left + win_length] = hann_window(win_length)
    n_frames = w.size // hop + 1
    frames = sliding_window_view(x, n_fft)[: (n_frames - 1) * hop + 1 : hop]
    spec = np.fft.rfft(frames * window, axis=-1)
    return np.abs(spec).T


def stft_magnitude(wave: np.ndarray, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Magnitude STFT of shape ``[n_fft // 2 + 1, T // hop + 1]``.

    Frames are centred: the signal is reflect-padded by ``n_fft // 2`` on each
    side before windowing with a periodic Hann window.
    """
    w = _as_wave(wave)
    return _stft(w, cfg.n_fft, cfg.hop_length, cfg.win_length).astype(np.float32)


def _hz_to_mel(f, scale: str):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, f / f_sp)


def _mel_to_hz(m, scale: str):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Triangular mel filters ``[n_mels, n_fft // 2 + 1]`` with equal-area normalization."""
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2, cfg.n_freqs)
    mels = np.linspace(_hz_to_mel(cfg.fmin, cfg.mel_scale), _hz_to_mel(cfg.f_max, cfg.mel_scale), cfg.n_mels + 2)
    hz = _mel_to_hz(mels, cfg.mel_scale)
    fdiff = np.diff(hz)
    ramps = hz[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    fb *= (2.0 / (hz[2:] - hz[:-2]))[:, None]
    return fb


def mel_spectrogram(wave: np.ndarray, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Log-compressed mel spectrogram ``[n_mels, T // hop + 1]``."""
    mag = _stft(_as_wave(wave), cfg.n_fft, cfg.hop_length, cfg.win_length)
    mel = mel_filterbank(cfg) @ mag
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


def multiscale_spec_distance(x: np.ndarray, y: np.ndarray, fft_sizes: Sequence[int] = DSPEC_FFT_SIZES) -> float:
    """Multi-scale spectrogram distance between two equal-length waveforms.

    For each FFT size ``S`` (hop ``S // 4``) adds the mean absolute
    difference of linear magnitudes and of floored log magnitudes.
    """
    a, b = _as_wave(x), _as_wave(y)
    if a.shape != b.shape:
        raise SignalError(f"waveform lengths differ: {a.size} vs {b.size}")
    total = 0.0
    for s in fft_sizes:
        hop = max(1, s // 4)
        ma, mb = _stft(a, s, hop, s), _stft(b, s, hop, s)
        lin = np.mean(np.abs(ma - mb))
        log = np.mean(np.abs(np.log(np.maximum(ma, LOG_FLOOR)) - np.log(np.maximum(mb, LOG_FLOOR))))
        total += float(lin + log)
    return total
