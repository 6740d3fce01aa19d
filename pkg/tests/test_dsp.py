import math

import numpy as np
import pytest

from nixtts.dsp import (
    LOG_FLOOR,
    SignalError,
    SpectrogramConfig,
    _hz_to_mel,
    _mel_to_hz,
    mel_filterbank,
    mel_spectrogram,
    multiscale_spec_distance,
    stft_magnitude,
)
from oracles import naive_dft_magnitude

SR = 22050


def reflect_frames(x, n_fft, hop):
    """Centred frames built with explicit index reflection."""
    t = len(x)
    pad = n_fft // 2
    frames = []
    for f in range(t // hop + 1):
        idx = []
        for i in range(f * hop - pad, f * hop - pad + n_fft):
            while i < 0 or i >= t:
                i = -i if i < 0 else 2 * (t - 1) - i
            idx.append(i)
        frames.append(x[idx])
    return np.array(frames)


def periodic_hann(n):
    return np.array([math.sin(math.pi * i / n) ** 2 for i in range(n)])


def test_zero_wave_gives_zero_magnitudes():
    mag = stft_magnitude(np.zeros(1000))
    assert mag.shape == (513, 1000 // 256 + 1)
    assert np.all(mag == 0)


def test_frame_count():
    assert stft_magnitude(np.random.default_rng(0).normal(size=2560)).shape == (513, 11)
    assert SpectrogramConfig().num_frames(2560) == 11


def test_bin_centred_sine_peaks_at_its_bin():
    k = 37
    t = np.arange(8192)
    wave = np.sin(2 * np.pi * (k * SR / 1024) * t / SR)
    mag = stft_magnitude(wave)
    interior = mag[:, 4:-4]
    assert np.all(np.argmax(interior, axis=0) == k)


def test_stft_matches_naive_dft_small():
    cfg = SpectrogramConfig(sample_rate=8000, n_fft=64, win_length=64, hop_length=16, n_mels=8)
    x = np.random.default_rng(1).normal(size=150)
    frames = reflect_frames(x, 64, 16) * periodic_hann(64)
    ref = np.array([naive_dft_magnitude(f) for f in frames]).T
    got = stft_magnitude(x, cfg)
    assert got.shape == ref.shape
    assert np.max(np.abs(got - ref)) / np.max(ref) < 1e-4


def test_stft_matches_dft_matrix_at_4096():
    x = np.random.default_rng(2).normal(size=4096)
    n = 1024
    frames = reflect_frames(x, n, 256) * periodic_hann(n)
    f = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    cos, sin = np.cos(2 * np.pi * f * t / n), np.sin(2 * np.pi * f * t / n)
    ref = np.hypot(cos @ frames.T, sin @ frames.T)
    got = stft_magnitude(x)
    assert np.max(np.abs(got - ref)) / np.max(ref) < 1e-4


def test_short_and_invalid_waves():
    assert stft_magnitude(np.ones(1)).shape == (513, 1)
    with pytest.raises(SignalError):
        stft_magnitude(np.zeros(0))
    with pytest.raises(SignalError):
        stft_magnitude(np.array([0.0, np.nan]))


def test_config_validation():
    with pytest.raises(ValueError):
        SpectrogramConfig(hop_length=2048)
    with pytest.raises(ValueError):
        SpectrogramConfig(n_mels=600)
    with pytest.raises(ValueError):
        SpectrogramConfig(mel_scale="bark")


def test_mel_scales():
    assert float(_hz_to_mel(1000.0, "slaney")) == pytest.approx(15.0)
    # log region: 27 mels per factor 6.4
    assert float(_hz_to_mel(6400.0, "slaney")) == pytest.approx(42.0)
    assert float(_hz_to_mel(700.0, "htk")) == pytest.approx(2595 * math.log10(2))
    for scale in ("slaney", "htk"):
        f = np.array([0.0, 300.0, 1000.0, 5000.0, 11025.0])
        assert np.allclose(_mel_to_hz(_hz_to_mel(f, scale), scale), f)


def test_filterbank_shape_and_area():
    fb = mel_filterbank()
    assert fb.shape == (80, 513)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
    # equal-area: each triangle integrates to about one over frequency
    bin_hz = SR / 1024
    area = fb.sum(axis=1) * bin_hz
    assert np.allclose(area[20:], 1.0, rtol=0.05)
    htk = mel_filterbank(SpectrogramConfig(mel_scale="htk"))
    assert htk.shape == (80, 513) and not np.allclose(htk, fb)


def test_flat_spectrum_has_no_dead_bins():
    assert np.all(mel_filterbank() @ np.ones(513) > 0)


def test_mel_of_silence_and_noise():
    assert np.all(mel_spectrogram(np.zeros(2048)) == np.float32(np.log(LOG_FLOOR)))
    noise = np.random.default_rng(3).normal(size=22050) * 0.1
    m = mel_spectrogram(noise)
    assert m.shape == (80, 22050 // 256 + 1)
    assert np.all(m > np.log(LOG_FLOOR))


def test_spec_distance_identity_symmetry_nonnegativity():
    rng = np.random.default_rng(4)
    for _ in range(100):
        x, y = rng.normal(size=(2, 600))
        d = multiscale_spec_distance(x, y)
        assert d >= 0
        assert d == multiscale_spec_distance(y, x)
    assert multiscale_spec_distance(x, x) == 0.0


def test_spec_distance_orders_sines():
    t = np.arange(8192) / SR
    a = np.sin(2 * np.pi * 440 * t)
    far = multiscale_spec_distance(a, np.sin(2 * np.pi * 880 * t))
    near = multiscale_spec_distance(a, 0.99 * a)
    assert far > near > 0


def test_spec_distance_single_scale_oracle():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(2, 256))
    n = 64
    win = periodic_hann(n)
    mx = np.array([naive_dft_magnitude(f) for f in reflect_frames(x, n, 16) * win])
    my = np.array([naive_dft_magnitude(f) for f in reflect_frames(y, n, 16) * win])
    lin = np.mean(np.abs(mx - my))
    log = np.mean(np.abs(np.log(np.maximum(mx, LOG_FLOOR)) - np.log(np.maximum(my, LOG_FLOOR))))
    assert multiscale_spec_distance(x, y, fft_sizes=(64,)) == pytest.approx(lin + log, rel=1e-9)


def test_spec_distance_length_mismatch():
    with pytest.raises(SignalError):
        multiscale_spec_distance(np.zeros(100), np.zeros(101))
