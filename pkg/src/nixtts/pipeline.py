"""End-to-end student: building checkpoints, text-to-waveform inference and
the training-time forward pass used to evaluate the distillation losses."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .alignment import (
    HardAlignment,
    SoftAlignment,
    durations_from_hard,
    expand_by_durations,
    mas,
    soft_alignment,
)
from .decoder import decode, decoder_shapes, discriminate, discriminator_shapes, init_decoder, init_discriminator, sample_latent
from .dsp import mel_spectrogram
from .encoder import (
    GaussianParams,
    Weights,
    aligner_encode,
    encode_latent,
    encode_text,
    encoder_infer,
    encoder_shapes,
    init_encoder,
    predict_durations,
    tokenize,
)
from .losses import DecoderLossReport, EncoderLossReport, decoder_loss, encoder_loss
from .model_io import Checkpoint, CheckpointError, ModelConfig, TeacherDump

SEED_A = 1
SEED_B = 2


class CompatibilityError(ValueError):
    """A teacher dump does not fit the model (names the mismatched dimension)."""


def init_checkpoint(config: ModelConfig = ModelConfig(), seed: int = 0, with_discriminator: bool = False) -> Checkpoint:
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    tensors.update(init_encoder(config.encoder, rng))
    tensors.update(init_decoder(config.decoder, rng))
    if with_discriminator:
        tensors.update(init_discriminator(config.discriminator, rng))
    return Checkpoint(tensors, config.to_text())


def unpack_checkpoint(ckpt: Checkpoint) -> Tuple[ModelConfig, Weights]:
    """Validate a student checkpoint against its embedded configuration."""
    try:
        config = ckpt.config
    except ValueError as exc:
        raise CheckpointError(f"invalid embedded configuration: {exc}") from None
    expected = dict(encoder_shapes(config.encoder))
    expected.update(decoder_shapes(config.decoder))
    for name, shape in expected.items():
        arr = ckpt.tensors.get(name)
        if arr is None:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        if arr.shape != shape or arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name!r} has shape {arr.shape} {arr.dtype}, expected {shape} float32")
    return config, dict(ckpt.tensors)


def discriminator_weights(ckpt: Checkpoint, config: ModelConfig, seed: int = 0) -> Weights:
    """Discriminator tensors from the checkpoint, or seeded random ones if absent."""
    shapes = discriminator_shapes(config.discriminator)
    if all(n in ckpt.tensors for n in shapes):
        return {n: ckpt.tensors[n] for n in shapes}
    return init_discriminator(config.discriminator, np.random.default_rng(seed))


def synthesize(
    text: str,
    config: ModelConfig,
    weights: Weights,
    seed: int = 0,
    temperature: float = 1.0,
    length_scale: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Text to waveform ``[1, hop * K]``; also returns the durations."""
    ids = tokenize(text, config.symbols)
    params, durations = encoder_infer(ids, weights, config.encoder, length_scale)
    z = sample_latent(params, seed, temperature)
    return decode(z, weights, config.decoder), durations


@dataclass
class EncoderForward:
    c_hidden: np.ndarray
    soft: SoftAlignment
    hard: HardAlignment
    durations: np.ndarray
    log_durations: np.ndarray
    params: GaussianParams


def training_forward(ids: np.ndarray, x_s: np.ndarray, config: ModelConfig, weights: Weights) -> EncoderForward:
    """Encoder path driven by the teacher spectrogram (aligner + MAS)."""
    c_hidden = encode_text(ids, weights, config.encoder)
    c_enc, x_enc = aligner_encode(c_hidden, x_s, weights)
    soft = soft_alignment(c_enc, x_enc)
    hard = mas(soft)
    durations = durations_from_hard(hard)
    c_aligned = expand_by_durations(c_hidden.T, durations).T
    params = encode_latent(c_aligned, weights, config.encoder)
    return EncoderForward(c_hidden, soft, hard, durations, predict_durations(c_hidden, weights), params)


def check_compatible(dump: TeacherDump, config: ModelConfig) -> None:
    checks = [
        ("latent channels", dump.mu_q.shape[0], config.encoder.latent_channels),
        ("spectrogram bins", dump.x_s.shape[0], config.encoder.spec_channels),
        ("mel channels", dump.x_m.shape[0], config.spectrogram.n_mels),
        ("samples per frame", dump.x_w.shape[1] // dump.num_frames, config.spectrogram.hop_length),
    ]
    for what, got, want in checks:
        if got != want:
            raise CompatibilityError(f"{what}: dump has {got}, model expects {want}")
    if dump.tokens.max() >= config.encoder.vocab_size or dump.tokens.min() < 0:
        raise CompatibilityError(f"token ids: dump uses up to {dump.tokens.max()}, vocabulary has {config.encoder.vocab_size}")


def evaluate_losses(
    dump: TeacherDump,
    config: ModelConfig,
    weights: Weights,
    disc_weights: Weights,
    seed_a: int = SEED_A,
    seed_b: int = SEED_B,
) -> Tuple[EncoderLossReport, DecoderLossReport]:
    """Encoder and decoder distillation losses for one utterance.

    The decoder is driven by the teacher's latent distribution, sampled with
    two fixed seeds for the energy-distance pair.
    """
    check_compatible(dump, config)
    fwd = training_forward(dump.tokens, dump.x_s, config, weights)
    enc = encoder_loss(fwd.soft, fwd.hard, dump.params, fwd.params)
    k = dump.num_frames
    x_a = decode(sample_latent(dump.params, seed_a), weights, config.decoder)
    x_b = decode(sample_latent(dump.params, seed_b), weights, config.decoder)
    x_m_hat = mel_spectrogram(x_a, config.spectrogram)[:, :k]
    real = discriminate(dump.x_w, disc_weights, config.discriminator)
    fake = discriminate(x_a, disc_weights, config.discriminator)
    dec = decoder_loss(dump.x_w, x_a, x_b, dump.x_m, x_m_hat, real, fake)
    return enc, dec


def self_distillation_dump(
    text: str, config: ModelConfig, weights: Weights, source: TeacherDump, seed_a: int = SEED_A
) -> TeacherDump:
    """A dump whose targets are the student's own outputs.

    The aligner input ``x_s`` is taken from ``source``; latent statistics come
    from the student's training-time path on it, and the waveform is the
    student decoding of the ``seed_a`` latent sample, so the KL and
    feature-matching losses are exactly zero for this student.
    """
    ids = tokenize(text, config.symbols)
    fwd = training_forward(ids, source.x_s, config, weights)
    z = sample_latent(fwd.params, seed_a)
    x_w = decode(z, weights, config.decoder)
    k = source.num_frames
    return TeacherDump(
        tokens=ids,
        x_s=source.x_s,
        x_m=mel_spectrogram(x_w, config.spectrogram)[:, :k],
        mu_q=fwd.params.mu,
        sigma_q=fwd.params.sigma,
        z_q=z,
        x_w=x_w,
    ).validate(config.spectrogram.hop_length)


def synth_time(
    text: str, config: ModelConfig, weights: Weights, seed: int = 0, temperature: float = 1.0, length_scale: float = 1.0
) -> Tuple[float, int]:
    """Wall-clock seconds for one full text-to-waveform pass and the sample count."""
    t0 = time.perf_counter()
    wave, _ = synthesize(text, config, weights, seed, temperature, length_scale)
    return time.perf_counter() - t0, int(wave.shape[-1])
