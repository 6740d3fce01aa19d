"""Student decoder (HiFi-GAN-style generator built from depthwise-separable
convolutions) and the multi-period discriminator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np

from .encoder import GaussianParams, Weights
from .tensor import (
    ConfigError,
    Conv1dSpec,
    ShapeError,
    conv1d,
    leaky_relu,
    same_padding,
    transposed_conv1d,
)

LRELU_SLOPE = 0.1


@dataclass(frozen=True)
class DecoderConfig:
    input_channels: int = 192
    upsample_initial: int = 256
    upsample_rates: Tuple[int, ...] = (8, 8, 2, 2)
    upsample_kernels: Tuple[int, ...] = (16, 16, 4, 4)
    mrf_kernels: Tuple[int, ...] = (3, 7, 11)
    mrf_dilations: Tuple[Tuple[int, ...], ...] = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    pre_kernel: int = 7
    post_kernel: int = 7
    separable: bool = True

    def __post_init__(self):
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ConfigError("upsample_rates and upsample_kernels must have equal length")
        if len(self.mrf_kernels) != len(self.mrf_dilations):
            raise ConfigError("mrf_kernels and mrf_dilations must have equal length")
        for r, k in zip(self.upsample_rates, self.upsample_kernels):
            if (k - r) % 2:
                raise ConfigError(f"upsample kernel {k} and rate {r} must have equal parity")
        if self.upsample_initial % (2 ** len(self.upsample_rates)):
            raise ConfigError("upsample_initial must survive halving at every stage")

    @property
    def hop_length(self) -> int:
        return int(np.prod(self.upsample_rates))

    def stage_channels(self, i: int) -> int:
        return self.upsample_initial // (2 ** (i + 1))


@dataclass(frozen=True)
class DiscriminatorConfig:
    periods: Tuple[int, ...] = (2, 3, 5, 7, 11)
    # teacher widths are (32, 128, 512, 1024, 1024); the two widest layers are halved
    channels: Tuple[int, ...] = (32, 128, 512, 512, 512)
    kernel_size: int = 5
    stride: int = 3
    post_kernel: int = 3

    def __post_init__(self):
        if len(set(self.periods)) != len(self.periods):
            raise ConfigError(f"periods must be distinct, got {self.periods}")


TEACHER_DISCRIMINATOR = DiscriminatorConfig(channels=(32, 128, 512, 1024, 1024))
VANILLA_HIFIGAN_V1 = DecoderConfig(upsample_initial=512, separable=False)


def sample_latent(params: GaussianParams, seed: int, temperature: float = 1.0) -> np.ndarray:
    """Draw ``z = mu + temperature * sigma * eps``.

    ``eps`` comes from ``numpy.random.RandomState(seed)`` (MT19937 with the
    Marsaglia polar method), whose stream is frozen across numpy releases
    and platforms.
    """
    eps = np.random.RandomState(seed).standard_normal(params.mu.shape)
    z = params.mu.astype(np.float64) + temperature * params.sigma.astype(np.float64) * eps
    return z.astype(np.float32)


def _conv_shapes(name: str, c_in: int, c_out: int, k: int, separable: bool) -> Dict[str, Tuple[int, ...]]:
    if separable:
        return {
            f"{name}.dw.weight": (c_in, 1, k),
            f"{name}.pw.weight": (c_out, c_in, 1),
            f"{name}.pw.bias": (c_out,),
        }
    return {f"{name}.weight": (c_out, c_in, k), f"{name}.bias": (c_out,)}


def decoder_shapes(cfg: DecoderConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    shapes.update(_conv_shapes("decoder.conv_pre", cfg.input_channels, cfg.upsample_initial, cfg.pre_kernel, cfg.separable))
    ch = cfg.upsample_initial
    for i, k in enumerate(cfg.upsample_kernels):
        out = cfg.stage_channels(i)
        shapes[f"decoder.ups.{i}.weight"] = (ch, out, k)
        shapes[f"decoder.ups.{i}.bias"] = (out,)
        ch = out
        for j, (mk, dils) in enumerate(zip(cfg.mrf_kernels, cfg.mrf_dilations)):
            for m in range(len(dils)):
                for part in ("convs1", "convs2"):
                    shapes.update(_conv_shapes(f"decoder.resblocks.{i}.{j}.{part}.{m}", ch, ch, mk, cfg.separable))
    shapes.update(_conv_shapes("decoder.conv_post", ch, 1, cfg.post_kernel, cfg.separable))
    return shapes


def discriminator_shapes(cfg: DiscriminatorConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for p in cfg.periods:
        c_in = 1
        for i, c in enumerate(cfg.channels):
            shapes[f"discriminator.p{p}.convs.{i}.weight"] = (c, c_in, cfg.kernel_size)
            shapes[f"discriminator.p{p}.convs.{i}.bias"] = (c,)
            c_in = c
        shapes[f"discriminator.p{p}.post.weight"] = (1, c_in, cfg.post_kernel)
        shapes[f"discriminator.p{p}.post.bias"] = (1,)
    return shapes


def num_parameters(cfg: Union[DecoderConfig, DiscriminatorConfig]) -> int:
    if isinstance(cfg, DecoderConfig):
        shapes = decoder_shapes(cfg)
    elif isinstance(cfg, DiscriminatorConfig):
        shapes = discriminator_shapes(cfg)
    else:
        raise TypeError(f"unsupported config type {type(cfg).__name__}")
    return int(sum(np.prod(s) for s in shapes.values()))


def count_reduction(
    reduced: Union[DecoderConfig, DiscriminatorConfig], vanilla: Union[DecoderConfig, DiscriminatorConfig]
) -> Tuple[int, int, float]:
    """Exact parameter counts of both variants and ``1 - reduced / vanilla``."""
    n_red, n_van = num_parameters(reduced), num_parameters(vanilla)
    return n_red, n_van, 1.0 - n_red / n_van


def _init_from_shapes(shapes: Dict[str, Tuple[int, ...]], rng: np.random.Generator, gain: float) -> Weights:
    w: Weights = {}
    for name, shape in shapes.items():
        if name.endswith("bias"):
            t = np.zeros(shape)
        else:
            # depthwise [C, 1, K] and transposed [C_in, C_out, K] both use
            # the number of taps feeding one output as fan-in
            if name.startswith("decoder.ups."):
                fan_in = shape[0] * shape[2]
            else:
                fan_in = shape[1] * shape[2]
            t = gain * rng.standard_normal(shape) / np.sqrt(fan_in)
        w[name] = t.astype(np.float32)
    return w


def init_decoder(cfg: DecoderConfig, rng: np.random.Generator) -> Weights:
    return _init_from_shapes(decoder_shapes(cfg), rng, gain=1.0)


def init_discriminator(cfg: DiscriminatorConfig, rng: np.random.Generator) -> Weights:
    return _init_from_shapes(discriminator_shapes(cfg), rng, gain=1.0)


def _conv_spec(w: Weights, name: str, dilation: int = 1) -> Conv1dSpec:
    if f"{name}.dw.weight" in w:
        dw = w[f"{name}.dw.weight"]
        return Conv1dSpec(
            dw,
            None,
            dilation=dilation,
            padding=same_padding(dw.shape[-1], dilation),
            pointwise=w[f"{name}.pw.weight"],
            pointwise_bias=w[f"{name}.pw.bias"],
        )
    weight = w[f"{name}.weight"]
    return Conv1dSpec(weight, w.get(f"{name}.bias"), dilation=dilation, padding=same_padding(weight.shape[-1], dilation))


def _resblock(w: Weights, prefix: str, x: np.ndarray, dilations: Tuple[int, ...]) -> np.ndarray:
    for m, d in enumerate(dilations):
        h = leaky_relu(x, LRELU_SLOPE)
        h = conv1d(h, _conv_spec(w, f"{prefix}.convs1.{m}", d))
        h = leaky_relu(h, LRELU_SLOPE)
        h = conv1d(h, _conv_spec(w, f"{prefix}.convs2.{m}", 1))
        x = x + h
    return x


def decode(z: np.ndarray, weights: Weights, cfg: DecoderConfig) -> np.ndarray:
    """Latent frames ``[C, K]`` (or ``[B, C, K]``) to waveform ``[1, hop * K]``.

    The output carries a leading batch axis when the input does.
    """
    x = np.asarray(z, dtype=np.float32)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"latent of shape {np.shape(z)} does not have {cfg.input_channels} channels")
    x = conv1d(x, _conv_spec(weights, "decoder.conv_pre"))
    for i, (rate, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
        x = leaky_relu(x, LRELU_SLOPE)
        up = Conv1dSpec(
            weights[f"decoder.ups.{i}.weight"], weights[f"decoder.ups.{i}.bias"], stride=rate, padding=(k - rate) // 2
        )
        x = transposed_conv1d(x, up)
        acc = None
        for j, dils in enumerate(cfg.mrf_dilations):
            y = _resblock(weights, f"decoder.resblocks.{i}.{j}", x, dils).astype(np.float64)
            acc = y if acc is None else acc + y
        x = (acc / len(cfg.mrf_dilations)).astype(np.float32)
    x = leaky_relu(x, 0.01)
    x = conv1d(x, _conv_spec(weights, "decoder.conv_post"))
    wave = np.tanh(x.astype(np.float64)).astype(np.float32)
    return wave[0] if single else wave


def period_reshape(wave: np.ndarray, period: int) -> np.ndarray:
    """Zero-pad a ``[T]`` waveform to a multiple of ``period`` and fold it to ``[ceil(T/p), p]``."""
    w = np.asarray(wave, dtype=np.float32).ravel()
    rows = -(-w.size // period)
    out = np.zeros(rows * period, dtype=np.float32)
    out[: w.size] = w
    return out.reshape(rows, period)


DiscOutput = List[Tuple[np.ndarray, List[np.ndarray]]]


def discriminate(wave: np.ndarray, weights: Weights, cfg: DiscriminatorConfig) -> DiscOutput:
    """Run every period discriminator on a mono waveform.

    Returns one ``(logits, feature_maps)`` pair per period. Feature maps are
    ``[C, H, p]`` activations of each layer including the final projection.
    """
    w = np.asarray(wave, dtype=np.float32).ravel()
    if w.size < max(cfg.periods):
        raise ShapeError(f"waveform of {w.size} samples is shorter than the largest period {max(cfg.periods)}")
    results: DiscOutput = []
    for p in cfg.periods:
        # [H, p] -> [p, 1, H]: each column is an independent 1-D sequence
        x = period_reshape(w, p).T[:, None, :].copy()
        fmaps: List[np.ndarray] = []
        n = len(cfg.channels)
        for i in range(n):
            weight = weights[f"discriminator.p{p}.convs.{i}.weight"]
            stride = cfg.stride if i < n - 1 else 1
            spec = Conv1dSpec(
                weight, weights[f"discriminator.p{p}.convs.{i}.bias"], stride=stride, padding=same_padding(weight.shape[-1])
            )
            x = leaky_relu(conv1d(x, spec), LRELU_SLOPE)
            fmaps.append(x.transpose(1, 2, 0))
        post = weights[f"discriminator.p{p}.post.weight"]
        x = conv1d(x, Conv1dSpec(post, weights[f"discriminator.p{p}.post.bias"], padding=same_padding(post.shape[-1])))
        fmaps.append(x.transpose(1, 2, 0))
        results.append((x.transpose(1, 2, 0).ravel(), fmaps))
    return results
