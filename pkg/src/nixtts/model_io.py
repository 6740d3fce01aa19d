"""Checkpoint and teacher-dump files, model configuration, parameter
accounting and WAV output.

Binary layout (all integers little-endian)::

    magic "NIXT" | version u32 | tensor_count u32
    per tensor: name_len u16 | name (UTF-8) | dtype u8 | rank u8 | dims rank x u32 | payload

dtype codes: 0 = float32, 1 = uint8, 2 = int32. The model configuration is
stored as a uint8 tensor named ``__config`` holding ``key = value`` lines.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import wave as wavemod
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .decoder import DecoderConfig, DiscriminatorConfig
from .dsp import SpectrogramConfig, mel_spectrogram, stft_magnitude
from .encoder import DEFAULT_SYMBOLS, EncoderConfig, GaussianParams

MAGIC = b"NIXT"
VERSION = 1
HEADER_SIZE = 12
MAX_NAME_BYTES = 256
CONFIG_KEY = "__config"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i4")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1, np.dtype("int32"): 2}

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    """Base class for unreadable or invalid checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


class UnsupportedDtypeError(CheckpointError):
    pass


class InvalidNameError(CheckpointError):
    pass


class TeacherDumpError(ValueError):
    """Base class for teacher-dump validation failures."""


class MissingTensorError(TeacherDumpError):
    pass


class InconsistentLengthError(TeacherDumpError):
    pass


class NonPositiveSigmaError(TeacherDumpError):
    pass


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    symbols: Tuple[str, ...] = DEFAULT_SYMBOLS

    def __post_init__(self):
        if self.encoder.vocab_size != len(self.symbols):
            raise ValueError(f"vocab_size {self.encoder.vocab_size} != {len(self.symbols)} symbols")
        if self.decoder.hop_length != self.spectrogram.hop_length:
            raise ValueError(
                f"decoder upsamples by {self.decoder.hop_length} but the hop length is {self.spectrogram.hop_length}"
            )
        if self.encoder.spec_channels != self.spectrogram.n_freqs:
            raise ValueError(f"encoder expects {self.encoder.spec_channels} spectrogram bins, got {self.spectrogram.n_freqs}")
        if self.encoder.latent_channels != self.decoder.input_channels:
            raise ValueError("latent_channels must equal decoder input_channels")

    def to_text(self) -> str:
        lines = ["# nixtts model configuration"]
        for section in ("encoder", "decoder", "discriminator", "spectrogram"):
            sub = getattr(self, section)
            for f in dataclasses.fields(sub):
                lines.append(f"{section}.{f.name} = {json.dumps(getattr(sub, f.name))}")
        lines.append(f"symbols = {json.dumps(list(self.symbols))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = parse_config_text(text)
        sections: Dict[str, dict] = {"encoder": {}, "decoder": {}, "discriminator": {}, "spectrogram": {}}
        symbols = DEFAULT_SYMBOLS
        for key, value in values.items():
            if key == "symbols":
                symbols = tuple(value)
                continue
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise ValueError(f"unknown configuration key {key!r}")
            sections[section][name] = _tuplify(value)
        types = {"encoder": EncoderConfig, "decoder": DecoderConfig, "discriminator": DiscriminatorConfig,
                 "spectrogram": SpectrogramConfig}
        built = {}
        for section, kwargs in sections.items():
            known = {f.name for f in dataclasses.fields(types[section])}
            unknown = set(kwargs) - known
            if unknown:
                raise ValueError(f"unknown {section} keys: {sorted(unknown)}")
            built[section] = types[section](**kwargs)
        return cls(symbols=symbols, **built)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def parse_config_text(text: str) -> "OrderedDict[str, object]":
    """Parse ``key = value`` lines; ``#`` starts a comment line. Values are JSON
    when they parse as JSON and plain strings otherwise."""
    out: "OrderedDict[str, object]" = OrderedDict()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


# --------------------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    config_text: Optional[str] = None
    version: int = VERSION

    @property
    def config(self) -> ModelConfig:
        if self.config_text is None:
            raise CheckpointError("checkpoint has no embedded configuration")
        return ModelConfig.from_text(self.config_text)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.version == other.version
            and self.config_text == other.config_text
            and list(self.tensors) == list(other.tensors)
            and all(
                a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in zip(self.tensors.values(), other.tensors.values())
            )
        )


def _check_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if not raw or len(raw) > MAX_NAME_BYTES:
        raise InvalidNameError(f"tensor name must be 1..{MAX_NAME_BYTES} UTF-8 bytes, got {len(raw)}")
    return raw


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    items = list(ckpt.tensors.items())
    if ckpt.config_text is not None:
        items.insert(0, (CONFIG_KEY, np.frombuffer(ckpt.config_text.encode("utf-8"), dtype=np.uint8)))
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise DuplicateNameError("duplicate tensor names")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(items))]
    for name, arr in items:
        raw = _check_name(name)
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise UnsupportedDtypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        if arr.ndim > 255:
            raise CheckpointError(f"tensor {name!r} has rank {arr.ndim}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedError("file ends inside the header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}, expected {VERSION}")
    pos = HEADER_SIZE

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedError(f"file ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    config_text = None
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidNameError(f"tensor name is not UTF-8: {exc}") from None
        _check_name(name)
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise UnsupportedDtypeError(f"tensor {name!r} has unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dt = _DTYPES[code]
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims)
        arr = arr.astype(dt.newbyteorder("="), copy=True)
        if name in tensors or (name == CONFIG_KEY and config_text is not None):
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        if name == CONFIG_KEY:
            config_text = arr.tobytes().decode("utf-8")
        else:
            tensors[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after the last tensor")
    return Checkpoint(tensors, config_text, version)


def load_checkpoint(path: PathLike) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def count_parameters(ckpt: Checkpoint, modules: Optional[Iterable[str]] = None) -> Tuple[Dict[str, int], int]:
    """Parameter counts grouped by the first component of each tensor name.

    Returns ``(per_module, total)``; ``modules`` restricts the groups counted.
    """
    wanted = None if modules is None else set(modules)
    per: Dict[str, int] = OrderedDict()
    for name, arr in ckpt.tensors.items():
        if name.startswith("__"):
            continue
        mod = name.split(".", 1)[0]
        if wanted is not None and mod not in wanted:
            continue
        per[mod] = per.get(mod, 0) + int(arr.size)
    return per, sum(per.values())


# --------------------------------------------------------------------------- teacher dumps

DUMP_NAMES = ("tokens", "x_s", "x_m", "mu_q", "sigma_q", "z_q", "x_w")


@dataclass
class TeacherDump:
    tokens: np.ndarray  # [J] int
    x_s: np.ndarray  # [n_fft/2+1, K]
    x_m: np.ndarray  # [n_mels, K]
    mu_q: np.ndarray  # [C, K]
    sigma_q: np.ndarray  # [C, K]
    z_q: np.ndarray  # [C, K]
    x_w: np.ndarray  # [1, hop * K]

    @property
    def num_frames(self) -> int:
        return int(self.mu_q.shape[-1])

    @property
    def params(self) -> GaussianParams:
        return GaussianParams(self.mu_q, self.sigma_q)

    def validate(self, hop_length: int = 256) -> "TeacherDump":
        k = self.num_frames
        for name in ("x_s", "x_m", "mu_q", "sigma_q", "z_q"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != k:
                raise InconsistentLengthError(f"{name} has shape {arr.shape}, expected [*, {k}]")
        for name in ("sigma_q", "z_q"):
            if getattr(self, name).shape != self.mu_q.shape:
                raise InconsistentLengthError(f"{name} shape {getattr(self, name).shape} != mu_q {self.mu_q.shape}")
        if self.x_w.shape != (1, hop_length * k):
            raise InconsistentLengthError(f"x_w has shape {self.x_w.shape}, expected (1, {hop_length * k})")
        if self.tokens.ndim != 1 or self.tokens.size < 1:
            raise InconsistentLengthError(f"tokens must be a non-empty vector, got shape {self.tokens.shape}")
        if self.tokens.size > k:
            raise InconsistentLengthError(f"{self.tokens.size} tokens cannot align to {k} frames")
        if not np.all(self.sigma_q > 0):
            raise NonPositiveSigmaError("sigma_q contains non-positive entries")
        return self

    def to_checkpoint(self) -> Checkpoint:
        tensors = OrderedDict()
        for name in DUMP_NAMES:
            arr = getattr(self, name)
            tensors[name] = arr.astype(np.int32) if name == "tokens" else arr.astype(np.float32)
        return Checkpoint(tensors)


def save_teacher_dump(path: PathLike, dump: TeacherDump) -> None:
    save_checkpoint(path, dump.to_checkpoint())


def teacher_dump_from_checkpoint(ckpt: Checkpoint, hop_length: int = 256) -> TeacherDump:
    missing = [n for n in DUMP_NAMES if n not in ckpt.tensors]
    if missing:
        raise MissingTensorError(f"teacher dump is missing tensors: {missing}")
    kw = {n: ckpt.tensors[n] for n in DUMP_NAMES}
    kw["tokens"] = kw["tokens"].astype(np.int64)
    return TeacherDump(**kw).validate(hop_length)


def load_teacher_dump(path: PathLike, hop_length: int = 256) -> TeacherDump:
    return teacher_dump_from_checkpoint(load_checkpoint(path), hop_length)


def _smooth_rows(rng: np.random.Generator, rows: int, k: int, width: float = 4.0) -> np.ndarray:
    noise = rng.standard_normal((rows, k + 32))
    pole = np.exp(-1.0 / width)
    smooth = lfilter([1.0 - pole], [1.0, -pole], noise, axis=1)[:, 32:]
    # stationary std of the one-pole filter driven by unit white noise
    return smooth / ((1.0 - pole) / np.sqrt(1.0 - pole**2))


def synth_teacher_dump(
    seed: int,
    num_tokens: int,
    num_frames: int,
    channels: int = 192,
    vocab_size: int = len(DEFAULT_SYMBOLS),
    cfg: SpectrogramConfig = SpectrogramConfig(),
) -> TeacherDump:
    """Deterministic stand-in for extracted teacher features.

    ``mu_q`` follows smooth random trajectories, ``sigma_q`` lies in
    [0.1, 1.0], ``x_w`` is low-pass filtered noise and the spectrograms are
    computed from ``x_w`` (first ``K`` centred frames).
    """
    if not 1 <= num_tokens <= num_frames:
        raise ValueError(f"need 1 <= J <= K, got J={num_tokens}, K={num_frames}")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(1, vocab_size, size=num_tokens)
    mu = _smooth_rows(rng, channels, num_frames)
    sigma = 0.1 + 0.9 * expit(_smooth_rows(rng, channels, num_frames))
    z = mu + sigma * rng.standard_normal(mu.shape)
    n = cfg.hop_length * num_frames
    noise = rng.standard_normal(n)
    wav = lfilter([0.25, 0.5, 0.25], [1.0, -0.6], noise)
    wav = 0.5 * wav / (np.max(np.abs(wav)) + 1e-12)
    x_w = wav.astype(np.float32)[None]
    return TeacherDump(
        tokens=tokens.astype(np.int64),
        x_s=stft_magnitude(x_w, cfg)[:, :num_frames],
        x_m=mel_spectrogram(x_w, cfg)[:, :num_frames],
        mu_q=mu.astype(np.float32),
        sigma_q=sigma.astype(np.float32),
        z_q=z.astype(np.float32),
        x_w=x_w,
    ).validate(cfg.hop_length)


# --------------------------------------------------------------------------- audio


def write_wav(path: PathLike, wave: np.ndarray, sample_rate: int = 22050) -> None:
    """16-bit PCM mono; sample ``x`` is stored as ``round(clip(x, -1, 1) * 32767)``."""
    x = np.asarray(wave, dtype=np.float64).ravel()
    pcm = np.rint(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2")
    with open(path, "wb") as fh, wavemod.open(fh, "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())
