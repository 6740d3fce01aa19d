"""Command-line interface: ``nixtts <command> [options]``.

Exit codes: 0 success, 1 failed check, 2 bad arguments, 3 invalid
checkpoint or dump, 4 synthesis failure. Results go to stdout as
``key=value`` lines; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import alignment
from .decoder import TEACHER_DISCRIMINATOR, VANILLA_HIFIGAN_V1, count_reduction
from .encoder import GaussianParams, TokenError
from .losses import default_kl_demo, fit_kl_demo, kl_gaussian, kl_gaussian_grad
from .model_io import (
    CheckpointError,
    TeacherDumpError,
    count_parameters,
    load_checkpoint,
    load_teacher_dump,
    save_checkpoint,
    save_teacher_dump,
    synth_teacher_dump,
    write_wav,
)
from .pipeline import (
    CompatibilityError,
    discriminator_weights,
    evaluate_losses,
    init_checkpoint,
    synthesize,
    training_forward,
    unpack_checkpoint,
)
from .tensor import set_num_threads

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_SYNTH = 4

THREADS_ENV = "NIX_FORGE_THREADS"
TEACHER_RTF = 0.484


class UsageError(Exception):
    pass


class InvalidInput(Exception):
    pass


def _emit(key: str, value) -> None:
    if isinstance(value, (float, np.floating)):
        value = repr(float(value))
    print(f"{key}={value}")


def _load_model(path: str):
    try:
        return unpack_checkpoint(load_checkpoint(path))
    except (OSError, CheckpointError) as exc:
        raise InvalidInput(f"cannot use checkpoint {path}: {exc}") from None


def _load_dump(path: str, hop_length: int = 256):
    try:
        return load_teacher_dump(path, hop_length)
    except (OSError, CheckpointError, TeacherDumpError) as exc:
        raise InvalidInput(f"cannot use teacher dump {path}: {exc}") from None


def _read_text(args) -> str:
    if args.text is not None and args.text_file is not None:
        raise UsageError("give either --text or --text-file, not both")
    if args.text_file is not None:
        try:
            text = Path(args.text_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read text file: {exc}") from None
    elif args.text is not None:
        text = args.text
    else:
        raise UsageError("one of --text or --text-file is required")
    if not text.split():
        raise UsageError("text is empty")
    return text


def _threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    set_num_threads(n)
    return n


# --------------------------------------------------------------------------- commands


def cmd_init(args) -> int:
    ckpt = init_checkpoint(seed=args.seed, with_discriminator=args.with_discriminator)
    save_checkpoint(args.out, ckpt)
    _, total = count_parameters(ckpt)
    _emit("path", args.out)
    _emit("params", total)
    return EXIT_OK


def cmd_synth_dump(args) -> int:
    if not 1 <= args.tokens <= args.frames:
        raise UsageError("need 1 <= --tokens <= --frames")
    dump = synth_teacher_dump(args.seed, args.tokens, args.frames)
    save_teacher_dump(args.out, dump)
    _emit("path", args.out)
    _emit("tokens", dump.tokens.size)
    _emit("frames", dump.num_frames)
    return EXIT_OK


def cmd_synth(args) -> int:
    text = _read_text(args)
    threads = _threads(args)
    config, weights = _load_model(args.checkpoint)
    try:
        wave, durations = synthesize(text, config, weights, args.seed, args.temperature, args.length_scale)
    except TokenError as exc:
        raise UsageError(str(exc)) from None
    try:
        write_wav(args.out, wave, config.spectrogram.sample_rate)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_SYNTH
    frames = int(durations.sum())
    _emit("frames", frames)
    _emit("samples", int(wave.shape[-1]))
    _emit("audio_seconds", wave.shape[-1] / config.spectrogram.sample_rate)
    _emit("threads", threads)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.runs < 1 or args.warmup < 0:
        raise UsageError("--runs must be >= 1 and --warmup >= 0")
    text = _read_text(args)
    threads = _threads(args)
    config, weights = _load_model(args.checkpoint)
    sr = config.spectrogram.sample_rate
    walls: List[float] = []
    samples = 0
    for i in range(args.warmup + args.runs):
        t0 = time.perf_counter()
        wave, _ = synthesize(text, config, weights, args.seed)
        elapsed = time.perf_counter() - t0
        samples = int(wave.shape[-1])
        if i >= args.warmup:
            walls.append(elapsed)
    report = BenchReport(runs=args.runs, audio_seconds=samples / sr, wall_seconds=walls, threads=threads,
                         baseline_rtf=args.baseline_rtf)
    report.print()
    return EXIT_OK


class BenchReport:
    """Real-time-factor statistics over timed runs."""

    def __init__(self, runs: int, audio_seconds: float, wall_seconds: List[float], threads: int,
                 baseline_rtf: Optional[float] = None):
        self.runs = runs
        self.audio_seconds = audio_seconds
        self.wall_seconds = list(wall_seconds)
        self.threads = threads
        self.baseline_rtf = baseline_rtf

    @property
    def rtfs(self) -> List[float]:
        return [w / self.audio_seconds for w in self.wall_seconds]

    @property
    def rtf_mean(self) -> float:
        return statistics.fmean(self.rtfs)

    @property
    def rtf_std(self) -> float:
        return statistics.pstdev(self.rtfs)

    @property
    def speedup(self) -> Optional[float]:
        if self.baseline_rtf is None:
            return None
        return self.baseline_rtf / self.rtf_mean

    def print(self) -> None:
        print(f"{'run':>5} {'wall [s]':>10} {'rtf':>8}")
        for i, (w, r) in enumerate(zip(self.wall_seconds, self.rtfs)):
            print(f"{i:>5} {w:>10.4f} {r:>8.4f}")
        _emit("runs", self.runs)
        _emit("threads", self.threads)
        _emit("audio_seconds", self.audio_seconds)
        _emit("wall_mean", statistics.fmean(self.wall_seconds))
        _emit("rtf_mean", self.rtf_mean)
        _emit("rtf_std", self.rtf_std)
        if self.speedup is not None:
            _emit("baseline_rtf", self.baseline_rtf)
            _emit("speedup", self.speedup)


def cmd_inspect(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
        config = ckpt.config
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot use checkpoint {args.checkpoint}: {exc}") from None
    per, total = count_parameters(ckpt)
    print(f"{'module':<22} {'params':>12}")
    for mod, n in per.items():
        print(f"{mod:<22} {n:>12,}")
    print(f"{'total':<22} {total:>12,}")
    for mod, n in per.items():
        _emit(f"params.{mod}", n)
    _emit("params.total", total)
    if args.teacher_params is not None:
        if args.teacher_params <= 0:
            raise UsageError("--teacher-params must be positive")
        _emit("teacher_params", int(args.teacher_params))
        _emit("compression_ratio", 1.0 - total / args.teacher_params)
    n_sep, n_van, ratio = count_reduction(config.decoder, VANILLA_HIFIGAN_V1)
    _emit("decoder.params", n_sep)
    _emit("decoder.vanilla_params", n_van)
    _emit("decoder.reduction", ratio)
    n_sep, n_van, ratio = count_reduction(config.discriminator, TEACHER_DISCRIMINATOR)
    _emit("discriminator.params", n_sep)
    _emit("discriminator.teacher_params", n_van)
    _emit("discriminator.reduction", ratio)
    return EXIT_OK


def cmd_losses(args) -> int:
    ckpt_path = args.checkpoint
    try:
        ckpt = load_checkpoint(ckpt_path)
    except (OSError, CheckpointError) as exc:
        raise InvalidInput(f"cannot use checkpoint {ckpt_path}: {exc}") from None
    try:
        config, weights = unpack_checkpoint(ckpt)
    except CheckpointError as exc:
        raise InvalidInput(str(exc)) from None
    dump = _load_dump(args.teacher_dump, config.spectrogram.hop_length)
    disc = discriminator_weights(ckpt, config, args.disc_seed)
    try:
        enc, dec = evaluate_losses(dump, config, weights, disc)
    except CompatibilityError as exc:
        raise InvalidInput(f"teacher dump incompatible with checkpoint: {exc}") from None
    for key, value in enc.items():
        _emit(f"encoder.{key}", value)
    for key, value in dec.items():
        _emit(f"decoder.{key}", value)
    return EXIT_OK


def gradcheck(seed: int, cells: int, h: float = 1e-4):
    """Analytic KL gradient vs central differences on ``cells`` random cells.

    Each cell is checked on its own single-cell loss. The error of each
    component is scaled by the magnitude of the terms forming that
    gradient, so cancellation near the optimum does not inflate it.
    Returns the worst scaled relative error.
    """
    rng = np.random.default_rng(seed)
    mu_t = rng.normal(0.0, 1.0, cells)
    sd_t = rng.uniform(0.1, 1.0, cells)
    mu_s = rng.normal(0.0, 1.0, cells)
    sd_s = rng.uniform(0.1, 1.0, cells)
    worst = 0.0
    for i in range(cells):
        teacher = GaussianParams(np.array([[mu_t[i]]]), np.array([[sd_t[i]]]))

        def loss(m, s):
            return kl_gaussian(teacher, GaussianParams(np.array([[m]]), np.array([[s]])))

        g_mu, g_sd = kl_gaussian_grad(teacher, GaussianParams(np.array([[mu_s[i]]]), np.array([[sd_s[i]]])))
        n_mu = (loss(mu_s[i] + h, sd_s[i]) - loss(mu_s[i] - h, sd_s[i])) / (2 * h)
        n_sd = (loss(mu_s[i], sd_s[i] + h) - loss(mu_s[i], sd_s[i] - h)) / (2 * h)
        scale_mu = (abs(mu_s[i]) + abs(mu_t[i])) / sd_t[i] ** 2
        scale_sd = 1.0 / sd_s[i] + sd_s[i] / sd_t[i] ** 2
        for a, n, scale in ((g_mu.item(), n_mu, scale_mu), (g_sd.item(), n_sd, scale_sd)):
            err = abs(a - n) / max(abs(a), abs(n), scale, 1e-300)
            worst = max(worst, err)
    return worst


def cmd_gradcheck(args) -> int:
    if args.cells < 1:
        raise UsageError("--cells must be >= 1")
    worst = gradcheck(args.seed, args.cells)
    ok_grad = worst < args.tol
    teacher = GaussianParams(np.array([[0.5]]), np.array([[0.7]]))
    single = fit_kl_demo(teacher, np.ones((1, 1)), np.zeros((2, 1)), np.zeros(2), steps=500, lr=0.1)
    ok_single = single[-1] < 1e-6
    traj = fit_kl_demo(*default_kl_demo(args.seed), steps=200, lr=0.1)
    tail = np.diff(traj[10:])
    ok_demo = bool(np.all(tail <= 0)) and traj[-1] <= 0.1 * traj[0]
    _emit("gradcheck.cells", args.cells)
    _emit("gradcheck.max_rel_error", worst)
    _emit("gradcheck.pass", int(ok_grad))
    _emit("fit.single_cell_final", single[-1])
    _emit("fit.single_cell_pass", int(ok_single))
    _emit("fit.demo_start", traj[0])
    _emit("fit.demo_final", traj[-1])
    _emit("fit.demo_pass", int(ok_demo))
    if not (ok_grad and ok_single and ok_demo):
        print(f"gradcheck failed: worst relative error {worst:.3e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_align(args) -> int:
    config, weights = _load_model(args.checkpoint)
    dump = _load_dump(args.teacher_dump, config.spectrogram.hop_length)
    fwd = training_forward(dump.tokens, dump.x_s, config, weights)
    _emit("tokens", dump.tokens.size)
    _emit("frames", dump.num_frames)
    _emit("path", ",".join(str(int(j)) for j in fwd.hard.path))
    _emit("durations", ",".join(str(int(d)) for d in fwd.durations))
    _emit("durations_sum", int(fwd.durations.sum()))
    _emit("l_forward_sum", alignment.forward_sum_loss(fwd.soft.log_probs))
    _emit("l_bin", alignment.binarization_loss(fwd.soft, fwd.hard))
    _emit("l_duration", alignment.duration_loss(fwd.log_durations, fwd.durations))
    return EXIT_OK


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nixtts", description="Lightweight distilled TTS student: synthesis, benchmarks and checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("init", help="write a randomly initialized student checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-discriminator", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("synth-dump", help="write a synthetic teacher feature dump")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tokens", type=int, default=12)
    p.add_argument("--frames", type=int, default=60)
    p.set_defaults(func=cmd_synth_dump)

    def text_args(p):
        p.add_argument("--text")
        p.add_argument("--text-file")

    def thread_arg(p):
        p.add_argument("--threads", type=int, default=None, help=f"kernel threads (default: ${THREADS_ENV} or 1)")

    p = sub.add_parser("synth", help="synthesize a WAV file from text")
    p.add_argument("--checkpoint", required=True)
    text_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--length-scale", type=float, default=1.0)
    thread_arg(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="measure the real-time factor")
    p.add_argument("--checkpoint", required=True)
    text_args(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline-rtf", type=float, default=None, help=f"e.g. {TEACHER_RTF} for the teacher")
    thread_arg(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="parameter counts and compression ratios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--teacher-params", type=float, default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("losses", help="distillation losses on a teacher dump")
    p.add_argument("--teacher-dump", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--disc-seed", type=int, default=0,
                   help="seed for discriminator weights when the checkpoint has none")
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("gradcheck", help="check the analytic KL gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cells", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("align", help="alignment path, durations and alignment losses for a dump")
    p.add_argument("--teacher-dump", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_align)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYNTH


if __name__ == "__main__":
    sys.exit(main())
