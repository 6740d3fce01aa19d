"""Acceptance criteria 1-9. Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line."""

import hashlib
import itertools
import statistics
import time
import wave

import numpy as np
import pytest

from nixtts import cli
from nixtts.alignment import SoftAlignment, forward_sum_loss, mas
from nixtts.decoder import (
    TEACHER_DISCRIMINATOR,
    VANILLA_HIFIGAN_V1,
    DecoderConfig,
    count_reduction,
    decode,
    init_decoder,
    sample_latent,
)
from nixtts.encoder import GaussianParams, encoder_infer, tokenize
from nixtts.losses import (
    DecoderLossReport,
    EncoderLossReport,
    feature_matching_loss,
    fit_kl_demo,
    ged_loss,
    kl_gaussian,
)
from nixtts.model_io import checkpoint_bytes, count_parameters, parse_checkpoint, synth_teacher_dump, write_wav
from nixtts.pipeline import synthesize, training_forward
from nixtts.tensor import Conv1dSpec, conv1d, depthwise_separable_conv1d, set_num_threads, softmax, transposed_conv1d
from conftest import UTTERANCE
from oracles import brute_force_forward_sum, brute_force_mas, naive_conv1d, naive_transposed_conv1d
from test_model_io import GOLDEN_SHA256, golden_checkpoint


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_alignment_oracle(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    path_mismatch, worst = 0, 0.0
    for i in range(500):
        k = int(rng.integers(1, 9))
        j = int(rng.integers(1, min(k, 5) + 1))
        logits = rng.normal(size=(k, j)) * 3
        if i % 5 == 0:
            # coarse logits to exercise ties
            logits = np.round(logits)
        soft = SoftAlignment(np.log(softmax(logits, axis=1).astype(np.float64)))
        if not np.array_equal(mas(soft).path, brute_force_mas(soft.log_probs)):
            path_mismatch += 1
        worst = max(worst, abs(forward_sum_loss(soft.log_probs) - brute_force_forward_sum(soft.log_probs)))
    elapsed = time.perf_counter() - t0
    ok = path_mismatch == 0 and worst < 1e-6 and elapsed < 10
    report(1, ok, f"500 matrices, path mismatches={path_mismatch}, max |fwd-sum err|={worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_gradient_correctness(report):
    worst = cli.gradcheck(seed=0, cells=1000)
    teacher = GaussianParams(np.array([[0.5]]), np.array([[0.7]]))
    single = fit_kl_demo(teacher, np.ones((1, 1)), np.zeros((2, 1)), np.zeros(2), steps=500, lr=0.1)[-1]
    ok = worst < 1e-5 and single < 1e-6
    report(2, ok, f"max rel err over 1000 cells={worst:.2e}, single-cell final loss={single:.2e}")


def test_criterion_3_closed_form_fixtures(report):
    rng = np.random.default_rng(3)
    p = GaussianParams(rng.normal(size=(4, 5)), rng.uniform(0.1, 1, (4, 5)))
    kl_same = kl_gaussian(p, p)
    kl_half = kl_gaussian(GaussianParams(np.zeros((1, 1)), np.ones((1, 1))),
                          GaussianParams(np.ones((1, 1)), np.ones((1, 1))))
    x = rng.normal(size=2048) * 0.2
    ged = ged_loss(x, x, x)
    maps = [[rng.normal(size=(3, 4)) for _ in range(3)] for _ in range(2)]
    fm = feature_matching_loss(maps, maps)
    parts = rng.normal(size=8)
    e = EncoderLossReport(*parts[:3])
    d = DecoderLossReport(*parts[3:])
    sums_ok = e.total == parts[0] + parts[1] + parts[2] and d.total == (
        parts[3] + parts[4] + parts[5] + parts[6] + parts[7])
    ok = kl_same == 0.0 and kl_half == 0.5 and ged == 0.0 and fm == 0.0 and sums_ok
    report(3, ok, f"kl(same)={kl_same}, kl(0,1->1,1)={kl_half}, ged(x,x,x)={ged}, fmatch(same)={fm}, sums={sums_ok}")


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a, float) - b)) / max(np.max(np.abs(b)), 1e-12))


def test_criterion_4_kernel_oracles(report):
    rng = np.random.default_rng(4)
    worst = {"conv": 0.0, "separable": 0.0, "transposed": 0.0, "adjoint": 0.0}
    cases = 0
    for c, t, k, d in itertools.product(range(1, 9), range(1, 9), range(1, 6), range(1, 5)):
        c_out = 9 - c
        pad = d * (k - 1) // 2
        if t + 2 * pad - d * (k - 1) - 1 < 0:
            pad = (d * (k - 1) + 2 - t) // 2 + 1
        x = rng.normal(size=(1, c, t)).astype(np.float32)
        w = rng.normal(size=(c_out, c, k)).astype(np.float32)
        b = rng.normal(size=c_out).astype(np.float32)
        stride = 1 + (t + k) % 2
        if t + 2 * pad - d * (k - 1) - 1 >= 0:
            got = conv1d(x, Conv1dSpec(w, b, stride=stride, dilation=d, padding=pad))
            worst["conv"] = max(worst["conv"], _rel(got, naive_conv1d(x, w, b, stride, d, pad)))
        dw = rng.normal(size=(c, 1, k)).astype(np.float32)
        pw = rng.normal(size=(c_out, c, 1)).astype(np.float32)
        got = depthwise_separable_conv1d(x, Conv1dSpec(dw, None, dilation=d, padding=pad, pointwise=pw,
                                                       pointwise_bias=b))
        ref = naive_conv1d(naive_conv1d(x, dw, None, 1, d, pad, groups=c), pw, b)
        worst["separable"] = max(worst["separable"], _rel(got, ref))
        wt = rng.normal(size=(c, c_out, k)).astype(np.float32)
        tpad = min(pad, ((t - 1) * stride + d * (k - 1)) // 2)
        got = transposed_conv1d(x, Conv1dSpec(wt, b, stride=stride, dilation=d, padding=tpad))
        worst["transposed"] = max(worst["transposed"], _rel(got, naive_transposed_conv1d(x, wt, b, stride, d, tpad)))
        # <conv(u), v> == <u, conv^T(v)> with an input length the adjoint reproduces
        t_in = (t - 1) * stride + d * (k - 1) + 1 - 2 * tpad
        u = rng.normal(size=(1, c, t_in)).astype(np.float32)
        v = rng.normal(size=(1, c_out, t)).astype(np.float32)
        fwd = conv1d(u, Conv1dSpec(w, stride=stride, dilation=d, padding=tpad))
        back = transposed_conv1d(v, Conv1dSpec(w, stride=stride, dilation=d, padding=tpad))
        lhs, rhs = float(np.sum(fwd.astype(float) * v)), float(np.sum(u.astype(float) * back))
        worst["adjoint"] = max(worst["adjoint"], abs(lhs - rhs) / max(1.0, abs(lhs)))
        cases += 1
    ok = max(worst["conv"], worst["separable"], worst["transposed"]) < 1e-5 and worst["adjoint"] < 1e-4
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report(4, ok, f"{cases} shape cases, worst errors: {detail}")


def test_criterion_5_size_claims(report, student_ckpt):
    _, total = count_parameters(student_ckpt)
    _, _, dec = count_reduction(DecoderConfig(), VANILLA_HIFIGAN_V1)
    _, _, disc = count_reduction(student_ckpt.config.discriminator, TEACHER_DISCRIMINATOR)
    ok = 4.2e6 <= total <= 6.3e6 and 0.88 <= dec <= 0.98 and 0.55 <= disc <= 0.70
    report(5, ok, f"student params={total:,} (target 5.23M), decoder reduction={dec:.3f} (target 0.93), "
                  f"discriminator reduction={disc:.3f} (target 0.63)")


def test_criterion_6_pipeline_consistency(report, student, tmp_path):
    config, weights = student
    problems = []
    for k in (1, 7, 50):
        params = GaussianParams(np.zeros((192, k), np.float32), np.ones((192, k), np.float32))
        wav = decode(sample_latent(params, k), weights, config.decoder)
        if wav.shape != (1, 256 * k):
            problems.append(f"decode K={k} gave {wav.shape}")
        path = tmp_path / f"k{k}.wav"
        write_wav(path, wav)
        with wave.open(str(path)) as f:
            seconds = f.getnframes() / f.getframerate()
        if seconds != 256 * k / 22050:
            problems.append(f"wav K={k} lasts {seconds}s")
        j = min(k, 4)
        dump = synth_teacher_dump(k, j, k)
        fwd = training_forward(dump.tokens, dump.x_s, config, weights)
        if fwd.durations.sum() != k or not np.all(fwd.params.sigma > 0):
            problems.append(f"training path K={k}")
    for text in ("a", "hello world", UTTERANCE):
        params, d = encoder_infer(tokenize(text), weights, config.encoder)
        if params.mu.shape[1] != d.sum() or not np.all(params.sigma > 0):
            problems.append(f"inference path {text!r}")
    report(6, not problems, "lengths 256*K, WAV durations, duration sums and sigma>0 hold"
           if not problems else "; ".join(problems))


def test_criterion_7_performance(report, student):
    config, weights = student
    set_num_threads(1)
    suite_start = time.perf_counter()
    synthesize(UTTERANCE, config, weights)  # warmup
    walls = []
    for _ in range(3):
        t0 = time.perf_counter()
        wav, _ = synthesize(UTTERANCE, config, weights)
        walls.append(time.perf_counter() - t0)
    audio = wav.shape[-1] / 22050
    rtf = statistics.fmean(walls) / audio

    k = wav.shape[-1] // 256
    z = sample_latent(GaussianParams(np.zeros((192, k), np.float32), np.ones((192, k), np.float32)), 0)
    vanilla_cfg = DecoderConfig(separable=False)
    vanilla = init_decoder(vanilla_cfg, np.random.default_rng(0))

    def best_of(fn, n=2):
        times = []
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    t_sep = best_of(lambda: decode(z, weights, config.decoder))
    t_van = best_of(lambda: decode(z, vanilla, vanilla_cfg))
    ratio = t_van / t_sep
    suite = time.perf_counter() - suite_start
    ok = 2.5 <= audio <= 3.5 and rtf < 0.5 and ratio >= 2.0 and suite < 120
    report(7, ok, f"audio={audio:.2f}s, single-thread RTF={rtf:.3f} (published student 0.159), separable speedup over "
                  f"vanilla decoder={ratio:.2f}x, suite {suite:.1f}s")


def test_criterion_8_format_stability(report, student_ckpt, tmp_path):
    data = checkpoint_bytes(student_ckpt)
    round_trip = checkpoint_bytes(parse_checkpoint(data)) == data
    golden = hashlib.sha256(checkpoint_bytes(golden_checkpoint())).hexdigest() == GOLDEN_SHA256
    sizes_ok = True
    for t in (0, 1, 257, 22050):
        path = tmp_path / f"{t}.wav"
        write_wav(path, np.zeros(t))
        sizes_ok &= path.stat().st_size == 44 + 2 * t
    ok = round_trip and golden and sizes_ok
    report(8, ok, f"round-trip identical={round_trip}, golden sha256 stable={golden}, wav size law={sizes_ok}")


def test_criterion_9_determinism(report, ckpt_path, tmp_path, capsys, monkeypatch):
    outs = []
    for i, threads in enumerate(("1", "1", "2", "env")):
        path = tmp_path / f"run{i}.wav"
        argv = ["synth", "--checkpoint", str(ckpt_path), "--text", UTTERANCE, "--out", str(path), "--seed", "42"]
        if threads == "env":
            monkeypatch.setenv("NIX_FORGE_THREADS", "3")
        else:
            argv += ["--threads", threads]
        assert cli.main(argv) == 0
        outs.append(path.read_bytes())
    capsys.readouterr()
    set_num_threads(1)
    identical = all(o == outs[0] for o in outs)
    report(9, identical, f"4 runs (threads 1, 1, 2, env=3) byte-identical={identical}, {len(outs[0])} bytes")
