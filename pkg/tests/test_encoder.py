import numpy as np
import pytest

from nixtts.encoder import (
    DEFAULT_SYMBOLS,
    UNK,
    EncoderConfig,
    TokenError,
    aligner_encode,
    encode_latent,
    encode_text,
    encoder_infer,
    encoder_shapes,
    init_encoder,
    predict_durations,
    tokenize,
)
from nixtts.tensor import ConfigError, positional_encoding
from oracles import naive_conv1d

SMALL = EncoderConfig(hidden=8, n_blocks_text=2, n_blocks_latent=2, spec_channels=9, aligner_dim=4,
                      duration_hidden=6, latent_channels=3)


@pytest.fixture(scope="module")
def small_weights():
    return init_encoder(SMALL, np.random.default_rng(0))


def zeroed(weights, keep=("text_encoder.embedding.weight", "norm.gain")):
    return {n: (w if any(k in n for k in keep) else np.zeros_like(w)) for n, w in weights.items()}


def test_tokenize():
    a = tokenize("a")
    assert a.tolist() == [DEFAULT_SYMBOLS.index("a")]
    assert np.array_equal(tokenize("A"), a)
    ids = tokenize("hi!")
    assert ids.size == 3 and np.all(ids < len(DEFAULT_SYMBOLS))
    assert tokenize("  hello   world ").tolist() == tokenize("hello world").tolist()
    assert tokenize("é")[0] == DEFAULT_SYMBOLS.index(UNK)
    with pytest.raises(TokenError):
        tokenize("   ")


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(kernel_size=4)
    with pytest.raises(ConfigError):
        EncoderConfig(hidden=0)
    assert [EncoderConfig().dilation(i) for i in range(6)] == [1, 2, 4, 1, 2, 4]


def test_encode_text_shapes_and_determinism(student):
    config, weights = student
    ids = tokenize("hello there")
    out = encode_text(ids, weights, config.encoder)
    assert out.shape == (192, ids.size)
    assert out.dtype == np.float32
    assert np.array_equal(out, encode_text(ids, weights, config.encoder))


def test_encode_text_rejects_bad_ids(small_weights):
    with pytest.raises(TokenError):
        encode_text(np.array([0, SMALL.vocab_size]), small_weights, SMALL)
    with pytest.raises(TokenError):
        encode_text(np.array([], dtype=np.int64), small_weights, SMALL)


def test_zero_conv_text_encoder_is_embedding_plus_positions(small_weights):
    w = zeroed(small_weights)
    ids = np.array([3, 1, 4, 1, 5])
    expected = (w["text_encoder.embedding.weight"][ids] + positional_encoding(5, SMALL.hidden)).T
    assert np.array_equal(encode_text(ids, w, SMALL), expected.astype(np.float32))


def test_residual_block_matches_reference():
    cfg = EncoderConfig(hidden=4, n_blocks_text=1, vocab_size=6)
    w = init_encoder(cfg, np.random.default_rng(1))
    w["text_encoder.blocks.0.norm.gain"] = np.float32([0.5, 1.0, 1.5, 2.0])
    w["text_encoder.blocks.0.norm.bias"] = np.float32([0.1, -0.1, 0.2, 0.0])
    ids = np.array([1, 2, 5, 0, 3, 3])
    x = w["text_encoder.embedding.weight"][ids].T.astype(np.float64) + positional_encoding(6, 4).T
    h = naive_conv1d(x[None], w["text_encoder.blocks.0.conv.weight"], w["text_encoder.blocks.0.conv.bias"],
                     padding=2)[0]
    h = h / (1 + np.exp(-h))
    h = (h - h.mean(0)) / np.sqrt(h.var(0) + 1e-8)
    h = h * w["text_encoder.blocks.0.norm.gain"][:, None] + w["text_encoder.blocks.0.norm.bias"][:, None]
    np.testing.assert_allclose(encode_text(ids, w, cfg), x + h, rtol=1e-4, atol=1e-5)


def test_aligner_shapes(small_weights):
    c_hidden = encode_text(np.array([1, 2, 3]), small_weights, SMALL)
    x_s = np.random.default_rng(2).random((9, 11)).astype(np.float32)
    c_enc, x_enc = aligner_encode(c_hidden, x_s, small_weights)
    assert c_enc.shape == (3, 4) and x_enc.shape == (11, 4)
    again = aligner_encode(c_hidden, x_s, small_weights)
    assert np.array_equal(c_enc, again[0]) and np.array_equal(x_enc, again[1])
    zero = zeroed(small_weights)
    assert np.all(aligner_encode(c_hidden, x_s, zero)[1] == 0)
    with pytest.raises(ValueError):
        aligner_encode(c_hidden, None, small_weights)


def test_duration_predictor(small_weights):
    c_hidden = encode_text(np.array([1, 2, 3, 4]), small_weights, SMALL)
    assert predict_durations(c_hidden, small_weights).shape == (4,)
    zero = zeroed(small_weights)
    log_d = predict_durations(c_hidden, zero)
    assert np.all(log_d == 0)
    batch = np.stack([c_hidden, c_hidden[:, ::-1].copy(), c_hidden * 2])
    out = predict_durations(batch, small_weights)
    perm = [2, 0, 1]
    assert np.array_equal(predict_durations(batch[perm], small_weights), out[perm])


def test_latent_encoder(small_weights):
    c = np.random.default_rng(3).normal(size=(8, 10)).astype(np.float32)
    params = encode_latent(c, small_weights, SMALL)
    assert params.mu.shape == params.sigma.shape == (3, 10)
    assert np.all(params.sigma > 0)
    w = dict(small_weights)
    w["latent_encoder.proj.weight"] = np.zeros_like(w["latent_encoder.proj.weight"])
    w["latent_encoder.proj.bias"] = np.zeros_like(w["latent_encoder.proj.bias"])
    zero = encode_latent(c, w, SMALL)
    assert np.all(zero.mu == 0) and np.all(zero.sigma == 1)
    big = dict(small_weights)
    big["latent_encoder.proj.weight"] = big["latent_encoder.proj.weight"] * 50
    assert np.all(encode_latent(c, big, SMALL).sigma > 0)


def test_encoder_infer(student):
    config, weights = student
    ids = tokenize("testing one two")
    params, d = encoder_infer(ids, weights, config.encoder)
    assert params.mu.shape == (192, int(d.sum()))
    assert d.size == ids.size and np.all(d >= 1)
    p2, d2 = encoder_infer(ids, weights, config.encoder, length_scale=2.0)
    assert d2.sum() >= d.sum()
    again, _ = encoder_infer(ids, weights, config.encoder)
    assert np.array_equal(params.mu, again.mu) and np.array_equal(params.sigma, again.sigma)


def test_shapes_cover_weights(small_weights):
    shapes = encoder_shapes(SMALL)
    assert set(shapes) == set(small_weights)
    assert all(small_weights[n].shape == s for n, s in shapes.items())
