import math

import numpy as np
import pytest

from soprank import numgrad as ng
from soprank.model import (
    CheckpointCorruptError,
    CheckpointVersionError,
    EncoderConfig,
    ScorerConfig,
    encoder_layer,
    init_model,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    score,
    score_batch,
    score_mlp,
)
from soprank.numgrad import Tensor
from soprank.policy import PolicyRepresentation

D_IN = 3


def _cfg(variant="transformer", K=3):
    return ScorerConfig.toy(d_in=D_IN, K=K, d_low=8, d_high=16, variant=variant)


def _rep(rng, n=12, K=3):
    cluster_of = np.concatenate([np.arange(K), rng.integers(0, K, size=n - K)])
    return PolicyRepresentation(rng.normal(size=(n, D_IN)), cluster_of, K)


def _layer_params(rng, d, d_ff):
    shapes = dict(param_shapes(ScorerConfig(d_in=d, d_low=d, d_high=d, low=EncoderConfig(1, 2, d_ff, 0.0),
                                            high=EncoderConfig(1, 2, d_ff, 0.0), K=1)))
    p = {}
    for name, shape in shapes.items():
        if name.startswith("low0."):
            p[name[5:]] = Tensor(rng.normal(scale=0.5, size=shape))
    return p


def test_default_config_mirrors_reference_sizes():
    cfg = ScorerConfig(d_in=5)
    assert (cfg.d_low, cfg.d_high, cfg.K) == (64, 256, 256)
    assert cfg.low == EncoderConfig(2, 2, 128, 0.1)
    assert cfg.high == EncoderConfig(6, 8, 512, 0.1)


def test_head_divisibility_enforced():
    with pytest.raises(ValueError):
        ScorerConfig(d_in=3, d_low=10, low=EncoderConfig(2, 3, 8, 0.1))


def test_parameter_count_depends_only_on_config():
    a, b = init_model(_cfg(), seed=0), init_model(_cfg(), seed=5)
    assert a.n_params == b.n_params == sum(int(np.prod(s)) for _, s in param_shapes(_cfg()))


@pytest.mark.parametrize("variant", ["transformer", "mlp"])
def test_permutation_invariance(variant):
    rng = np.random.default_rng(0)
    model = init_model(_cfg(variant), seed=1)
    rep = _rep(rng, n=20)
    base = score(model, rep).item()
    perm = rng.permutation(20)
    shuffled = PolicyRepresentation(rep.pairs[perm], rep.cluster_of[perm], 3)
    assert abs(score(model, shuffled).item() - base) <= 1e-9
    relabel = np.array([2, 0, 1])
    moved = PolicyRepresentation(rep.pairs, relabel[rep.cluster_of], 3)
    assert abs(score(model, moved).item() - base) <= 1e-9


def test_eval_mode_is_deterministic_and_ignores_rng():
    model = init_model(_cfg(), seed=2)
    rep = _rep(np.random.default_rng(1))
    a = score(model, rep).item()
    b = score(model, rep, rng=np.random.default_rng(99)).item()
    assert a == b


def test_train_mode_uses_dropout():
    model = init_model(_cfg(), seed=2)
    rep = _rep(np.random.default_rng(1))
    with pytest.raises(ValueError):
        score(model, rep, mode="train")
    a = score(model, rep, "train", np.random.default_rng(0)).item()
    b = score(model, rep, "train", np.random.default_rng(0)).item()
    c = score(model, rep, "train", np.random.default_rng(1)).item()
    assert a == b != c


def test_batched_scores_match_single_scores():
    rng = np.random.default_rng(3)
    model = init_model(_cfg(), seed=3)
    rep = _rep(rng)
    pairs = np.stack([rep.pairs, rep.pairs + 0.5])
    batch = score_batch(model, pairs, rep.cluster_of).data
    single = score(model, PolicyRepresentation(pairs[1], rep.cluster_of, 3)).item()
    assert abs(batch[1] - single) <= 1e-12


def test_empty_cluster_contributes_zeros():
    rng = np.random.default_rng(4)
    model = init_model(_cfg(K=4), seed=4)
    rep = PolicyRepresentation(rng.normal(size=(6, D_IN)), np.array([0, 0, 1, 1, 3, 3]), 4)
    assert np.isfinite(score(model, rep).item())


def test_shape_errors():
    model = init_model(_cfg(), seed=0)
    with pytest.raises(ng.ShapeError):
        score(model, PolicyRepresentation(np.zeros((4, D_IN + 1)), np.zeros(4, dtype=int), 3))
    with pytest.raises(ValueError):
        score(model, PolicyRepresentation(np.zeros((4, D_IN)), np.array([0, 1, 2, 3]), 3))
    with pytest.raises(ValueError):
        score(model, PolicyRepresentation(np.zeros((4, D_IN)), np.zeros(4, dtype=int), 4))


@pytest.mark.parametrize("variant", ["transformer", "mlp"])
def test_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(0)
    model = init_model(_cfg(variant), seed=0)
    rep = _rep(rng)

    def f():
        return score(model, rep, "train", np.random.default_rng(7))

    res = ng.check_gradients(f, model.params, max_per_tensor=8, rng=np.random.default_rng(1))
    assert res.max_rel_error <= 1e-4, res


def test_single_token_layer_is_the_ffn_path():
    rng = np.random.default_rng(5)
    p = _layer_params(rng, 4, 8)
    x = Tensor(rng.normal(size=(1, 4)))
    out = encoder_layer(x, p, 2).data
    # softmax over one key is 1, so the attention output is just the value projection
    v = x.data @ p["wv"].data + p["bv"].data
    mixed = v @ p["wo"].data + p["bo"].data
    ln = lambda z, g, b: (z - z.mean(-1, keepdims=True)) / np.sqrt(z.var(-1, keepdims=True) + 1e-5) * g + b
    h = ln(x.data + mixed, p["ln1_g"].data, p["ln1_b"].data)
    ff = np.maximum(h @ p["w1"].data + p["b1"].data, 0) @ p["w2"].data + p["b2"].data
    np.testing.assert_allclose(out, ln(h + ff, p["ln2_g"].data, p["ln2_b"].data), atol=1e-12)


def test_identical_tokens_give_identical_outputs():
    rng = np.random.default_rng(6)
    p = _layer_params(rng, 4, 8)
    row = rng.normal(size=4)
    out = encoder_layer(Tensor(np.stack([row, row])), p, 2).data
    np.testing.assert_array_equal(out[0], out[1])


def _attention_oracle(x, p, n_heads):
    L, d = x.shape
    dh = d // n_heads
    W = {k: v.data for k, v in p.items()}
    q, k, v = x @ W["wq"] + W["bq"], x @ W["wk"] + W["bk"], x @ W["wv"] + W["bv"]
    ctx = np.zeros((L, d))
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(L):
            logits = [sum(q[i, cols] * k[j, cols]) / math.sqrt(dh) for j in range(L)]
            top = max(logits)
            w = [math.exp(a - top) for a in logits]
            total = sum(w)
            for j in range(L):
                ctx[i, cols] += w[j] / total * v[j, cols]
    z = x + ctx @ W["wo"] + W["bo"]
    return z


@pytest.mark.parametrize("seed", range(3))
def test_attention_matches_independent_oracle(seed):
    rng = np.random.default_rng(seed)
    p = _layer_params(rng, 4, 8)
    x = rng.normal(size=(3, 4))
    z = _attention_oracle(x, p, 2)
    mu = z.mean(axis=1, keepdims=True)
    sd = np.sqrt(((z - mu) ** 2).mean(axis=1, keepdims=True) + 1e-5)
    h = (z - mu) / sd * p["ln1_g"].data + p["ln1_b"].data
    ff = np.maximum(h @ p["w1"].data + p["b1"].data, 0.0) @ p["w2"].data + p["b2"].data
    z2 = h + ff
    mu2 = z2.mean(axis=1, keepdims=True)
    expected = (z2 - mu2) / np.sqrt(((z2 - mu2) ** 2).mean(axis=1, keepdims=True) + 1e-5)
    expected = expected * p["ln2_g"].data + p["ln2_b"].data
    np.testing.assert_allclose(encoder_layer(Tensor(x), p, 2).data, expected, atol=1e-9, rtol=0)


def test_mlp_with_zero_output_weights_scores_the_bias():
    model = init_model(_cfg("mlp"), seed=0)
    for name, t in model.params.items():
        if name.endswith((".wm", ".w1", ".w2")) or name == "out.w":
            t.data = np.zeros(t.shape)
    model.params["out.b"].data = np.array([0.375])
    assert score_mlp(model, _rep(np.random.default_rng(0))).item() == 0.375
    with pytest.raises(ValueError):
        score_mlp(init_model(_cfg(), 0), _rep(np.random.default_rng(0)))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    model = init_model(_cfg(), seed=8)
    rep = _rep(np.random.default_rng(8))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, extra={"epoch": 3})
    assert path.read_bytes()[:8] == b"SOPRT001"
    again = load_checkpoint(path, expected_config=_cfg())
    assert again.config == model.config
    assert score(again, rep).item() == score(model, rep).item()


def test_checkpoint_truncation_and_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(_cfg(), seed=0), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
    path.write_bytes(b"SOPRT002" + raw[8:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_config_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(_cfg(), seed=0), path)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path, expected_config=_cfg("mlp"))
