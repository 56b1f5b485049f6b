import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shsgrid.data import Dataset, split_dataset
from shsgrid.tsformer import (TINY, Adam, Checkpoint, CheckpointFormatError, ConfusionMatrix, ModelConfig,
                              NonFiniteError, ShapeError, TrainConfig, TransformerParams, attention, evaluate, forward,
                              grad_check, init_params, layer_norm, load_checkpoint, loss, loss_and_grad, param_names,
                              predict, save_checkpoint, softmax, train)
from shsgrid.tsformer.checkpoint import decode, encode
from shsgrid.tsformer.gradcheck import relative_error
from shsgrid.tsformer.model import param_group, param_shapes, positional_table

SMALL = ModelConfig(L=2, h=2, d=8, d_ff=16, dropout=0.1, S=5, M=3, N_c=3)


def constant_head(cfg, bias):
    """Parameters that ignore the input: every weight zero, logits = bias."""
    tensors = {k: (np.ones(s) if k.endswith("_g") else np.zeros(s)) for k, s in param_shapes(cfg).items()}
    tensors["b_class"] = np.asarray(bias, dtype=float)
    return TransformerParams(cfg, tensors)


# ------------------------------------------------------------------ configuration


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d=10, h=3)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(L=0)


def test_parameter_layout():
    names = param_names(SMALL)
    assert names[:2] == ["W_e", "b_e"] and names[-2:] == ["W_class", "b_class"]
    assert len(names) == 4 + 16 * SMALL.L
    assert {param_group(n) for n in names} == {"embedding", "attention", "layernorm", "feedforward", "head"}
    p = init_params(ModelConfig(), np.random.default_rng(0))
    d, f, M, L, C = 64, 256, 22, 6, 3
    assert p.count() == M * d + d + L * (4 * d * d + 4 * d + 4 * d + d * f + f + f * d + d) + d * C + C


def test_init_statistics():
    p = init_params(SMALL, np.random.default_rng(1))
    limit = math.sqrt(6 / (SMALL.d + SMALL.d))
    w = p["layer0.W_Q"]
    assert np.all(np.abs(w) <= limit) and w.std() > limit / 3
    assert np.all(p["layer1.ln2_g"] == 1) and np.all(p["layer1.b_1"] == 0)


def test_params_reject_wrong_shape():
    p = init_params(SMALL, np.random.default_rng(0))
    bad = dict(p.tensors)
    bad["W_e"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        TransformerParams(SMALL, bad)
    bad = dict(p.tensors)
    del bad["b_e"]
    with pytest.raises(ShapeError):
        TransformerParams(SMALL, bad)


def test_positional_table_example():
    t = positional_table(3, 4)
    np.testing.assert_allclose(t[0], [0, 1, 0, 1])
    np.testing.assert_allclose(t[1], [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)])


# ------------------------------------------------------------------ primitives


def test_softmax_example():
    np.testing.assert_allclose(softmax(np.array([0.0, math.log(2.0)])), [1 / 3, 2 / 3])
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_is_shift_invariant_distribution(xs, c):
    x = np.array(xs)
    p = softmax(x)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)
    np.testing.assert_allclose(softmax(x + c), p, atol=1e-12)


def test_attention_example():
    q = np.array([[1.0, 0.0]])
    k = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[1.0], [3.0]])
    out, w = attention(q, k, v, scale=1.0)
    e = math.e
    np.testing.assert_allclose(w, [[e / (1 + e), 1 / (1 + e)]])
    np.testing.assert_allclose(out, [[(e + 3) / (1 + e)]])


def test_attention_equal_scores_average_values():
    k = np.ones((4, 3))
    v = np.arange(8.0).reshape(4, 2)
    out, w = attention(np.ones((2, 3)), k, v)
    np.testing.assert_allclose(w, 0.25)
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_attention_matches_loop_oracle(sq, sk, dk, seed):
    rng = np.random.default_rng(seed)
    q, k, v = rng.standard_normal((sq, dk)), rng.standard_normal((sk, dk)), rng.standard_normal((sk, 2))
    out, _ = attention(q, k, v)
    for i in range(sq):
        s = [float(q[i] @ k[j]) / math.sqrt(dk) for j in range(sk)]
        w = [math.exp(x - max(s)) for x in s]
        expect = sum(wj * v[j] for j, wj in enumerate(w)) / sum(w)
        np.testing.assert_allclose(out[i], expect, rtol=1e-10, atol=1e-12)


def test_attention_rejects_bad_input():
    with pytest.raises(ShapeError):
        attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 1)))
    with pytest.raises(NonFiniteError):
        attention(np.full((1, 2), np.nan), np.ones((1, 2)), np.ones((1, 1)))


def test_layer_norm_example():
    y, _ = layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.zeros(3))
    np.testing.assert_allclose(y, [-math.sqrt(1.5), 0, math.sqrt(1.5)], rtol=1e-7)
    y, _ = layer_norm(np.array([1.0, 2.0, 3.0]), np.full(3, 2.0), np.full(3, 0.5))
    np.testing.assert_allclose(y, [0.5 - 2 * math.sqrt(1.5), 0.5, 0.5 + 2 * math.sqrt(1.5)], rtol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**32 - 1), st.floats(0.1, 100))
def test_layer_norm_standardizes(d, seed, spread):
    x = np.random.default_rng(seed).standard_normal((3, d)) * spread
    y, _ = layer_norm(x, np.ones(d), np.zeros(d))
    v = x.var(axis=-1)
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), v / (v + 1e-8), rtol=1e-9)


# ------------------------------------------------------------------ forward / predict


def test_forward_with_constant_head():
    p = constant_head(SMALL, [0.0, 1.0, 0.0])
    z = np.random.default_rng(0).standard_normal((4, SMALL.S, SMALL.M))
    probs, _ = forward(p, z)
    np.testing.assert_allclose(probs, np.tile(softmax(np.array([0.0, 1.0, 0.0])), (4, 1)))
    assert predict(p, z[0]) == 1


def test_predict_tie_goes_to_lowest_class():
    p = constant_head(SMALL, [0.0, 2.0, 2.0])
    assert predict(p, np.zeros((SMALL.S, SMALL.M))) == 1


def test_forward_shapes_and_errors():
    p = init_params(SMALL, np.random.default_rng(0))
    probs, _ = forward(p, np.zeros((SMALL.S, SMALL.M)))
    assert probs.shape == (3,)
    probs, _ = forward(p, np.zeros((7, SMALL.S, SMALL.M)))
    assert probs.shape == (7, 3)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((SMALL.S + 1, SMALL.M)))
    bad = np.zeros((SMALL.S, SMALL.M))
    bad[0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        forward(p, bad)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_batch_rows_are_independent(b, seed):
    rng = np.random.default_rng(seed)
    p = init_params(SMALL, rng)
    z = rng.standard_normal((b, SMALL.S, SMALL.M))
    batch, _ = forward(p, z)
    for i in range(b):
        np.testing.assert_allclose(forward(p, z[i])[0], batch[i], rtol=1e-12, atol=1e-14)


def test_dropout_only_in_training_mode():
    p = init_params(SMALL, np.random.default_rng(0))
    z = np.random.default_rng(1).standard_normal((2, SMALL.S, SMALL.M))
    inference, _ = forward(p, z)
    trained, cache = forward(p, z, rng=np.random.default_rng(2))
    assert not np.allclose(inference, trained)
    mask = cache["emb_mask"]
    assert set(np.unique(mask)) <= {0.0, 1 / 0.9}
    no_drop = TransformerParams(ModelConfig(**{**SMALL.to_dict(), "dropout": 0.0}), p.tensors)
    np.testing.assert_array_equal(forward(no_drop, z, rng=np.random.default_rng(2))[0], forward(no_drop, z)[0])


# ------------------------------------------------------------------ loss and gradients


def test_uniform_prediction_loss_is_log_classes():
    p = constant_head(SMALL, [0.0, 0.0, 0.0])
    z = np.zeros((3, SMALL.S, SMALL.M))
    assert loss(p, z, [0, 1, 2]) == pytest.approx(math.log(3))


def test_confident_loss_example():
    p = constant_head(SMALL, [0.0, 0.0, math.log(8.0)])  # probabilities 0.1, 0.1, 0.8
    z = np.zeros((2, SMALL.S, SMALL.M))
    assert loss(p, z, [2, 0]) == pytest.approx(-(math.log(0.8) + math.log(0.1)) / 2)


def test_head_bias_gradient_closed_form():
    p = constant_head(SMALL, [0.0, 0.0, math.log(8.0)])
    _, g = loss_and_grad(p, np.zeros((2, SMALL.S, SMALL.M)), [2, 0])
    np.testing.assert_allclose(g["b_class"], ((np.array([0.1, 0.1, -0.2]) + np.array([-0.9, 0.1, 0.8])) / 2))


def test_loss_rejects_bad_labels():
    p = init_params(SMALL, np.random.default_rng(0))
    with pytest.raises(ValueError):
        loss(p, np.zeros((2, SMALL.S, SMALL.M)), [0, 3])
    with pytest.raises(ShapeError):
        loss(p, np.zeros((2, SMALL.S, SMALL.M)), [0])


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-9)) < 1e-2
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.ones(2), -np.ones(2)) == pytest.approx(1.0)


def test_grad_check_passes():
    report = grad_check()
    assert report.passed, report.per_group
    assert set(report.per_group) == {"embedding", "attention", "layernorm", "feedforward", "head"}
    assert report.max_rel_err <= 1e-4


def test_grad_check_catches_wrong_score_scale():
    # loss with unscaled scores, gradient of the scaled model: every upstream group disagrees
    report = grad_check(loss_fn=lambda p, z, y: loss(p, z, y, score_scale=1.0))
    assert not report.passed
    assert {"attention", "embedding"} <= set(report.failing_groups)


def test_grad_check_localizes_a_one_percent_error():
    def skewed(p, z, y):
        g = loss_and_grad(p, z, y)[1]
        g["layer0.W_O"] = g["layer0.W_O"] * 1.01
        return g

    report = grad_check(grad_fn=skewed)
    assert report.failing_groups == ["attention"]


def test_gradient_with_dropout_uses_the_same_masks():
    cfg = ModelConfig(L=1, h=2, d=8, d_ff=16, dropout=0.3, S=4, M=3, N_c=3)
    rng = np.random.default_rng(0)
    p = init_params(cfg, rng)
    z, y = rng.standard_normal((2, 4, 3)), np.array([0, 2])
    _, g = loss_and_grad(p, z, y, rng=np.random.default_rng(5))
    eps = 1e-6
    for name, idx in (("layer0.W_1", (1, 2)), ("W_e", (0, 3)), ("layer0.W_Q", (4, 5))):
        t = p.tensors[name]
        orig = t[idx]
        t[idx] = orig + eps
        up = loss(p, z, y, rng=np.random.default_rng(5))
        t[idx] = orig - eps
        down = loss(p, z, y, rng=np.random.default_rng(5))
        t[idx] = orig
        assert g[name][idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-9)


def test_grad_check_requires_no_dropout():
    with pytest.raises(ValueError):
        grad_check(cfg=SMALL)


# ------------------------------------------------------------------ optimizer and metrics


def test_adam_first_step_is_signed_learning_rate():
    p = init_params(SMALL, np.random.default_rng(0))
    before = p.copy()
    g = {k: np.random.default_rng(1).standard_normal(v.shape) for k, v in p.tensors.items()}
    tc = TrainConfig(lr=1e-3, eps=1e-12)
    Adam(p, tc).step(p, g)
    for k in p.names():
        np.testing.assert_allclose(p[k] - before[k], -1e-3 * np.sign(g[k]), rtol=1e-6)


def test_adam_clipping_rescales_gradients():
    p = init_params(SMALL, np.random.default_rng(0))
    q = p.copy()
    g = {k: np.ones_like(v) for k, v in p.tensors.items()}
    Adam(p, TrainConfig(clip_norm=1e-3, eps=1e-14)).step(p, g)
    Adam(q, TrainConfig(eps=1e-14)).step(q, g)
    # Adam's first step is scale-free, so clipping must not change it
    assert all(np.allclose(p[k], q[k]) for k in p.names())


def test_confusion_matrix_example():
    cm = ConfusionMatrix.from_predictions([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 2, 0], 3)
    np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 2]])
    assert cm.accuracy == pytest.approx(4 / 6)
    np.testing.assert_allclose(cm.recall(), [0.5, 1.0, 2 / 3])
    np.testing.assert_allclose(cm.precision(), [0.5, 0.5, 1.0])
    assert (cm + cm).total == 12


def test_confusion_matrix_rejects_bad_counts():
    with pytest.raises(ValueError):
        ConfusionMatrix([[1, -1], [0, 0]])
    with pytest.raises(ValueError):
        ConfusionMatrix([[1, 2, 3]])


# ------------------------------------------------------------------ training


def toy_dataset(n_per_class=20, seed=0):
    """Three classes told apart by the sign pattern of the mean of two features."""
    rng = np.random.default_rng(seed)
    centers = np.array([[1.5, 0, 0], [-1.5, 0, 0], [0, 1.5, 0]])
    labels = np.repeat(np.arange(3), n_per_class)
    z = centers[labels][:, None, :] + 0.3 * rng.standard_normal((labels.size, SMALL.S, SMALL.M))
    return split_dataset(Dataset(z, labels, 3, bytes(32)), 0.75, 0)


def test_training_separates_toy_classes():
    ds = toy_dataset()
    params, history = train(ds, SMALL, TrainConfig(lr=3e-3, batch_size=8, epochs=30, seed=1))
    assert history[-1]["train_loss"] < history[0]["train_loss"]
    assert evaluate(params, ds, "train").accuracy == 1.0
    assert evaluate(params, ds, "test").accuracy >= 0.9


def test_training_is_deterministic(tmp_path):
    ds = toy_dataset(8)
    tc = TrainConfig(lr=1e-3, batch_size=4, epochs=3, seed=5)
    p1, h1 = train(ds, SMALL, tc, history_path=tmp_path / "a.jsonl")
    p2, h2 = train(ds, SMALL, tc, history_path=tmp_path / "b.jsonl")
    assert h1 == h2 and p1.equals(p2)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    p3, h3 = train(ds, SMALL, TrainConfig(lr=1e-3, batch_size=4, epochs=3, seed=6))
    assert not p3.equals(p1)


def test_training_rejects_incompatible_dataset():
    ds = toy_dataset(4)
    with pytest.raises(ValueError):
        train(ds, ModelConfig(L=1, h=2, d=8, d_ff=8, S=6, M=3), TrainConfig(epochs=1))
    unsplit = Dataset(ds.windows, ds.labels, 3, bytes(32))
    with pytest.raises(ValueError):
        train(unsplit, SMALL, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# ------------------------------------------------------------------ checkpoints


@pytest.fixture
def ckpt():
    p = init_params(SMALL, np.random.default_rng(3))
    return Checkpoint(p, np.arange(3.0), np.full(3, 2.0), bytes(range(32)))


def test_checkpoint_round_trip(ckpt, tmp_path):
    path = save_checkpoint(ckpt, tmp_path / "m.shsm")
    back = load_checkpoint(path)
    assert back.params.equals(ckpt.params) and back.config == SMALL
    np.testing.assert_array_equal(back.mean, ckpt.mean)
    np.testing.assert_array_equal(back.std, ckpt.std)
    assert back.fingerprint == ckpt.fingerprint
    n = ckpt.params.count()
    assert path.stat().st_size == struct.calcsize("<4sI7Id") + 8 * n + 1 + 16 * 3 + 32 + 32
    assert encode(back) == path.read_bytes()


def test_checkpoint_predictions_survive_round_trip(ckpt):
    z = np.random.default_rng(0).standard_normal((5, SMALL.S, SMALL.M))
    back = decode(encode(ckpt))
    np.testing.assert_array_equal(forward(back.params, z)[0], forward(ckpt.params, z)[0])
    np.testing.assert_allclose(back.normalize(z[0]), (z[0] - np.arange(3.0)) / 2.0)


def test_checkpoint_without_stats(ckpt):
    bare = Checkpoint(ckpt.params)
    back = decode(encode(bare))
    assert back.mean is None and back.fingerprint == bytes(32)
    with pytest.raises(ValueError):
        back.normalize(np.zeros((SMALL.S, SMALL.M)))


@pytest.mark.parametrize("damage", ["magic", "version", "flip", "truncate", "trailing"])
def test_checkpoint_corruption_detected(ckpt, damage):
    blob = bytearray(encode(ckpt))
    if damage == "magic":
        blob[:4] = b"NOPE"
    elif damage == "version":
        blob[4:8] = struct.pack("<I", 2)
    elif damage == "flip":
        blob[200] ^= 0x01
    elif damage == "truncate":
        blob = blob[:100]
    else:
        blob += b"\0" * 8
    with pytest.raises(CheckpointFormatError):
        decode(bytes(blob))
