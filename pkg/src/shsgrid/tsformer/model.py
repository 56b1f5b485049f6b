"""Transformer encoder classifier for multivariate windows, in plain numpy.

Shapes follow the batch-first convention: a batch of windows is
``(B, S, M)``; hidden activations are ``(B, S, d)``.  Everything is float64.
Gradients are derived by hand; ``loss_and_grad`` returns them for the exact
dropout masks used in its own forward pass.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-8
LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    L: int = 6
    h: int = 8
    d: int = 64
    d_ff: int = 256
    dropout: float = 0.1
    S: int = 30
    M: int = 22
    N_c: int = 3

    def __post_init__(self):
        for name in ("L", "h", "d", "d_ff", "S", "M", "N_c"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d % self.h:
            raise ValueError(f"d={self.d} is not divisible by h={self.h}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.d // self.h

    def to_dict(self) -> dict:
        return asdict(self)


LAYER_KEYS = ("W_Q", "b_Q", "W_K", "b_K", "W_V", "b_V", "W_O", "b_O",
              "ln1_g", "ln1_b", "W_1", "b_1", "W_2", "b_2", "ln2_g", "ln2_b")


def param_names(cfg: ModelConfig) -> list[str]:
    """Canonical tensor order, used for checkpoints and gradient checks."""
    names = ["W_e", "b_e"]
    for layer in range(cfg.L):
        names += [f"layer{layer}.{k}" for k in LAYER_KEYS]
    return names + ["W_class", "b_class"]


def param_group(name: str) -> str:
    key = name.split(".")[-1]
    if key in ("W_e", "b_e"):
        return "embedding"
    if key in ("W_class", "b_class"):
        return "head"
    if key.startswith("ln"):
        return "layernorm"
    if key[-1] in "12":
        return "feedforward"
    return "attention"


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d, cfg.d_ff
    per_layer = {
        "W_Q": (d, d), "b_Q": (d,), "W_K": (d, d), "b_K": (d,), "W_V": (d, d), "b_V": (d,),
        "W_O": (d, d), "b_O": (d,), "ln1_g": (d,), "ln1_b": (d,),
        "W_1": (d, f), "b_1": (f,), "W_2": (f, d), "b_2": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }
    shapes = {"W_e": (cfg.M, d), "b_e": (d,)}
    for layer in range(cfg.L):
        shapes.update({f"layer{layer}.{k}": per_layer[k] for k in LAYER_KEYS})
    shapes["W_class"] = (d, cfg.N_c)
    shapes["b_class"] = (cfg.N_c,)
    return shapes


def positional_table(S: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encoding: sin on even columns, cos on odd ones."""
    pos = np.arange(S)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    table = np.zeros((S, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


class TransformerParams:
    """Named float64 tensors plus the (untrained) positional table."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, np.ndarray]):
        shapes = param_shapes(cfg)
        if set(tensors) != set(shapes):
            missing = sorted(set(shapes) - set(tensors))
            extra = sorted(set(tensors) - set(shapes))
            raise ShapeError(f"parameter names do not match config (missing {missing}, extra {extra})")
        self.cfg = cfg
        self.tensors = {}
        for name in param_names(cfg):
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} has non-finite entries")
            self.tensors[name] = arr
        self.pos = positional_table(cfg.S, cfg.d)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "TransformerParams":
        return TransformerParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def layer(self, i: int) -> dict[str, np.ndarray]:
        return {k: self.tensors[f"layer{i}.{k}"] for k in LAYER_KEYS}

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equals(self, other: "TransformerParams") -> bool:
        return self.cfg == other.cfg and all(np.array_equal(self[k], other[k]) for k in self.tensors)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> TransformerParams:
    """Uniform fan-in/fan-out scaling for matrices, zeros for biases,
    unit gains and zero offsets for layer norms."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        key = name.split(".")[-1]
        if key.endswith("_g"):
            tensors[name] = np.ones(shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return TransformerParams(cfg, tensors)


# ---------------------------------------------------------------- primitives

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float | None = None):
    """Scaled dot-product attention over the last two axes.

    Returns ``(output, weights)``.  ``scale`` defaults to 1/sqrt(d_k).
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    for a in (q, k, v):
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("attention input is not finite")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    w = softmax(np.matmul(q, np.swapaxes(k, -1, -2)) * scale)
    return np.matmul(w, v), w


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _split_heads(x, h):
    b, s, d = x.shape
    return x.reshape(b, s, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dk)


def _sum_rows(x):
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def _matmul_grad(x, dy):
    """Gradient of ``x @ W`` w.r.t. W for batched x (.., n) and dy (.., m)."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


class Dropout:
    """Inverted dropout; masks drawn on demand and remembered in call order.

    With ``rng`` None (inference) every mask is identity.
    """

    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate if rng is not None else 0.0
        self.rng = rng
        self.masks: list[np.ndarray | None] = []

    def __call__(self, x):
        if self.rate == 0.0:
            self.masks.append(None)
            return x
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self.masks.append(mask)
        return x * mask

    @staticmethod
    def backward(dy, mask):
        return dy if mask is None else dy * mask


# ---------------------------------------------------------------- forward

def encoder_layer(hid, lp, cfg: ModelConfig, drop: Dropout, score_scale=None):
    """One post-norm encoder layer; returns the output and a backward cache."""
    q = _split_heads(hid @ lp["W_Q"] + lp["b_Q"], cfg.h)
    k = _split_heads(hid @ lp["W_K"] + lp["b_K"], cfg.h)
    v = _split_heads(hid @ lp["W_V"] + lp["b_V"], cfg.h)
    scale = 1.0 / math.sqrt(cfg.d_k) if score_scale is None else score_scale
    heads, weights = attention(q, k, v, scale)
    concat = _merge_heads(heads)
    mha = concat @ lp["W_O"] + lp["b_O"]
    m1 = len(drop.masks)
    h1, ln1 = layer_norm(hid + drop(mha), lp["ln1_g"], lp["ln1_b"])
    pre = h1 @ lp["W_1"] + lp["b_1"]
    act = np.maximum(pre, 0.0)
    ff = act @ lp["W_2"] + lp["b_2"]
    out, ln2 = layer_norm(h1 + drop(ff), lp["ln2_g"], lp["ln2_b"])
    cache = dict(hid=hid, q=q, k=k, v=v, scale=scale, w=weights, concat=concat, h1=h1, ln1=ln1,
                 pre=pre, act=act, ln2=ln2, mask1=drop.masks[m1], mask2=drop.masks[m1 + 1])
    return out, cache


def _as_batch(z, cfg: ModelConfig) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 2
    if single:
        z = z[None]
    if z.ndim != 3 or z.shape[1:] != (cfg.S, cfg.M):
        raise ShapeError(f"expected windows of shape (S, M) = ({cfg.S}, {cfg.M}), got {z.shape[-2:]}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("input window is not finite")
    return z, single


def forward(params: TransformerParams, z, rng: np.random.Generator | None = None, score_scale=None):
    """Class probabilities for one window (S, M) or a batch (B, S, M).

    ``rng`` enables dropout (training mode); None is inference.  Returns
    ``(probabilities, cache)``.
    """
    cfg = params.cfg
    z, single = _as_batch(z, cfg)
    drop = Dropout(cfg.dropout, rng)
    emb = z @ params["W_e"] + params["b_e"] + params.pos
    hid = drop(emb)
    caches = []
    for i in range(cfg.L):
        hid, c = encoder_layer(hid, params.layer(i), cfg, drop, score_scale)
        caches.append(c)
    pooled = hid.mean(axis=1)
    logits = pooled @ params["W_class"] + params["b_class"]
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    probs = softmax(logits)
    cache = dict(z=z, emb_mask=drop.masks[0], layers=caches, pooled=pooled, logits=logits, probs=probs)
    return (probs[0] if single else probs), cache


def logits(params: TransformerParams, z) -> np.ndarray:
    """Inference-mode logits for one window or a batch."""
    _, cache = forward(params, z)
    out = cache["logits"]
    return out[0] if np.ndim(z) == 2 else out


def predict(params: TransformerParams, z) -> np.ndarray | int:
    """Most probable class; ties resolve to the lowest index (np.argmax)."""
    p, _ = forward(params, z)
    return int(np.argmax(p)) if p.ndim == 1 else np.argmax(p, axis=1)


# ---------------------------------------------------------------- backward

def _layer_backward(dout, lp, cache, grads, prefix):
    dr2, dg, db = layer_norm_backward(dout, lp["ln2_g"], cache["ln2"])
    grads[prefix + "ln2_g"], grads[prefix + "ln2_b"] = dg, db
    dff = Dropout.backward(dr2, cache["mask2"])
    grads[prefix + "W_2"] = _matmul_grad(cache["act"], dff)
    grads[prefix + "b_2"] = _sum_rows(dff)
    dpre = (dff @ lp["W_2"].T) * (cache["pre"] > 0)
    grads[prefix + "W_1"] = _matmul_grad(cache["h1"], dpre)
    grads[prefix + "b_1"] = _sum_rows(dpre)
    dh1 = dr2 + dpre @ lp["W_1"].T

    dr1, dg, db = layer_norm_backward(dh1, lp["ln1_g"], cache["ln1"])
    grads[prefix + "ln1_g"], grads[prefix + "ln1_b"] = dg, db
    dmha = Dropout.backward(dr1, cache["mask1"])
    grads[prefix + "W_O"] = _matmul_grad(cache["concat"], dmha)
    grads[prefix + "b_O"] = _sum_rows(dmha)
    dheads = _split_heads(dmha @ lp["W_O"].T, lp["W_O"].shape[0] // cache["q"].shape[-1])
    w, q, k, v, scale = cache["w"], cache["q"], cache["k"], cache["v"], cache["scale"]
    dv = np.matmul(np.swapaxes(w, -1, -2), dheads)
    dw = np.matmul(dheads, np.swapaxes(v, -1, -2))
    ds = w * (dw - np.sum(dw * w, axis=-1, keepdims=True)) * scale
    dq = np.matmul(ds, k)
    dk = np.matmul(np.swapaxes(ds, -1, -2), q)
    hid = cache["hid"]
    dhid = dr1
    for name, dproj in (("Q", dq), ("K", dk), ("V", dv)):
        flat = _merge_heads(dproj)
        grads[prefix + "W_" + name] = _matmul_grad(hid, flat)
        grads[prefix + "b_" + name] = _sum_rows(flat)
        dhid = dhid + flat @ lp["W_" + name].T
    return dhid


def backward(params: TransformerParams, cache, dlogits) -> dict[str, np.ndarray]:
    """Gradients of a scalar with upstream gradient ``dlogits`` (B, N_c)."""
    cfg = params.cfg
    grads: dict[str, np.ndarray] = {}
    grads["W_class"] = cache["pooled"].T @ dlogits
    grads["b_class"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["W_class"].T
    dhid = np.repeat(dpooled[:, None, :] / cfg.S, cfg.S, axis=1)
    for i in reversed(range(cfg.L)):
        dhid = _layer_backward(dhid, params.layer(i), cache["layers"][i], grads, f"layer{i}.")
    demb = Dropout.backward(dhid, cache["emb_mask"])
    grads["W_e"] = _matmul_grad(cache["z"], demb)
    grads["b_e"] = _sum_rows(demb)
    return {name: grads[name] for name in param_names(cfg)}


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def _check_labels(labels, cfg: ModelConfig, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n or n == 0:
        raise ShapeError("batch must be nonempty with one label per window")
    if labels.min() < 0 or labels.max() >= cfg.N_c:
        raise ValueError(f"labels must lie in [0, {cfg.N_c})")
    return labels


def loss(params: TransformerParams, z, labels, rng=None, score_scale=None) -> float:
    z, _ = _as_batch(z, params.cfg)
    labels = _check_labels(labels, params.cfg, z.shape[0])
    probs, _ = forward(params, z, rng, score_scale)
    return cross_entropy(probs, labels)


def loss_and_grad(params: TransformerParams, z, labels, rng=None, score_scale=None):
    """Mean cross-entropy over the batch and its exact gradient.

    Dropout masks (when ``rng`` is given) are drawn once and reused by the
    backward pass.
    """
    z, _ = _as_batch(z, params.cfg)
    labels = _check_labels(labels, params.cfg, z.shape[0])
    probs, cache = forward(params, z, rng, score_scale)
    value = cross_entropy(probs, labels)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return value, backward(params, cache, (probs - onehot) / len(labels))
