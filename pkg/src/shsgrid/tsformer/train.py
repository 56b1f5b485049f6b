"""Optimizer, training loop and confusion-matrix evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, NonFiniteError, TransformerParams, init_params, loss_and_grad, predict


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be at least 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("bad moment coefficients")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive moment estimation with bias correction; updates in place."""

    def __init__(self, params: TransformerParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: TransformerParams, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        if c.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > c.clip_norm:
                grads = {k: g * (c.clip_norm / total) for k, g in grads.items()}
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for name in params.names():
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            params.tensors[name] -= c.lr * (self.m[name] / corr1) / (np.sqrt(self.v[name] / corr2) + c.eps)


class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    def __init__(self, counts):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(counts < 0) or not np.all(counts == np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_predictions(cls, true, pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(true, dtype=int), np.asarray(pred, dtype=int)), 1)
        return cls(counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), rows, out=np.full(self.n_classes, np.nan), where=rows > 0)

    def precision(self) -> np.ndarray:
        cols = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), cols, out=np.full(self.n_classes, np.nan), where=cols > 0)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "accuracy": self.accuracy,
                "recall": [None if math.isnan(r) else r for r in self.recall()]}


def predict_batch(params: TransformerParams, z: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Inference-mode predictions for a stack of normalized windows."""
    if len(z) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.atleast_1d(predict(params, z[i:i + chunk])) for i in range(0, len(z), chunk)])


def evaluate(params: TransformerParams, dataset, split: str = "test") -> ConfusionMatrix:
    """Confusion matrix over one split ("train", "test" or "all"), dropout off."""
    idx = dataset.indices(split)
    z = dataset.normalize(dataset.windows[idx])
    return ConfusionMatrix.from_predictions(dataset.labels[idx], predict_batch(params, z), params.cfg.N_c)


def check_compatible(dataset, mc: ModelConfig) -> None:
    if (dataset.S, dataset.M, dataset.n_classes) != (mc.S, mc.M, mc.N_c):
        raise ValueError(
            f"dataset has S={dataset.S}, M={dataset.M}, N_c={dataset.n_classes}; "
            f"model expects S={mc.S}, M={mc.M}, N_c={mc.N_c}"
        )


def _streams(seed: int):
    init, shuffle, drop = np.random.SeedSequence([seed, 0x5452]).spawn(3)
    return tuple(np.random.Generator(np.random.Philox(s)) for s in (init, shuffle, drop))


def train(dataset, mc: ModelConfig, tc: TrainConfig, history_path=None, log=None):
    """Fit a fresh model on the training split.

    Each epoch shuffles the training indices with a seeded generator and walks
    them in consecutive batches (the last batch may be short).  A batch's
    gradient is one vectorized pass, so its summation order is fixed.
    Returns ``(params, history)`` where history holds one dict per epoch.
    """
    if not dataset.is_split:
        raise ValueError("dataset has no train/test split")
    check_compatible(dataset, mc)
    rng_init, rng_shuffle, rng_drop = _streams(tc.seed)
    params = init_params(mc, rng_init)
    opt = Adam(params, tc)
    train_idx = np.asarray(dataset.train_idx)
    z_all = dataset.normalize(dataset.windows)
    labels = dataset.labels.astype(np.int64)
    history = []
    sink = open(history_path, "w") if history_path is not None else None
    try:
        for epoch in range(1, tc.epochs + 1):
            order = train_idx[rng_shuffle.permutation(train_idx.size)]
            total, seen = 0.0, 0
            for start in range(0, order.size, tc.batch_size):
                batch = order[start:start + tc.batch_size]
                try:
                    value, grads = loss_and_grad(params, z_all[batch], labels[batch], rng_drop)
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"epoch {epoch}: {exc}") from None
                opt.step(params, grads)
                total += value * batch.size
                seen += batch.size
            record = {
                "epoch": epoch,
                "train_loss": total / seen,
                "train_acc": evaluate(params, dataset, "train").accuracy,
                "test_acc": evaluate(params, dataset, "test").accuracy if len(dataset.test_idx) else None,
            }
            if not math.isfinite(record["train_loss"]):
                raise TrainingDiverged(f"epoch {epoch}: loss is not finite")
            history.append(record)
            if sink is not None:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            if log is not None:
                log(record)
    finally:
        if sink is not None:
            sink.close()
    return params, history


def read_history(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
