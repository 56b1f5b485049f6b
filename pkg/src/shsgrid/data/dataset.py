"""Labeled window datasets: splitting, normalization and the binary format.

Binary layout (all little-endian)::

    b"SHSD"  u32 version  u32 S  u32 M  u32 N  u32 N_c
    N x ( S*M float64, time-major ; u8 label )
    M float64 means ; M float64 stds
    u32 n_train ; n_train u32 ; u32 n_test ; n_test u32
    32-byte fingerprint
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAGIC = b"SHSD"
VERSION = 1
STD_FLOOR = 1e-8


class DatasetFormatError(ValueError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    windows: np.ndarray            # (N, S, M)
    labels: np.ndarray             # (N,) uint8
    n_classes: int
    fingerprint: bytes
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint32))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint32))
    mode_ids: np.ndarray | None = None
    seeds: list | None = None

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=float)
        if w.ndim != 3:
            raise ValueError("windows must be (N, S, M)")
        if not np.all(np.isfinite(w)):
            raise ValueError("windows contain non-finite values")
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != (w.shape[0],) or (labels.size and labels.max() >= self.n_classes):
            raise ValueError("labels do not match windows or classes")
        if len(self.fingerprint) != 32:
            raise ValueError("fingerprint must be 32 bytes")
        tr = np.asarray(self.train_idx, dtype=np.uint32)
        te = np.asarray(self.test_idx, dtype=np.uint32)
        if tr.size or te.size:
            if np.intersect1d(tr, te).size:
                raise ValueError("train and test splits overlap")
            if tr.size + te.size != w.shape[0] or np.union1d(tr, te).size != w.shape[0]:
                raise ValueError("splits must cover every window exactly once")
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)

    @property
    def N(self) -> int:
        return self.windows.shape[0]

    @property
    def S(self) -> int:
        return self.windows.shape[1]

    @property
    def M(self) -> int:
        return self.windows.shape[2]

    @property
    def is_split(self) -> bool:
        return self.train_idx.size > 0

    def class_counts(self, idx=None) -> np.ndarray:
        lab = self.labels if idx is None else self.labels[idx]
        return np.bincount(lab, minlength=self.n_classes)

    def indices(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_idx
        if split == "test":
            return self.test_idx
        if split == "all":
            return np.arange(self.N, dtype=np.uint32)
        raise ValueError(f"unknown split {split!r}")

    def normalize(self, z: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise ValueError("dataset has no normalization statistics")
        return (z - self.mean) / self.std

    def equals(self, other: "Dataset") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)
        return (
            np.array_equal(self.windows, other.windows)
            and np.array_equal(self.labels, other.labels)
            and self.n_classes == other.n_classes
            and self.fingerprint == other.fingerprint
            and same(self.mean, other.mean) and same(self.std, other.std)
            and np.array_equal(self.train_idx, other.train_idx)
            and np.array_equal(self.test_idx, other.test_idx)
        )


def feature_stats(windows: np.ndarray, idx) -> tuple[np.ndarray, np.ndarray]:
    flat = windows[idx].reshape(-1, windows.shape[2])
    return flat.mean(axis=0), np.maximum(flat.std(axis=0), STD_FLOOR)


def split_dataset(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Dataset:
    """Stratified shuffle split; statistics come from the training windows only."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x53504C54])))
    train, test = [], []
    for k in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ValueError(f"class {k} has fewer than 2 windows; cannot stratify")
        idx = idx[rng.permutation(idx.size)]
        n_tr = int(round(train_fraction * idx.size))
        n_tr = min(max(n_tr, 1), idx.size - 1)
        train.append(idx[:n_tr])
        test.append(idx[n_tr:])
    train_idx = np.sort(np.concatenate(train)).astype(np.uint32)
    test_idx = np.sort(np.concatenate(test)).astype(np.uint32)
    mean, std = feature_stats(ds.windows, train_idx)
    return replace(ds, train_idx=train_idx, test_idx=test_idx, mean=mean, std=std)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    S, M, N = ds.S, ds.M, ds.N
    mean = ds.mean if ds.mean is not None else np.zeros(M)
    std = ds.std if ds.std is not None else np.ones(M)
    rec = np.dtype([("z", "<f8", (S * M,)), ("label", "u1")])
    records = np.empty(N, dtype=rec)
    records["z"] = ds.windows.reshape(N, S * M)
    records["label"] = ds.labels
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", VERSION, S, M, N, ds.n_classes))
        fh.write(records.tobytes())
        fh.write(np.asarray(mean, dtype="<f8").tobytes())
        fh.write(np.asarray(std, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", ds.train_idx.size))
        fh.write(ds.train_idx.astype("<u4").tobytes())
        fh.write(struct.pack("<I", ds.test_idx.size))
        fh.write(ds.test_idx.astype("<u4").tobytes())
        fh.write(ds.fingerprint)
    return path


def expected_size(S: int, M: int, N: int, n_train: int, n_test: int) -> int:
    return 4 + 20 + N * (S * M * 8 + 1) + 16 * M + 8 + 4 * (n_train + n_test) + 32


def read_dataset(path, expect_fingerprint: bytes | None = None) -> Dataset:
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise DatasetFormatError("bad magic: not a dataset file")
    version, S, M, N, n_c = struct.unpack_from("<5I", blob, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    off = 24
    rec = np.dtype([("z", "<f8", (S * M,)), ("label", "u1")])

    def need(nbytes):
        if off + nbytes > len(blob):
            raise DatasetFormatError("truncated dataset file")

    need(N * rec.itemsize)
    records = np.frombuffer(blob, dtype=rec, count=N, offset=off)
    off += N * rec.itemsize
    need(16 * M)
    stats = np.frombuffer(blob, dtype="<f8", count=2 * M, offset=off).astype(float)
    off += 16 * M
    need(4)
    (n_train,) = struct.unpack_from("<I", blob, off)
    off += 4
    need(4 * n_train)
    train = np.frombuffer(blob, dtype="<u4", count=n_train, offset=off).astype(np.uint32)
    off += 4 * n_train
    need(4)
    (n_test,) = struct.unpack_from("<I", blob, off)
    off += 4
    need(4 * n_test)
    test = np.frombuffer(blob, dtype="<u4", count=n_test, offset=off).astype(np.uint32)
    off += 4 * n_test
    need(32)
    fp = blob[off:off + 32]
    off += 32
    if off != len(blob):
        raise DatasetFormatError("trailing bytes after fingerprint")
    if expect_fingerprint is not None and fp != expect_fingerprint:
        raise FingerprintMismatch("dataset fingerprint does not match")
    split = n_train > 0
    return Dataset(
        windows=records["z"].reshape(N, S, M).astype(float),
        labels=records["label"].copy(),
        n_classes=n_c,
        fingerprint=bytes(fp),
        mean=stats[:M].copy() if split else None,
        std=stats[M:].copy() if split else None,
        train_idx=train,
        test_idx=test,
    )


def export_csv(ds: Dataset, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("window_id,t," + ",".join(f"f{j}" for j in range(ds.M)) + ",label\n")
        for w in range(ds.N):
            for t in range(ds.S):
                vals = ",".join(repr(float(v)) for v in ds.windows[w, t])
                fh.write(f"{w},{t},{vals},{int(ds.labels[w])}\n")
    return path
