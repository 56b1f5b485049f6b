"""Cycle-by-cycle online detection and the comparison with residual matching.

Each detection cycle simulates one window of the true mode, normalizes it
with the statistics stored in the checkpoint and classifies it.  Cycles are
independent and processed in order, one window at a time.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.dataset import FingerprintMismatch
from .data.scenarios import (ContingencySpec, GenConfig, ScenarioLibrary, feature_matrix, fingerprint,
                             simulate_window)
from .shs.analysis import ResponseLibrary, expected_responses, residual_classify
from .shs.dynamics import DetectionSchedule
from .shs.modes import ModeClass
from .tsformer.checkpoint import Checkpoint
from .tsformer.model import predict
from .tsformer.train import ConfusionMatrix

STREAM_TAG = 0x4F4E4C4E


@dataclass(frozen=True)
class ScenarioStream:
    specs: tuple[ContingencySpec, ...]
    seeds: tuple[tuple[int, ...], ...]
    schedule: DetectionSchedule = field(default_factory=DetectionSchedule)

    def __post_init__(self):
        if not self.specs:
            raise ValueError("stream is empty")
        if len(self.specs) != len(self.seeds):
            raise ValueError("one seed per cycle is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("cycle seeds must be unique")

    def __len__(self):
        return len(self.specs)


def make_stream(scen: ScenarioLibrary, cycles: int, seed: int, schedule: DetectionSchedule | None = None,
                classes=(ModeClass.NORMAL, ModeClass.PHYSICAL, ModeClass.MEASUREMENT)) -> ScenarioStream:
    """Random contingency per cycle: class uniform over ``classes``, then a
    uniform pick within the class.  Seeds live in their own namespace, so
    they never coincide with dataset seeds."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, STREAM_TAG])))
    specs, seeds = [], []
    for k in range(cycles):
        kind = classes[int(rng.integers(len(classes)))]
        specs.append(scen.sample_spec(ModeClass(kind), rng))
        seeds.append((int(seed), STREAM_TAG, k))
    return ScenarioStream(tuple(specs), tuple(seeds), schedule or DetectionSchedule())


@dataclass
class SwitchingSequence:
    true_class: np.ndarray
    pred_class: np.ndarray
    latency_ms: np.ndarray
    true_mode: np.ndarray
    pred_mode: np.ndarray | None = None  # set by the residual baseline

    def __len__(self):
        return len(self.true_class)

    def confusion(self, n_classes: int = 3) -> ConfusionMatrix:
        return ConfusionMatrix.from_predictions(self.true_class, self.pred_class, n_classes)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.true_class == self.pred_class))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "true_class", "pred_class", "latency_ms"])
            for k in range(len(self)):
                w.writerow([k, int(self.true_class[k]), int(self.pred_class[k]), f"{self.latency_ms[k]:.4f}"])
        return path

    def plot_data(self) -> dict:
        """Per-class indicator tracks of the true and detected sequences."""
        cycles = list(range(len(self)))
        doc = {"cycles": cycles, "classes": [c.label for c in ModeClass], "true": {}, "detected": {}}
        for c in ModeClass:
            doc["true"][c.label] = [int(v == c) for v in self.true_class]
            doc["detected"][c.label] = [int(v == c) for v in self.pred_class]
        return doc

    def write_plot_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.plot_data(), indent=1))
        return path


def _window_features(mode, traj, config: GenConfig) -> np.ndarray:
    return feature_matrix(mode, traj, config.features)


def check_fingerprint(ckpt: Checkpoint, scen: ScenarioLibrary, config: GenConfig) -> None:
    if ckpt.mean is None or ckpt.std is None:
        raise FingerprintMismatch("checkpoint has no normalization statistics")
    if ckpt.fingerprint != fingerprint(config, scen):
        raise FingerprintMismatch("checkpoint was trained on data from a different configuration")


def detect_stream(ckpt: Checkpoint, scen: ScenarioLibrary, stream: ScenarioStream, config: GenConfig,
                  verify: bool = True) -> SwitchingSequence:
    """Classify every cycle of ``stream``.

    Latency covers feature assembly, normalization and the forward pass,
    the work a deployed detector would do once the window closes.
    """
    if verify:
        check_fingerprint(ckpt, scen, config)
    if stream.schedule != config.schedule:
        raise ValueError("stream schedule differs from the generation schedule")
    n = len(stream)
    true_c, pred_c = np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    true_m, lat = np.zeros(n, dtype=np.int64), np.zeros(n)
    for k, (spec, seed) in enumerate(zip(stream.specs, stream.seeds)):
        mode = scen.mode_for(spec)
        traj = simulate_window(mode, config, seed, *scen.start(config))
        t0 = time.perf_counter()
        z = ckpt.normalize(_window_features(mode, traj, config))
        pred_c[k] = predict(ckpt.params, z)
        lat[k] = 1e3 * (time.perf_counter() - t0)
        true_c[k], true_m[k] = int(spec.kind), mode.id
    return SwitchingSequence(true_c, pred_c, lat, true_m)


def response_library(scen: ScenarioLibrary, config: GenConfig) -> ResponseLibrary:
    """Noise-free output windows of every mode from the operating point."""
    base = scen.base.model
    x_op, u_op = scen.start(config)
    u = config.input.realize(base, config.schedule, u_op)
    x0 = np.zeros(base.n) if x_op is None else x_op
    return expected_responses(scen.library, u, x0, config.schedule)


def agreement(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("agreement needs two nonempty label arrays of equal length")
    return float(np.mean(a == b))


@dataclass
class BaselineReport:
    transformer: SwitchingSequence
    baseline: SwitchingSequence
    agreement: float

    def to_dict(self) -> dict:
        t, b = self.transformer.confusion(), self.baseline.confusion()
        return {
            "cycles": len(self.transformer),
            "agreement": self.agreement,
            "transformer": {"accuracy": t.accuracy, "confusion": t.counts.tolist(),
                            "per_class": [None if np.isnan(r) else float(r) for r in t.recall()]},
            "baseline": {"accuracy": b.accuracy, "confusion": b.counts.tolist(),
                         "per_class": [None if np.isnan(r) else float(r) for r in b.recall()]},
        }


def baseline_stream(scen: ScenarioLibrary, library: ResponseLibrary, stream: ScenarioStream,
                    config: GenConfig) -> SwitchingSequence:
    """Residual matching on the sensor outputs of every cycle."""
    if library.schedule != stream.schedule or library.schedule != config.schedule:
        raise ValueError("response library and stream use different schedules")
    n = len(stream)
    true_c, pred_c = np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    true_m, pred_m, lat = np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.zeros(n)
    for k, (spec, seed) in enumerate(zip(stream.specs, stream.seeds)):
        mode = scen.mode_for(spec)
        traj = simulate_window(mode, config, seed, *scen.start(config))
        t0 = time.perf_counter()
        pred_m[k] = residual_classify(traj.outputs, library)
        lat[k] = 1e3 * (time.perf_counter() - t0)
        pred_c[k] = int(scen.library[int(pred_m[k])].label)
        true_c[k], true_m[k] = int(spec.kind), mode.id
    return SwitchingSequence(true_c, pred_c, lat, true_m, pred_m)


def compare_baseline(ckpt: Checkpoint, scen: ScenarioLibrary, library: ResponseLibrary, stream: ScenarioStream,
                     config: GenConfig, verify: bool = True) -> BaselineReport:
    """Both detectors on identical windows (same modes, seeds and noise)."""
    learned = detect_stream(ckpt, scen, stream, config, verify)
    matched = baseline_stream(scen, library, stream, config)
    return BaselineReport(learned, matched, agreement(learned.pred_class, matched.pred_class))
