"""Sampling and simulation of one mode over a detection window."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.linalg import expm

from ..statespace import StateSpaceModel
from .modes import Mode


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectionSchedule:
    """Cycle length ``tau``, detection window ``tau0`` and sample interval ``dt`` (s)."""

    tau: float = 1.0
    tau0: float = 0.03
    dt: float = 0.001

    def __post_init__(self):
        if not (0 < self.tau0 < self.tau):
            raise ValueError("need 0 < tau0 < tau")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        ratio = self.tau0 / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"tau0/dt = {ratio} is not a positive integer")
        if self.tau0 > self.tau / 2:
            warnings.warn("detection window exceeds half the cycle", stacklevel=2)

    @property
    def S(self) -> int:
        return int(round(self.tau0 / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.S) * self.dt


@dataclass(frozen=True)
class NoiseSpec:
    """Process noise ``sigma_w`` per step, measurement noise ``sigma_v`` and the
    spread ``sigma_x0`` of the random initial condition."""

    sigma_w: float = 1e-4
    sigma_v: float = 1e-3
    sigma_x0: float = 3e-3

    def __post_init__(self):
        if min(self.sigma_w, self.sigma_v, self.sigma_x0) < 0:
            raise ValueError("noise levels must be >= 0")

    @classmethod
    def off(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    A_d: np.ndarray
    B_d: np.ndarray
    C: np.ndarray
    dt: float


def discretize_zoh(model: StateSpaceModel, dt: float) -> DiscreteModel:
    """Exact sampling under a zero-order hold.

    ``expm([[A, B], [0, 0]] dt)`` holds ``A_d`` in the top-left block and
    ``B_d`` in the top-right block.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, m = model.n, model.m
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A
    aug[:n, n:] = model.B
    e = expm(aug * dt)
    a_d, b_d = e[:n, :n].copy(), e[:n, n:].copy()
    if not (np.all(np.isfinite(a_d)) and np.all(np.isfinite(b_d))):
        raise SimulationError("matrix exponential overflowed")
    return DiscreteModel(a_d, b_d, model.C.copy(), dt)


@dataclass(frozen=True, eq=False)
class RationalInput:
    """Input whose Laplace transform is num(s)/den(s), driving one channel.

    Coefficients are in descending powers of s.
    """

    num: tuple[float, ...]
    den: tuple[float, ...]
    channel: int | str = 0
    coprime_tol: float = 1e-8

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise ValueError("denominator is zero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("input transfer function is improper")
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))
        shared = self.common_roots()
        if shared:
            raise ValueError(f"numerator and denominator share roots {shared}")

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    @property
    def zeros(self) -> np.ndarray:
        return np.roots(self.num) if len(self.num) > 1 else np.array([])

    def common_roots(self) -> list[complex]:
        return [complex(z) for z in self.zeros if np.any(np.abs(self.poles - z) <= self.coprime_tol)]

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Time-domain signal at ``t`` (the impulse response of num/den).

        A biproper transform carries an impulse at t = 0, which has no sampled
        value and is dropped.
        """
        t = np.asarray(t, dtype=float)
        if all(c == 0 for c in self.num):
            return np.zeros_like(t)
        a, b, c, _ = signal.tf2ss(self.num, self.den)
        return np.array([(c @ expm(a * tk) @ b).item() for tk in t])


def realize_input(model: StateSpaceModel, schedule: DetectionSchedule, rational: RationalInput | None = None,
                  constant: dict | None = None) -> np.ndarray:
    """Piecewise-constant input sequence of shape (S, m).

    ``constant`` maps channel names to held values; ``rational`` adds its
    sampled signal on its own channel.
    """
    u = np.zeros((schedule.S, model.m))
    for name, value in (constant or {}).items():
        u[:, model.input_index(name)] += value
    if rational is not None:
        ch = rational.channel
        idx = model.input_index(ch) if isinstance(ch, str) else int(ch)
        u[:, idx] += rational.evaluate(schedule.times)
    return u


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray   # (S, n)
    outputs: np.ndarray  # (S, p)


def noise_streams(seed) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for initial condition, process and measurement noise.

    Counter-based (Philox) and keyed by ``seed``, which may be an int or a
    sequence of ints.
    """
    ss = np.random.SeedSequence(seed)
    return tuple(np.random.Generator(np.random.Philox(child)) for child in ss.spawn(3))


_DISCRETE_CACHE: dict = {}


def _discrete(model: StateSpaceModel, dt: float) -> DiscreteModel:
    key = (id(model), dt)
    hit = _DISCRETE_CACHE.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    d = discretize_zoh(model, dt)
    if len(_DISCRETE_CACHE) > 4096:
        _DISCRETE_CACHE.clear()
    _DISCRETE_CACHE[key] = (model, d)
    return d


def simulate(mode: Mode | StateSpaceModel, x0, u, schedule: DetectionSchedule,
             noise: NoiseSpec | None = None, seed=0) -> Trajectory:
    """Propagate ``x_{k+1} = A_d x_k + B_d u_k + w_k`` and read ``y_k = C x_k + v_k``.

    ``x0`` is used as given; ``noise.sigma_x0`` is not applied here.  Rows of
    the result are the samples k = 0 .. S-1.
    """
    model = mode.model if isinstance(mode, Mode) else mode
    noise = noise or NoiseSpec.off()
    S, n = schedule.S, model.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({n},)")
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = np.broadcast_to(u, (S, model.m))
    if u.shape != (S, model.m):
        raise ValueError(f"input has shape {u.shape}, expected ({S}, {model.m})")
    d = _discrete(model, schedule.dt)
    _, rng_w, rng_v = noise_streams(seed)
    w = rng_w.standard_normal((S, n)) * noise.sigma_w
    v = rng_v.standard_normal((S, model.p)) * noise.sigma_v
    forced = u @ d.B_d.T
    xs = np.empty((S, n))
    x = x0
    for k in range(S):
        xs[k] = x
        x = d.A_d @ x + forced[k] + w[k]
    if not np.all(np.isfinite(xs)):
        raise SimulationError("state diverged")
    ys = xs @ d.C.T + v
    return Trajectory(xs, ys)


def initial_state(n: int, noise: NoiseSpec, seed) -> np.ndarray:
    rng_x0, _, _ = noise_streams(seed)
    return rng_x0.standard_normal(n) * noise.sigma_x0
