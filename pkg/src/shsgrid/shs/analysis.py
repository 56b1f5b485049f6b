"""Observability, input design checks and the residual-matching detector."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from ..statespace import StateSpaceModel
from .dynamics import DetectionSchedule, RationalInput, simulate
from .modes import Mode, ModeLibrary, warn_if_degenerate


def observability(mode: Mode | StateSpaceModel) -> tuple[np.ndarray, int]:
    """Stacked ``[C; CA; ...; CA^(n-1)]`` and its numerical rank.

    The rank is taken on the same stack built with ``A / max(1, rho(A))``,
    which spans the same row space but keeps high powers of stiff matrices
    from swamping the tolerance ``n * eps * sigma_max``.
    """
    model = mode.model if isinstance(mode, Mode) else mode
    a, c, n = model.A, model.C, model.n
    rho = np.max(np.abs(np.linalg.eigvals(a))) if n else 0.0
    scale = max(1.0, rho)
    blocks, scaled = [], []
    row, srow = c.copy(), c.copy()
    for _ in range(n):
        blocks.append(row)
        scaled.append(srow)
        row = row @ a
        srow = srow @ (a / scale)
    obs = np.vstack(blocks) if blocks else np.zeros((0, n))
    stack = np.vstack(scaled) if scaled else obs
    if stack.size == 0:
        return obs, 0
    sv = np.linalg.svd(stack, compute_uv=False)
    tol = n * np.finfo(float).eps * sv[0]
    return obs, int(np.sum(sv > tol))


@dataclass(frozen=True)
class MomiVerdict:
    accepted: bool
    mode_id: int | None = None
    shared_root: complex | None = None
    free_roots: tuple[complex, ...] = ()


def momi_check(u: RationalInput, library: ModeLibrary, tol: float = 1e-6) -> MomiVerdict:
    """Accept iff some pole of the input is farther than ``tol`` from every
    eigenvalue of every mode."""
    if u.common_roots():
        raise ValueError("input numerator and denominator are not coprime")
    eig = library.eigenvalues()
    free, first_clash = [], None
    for root in u.poles:
        clash = None
        for mode_id in library.ids:
            if np.any(np.abs(eig[mode_id] - root) <= tol):
                clash = mode_id
                break
        if clash is None:
            free.append(complex(root))
        elif first_clash is None:
            first_clash = (clash, complex(root))
    if free:
        return MomiVerdict(True, free_roots=tuple(free))
    return MomiVerdict(False, mode_id=first_clash[0], shared_root=first_clash[1])


@dataclass(frozen=True, eq=False)
class ResponseLibrary:
    responses: dict[int, np.ndarray]
    u: np.ndarray
    x0: np.ndarray
    schedule: DetectionSchedule

    def __post_init__(self):
        shapes = {r.shape for r in self.responses.values()}
        if len(shapes) != 1:
            raise ValueError("library trajectories differ in shape")

    @property
    def ids(self) -> list[int]:
        return sorted(self.responses)

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.responses.values())).shape

    def min_gap(self) -> float:
        """Smallest pairwise L2 distance between expected output windows."""
        gaps = [np.linalg.norm(self.responses[a] - self.responses[b])
                for a, b in itertools.combinations(self.ids, 2)]
        return float(min(gaps)) if gaps else float("inf")


def expected_responses(library: ModeLibrary, u, x0, schedule: DetectionSchedule) -> ResponseLibrary:
    warn_if_degenerate(library)
    out = {m.id: simulate(m, x0, u, schedule).outputs for m in library}
    return ResponseLibrary(out, np.array(u, dtype=float), np.array(x0, dtype=float), schedule)


def residual_classify(window: np.ndarray, library: ResponseLibrary) -> int:
    """Mode whose expected response is nearest in summed squared error; ties
    go to the lowest id."""
    window = np.asarray(window, dtype=float)
    if window.shape != library.shape:
        raise ValueError(f"window shape {window.shape} does not match library {library.shape}")
    best, best_err = None, np.inf
    for mode_id in library.ids:
        err = float(np.sum((window - library.responses[mode_id]) ** 2))
        if err < best_err:
            best, best_err = mode_id, err
    return best
