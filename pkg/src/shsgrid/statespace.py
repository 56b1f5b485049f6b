from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Continuous-time LTI triple ``xdot = A x + B u``, ``y = C x``.

    Arrays are copied and made read-only on construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]

    def __post_init__(self):
        a, b, c = _frozen(self.A), _frozen(self.B), _frozen(self.C)
        n = len(self.state_names)
        if a.shape != (n, n):
            raise ValueError(f"A has shape {a.shape}, expected {(n, n)}")
        if b.shape == (0, 0) and n:
            b = b.reshape(n, 0)
        if b.shape != (n, len(self.input_names)):
            raise ValueError(f"B has shape {b.shape}, expected {(n, len(self.input_names))}")
        if c.shape == (0, 0) and n:
            c = c.reshape(0, n)
        if c.shape != (len(self.output_names), n):
            raise ValueError(f"C has shape {c.shape}, expected {(len(self.output_names), n)}")
        for names, what in ((self.state_names, "state"), (self.input_names, "input"), (self.output_names, "output")):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {what} names")
        for m, label in ((a, "A"), (b, "B"), (c, "C")):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{label} has non-finite entries")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "output_names", tuple(self.output_names))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def state_index(self, name: str) -> int:
        return self.state_names.index(name)

    def input_index(self, name: str) -> int:
        return self.input_names.index(name)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def spectral_abscissa(self) -> float:
        return float(np.max(self.eigenvalues().real)) if self.n else -np.inf

    def is_hurwitz(self) -> bool:
        return self.spectral_abscissa() < 0

    def replace(self, **changes) -> "StateSpaceModel":
        fields = dict(
            A=self.A, B=self.B, C=self.C,
            state_names=self.state_names, input_names=self.input_names, output_names=self.output_names,
        )
        fields.update(changes)
        return StateSpaceModel(**fields)

    def same_as(self, other: "StateSpaceModel") -> bool:
        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.C, other.C)
            and self.state_names == other.state_names
            and self.input_names == other.input_names
            and self.output_names == other.output_names
        )
