"""Contingency modes, mode libraries and their on-disk form."""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..statespace import StateSpaceModel


class ModeClass(enum.IntEnum):
    NORMAL = 0
    PHYSICAL = 1
    MEASUREMENT = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True, eq=False)
class Mode:
    id: int
    label: ModeClass
    model: StateSpaceModel
    description: str = ""

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("mode id must be >= 0")
        object.__setattr__(self, "label", ModeClass(self.label))


class ModeLibrary:
    """Ordered, immutable set of modes sharing state and input dimensions."""

    def __init__(self, modes, base_id: int | None = None):
        modes = tuple(modes)
        if not modes:
            raise ValueError("empty mode library")
        ids = [m.id for m in modes]
        if len(set(ids)) != len(ids):
            raise ValueError("mode ids must be unique")
        n, m = modes[0].model.n, modes[0].model.m
        for mode in modes:
            if mode.model.n != n or mode.model.m != m:
                raise ValueError(f"mode {mode.id} has dimensions ({mode.model.n}, {mode.model.m}), expected ({n}, {m})")
        normals = [mode.id for mode in modes if mode.label == ModeClass.NORMAL]
        if base_id is None:
            if len(normals) != 1:
                raise ValueError(f"expected exactly one Normal mode, found {len(normals)}")
            base_id = normals[0]
        if base_id not in ids or dict(zip(ids, modes))[base_id].label != ModeClass.NORMAL:
            raise ValueError("base mode must exist and be Normal")
        if len(normals) != 1:
            raise ValueError(f"expected exactly one Normal mode, found {len(normals)}")
        self._modes = modes
        self._by_id = dict(zip(ids, modes))
        self.base_id = base_id

    def __iter__(self):
        return iter(self._modes)

    def __len__(self):
        return len(self._modes)

    def __getitem__(self, mode_id: int) -> Mode:
        return self._by_id[mode_id]

    @property
    def ids(self) -> list[int]:
        return [m.id for m in self._modes]

    @property
    def base(self) -> Mode:
        return self._by_id[self.base_id]

    def eigenvalues(self) -> dict[int, np.ndarray]:
        return {m.id: m.model.eigenvalues() for m in self._modes}

    def duplicates(self) -> list[tuple[int, int]]:
        """Pairs of modes whose (A, B, C) are entrywise identical."""
        out = []
        for i, a in enumerate(self._modes):
            for b in self._modes[i + 1:]:
                if (np.array_equal(a.model.A, b.model.A) and np.array_equal(a.model.B, b.model.B)
                        and np.array_equal(a.model.C, b.model.C)):
                    out.append((a.id, b.id))
        return out


def _write_matrix(path: Path, m: np.ndarray) -> None:
    rows, cols = m.shape
    with open(path, "w") as fh:
        fh.write(f"{rows} {cols}\n")
        for row in m:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def _read_matrix(path: Path) -> np.ndarray:
    lines = path.read_text().splitlines()
    rows, cols = (int(t) for t in lines[0].split())
    data = [[float(t) for t in ln.split()] for ln in lines[1:1 + rows]]
    out = np.array(data, dtype=float).reshape(rows, cols)
    return out


def save_library(library: ModeLibrary, directory) -> Path:
    """Write a manifest plus one text file per matrix (%.17g, row-major)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    base = library.base.model
    manifest = {
        "format": "shs-mode-library",
        "version": 1,
        "base_id": library.base_id,
        "state_names": list(base.state_names),
        "input_names": list(base.input_names),
        "modes": [],
    }
    for mode in library:
        files = {}
        for key in ("A", "B", "C"):
            fname = f"mode{mode.id:04d}_{key}.txt"
            _write_matrix(d / fname, getattr(mode.model, key))
            files[key] = fname
        manifest["modes"].append({
            "id": mode.id,
            "class": mode.label.label,
            "description": mode.description,
            "output_names": list(mode.model.output_names),
            "files": files,
        })
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def load_library(directory) -> ModeLibrary:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != "shs-mode-library":
        raise ValueError("not a mode library manifest")
    modes = []
    for entry in manifest["modes"]:
        mats = {k: _read_matrix(d / f) for k, f in entry["files"].items()}
        model = StateSpaceModel(
            mats["A"], mats["B"], mats["C"],
            manifest["state_names"], manifest["input_names"], entry["output_names"],
        )
        modes.append(Mode(entry["id"], ModeClass[entry["class"].upper()], model, entry["description"]))
    return ModeLibrary(modes, manifest["base_id"])


def warn_if_degenerate(library: ModeLibrary) -> None:
    dup = library.duplicates()
    if dup:
        warnings.warn(f"modes with identical dynamics cannot be told apart: {dup}", stacklevel=3)
