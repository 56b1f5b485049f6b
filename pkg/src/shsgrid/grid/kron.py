"""Kron reduction of the DC-power-flow susceptance matrix onto dynamic buses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import BusNetwork, IslandingError


@dataclass(frozen=True)
class CouplingMatrix:
    """Synchronizing-power coefficients among the retained nodes (pu/rad).

    ``load_share[i, k]`` is the fraction of a withdrawal at bus
    ``load_bus_ids[k]`` picked up by retained node ``bus_ids[i]``; every bus
    still connected to the slack appears in ``load_bus_ids``.
    """

    matrix: np.ndarray
    bus_ids: tuple[int, ...]
    load_share: np.ndarray
    load_bus_ids: tuple[int, ...]

    def __post_init__(self):
        k = self.matrix
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] != len(self.bus_ids):
            raise ValueError("coupling matrix must be square over the dynamic buses")
        if not np.all(np.isfinite(k)):
            raise ValueError("coupling matrix has non-finite entries")
        if self.load_share.shape != (len(self.bus_ids), len(self.load_bus_ids)):
            raise ValueError("load_share shape does not match the bus lists")


def susceptance_matrix(network: BusNetwork, bus_ids) -> np.ndarray:
    """Weighted Laplacian of in-service lines (pu) restricted to ``bus_ids``,
    plus the slack tie to the upstream grid as a shunt term."""
    index = {b: i for i, b in enumerate(bus_ids)}
    n = len(bus_ids)
    lap = np.zeros((n, n))
    zb = network.z_base
    for ln in network.lines:
        if not ln.in_service or ln.from_bus not in index or ln.to_bus not in index:
            continue
        b = zb / ln.x_ohm
        i, j = index[ln.from_bus], index[ln.to_bus]
        lap[i, i] += b
        lap[j, j] += b
        lap[i, j] -= b
        lap[j, i] -= b
    if network.slack_tie_x > 0 and network.slack in index:
        s = index[network.slack]
        lap[s, s] += zb / network.slack_tie_x
    return lap


def schur(full: np.ndarray, keep: int) -> tuple[np.ndarray, np.ndarray]:
    """Reduce ``full`` onto its first ``keep`` rows/columns.

    Returns the reduced matrix and the map of eliminated-node injections onto
    the kept nodes.
    """
    k_kk = full[:keep, :keep]
    if full.shape[0] == keep:
        return k_kk.copy(), np.zeros((keep, 0))
    k_ke = full[:keep, keep:]
    x = np.linalg.solve(full[keep:, keep:], k_ke.T)
    reduced = k_kk - k_ke @ x
    return 0.5 * (reduced + reduced.T), -x.T


def kron_reduce(network: BusNetwork, dynamic_bus_ids=None) -> CouplingMatrix:
    """Eliminate non-dynamic buses by a Schur complement.

    Raises IslandingError if a dynamic bus cannot reach the slack through
    in-service lines.  Non-dynamic buses in such an island are dropped.
    """
    dyn = list(network.dynamic_bus_ids if dynamic_bus_ids is None else dynamic_bus_ids)
    known = set(network.bus_ids)
    for b in dyn:
        if b not in known:
            raise KeyError(f"dynamic bus {b} not in network")
    live = network.reachable_from_slack()
    cut = [b for b in dyn if b not in live]
    if cut:
        raise IslandingError(f"dynamic buses {cut} are islanded from slack bus {network.slack}")
    interior = [b for b in network.bus_ids if b in live and b not in dyn]
    reduced, share = schur(susceptance_matrix(network, dyn + interior), len(dyn))
    load_share = np.hstack([np.eye(len(dyn)), share])
    return CouplingMatrix(reduced, tuple(dyn), load_share, tuple(dyn + interior))


def behind_reactance(coupling: CouplingMatrix, reactance: dict[int, float]) -> CouplingMatrix:
    """Move the listed buses' nodes behind a series reactance (pu).

    Each listed bus is replaced by an internal node tied to it through
    ``1/x``, and the terminal bus is then eliminated.  Buses with x = 0 are
    left as they are.
    """
    ids = list(coupling.bus_ids)
    behind = [b for b in ids if reactance.get(b, 0.0) > 0]
    if not behind:
        return coupling
    n = len(ids)
    pos = {b: i for i, b in enumerate(ids)}
    nb = len(behind)
    # order: retained nodes (internal for listed buses, else the bus), then listed terminals
    full = np.zeros((n + nb, n + nb))
    full[:n, :n] = 0.0
    term = {b: n + j for j, b in enumerate(behind)}
    old = [term[b] if b in term else pos[b] for b in ids]  # where each old node now sits
    for i, bi in enumerate(ids):
        for j, bj in enumerate(ids):
            full[old[i], old[j]] += coupling.matrix[i, j]
    for b in behind:
        y = 1.0 / reactance[b]
        i, t = pos[b], term[b]
        full[i, i] += y
        full[t, t] += y
        full[i, t] -= y
        full[t, i] -= y
    reduced, share = schur(full, n)
    # injection at an old node: terminals redistribute, untouched buses stay
    mapping = np.zeros((n, n))
    for i, b in enumerate(ids):
        if b in term:
            mapping[:, i] = share[:, term[b] - n]
        else:
            mapping[i, i] = 1.0
    return CouplingMatrix(reduced, coupling.bus_ids, mapping @ coupling.load_share, coupling.load_bus_ids)


def served_load(network: BusNetwork, coupling: CouplingMatrix) -> np.ndarray:
    """Active load (pu) of buses still connected to the slack, mapped onto the retained nodes."""
    p = np.array([network.bus(b).p_mw for b in coupling.load_bus_ids]) / network.base_mva
    return coupling.load_share @ p
