"""Integration of machine blocks, the PV-BESS block and the reduced network."""
from __future__ import annotations

import numpy as np
from scipy.linalg import block_diag

from ..statespace import StateSpaceModel
from .blocks import GFL_STATES, build_gfl_block, build_swing_block
from .kron import CouplingMatrix, behind_reactance, kron_reduce, served_load
from .network import BusNetwork, bundled, load_network
from .params import ModelParams, load_params

SCHED_INPUT = "P_sched"


class AssemblyError(ValueError):
    pass


def assemble_system(
    sg_blocks,
    gfl_block: StateSpaceModel,
    coupling: CouplingMatrix,
    sensors: dict[str, str],
    sched=None,
    v_pcc: float = 1.0,
    gfl_power_scale: float = 1.0,
) -> StateSpaceModel:
    """Close the network around the blocks.

    State order is the GFL block followed by each machine's (delta, omega).
    ``coupling.bus_ids`` must list the machine nodes in block order followed by
    the PV-BESS bus, whose angle is algebraic: it balances the inverter's
    grid-side injection against the synchronizing flows.  The PCC angle enters
    the inverter through ``v_gq``.

    ``sched`` holds the net scheduled injection (pu) at each retained node:
    dispatched inverter power minus the load that node serves.  It becomes the
    ``P_sched`` input column, so holding that channel at 1 places the system
    at its loaded operating point and rotor angles are absolute.
    """
    sg_blocks = list(sg_blocks)
    ng = len(sg_blocks)
    if coupling.matrix.shape != (ng + 1, ng + 1):
        raise AssemblyError(
            f"coupling is {coupling.matrix.shape[0]}x{coupling.matrix.shape[0]}, expected one node per machine plus the PCC"
        )
    if gfl_block.state_names != GFL_STATES:
        raise AssemblyError("GFL block state order does not match the GFL state list")
    for blk in sg_blocks:
        if blk.n != 2 or blk.m != 1:
            raise AssemblyError("machine blocks must have 2 states and 1 input")
    sched = np.zeros(ng + 1) if sched is None else np.asarray(sched, dtype=float)
    if sched.shape != (ng + 1,):
        raise AssemblyError("scheduled injection needs one entry per retained node")

    k = coupling.matrix
    kpp = k[ng, ng]
    if not kpp > 0:
        raise AssemblyError("PCC bus has no connection to the network")

    ngfl = gfl_block.n
    n = ngfl + 2 * ng
    a = block_diag(gfl_block.A, *[b.A for b in sg_blocks])
    i_gd = GFL_STATES.index("I_gd")
    delta = [ngfl + 2 * g for g in range(ng)]
    omega = [ngfl + 2 * g + 1 for g in range(ng)]

    # PCC angle as a row over the states, plus its scheduled-injection offset
    theta_pcc = np.zeros(n)
    theta_pcc[i_gd] = gfl_power_scale * v_pcc / kpp
    for g in range(ng):
        theta_pcc[delta[g]] = -k[ng, g] / kpp
    theta_sched = sched[ng] / kpp

    input_names = list(gfl_block.input_names) + [b.input_names[0] for b in sg_blocks] + [SCHED_INPUT]
    b_sys = np.zeros((n, len(input_names)))
    b_sys[:ngfl, : gfl_block.m] = gfl_block.B
    for g, blk in enumerate(sg_blocks):
        inv_m = blk.B[1, 0]
        b_sys[omega[g], gfl_block.m + g] = inv_m
        for h in range(ng):
            a[omega[g], delta[h]] -= k[g, h] * inv_m
        a[omega[g]] -= k[g, ng] * inv_m * theta_pcc
        b_sys[omega[g], -1] = (sched[g] - k[g, ng] * theta_sched) * inv_m

    col_vgq = gfl_block.B[:, gfl_block.input_index("v_gq")]
    a[:ngfl] += v_pcc * np.outer(col_vgq, theta_pcc)
    b_sys[:ngfl, -1] += v_pcc * theta_sched * col_vgq

    state_names = list(gfl_block.state_names) + [s for b in sg_blocks for s in b.state_names]
    c = np.zeros((len(sensors), n))
    for row, (name, target) in enumerate(sensors.items()):
        if target not in state_names:
            raise AssemblyError(f"sensor {name} targets unknown state {target!r}")
        c[row, state_names.index(target)] = 1.0
    return StateSpaceModel(a, b_sys, c, state_names, input_names, list(sensors))


def network_coupling(network: BusNetwork, params: ModelParams) -> CouplingMatrix:
    """Kron-reduced coupling among the machines' internal EMFs and the PCC."""
    base = kron_reduce(network)
    x_d = {network.generators[g]: params.swing[g].x_d for g in network.generators}
    return behind_reactance(base, x_d)


def scheduled_injection(network: BusNetwork, params: ModelParams, coupling: CouplingMatrix) -> np.ndarray:
    """Net scheduled injection (pu) at each retained node of ``coupling``."""
    sched = -served_load(network, coupling)
    for i, g in enumerate(network.generators):
        sched[i] -= params.swing[g].P_L
    sched[-1] += params.op.p_set * params.gfl.S_rated / network.base_mva
    return sched


def build_system(network: BusNetwork, params: ModelParams) -> StateSpaceModel:
    """Integrated model for the topology of ``network``."""
    missing = [g for g in network.generators if g not in params.swing]
    if missing:
        raise AssemblyError(f"no swing parameters for generators {missing}")
    if network.pvbess_bus in network.generators.values():
        raise AssemblyError("PV-BESS must sit on its own bus")
    sg = [build_swing_block(params.swing[g], g) for g in network.generators]
    gfl = build_gfl_block(params.gfl, params.op)
    coupling = network_coupling(network, params)
    sched = scheduled_injection(network, params, coupling)
    sensors = network.sensors or {f"PMU_{g}": f"delta_{g}" for g in list(network.generators)[:2]}
    scale = params.gfl.S_rated / network.base_mva
    return assemble_system(sg, gfl, coupling, sensors, sched=sched, v_pcc=params.op.v_pcc, gfl_power_scale=scale)


def operating_input(model: StateSpaceModel, params: ModelParams) -> np.ndarray:
    """Constant input holding ``model`` at its scheduled operating point."""
    u = np.zeros(model.m)
    for g, sp in params.swing.items():
        name = f"P_in_{g}"
        if name in model.input_names:
            u[model.input_index(name)] = sp.P_in
    if SCHED_INPUT in model.input_names:
        u[model.input_index(SCHED_INPUT)] = 1.0
    return u


def equilibrium(model: StateSpaceModel, u) -> np.ndarray:
    """Steady state of a Hurwitz model under constant input ``u``."""
    return -np.linalg.solve(model.A, model.B @ np.asarray(u, dtype=float))


def default_network() -> BusNetwork:
    return load_network(bundled("ieee33.net"))


def default_params() -> ModelParams:
    return load_params(bundled("default_params.ini"))
