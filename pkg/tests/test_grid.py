import dataclasses
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dc_angles

from shsgrid.grid import (GFL_INPUTS, GFL_STATES, AssemblyError, GflParams, IslandingError, NetworkFormatError,
                          NetworkValidationError, OperatingPoint, ParameterError, SwingParams, UnstableBlockError,
                          assemble_system, build_gfl_block, build_swing_block, build_system, kron_reduce,
                          parse_network)
from shsgrid.grid.assemble import SCHED_INPUT, equilibrium, network_coupling, operating_input, served_load
from shsgrid.grid.kron import behind_reactance, schur, susceptance_matrix
from shsgrid.grid.network import Bus, BusNetwork, Line

# ------------------------------------------------------------------ network file


def test_bundled_feeder_shape(ieee33):
    assert len(ieee33.buses) == 33
    assert sum(ln.in_service for ln in ieee33.lines) == 32
    assert ieee33.slack == 1
    assert ieee33.generators == {"G1": 1, "G2": 13, "G4": 30}
    assert ieee33.pvbess_bus == 25
    assert ieee33.dynamic_bus_ids == [1, 13, 30, 25]
    ieee33.validate()


def test_parse_rejects_missing_section():
    with pytest.raises(NetworkFormatError):
        parse_network("[network]\nslack = 1\n")


def test_validation_rejects_zero_reactance(chain3):
    bad = dataclasses.replace(chain3, lines=(Line(1, 1, 2, 0.01, 0.0), chain3.lines[1]))
    with pytest.raises(NetworkValidationError):
        bad.validate()


def test_validation_rejects_generator_on_load_bus(chain3):
    bad = dataclasses.replace(chain3, generators={"G1": 2})
    with pytest.raises(NetworkValidationError):
        bad.validate()


def test_without_line_keeps_original(chain3):
    cut = chain3.without_line(1)
    assert chain3.line(1).in_service and not cut.line(1).in_service
    assert cut.reachable_from_slack() == {1}


# ------------------------------------------------------------------ Kron reduction


def test_chain_reduces_to_series_susceptance(chain3):
    # two 0.1 ohm lines on a 1 ohm base: b = 10 each, in series 5
    red = kron_reduce(chain3)
    np.testing.assert_allclose(red.matrix, [[5.0, -5.0], [-5.0, 5.0]], atol=1e-12)
    assert red.bus_ids == (1, 3)
    assert red.load_bus_ids == (1, 3, 2)
    np.testing.assert_allclose(red.load_share, [[1, 0, 0.5], [0, 1, 0.5]], atol=1e-12)
    np.testing.assert_allclose(served_load(chain3, red), [0.25, 0.25], atol=1e-12)


def test_all_dynamic_is_the_plain_laplacian(chain3):
    red = kron_reduce(chain3, [1, 2, 3])
    np.testing.assert_allclose(red.matrix, [[10, -10, 0], [-10, 20, -10], [0, -10, 10]], atol=1e-12)


def test_islanded_dynamic_bus_raises(chain3):
    with pytest.raises(IslandingError):
        kron_reduce(chain3.without_line(2))


def test_leaf_outage_drops_only_its_load(mesh4):
    """Cutting a leaf feeder leaves the coupling alone and removes that load."""
    base = kron_reduce(mesh4)
    cut = kron_reduce(mesh4.without_line(4))
    np.testing.assert_allclose(cut.matrix, base.matrix, atol=1e-12)
    assert 3 in base.load_bus_ids and 3 not in cut.load_bus_ids
    np.testing.assert_allclose(served_load(mesh4, base).sum() - served_load(mesh4, cut).sum(), 0.3, atol=1e-12)


def test_mesh_outage_matches_schur_difference(mesh4):
    """Losing line 1-4 changes the coupling by the reduced image of that branch."""
    dyn = [1, 4]
    full = susceptance_matrix(mesh4, [1, 4, 2, 3])
    outage = susceptance_matrix(mesh4.without_line(3), [1, 4, 2, 3])
    before, _ = schur(full, 2)
    after, _ = schur(outage, 2)
    np.testing.assert_allclose(kron_reduce(mesh4, dyn).matrix - kron_reduce(mesh4.without_line(3), dyn).matrix,
                               before - after, atol=1e-12)
    # the direct branch is 1/0.25 = 4 pu; removing it must lower the mutual stiffness by less than that
    delta = before - after
    assert 0 < -delta[0, 1] <= 4.0 + 1e-12


@st.composite
def grounded_networks(draw):
    """Random connected network with a slack tie, random loads and dynamic buses."""
    n = draw(st.integers(3, 7))
    seed = draw(st.integers(0, 2**31 - 1))
    rnd = random.Random(seed)
    edges = [(rnd.randrange(1, k), k) for k in range(2, n + 1)]
    for _ in range(draw(st.integers(0, 3))):
        a, b = rnd.sample(range(1, n + 1), 2)
        if (a, b) not in edges and (b, a) not in edges:
            edges.append((a, b))
    lines = tuple(Line(i + 1, a, b, 0.01, rnd.uniform(0.05, 2.0)) for i, (a, b) in enumerate(edges))
    n_dyn = draw(st.integers(1, n - 1))
    dyn = [1] + rnd.sample(range(2, n + 1), n_dyn)
    buses = tuple(Bus(k, k in dyn, 0.0 if k in dyn else rnd.uniform(0, 1)) for k in range(1, n + 1))
    net = BusNetwork(buses, lines, 1, {"G1": 1}, dyn[-1], slack_tie_x=rnd.uniform(0.1, 5.0))
    return net, dyn, rnd


@settings(max_examples=60, deadline=None)
@given(grounded_networks())
def test_reduction_reproduces_full_dc_flow(case):
    net, dyn, rnd = case
    red = kron_reduce(net, dyn)
    order = list(red.load_bus_ids)
    lap = susceptance_matrix(net, order)
    p = np.array([rnd.uniform(-1, 1) if b in dyn else -net.bus(b).p_mw for b in order])
    theta = dc_angles(lap, p)
    # retained-bus angles from the reduced system with interior injections mapped across
    inj = p[: len(dyn)] + red.load_share[:, len(dyn):] @ p[len(dyn):]
    np.testing.assert_allclose(np.linalg.solve(red.matrix, inj), theta[: len(dyn)], rtol=1e-9, atol=1e-9)
    # symmetric, and load sharing conserves every withdrawal
    np.testing.assert_allclose(red.matrix, red.matrix.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(red.matrix) > 0)


@settings(max_examples=30, deadline=None)
@given(grounded_networks(), st.randoms(use_true_random=False))
def test_reduction_ignores_bus_and_line_order(case, shuffler):
    net, dyn, _ = case
    buses, lines = list(net.buses), list(net.lines)
    shuffler.shuffle(buses)
    shuffler.shuffle(lines)
    other = dataclasses.replace(net, buses=tuple(buses), lines=tuple(lines))
    a, b = kron_reduce(net, dyn), kron_reduce(other, dyn)
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)
    np.testing.assert_allclose(served_load(net, a), served_load(other, b), atol=1e-10)


def test_behind_reactance_series_combination(chain3):
    # bus 1 behind x = 0.1: series of 0.1 with the 0.2 ohm path gives 1/0.3
    red = behind_reactance(kron_reduce(chain3), {1: 0.1})
    np.testing.assert_allclose(red.matrix, np.array([[1, -1], [-1, 1]]) / 0.3, atol=1e-12)
    # load at bus 2 is still fully shared between the two retained nodes
    np.testing.assert_allclose(red.load_share.sum(axis=0), [1, 1, 1], atol=1e-12)


def test_zero_reactance_is_identity(chain3):
    red = kron_reduce(chain3)
    assert behind_reactance(red, {1: 0.0}) is red


# ------------------------------------------------------------------ blocks


def test_swing_block_example():
    blk = build_swing_block(SwingParams(M=2.0, D=1.0), "G7")
    np.testing.assert_array_equal(blk.A, [[0, 1], [0, -0.5]])
    np.testing.assert_array_equal(blk.B, [[0], [0.5]])
    assert blk.state_names == ("delta_G7", "omega_G7")
    assert blk.input_names == ("P_in_G7",)


@pytest.mark.parametrize("kwargs", [dict(M=0, D=1), dict(M=1, D=-1), dict(M=1, D=1, x_d=-0.1)])
def test_swing_params_reject_bad_values(kwargs):
    with pytest.raises(ParameterError):
        SwingParams(**kwargs)


def test_gfl_block_dimensions_and_stability(params):
    blk = build_gfl_block(params.gfl, params.op)
    assert blk.n == 17 and blk.state_names == GFL_STATES
    assert blk.input_names == GFL_INPUTS
    assert blk.is_hurwitz()


def test_gfl_power_reference_enters_only_its_integrator(params):
    blk = build_gfl_block(params.gfl, params.op)
    col = blk.B[:, blk.input_index("P_ref")]
    expected = np.zeros(17)
    expected[GFL_STATES.index("xi_P")] = 1.0
    np.testing.assert_array_equal(col, expected)


def test_gfl_without_power_gains_decouples_the_integrator(params):
    gfl = dataclasses.replace(params.gfl, ki_p=0.0)
    blk = build_gfl_block(gfl, params.op, check_stable=False)
    i = GFL_STATES.index("xi_P")
    assert np.all(blk.A[:, i] == 0)
    assert np.min(np.abs(blk.eigenvalues())) < 1e-9


def test_gfl_with_all_gains_zero_has_free_integrators(params):
    zero = {k: 0.0 for k in ("kp_pll", "ki_pll", "kp_p", "ki_p", "kp_q", "ki_q", "kp_c", "ki_c")}
    blk = build_gfl_block(dataclasses.replace(params.gfl, **zero), params.op, check_stable=False)
    for name in ("xi_P", "xi_Q", "xi_cd", "xi_cq"):
        i = GFL_STATES.index(name)
        assert blk.A[i, i] == 0.0


def test_gfl_rejects_destabilizing_gains(params):
    gfl = dataclasses.replace(params.gfl, kp_c=0.0, ki_c=0.0, kp_pll=0.0, ki_pll=0.0)
    with pytest.raises(UnstableBlockError):
        build_gfl_block(gfl, params.op)


def test_gfl_params_reject_negative_gain():
    with pytest.raises(ParameterError):
        GflParams(kp_c=-1.0)


def test_operating_point_rejects_zero_voltage():
    with pytest.raises(ParameterError):
        OperatingPoint(v_pcc=0.0)


# ------------------------------------------------------------------ assembly


def test_default_system_dimensions(ieee33, params):
    sys = build_system(ieee33, params)
    assert (sys.n, sys.m, sys.p) == (23, 8, 2)
    assert sys.input_names[-1] == SCHED_INPUT
    assert sys.is_hurwitz()
    # each sensor reads exactly one rotor angle
    for row, target in zip(sys.C, ieee33.sensors.values()):
        assert row.sum() == 1.0 and sys.state_names[int(np.argmax(row))] == target


def test_operating_point_is_stationary(ieee33, params):
    sys = build_system(ieee33, params)
    u = operating_input(sys, params)
    x = equilibrium(sys, u)
    np.testing.assert_allclose(sys.A @ x + sys.B @ u, 0, atol=1e-9)
    # machines settle at synchronous speed with positive absolute angles
    for g in ieee33.generators:
        assert abs(x[sys.state_index(f"omega_{g}")]) < 1e-9
        assert 0 < x[sys.state_index(f"delta_{g}")] < np.pi / 2


@st.composite
def couplings(draw):
    ng = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**31 - 1))
    rnd = np.random.default_rng(seed)
    w = rnd.uniform(0.5, 5.0, (ng + 1, ng + 1))
    w = np.triu(w, 1)
    w = w + w.T
    k = np.diag(w.sum(axis=1) + rnd.uniform(0.1, 1.0, ng + 1)) - w
    m = rnd.uniform(0.05, 2.0, ng)
    return k, m


@settings(max_examples=40, deadline=None)
@given(case=couplings())
def test_machine_stiffness_is_schur_complement_onto_machines(case, params):
    from shsgrid.grid.kron import CouplingMatrix

    k, m = case
    ng = len(m)
    coupling = CouplingMatrix(k, tuple(range(ng + 1)), np.eye(ng + 1), tuple(range(ng + 1)))
    sg = [build_swing_block(SwingParams(M=mi, D=0.1), f"G{i}") for i, mi in enumerate(m)]
    gfl = build_gfl_block(params.gfl, params.op)
    sys = assemble_system(sg, gfl, coupling, {})
    delta = [sys.state_index(f"delta_G{i}") for i in range(ng)]
    omega = [sys.state_index(f"omega_G{i}") for i in range(ng)]
    stiff, _ = schur(k, ng)
    np.testing.assert_allclose(sys.A[np.ix_(omega, delta)], -stiff / m[:, None], rtol=1e-10, atol=1e-12)


def test_assembly_rejects_wrong_coupling_size(chain3, params):
    red = kron_reduce(chain3)
    sg = [build_swing_block(SwingParams(M=1, D=1), g) for g in ("A", "B")]
    with pytest.raises(AssemblyError):
        assemble_system(sg, build_gfl_block(params.gfl, params.op), red, {})


def test_assembly_rejects_unknown_sensor(chain3, params):
    red = kron_reduce(chain3)
    sg = [build_swing_block(SwingParams(M=1, D=1), "G1")]
    with pytest.raises(AssemblyError):
        assemble_system(sg, build_gfl_block(params.gfl, params.op), red, {"PMU": "delta_G9"})


def test_served_load_totals_feeder_load(ieee33, params):
    total = sum(b.p_mw for b in ieee33.buses) / ieee33.base_mva
    # without the upstream tie the machines and the PCC pick up every withdrawal
    islanded = dataclasses.replace(ieee33, slack_tie_x=0.0)
    np.testing.assert_allclose(served_load(islanded, network_coupling(islanded, params)).sum(), total, rtol=1e-12)
    # with it, part of the load is carried by the upstream grid
    tied = served_load(ieee33, network_coupling(ieee33, params)).sum()
    assert 0 < tied < total
