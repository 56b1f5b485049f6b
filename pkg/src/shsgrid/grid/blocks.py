"""Linear blocks for synchronous machines and the grid-following PV-BESS."""
from __future__ import annotations

import numpy as np

from ..statespace import StateSpaceModel
from .params import GflParams, OperatingPoint, ParameterError, SwingParams

GFL_STATES = (
    "omega_pll", "theta_pll", "xi_pll",
    "xi_P", "xi_Q",
    "xi_cd", "xi_cq",
    "I_td", "I_tq", "V_pcc_d", "V_pcc_q", "I_gd", "I_gq",
    "V_dc", "i_pv", "V_Cb", "V_Cs",
)
GFL_INPUTS = ("P_ref", "Q_ref", "v_gd", "v_gq")


class UnstableBlockError(ValueError):
    pass


def build_swing_block(params: SwingParams, gen_id: str = "G") -> StateSpaceModel:
    """Two-state swing block over [delta, omega] with input P_in.

    Network coupling is not included here; ``assemble_system`` adds it.
    """
    if not params.M > 0:
        raise ParameterError("inertia must be positive")
    a = np.array([[0.0, 1.0], [0.0, -params.D / params.M]])
    b = np.array([[0.0], [1.0 / params.M]])
    names = (f"delta_{gen_id}", f"omega_{gen_id}")
    return StateSpaceModel(a, b, np.eye(2), names, (f"P_in_{gen_id}",), names)


class _Rows:
    """Accumulates linear expressions over the GFL states and inputs."""

    def __init__(self):
        self.nx, self.nu = len(GFL_STATES), len(GFL_INPUTS)

    def x(self, name, coef=1.0):
        v = np.zeros(self.nx + self.nu)
        v[GFL_STATES.index(name)] = coef
        return v

    def u(self, name, coef=1.0):
        v = np.zeros(self.nx + self.nu)
        v[self.nx + GFL_INPUTS.index(name)] = coef
        return v


def build_gfl_block(params: GflParams, op: OperatingPoint, check_stable: bool = True) -> StateSpaceModel:
    """Small-signal model of the GFL-controlled PV-BESS around ``op``.

    The ac-side states live in the network dq frame; the PLL, power and
    current loops act in the PLL frame, which differs from the network frame
    by ``theta_pll`` to first order.  The inverter voltage includes grid
    voltage feedforward and dq decoupling, so the filter current sees only the
    PI output.  Grid voltage (v_gd, v_gq) is an input.
    """
    p = params
    r = _Rows()
    x, u = r.x, r.u
    w0 = p.omega_nom
    # per-unit circuit constants (time-scaled)
    lf, rf = p.L_f / p.z_ac, p.R_f / p.z_ac
    cf = p.C_f * p.z_ac
    lg, rg = p.L_g / p.z_ac, p.R_g / p.z_ac
    cdc, r0 = p.C_dc * p.z_dc, p.R_0 / p.z_dc
    cb, rsd = p.C_b * p.z_dc, p.R_sd / p.z_dc
    cs, rs = p.C_s * p.z_dc, p.R_s / p.z_dc

    v0 = op.v_pcc
    id0 = op.p_set / v0
    iq0 = -op.q_set / v0

    vq_pll = x("V_pcc_q") - x("theta_pll", v0)
    p_meas = x("I_gd", v0) + x("V_pcc_d", id0) + x("V_pcc_q", iq0)
    q_meas = x("V_pcc_q", id0) - x("I_gq", v0) - x("V_pcc_d", iq0)
    e_p = u("P_ref") - p_meas
    e_q = u("Q_ref") - q_meas
    iref_d = p.kp_p * e_p + x("xi_P", p.ki_p)
    iref_q = -(p.kp_q * e_q + x("xi_Q", p.ki_q))
    e_d = iref_d - x("I_td") - x("theta_pll", iq0)
    e_q_c = iref_q - x("I_tq") + x("theta_pll", id0)
    vc_d = p.kp_c * e_d + x("xi_cd", p.ki_c)
    vc_q = p.kp_c * e_q_c + x("xi_cq", p.ki_c)
    i_bat = (x("V_Cb") - x("V_Cs") - x("V_dc")) / r0
    p_ac = x("I_td", v0) + x("V_pcc_d", id0) + x("V_pcc_q", iq0)

    rows = {
        "omega_pll": (-x("omega_pll") + p.kp_pll * vq_pll + x("xi_pll", p.ki_pll)) / p.tau_pll,
        "theta_pll": x("omega_pll"),
        "xi_pll": vq_pll,
        "xi_P": e_p,
        "xi_Q": e_q,
        "xi_cd": e_d,
        "xi_cq": e_q_c,
        "I_td": (vc_d - x("I_td", rf)) / lf,
        "I_tq": (vc_q - x("I_tq", rf)) / lf,
        "V_pcc_d": (x("I_td") - x("I_gd") + x("V_pcc_q", w0 * cf)) / cf,
        "V_pcc_q": (x("I_tq") - x("I_gq") - x("V_pcc_d", w0 * cf)) / cf,
        "I_gd": (x("V_pcc_d") - u("v_gd") - x("I_gd", rg) + x("I_gq", w0 * lg)) / lg,
        "I_gq": (x("V_pcc_q") - u("v_gq") - x("I_gq", rg) - x("I_gd", w0 * lg)) / lg,
        "V_dc": (x("i_pv") + i_bat - p_ac / op.v_dc) / cdc,
        "i_pv": (-x("i_pv") - x("V_dc", p.g_pv)) / p.tau_pv,
        "V_Cb": (-i_bat - x("V_Cb") / rsd) / cb,
        "V_Cs": (i_bat - x("V_Cs") / rs) / cs,
    }
    m = np.vstack([rows[s] for s in GFL_STATES])
    a, b = m[:, : r.nx], m[:, r.nx:]
    model = StateSpaceModel(a, b, np.eye(r.nx), GFL_STATES, GFL_INPUTS, GFL_STATES)
    if check_stable and not model.is_hurwitz():
        raise UnstableBlockError(
            f"GFL block is not Hurwitz (spectral abscissa {model.spectral_abscissa():.4g})"
        )
    return model
