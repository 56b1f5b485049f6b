"""Machine and inverter constants, and the parameter-file reader.

The parameter file is INI-style with one ``[swing.<gen-id>]`` section per
generator, a ``[gfl]`` section and an ``[operating_point]`` section.  Circuit
elements are given in SI units and converted to per unit (seconds-scaled
inductances and capacitances) on the inverter's own base.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from pathlib import Path


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class SwingParams:
    """Classical machine model on the system base.

    ``M`` is in s^2/rad, ``P_in`` the scheduled mechanical power, ``P_L`` a
    load fed directly at the machine's internal node and ``x_d`` the transient
    reactance separating the rotor EMF from the terminal bus (0 puts the
    rotor angle on the bus itself).
    """

    M: float
    D: float
    P_in: float = 0.0
    P_L: float = 0.0
    x_d: float = 0.0

    def __post_init__(self):
        if not self.M > 0:
            raise ParameterError(f"inertia must be positive, got {self.M}")
        if self.D < 0:
            raise ParameterError(f"damping must be nonnegative, got {self.D}")
        if self.x_d < 0:
            raise ParameterError(f"transient reactance must be nonnegative, got {self.x_d}")


@dataclass(frozen=True)
class GflParams:
    # LCL filter (H, F, ohm) on the ac side
    L_f: float = 1.0e-3
    R_f: float = 0.008
    C_f: float = 50e-6
    L_g: float = 0.5e-3
    R_g: float = 0.008
    # synchronous reference frame PLL
    kp_pll: float = 50.0
    ki_pll: float = 800.0
    tau_pll: float = 2e-3
    # outer power loops (pu current per pu power); a proportional path
    # through the unfiltered PCC power destabilizes the LCL resonance
    kp_p: float = 0.0
    ki_p: float = 60.0
    kp_q: float = 0.0
    ki_q: float = 60.0
    # inner current loop (pu voltage per pu current)
    kp_c: float = 1.25
    ki_c: float = 10.0
    # dc link, PV string and battery equivalent circuit
    C_dc: float = 5e-3
    R_0: float = 0.05
    C_b: float = 500.0
    R_sd: float = 1000.0
    C_s: float = 20.0
    R_s: float = 0.02
    g_pv: float = 0.5
    tau_pv: float = 5e-3
    # ratings and bases
    S_rated: float = 0.2
    V_ac: float = 0.4
    V_dc: float = 0.8
    f_nom: float = 50.0

    _gains = {"kp_pll", "ki_pll", "kp_p", "ki_p", "kp_q", "ki_q", "kp_c", "ki_c"}

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ParameterError(f"{f.name} is not finite")
            if f.name in self._gains:
                if v < 0:
                    raise ParameterError(f"gain {f.name} must be >= 0, got {v}")
            elif not v > 0:
                raise ParameterError(f"{f.name} must be positive, got {v}")

    @property
    def z_ac(self) -> float:
        return self.V_ac**2 / self.S_rated

    @property
    def z_dc(self) -> float:
        return self.V_dc**2 / self.S_rated

    @property
    def omega_nom(self) -> float:
        return 2 * math.pi * self.f_nom


@dataclass(frozen=True)
class OperatingPoint:
    v_pcc: float = 1.0
    angle: float = 0.0
    p_set: float = 0.5
    q_set: float = 0.5
    v_dc: float = 1.0

    def __post_init__(self):
        if not self.v_pcc > 0 or not self.v_dc > 0:
            raise ParameterError("operating voltages must be positive")


@dataclass(frozen=True)
class ModelParams:
    swing: dict[str, SwingParams]
    gfl: GflParams
    op: OperatingPoint


def _section(cp: configparser.ConfigParser, name: str, cls):
    known = {f.name.lower(): f.name for f in fields(cls)}
    kwargs = {}
    for key, val in cp.items(name):
        if key not in known:
            raise ParameterError(f"[{name}]: unknown key {key!r}")
        try:
            kwargs[known[key]] = float(val)
        except ValueError:
            raise ParameterError(f"[{name}]: {key} is not a number: {val!r}") from None
    return cls(**kwargs)


def parse_params(text: str) -> ModelParams:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(str(exc)) from None
    swing = {}
    for sec in cp.sections():
        if sec.startswith("swing."):
            swing[sec.split(".", 1)[1]] = _section(cp, sec, SwingParams)
        elif sec not in ("gfl", "operating_point"):
            raise ParameterError(f"unknown section [{sec}]")
    gfl = _section(cp, "gfl", GflParams) if cp.has_section("gfl") else GflParams()
    op = _section(cp, "operating_point", OperatingPoint) if cp.has_section("operating_point") else OperatingPoint()
    return ModelParams(swing, gfl, op)


def load_params(path) -> ModelParams:
    return parse_params(Path(path).read_text())
