"""Contingency modes derived from the base model, and the labeled window generator."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..grid.assemble import build_system, equilibrium, operating_input
from ..grid.blocks import GFL_STATES
from ..grid.network import BusNetwork, IslandingError
from ..grid.params import ModelParams
from ..shs.dynamics import (DetectionSchedule, NoiseSpec, RationalInput, initial_state,
                            realize_input, simulate)
from ..shs.modes import Mode, ModeClass, ModeLibrary
from .dataset import Dataset

SENSOR_SCALES = tuple(round(0.50 + 0.05 * i, 2) for i in range(21) if i != 10)

DEFAULT_FEATURES = (
    "delta_G1", "delta_G2", "delta_G4",
    "omega_G1", "omega_G2", "omega_G4",
    *GFL_STATES[:16],
)


class InadmissibleContingency(ValueError):
    pass


@dataclass(frozen=True)
class ContingencySpec:
    """Normal operation, a single line outage, or a constant gain on one sensor."""

    kind: ModeClass
    line_id: int | None = None
    sensor_index: int | None = None
    scale: float | None = None

    @classmethod
    def normal(cls):
        return cls(ModeClass.NORMAL)

    @classmethod
    def physical(cls, line_id: int):
        return cls(ModeClass.PHYSICAL, line_id=line_id)

    @classmethod
    def measurement(cls, sensor_index: int, scale: float):
        if scale not in SENSOR_SCALES:
            raise InadmissibleContingency(f"sensor scale {scale} is not in the admissible set")
        return cls(ModeClass.MEASUREMENT, sensor_index=sensor_index, scale=scale)

    def describe(self) -> str:
        if self.kind == ModeClass.PHYSICAL:
            return f"line {self.line_id} out"
        if self.kind == ModeClass.MEASUREMENT:
            return f"sensor {self.sensor_index} x{self.scale:.2f}"
        return "normal"


def admissible_lines(network: BusNetwork) -> list[int]:
    """In-service lines whose outage leaves every dynamic bus tied to the slack."""
    dyn = set(network.dynamic_bus_ids)
    out = []
    for ln in network.lines:
        if ln.in_service and dyn <= network.without_line(ln.id).reachable_from_slack():
            out.append(ln.id)
    return out


def apply_physical(base: Mode, network: BusNetwork, line_id: int, params: ModelParams, mode_id: int = 0) -> Mode:
    """Mode after the outage of ``line_id``; C is taken from ``base`` unchanged."""
    ln = network.line(line_id)
    if not ln.in_service:
        raise InadmissibleContingency(f"line {line_id} is already out of service")
    outage = network.without_line(line_id)
    dyn = set(network.dynamic_bus_ids)
    if not dyn <= outage.reachable_from_slack():
        raise IslandingError(f"outage of line {line_id} islands a dynamic bus")
    rebuilt = build_system(outage, params)
    model = rebuilt.replace(C=base.model.C, output_names=base.model.output_names)
    return Mode(mode_id, ModeClass.PHYSICAL, model, f"line {ln.from_bus}-{ln.to_bus} out")


def apply_measurement(base: Mode, sensor_index: int, scale: float, mode_id: int = 0) -> Mode:
    """Mode whose sensor row ``sensor_index`` reads ``scale`` times the truth."""
    p = base.model.p
    if not 0 <= sensor_index < p:
        raise IndexError(f"sensor index {sensor_index} out of range for {p} sensors")
    if scale == 1.0:
        raise InadmissibleContingency("a unit sensor gain is normal operation")
    if not (np.isfinite(scale) and scale > 0):
        raise InadmissibleContingency(f"bad sensor scale {scale}")
    c = np.array(base.model.C)
    c[sensor_index] = c[sensor_index] * scale
    model = base.model.replace(C=c)
    name = base.model.output_names[sensor_index]
    return Mode(mode_id, ModeClass.MEASUREMENT, model, f"sensor {name} x{scale:.2f}")


@dataclass(frozen=True)
class InputSpec:
    """Shared excitation: ``momi`` uses num/den as a rational transform,
    ``step`` holds ``amplitude``.  Either way it drives ``channel``."""

    kind: str = "momi"
    channel: str = "P_ref"
    num: tuple[float, ...] = (1.0,)
    den: tuple[float, ...] = (1.0, 5.0)
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("momi", "step", "none"):
            raise ValueError(f"unknown input kind {self.kind!r}")

    def rational(self) -> RationalInput | None:
        if self.kind != "momi":
            return None
        return RationalInput(tuple(self.amplitude * c for c in self.num), self.den, self.channel)

    def realize(self, model, schedule: DetectionSchedule, operating=None) -> np.ndarray:
        """Input sequence; ``operating`` is a constant vector added on every channel."""
        const = {self.channel: self.amplitude} if self.kind == "step" else {}
        u = realize_input(model, schedule, self.rational(), const)
        if operating is not None:
            u += np.asarray(operating, dtype=float)
        return u


@dataclass(frozen=True)
class GenConfig:
    counts: tuple[int, int, int] = (200, 200, 200)
    schedule: DetectionSchedule = field(default_factory=DetectionSchedule)
    base_seed: int = 2024
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    input: InputSpec = field(default_factory=InputSpec)
    features: tuple[str, ...] = DEFAULT_FEATURES
    random_x0: bool = True
    # start windows at the loaded operating point; False means x0 = 0, u = excitation only
    operating_point: bool = True

    def __post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 0 or sum(self.counts) == 0:
            raise ValueError("counts must be three nonnegative integers with a positive sum")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = list(self.counts)
        return d


class ScenarioLibrary:
    """Every admissible contingency of a base model, as a ModeLibrary.

    Mode 0 is Normal; Physical modes follow in line order, then Measurement
    modes by sensor and scale.
    """

    def __init__(self, network: BusNetwork, params: ModelParams):
        self.network = network
        self.params = params
        base_model = build_system(network, params)
        base = Mode(0, ModeClass.NORMAL, base_model, "normal")
        modes = [base]
        self.specs: dict[int, ContingencySpec] = {0: ContingencySpec.normal()}
        for line_id in admissible_lines(network):
            mid = len(modes)
            modes.append(apply_physical(base, network, line_id, params, mid))
            self.specs[mid] = ContingencySpec.physical(line_id)
        for sensor in range(base_model.p):
            for scale in SENSOR_SCALES:
                mid = len(modes)
                modes.append(apply_measurement(base, sensor, scale, mid))
                self.specs[mid] = ContingencySpec.measurement(sensor, scale)
        self.library = ModeLibrary(modes, 0)
        self._by_spec = {spec: mid for mid, spec in self.specs.items()}
        # every window starts from the pre-contingency operating point
        self.u_op = operating_input(base_model, params)
        self.x_op = equilibrium(base_model, self.u_op)

    def start(self, config: "GenConfig"):
        """Initial state and constant input shared by every window of ``config``."""
        if config.operating_point:
            return self.x_op, self.u_op
        return None, None

    @property
    def base(self) -> Mode:
        return self.library.base

    def mode_for(self, spec: ContingencySpec) -> Mode:
        try:
            return self.library[self._by_spec[spec]]
        except KeyError:
            raise InadmissibleContingency(f"no admissible mode for {spec}") from None

    def ids_of(self, kind: ModeClass) -> list[int]:
        return [mid for mid, s in self.specs.items() if s.kind == kind]

    def sample_spec(self, kind: ModeClass, rng: np.random.Generator) -> ContingencySpec:
        ids = self.ids_of(kind)
        if not ids:
            raise InadmissibleContingency(f"no admissible {kind.label} contingencies")
        return self.specs[ids[int(rng.integers(len(ids)))]]


def feature_matrix(mode: Mode, traj, features) -> np.ndarray:
    """Window features: sensed channels carry measured values, the rest carry states."""
    model = mode.model
    cols = []
    for name in features:
        sensed = None
        for row in range(model.p):
            nz = np.flatnonzero(model.C[row])
            if nz.size == 1 and model.state_names[nz[0]] == name:
                sensed = row
                break
        cols.append(traj.outputs[:, sensed] if sensed is not None else traj.states[:, model.state_index(name)])
    return np.column_stack(cols)


def scenario_seed(base_seed: int, index: int) -> tuple[int, int]:
    return (int(base_seed), int(index))


def simulate_window(mode: Mode, config: GenConfig, seed, x_op=None, u_op=None):
    """Trajectory of ``mode`` started at ``x_op`` plus the random initial
    perturbation, driven by ``u_op`` plus the shared excitation."""
    model = mode.model
    x0 = np.zeros(model.n) if x_op is None else np.array(x_op, dtype=float)
    if config.random_x0:
        x0 = x0 + initial_state(model.n, config.noise, seed)
    u = config.input.realize(model, config.schedule, u_op)
    return simulate(mode, x0, u, config.schedule, config.noise, seed)


def run_window(mode: Mode, config: GenConfig, seed, x_op=None, u_op=None) -> np.ndarray:
    """Feature window (S, M) for one scenario; see ``simulate_window``."""
    traj = simulate_window(mode, config, seed, x_op, u_op)
    return feature_matrix(mode, traj, config.features)


def class_plan(config: GenConfig) -> np.ndarray:
    plan = np.concatenate([np.full(c, k, dtype=np.uint8) for k, c in enumerate(config.counts)])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.base_seed, 0x504C414E])))
    return plan[rng.permutation(plan.size)]


def fingerprint(config: GenConfig, scen: ScenarioLibrary) -> bytes:
    """Digest of everything that shapes a window: network, base model and
    generation settings.  Class counts only change how many windows are drawn,
    so they are left out."""
    h = hashlib.sha256()
    settings = config.to_dict()
    del settings["counts"]
    h.update(json.dumps(settings, sort_keys=True, default=str).encode())
    net = scen.network
    h.update(json.dumps([net.slack, net.base_kv, net.base_mva, net.slack_tie_x,
                         [asdict(b) for b in net.buses], [asdict(ln) for ln in net.lines],
                         net.generators, net.pvbess_bus, net.sensors], sort_keys=True).encode())
    base = scen.base.model
    for arr in (base.A, base.B, base.C):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.digest()


def generate_dataset(scen: ScenarioLibrary, config: GenConfig, threads: int = 1) -> Dataset:
    """Labeled windows per the class plan; output order is scenario order
    whatever the thread count."""
    plan = class_plan(config)

    def one(i):
        seed = scenario_seed(config.base_seed, i)
        pick = np.random.Generator(np.random.Philox(np.random.SeedSequence([*seed, 0x53504543])))
        spec = scen.sample_spec(ModeClass(int(plan[i])), pick)
        mode = scen.mode_for(spec)
        return run_window(mode, config, seed, *scen.start(config)), mode.id

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(plan.size)))
    else:
        results = [one(i) for i in range(plan.size)]
    windows = np.stack([r[0] for r in results])
    mode_ids = np.array([r[1] for r in results])
    return Dataset(
        windows=windows,
        labels=plan.copy(),
        n_classes=3,
        fingerprint=fingerprint(config, scen),
        mode_ids=mode_ids,
        seeds=[scenario_seed(config.base_seed, i) for i in range(plan.size)],
    )
