"""Distribution network description and its text format.

A network file is a sequence of ``[section]`` blocks.  ``[network]`` and
``[pvbess]`` hold ``key = value`` pairs; ``[buses]``, ``[lines]``,
``[generators]`` and ``[sensors]`` are whitespace-separated tables whose first
non-comment row is the header.  ``#`` starts a comment.

Columns
-------
[network]    name, base_kv, base_mva, slack, slack_tie_x (ohm, optional)
[buses]      id, type (dynamic|load), p_mw, q_mvar
[lines]      id, from, to, r_ohm, x_ohm, in_service (1|0)
[generators] id, bus
[pvbess]     bus
[sensors]    name, target   (target is a state name such as ``delta_G1``)
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path


class NetworkFormatError(ValueError):
    """The network document could not be parsed."""


class NetworkValidationError(ValueError):
    """The network parsed but violates a structural invariant."""


class IslandingError(NetworkValidationError):
    """A dynamic bus has no in-service path to the slack bus."""


@dataclass(frozen=True)
class Bus:
    id: int
    dynamic: bool
    p_mw: float = 0.0
    q_mvar: float = 0.0


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r_ohm: float
    x_ohm: float
    in_service: bool = True


@dataclass(frozen=True)
class BusNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack: int
    generators: dict[str, int]
    pvbess_bus: int
    sensors: dict[str, str] = field(default_factory=dict)
    base_kv: float = 1.0
    base_mva: float = 1.0
    slack_tie_x: float = 0.0
    name: str = ""

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / self.base_mva

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def line(self, line_id: int) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(line_id)

    @property
    def dynamic_bus_ids(self) -> list[int]:
        """Generator buses in declaration order, then the PV-BESS bus."""
        ids = list(self.generators.values())
        if self.pvbess_bus not in ids:
            ids.append(self.pvbess_bus)
        return ids

    def without_line(self, line_id: int) -> "BusNetwork":
        self.line(line_id)
        lines = tuple(replace(ln, in_service=False) if ln.id == line_id else ln for ln in self.lines)
        return replace(self, lines=lines)

    def reachable_from_slack(self) -> set[int]:
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            if ln.in_service:
                adj[ln.from_bus].append(ln.to_bus)
                adj[ln.to_bus].append(ln.from_bus)
        seen = {self.slack}
        todo = deque([self.slack])
        while todo:
            k = todo.popleft()
            for j in adj[k]:
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return seen

    def validate(self, require_connected: bool = True) -> None:
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise NetworkValidationError("duplicate bus ids")
        known = set(ids)
        if self.slack not in known:
            raise NetworkValidationError(f"slack bus {self.slack} does not exist")
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise NetworkValidationError("duplicate line ids")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise NetworkValidationError(f"line {ln.id} references unknown bus {end}")
            if ln.from_bus == ln.to_bus:
                raise NetworkValidationError(f"line {ln.id} is a self loop")
            if ln.r_ohm < 0:
                raise NetworkValidationError(f"line {ln.id} has negative resistance")
            if not ln.x_ohm > 0:
                raise NetworkValidationError(f"line {ln.id} has nonpositive reactance")
        if self.slack_tie_x < 0:
            raise NetworkValidationError("slack_tie_x must be >= 0")
        for name, bus_id in [*self.generators.items(), ("pvbess", self.pvbess_bus)]:
            if bus_id not in known:
                raise NetworkValidationError(f"{name} placed at unknown bus {bus_id}")
            if not self.bus(bus_id).dynamic:
                raise NetworkValidationError(f"{name} bus {bus_id} is not marked dynamic")
        if require_connected:
            missing = known - self.reachable_from_slack()
            if missing:
                raise NetworkValidationError(
                    f"network is disconnected: buses {sorted(missing)} have no path to slack"
                )


def _split_sections(text: str) -> dict[str, list[list[str]]]:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise NetworkFormatError(f"line {lineno}: unterminated section header")
            current = line[1:-1].strip().lower()
            if current in sections:
                raise NetworkFormatError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise NetworkFormatError(f"line {lineno}: content before first section")
        sections[current].append(line.split())
    return sections


def _keyvals(rows: list[list[str]], section: str) -> dict[str, str]:
    out = {}
    for row in rows:
        joined = " ".join(row)
        if "=" not in joined:
            raise NetworkFormatError(f"[{section}]: expected key = value, got {joined!r}")
        key, val = joined.split("=", 1)
        out[key.strip().lower()] = val.strip()
    return out


def _table(rows: list[list[str]], section: str, required: list[str]) -> list[dict[str, str]]:
    if not rows:
        return []
    header = [h.lower() for h in rows[0]]
    for col in required:
        if col not in header:
            raise NetworkFormatError(f"[{section}]: missing column {col!r}")
    out = []
    for row in rows[1:]:
        if len(row) != len(header):
            raise NetworkFormatError(f"[{section}]: row {row} has {len(row)} fields, expected {len(header)}")
        out.append(dict(zip(header, row)))
    return out


def _num(value: str, what: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise NetworkFormatError(f"bad {what}: {value!r}") from None


def parse_network(text: str) -> BusNetwork:
    """Parse a network document and validate it."""
    sec = _split_sections(text)
    for name in ("network", "buses", "lines", "generators", "pvbess"):
        if name not in sec:
            raise NetworkFormatError(f"missing section [{name}]")
    head = _keyvals(sec["network"], "network")
    if "slack" not in head:
        raise NetworkFormatError("[network]: missing key 'slack'")

    buses = []
    for r in _table(sec["buses"], "buses", ["id", "type"]):
        kind = r["type"].lower()
        if kind not in ("dynamic", "load"):
            raise NetworkFormatError(f"bus {r['id']}: type must be dynamic or load, got {kind!r}")
        buses.append(
            Bus(
                id=_num(r["id"], "bus id", int),
                dynamic=kind == "dynamic",
                p_mw=_num(r.get("p_mw", "0"), "p_mw"),
                q_mvar=_num(r.get("q_mvar", "0"), "q_mvar"),
            )
        )
    lines = []
    for r in _table(sec["lines"], "lines", ["id", "from", "to", "r_ohm", "x_ohm"]):
        flag = r.get("in_service", "1")
        if flag not in ("0", "1"):
            raise NetworkFormatError(f"line {r['id']}: in_service must be 0 or 1")
        lines.append(
            Line(
                id=_num(r["id"], "line id", int),
                from_bus=_num(r["from"], "from bus", int),
                to_bus=_num(r["to"], "to bus", int),
                r_ohm=_num(r["r_ohm"], "r_ohm"),
                x_ohm=_num(r["x_ohm"], "x_ohm"),
                in_service=flag == "1",
            )
        )
    generators = {}
    for r in _table(sec["generators"], "generators", ["id", "bus"]):
        if r["id"] in generators:
            raise NetworkFormatError(f"duplicate generator {r['id']}")
        generators[r["id"]] = _num(r["bus"], "generator bus", int)
    pv = _keyvals(sec["pvbess"], "pvbess")
    if "bus" not in pv:
        raise NetworkFormatError("[pvbess]: missing key 'bus'")
    sensors = {}
    for r in _table(sec.get("sensors", []), "sensors", ["name", "target"]):
        sensors[r["name"]] = r["target"]

    net = BusNetwork(
        buses=tuple(buses),
        lines=tuple(lines),
        slack=_num(head["slack"], "slack", int),
        generators=generators,
        pvbess_bus=_num(pv["bus"], "pvbess bus", int),
        sensors=sensors,
        base_kv=_num(head.get("base_kv", "1"), "base_kv"),
        base_mva=_num(head.get("base_mva", "1"), "base_mva"),
        slack_tie_x=_num(head.get("slack_tie_x", "0"), "slack_tie_x"),
        name=head.get("name", ""),
    )
    if net.base_kv <= 0 or net.base_mva <= 0:
        raise NetworkValidationError("base_kv and base_mva must be positive")
    net.validate()
    return net


def load_network(source) -> BusNetwork:
    """Load a network from a path or from the document text itself."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        return parse_network(Path(source).read_text())
    return parse_network(source)


def bundled(name: str) -> Path:
    """Path of a network or parameter file shipped with the package."""
    return Path(__file__).resolve().parent.parent / "resources" / name
