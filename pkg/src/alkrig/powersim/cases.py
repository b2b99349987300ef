"""Grid case description: buses, lines, classical machines, uncertain injections.

A :class:`GridCase` is a plain JSON-serializable record of a multi-machine
network.  Machines follow the classical model (constant EMF behind the
transient reactance); loads are constant power at the power-flow stage and
constant impedance during transients.  The ``injections`` list routes the
dimensions of an uncertainty specification into the case: load scaling
factors, wind speed through a turbine power curve, or solar power in MW.
Two built-in cases ship with the package: :func:`smib` (single machine vs.
infinite bus, two parallel lines) and :func:`nine_bus` (the classical
3-machine/9-bus network).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from ..sampling import ConfigurationError, WindTurbineCurve

__all__ = [
    "Bus",
    "Line",
    "Machine",
    "Load",
    "Injection",
    "GridCase",
    "Contingency",
    "smib",
    "nine_bus",
    "builtin_case",
    "load_case",
    "dump_case",
]


@dataclass(frozen=True)
class Bus:
    id: str
    type: str = "pq"  # slack | pv | pq
    v_set: float = 1.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class Machine:
    bus: str
    h: float          # inertia constant, s
    xd_p: float       # transient reactance, p.u.
    d: float = 0.0    # damping, p.u. torque per p.u. speed deviation
    p_gen: float = 0.0  # scheduled active power (PV buses), p.u.


@dataclass(frozen=True)
class Load:
    bus: str
    p: float
    q: float


@dataclass(frozen=True)
class Injection:
    """Routes uncertainty dimension ``dim`` into the case.

    kind = "load_scale": multiplies P and Q of the load at ``bus``.
    kind = "wind":       wind speed (m/s) mapped through ``curve`` to MW.
    kind = "solar":      active power in MW injected at ``bus``.
    """

    dim: int
    kind: str
    bus: str
    curve: WindTurbineCurve | None = None


@dataclass(frozen=True)
class Contingency:
    """Three-phase fault at a bus, cleared by tripping an adjacent line."""

    fault_bus: str
    tripped_line: str
    t_fct: float                # fault clearing time, s
    t_fault_on: float = 1.0     # fault application instant, s
    sim_duration: float = 12.0  # total horizon from t = 0, s

    def validate(self, case: "GridCase", t_fct: float | None = None) -> None:
        t = self.t_fct if t_fct is None else t_fct
        if not t >= 0.0:
            raise ConfigurationError(f"fault clearing time must be >= 0, got {t}")
        if self.sim_duration <= self.t_fault_on + t:
            raise ConfigurationError(
                f"sim_duration {self.sim_duration} must exceed "
                f"t_fault_on + t_fct = {self.t_fault_on + t}"
            )
        line = case.line(self.tripped_line)
        if self.fault_bus not in (line.from_bus, line.to_bus):
            raise ConfigurationError(
                f"tripped line {self.tripped_line!r} is not adjacent to "
                f"fault bus {self.fault_bus!r}"
            )

    def to_dict(self) -> dict:
        return {
            "fault_bus": self.fault_bus,
            "tripped_line": self.tripped_line,
            "t_fct": self.t_fct,
            "t_fault_on": self.t_fault_on,
            "sim_duration": self.sim_duration,
        }

    @staticmethod
    def from_dict(d: dict) -> "Contingency":
        return Contingency(
            fault_bus=str(d["fault_bus"]),
            tripped_line=str(d["tripped_line"]),
            t_fct=float(d["t_fct"]),
            t_fault_on=float(d.get("t_fault_on", 1.0)),
            sim_duration=float(d.get("sim_duration", 12.0)),
        )


@dataclass(frozen=True)
class GridCase:
    name: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    machines: tuple[Machine, ...]
    loads: tuple[Load, ...] = ()
    injections: tuple[Injection, ...] = ()
    base_mva: float = 100.0
    frequency_hz: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "machines", tuple(self.machines))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "injections", tuple(self.injections))
        self.validate()

    # -- lookups ---------------------------------------------------------
    @property
    def bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise ConfigurationError(f"no line named {line_id!r} in case {self.name!r}")

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.frequency_hz

    def cycles_to_seconds(self, cycles: float) -> float:
        return cycles / self.frequency_hz

    # -- validation ------------------------------------------------------
    def validate(self, n_dims: int | None = None) -> None:
        idx = {b.id: i for i, b in enumerate(self.buses)}
        if len(idx) != len(self.buses):
            raise ConfigurationError("duplicate bus ids")
        if len({ln.id for ln in self.lines}) != len(self.lines):
            raise ConfigurationError("duplicate line ids")
        slacks = [b for b in self.buses if b.type == "slack"]
        if len(slacks) != 1:
            raise ConfigurationError(f"need exactly one slack bus, got {len(slacks)}")
        for ln in self.lines:
            if ln.from_bus not in idx or ln.to_bus not in idx:
                raise ConfigurationError(f"line {ln.id!r} references unknown bus")
            if ln.r == 0.0 and ln.x == 0.0:
                raise ConfigurationError(f"line {ln.id!r} has zero impedance")
        gen_buses = {b.id for b in self.buses if b.type in ("slack", "pv")}
        machine_buses = [m.bus for m in self.machines]
        if len(set(machine_buses)) != len(machine_buses):
            raise ConfigurationError("more than one machine on a bus")
        if set(machine_buses) != gen_buses:
            raise ConfigurationError(
                f"machines must sit on exactly the slack/PV buses "
                f"(machines at {sorted(machine_buses)}, generator buses {sorted(gen_buses)})"
            )
        for m in self.machines:
            if not (m.h > 0.0 and m.xd_p > 0.0):
                raise ConfigurationError(f"machine at {m.bus!r} needs H > 0 and x'd > 0")
        load_buses = [l.bus for l in self.loads]
        if len(set(load_buses)) != len(load_buses):
            raise ConfigurationError("more than one load on a bus")
        for l in self.loads:
            if l.bus not in idx:
                raise ConfigurationError(f"load references unknown bus {l.bus!r}")
        for inj in self.injections:
            if inj.bus not in idx:
                raise ConfigurationError(f"injection references unknown bus {inj.bus!r}")
            if inj.kind == "load_scale" and inj.bus not in load_buses:
                raise ConfigurationError(f"load_scale injection at {inj.bus!r} has no load")
            if inj.kind == "wind" and inj.curve is None:
                raise ConfigurationError(f"wind injection at {inj.bus!r} needs a turbine curve")
            if inj.kind not in ("load_scale", "wind", "solar"):
                raise ConfigurationError(f"unknown injection kind {inj.kind!r}")
            if n_dims is not None and not (0 <= inj.dim < n_dims):
                raise ConfigurationError(
                    f"injection dimension {inj.dim} outside [0, {n_dims})"
                )
        if n_dims is not None:
            dims = [inj.dim for inj in self.injections]
            if len(set(dims)) != len(dims):
                raise ConfigurationError("two injections share an input dimension")
        self._check_connected(idx)

    def _check_connected(self, idx: dict) -> None:
        n = len(self.buses)
        adj: list[set] = [set() for _ in range(n)]
        for ln in self.lines:
            if ln.status:
                i, j = idx[ln.from_bus], idx[ln.to_bus]
                adj[i].add(j)
                adj[j].add(i)
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(seen) != n:
            raise ConfigurationError("network is not connected")

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": "alkrig-grid-1",
            "name": self.name,
            "base_mva": self.base_mva,
            "frequency_hz": self.frequency_hz,
            "buses": [{"id": b.id, "type": b.type, "v_set": b.v_set} for b in self.buses],
            "lines": [
                {
                    "id": ln.id,
                    "from": ln.from_bus,
                    "to": ln.to_bus,
                    "r": ln.r,
                    "x": ln.x,
                    "b": ln.b,
                    "status": ln.status,
                }
                for ln in self.lines
            ],
            "machines": [
                {"bus": m.bus, "h": m.h, "xd_p": m.xd_p, "d": m.d, "p_gen": m.p_gen}
                for m in self.machines
            ],
            "loads": [{"bus": l.bus, "p": l.p, "q": l.q} for l in self.loads],
            "injections": [
                {
                    "dim": inj.dim,
                    "kind": inj.kind,
                    "bus": inj.bus,
                    **({"curve": inj.curve.to_dict()} if inj.curve is not None else {}),
                }
                for inj in self.injections
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GridCase":
        return GridCase(
            name=str(d.get("name", "unnamed")),
            base_mva=float(d.get("base_mva", 100.0)),
            frequency_hz=float(d.get("frequency_hz", 60.0)),
            buses=tuple(
                Bus(id=str(b["id"]), type=str(b.get("type", "pq")), v_set=float(b.get("v_set", 1.0)))
                for b in d["buses"]
            ),
            lines=tuple(
                Line(
                    id=str(ln["id"]),
                    from_bus=str(ln["from"]),
                    to_bus=str(ln["to"]),
                    r=float(ln["r"]),
                    x=float(ln["x"]),
                    b=float(ln.get("b", 0.0)),
                    status=bool(ln.get("status", True)),
                )
                for ln in d["lines"]
            ),
            machines=tuple(
                Machine(
                    bus=str(m["bus"]),
                    h=float(m["h"]),
                    xd_p=float(m["xd_p"]),
                    d=float(m.get("d", 0.0)),
                    p_gen=float(m.get("p_gen", 0.0)),
                )
                for m in d["machines"]
            ),
            loads=tuple(
                Load(bus=str(l["bus"]), p=float(l["p"]), q=float(l["q"])) for l in d.get("loads", [])
            ),
            injections=tuple(
                Injection(
                    dim=int(inj["dim"]),
                    kind=str(inj["kind"]),
                    bus=str(inj["bus"]),
                    curve=WindTurbineCurve.from_dict(inj["curve"]) if "curve" in inj else None,
                )
                for inj in d.get("injections", [])
            ),
        )


def load_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return GridCase.from_dict(json.load(fh))


def dump_case(case: GridCase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(case.to_dict(), fh, indent=2)
        fh.write("\n")


def smib(p_transfer: float = 0.9) -> GridCase:
    """Single machine against a stiff bus over two parallel lines.

    The stiff side is modelled as a machine with very large inertia and a
    tiny transient reactance, which keeps the whole case inside the uniform
    classical-model machinery.  Lossless on purpose so the equal-area
    construction applies exactly.
    """
    return GridCase(
        name="smib",
        buses=(Bus("m1", "pv", 1.0), Bus("inf", "slack", 1.0)),
        lines=(
            Line("L1", "m1", "inf", r=0.0, x=0.4),
            Line("L2", "m1", "inf", r=0.0, x=0.4),
        ),
        machines=(
            Machine(bus="m1", h=3.0, xd_p=0.3, d=0.0, p_gen=p_transfer),
            Machine(bus="inf", h=1.0e6, xd_p=1.0e-3, d=0.0),
        ),
    )


_NINE_BUS_WIND = WindTurbineCurve(rated_power=60.0, cut_in=3.0, rated_speed=12.0, cut_out=25.0)


def nine_bus() -> GridCase:
    """Classical 3-machine / 9-bus network with uncertain loads and wind.

    Input dimensions expected by the built-in injection map:
      0, 1, 2 - scaling factors of the loads at buses 5, 6, 8;
      3       - wind speed (m/s) of a 60 MW farm at bus 5.
    """
    return GridCase(
        name="nine-bus",
        buses=(
            Bus("1", "slack", 1.040),
            Bus("2", "pv", 1.025),
            Bus("3", "pv", 1.025),
            Bus("4"),
            Bus("5"),
            Bus("6"),
            Bus("7"),
            Bus("8"),
            Bus("9"),
        ),
        lines=(
            Line("1-4", "1", "4", r=0.0, x=0.0576),
            Line("2-7", "2", "7", r=0.0, x=0.0625),
            Line("3-9", "3", "9", r=0.0, x=0.0586),
            Line("4-5", "4", "5", r=0.010, x=0.085, b=0.176),
            Line("4-6", "4", "6", r=0.017, x=0.092, b=0.158),
            Line("5-7", "5", "7", r=0.032, x=0.161, b=0.306),
            Line("6-9", "6", "9", r=0.039, x=0.170, b=0.358),
            Line("7-8", "7", "8", r=0.0085, x=0.072, b=0.149),
            Line("8-9", "8", "9", r=0.0119, x=0.1008, b=0.209),
        ),
        machines=(
            Machine(bus="1", h=23.64, xd_p=0.0608, d=2.0),
            Machine(bus="2", h=6.40, xd_p=0.1198, d=2.0, p_gen=1.63),
            Machine(bus="3", h=3.01, xd_p=0.1813, d=2.0, p_gen=0.85),
        ),
        loads=(
            Load(bus="5", p=1.25, q=0.50),
            Load(bus="6", p=0.90, q=0.30),
            Load(bus="8", p=1.00, q=0.35),
        ),
        injections=(
            Injection(dim=0, kind="load_scale", bus="5"),
            Injection(dim=1, kind="load_scale", bus="6"),
            Injection(dim=2, kind="load_scale", bus="8"),
            Injection(dim=3, kind="wind", bus="5", curve=_NINE_BUS_WIND),
        ),
    )


_BUILTINS = {"smib": smib, "nine-bus": nine_bus}


def builtin_case(name: str) -> GridCase:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown built-in case {name!r}; available: {sorted(_BUILTINS)}"
        ) from None
