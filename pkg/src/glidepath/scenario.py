"""Problem-instance data model and its JSON document format.

A scenario bundles everything one optimization run needs: vehicle and
powertrain parameters, the fuel-rate curve, road layout with signal
timelines, the planning horizon, objective weights, and solver settings.
Instances are frozen dataclasses and safe to share across concurrent runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

GRAVITY = 9.80665  # m/s^2
SCHEMA_VERSION = 1

# Strict inequalities on crossing positions are enforced with this margin (m);
# numerical solvers cannot represent strict constraints directly.
EPS_POSITION = 0.01


class ScenarioError(ValueError):
    """Base class for scenario ingestion failures."""


class SchemaError(ScenarioError):
    """Malformed document: wrong type, missing field, unknown version."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(ScenarioError):
    """Well-formed document whose values violate model invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class VehicleParams:
    mass: float                           # kg
    rolling_resistance: float = 0.01
    air_density: float = 1.2              # kg/m^3
    drag_coeff: float = 0.3
    frontal_area: float = 2.2             # m^2
    grade: float = 0.0                    # rad
    wind_speed: float = 0.0               # m/s
    transmission_efficiency: float = 0.92
    # Driveline ratios are carried for completeness; the power-domain fuel
    # model never consults them.
    gear_ratio: float = 1.0
    final_drive_ratio: float = 4.0
    wheel_radius: float = 0.3             # m


@dataclass(frozen=True)
class BsfcLine:
    """Best-efficiency engine line: speed = intercept / (1 - slope * torque)."""

    slope: float               # 1/(N*m)
    intercept: float           # rad/s at zero torque
    max_torque: float | None = None  # N*m admissible ceiling; None = unlimited


@dataclass(frozen=True)
class FuelCurve:
    """Piecewise-linear static fuel rate vs engine power, plus transient term.

    Breakpoints map engine power (W) to fuel rate (g/s); the first breakpoint
    must sit at zero power with the idle rate. Negative power consumes at
    idle. Beyond the last breakpoint the final segment extrapolates linearly.
    """

    breakpoints: tuple[tuple[float, float], ...]
    idle_rate: float           # g/s, engine cannot stop-start
    transient_coeff: float = 0.0  # g per N*m of torque change


@dataclass(frozen=True)
class GreenWindow:
    start: float  # s, red-to-green instant
    end: float    # s, green-to-red instant


@dataclass(frozen=True)
class TurnSpec:
    radius: float          # m
    friction: float        # tire-road friction coefficient
    lateral_accel: float   # m/s^2 comfort bound
    accel_min: float       # m/s^2 longitudinal bound while turning
    accel_max: float


@dataclass(frozen=True)
class Intersection:
    position: float                         # m along the route
    windows: tuple[GreenWindow, ...]
    turn: TurnSpec | None = None


@dataclass(frozen=True)
class Weights:
    fuel: float = 1.0
    time: float = 0.0        # (m/s)^-1 scale; rewards mean speed
    comfort: float = 1.0
    jerk_ratio: float = 1.0  # weight of squared accel difference inside comfort


@dataclass(frozen=True)
class Horizon:
    duration: float        # s
    dt: float = 1.0
    initial_speed: float = 0.0
    speed_limit: float = 17.88
    accel_min: float = -3.0
    accel_max: float = 3.0
    jerk_min: float = -0.5  # m/s^3; converted to per-step accel differences
    jerk_max: float = 0.5

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class SolverConfig:
    trust_speed: float = 1.0        # m/s box half-width around previous iterate
    trust_accel: float = 0.5        # m/s^2
    stop_threshold: float = 0.05    # combined iterate-change norm
    max_iterations: int = 50
    reinit_step_threshold: int = 2  # crossing-time jump (in samples) that restarts
    soft_penalty_slope: float = 100.0


@dataclass(frozen=True)
class Scenario:
    vehicle: VehicleParams
    bsfc_line: BsfcLine
    fuel_curve: FuelCurve
    horizon: Horizon
    weights: Weights = field(default_factory=Weights)
    intersections: tuple[Intersection, ...] = ()
    solver: SolverConfig = field(default_factory=SolverConfig)


def validate_scenario(scenario: Scenario) -> list[str]:
    """Collect every invariant violation; empty list means valid."""
    bad: list[str] = []
    veh = scenario.vehicle
    if not veh.mass > 0:
        bad.append(f"vehicle.mass must be positive, got {veh.mass}")
    if not (0 < veh.transmission_efficiency <= 1):
        bad.append(
            f"vehicle.transmission_efficiency must lie in (0, 1], got {veh.transmission_efficiency}"
        )
    for name in ("rolling_resistance", "air_density", "drag_coeff", "frontal_area"):
        if getattr(veh, name) < 0:
            bad.append(f"vehicle.{name} must be non-negative")

    line = scenario.bsfc_line
    if not line.intercept > 0:
        bad.append(f"bsfc_line.intercept must be positive, got {line.intercept}")
    if line.max_torque is not None:
        if not line.max_torque > 0:
            bad.append("bsfc_line.max_torque must be positive")
        elif 1.0 - line.slope * line.max_torque <= 0:
            bad.append("bsfc_line: 1 - slope*torque must stay positive up to max_torque")

    curve = scenario.fuel_curve
    if not curve.idle_rate > 0:
        bad.append(f"fuel_curve.idle_rate must be positive, got {curve.idle_rate}")
    pts = curve.breakpoints
    if len(pts) < 1:
        bad.append("fuel_curve.breakpoints must not be empty")
    else:
        if abs(pts[0][0]) > 1e-12 or abs(pts[0][1] - curve.idle_rate) > 1e-12:
            bad.append("fuel_curve.breakpoints must start at (0, idle_rate)")
        for (p0, q0), (p1, q1) in zip(pts, pts[1:]):
            if p1 <= p0:
                bad.append("fuel_curve.breakpoints powers must be strictly increasing")
                break
            if q1 < q0:
                bad.append("fuel_curve rates must be non-decreasing with power")
                break

    hor = scenario.horizon
    if not hor.dt > 0:
        bad.append(f"horizon.dt must be positive, got {hor.dt}")
    elif abs(hor.duration / hor.dt - round(hor.duration / hor.dt)) > 1e-9:
        bad.append(f"horizon.duration {hor.duration} is not divisible by dt {hor.dt}")
    if not hor.duration > 0:
        bad.append("horizon.duration must be positive")
    if not (0 <= hor.initial_speed <= hor.speed_limit):
        bad.append(
            f"horizon.initial_speed {hor.initial_speed} outside [0, speed_limit={hor.speed_limit}]"
        )
    if not (hor.accel_min < 0 < hor.accel_max):
        bad.append("horizon accel limits must satisfy accel_min < 0 < accel_max")
    if not (hor.jerk_min <= 0 <= hor.jerk_max):
        bad.append("horizon jerk limits must bracket zero")

    wt = scenario.weights
    for name in ("fuel", "time", "comfort", "jerk_ratio"):
        if getattr(wt, name) < 0:
            bad.append(f"weights.{name} must be non-negative")

    cfg = scenario.solver
    for name in ("trust_speed", "trust_accel", "stop_threshold", "soft_penalty_slope"):
        if not getattr(cfg, name) > 0:
            bad.append(f"solver.{name} must be positive")
    if cfg.max_iterations < 1:
        bad.append("solver.max_iterations must be at least 1")
    if cfg.reinit_step_threshold < 1:
        bad.append("solver.reinit_step_threshold must be at least 1")

    last_pos = 0.0
    for i, inter in enumerate(scenario.intersections):
        tag = f"intersections[{i}]"
        if inter.position <= last_pos:
            bad.append(f"{tag}.position must exceed the previous position {last_pos}")
        last_pos = max(last_pos, inter.position)
        prev_end = None
        for j, win in enumerate(inter.windows):
            if not win.start < win.end:
                bad.append(f"{tag}.windows[{j}]: window order requires start < end")
            if prev_end is not None and win.start < prev_end:
                bad.append(f"{tag}.windows[{j}] overlaps the previous window")
            prev_end = win.end
        if not any(w.end > 0 and w.start < hor.duration for w in inter.windows):
            bad.append(f"{tag}: no reachable window intersects the horizon [0, {hor.duration}]")
        if inter.turn is not None:
            turn = inter.turn
            if not turn.radius > 0:
                bad.append(f"{tag}.turn.radius must be positive")
            if not (0 < turn.friction <= 1.5):
                bad.append(f"{tag}.turn.friction must lie in (0, 1.5]")
            if not turn.lateral_accel > 0:
                bad.append(f"{tag}.turn.lateral_accel must be positive")
            if turn.accel_min > turn.accel_max:
                bad.append(f"{tag}.turn accel bounds are reversed")
    return bad


# --- document parsing -------------------------------------------------------

def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return mapping[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _parse_vehicle(doc: dict) -> VehicleParams:
    path = "vehicle"
    out = {"mass": _number(_require(doc, "mass", path), f"{path}.mass")}
    for key in (
        "rolling_resistance", "air_density", "drag_coeff", "frontal_area",
        "grade", "wind_speed", "transmission_efficiency",
        "gear_ratio", "final_drive_ratio", "wheel_radius",
    ):
        if key in doc:
            out[key] = _number(doc[key], f"{path}.{key}")
    return VehicleParams(**out)


def _parse_bsfc(doc: dict) -> BsfcLine:
    slope = _number(_require(doc, "slope", "bsfc_line"), "bsfc_line.slope")
    intercept = _number(_require(doc, "intercept", "bsfc_line"), "bsfc_line.intercept")
    max_torque = None
    if doc.get("max_torque") is not None:
        max_torque = _number(doc["max_torque"], "bsfc_line.max_torque")
    return BsfcLine(slope=slope, intercept=intercept, max_torque=max_torque)


def _parse_fuel_curve(doc: dict) -> FuelCurve:
    raw = _require(doc, "breakpoints", "fuel_curve")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("fuel_curve.breakpoints", "expected a non-empty list")
    pts = []
    for i, pair in enumerate(raw):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SchemaError(f"fuel_curve.breakpoints[{i}]", "expected [power_w, rate_g_s]")
        pts.append((
            _number(pair[0], f"fuel_curve.breakpoints[{i}][0]"),
            _number(pair[1], f"fuel_curve.breakpoints[{i}][1]"),
        ))
    return FuelCurve(
        breakpoints=tuple(pts),
        idle_rate=_number(_require(doc, "idle_rate", "fuel_curve"), "fuel_curve.idle_rate"),
        transient_coeff=_number(doc.get("transient_coeff", 0.0), "fuel_curve.transient_coeff"),
    )


def _parse_intersection(doc: dict, idx: int) -> Intersection:
    path = f"intersections[{idx}]"
    raw_wins = _require(doc, "windows", path)
    if not isinstance(raw_wins, list):
        raise SchemaError(f"{path}.windows", "expected a list of [start, end] pairs")
    windows = []
    for j, pair in enumerate(raw_wins):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SchemaError(f"{path}.windows[{j}]", "expected [start, end]")
        windows.append(GreenWindow(
            start=_number(pair[0], f"{path}.windows[{j}][0]"),
            end=_number(pair[1], f"{path}.windows[{j}][1]"),
        ))
    turn = None
    if doc.get("turn") is not None:
        tdoc = doc["turn"]
        if not isinstance(tdoc, dict):
            raise SchemaError(f"{path}.turn", "expected an object")
        turn = TurnSpec(
            radius=_number(_require(tdoc, "radius", f"{path}.turn"), f"{path}.turn.radius"),
            friction=_number(_require(tdoc, "friction", f"{path}.turn"), f"{path}.turn.friction"),
            lateral_accel=_number(
                _require(tdoc, "lateral_accel", f"{path}.turn"), f"{path}.turn.lateral_accel"
            ),
            accel_min=_number(tdoc.get("accel_min", 0.0), f"{path}.turn.accel_min"),
            accel_max=_number(tdoc.get("accel_max", 0.0), f"{path}.turn.accel_max"),
        )
    return Intersection(
        position=_number(_require(doc, "position", path), f"{path}.position"),
        windows=tuple(windows),
        turn=turn,
    )


def _dataclass_from(doc: dict, cls, path: str, required: tuple[str, ...] = ()):
    out = {}
    for key in required:
        out[key] = _number(_require(doc, key, path), f"{path}.{key}")
    for f in cls.__dataclass_fields__.values():
        if f.name in out or f.name not in doc:
            continue
        value = doc[f.name]
        if f.name in ("max_iterations", "reinit_step_threshold"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"{path}.{f.name}", "expected an integer")
            out[f.name] = value
        else:
            out[f.name] = _number(value, f"{path}.{f.name}")
    return cls(**out)


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document.

    Raises SchemaError on malformed structure and ValidationError (carrying
    every violation found) when the values break model invariants.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "document root must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    vehicle = _parse_vehicle(_require(doc, "vehicle", "$"))
    bsfc = _parse_bsfc(_require(doc, "bsfc_line", "$"))
    curve = _parse_fuel_curve(_require(doc, "fuel_curve", "$"))
    horizon = _dataclass_from(
        _require(doc, "horizon", "$"), Horizon, "horizon", required=("duration",)
    )
    weights = _dataclass_from(doc.get("weights", {}), Weights, "weights")
    solver = _dataclass_from(doc.get("solver", {}), SolverConfig, "solver")
    raw_inters = doc.get("intersections", [])
    if not isinstance(raw_inters, list):
        raise SchemaError("intersections", "expected a list")
    intersections = tuple(
        _parse_intersection(idoc, i) for i, idoc in enumerate(raw_inters)
    )

    scenario = Scenario(
        vehicle=vehicle,
        bsfc_line=bsfc,
        fuel_curve=curve,
        horizon=horizon,
        weights=weights,
        intersections=intersections,
        solver=solver,
    )
    violations = validate_scenario(scenario)
    if violations:
        raise ValidationError(violations)
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    """Inverse of parse_scenario; round-trips every valid scenario exactly."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "vehicle": {
            "mass": scenario.vehicle.mass,
            "rolling_resistance": scenario.vehicle.rolling_resistance,
            "air_density": scenario.vehicle.air_density,
            "drag_coeff": scenario.vehicle.drag_coeff,
            "frontal_area": scenario.vehicle.frontal_area,
            "grade": scenario.vehicle.grade,
            "wind_speed": scenario.vehicle.wind_speed,
            "transmission_efficiency": scenario.vehicle.transmission_efficiency,
            "gear_ratio": scenario.vehicle.gear_ratio,
            "final_drive_ratio": scenario.vehicle.final_drive_ratio,
            "wheel_radius": scenario.vehicle.wheel_radius,
        },
        "bsfc_line": {
            "slope": scenario.bsfc_line.slope,
            "intercept": scenario.bsfc_line.intercept,
            "max_torque": scenario.bsfc_line.max_torque,
        },
        "fuel_curve": {
            "breakpoints": [list(p) for p in scenario.fuel_curve.breakpoints],
            "idle_rate": scenario.fuel_curve.idle_rate,
            "transient_coeff": scenario.fuel_curve.transient_coeff,
        },
        "horizon": {
            "duration": scenario.horizon.duration,
            "dt": scenario.horizon.dt,
            "initial_speed": scenario.horizon.initial_speed,
            "speed_limit": scenario.horizon.speed_limit,
            "accel_min": scenario.horizon.accel_min,
            "accel_max": scenario.horizon.accel_max,
            "jerk_min": scenario.horizon.jerk_min,
            "jerk_max": scenario.horizon.jerk_max,
        },
        "weights": {
            "fuel": scenario.weights.fuel,
            "time": scenario.weights.time,
            "comfort": scenario.weights.comfort,
            "jerk_ratio": scenario.weights.jerk_ratio,
        },
        "intersections": [
            {
                "position": inter.position,
                "windows": [[w.start, w.end] for w in inter.windows],
                "turn": None if inter.turn is None else {
                    "radius": inter.turn.radius,
                    "friction": inter.turn.friction,
                    "lateral_accel": inter.turn.lateral_accel,
                    "accel_min": inter.turn.accel_min,
                    "accel_max": inter.turn.accel_max,
                },
            }
            for inter in scenario.intersections
        ],
        "solver": {
            "trust_speed": scenario.solver.trust_speed,
            "trust_accel": scenario.solver.trust_accel,
            "stop_threshold": scenario.solver.stop_threshold,
            "max_iterations": scenario.solver.max_iterations,
            "reinit_step_threshold": scenario.solver.reinit_step_threshold,
            "soft_penalty_slope": scenario.solver.soft_penalty_slope,
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def without_turns(scenario: Scenario) -> Scenario:
    """Copy of the scenario with every turn constraint removed."""
    return replace(
        scenario,
        intersections=tuple(replace(i, turn=None) for i in scenario.intersections),
    )
