"""Green-window bookkeeping, crossing validity, and turning speed limits."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scenario import EPS_POSITION, GRAVITY, Horizon, Intersection, TurnSpec
from .kinematics import Trajectory


@dataclass(frozen=True)
class WindowSelection:
    """One chosen green window per intersection, by index."""

    indices: tuple[int, ...]

    def one_hot(self, intersection_idx: int, n_windows: int) -> list[int]:
        return [1 if j == self.indices[intersection_idx] else 0 for j in range(n_windows)]


@dataclass(frozen=True)
class TurnLimits:
    safe_speed: float      # sqrt(R * g * mu)
    comfort_speed: float   # sqrt(R * a_lat)
    accel_min: float
    accel_max: float

    @property
    def turn_speed(self) -> float:
        return min(self.safe_speed, self.comfort_speed)


def turn_speed_limits(turn: TurnSpec) -> TurnLimits:
    return TurnLimits(
        safe_speed=math.sqrt(turn.radius * GRAVITY * turn.friction),
        comfort_speed=math.sqrt(turn.radius * turn.lateral_accel),
        accel_min=turn.accel_min,
        accel_max=turn.accel_max,
    )


def clamp_critical_time(t: float, horizon: Horizon) -> float:
    """Critical instants outside the horizon clamp to its ends."""
    return min(max(t, 0.0), horizon.duration)


def light_is_green(intersection: Intersection, t: float) -> bool:
    """Strictly inside a green window; boundary instants count as red."""
    return any(w.start < t < w.end for w in intersection.windows)


def crossing_margins(traj: Trajectory, intersection: Intersection, window_idx: int,
                     horizon: Horizon) -> tuple[float, float]:
    """Signed positions relative to the stop line at the window's edges.

    A valid crossing needs the first to be negative (still upstream when the
    light turns green) and the second positive (already past when it turns
    red again).
    """
    window = intersection.windows[window_idx]
    t_open = clamp_critical_time(window.start, horizon)
    t_close = clamp_critical_time(window.end, horizon)
    margin_open = traj.position_at(t_open) - intersection.position
    margin_close = traj.position_at(t_close) - intersection.position
    return margin_open, margin_close


def critical_positions(traj: Trajectory, intersection: Intersection,
                       horizon: Horizon) -> list[tuple[float, float]]:
    """Stop-line-relative positions at every window's critical instants.

    Negative means upstream. Instants outside the horizon clamp to its ends,
    matching crossing_margins.
    """
    return [crossing_margins(traj, intersection, i, horizon)
            for i in range(len(intersection.windows))]


def crossing_valid(traj: Trajectory, selection: WindowSelection,
                   intersections: tuple[Intersection, ...], horizon: Horizon,
                   eps: float = EPS_POSITION,
                   tol: float = 1e-6) -> tuple[bool, list[tuple[float, float]]]:
    """Check every intersection's selected window; margins returned per stop line.

    tol absorbs solver rounding on constraints that sit exactly at the
    eps-tightened boundary.
    """
    margins = []
    ok = True
    for inter, idx in zip(intersections, selection.indices):
        m_open, m_close = crossing_margins(traj, inter, idx, horizon)
        margins.append((m_open, m_close))
        if not (m_open <= -eps + tol and m_close >= eps - tol):
            ok = False
    return ok, margins


def earliest_arrival_time(distance: float, horizon: Horizon) -> float:
    """Bang-bang lower bound on arrival: full accel to the speed limit, then hold.

    Jerk limits only delay the real vehicle, so this never overestimates.
    """
    v0 = horizon.initial_speed
    vmax = horizon.speed_limit
    amax = horizon.accel_max
    ramp_dist = (vmax * vmax - v0 * v0) / (2.0 * amax)
    if ramp_dist >= distance:
        return (-v0 + math.sqrt(v0 * v0 + 2.0 * amax * distance)) / amax
    ramp_time = (vmax - v0) / amax
    return ramp_time + (distance - ramp_dist) / vmax


def forced_crossing_deadline(distance: float, horizon: Horizon) -> float:
    """Latest instant the vehicle can still be upstream of the stop line.

    If an immediate full-brake stop ends at or before the line the vehicle
    can wait forever (returns inf). Otherwise even maximum braking crosses,
    and the bound is that crossing time; weaker (jerk-limited) braking only
    crosses sooner.
    """
    v0 = horizon.initial_speed
    brake = abs(horizon.accel_min)
    if v0 * v0 / (2.0 * brake) <= distance:
        return math.inf
    return (v0 - math.sqrt(v0 * v0 - 2.0 * brake * distance)) / brake


def reachable_windows(intersection: Intersection, horizon: Horizon) -> list[int]:
    """Window indices not ruled out by kinematic bounds.

    Exclusions are conservative: a window is dropped only when no feasible
    trajectory could cross inside it. Crossing instants live on linearly
    interpolated sample positions, which can lead the continuous-time bounds
    by up to one sample, so both bounds carry a one-step allowance.
    """
    dt = horizon.dt
    t_earliest = earliest_arrival_time(intersection.position, horizon) - dt
    deadline = forced_crossing_deadline(intersection.position, horizon) + dt
    keep = []
    for i, win in enumerate(intersection.windows):
        if win.end <= 0.0 or win.start >= horizon.duration:
            continue
        if win.end > horizon.duration:
            # Truncated by the horizon: keep only if a sample falls inside.
            first_sample = math.floor(win.start / dt) + 1
            if first_sample * dt > horizon.duration:
                continue
        if min(win.end, horizon.duration) <= t_earliest:
            continue
        if win.start >= deadline:
            continue
        keep.append(i)
    return keep
