"""Run metrics over the per-intersection measurement window.

Fuel and travel time are accounted from 300 m before each stop line to
300 m after it, extended until the speed has recovered to within 0.1 m/s of
the value it had when entering the window. Wait time is the excess of that
travel time over covering the same span at the entry speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import powertrain
from .kinematics import Trajectory, crossing_record
from .scenario import Scenario

WINDOW_BEFORE = 300.0  # m upstream of the stop line
WINDOW_AFTER = 300.0   # m downstream
RECOVERY_TOL = 0.1     # m/s band around the entry speed


@dataclass
class IntersectionMetrics:
    position: float
    entry_time: float
    exit_time: float
    travel_time: float
    wait_time: float
    fuel_grams: float
    crossing_speed: float | None
    recovered: bool


@dataclass
class RunMetrics:
    fuel_grams: float          # summed over intersection windows
    travel_time: float
    wait_time: float
    crossing_speeds: list[float | None]
    horizon_fuel_grams: float  # whole-horizon total for reference
    per_intersection: list[IntersectionMetrics]


def _first_time_at(traj: Trajectory, position: float) -> float | None:
    rec = crossing_record(traj, max(position, 0.0))
    return None if rec is None else rec.time


def _fuel_between(rates: np.ndarray, dt: float, t0: float, t1: float) -> float:
    """Integrate piecewise-constant per-step rates over [t0, t1]."""
    starts = np.arange(len(rates)) * dt
    ends = starts + dt
    overlap = np.clip(np.minimum(ends, t1) - np.maximum(starts, t0), 0.0, None)
    return float(np.sum(rates * overlap))


def percent_delta(value: float, reference: float) -> float:
    return 100.0 * (value - reference) / reference


def run_metrics(traj: Trajectory, scenario: Scenario,
                rates: np.ndarray | None = None) -> RunMetrics:
    if rates is None:
        account = powertrain.trajectory_fuel(traj, scenario.vehicle,
                                             scenario.bsfc_line, scenario.fuel_curve)
        rates = account.rates
    dt = traj.dt
    horizon_fuel = float(np.sum(rates)) * dt
    per = []
    times = traj.sample_times()
    for inter in scenario.intersections:
        entry_pos = max(inter.position - WINDOW_BEFORE, 0.0)
        exit_pos = inter.position + WINDOW_AFTER
        t_entry = _first_time_at(traj, entry_pos)
        if t_entry is None:
            # Never reached the window: charge the remainder of the horizon.
            t_entry = float(times[-1])
        v_entry = traj.speed_at(t_entry)
        t_reach = _first_time_at(traj, exit_pos)
        recovered = False
        if t_reach is None:
            t_exit = float(times[-1])
        else:
            t_exit = float(times[-1])
            if abs(traj.speed_at(t_reach) - v_entry) <= RECOVERY_TOL:
                t_exit = t_reach
                recovered = True
            else:
                later = times[times > t_reach]
                for t in later:
                    if abs(traj.speed_at(float(t)) - v_entry) <= RECOVERY_TOL:
                        t_exit = float(t)
                        recovered = True
                        break
        travel = t_exit - t_entry
        span = exit_pos - entry_pos
        free_flow = span / v_entry if v_entry > 0 else float("inf")
        rec = crossing_record(traj, inter.position)
        per.append(IntersectionMetrics(
            position=inter.position,
            entry_time=t_entry,
            exit_time=t_exit,
            travel_time=travel,
            wait_time=travel - free_flow,
            fuel_grams=_fuel_between(rates, dt, t_entry, t_exit),
            crossing_speed=None if rec is None else rec.speed,
            recovered=recovered,
        ))
    return RunMetrics(
        fuel_grams=sum(m.fuel_grams for m in per),
        travel_time=sum(m.travel_time for m in per),
        wait_time=sum(m.wait_time for m in per),
        crossing_speeds=[m.crossing_speed for m in per],
        horizon_fuel_grams=horizon_fuel,
        per_intersection=per,
    )
