"""Rule-based human-driver benchmark.

The driver cruises at the speed limit, brakes for a red light once within
reaction distance, idles at the stop line until green, and accelerates back
to the limit (via the turning speed first where a turn is specified). There
is no signal-timing anticipation: the light is read at sample instants only.

Speed transitions follow the empirical power-family profile

    a(theta) = ra_m * theta * (1 - theta^m)^2,   theta = t / T_maneuver

whose normalizer ra_m = 2(m+1)(m+2)/m^2 * |dv| / T makes the profile
integrate exactly to the commanded speed change. Acceleration maneuvers use
the calibrated exponent directly with the empirical duration formula. For
stops, the calibrated deceleration exponent concentrates braking so heavily
at the start that its profile covers only about a quarter of the distance
the empirical duration formula implies, which would strand the vehicle far
from the stop line; stop maneuvers therefore reuse the acceleration
exponent, whose distance fraction matches the empirical relation within 2%,
and pick the duration that lands the stop exactly on the line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import Trajectory, rollout
from .scenario import Scenario
from .signals import light_is_green, turn_speed_limits


@dataclass(frozen=True)
class DriverParams:
    m_accel: float = 9.1244
    m_decel: float = -0.7193
    reaction_distance: float = 150.0  # m to the stop line before reacting to red
    line_standoff: float = 0.25       # m short of the line the stop aims for


def peak_coefficient(m: float, speed_change: float, duration: float) -> float:
    """Profile amplitude making the acceleration integrate to |speed_change|."""
    if duration <= 0.0:
        return 0.0
    return 2.0 * (m + 1.0) * (m + 2.0) / (m * m) * abs(speed_change) / duration


def profile_accel(theta: float, m: float, speed_change: float, duration: float) -> float:
    """Acceleration magnitude of the power-family profile at relative time theta.

    The leading theta factor pins a(0) = 0; for negative exponents the limit
    is taken through that factor.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if theta == 0.0:
        return 0.0
    shape = theta * (1.0 - theta ** m) ** 2
    return peak_coefficient(m, speed_change, duration) * shape


def speed_fraction(theta: float, m: float) -> float:
    """Fraction of the speed change completed at relative time theta."""
    if theta <= 0.0:
        return 0.0
    if theta >= 1.0:
        return 1.0
    g = (theta ** 2 / 2.0
         - 2.0 * theta ** (m + 2.0) / (m + 2.0)
         + theta ** (2.0 * m + 2.0) / (2.0 * m + 2.0))
    g1 = m * m / (2.0 * (m + 1.0) * (m + 2.0))
    return g / g1


def speed_change_fraction_integral(m: float) -> float:
    """Integral of speed_fraction over [0, 1]: mean progress of the change."""
    g1 = m * m / (2.0 * (m + 1.0) * (m + 2.0))
    integral = (1.0 / 6.0
                - 2.0 / ((m + 2.0) * (m + 3.0))
                + 1.0 / ((2.0 * m + 2.0) * (2.0 * m + 3.0)))
    return integral / g1


def accel_duration(v_initial: float, v_final: float) -> float:
    """Empirical desired acceleration time between two speeds (m/s in, s out)."""
    dv = v_final - v_initial
    if dv == 0.0:
        return 0.0
    return dv / (0.5778 + 0.0669 * math.sqrt(dv) - 0.0182 * v_initial)


def accel_distance(v_initial: float, v_final: float, duration: float) -> float:
    """Empirical desired acceleration distance over the maneuver."""
    return (0.467 + 0.0072 * v_final - 0.0076 * v_initial) * (v_final + v_initial) * duration


def decel_duration(v_initial: float, v_final: float, distance: float) -> float:
    """Empirical desired deceleration time to cover a given stopping distance."""
    return distance / ((0.473 + 0.0056 * v_initial - 0.0049 * v_final)
                       * (v_final + v_initial))


class _StopPlan:
    """Closed-form speed curve that halts exactly after the given distance."""

    def __init__(self, v_start: float, distance: float, m: float, a_floor: float):
        self.v_start = v_start
        frac = 1.0 - speed_change_fraction_integral(m)
        self.m = m
        self.duration = distance / (v_start * frac)
        peak = peak_coefficient(m, v_start, self.duration) * _shape_peak(m)
        if peak > abs(a_floor):
            # Too little room for the shaped profile: fall back to a linear
            # ramp, which needs only half the peak (and may exceed the
            # planner's comfort floor in a genuine emergency).
            self.m = None
            self.duration = 2.0 * distance / v_start

    def speed(self, tau: float) -> float:
        if tau >= self.duration:
            return 0.0
        if self.m is None:
            return self.v_start * (1.0 - tau / self.duration)
        return self.v_start * (1.0 - speed_fraction(tau / self.duration, self.m))


def _shape_peak(m: float) -> float:
    """Maximum of theta*(1-theta^m)^2 over [0, 1] for m with 1+2m > 0."""
    theta_star = (1.0 / (1.0 + 2.0 * m)) ** (1.0 / m)
    return theta_star * (1.0 - theta_star ** m) ** 2


class _SpeedUpPlan:
    """Closed-form accelerating curve from v_start to v_goal."""

    def __init__(self, v_start: float, v_goal: float, m: float):
        self.v_start = v_start
        self.v_goal = v_goal
        self.m = m
        self.duration = accel_duration(v_start, v_goal)

    def speed(self, tau: float) -> float:
        if self.duration <= 0.0 or tau >= self.duration:
            return self.v_goal
        return self.v_start + (self.v_goal - self.v_start) * speed_fraction(
            tau / self.duration, self.m)


def simulate_driver(scenario: Scenario, params: DriverParams | None = None) -> Trajectory:
    """Step the rule-based driver through the scenario horizon."""
    params = params or DriverParams()
    hor = scenario.horizon
    dt = hor.dt
    n = hor.steps
    inters = scenario.intersections

    v = hor.initial_speed
    d = 0.0
    accel_out = []
    plan = None          # active _StopPlan or _SpeedUpPlan
    plan_t0 = 0.0
    waiting = False
    next_idx = 0         # first intersection not yet crossed

    def target_speed() -> float:
        # Accelerate only to the turning speed while a turn is still ahead.
        if next_idx < len(inters) and inters[next_idx].turn is not None:
            limits = turn_speed_limits(inters[next_idx].turn)
            return min(hor.speed_limit, limits.turn_speed)
        return hor.speed_limit

    for k in range(n):
        t = k * dt
        while next_idx < len(inters) and d >= inters[next_idx].position:
            next_idx += 1
            if isinstance(plan, _SpeedUpPlan):
                plan = None  # retarget after clearing a turn
        ahead = inters[next_idx] if next_idx < len(inters) else None
        dist = (ahead.position - d) if ahead is not None else math.inf
        red = ahead is not None and not light_is_green(ahead, t)

        if waiting:
            if red:
                accel_out.append(0.0)
                continue
            waiting = False
            plan = None

        if red and dist <= params.reaction_distance and v > 0.0:
            if not isinstance(plan, _StopPlan):
                stop_dist = max(dist - params.line_standoff, 1e-6)
                plan = _StopPlan(v, stop_dist, params.m_accel, hor.accel_min)
                plan_t0 = t
        elif isinstance(plan, _StopPlan):
            plan = None  # light released mid-brake

        if plan is None:
            goal = target_speed()
            if v < goal - 1e-9:
                plan = _SpeedUpPlan(v, goal, params.m_accel)
                plan_t0 = t

        if plan is None:
            v_next = min(v, target_speed())
        else:
            v_next = plan.speed(t + dt - plan_t0)
            if isinstance(plan, _SpeedUpPlan):
                v_next = min(v_next, target_speed())

        if red and isinstance(plan, _StopPlan):
            # Never roll past the line on red. Capping at room/dt - v/2 keeps
            # a full stop feasible within the remaining room at every later
            # step, not just this one.
            room = max(dist - params.line_standoff, 0.0)
            cap = room / dt - 0.5 * v
            if cap < 0.05:
                v_next = 0.0 if v * dt * 0.5 <= dist else max(0.0, 2.0 * dist / dt - v)
            else:
                v_next = min(v_next, cap)
        v_next = min(max(v_next, 0.0), hor.speed_limit)
        accel_out.append((v_next - v) / dt)

        d += (v + v_next) * 0.5 * dt
        v = v_next
        if isinstance(plan, _StopPlan) and v <= 1e-12:
            v = 0.0
            waiting = True
            plan = None

    return rollout(hor.initial_speed, np.array(accel_out), dt)
