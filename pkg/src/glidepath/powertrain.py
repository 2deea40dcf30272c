"""Traction power, best-efficiency-line torque, and fuel rate.

The engine is assumed to track its best-efficiency line, so the static fuel
rate reduces to a function of engine power alone. A transient correction
proportional to the torque rate can be layered on top. Braking produces no
fuel credit: the rate floors at idle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import GRAVITY, BsfcLine, FuelCurve, VehicleParams
from .kinematics import Trajectory


@dataclass
class PowerSample:
    power: float         # traction power, W
    engine_power: float  # W; zero while braking
    torque: float        # N*m on the best-efficiency line
    fuel_rate: float     # g/s
    saturated: bool      # torque demand exceeded the admissible ceiling


@dataclass
class FuelAccount:
    total: float          # grams over the horizon
    rates: np.ndarray     # (N,) g/s per step
    powers: np.ndarray    # (N,) traction W per step
    torques: np.ndarray   # (N,) N*m per step


def traction_power(speed, accel, vehicle: VehicleParams):
    """M*a*v + M*g*f*v + 0.5*rho*Cd*A*v^3 on flat road with zero wind."""
    rolling = vehicle.mass * GRAVITY * vehicle.rolling_resistance * speed
    aero = 0.5 * vehicle.air_density * vehicle.drag_coeff * vehicle.frontal_area * speed ** 3
    return vehicle.mass * accel * speed + rolling + aero


def torque_on_line(engine_power, line: BsfcLine):
    """Torque solving P = intercept * T / (1 - slope * T), clamped to max_torque."""
    torque = np.asarray(engine_power, dtype=float) / (line.intercept + line.slope * engine_power)
    if line.max_torque is not None:
        torque = np.minimum(torque, line.max_torque)
    return torque if torque.ndim else float(torque)


def torque_saturates(engine_power, line: BsfcLine) -> bool:
    if line.max_torque is None:
        return False
    raw = engine_power / (line.intercept + line.slope * engine_power)
    return bool(raw > line.max_torque)


def static_rate(curve: FuelCurve, engine_power):
    """Piecewise-linear fuel rate; idle below zero power, extrapolated above."""
    p = np.asarray(engine_power, dtype=float)
    xs = np.array([bp[0] for bp in curve.breakpoints])
    ys = np.array([bp[1] for bp in curve.breakpoints])
    rate = np.interp(p, xs, ys)
    if len(xs) >= 2:
        slope_hi = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        above = p > xs[-1]
        rate = np.where(above, ys[-1] + slope_hi * (p - xs[-1]), rate)
    rate = np.where(p <= 0.0, curve.idle_rate, rate)
    return rate if rate.ndim else float(rate)


def rate_slope_at_zero(curve: FuelCurve) -> float:
    """Right-derivative of the static curve at zero engine power (g/s per W)."""
    if len(curve.breakpoints) < 2:
        return 0.0
    (p0, q0), (p1, q1) = curve.breakpoints[0], curve.breakpoints[1]
    return (q1 - q0) / (p1 - p0)


def fuel_rate(power: float, torque_prev: float, vehicle: VehicleParams,
              line: BsfcLine, curve: FuelCurve, dt: float) -> float:
    """Fuel rate for one step given the previous step's line torque.

    Negative traction power idles the engine; the transient term uses the
    backward difference of the best-line torque; the result never falls
    below the idle rate.
    """
    engine_power = max(power, 0.0) / vehicle.transmission_efficiency
    rate = static_rate(curve, engine_power)
    if curve.transient_coeff != 0.0:
        torque = torque_on_line(engine_power, line)
        rate += curve.transient_coeff * (torque - torque_prev) / dt
    return max(rate, curve.idle_rate)


def sample_power(speed: float, accel: float, torque_prev: float,
                 vehicle: VehicleParams, line: BsfcLine, curve: FuelCurve,
                 dt: float) -> PowerSample:
    power = float(traction_power(speed, accel, vehicle))
    engine_power = max(power, 0.0) / vehicle.transmission_efficiency
    torque = torque_on_line(engine_power, line)
    return PowerSample(
        power=power,
        engine_power=engine_power,
        torque=float(torque),
        fuel_rate=fuel_rate(power, torque_prev, vehicle, line, curve, dt),
        saturated=torque_saturates(engine_power, line),
    )


def trajectory_fuel(traj: Trajectory, vehicle: VehicleParams, line: BsfcLine,
                    curve: FuelCurve) -> FuelAccount:
    """Per-step fuel accounting and the horizon total in grams.

    Step k spans samples k -> k+1 and is costed at the end-of-step speed,
    matching the matrix form v[1:] = v0 + dt*D@a used by the optimizer.
    The torque chain seeds from step 0's own torque, so the first step
    carries no transient term.
    """
    v_end = traj.speed[1:]
    powers = traction_power(v_end, traj.accel, vehicle)
    eng = np.maximum(powers, 0.0) / vehicle.transmission_efficiency
    torques = torque_on_line(eng, line)
    rates = static_rate(curve, eng)
    if curve.transient_coeff != 0.0:
        prev = np.concatenate(([torques[0]], torques[:-1]))
        rates = rates + curve.transient_coeff * (torques - prev) / traj.dt
    rates = np.maximum(rates, curve.idle_rate)
    total = float(np.sum(rates) * traj.dt)
    return FuelAccount(total=total, rates=rates, powers=np.asarray(powers, dtype=float),
                       torques=np.asarray(torques, dtype=float))
