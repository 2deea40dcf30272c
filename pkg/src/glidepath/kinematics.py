"""Discrete-time longitudinal motion.

A trajectory is driven by a per-step acceleration vector ``a`` of length N:

    v[k+1] = v[k] + a[k] * dt
    d[k+1] = d[k] + (v[k] + v[k+1]) / 2 * dt

which in matrix form reads v[1:] = v0 + dt * D @ a with D the unit
lower-triangular integration matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleRolloutError(ValueError):
    """Raised when an acceleration vector drives the speed negative."""


@dataclass
class Trajectory:
    accel: np.ndarray     # (N,)
    speed: np.ndarray     # (N+1,)
    position: np.ndarray  # (N+1,)
    dt: float

    @property
    def steps(self) -> int:
        return len(self.accel)

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def sample_times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def speed_at(self, t: float) -> float:
        return float(np.interp(t, self.sample_times(), self.speed))

    def position_at(self, t: float) -> float:
        return float(np.interp(t, self.sample_times(), self.position))

    def accel_at(self, t: float) -> float:
        # Accelerations are indexed by step start; interpolate across those
        # sample instants and clamp at the ends like np.interp does.
        step_times = np.arange(self.steps) * self.dt
        return float(np.interp(t, step_times, self.accel))


@dataclass
class CrossingRecord:
    time: float
    speed: float
    accel: float


def integration_matrix(n: int) -> np.ndarray:
    """Unit lower-triangular D with D[i, j] = 1 for j <= i."""
    return np.tril(np.ones((n, n)))


def position_matrix(n: int, dt: float) -> np.ndarray:
    """S with d[1:] = S @ a + v0 * dt * (1..n); S[k, i] = dt^2 (k - i + 0.5)."""
    k = np.arange(1, n + 1)[:, None]
    i = np.arange(n)[None, :]
    coeff = (k - i - 0.5) * dt * dt
    return np.where(i < k, coeff, 0.0)


def rollout(v0: float, accel, dt: float) -> Trajectory:
    """Integrate the acceleration vector exactly per the recursion above.

    Raises InfeasibleRolloutError if any speed falls below -1e-9; callers are
    expected to constrain speeds to be non-negative.
    """
    accel = np.asarray(accel, dtype=float)
    if accel.ndim != 1 or len(accel) < 1:
        raise ValueError("accel must be a non-empty 1-D vector")
    speed = np.concatenate(([v0], v0 + dt * np.cumsum(accel)))
    if speed.min() < -1e-9:
        k = int(np.argmin(speed))
        raise InfeasibleRolloutError(f"speed becomes negative at step {k}: {speed[k]:.3e}")
    position = np.concatenate(([0.0], np.cumsum((speed[:-1] + speed[1:]) * 0.5 * dt)))
    return Trajectory(accel=accel, speed=speed, position=position, dt=dt)


def crossing_record(traj: Trajectory, x_cross: float) -> CrossingRecord | None:
    """First instant the (linearly interpolated) position reaches x_cross.

    Returns None when the trajectory never gets there. Speed and acceleration
    are interpolated at the crossing instant.
    """
    if x_cross < 0:
        raise ValueError("crossing position must be non-negative")
    d = traj.position
    if x_cross == 0.0:
        return CrossingRecord(time=0.0, speed=float(traj.speed[0]),
                              accel=float(traj.accel[0]))
    if d[-1] < x_cross:
        return None
    k = int(np.searchsorted(d, x_cross, side="left"))
    # d[k-1] < x_cross <= d[k]; the segment is non-degenerate by construction.
    frac = (x_cross - d[k - 1]) / (d[k] - d[k - 1])
    t = (k - 1 + frac) * traj.dt
    return CrossingRecord(time=t, speed=traj.speed_at(t), accel=traj.accel_at(t))
