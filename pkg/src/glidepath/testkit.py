"""Shared verification scaffolding.

Bundled reference scenarios, a seeded random scenario generator, exhaustive
brute-force minimization over tiny action grids, and an independent
first-order QP reference used to audit the active-set kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import replace
from importlib import resources

import numpy as np

from .dp import _red_blocked
from .kinematics import rollout
from .scenario import GreenWindow, Intersection, Scenario, load_scenario
from .scp import evaluate_true_objective


def _data_path(name: str) -> str:
    return str(resources.files("glidepath") / "data" / name)


def golden_single() -> Scenario:
    """Single intersection, 90 s horizon, 17.88 m/s limit, time weight 2000."""
    return load_scenario(_data_path("golden_single.json"))


def golden_turning() -> Scenario:
    """Left-turn study: 25 m radius, friction 0.7, 3 m/s^2 comfort, 13 m/s limit."""
    return load_scenario(_data_path("golden_turning.json"))


def golden_three_intersection() -> Scenario:
    return load_scenario(_data_path("golden_three_intersection.json"))


def example_transient() -> Scenario:
    """Single-intersection setup with a nonzero torque-transient fuel term."""
    return load_scenario(_data_path("example_transient.json"))


def with_departure_offset(scenario: Scenario, offset: float) -> Scenario:
    """Shift every signal timeline earlier by the departure offset.

    Delaying departure by `offset` seconds is equivalent to sliding all
    windows toward zero; windows that end before the new time origin drop.
    """
    new_inters = []
    for inter in scenario.intersections:
        windows = tuple(GreenWindow(w.start - offset, w.end - offset)
                        for w in inter.windows if w.end - offset > 0.0)
        new_inters.append(replace(inter, windows=windows))
    return replace(scenario, intersections=tuple(new_inters))


def gen_random_scenario(seed: int, n_intersections: int | None = None) -> Scenario:
    """Deterministic-by-seed scenario with cyclic signals.

    One to three intersections spaced 150-600 m apart, cycle lengths
    30-90 s, green fractions 0.3-0.6; vehicle and horizon follow the
    single-intersection reference setup.
    """
    rng = np.random.default_rng(seed)
    base = golden_single()
    count = int(n_intersections if n_intersections is not None
                else rng.integers(1, 4))
    duration = base.horizon.duration
    position = 0.0
    inters = []
    for _ in range(count):
        position += float(rng.uniform(150.0, 600.0))
        cycle = float(rng.uniform(30.0, 90.0))
        green = float(rng.uniform(0.3, 0.6)) * cycle
        phase = float(rng.uniform(0.0, cycle))
        windows = []
        k = -2
        while k * cycle + phase < duration + cycle:
            start = k * cycle + phase
            end = start + green
            if end > 0.0:
                windows.append(GreenWindow(start, end))
            k += 1
        inters.append(Intersection(position=position, windows=tuple(windows)))
    return replace(base, intersections=tuple(inters))


def brute_force_best(scenario: Scenario, actions,
                     max_sequences: int = 1_000_000):
    """Exhaustive minimum of the true objective over an action grid.

    Honors speed bounds, jerk bounds and the red-light crossing rule; jerk
    cost enters through the scenario weights as usual. Refuses instances
    whose sequence count exceeds the cap.
    """
    actions = list(actions)
    hor = scenario.horizon
    n = hor.steps
    total = len(actions) ** n
    if total > max_sequences:
        raise ValueError(f"{total} sequences exceed the cap of {max_sequences}")

    jerk_lo = hor.jerk_min * hor.dt
    jerk_hi = hor.jerk_max * hor.dt
    best_obj = float("inf")
    best_accels = None
    for combo in itertools.product(actions, repeat=n):
        speeds = hor.initial_speed + hor.dt * np.cumsum(combo)
        if speeds.min() < -1e-12 or speeds.max() > hor.speed_limit + 1e-12:
            continue
        diffs = np.diff(combo)
        if len(diffs) and (diffs.min() < jerk_lo - 1e-12 or diffs.max() > jerk_hi + 1e-12):
            continue
        traj = rollout(hor.initial_speed, np.array(combo, dtype=float), hor.dt)
        blocked = False
        for k in range(n):
            disp = traj.position[k + 1] - traj.position[k]
            if _red_blocked(scenario, k * hor.dt, np.array([traj.position[k]]), disp)[0]:
                blocked = True
                break
        if blocked:
            continue
        obj = evaluate_true_objective(traj, scenario).total
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_accels = np.array(combo, dtype=float)
    return best_obj, best_accels


def gen_random_qp(seed: int, n: int = 8, m: int = 5):
    """Strictly convex feasible QP with dense inequality rows."""
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(n, n))
    hessian = a0 @ a0.T + np.eye(n)
    gradient = rng.normal(size=n)
    rows = rng.normal(size=(m, n))
    feas = rng.normal(size=n)
    ubs = rows @ feas + np.abs(rng.normal(size=m)) + 0.1
    return hessian, gradient, rows, ubs


def reference_qp_minimum(hessian, gradient, rows, ubs, iterations: int = 30000):
    """Accelerated projected-gradient ascent on the dual; returns the optimum.

    Independent of the active-set path: the only projection is clipping the
    multipliers at zero. Strong duality makes the dual optimum equal the
    primal minimum for these strictly convex programs.
    """
    h_inv = np.linalg.inv(hessian)
    rows = np.asarray(rows, dtype=float)
    ubs = np.asarray(ubs, dtype=float)
    m = len(ubs)
    lam = np.zeros(m)
    momentum = lam.copy()
    t_prev = 1.0
    lipschitz = float(np.linalg.norm(rows @ h_inv @ rows.T, 2)) + 1e-12
    step = 1.0 / lipschitz

    def dual_value(l):
        w = gradient + rows.T @ l
        return float(-0.5 * w @ h_inv @ w - l @ ubs)

    for _ in range(iterations):
        w = gradient + rows.T @ momentum
        x = -h_inv @ w
        grad = rows @ x - ubs
        lam_next = np.maximum(momentum + step * grad, 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
        momentum = lam_next + (t_prev - 1.0) / t_next * (lam_next - lam)
        lam, t_prev = lam_next, t_next
    x = -h_inv @ (gradient + rows.T @ lam)
    primal = float(0.5 * x @ hessian @ x + gradient @ x)
    return {"dual_value": dual_value(lam), "primal_value": primal, "x": x,
            "multipliers": lam}
