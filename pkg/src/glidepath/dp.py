"""Dynamic-programming reference solver.

Backward induction over a uniform (distance, speed) grid with time stages at
the scenario sample time and a uniform acceleration action set. Cost-to-go
is interpolated bilinearly; transitions that would cross a stop line while
its light is red are forbidden, with the crossing instant interpolated
linearly inside the step exactly as the trajectory bookkeeping does. Fuel,
time and comfort stage costs reuse the same powertrain accounting as the
convex optimizer, so the two engines disagree only through discretization.

The squared jerk cost term is dropped by default: the grid state carries no
previous acceleration. Comparisons against the convex engine should zero
that term on both sides.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import powertrain
from .kinematics import Trajectory, rollout
from .scenario import Scenario
from .scp import ObjectiveBreakdown, evaluate_true_objective
from .signals import reachable_windows

BIG = 1e15          # stands in for an infeasible cost-to-go
BIG_CUT = 1e12      # interpolated values above this count as infeasible


@dataclass(frozen=True)
class DpGrid:
    distance_step: float = 2.0
    speed_step: float = 0.25
    accel_step: float = 0.25
    distance_margin: float = 10.0


@dataclass
class DpResult:
    trajectory: Trajectory
    objective: float
    breakdown: ObjectiveBreakdown
    distance_grid: np.ndarray
    speed_grid: np.ndarray
    actions: np.ndarray
    cost_to_go: list[np.ndarray]   # per stage, shape (Nd, Nv)

    def memory_estimate_bytes(self) -> int:
        return sum(arr.nbytes for arr in self.cost_to_go)


def _uniform_grid(lo: float, hi: float, target_step: float) -> np.ndarray:
    """Uniform inclusive grid whose step is as close to target as divides evenly."""
    span = hi - lo
    count = max(1, int(round(span / target_step)))
    return np.linspace(lo, hi, count + 1)


def _action_set(scenario: Scenario, grid: DpGrid) -> np.ndarray:
    hor = scenario.horizon
    acts = _uniform_grid(hor.accel_min, hor.accel_max, grid.accel_step)
    if not np.any(np.isclose(acts, 0.0, atol=1e-12)):
        acts = np.sort(np.append(acts, 0.0))
    return acts


def grid_memory_estimate(scenario: Scenario, grid: DpGrid | None = None) -> int:
    """Bytes needed for the stored cost-to-go stack."""
    grid = grid or DpGrid()
    hor = scenario.horizon
    d_hi = hor.speed_limit * hor.duration + grid.distance_margin
    nd = len(_uniform_grid(0.0, d_hi, grid.distance_step))
    nv = len(_uniform_grid(0.0, hor.speed_limit, grid.speed_step))
    return nd * nv * 8 * (hor.steps + 1)


def _stage_cost(scenario: Scenario, v_end: np.ndarray, accel: float) -> np.ndarray:
    """Cost of one step ending at speeds v_end under constant acceleration."""
    w = scenario.weights
    dt = scenario.horizon.dt
    n = scenario.horizon.steps
    power = powertrain.traction_power(v_end, accel, scenario.vehicle)
    engine = np.maximum(power, 0.0) / scenario.vehicle.transmission_efficiency
    rate = np.maximum(powertrain.static_rate(scenario.fuel_curve, engine),
                      scenario.fuel_curve.idle_rate)
    return (w.fuel * rate * dt
            - (w.time / n) * v_end
            + w.comfort * accel * accel)


def _interp(values: np.ndarray, d_query: np.ndarray, v_query: float,
            d_grid: np.ndarray, v_grid: np.ndarray) -> np.ndarray:
    """Bilinear cost-to-go lookup for one speed column, vectorized over distance."""
    d_step = d_grid[1] - d_grid[0] if len(d_grid) > 1 else 1.0
    v_step = v_grid[1] - v_grid[0] if len(v_grid) > 1 else 1.0
    fd = np.clip((d_query - d_grid[0]) / d_step, 0.0, len(d_grid) - 1.0)
    id0 = np.minimum(fd.astype(int), len(d_grid) - 2) if len(d_grid) > 1 else np.zeros_like(fd, dtype=int)
    ad = fd - id0
    fv = min(max((v_query - v_grid[0]) / v_step, 0.0), len(v_grid) - 1.0)
    iv0 = min(int(fv), len(v_grid) - 2) if len(v_grid) > 1 else 0
    av = fv - iv0
    c00 = values[id0, iv0]
    c01 = values[id0, iv0 + 1]
    c10 = values[id0 + 1, iv0]
    c11 = values[id0 + 1, iv0 + 1]
    lo = (1.0 - av) * c00 + av * c01
    hi = (1.0 - av) * c10 + av * c11
    return (1.0 - ad) * lo + ad * hi


def _red_blocked(scenario: Scenario, t_start: float, d_from: np.ndarray,
                 displacement: float) -> np.ndarray:
    """Mask of starting distances whose step crosses a stop line during red."""
    blocked = np.zeros(d_from.shape, dtype=bool)
    if displacement <= 0.0:
        return blocked
    dt = scenario.horizon.dt
    for inter in scenario.intersections:
        x = inter.position
        crossing = (d_from <= x) & (d_from + displacement > x)
        if not np.any(crossing):
            continue
        tau = t_start + dt * (x - d_from[crossing]) / displacement
        green = np.zeros(tau.shape, dtype=bool)
        for win in inter.windows:
            green |= (tau > win.start) & (tau < win.end)
        mask = np.zeros(d_from.shape, dtype=bool)
        mask[crossing] = ~green
        blocked |= mask
    return blocked


@lru_cache(maxsize=65536)
def _discrete_stop_distance(v: float, brake: float, dt: float) -> float:
    """Distance covered while braking at full strength to rest, step by step."""
    dist = 0.0
    while v > 0.0:
        v_next = max(v - brake * dt, 0.0)
        dist += 0.5 * (v + v_next) * dt
        v = v_next
    return dist


def _doomed(scenario: Scenario, t_next: float, d_next: np.ndarray,
            v_next: float) -> np.ndarray:
    """States that can neither stop before the next stop line nor cross legally.

    The value grid cannot resolve this wedge (it is thinner than a cell near
    the line), so transitions into it are forbidden analytically: once the
    vehicle cannot stop upstream it is committed to cross between the
    max-acceleration arrival and the full-braking arrival, and if that whole
    interval is red inside the horizon the state has no legal future.
    """
    hor = scenario.horizon
    doomed = np.zeros(d_next.shape, dtype=bool)
    brake = abs(hor.accel_min)
    stop_dist = _discrete_stop_distance(v_next, brake, hor.dt)
    for inter in scenario.intersections:
        gap = inter.position - d_next
        ahead = gap > 0.0
        if not np.any(ahead):
            continue
        committed = ahead & (stop_dist > gap)
        if not np.any(committed):
            continue
        s = gap[committed]
        v0 = v_next
        # Earliest crossing: full acceleration capped at the speed limit.
        ramp_dist = (hor.speed_limit ** 2 - v0 ** 2) / (2.0 * hor.accel_max)
        t_early = np.where(
            ramp_dist >= s,
            (-v0 + np.sqrt(v0 * v0 + 2.0 * hor.accel_max * s)) / hor.accel_max,
            (hor.speed_limit - v0) / hor.accel_max
            + (s - ramp_dist) / hor.speed_limit,
        )
        # Latest crossing: full braking (the discrete path trails the
        # continuous one by at most a step; widen both ends for soundness).
        inside = np.clip(v0 * v0 - 2.0 * brake * s, 0.0, None)
        t_late = (v0 - np.sqrt(inside)) / brake + hor.dt
        lo = t_next + np.maximum(t_early - hor.dt, 0.0)
        hi = t_next + t_late
        # Braking past the horizon end keeps the vehicle upstream in-horizon.
        legal = hi > hor.duration
        hi_capped = np.minimum(hi, hor.duration)
        for win in inter.windows:
            legal |= (np.maximum(lo, win.start) < np.minimum(hi_capped, win.end))
        mask = np.zeros(d_next.shape, dtype=bool)
        mask[committed] = ~legal
        doomed |= mask
    return doomed


def dp_solve(scenario: Scenario, grid: DpGrid | None = None) -> DpResult:
    """Best grid solution over green-window selections.

    The cost-to-go surface of the raw problem has value cliffs wherever the
    set of still-catchable windows changes; bilinear interpolation smears
    those cliffs and corrupts both the values and the greedy rollout. One
    pass per reachable window choice, with the signal restricted to that
    window, keeps every surface smooth, and the union of the per-choice
    feasible sets is exactly the original feasible set.
    """
    grid = grid or DpGrid()
    if not scenario.intersections:
        return _dp_solve_fixed(scenario, grid)
    per_intersection = [reachable_windows(inter, scenario.horizon)
                        for inter in scenario.intersections]
    if any(not reach for reach in per_intersection):
        raise ValueError("no feasible policy: an intersection has no reachable window")
    best: DpResult | None = None
    best_key = None
    for combo in itertools.product(*per_intersection):
        variant = replace(scenario, intersections=tuple(
            replace(inter, windows=(inter.windows[w],))
            for inter, w in zip(scenario.intersections, combo)))
        try:
            result = _dp_solve_fixed(variant, grid)
        except ValueError:
            continue
        key = (result.objective, combo)
        if best_key is None or key < best_key:
            best, best_key = result, key
    if best is None:
        raise ValueError("no feasible policy from the initial state on this grid")
    return best


def _dp_solve_fixed(scenario: Scenario, grid: DpGrid) -> DpResult:
    """Backward induction plus greedy forward rollout from the start state."""
    hor = scenario.horizon
    dt = hor.dt
    n = hor.steps
    d_hi = hor.speed_limit * hor.duration + grid.distance_margin
    d_grid = _uniform_grid(0.0, d_hi, grid.distance_step)
    v_grid = _uniform_grid(0.0, hor.speed_limit, grid.speed_step)
    actions = _action_set(scenario, grid)
    if not (0.0 <= hor.initial_speed <= hor.speed_limit):
        raise ValueError("initial speed is outside the speed grid")

    def mask_premature(values_t: np.ndarray, t: float) -> None:
        # Before a window opens, no legal trajectory can already be past
        # that stop line; leaving those nodes finite would let interpolation
        # leak their "already crossed" value into states waiting at the line.
        for inter in scenario.intersections:
            earliest = min(w.start for w in inter.windows)
            if t <= earliest:
                values_t[d_grid > inter.position, :] = BIG

    terminal = np.zeros((len(d_grid), len(v_grid)))
    mask_premature(terminal, n * dt)
    values = [terminal]
    for stage in range(n - 1, -1, -1):
        nxt = values[0]
        best = np.full((len(d_grid), len(v_grid)), BIG)
        t_start = stage * dt
        def relax(j: int, accel: float, v_end_j: float, disp_j: float):
            future = _interp(nxt, d_grid + disp_j, v_end_j, d_grid, v_grid)
            cost = float(_stage_cost(scenario, np.array([v_end_j]), accel)[0])
            total = cost + future
            total = np.where(future >= BIG_CUT, BIG, total)
            blocked = _red_blocked(scenario, t_start, d_grid, disp_j)
            blocked |= _doomed(scenario, t_start + dt, d_grid + disp_j, v_end_j)
            total = np.where(blocked, BIG, total)
            best[:, j] = np.minimum(best[:, j], total)

        for accel in actions:
            v_end = v_grid + accel * dt
            valid = (v_end >= -1e-12) & (v_end <= hor.speed_limit + 1e-12)
            for j in np.flatnonzero(valid):
                relax(j, accel, float(np.clip(v_end[j], 0.0, hor.speed_limit)),
                      float((v_grid[j] + np.clip(v_end[j], 0.0, hor.speed_limit))
                            * 0.5 * dt))
        # Exact-stop action: speeds off the action lattice could otherwise
        # never reach zero and would creep across stop lines.
        brake = abs(hor.accel_min)
        for j in np.flatnonzero((v_grid > 0.0) & (v_grid <= brake * dt + 1e-12)):
            relax(j, float(-v_grid[j] / dt), 0.0, float(v_grid[j] * 0.5 * dt))
        mask_premature(best, t_start)
        values.insert(0, best)

    start_value = float(_interp(values[0], np.array([0.0]), hor.initial_speed,
                                d_grid, v_grid)[0])
    if start_value >= BIG_CUT:
        raise ValueError("no feasible policy from the initial state on this grid")

    # Greedy forward pass on the continuous state; ties take the lowest
    # action index so the rollout is deterministic. The doomed-state mask
    # keeps the continuous state out of wedges the grid cannot resolve.
    accel_out = []
    d_now, v_now = 0.0, hor.initial_speed
    brake = abs(hor.accel_min)
    for stage in range(n):
        nxt = values[stage + 1]
        t_start = stage * dt
        candidates = list(actions)
        if 0.0 < v_now <= brake * dt + 1e-12:
            candidates.append(-v_now / dt)  # exact stop
        best_cost, best_accel, best_next = math.inf, None, None
        for accel in candidates:
            v_end = v_now + accel * dt
            if v_end < -1e-12 or v_end > hor.speed_limit + 1e-12:
                continue
            v_end = min(max(v_end, 0.0), hor.speed_limit)
            disp = (v_now + v_end) * 0.5 * dt
            if _red_blocked(scenario, t_start, np.array([d_now]), disp)[0]:
                continue
            if _doomed(scenario, t_start + dt, np.array([d_now + disp]), v_end)[0]:
                continue
            future = float(_interp(nxt, np.array([d_now + disp]), v_end,
                                   d_grid, v_grid)[0])
            if future >= BIG_CUT:
                continue
            cost = float(_stage_cost(scenario, np.array([v_end]), accel)[0]) + future
            if cost < best_cost - 1e-12:
                best_cost, best_accel, best_next = cost, accel, (d_now + disp, v_end)
        if best_accel is None:
            raise ValueError(f"forward rollout dead-ends at stage {stage}")
        accel_out.append(best_accel)
        d_now, v_now = best_next

    traj = rollout(hor.initial_speed, np.array(accel_out), dt)
    breakdown = evaluate_true_objective(traj, scenario)
    return DpResult(trajectory=traj, objective=breakdown.total, breakdown=breakdown,
                    distance_grid=d_grid, speed_grid=v_grid, actions=actions,
                    cost_to_go=values)


def fuel_wait_curve(scenario: Scenario, offsets, solve_fn) -> list[tuple[float, float]]:
    """(wait time, fuel) pairs across departure offsets.

    solve_fn maps a scenario to a Trajectory (any engine); the metric window
    runs from 300 m before each intersection to 300 m after plus speed
    recovery, and wait time is the excess over free-flow travel time.
    """
    from .metrics import run_metrics
    from .testkit import with_departure_offset

    points = []
    for offset in offsets:
        shifted = with_departure_offset(scenario, offset)
        traj = solve_fn(shifted)
        metrics = run_metrics(traj, shifted)
        points.append((metrics.wait_time, metrics.fuel_grams))
    return points
