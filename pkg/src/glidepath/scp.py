"""Sequential convex optimization for a fixed green-window selection.

Each iteration linearizes the fuel model around the previous iterate: the
per-step fuel rate is approximated by (rate/power ratio) * traction power,
with traction power expanded in the acceleration decision vector through
v = v0 + dt * D a. An affine correction keeps the approximation exact at the
linearization point, including idle and braking steps where the raw ratio is
singular (see linearization_ratios). Trust-region boxes bound how far speeds
and accelerations may move per iteration; turning limits enter as
piecewise-linear penalties around the previous crossing instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import powertrain
from .kinematics import (CrossingRecord, InfeasibleRolloutError, Trajectory,
                         crossing_record, integration_matrix, position_matrix, rollout)
from .qp import QuadraticProgram, SoftPenalty, solve_qp
from .scenario import EPS_POSITION, Scenario
from .signals import WindowSelection, crossing_valid, turn_speed_limits

# Indefinite fuel quadratics are damped with a proximal ridge centered at the
# previous iterate: value and gradient at the linearization point are
# untouched, while the QP Hessian gains a healthy smallest eigenvalue.
PROX_EIGENVALUE_FLOOR = 0.5


class InfeasibleSelectionError(RuntimeError):
    """No trajectory satisfies the kinematic bounds and this window choice."""


@dataclass
class ObjectiveBreakdown:
    fuel: float
    time: float
    comfort: float
    soft_penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.fuel + self.time + self.comfort + self.soft_penalty


@dataclass
class IterationRecord:
    delta_fuel: float
    delta_speed: float
    delta_cross: float
    delta_total: float
    true_objective: float
    consistency_gap: float | None  # model-vs-true relative gap at linearization
    reinitialized: bool


@dataclass
class ConvergenceReport:
    iterations: list[IterationRecord]
    cause: str                      # converged | max-iter | reinitialized-then-converged | infeasible
    reinit_count: int = 0

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)


@dataclass
class SolveResult:
    trajectory: Trajectory
    selection: WindowSelection
    fuel_grams: float
    fuel_rates: np.ndarray
    powers: np.ndarray
    crossings: list[CrossingRecord | None]
    breakdown: ObjectiveBreakdown
    report: ConvergenceReport
    feasible: bool
    iterate_trajectories: list[Trajectory] | None = None

    @property
    def objective(self) -> float:
        return self.breakdown.total


@dataclass
class SubproblemData:
    """One iteration's convexified QP plus the pieces needed to audit it."""

    hessian: np.ndarray          # model quadratic (may be indefinite pre-repair)
    gradient: np.ndarray
    constant: float
    qp: QuadraticProgram
    ratios: np.ndarray | None = None  # rate/power scaling, None for the power objective
    prev_speeds: np.ndarray | None = None
    prev_powers: np.ndarray | None = None
    prev_rates: np.ndarray | None = None

    def model_value(self, accel: np.ndarray) -> float:
        a = np.asarray(accel, dtype=float)
        return float(0.5 * a @ self.hessian @ a + self.gradient @ a + self.constant)


@dataclass
class _Workspace:
    """Per-scenario constant matrices."""

    n: int
    dt: float
    integ: np.ndarray       # dt * D, so speeds[1:] = v0 + integ @ a
    pos: np.ndarray         # d[1:] = pos @ a + v0 * t
    diff: np.ndarray        # (N-1, N) consecutive difference operator


def _workspace(scenario: Scenario) -> _Workspace:
    n = scenario.horizon.steps
    dt = scenario.horizon.dt
    diff = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    diff[idx, idx] = -1.0
    diff[idx, idx + 1] = 1.0
    return _Workspace(n=n, dt=dt, integ=dt * integration_matrix(n),
                      pos=position_matrix(n, dt), diff=diff)


def _position_row(ws: _Workspace, v0: float, t: float) -> tuple[np.ndarray, float]:
    """Coefficients so that d(t) = row . a + const under linear interpolation."""
    m = int(math.floor(t / ws.dt + 1e-12))
    phi = t / ws.dt - m
    row = np.zeros(ws.n)
    if m >= ws.n:
        return ws.pos[ws.n - 1].copy(), v0 * ws.n * ws.dt
    if m >= 1:
        row += (1.0 - phi) * ws.pos[m - 1]
    row += phi * ws.pos[m]
    return row, v0 * t


def _comfort_hessian(ws: _Workspace, scenario: Scenario) -> np.ndarray:
    w = scenario.weights
    return 2.0 * w.comfort * (np.eye(ws.n) + w.jerk_ratio * ws.diff.T @ ws.diff)


def _time_terms(ws: _Workspace, scenario: Scenario) -> tuple[np.ndarray, float]:
    w_t = scenario.weights.time
    v0 = scenario.horizon.initial_speed
    grad = -(w_t / ws.n) * (ws.integ.T @ np.ones(ws.n))
    return grad, -w_t * v0


def _crossing_rows(ws: _Workspace, scenario: Scenario, selection: WindowSelection,
                   eps: float = EPS_POSITION):
    rows, ubs = [], []
    v0 = scenario.horizon.initial_speed
    duration = scenario.horizon.duration
    for inter, idx in zip(scenario.intersections, selection.indices):
        window = inter.windows[idx]
        t_open = min(max(window.start, 0.0), duration)
        t_close = min(max(window.end, 0.0), duration)
        row_o, const_o = _position_row(ws, v0, t_open)
        rows.append(row_o)
        ubs.append(inter.position - eps - const_o)
        row_c, const_c = _position_row(ws, v0, t_close)
        rows.append(-row_c)
        ubs.append(-(inter.position + eps) + const_c)
    return rows, ubs


def _global_speed_rows(ws: _Workspace, scenario: Scenario,
                       v_lo: np.ndarray | None = None, v_hi: np.ndarray | None = None):
    hor = scenario.horizon
    lo = np.zeros(ws.n) if v_lo is None else v_lo
    hi = np.full(ws.n, hor.speed_limit) if v_hi is None else v_hi
    v0 = hor.initial_speed
    rows = [ws.integ, -ws.integ]
    ubs = [hi - v0, v0 - lo]
    return rows, ubs


def _jerk_rows(ws: _Workspace, scenario: Scenario):
    hor = scenario.horizon
    step_up = hor.jerk_max * ws.dt
    step_dn = hor.jerk_min * ws.dt
    return [ws.diff, -ws.diff], [np.full(ws.n - 1, step_up), np.full(ws.n - 1, -step_dn)]


def _stack_rows(parts_rows, parts_ubs):
    rows = []
    for r in parts_rows:
        arr = np.atleast_2d(np.asarray(r, dtype=float))
        rows.append(arr)
    ubs = [np.atleast_1d(np.asarray(u, dtype=float)) for u in parts_ubs]
    return np.vstack(rows), np.concatenate(ubs)


def _bracket_samples(t_cross: float, dt: float, n: int) -> list[int]:
    """The three sample indices straddling a crossing instant, clipped."""
    k_star = int(round(t_cross / dt))
    return sorted({min(max(k, 0), n) for k in (k_star - 1, k_star, k_star + 1)})


def _turn_penalties(ws: _Workspace, scenario: Scenario,
                    crossings: list[CrossingRecord | None]) -> tuple[SoftPenalty, ...]:
    pens: list[SoftPenalty] = []
    v0 = scenario.horizon.initial_speed
    slope = scenario.solver.soft_penalty_slope
    for inter, rec in zip(scenario.intersections, crossings):
        if inter.turn is None or rec is None:
            continue
        limits = turn_speed_limits(inter.turn)
        for k in _bracket_samples(rec.time, ws.dt, ws.n):
            if 1 <= k <= ws.n:
                pens.append(SoftPenalty(
                    coeffs=tuple(ws.integ[k - 1]),
                    threshold=limits.turn_speed - v0,
                    slope=slope, side=1,
                ))
            if 0 <= k <= ws.n - 1:
                unit = np.zeros(ws.n)
                unit[k] = 1.0
                pens.append(SoftPenalty(coeffs=tuple(unit), threshold=limits.accel_max,
                                        slope=slope, side=1))
                pens.append(SoftPenalty(coeffs=tuple(unit), threshold=limits.accel_min,
                                        slope=slope, side=-1))
    return tuple(pens)


def _turn_hard_rows(ws: _Workspace, scenario: Scenario,
                    crossings: list[CrossingRecord | None]):
    """Hard speed/acceleration rows at the samples around each turn crossing."""
    rows, ubs = [], []
    v0 = scenario.horizon.initial_speed
    for inter, rec in zip(scenario.intersections, crossings):
        if inter.turn is None or rec is None:
            continue
        limits = turn_speed_limits(inter.turn)
        for k in _bracket_samples(rec.time, ws.dt, ws.n):
            if 1 <= k <= ws.n:
                rows.append(ws.integ[k - 1])
                ubs.append(limits.turn_speed - v0)
            if 0 <= k <= ws.n - 1:
                unit = np.zeros(ws.n)
                unit[k] = 1.0
                rows.append(unit.copy())
                ubs.append(limits.accel_max)
                rows.append(-unit)
                ubs.append(-limits.accel_min)
    return rows, ubs


def _power_objective(ws: _Workspace, scenario: Scenario):
    """Traction-power surrogate used at iteration zero and on restarts."""
    veh = scenario.vehicle
    w_fc = scenario.weights.fuel
    q1 = veh.mass * ws.integ
    hessian = w_fc * (q1 + q1.T)
    gradient = w_fc * veh.mass * scenario.horizon.initial_speed * np.ones(ws.n)
    return hessian, gradient, 0.0


def init_subproblem(scenario: Scenario, selection: WindowSelection) -> SubproblemData:
    """Iteration-zero subproblem: minimize traction power, no trust region."""
    ws = _workspace(scenario)
    hor = scenario.horizon
    h_pow, g_pow, k_pow = _power_objective(ws, scenario)
    g_time, k_time = _time_terms(ws, scenario)
    hessian = h_pow + _comfort_hessian(ws, scenario)
    gradient = g_pow + g_time
    constant = k_pow + k_time

    speed_rows, speed_ubs = _global_speed_rows(ws, scenario)
    jerk_rows, jerk_ubs = _jerk_rows(ws, scenario)
    cross_rows, cross_ubs = _crossing_rows(ws, scenario, selection)
    rows, ubs = _stack_rows(speed_rows + jerk_rows + cross_rows,
                            speed_ubs + jerk_ubs + cross_ubs)
    qp = QuadraticProgram(
        hessian=hessian, gradient=gradient,
        lin_rows=rows, lin_upper=ubs,
        lower=np.full(ws.n, hor.accel_min), upper=np.full(ws.n, hor.accel_max),
    )
    return SubproblemData(hessian=hessian, gradient=gradient, constant=constant, qp=qp)


@dataclass
class _IterState:
    trajectory: Trajectory
    rates: np.ndarray
    powers: np.ndarray
    crossings: list[CrossingRecord | None]
    true_objective: ObjectiveBreakdown


def _make_state(accel: np.ndarray, scenario: Scenario) -> _IterState:
    traj = rollout(scenario.horizon.initial_speed, accel, scenario.horizon.dt)
    account = powertrain.trajectory_fuel(traj, scenario.vehicle, scenario.bsfc_line,
                                         scenario.fuel_curve)
    crossings = [crossing_record(traj, inter.position) for inter in scenario.intersections]
    breakdown = evaluate_true_objective(traj, scenario)
    breakdown.soft_penalty = turn_penalty_value(traj, scenario, crossings)
    return _IterState(trajectory=traj, rates=account.rates, powers=account.powers,
                      crossings=crossings, true_objective=breakdown)


def ratio_power_floor(scenario: Scenario) -> float:
    """Traction power below which the rate/power ratio is idle-dominated.

    At p* = idle_rate / slope the idle offset contributes as much to the
    ratio as the curve slope does; below p* the ratio rises as 1/p toward
    the singularity at zero.
    """
    slope0 = (powertrain.rate_slope_at_zero(scenario.fuel_curve)
              / scenario.vehicle.transmission_efficiency)
    if slope0 <= 0.0:
        return 1.0
    return scenario.fuel_curve.idle_rate / slope0


def linearization_ratios(powers: np.ndarray, rates: np.ndarray,
                         scenario: Scenario) -> np.ndarray:
    """Per-step rate/power scaling with the zero-power singularity removed.

    Idle and braking steps (power at or below the idle-dominated floor) take
    the ratio evaluated at the floor itself, which continues the map
    continuously; an affine correction elsewhere keeps every step's model
    exact at the linearization point regardless of the ratio used.
    """
    p_floor = ratio_power_floor(scenario)
    slope0 = (powertrain.rate_slope_at_zero(scenario.fuel_curve)
              / scenario.vehicle.transmission_efficiency)
    ratio_at_floor = (scenario.fuel_curve.idle_rate + slope0 * p_floor) / p_floor
    return np.where(powers > p_floor, rates / np.maximum(powers, 1e-300), ratio_at_floor)


def build_subproblem(prev: _IterState, scenario: Scenario,
                     selection: WindowSelection) -> SubproblemData:
    """Convexified subproblem around the previous iterate with trust region."""
    ws = _workspace(scenario)
    hor = scenario.horizon
    veh = scenario.vehicle
    cfg = scenario.solver
    w_fc = scenario.weights.fuel
    v0 = hor.initial_speed

    rates = prev.rates
    powers = prev.powers
    v_prev = prev.trajectory.speed[1:]
    a_prev = prev.trajectory.accel
    r = linearization_ratios(powers, rates, scenario)

    beta = 0.5 * veh.air_density * veh.drag_coeff * veh.frontal_area
    mgf = veh.mass * powertrain.GRAVITY * veh.rolling_resistance
    w_aero = r * beta * v_prev

    q1 = veh.mass * (r[:, None] * ws.integ) + ws.integ.T @ (w_aero[:, None] * ws.integ)
    h_fuel = w_fc * ws.dt * (q1 + q1.T)
    g_fuel = w_fc * ws.dt * (veh.mass * v0 * r + mgf * ws.integ.T @ r
                             + 2.0 * v0 * ws.integ.T @ w_aero)
    k_fuel = w_fc * ws.dt * (float(np.sum(rates)) - float(r @ powers)
                             + mgf * v0 * float(np.sum(r)) + v0 * v0 * float(np.sum(w_aero)))

    g_time, k_time = _time_terms(ws, scenario)
    hessian = h_fuel + _comfort_hessian(ws, scenario)
    gradient = g_fuel + g_time
    constant = k_fuel + k_time

    lam_min = float(np.linalg.eigvalsh(hessian).min())
    ridge = max(0.0, PROX_EIGENVALUE_FLOOR - lam_min)
    if ridge > 0.0:
        hessian = hessian + ridge * np.eye(ws.n)
        gradient = gradient - ridge * a_prev
        constant = constant + 0.5 * ridge * float(a_prev @ a_prev)

    a_lo = np.maximum(hor.accel_min, a_prev - cfg.trust_accel)
    a_hi = np.minimum(hor.accel_max, a_prev + cfg.trust_accel)
    v_lo = np.maximum(0.0, v_prev - cfg.trust_speed)
    v_hi = np.minimum(hor.speed_limit, v_prev + cfg.trust_speed)

    speed_rows, speed_ubs = _global_speed_rows(ws, scenario, v_lo, v_hi)
    jerk_rows, jerk_ubs = _jerk_rows(ws, scenario)
    cross_rows, cross_ubs = _crossing_rows(ws, scenario, selection)
    rows, ubs = _stack_rows(speed_rows + jerk_rows + cross_rows,
                            speed_ubs + jerk_ubs + cross_ubs)
    qp = QuadraticProgram(
        hessian=hessian, gradient=gradient,
        lin_rows=rows, lin_upper=ubs,
        lower=a_lo, upper=a_hi,
        penalties=_turn_penalties(ws, scenario, prev.crossings),
    )
    return SubproblemData(hessian=hessian, gradient=gradient, constant=constant, qp=qp,
                          ratios=r, prev_speeds=v_prev, prev_powers=powers,
                          prev_rates=rates)


def build_reinit_subproblem(prev: _IterState, scenario: Scenario,
                            selection: WindowSelection) -> SubproblemData:
    """Restart subproblem: power objective, no trust region, hard turn rows."""
    ws = _workspace(scenario)
    hor = scenario.horizon
    h_pow, g_pow, k_pow = _power_objective(ws, scenario)
    g_time, k_time = _time_terms(ws, scenario)
    hessian = h_pow + _comfort_hessian(ws, scenario)
    gradient = g_pow + g_time
    constant = k_pow + k_time

    speed_rows, speed_ubs = _global_speed_rows(ws, scenario)
    jerk_rows, jerk_ubs = _jerk_rows(ws, scenario)
    cross_rows, cross_ubs = _crossing_rows(ws, scenario, selection)
    turn_rows, turn_ubs = _turn_hard_rows(ws, scenario, prev.crossings)
    rows, ubs = _stack_rows(speed_rows + jerk_rows + cross_rows + turn_rows,
                            speed_ubs + jerk_ubs + cross_ubs + turn_ubs)
    qp = QuadraticProgram(
        hessian=hessian, gradient=gradient,
        lin_rows=rows, lin_upper=ubs,
        lower=np.full(ws.n, hor.accel_min), upper=np.full(ws.n, hor.accel_max),
    )
    return SubproblemData(hessian=hessian, gradient=gradient, constant=constant, qp=qp)


def evaluate_true_objective(traj: Trajectory, scenario: Scenario) -> ObjectiveBreakdown:
    """Weighted fuel + travel-time + comfort terms with the exact fuel model."""
    w = scenario.weights
    account = powertrain.trajectory_fuel(traj, scenario.vehicle, scenario.bsfc_line,
                                         scenario.fuel_curve)
    fuel_term = w.fuel * account.total
    time_term = -w.time * float(np.mean(traj.speed[1:]))
    accel = traj.accel
    comfort = w.comfort * (float(np.sum(accel ** 2))
                           + w.jerk_ratio * float(np.sum(np.diff(accel) ** 2)))
    return ObjectiveBreakdown(fuel=fuel_term, time=time_term, comfort=comfort)


def turn_penalty_value(traj: Trajectory, scenario: Scenario,
                       crossings: list[CrossingRecord | None]) -> float:
    """Piecewise-linear turning penalty of a trajectory at its own crossings."""
    ws_dt = scenario.horizon.dt
    n = scenario.horizon.steps
    slope = scenario.solver.soft_penalty_slope
    total = 0.0
    for inter, rec in zip(scenario.intersections, crossings):
        if inter.turn is None or rec is None:
            continue
        limits = turn_speed_limits(inter.turn)
        for k in _bracket_samples(rec.time, ws_dt, n):
            if 1 <= k <= n:
                total += slope * max(0.0, float(traj.speed[k]) - limits.turn_speed)
            if 0 <= k <= n - 1:
                a_k = float(traj.accel[k])
                total += slope * max(0.0, a_k - limits.accel_max)
                total += slope * max(0.0, limits.accel_min - a_k)
    return total


def _delta_cross(state: _IterState, scenario: Scenario) -> float:
    worst = 0.0
    for inter, rec in zip(scenario.intersections, state.crossings):
        if inter.turn is None or rec is None:
            continue
        limit = turn_speed_limits(inter.turn).turn_speed
        worst = max(worst, max(0.0, rec.speed - limit))
    return worst


def _crossing_jump(prev: _IterState, new: _IterState, scenario: Scenario) -> bool:
    threshold = scenario.solver.reinit_step_threshold * scenario.horizon.dt
    for inter, rec_a, rec_b in zip(scenario.intersections, prev.crossings, new.crossings):
        if inter.turn is None or rec_a is None or rec_b is None:
            continue
        if abs(rec_b.time - rec_a.time) > threshold:
            return True
    return False


def solve_fixed_window(scenario: Scenario, selection: WindowSelection,
                       keep_iterates: bool = False) -> SolveResult:
    """Run the convex iteration loop for one window selection.

    Raises InfeasibleSelectionError when no iterate can satisfy the crossing
    constraints. On hitting the iteration cap the best feasible iterate is
    returned with cause "max-iter".
    """
    cfg = scenario.solver
    has_turn = any(i.turn is not None for i in scenario.intersections)

    sub = init_subproblem(scenario, selection)
    sol = solve_qp(sub.qp)
    if sol.status != "optimal":
        raise InfeasibleSelectionError(
            f"selection {selection.indices} infeasible: {sol.status}, row {sol.certificate}"
        )
    try:
        state = _make_state(sol.x, scenario)
    except InfeasibleRolloutError as exc:
        raise InfeasibleSelectionError(
            f"selection {selection.indices}: initialization produced an invalid rollout"
        ) from exc
    warm = sol.active_rows
    records: list[IterationRecord] = []
    iterates = [state.trajectory] if keep_iterates else None
    reinit_count = 0
    pending_reinit = False
    cause = "max-iter"
    best_state = state
    best_objective = state.true_objective.total + state.true_objective.soft_penalty

    for _ in range(cfg.max_iterations):
        if pending_reinit:
            sub = build_reinit_subproblem(state, scenario, selection)
            consistency = None
            pending_reinit = False
            reinit_count += 1
            warm = None  # restart rows are laid out differently
        else:
            sub = build_subproblem(state, scenario, selection)
            model_at_prev = sub.model_value(state.trajectory.accel)
            true_at_prev = state.true_objective.total - state.true_objective.soft_penalty
            consistency = abs(model_at_prev - true_at_prev) / max(1.0, abs(true_at_prev))
        sol = solve_qp(sub.qp, warm_rows=warm)
        new_state = None
        if sol.status == "optimal":
            try:
                new_state = _make_state(sol.x, scenario)
            except InfeasibleRolloutError:
                new_state = None
        if new_state is None:
            if not records or not records[-1].reinitialized:
                pending_reinit = True
                records.append(IterationRecord(
                    delta_fuel=math.inf, delta_speed=math.inf, delta_cross=math.inf,
                    delta_total=math.inf,
                    true_objective=state.true_objective.total,
                    consistency_gap=consistency, reinitialized=True,
                ))
                continue
            cause = "infeasible" if sol.status == "infeasible" else "max-iter"
            break
        warm = sol.active_rows if sub.ratios is not None else None

        delta_fuel = float(np.max(np.abs(new_state.rates - state.rates)))
        delta_speed = float(np.max(np.abs(new_state.trajectory.speed
                                          - state.trajectory.speed)))
        delta_cross = _delta_cross(new_state, scenario)
        delta_total = math.sqrt(delta_fuel ** 2 + delta_speed ** 2 + delta_cross ** 2)

        jump = has_turn and _crossing_jump(state, new_state, scenario)
        records.append(IterationRecord(
            delta_fuel=delta_fuel, delta_speed=delta_speed, delta_cross=delta_cross,
            delta_total=delta_total,
            true_objective=new_state.true_objective.total,
            consistency_gap=consistency,
            reinitialized=jump,
        ))
        state = new_state
        if iterates is not None:
            iterates.append(state.trajectory)
        objective_now = state.true_objective.total + state.true_objective.soft_penalty
        valid_now, _ = crossing_valid(state.trajectory, selection,
                                      scenario.intersections, scenario.horizon)
        if valid_now and objective_now < best_objective:
            best_state = state
            best_objective = objective_now

        if jump:
            pending_reinit = True
            continue
        if delta_total < cfg.stop_threshold:
            cause = "reinitialized-then-converged" if reinit_count else "converged"
            break

    if cause == "max-iter":
        state = best_state

    valid, _ = crossing_valid(state.trajectory, selection, scenario.intersections,
                              scenario.horizon)
    if cause == "infeasible" or not valid:
        raise InfeasibleSelectionError(
            f"selection {selection.indices}: no iterate satisfied crossing validity"
        )

    breakdown = state.true_objective
    fuel_grams = float(np.sum(state.rates)) * scenario.horizon.dt
    return SolveResult(
        trajectory=state.trajectory,
        selection=selection,
        fuel_grams=fuel_grams,
        fuel_rates=state.rates,
        powers=state.powers,
        crossings=state.crossings,
        breakdown=breakdown,
        report=ConvergenceReport(iterations=records, cause=cause,
                                 reinit_count=reinit_count),
        feasible=valid,
        iterate_trajectories=iterates,
    )
