"""Command-line front end: run engines on a scenario and emit results.

Subcommands: optimize (window search + convex refinement), baseline (human
driver model), dp (grid reference), compare (all three side by side), sweep
(repeat optimization across time weights). Every run writes one trajectory
CSV per engine plus a JSON metrics summary; outputs carry no timestamps so
identical invocations produce byte-identical files.

Exit codes: 0 success, 2 scenario validation failure, 3 infeasible problem,
4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import powertrain
from .dp import dp_solve, grid_memory_estimate
from .driver import simulate_driver
from .kinematics import Trajectory
from .metrics import percent_delta, run_metrics
from .scenario import Scenario, ScenarioError, ValidationError, load_scenario, without_turns
from .search import GloballyInfeasibleError, search
from .signals import crossing_valid
from .testkit import gen_random_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

DP_MEMORY_CAP_BYTES = 768 * 1024 * 1024
BOUND_TOL = 1e-6


class TrajectoryCheckError(RuntimeError):
    pass


def _load(args) -> Scenario:
    spec = args.scenario
    if spec.startswith("random:"):
        scenario = gen_random_scenario(int(spec.split(":", 1)[1]))
    elif spec == "random":
        scenario = gen_random_scenario(args.seed)
    else:
        scenario = load_scenario(spec)
    if args.no_turn:
        scenario = without_turns(scenario)
    return scenario


def _check_bounds(traj: Trajectory, scenario: Scenario, *, accel: bool = True,
                  jerk: bool = True) -> None:
    hor = scenario.horizon
    if traj.speed.min() < -BOUND_TOL or traj.speed.max() > hor.speed_limit + BOUND_TOL:
        raise TrajectoryCheckError("speed bound violated")
    if accel and (traj.accel.min() < hor.accel_min - BOUND_TOL
                  or traj.accel.max() > hor.accel_max + BOUND_TOL):
        raise TrajectoryCheckError("acceleration bound violated")
    if jerk and len(traj.accel) > 1:
        steps = np.diff(traj.accel)
        if (steps.min() < hor.jerk_min * hor.dt - BOUND_TOL
                or steps.max() > hor.jerk_max * hor.dt + BOUND_TOL):
            raise TrajectoryCheckError("jerk bound violated")


def _write_csv(path: Path, traj: Trajectory, scenario: Scenario) -> None:
    account = powertrain.trajectory_fuel(traj, scenario.vehicle, scenario.bsfc_line,
                                         scenario.fuel_curve)
    times = traj.sample_times()
    lines = ["t,a,v,d,P,fuel_rate"]
    for k, t in enumerate(times):
        if k < traj.steps:
            a, p, q = traj.accel[k], account.powers[k], account.rates[k]
        else:
            a, p, q = 0.0, 0.0, 0.0
        lines.append(f"{t:.10g},{a:.10g},{traj.speed[k]:.10g},"
                     f"{traj.position[k]:.10g},{p:.10g},{q:.10g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _metrics_doc(traj: Trajectory, scenario: Scenario, engine: str) -> dict:
    metrics = run_metrics(traj, scenario)
    return {
        "engine": engine,
        "fuel_grams_window": metrics.fuel_grams,
        "travel_time_s": metrics.travel_time,
        "wait_time_s": metrics.wait_time,
        "crossing_speeds": metrics.crossing_speeds,
        "horizon_fuel_grams": metrics.horizon_fuel_grams,
        "final_position_m": float(traj.position[-1]),
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_optimizer(scenario: Scenario):
    result, log = search(scenario)
    valid, margins = crossing_valid(result.trajectory, result.selection,
                                    scenario.intersections, scenario.horizon)
    if not valid:
        raise TrajectoryCheckError(f"optimizer crossing validity failed: {margins}")
    _check_bounds(result.trajectory, scenario)
    return result, log


def cmd_optimize(args) -> int:
    scenario = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, log = _run_optimizer(scenario)
    doc = _metrics_doc(result.trajectory, scenario, "optimizer")
    doc["objective"] = {
        "fuel": result.breakdown.fuel,
        "time": result.breakdown.time,
        "comfort": result.breakdown.comfort,
        "soft_penalty": result.breakdown.soft_penalty,
        "total": result.breakdown.total,
    }
    doc["selection"] = list(result.selection.indices)
    doc["convergence"] = {
        "cause": result.report.cause,
        "iterations": result.report.n_iterations,
        "reinitializations": result.report.reinit_count,
    }
    doc["search"] = {
        "combinations": log.n_combinations,
        "solved": log.n_solved,
        "pruned": log.n_pruned,
        "warnings": log.warnings,
        "leaves": [
            {"selection": list(leaf.selection), "status": leaf.status,
             "objective": leaf.objective, "cause": leaf.cause}
            for leaf in log.leaves
        ],
    }
    _write_csv(out / "optimize_trajectory.csv", result.trajectory, scenario)
    _write_json(out / "optimize_metrics.json", doc)
    print(f"optimize: objective {result.breakdown.total:.3f}, "
          f"fuel {doc['fuel_grams_window']:.2f} g, "
          f"selection {result.selection.indices}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    scenario = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = simulate_driver(scenario)
    _check_bounds(traj, scenario, accel=False, jerk=False)
    _write_csv(out / "baseline_trajectory.csv", traj, scenario)
    doc = _metrics_doc(traj, scenario, "baseline")
    _write_json(out / "baseline_metrics.json", doc)
    print(f"baseline: fuel {doc['fuel_grams_window']:.2f} g, "
          f"travel {doc['travel_time_s']:.1f} s")
    return EXIT_OK


def cmd_dp(args) -> int:
    scenario = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimate = grid_memory_estimate(scenario)
    if estimate > DP_MEMORY_CAP_BYTES:
        print(f"dp: grid estimate {estimate/1e6:.0f} MB exceeds the cap", file=sys.stderr)
        return EXIT_INTERNAL
    comparison = replace(scenario,
                         weights=replace(scenario.weights, jerk_ratio=0.0))
    result = dp_solve(comparison)
    _check_bounds(result.trajectory, comparison, jerk=False)
    _write_csv(out / "dp_trajectory.csv", result.trajectory, comparison)
    doc = _metrics_doc(result.trajectory, comparison, "dp")
    doc["objective_total"] = result.objective
    _write_json(out / "dp_metrics.json", doc)
    print(f"dp: objective {result.objective:.3f}, "
          f"fuel {doc['fuel_grams_window']:.2f} g")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    opt_result, _ = _run_optimizer(scenario)
    driver_traj = simulate_driver(scenario)
    _check_bounds(driver_traj, scenario, accel=False, jerk=False)

    opt_doc = _metrics_doc(opt_result.trajectory, scenario, "optimizer")
    drv_doc = _metrics_doc(driver_traj, scenario, "baseline")
    _write_csv(out / "optimize_trajectory.csv", opt_result.trajectory, scenario)
    _write_csv(out / "baseline_trajectory.csv", driver_traj, scenario)

    dp_doc = None
    gap = None
    estimate = grid_memory_estimate(scenario)
    if estimate <= DP_MEMORY_CAP_BYTES:
        # The grid carries no jerk state, so the jerk cost term is dropped
        # from both engines for this comparison.
        comparison = replace(scenario,
                             weights=replace(scenario.weights, jerk_ratio=0.0))
        dp_result = dp_solve(comparison)
        _check_bounds(dp_result.trajectory, comparison, jerk=False)
        _write_csv(out / "dp_trajectory.csv", dp_result.trajectory, comparison)
        dp_doc = _metrics_doc(dp_result.trajectory, comparison, "dp")
        dp_doc["objective_total"] = dp_result.objective
        opt_nojerk, _ = _run_optimizer(comparison)
        gap = (abs(opt_nojerk.breakdown.total - dp_result.objective)
               / max(abs(dp_result.objective), 1e-12))
    else:
        print(f"compare: dp skipped, grid estimate {estimate/1e6:.0f} MB over cap",
              file=sys.stderr)

    doc = {
        "optimizer": opt_doc,
        "baseline": drv_doc,
        "dp": dp_doc,
        "deltas": {
            "fuel_change_pct": percent_delta(opt_doc["fuel_grams_window"],
                                             drv_doc["fuel_grams_window"]),
            "travel_time_change_pct": percent_delta(opt_doc["travel_time_s"],
                                                    drv_doc["travel_time_s"]),
            "scp_dp_relative_gap": gap,
        },
    }
    _write_json(out / "compare_metrics.json", doc)
    print(f"compare: optimizer fuel {opt_doc['fuel_grams_window']:.2f} g vs "
          f"baseline {drv_doc['fuel_grams_window']:.2f} g"
          + (f", dp gap {gap:.4f}" if gap is not None else ""))
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load(args)
    values = [float(v) for v in args.wt.split(",") if v.strip() != ""]
    if len(values) < 2:
        print("sweep: need at least two --wt values", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(w_t: float) -> dict:
        entry = {"time_weight": w_t}
        try:
            swept = replace(scenario, weights=replace(scenario.weights, time=w_t))
            result, _ = _run_optimizer(swept)
            metrics = run_metrics(result.trajectory, swept)
            entry.update({
                "status": "solved",
                "fuel_grams_window": metrics.fuel_grams,
                "travel_time_s": metrics.travel_time,
                "max_accel": float(np.max(np.abs(result.trajectory.accel))),
                "selection": list(result.selection.indices),
                "objective_total": result.breakdown.total,
            })
        except (GloballyInfeasibleError, TrajectoryCheckError) as exc:
            entry.update({"status": "failed", "error": str(exc)})
        return entry

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(one, values))

    _write_json(out / "sweep_metrics.json", {"entries": rows})
    lines = ["time_weight,fuel_grams_window,travel_time_s,max_accel,status"]
    for row in rows:
        lines.append(
            f"{row['time_weight']:.10g},"
            f"{row.get('fuel_grams_window', float('nan')):.10g},"
            f"{row.get('travel_time_s', float('nan')):.10g},"
            f"{row.get('max_accel', float('nan')):.10g},{row['status']}"
        )
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for row in rows:
        if row["status"] == "solved":
            print(f"w_t={row['time_weight']:g}: fuel {row['fuel_grams_window']:.2f} g, "
                  f"travel {row['travel_time_s']:.2f} s, max |a| {row['max_accel']:.2f}")
        else:
            print(f"w_t={row['time_weight']:g}: {row['status']} ({row.get('error')})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glidepath",
        description="Plan fuel/time/comfort-optimal speed through signalized intersections",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (("optimize", cmd_optimize), ("baseline", cmd_baseline),
                          ("dp", cmd_dp), ("compare", cmd_compare),
                          ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True,
                       help="scenario file path, or random[:seed]")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--no-turn", action="store_true",
                       help="strip turn constraints from the scenario")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for the random scenario generator")
        p.add_argument("--jobs", type=int, default=1,
                       help="concurrent sweep entries")
        if name == "sweep":
            p.add_argument("--wt", required=True,
                           help="comma-separated time weights, e.g. 500,1000,2000")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print("scenario validation failed:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GloballyInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
