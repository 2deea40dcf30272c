"""Green-window selection search.

The only integer structure in the problem is which green window to cross in
at each intersection. Window counts inside a planning horizon are tiny, so
the search enumerates the product of kinematically reachable windows in a
best-first order (earliest jointly reachable first), runs the convex
optimizer per candidate, and keeps the cheapest. A sound constant lower
bound allows early cutoff once the incumbent cannot be beaten.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .scenario import Scenario
from .scp import InfeasibleSelectionError, SolveResult, solve_fixed_window
from .signals import WindowSelection, earliest_arrival_time, reachable_windows

COMBINATION_WARNING_THRESHOLD = 20


class GloballyInfeasibleError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class SearchLeaf:
    selection: tuple[int, ...]
    status: str              # solved | infeasible | pruned
    objective: float | None = None
    cause: str | None = None


@dataclass
class SearchLog:
    n_combinations: int
    leaves: list[SearchLeaf] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    reachable: list[list[int]] = field(default_factory=list)

    @property
    def n_solved(self) -> int:
        return sum(1 for leaf in self.leaves if leaf.status == "solved")

    @property
    def n_pruned(self) -> int:
        return sum(1 for leaf in self.leaves if leaf.status == "pruned")


def lower_bound(scenario: Scenario) -> float:
    """Sound floor on any completion's objective.

    Fuel can never undercut idling for the whole horizon, the time reward is
    capped by the speed limit, and comfort is non-negative.
    """
    w = scenario.weights
    idle_floor = w.fuel * scenario.fuel_curve.idle_rate * scenario.horizon.duration
    best_time = -w.time * scenario.horizon.speed_limit
    return idle_floor + best_time


def _candidate_order(scenario: Scenario, per_intersection: list[list[int]]):
    """Combinations sorted by estimated crossing times, then lexicographically."""
    arrivals = [earliest_arrival_time(i.position, scenario.horizon)
                for i in scenario.intersections]

    def est_cost(combo: tuple[int, ...]) -> float:
        total = 0.0
        for inter, arrival, w_idx in zip(scenario.intersections, arrivals, combo):
            window = inter.windows[w_idx]
            total += max(arrival, window.start)
        return total

    combos = list(itertools.product(*per_intersection))
    combos.sort(key=lambda c: (est_cost(c), c))
    return combos


def search(scenario: Scenario) -> tuple[SolveResult, SearchLog]:
    """Best window selection by pruned enumeration.

    Raises GloballyInfeasibleError with per-intersection reachability
    diagnostics when no combination admits a valid crossing.
    """
    per_intersection = [reachable_windows(inter, scenario.horizon)
                        for inter in scenario.intersections]
    diagnostics = {
        f"intersection_{i}": {
            "position": inter.position,
            "n_windows": len(inter.windows),
            "reachable": reach,
        }
        for i, (inter, reach) in enumerate(zip(scenario.intersections, per_intersection))
    }
    if any(not reach for reach in per_intersection):
        raise GloballyInfeasibleError("an intersection has no reachable green window",
                                      diagnostics)

    combos = _candidate_order(scenario, per_intersection)
    log = SearchLog(n_combinations=len(combos), reachable=per_intersection)
    if len(combos) > COMBINATION_WARNING_THRESHOLD:
        log.warnings.append(
            f"{len(combos)} window combinations exceed the advisory threshold "
            f"of {COMBINATION_WARNING_THRESHOLD}"
        )

    bound = lower_bound(scenario)
    best: SolveResult | None = None
    best_key: tuple[float, tuple[int, ...]] | None = None
    cutoff = False
    for combo in combos:
        if cutoff:
            log.leaves.append(SearchLeaf(selection=combo, status="pruned"))
            continue
        try:
            result = solve_fixed_window(scenario, WindowSelection(indices=combo))
        except InfeasibleSelectionError:
            log.leaves.append(SearchLeaf(selection=combo, status="infeasible"))
            continue
        log.leaves.append(SearchLeaf(selection=combo, status="solved",
                                     objective=result.objective,
                                     cause=result.report.cause))
        key = (result.objective, combo)
        if best_key is None or key < best_key:
            best, best_key = result, key
        # The bound is global: once the incumbent touches it, nothing left
        # in the queue can strictly improve.
        if best is not None and best.objective <= bound:
            cutoff = True

    if best is None:
        raise GloballyInfeasibleError("every window combination is infeasible",
                                      diagnostics)
    return best, log
