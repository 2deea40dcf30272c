"""Speed-trajectory planning through signalized intersections."""

from .scenario import (
    GRAVITY,
    BsfcLine,
    FuelCurve,
    GreenWindow,
    Horizon,
    Intersection,
    Scenario,
    SchemaError,
    SolverConfig,
    TurnSpec,
    ValidationError,
    VehicleParams,
    Weights,
    load_scenario,
    parse_scenario,
    serialize_scenario,
    validate_scenario,
)
from .kinematics import Trajectory, crossing_record, rollout
from .signals import WindowSelection, reachable_windows, turn_speed_limits
from .scp import SolveResult, evaluate_true_objective, solve_fixed_window
from .search import GloballyInfeasibleError, search
from .driver import simulate_driver
from .dp import DpGrid, dp_solve
from .metrics import RunMetrics, run_metrics

__version__ = "0.1.0"
