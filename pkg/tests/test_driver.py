from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from glidepath.driver import (
    DriverParams,
    accel_distance,
    accel_duration,
    decel_duration,
    peak_coefficient,
    profile_accel,
    simulate_driver,
    speed_change_fraction_integral,
    speed_fraction,
)
from glidepath.kinematics import crossing_record
from glidepath.scenario import GreenWindow, TurnSpec
from glidepath.signals import light_is_green, turn_speed_limits
from glidepath.testkit import with_departure_offset

M_ACC = 9.1244
M_DEC = -0.7193


@pytest.mark.parametrize("m", [M_ACC, M_DEC])
def test_profile_zero_at_endpoints(m):
    assert profile_accel(0.0, m, 10.0, 12.0) == 0.0
    assert profile_accel(1.0, m, 10.0, 12.0) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("m", [M_ACC, M_DEC])
def test_profile_integrates_to_speed_change(m):
    # Quadrature oracle: the time integral of the acceleration profile must
    # recover the commanded speed change.
    dv, duration = 17.88, 14.0
    integral, _ = quad(lambda th: profile_accel(th, m, dv, duration), 0.0, 1.0,
                       limit=200)
    assert integral * duration == pytest.approx(dv, rel=0.005)


@pytest.mark.parametrize("m", [M_ACC, M_DEC])
def test_speed_fraction_matches_quadrature(m):
    dv, duration = 10.0, 8.0
    for theta in (0.2, 0.5, 0.8):
        integral, _ = quad(lambda th: profile_accel(th, m, dv, duration), 0.0, theta,
                           limit=200)
        assert integral * duration == pytest.approx(dv * speed_fraction(theta, m),
                                                    rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("m", [M_ACC, M_DEC])
def test_fraction_integral_matches_quadrature(m):
    integral, _ = quad(lambda th: speed_fraction(th, m), 0.0, 1.0)
    assert speed_change_fraction_integral(m) == pytest.approx(integral, rel=1e-8)


def test_empirical_formulas_dual_implementation():
    # Independent re-evaluation of the three empirical relations.
    rng = np.random.default_rng(17)
    for _ in range(50):
        v_i = float(rng.uniform(0.0, 15.0))
        v_f = float(rng.uniform(v_i + 0.1, 18.0))
        x_d = float(rng.uniform(20.0, 200.0))
        t_a = v_f - v_i
        t_a = t_a / (0.5778 + 0.0669 * (v_f - v_i) ** 0.5 - 0.0182 * v_i)
        assert accel_duration(v_i, v_f) == pytest.approx(t_a, rel=1e-12)
        x_a = (0.467 + 0.0072 * v_f - 0.0076 * v_i) * (v_f + v_i) * t_a
        assert accel_distance(v_i, v_f, t_a) == pytest.approx(x_a, rel=1e-12)
        t_d = x_d / ((0.473 + 0.0056 * v_f - 0.0049 * 0.0) * (0.0 + v_f))
        assert decel_duration(v_f, 0.0, x_d) == pytest.approx(t_d, rel=1e-12)


def test_reference_speed_duration():
    # Stop-to-limit at 17.88 m/s takes about 20.8 s under the empirical fit.
    assert accel_duration(0.0, 17.88) == pytest.approx(20.774, abs=0.01)


def test_degenerate_equal_speeds():
    assert accel_duration(12.0, 12.0) == 0.0


def test_peak_coefficient_normalizes():
    # Closed form of the shape integral times the coefficient equals dv/T.
    for m in (M_ACC, M_DEC):
        shape_integral = m * m / (2.0 * (m + 1.0) * (m + 2.0))
        assert peak_coefficient(m, 5.0, 10.0) * shape_integral == pytest.approx(0.5)


def test_all_green_constant_speed(golden):
    inter = replace(golden.intersections[0], windows=(GreenWindow(-1.0, 1000.0),))
    scenario = replace(golden, intersections=(inter,))
    traj = simulate_driver(scenario)
    assert np.allclose(traj.speed, golden.horizon.speed_limit)


def test_red_approach_stops_at_line(golden):
    inter = replace(golden.intersections[0], windows=(GreenWindow(60.0, 90.0),))
    scenario = replace(golden, intersections=(inter,))
    traj = simulate_driver(scenario)
    stopped = np.flatnonzero(traj.speed < 1e-9)
    assert len(stopped) > 0
    stop_pos = traj.position[stopped[0]]
    assert abs(stop_pos - 300.0) < 0.5
    # Waits out the red, then pulls away after the light turns green.
    assert traj.speed[int(65 / golden.horizon.dt)] > 0.0


def test_peak_deceleration_within_planner_bound(golden):
    inter = replace(golden.intersections[0], windows=(GreenWindow(60.0, 90.0),))
    scenario = replace(golden, intersections=(inter,))
    traj = simulate_driver(scenario)
    assert traj.accel.min() >= golden.horizon.accel_min - 1e-9


def test_sweep_invariants(golden):
    for offset in range(0, 60, 5):
        scenario = with_departure_offset(golden, offset)
        traj = simulate_driver(scenario)
        hor = scenario.horizon
        assert traj.speed.min() >= -1e-9
        assert traj.speed.max() <= hor.speed_limit + 1e-9
        inter = scenario.intersections[0]
        rec = crossing_record(traj, inter.position)
        if rec is not None:
            assert light_is_green(inter, rec.time), (offset, rec.time)
        # While the intersection is still ahead at a red sample, the vehicle
        # must not sit past the stop line.
        for k, t in enumerate(traj.sample_times()):
            if traj.position[k] < inter.position and not light_is_green(inter, float(t)):
                assert traj.position[k] <= inter.position + 0.5


def test_turning_pullaway_targets_turn_speed(golden):
    turn = TurnSpec(radius=25.0, friction=0.7, lateral_accel=3.0,
                    accel_min=0.0, accel_max=0.0)
    inter = replace(golden.intersections[0], windows=(GreenWindow(40.0, 90.0),),
                    turn=turn)
    scenario = replace(golden, intersections=(inter,))
    traj = simulate_driver(scenario)
    rec = crossing_record(traj, inter.position)
    limit = turn_speed_limits(turn).turn_speed
    assert rec is not None
    assert rec.speed <= limit + 1e-6
    # Back up to the speed limit downstream of the turn.
    assert traj.speed[-1] > limit + 1.0


def test_driver_params_defaults():
    params = DriverParams()
    assert params.m_accel == 9.1244
    assert params.m_decel == -0.7193
    assert params.reaction_distance == 150.0
