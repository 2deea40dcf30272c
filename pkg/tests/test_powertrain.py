import numpy as np
import pytest

from glidepath.kinematics import rollout
from glidepath.powertrain import (
    GRAVITY,
    fuel_rate,
    rate_slope_at_zero,
    sample_power,
    static_rate,
    torque_on_line,
    traction_power,
    trajectory_fuel,
)
from glidepath.scenario import BsfcLine, FuelCurve, VehicleParams

PARAMS = VehicleParams(mass=1500.0, rolling_resistance=0.01, air_density=1.2,
                       drag_coeff=0.3, frontal_area=2.2, transmission_efficiency=0.92)
LINE = BsfcLine(slope=0.0043, intercept=83.8, max_torque=220.0)
CURVE = FuelCurve(
    breakpoints=((0.0, 0.22), (5000.0, 0.57), (20000.0, 1.62),
                 (50000.0, 3.85), (100000.0, 8.0)),
    idle_rate=0.22,
)


def hand_power(v, a, p=PARAMS):
    # Independent evaluation of the longitudinal power balance.
    return (p.mass * a * v
            + p.mass * GRAVITY * p.rolling_resistance * v
            + 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v ** 3)


def test_power_zero_at_rest():
    assert traction_power(0.0, 0.0, PARAMS) == 0.0


def test_power_cruise_hand_evaluated():
    # With the fixed gravity constant the hand value is 1866.9975 W (the
    # same check with g = 9.81 would give 1867.5 W).
    expected = hand_power(10.0, 0.0)
    assert traction_power(10.0, 0.0, PARAMS) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(1866.9975, abs=1e-6)
    assert abs(expected - 1867.5) < 0.6


def test_power_accelerating_adds_inertial_term():
    base = traction_power(10.0, 0.0, PARAMS)
    assert traction_power(10.0, 1.0, PARAMS) == pytest.approx(base + 15000.0, abs=1e-9)
    assert traction_power(10.0, 1.0, PARAMS) == pytest.approx(hand_power(10.0, 1.0))


def test_power_linear_in_accel():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.uniform(0.0, 20.0)
        a1, a2 = rng.uniform(-3.0, 3.0, 2)
        diff = traction_power(v, a2, PARAMS) - traction_power(v, a1, PARAMS)
        assert diff == pytest.approx(PARAMS.mass * v * (a2 - a1), abs=1e-8)


def test_torque_zero_power():
    assert torque_on_line(0.0, LINE) == 0.0


def test_torque_constant_speed_line():
    flat = BsfcLine(slope=0.0, intercept=100.0)
    assert torque_on_line(5000.0, flat) == pytest.approx(50.0)


def test_torque_matches_bisection_oracle():
    # Oracle: re-solve intercept*T/(1 - slope*T) = P by bisection.
    def bisect(p_eng):
        lo, hi = 0.0, min(1.0 / LINE.slope - 1e-9, 1e6)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if LINE.intercept * mid / (1.0 - LINE.slope * mid) < p_eng:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    for p_eng in (100.0, 5000.0, 30000.0, 90000.0):
        assert torque_on_line(p_eng, LINE) == pytest.approx(bisect(p_eng), rel=1e-9)


def test_torque_saturation_flag():
    tight = BsfcLine(slope=0.0043, intercept=83.8, max_torque=50.0)
    sample = sample_power(15.0, 2.5, 0.0, PARAMS, tight, CURVE, 1.0)
    assert sample.saturated
    assert sample.torque == pytest.approx(50.0)
    roomy = sample_power(10.0, 0.0, 0.0, PARAMS, LINE, CURVE, 1.0)
    assert not roomy.saturated


def test_fuel_rate_idle_cases():
    assert fuel_rate(0.0, 0.0, PARAMS, LINE, CURVE, 1.0) == pytest.approx(CURVE.idle_rate)
    assert fuel_rate(-5000.0, 0.0, PARAMS, LINE, CURVE, 1.0) == pytest.approx(CURVE.idle_rate)


def test_fuel_rate_breakpoint_lookup():
    # Traction power chosen so engine power hits a tabulated breakpoint.
    power = 20000.0 * PARAMS.transmission_efficiency
    assert fuel_rate(power, 0.0, PARAMS, LINE, CURVE, 1.0) == pytest.approx(1.62)


def test_fuel_rate_monotone_in_power():
    powers = np.linspace(0.0, 120000.0, 200)
    rates = [fuel_rate(p, 0.0, PARAMS, LINE, CURVE, 1.0) for p in powers]
    assert np.all(np.diff(rates) >= -1e-12)


def test_fuel_rate_never_below_idle():
    transient = FuelCurve(breakpoints=CURVE.breakpoints, idle_rate=0.22,
                          transient_coeff=0.01)
    # A large torque drop would push the raw rate below idle.
    rate = fuel_rate(100.0, 200.0, PARAMS, LINE, transient, 1.0)
    assert rate >= transient.idle_rate


def test_fuel_rate_transient_term():
    transient = FuelCurve(breakpoints=CURVE.breakpoints, idle_rate=0.22,
                          transient_coeff=0.004)
    power = 20000.0 * PARAMS.transmission_efficiency
    torque_now = torque_on_line(20000.0, LINE)
    base = fuel_rate(power, torque_now, PARAMS, LINE, transient, 1.0)
    rising = fuel_rate(power, torque_now - 25.0, PARAMS, LINE, transient, 1.0)
    assert rising == pytest.approx(base + 0.004 * 25.0)


def test_static_rate_extrapolates_last_segment():
    rate = static_rate(CURVE, 150000.0)
    slope = (8.0 - 3.85) / 50000.0
    assert rate == pytest.approx(8.0 + slope * 50000.0)


def test_rate_slope_at_zero():
    assert rate_slope_at_zero(CURVE) == pytest.approx(0.35 / 5000.0)


def test_trajectory_fuel_all_idle():
    traj = rollout(0.0, np.zeros(90), 1.0)
    account = trajectory_fuel(traj, PARAMS, LINE, CURVE)
    assert account.total == pytest.approx(CURVE.idle_rate * 90.0)


def test_trajectory_fuel_constant_speed():
    traj = rollout(15.0, np.zeros(60), 1.0)
    account = trajectory_fuel(traj, PARAMS, LINE, CURVE)
    steady = fuel_rate(traction_power(15.0, 0.0, PARAMS), 0.0, PARAMS, LINE, CURVE, 1.0)
    assert account.total == pytest.approx(60.0 * steady, rel=1e-12)


def test_trajectory_fuel_matches_per_step_oracle():
    # Shared-accounting oracle: independently walk the steps with the scalar
    # helpers, keeping the same end-of-step speed convention.
    rng = np.random.default_rng(9)
    a = rng.uniform(-1.0, 1.0, 30)
    traj = rollout(12.0, a, 1.0)
    transient = FuelCurve(breakpoints=CURVE.breakpoints, idle_rate=0.22,
                          transient_coeff=0.004)
    account = trajectory_fuel(traj, PARAMS, LINE, transient)
    prev_torque = None
    total = 0.0
    for k in range(traj.steps):
        p = traction_power(traj.speed[k + 1], traj.accel[k], PARAMS)
        torque = torque_on_line(max(p, 0.0) / PARAMS.transmission_efficiency, LINE)
        if prev_torque is None:
            prev_torque = torque
        rate = fuel_rate(p, prev_torque, PARAMS, LINE, transient, 1.0)
        assert rate == pytest.approx(account.rates[k], abs=1e-9)
        total += rate
        prev_torque = torque
    assert account.total == pytest.approx(total, abs=1e-9)
