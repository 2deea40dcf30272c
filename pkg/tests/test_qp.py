import numpy as np
import pytest

from glidepath.qp import PSD_DELTA, QuadraticProgram, SoftPenalty, psd_repair, solve_qp
from glidepath.testkit import gen_random_qp, reference_qp_minimum


def test_unconstrained_parabola():
    sol = solve_qp(QuadraticProgram(hessian=np.array([[2.0]]), gradient=np.array([-2.0])))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0)


def test_active_box():
    sol = solve_qp(QuadraticProgram(hessian=np.array([[2.0]]), gradient=np.array([0.0]),
                                    lower=np.array([2.0])))
    assert sol.x[0] == pytest.approx(2.0)
    assert sol.objective == pytest.approx(4.0)


def test_psd_repair_identity_when_psd():
    h = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.array_equal(psd_repair(h), h)


def test_psd_repair_negative_identity():
    h = -np.eye(2)
    repaired = psd_repair(h)
    eigs = np.linalg.eigvalsh(repaired)
    assert eigs.min() == pytest.approx(PSD_DELTA, rel=1e-6)


def test_psd_repair_random_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(25):
        a = rng.normal(size=(10, 10))
        h = 0.5 * (a + a.T)
        repaired = psd_repair(h)
        assert np.linalg.eigvalsh(repaired).min() >= -1e-10


def test_asymmetric_hessian_rejected():
    h = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        solve_qp(QuadraticProgram(hessian=h, gradient=np.zeros(2)))


def test_random_qps_match_first_order_reference():
    for seed in range(20):
        hessian, gradient, rows, ubs = gen_random_qp(seed)
        sol = solve_qp(QuadraticProgram(hessian=hessian, gradient=gradient,
                                        lin_rows=rows, lin_upper=ubs))
        assert sol.status == "optimal"
        ref = reference_qp_minimum(hessian, gradient, rows, ubs)
        assert sol.objective == pytest.approx(ref["dual_value"], abs=1e-5)
        assert sol.kkt_residual < 1e-6


def test_perturbation_optimality():
    # No feasible perturbation of size 1e-3 may decrease the objective by
    # more than 1e-6.
    rng = np.random.default_rng(7)
    hessian, gradient, rows, ubs = gen_random_qp(123)
    sol = solve_qp(QuadraticProgram(hessian=hessian, gradient=gradient,
                                    lin_rows=rows, lin_upper=ubs))

    def objective(x):
        return 0.5 * x @ hessian @ x + gradient @ x

    base = objective(sol.x)
    tried = 0
    while tried < 50:
        direction = rng.normal(size=len(gradient))
        direction /= np.linalg.norm(direction)
        for sign in (1.0, -1.0):
            cand = sol.x + sign * 1e-3 * direction
            if np.all(rows @ cand <= ubs + 1e-12):
                tried += 1
                assert objective(cand) >= base - 1e-6


def test_soft_penalty_exactness():
    rng = np.random.default_rng(3)
    for seed in range(10):
        hessian, gradient, rows, ubs = gen_random_qp(seed + 50)
        pen = (
            SoftPenalty(coeffs=tuple(rng.normal(size=8)), threshold=0.5, slope=7.0, side=1),
            SoftPenalty(coeffs=tuple(rng.normal(size=8)), threshold=-0.2, slope=3.0, side=-1),
        )
        qp = QuadraticProgram(hessian=hessian, gradient=gradient,
                              lin_rows=rows, lin_upper=ubs, penalties=pen)
        sol = solve_qp(qp)
        assert sol.status == "optimal"
        recomputed = 0.5 * sol.x @ hessian @ sol.x + gradient @ sol.x
        recomputed += sum(p.value(sol.x) for p in pen)
        assert sol.objective == pytest.approx(recomputed, abs=1e-9)


def test_penalty_epigraph_binds():
    pen = (SoftPenalty(coeffs=(1.0,), threshold=3.0, slope=100.0, side=1),)
    sol = solve_qp(QuadraticProgram(hessian=np.array([[2.0]]),
                                    gradient=np.array([-20.0]), penalties=pen))
    # Unpenalized argmin is 10; the penalty kink pins the solution at 3.
    assert sol.x[0] == pytest.approx(3.0)


def test_determinism_bitwise():
    hessian, gradient, rows, ubs = gen_random_qp(77)
    qp = QuadraticProgram(hessian=hessian, gradient=gradient,
                          lin_rows=rows, lin_upper=ubs)
    a = solve_qp(qp)
    b = solve_qp(qp)
    assert np.array_equal(a.x, b.x)
    assert a.objective == b.objective
    assert a.active_rows == b.active_rows


def test_infeasible_certificate():
    qp = QuadraticProgram(hessian=np.array([[2.0]]), gradient=np.array([0.0]),
                          lower=np.array([1.0]), upper=np.array([-1.0]))
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert sol.certificate is not None
    assert sol.certificate["violation"] > 0


def test_infeasible_general_rows():
    rows = np.array([[1.0, 1.0], [-1.0, -1.0]])
    ubs = np.array([1.0, -2.0])  # x+y <= 1 and x+y >= 2
    sol = solve_qp(QuadraticProgram(hessian=np.eye(2), gradient=np.zeros(2),
                                    lin_rows=rows, lin_upper=ubs))
    assert sol.status == "infeasible"


def test_warm_start_matches_cold():
    hessian, gradient, rows, ubs = gen_random_qp(5)
    qp = QuadraticProgram(hessian=hessian, gradient=gradient,
                          lin_rows=rows, lin_upper=ubs)
    cold = solve_qp(qp)
    warm = solve_qp(qp, warm_rows=cold.active_rows)
    assert warm.status == "optimal"
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)
    stale = solve_qp(qp, warm_rows=(0, 1, 2, 3, 4))
    assert stale.objective == pytest.approx(cold.objective, abs=1e-7)


def test_kkt_residual_reported():
    hessian, gradient, rows, ubs = gen_random_qp(11)
    sol = solve_qp(QuadraticProgram(hessian=hessian, gradient=gradient,
                                    lin_rows=rows, lin_upper=ubs))
    assert sol.kkt_residual < 1e-6
