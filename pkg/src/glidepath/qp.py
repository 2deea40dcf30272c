"""Dense convex QP kernel.

Solves  min 0.5 x'Hx + g'x + sum_j w_j * max(0, +/-(c_j'x - tau_j))
subject to general rows L x <= u and variable boxes.

Each piecewise-linear penalty is lifted to a slack variable (epigraph form),
so the solver itself only ever sees a plain inequality-constrained QP. That
QP is solved with a dual active-set method: start at the unconstrained
minimizer, repeatedly add the most violated constraint, and take the longest
step that keeps every multiplier non-negative. Infeasibility surfaces as an
unbounded dual ray and is reported with the offending row.

Problems here are small (tens to a few hundred variables): step directions
come from a Schur complement against the cached inverse Hessian, the working
set re-synchronizes against the exact KKT system periodically, and the final
iterate is polished with one exact solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSD_DELTA = 1e-8
SLACK_REG = 1e-8     # tiny curvature on epigraph slacks keeps the Hessian PD
FEAS_TOL = 1e-9
DUAL_TOL = 1e-12


@dataclass(frozen=True)
class SoftPenalty:
    coeffs: tuple[float, ...]
    threshold: float
    slope: float
    side: int = 1  # +1 penalizes c'x above the threshold, -1 below

    def violation(self, x: np.ndarray) -> float:
        return max(0.0, self.side * (float(np.dot(self.coeffs, x)) - self.threshold))

    def value(self, x: np.ndarray) -> float:
        return self.slope * self.violation(x)


@dataclass
class QuadraticProgram:
    hessian: np.ndarray
    gradient: np.ndarray
    lin_rows: np.ndarray | None = None   # (m, n)
    lin_upper: np.ndarray | None = None  # (m,)
    lower: np.ndarray | None = None      # (n,) -inf where free
    upper: np.ndarray | None = None
    penalties: tuple[SoftPenalty, ...] = ()


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str                      # optimal | infeasible | iteration_limit
    iterations: int
    kkt_residual: float
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_rows: tuple[int, ...] = ()
    certificate: dict | None = None  # most violated row on infeasibility


def psd_repair(hessian: np.ndarray, delta: float = PSD_DELTA) -> np.ndarray:
    """Shift H by max(0, delta - lambda_min) * I so the result is PSD."""
    h = np.asarray(hessian, dtype=float)
    try:
        # Fast path: already comfortably positive definite means zero shift.
        np.linalg.cholesky(h - delta * np.eye(h.shape[0]))
        return h.copy()
    except np.linalg.LinAlgError:
        pass
    lam_min = float(np.linalg.eigvalsh(h).min())
    shift = max(0.0, delta - lam_min)
    if shift == 0.0:
        return h.copy()
    return h + shift * np.eye(h.shape[0])


def _symmetrize(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("hessian must be square")
    asym = np.abs(h - h.T).max(initial=0.0)
    scale = max(1.0, np.abs(h).max(initial=0.0))
    if asym > 1e-10 * scale:
        raise ValueError(f"hessian asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (h + h.T)


def _assemble(qp: QuadraticProgram):
    """Lift penalties to slacks and stack every inequality as A z <= b."""
    h = _symmetrize(qp.hessian)
    g = np.asarray(qp.gradient, dtype=float)
    n = len(g)
    n_s = len(qp.penalties)
    dim = n + n_s

    h_full = np.zeros((dim, dim))
    h_full[:n, :n] = psd_repair(h)
    if n_s:
        h_full[n:, n:] = SLACK_REG * np.eye(n_s)
    g_full = np.concatenate([g, np.array([p.slope for p in qp.penalties])])

    m_lin = 0 if qp.lin_rows is None else len(qp.lin_rows)
    lo_idx = (np.flatnonzero(np.isfinite(np.asarray(qp.lower, dtype=float)))
              if qp.lower is not None else np.zeros(0, dtype=int))
    hi_idx = (np.flatnonzero(np.isfinite(np.asarray(qp.upper, dtype=float)))
              if qp.upper is not None else np.zeros(0, dtype=int))
    m_total = m_lin + len(lo_idx) + len(hi_idx) + 2 * n_s
    a = np.zeros((m_total, dim))
    b = np.zeros(m_total)
    pos = 0
    if m_lin:
        a[:m_lin, :n] = np.asarray(qp.lin_rows, dtype=float)
        b[:m_lin] = np.asarray(qp.lin_upper, dtype=float)
        pos = m_lin
    if len(lo_idx):
        a[pos + np.arange(len(lo_idx)), lo_idx] = -1.0
        b[pos:pos + len(lo_idx)] = -np.asarray(qp.lower, dtype=float)[lo_idx]
        pos += len(lo_idx)
    if len(hi_idx):
        a[pos + np.arange(len(hi_idx)), hi_idx] = 1.0
        b[pos:pos + len(hi_idx)] = np.asarray(qp.upper, dtype=float)[hi_idx]
        pos += len(hi_idx)
    for j, pen in enumerate(qp.penalties):
        # side*(c'x) - s <= side*tau  and  -s <= 0
        a[pos, :n] = pen.side * np.asarray(pen.coeffs, dtype=float)
        a[pos, n + j] = -1.0
        b[pos] = pen.side * pen.threshold
        a[pos + 1, n + j] = -1.0
        b[pos + 1] = 0.0
        pos += 2
    return h_full, g_full, a, b, h, n


def _independent_subset(a: np.ndarray, rows: list[int], tol: float = 1e-8) -> list[int]:
    """Greedy selection of linearly independent rows, preserving order."""
    kept: list[int] = []
    basis: list[np.ndarray] = []
    for idx in rows:
        v = a[idx].astype(float)
        norm0 = np.linalg.norm(v)
        if norm0 <= tol:
            continue
        for e in basis:
            v = v - (e @ v) * e
        if np.linalg.norm(v) > tol * norm0:
            kept.append(idx)
            basis.append(v / np.linalg.norm(v))
    return kept


def _kkt_solve(h: np.ndarray, a_act: np.ndarray, rhs_top: np.ndarray,
               rhs_bot: np.ndarray):
    """Solve [H A'; A 0][z; r] = [rhs_top; rhs_bot].

    Falls back to least squares when the active rows have become linearly
    dependent through numerical drift.
    """
    m = a_act.shape[0]
    if m == 0:
        return np.linalg.solve(h, rhs_top), np.zeros(0)
    dim = h.shape[0]
    kkt = np.zeros((dim + m, dim + m))
    kkt[:dim, :dim] = h
    kkt[:dim, dim:] = a_act.T
    kkt[dim:, :dim] = a_act
    rhs = np.concatenate([rhs_top, rhs_bot])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:dim], sol[dim:]


def solve_qp(qp: QuadraticProgram, max_iterations: int | None = None,
             warm_rows: tuple[int, ...] | None = None) -> QpSolution:
    """Dual active-set solve; deterministic for identical inputs.

    Ties among equally violated constraints go to the lowest row index, and
    ties in the dual ratio test drop the lowest-index active row. The step
    directions come from a Schur complement on the cached inverse Hessian;
    the final iterate is polished with one exact KKT solve.

    warm_rows seeds the working set (row indices from a related solve);
    rows with negative multipliers are shed before the main loop starts, so
    a stale hint degrades gracefully to a cold start.
    """
    h_full, g_full, a, b, h_orig, n = _assemble(qp)
    m = a.shape[0]
    if max_iterations is None:
        max_iterations = 200 + 40 * (h_full.shape[0])

    h_inv = np.linalg.inv(h_full)
    x = -h_inv @ g_full
    dim = h_full.shape[0]
    cap = dim + 8
    work: list[int] = []
    lam = np.zeros(cap)
    y_buf = np.zeros((dim, cap))    # columns of H^-1 A_W'
    a_buf = np.zeros((cap, dim))    # active rows of A
    schur_buf = np.zeros((cap, cap))  # A_W H^-1 A_W'
    n_act = 0
    iterations = 0
    status = "optimal"
    certificate = None

    if warm_rows:
        seed = _independent_subset(a, [r for r in dict.fromkeys(warm_rows)
                                       if 0 <= r < m])[:dim - 1]
        while seed:
            x_w, lam_w = _kkt_solve(h_full, a[seed], -g_full, b[seed])
            stat_res = np.abs(h_full @ x_w + g_full + a[seed].T @ lam_w).max(initial=0.0)
            prim_res = np.abs(a[seed] @ x_w - b[seed]).max(initial=0.0)
            scale = 1.0 + np.abs(g_full).max(initial=0.0)
            if not np.all(np.isfinite(x_w)) or stat_res > 1e-7 * scale or prim_res > 1e-7 * scale:
                seed = []
                break
            worst = int(np.argmin(lam_w))
            if lam_w[worst] >= -DUAL_TOL:
                x = x_w
                break
            del seed[worst]
        if seed:
            work = list(seed)
            n_act = len(work)
            lam[:n_act] = np.maximum(lam_w, 0.0)
            a_buf[:n_act] = a[work]
            y_buf[:, :n_act] = h_inv @ a[work].T
            schur_buf[:n_act, :n_act] = a_buf[:n_act] @ y_buf[:, :n_act]

    feas_scale = 1.0 + np.abs(b) if m else np.zeros(0)

    def most_violated():
        if m == 0:
            return None, 0.0
        resid = a @ x - b
        rel = resid / feas_scale
        p = int(np.argmax(rel))
        if rel[p] <= FEAS_TOL:
            return None, 0.0
        return p, float(resid[p])

    def drop(q: int):
        nonlocal n_act
        del work[q]
        keep = [i for i in range(n_act) if i != q]
        lam[: n_act - 1] = lam[keep]
        y_buf[:, : n_act - 1] = y_buf[:, keep]
        a_buf[: n_act - 1] = a_buf[keep]
        schur_buf[: n_act - 1, : n_act - 1] = schur_buf[np.ix_(keep, keep)]
        n_act -= 1

    def add(p: int, y_p: np.ndarray, cross: np.ndarray, lam_p: float):
        nonlocal n_act
        k = n_act
        work.append(p)
        lam[k] = lam_p
        y_buf[:, k] = y_p
        a_buf[k] = a[p]
        schur_buf[k, :k] = cross
        schur_buf[:k, k] = cross
        schur_buf[k, k] = float(a[p] @ y_p)
        n_act += 1

    def resync():
        # Refresh (x, lam) from the exact KKT system of the current active
        # set; incremental steps through an ill-conditioned Schur complement
        # accumulate drift otherwise.
        nonlocal x
        if not work:
            return
        x_new, lam_new = _kkt_solve(h_full, a[work], -g_full, b[work])
        if np.all(np.isfinite(x_new)):
            x = x_new
            lam[:n_act] = lam_new

    while iterations < max_iterations:
        p, viol = most_violated()
        if p is None:
            break
        # Inner loop: drive constraint p to feasibility, dropping blockers.
        lam_p = 0.0
        y_p = h_inv @ a[p]
        while iterations < max_iterations:
            iterations += 1
            if n_act:
                cross = a_buf[:n_act] @ y_p
                try:
                    r = np.linalg.solve(schur_buf[:n_act, :n_act], cross)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(schur_buf[:n_act, :n_act], cross, rcond=None)[0]
                z = -y_p + y_buf[:, :n_act] @ r
                r = -r
            else:
                cross = np.zeros(0)
                r = np.zeros(0)
                z = -y_p
            slope = float(a[p] @ z)
            degenerate = slope >= -1e-11 * max(1.0, float(a[p] @ a[p]))

            def dual_ratios():
                ratios = np.full(n_act, np.inf)
                blocking = r < -DUAL_TOL
                ratios[blocking] = lam[:n_act][blocking] / -r[blocking]
                return ratios

            if degenerate:
                if n_act == 0 or np.all(r > -DUAL_TOL):
                    status = "infeasible"
                    certificate = {"row": p, "violation": viol}
                    break
                ratios = dual_ratios()
                q = int(np.argmin(ratios))
                t_dual = float(ratios[q])
                lam[:n_act] += t_dual * r
                lam_p += t_dual
                drop(q)
                continue

            t_primal = (float(a[p] @ x) - b[p]) / (-slope)
            ratios = dual_ratios() if n_act else np.zeros(0)
            q = int(np.argmin(ratios)) if n_act else -1
            t_dual = float(ratios[q]) if n_act else np.inf
            t = min(t_primal, t_dual)
            x = x + t * z
            lam[:n_act] += t * r
            lam_p += t
            if t_dual < t_primal:
                drop(q)
                continue
            add(p, y_p, cross, lam_p)
            if n_act % 16 == 0:
                resync()
            break
        if status == "infeasible":
            break
    else:
        status = "iteration_limit"

    if iterations >= max_iterations and status == "optimal":
        status = "iteration_limit"

    def residual_of(x_cand, lam_cand) -> float:
        lam_full = np.zeros(m)
        for idx, li in zip(work, lam_cand):
            lam_full[idx] = max(li, 0.0)
        stat = h_full @ x_cand + g_full + (a.T @ lam_full if m else 0.0)
        feas = float(np.max(a @ x_cand - b, initial=0.0)) if m else 0.0
        comp = float(np.max(np.abs(lam_full * (a @ x_cand - b)), initial=0.0)) if m else 0.0
        return max(float(np.abs(stat).max(initial=0.0)), feas, comp)

    lam_list = list(lam[:n_act])
    if status == "optimal" and work:
        # Polish: re-solve the equality KKT system on the final active set,
        # keeping whichever iterate has the smaller KKT residual.
        x_pol, lam_pol = _kkt_solve(h_full, a[work], -g_full, b[work])
        if np.all(np.isfinite(x_pol)) and residual_of(x_pol, lam_pol) < residual_of(x, lam_list):
            x, lam_list = x_pol, list(lam_pol)

    kkt_residual = residual_of(x, lam_list)
    scale = 1.0 + float(np.abs(g_full).max(initial=0.0))
    if status == "optimal" and kkt_residual > 1e-6 * scale:
        if warm_rows:
            # A stale warm start can steer the incremental path astray;
            # one cold re-solve restores exactness.
            return solve_qp(qp, max_iterations=max_iterations)
        status = "iteration_limit"

    x_vars = x[:n]
    slacks = x[n:]
    objective = float(0.5 * x_vars @ h_orig @ x_vars + qp.gradient @ x_vars)
    objective += sum(p.value(x_vars) for p in qp.penalties)

    return QpSolution(
        x=x_vars,
        objective=objective,
        status=status,
        iterations=iterations,
        kkt_residual=kkt_residual if status == "optimal" else float("nan"),
        slacks=slacks,
        active_rows=tuple(work),
        certificate=certificate,
    )
