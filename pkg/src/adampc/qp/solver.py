"""Dense convex QP solver: validation, phase 1, and the active-set iteration.

The hot active-set loop lives in a kernel with two interchangeable
implementations (compiled Cython core and a pure-NumPy fallback); everything
around it -- symmetry checks, regularization, equality elimination by
null-space substitution, phase-1 feasibility, KKT residuals -- is shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from . import _pure

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_ITERATION_LIMIT = "iteration-limit"

_FEAS_TOL = 1e-9
_ACTIVE_TOL = 1e-9


class QpError(ValueError):
    pass


@dataclass
class QuadraticProgram:
    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        self.A_ineq = np.atleast_2d(np.asarray(self.A_ineq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise QpError("inconsistent H/f dimensions")
        if self.A_ineq.size == 0:
            self.A_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        if self.A_ineq.shape[1] != n or self.A_ineq.shape[0] != self.b_ineq.shape[0]:
            raise QpError("inconsistent inequality dimensions")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise QpError("H must be symmetric within 1e-10")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.shape[0]:
                raise QpError("inconsistent equality dimensions")


@dataclass
class QpOutcome:
    status: str
    solution: np.ndarray | None
    objective: float
    active_set: list[int] = field(default_factory=list)
    kkt_residual: float = np.nan
    iterations: int = 0


def _phase1(A, b):
    """Find a feasible point of A x <= b, or certify infeasibility.

    LP: min sum(s) s.t. A x - s <= b, s >= 0; a positive optimum is the
    Farkas-style infeasibility certificate.
    """
    m, n = A.shape
    if m == 0:
        return np.zeros(n)
    c = np.concatenate([np.zeros(n), np.ones(m)])
    A_ub = np.hstack([A, -np.eye(m)])
    bounds = [(None, None)] * n + [(0, None)] * m
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0 or res.fun > 1e-8:
        return None
    return res.x[:n]


def _independent_active_rows(A, b, x, tol=_ACTIVE_TOL):
    """Greedy lowest-index selection of linearly independent active rows."""
    resid = A @ x - b
    active = np.flatnonzero(resid >= -tol)
    chosen = []
    basis = np.zeros((0, A.shape[1]))
    for i in active:
        row = A[i]
        if chosen:
            proj = basis.T @ (basis @ row)
            rem = row - proj
        else:
            rem = row
        nrm = np.linalg.norm(rem)
        if nrm > 1e-8:
            basis = np.vstack([basis, rem / nrm])
            chosen.append(int(i))
        if len(chosen) == A.shape[1]:
            break
    return chosen


def _regularize(H):
    try:
        np.linalg.cholesky(H)
        return H
    except np.linalg.LinAlgError:
        pass
    Hr = H + 1e-10 * np.eye(H.shape[0])
    try:
        np.linalg.cholesky(Hr)
    except np.linalg.LinAlgError as exc:
        raise QpError("H is not positive semidefinite") from exc
    return Hr


def solve(qp: QuadraticProgram, kernel=None, max_iter: int | None = None) -> QpOutcome:
    """Solve a dense convex QP with a primal active-set method."""
    if kernel is None:
        kernel = _pure.kernel_active_set
    n = qp.H.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + qp.A_ineq.shape[0])

    H = _regularize(qp.H)
    f, A, b = qp.f, qp.A_ineq, qp.b_ineq

    # Null-space elimination of equalities: x = x_p + Z y.
    if qp.A_eq is not None and qp.A_eq.shape[0] > 0:
        x_p, _, _, _ = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)
        if np.linalg.norm(qp.A_eq @ x_p - qp.b_eq) > 1e-8:
            return QpOutcome(STATUS_INFEASIBLE, None, np.inf)
        Z = scipy.linalg.null_space(qp.A_eq)
        if Z.shape[1] == 0:
            x = x_p
            if np.any(A @ x - b > _FEAS_TOL):
                return QpOutcome(STATUS_INFEASIBLE, None, np.inf)
            obj = 0.5 * x @ qp.H @ x + qp.f @ x
            return QpOutcome(STATUS_OPTIMAL, x, float(obj), [], 0.0, 0)
        Hr = Z.T @ H @ Z
        Hr = 0.5 * (Hr + Hr.T)
        fr = Z.T @ (H @ x_p + f)
        Ar = A @ Z
        br = b - A @ x_p
        warm = None
        if qp.warm_start is not None:
            ws = np.asarray(qp.warm_start, dtype=float)
            if np.linalg.norm(qp.A_eq @ ws - qp.b_eq) <= 1e-8:
                warm = Z.T @ (ws - x_p)
        out = _solve_ineq(Hr, _regularize(Hr), fr, Ar, br, warm, kernel, max_iter)
        if out.solution is not None:
            x = x_p + Z @ out.solution
            out.solution = x
            out.objective = float(0.5 * x @ qp.H @ x + qp.f @ x)
            out.kkt_residual = _kkt_residual(qp, x, out.active_set)
        return out

    out = _solve_ineq(qp.H, H, f, A, b, qp.warm_start, kernel, max_iter)
    if out.solution is not None:
        out.kkt_residual = _kkt_residual(qp, out.solution, out.active_set)
    return out


def _solve_ineq(H_orig, H, f, A, b, warm_start, kernel, max_iter):
    n = H.shape[0]
    x0 = None
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).ravel()
        if ws.shape == (n,) and (A.shape[0] == 0 or np.max(A @ ws - b) <= _FEAS_TOL):
            x0 = ws
    if x0 is None:
        x0 = _phase1(A, b)
        if x0 is None:
            return QpOutcome(STATUS_INFEASIBLE, None, np.inf)
    w0 = _independent_active_rows(A, b, x0) if A.shape[0] else []
    x, lam, work, n_iter, status = kernel(H, f, A, b, x0, w0, max_iter)
    obj = float(0.5 * x @ H_orig @ x + f @ x)
    if status == _pure.STATUS_OPTIMAL:
        return QpOutcome(STATUS_OPTIMAL, x, obj, list(work), np.nan, n_iter)
    return QpOutcome(STATUS_ITERATION_LIMIT, x, obj, list(work), np.nan, n_iter)


def _kkt_residual(qp: QuadraticProgram, x, active_set):
    """Max of stationarity, primal feasibility, and complementarity residuals.

    Multipliers are recovered by least squares on the active rows (the kernel
    multipliers live in the reduced space when equalities were eliminated).
    """
    g = qp.H @ x + qp.f
    rows = [qp.A_ineq[i] for i in active_set]
    if qp.A_eq is not None and qp.A_eq.shape[0]:
        rows.extend(list(qp.A_eq))
    primal = 0.0
    if qp.A_ineq.shape[0]:
        primal = max(primal, float(np.max(qp.A_ineq @ x - qp.b_ineq, initial=0.0)))
    if qp.A_eq is not None and qp.A_eq.shape[0]:
        primal = max(primal, float(np.max(np.abs(qp.A_eq @ x - qp.b_eq), initial=0.0)))
    if not rows:
        return max(primal, float(np.max(np.abs(g), initial=0.0)))
    At = np.array(rows).T
    mult, _, _, _ = np.linalg.lstsq(At, -g, rcond=None)
    stationarity = float(np.max(np.abs(g + At @ mult), initial=0.0))
    compl = 0.0
    for k, i in enumerate(active_set):
        compl = max(compl, abs(mult[k] * (qp.A_ineq[i] @ x - qp.b_ineq[i])))
    return max(primal, stationarity, compl)
