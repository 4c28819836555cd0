"""Pure-NumPy active-set kernel; reference implementation for the compiled core.

The kernel assumes a strictly convex Hessian, a feasible starting point, and a
linearly independent initial working set.  Pivoting rules are deterministic:
the most negative multiplier leaves (ties broken by lowest constraint index)
and the lowest-index blocking constraint enters.
"""

from __future__ import annotations

import numpy as np

STATUS_OPTIMAL = 0
STATUS_ITERATION_LIMIT = 2


def kernel_active_set(H, f, A, b, x0, w0, max_iter, tol_p=1e-11, tol_lam=1e-10, tol_d=1e-12):
    """Minimize 0.5 x'Hx + f'x subject to A x <= b from feasible x0.

    Returns (x, lam, working_set, n_iter, status) where ``lam`` holds the
    multipliers of the full constraint list (zeros off the working set).
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    m = A.shape[0]
    work = list(w0)
    lam_full = np.zeros(m)
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        g = H @ x + f
        w = len(work)
        kkt = np.zeros((n + w, n + w))
        kkt[:n, :n] = H
        rhs = np.zeros(n + w)
        rhs[:n] = -g
        if w:
            Aw = A[work]
            kkt[:n, n:] = Aw.T
            kkt[n:, :n] = Aw
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            break
        p = sol[:n]
        lam_w = sol[n:]
        if np.max(np.abs(p)) <= tol_p * max(1.0, np.max(np.abs(x))):
            if w == 0 or np.min(lam_w) >= -tol_lam:
                lam_full[:] = 0.0
                for idx, ci in enumerate(work):
                    lam_full[ci] = lam_w[idx]
                return x, lam_full, sorted(work), n_iter, STATUS_OPTIMAL
            # Drop the most negative multiplier; lowest constraint index wins ties.
            drop = 0
            for idx in range(1, w):
                if lam_w[idx] < lam_w[drop] - 1e-15 or (
                    abs(lam_w[idx] - lam_w[drop]) <= 1e-15 and work[idx] < work[drop]
                ):
                    drop = idx
            work.pop(drop)
            continue
        alpha = 1.0
        blocking = -1
        for i in range(m):
            if i in work:
                continue
            d = A[i] @ p
            if d > tol_d:
                ratio = (b[i] - A[i] @ x) / d
                if ratio < alpha - 1e-14:
                    alpha = ratio
                    blocking = i
        if alpha < 0.0:
            alpha = 0.0
        x = x + alpha * p
        if blocking >= 0:
            work.append(blocking)
    lam_full[:] = 0.0
    for idx, ci in enumerate(work):
        lam_full[ci] = 0.0
    return x, lam_full, sorted(work), n_iter, STATUS_ITERATION_LIMIT
