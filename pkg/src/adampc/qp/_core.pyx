# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled active-set kernel; mirrors _pure.kernel_active_set step for step."""

import numpy as np


cdef int _lu_solve(double[:, :] M, double[:] rhs, int n) nogil:
    """In-place LU with partial pivoting; solution overwrites rhs.

    Returns 0 on success, -1 on a (numerically) singular matrix.
    """
    cdef int i, j, k, piv
    cdef double best, val, factor, tmp
    for k in range(n):
        piv = k
        best = M[k, k] if M[k, k] >= 0 else -M[k, k]
        for i in range(k + 1, n):
            val = M[i, k] if M[i, k] >= 0 else -M[i, k]
            if val > best:
                best = val
                piv = i
        if best < 1e-14:
            return -1
        if piv != k:
            for j in range(n):
                tmp = M[k, j]
                M[k, j] = M[piv, j]
                M[piv, j] = tmp
            tmp = rhs[k]
            rhs[k] = rhs[piv]
            rhs[piv] = tmp
        for i in range(k + 1, n):
            factor = M[i, k] / M[k, k]
            if factor != 0.0:
                for j in range(k + 1, n):
                    M[i, j] -= factor * M[k, j]
                rhs[i] -= factor * rhs[k]
            M[i, k] = 0.0
    for k in range(n - 1, -1, -1):
        val = rhs[k]
        for j in range(k + 1, n):
            val -= M[k, j] * rhs[j]
        rhs[k] = val / M[k, k]
    return 0


def kernel_active_set(H, f, A, b, x0, w0, int max_iter,
                      double tol_p=1e-11, double tol_lam=1e-10, double tol_d=1e-12):
    """Same contract as adampc.qp._pure.kernel_active_set."""
    cdef double[:, :] Hm = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:] fm = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[:, :] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:] bm = np.ascontiguousarray(b, dtype=np.float64)
    x_arr = np.array(x0, dtype=np.float64)
    cdef double[:] x = x_arr
    cdef int n = x_arr.shape[0]
    cdef int m = Am.shape[0]

    work_arr = np.zeros(n + m, dtype=np.intc)
    cdef int[:] work = work_arr
    in_work_arr = np.zeros(m, dtype=np.intc)
    cdef int[:] in_work = in_work_arr
    cdef int w = 0
    cdef int i
    for i in range(len(w0)):
        work[w] = <int> w0[i]
        in_work[work[w]] = 1
        w += 1

    kkt_arr = np.zeros((n + m, n + m), dtype=np.float64)
    cdef double[:, :] kkt = kkt_arr
    rhs_arr = np.zeros(n + m, dtype=np.float64)
    cdef double[:] rhs = rhs_arr
    lam_arr = np.zeros(m, dtype=np.float64)
    cdef double[:] lam_full = lam_arr

    cdef int n_iter = 0, status = 2
    cdef int j, k, ci, dim, drop, blocking, singular
    cdef double g, pmax, xmax, lmin, d, ratio, alpha, ax

    while n_iter < max_iter:
        n_iter += 1
        dim = n + w
        for i in range(n):
            for j in range(n):
                kkt[i, j] = Hm[i, j]
            for j in range(w):
                kkt[i, n + j] = Am[work[j], i]
            g = fm[i]
            for j in range(n):
                g += Hm[i, j] * x[j]
            rhs[i] = -g
        for i in range(w):
            ci = work[i]
            for j in range(n):
                kkt[n + i, j] = Am[ci, j]
            for j in range(w):
                kkt[n + i, n + j] = 0.0
            rhs[n + i] = 0.0
        singular = _lu_solve(kkt[:dim, :dim], rhs[:dim], dim)
        if singular != 0:
            status = 2
            break
        pmax = 0.0
        for i in range(n):
            d = rhs[i] if rhs[i] >= 0 else -rhs[i]
            if d > pmax:
                pmax = d
        xmax = 1.0
        for i in range(n):
            d = x[i] if x[i] >= 0 else -x[i]
            if d > xmax:
                xmax = d
        if pmax <= tol_p * xmax:
            if w == 0:
                status = 0
                break
            lmin = rhs[n]
            for i in range(1, w):
                if rhs[n + i] < lmin:
                    lmin = rhs[n + i]
            if lmin >= -tol_lam:
                for i in range(w):
                    lam_full[work[i]] = rhs[n + i]
                status = 0
                break
            drop = 0
            for i in range(1, w):
                if rhs[n + i] < rhs[n + drop] - 1e-15 or (
                    (rhs[n + i] - rhs[n + drop] <= 1e-15)
                    and (rhs[n + drop] - rhs[n + i] <= 1e-15)
                    and work[i] < work[drop]
                ):
                    drop = i
            in_work[work[drop]] = 0
            for i in range(drop, w - 1):
                work[i] = work[i + 1]
            w -= 1
            continue
        alpha = 1.0
        blocking = -1
        for i in range(m):
            if in_work[i]:
                continue
            d = 0.0
            ax = 0.0
            for j in range(n):
                d += Am[i, j] * rhs[j]
                ax += Am[i, j] * x[j]
            if d > tol_d:
                ratio = (bm[i] - ax) / d
                if ratio < alpha - 1e-14:
                    alpha = ratio
                    blocking = i
        if alpha < 0.0:
            alpha = 0.0
        for i in range(n):
            x[i] += alpha * rhs[i]
        if blocking >= 0:
            work[w] = blocking
            in_work[blocking] = 1
            w += 1

    ws = sorted(int(work[i]) for i in range(w))
    return x_arr, lam_arr, ws, n_iter, status
