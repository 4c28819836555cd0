"""Receding-horizon controller: per-step QP assembly and the dual control law.

Each step condenses the nominal error dynamics (current estimate frozen across
the horizon) into a dense QP over the correction sequence v, solves it with a
warm start from the shifted previous optimum, and applies
``u = u_ref + K x_err + v[0]``.

Besides the error-coordinate tube constraints, the QP carries physical-
coordinate rows (state, input, and input rate translated by the known
reference preview).  The error-coordinate sets are built as Minkowski sums
over the whole reference hull, so by themselves they only bound the error
state; the translated rows are what pin the realized trajectory inside the
physical limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import adaptation, qp
from .geometry import Polytope
from .model import ConstraintFamily, ModelError, ParamHull, reference_input
from .synthesis import SynthesisResult


class MpcError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerState:
    estimator: adaptation.EstimatorState
    u_prev: np.ndarray | None        # physical u_{k-1}; None before the first step
    v_prev: np.ndarray               # correction v_{k-1} (zero at the first step)
    nominal_state: np.ndarray | None # propagated nominal error state
    last_sequence: np.ndarray | None # previous optimal stacked sequence
    step_index: int = 0


@dataclass
class ControllerContext:
    """Static per-run data shared by every controller step."""

    synthesis: SynthesisResult
    constraints: ConstraintFamily
    hull: ParamHull
    qp_backend: str | None = None

    @property
    def n(self) -> int:
        return self.hull.n

    @property
    def m(self) -> int:
        return self.hull.m


@dataclass
class Ocp:
    """Condensed QP over the stacked correction sequence."""

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_labels: list[str]
    Phi: np.ndarray                  # (N*n) x n state transition stack
    S: np.ndarray                    # (N*n) x (N*m) input-to-state stack
    s0: np.ndarray
    const_cost: float


@dataclass
class StepDiagnostics:
    qp_status: str
    qp_iterations: int
    objective: float
    measured_reset: bool
    candidate_feasible: bool | None  # None when no previous sequence exists
    candidate_violation: float
    ref_residual: float
    stage_cost: float
    nominal_used: np.ndarray | None = None


def initial_state(estimator: adaptation.EstimatorState, m: int) -> ControllerState:
    return ControllerState(
        estimator=estimator,
        u_prev=None,
        v_prev=np.zeros(m),
        nominal_state=None,
        last_sequence=None,
        step_index=0,
    )


def _prediction_stack(As: np.ndarray, Bhat: np.ndarray, N: int):
    """Powers stack Phi (rows i=1..N) and block-Toeplitz input map S."""
    n, m = Bhat.shape
    Phi = np.zeros((N * n, n))
    S = np.zeros((N * n, N * m))
    power = np.eye(n)
    powers = [power]
    for i in range(N):
        power = As @ power
        powers.append(power)
        Phi[i * n : (i + 1) * n] = power
    for i in range(1, N + 1):
        for j in range(i):
            S[(i - 1) * n : i * n, j * m : (j + 1) * m] = powers[i - 1 - j] @ Bhat
    return Phi, S


def shifted_candidate(cs: ControllerState) -> np.ndarray | None:
    """Previous optimal sequence shifted one step with a zero block appended."""
    if cs.last_sequence is None:
        return None
    m = cs.v_prev.shape[0]
    return np.concatenate([cs.last_sequence[m:], np.zeros(m)])


def candidate_row_violation(
    candidate: np.ndarray, v_applied: np.ndarray, sc
) -> float:
    """Worst violation of the stacked input/rate rows at the shifted candidate.

    ``v_applied`` is the first correction block of the step just taken, which
    becomes the rate-coupling term of the next instant.
    """
    m = sc.m
    mag = float(np.max(np.abs(candidate))) - sc.h_v
    diff = sc.H_delta @ candidate - sc.H_bar @ v_applied
    rate = float(np.max(np.abs(diff))) - sc.h_delta_v
    return max(mag, rate)


def _reference_inputs(theta_hat: np.ndarray, ref_window: np.ndarray, n: int):
    """u_ref for each preview step, from the current estimate."""
    urs = []
    residual = 0.0
    for i in range(ref_window.shape[0] - 1):
        ur, res = reference_input(ref_window[i], ref_window[i + 1], theta_hat, n)
        urs.append(ur)
        residual = max(residual, res)
    return np.array(urs), residual


def assemble(
    cs: ControllerState,
    s0: np.ndarray,
    ctx: ControllerContext,
    ref_window: np.ndarray,
    u_refs: np.ndarray,
) -> Ocp:
    """Condensed QP for the current measured/nominal error state.

    ``ref_window`` holds the reference states x_ref over preview steps
    0..N (at least); ``u_refs`` the matching reference inputs 0..N-1.
    """
    syn = ctx.synthesis
    est = cs.estimator
    n, m, N = ctx.n, ctx.m, syn.N
    K = syn.gains.K
    Ahat = est.theta_hat[:, :n]
    Bhat = est.theta_hat[:, n:]
    As = Ahat + Bhat @ K
    Phi, S = _prediction_stack(As, Bhat, N)

    Qb = np.kron(np.eye(N), syn.gains.Q)
    Qb[(N - 1) * n :, (N - 1) * n :] = syn.gains.P
    Rb = np.kron(np.eye(N), syn.gains.R)
    H = S.T @ Qb @ S + Rb
    H = 0.5 * (H + H.T)
    f = S.T @ Qb @ (Phi @ s0)
    const_cost = 0.5 * float(s0 @ (syn.gains.Q @ s0) + (Phi @ s0) @ Qb @ (Phi @ s0))

    sc = syn.stacked
    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    labels: list[str] = []

    def add(A_rows, b_rows, label):
        A_rows = np.atleast_2d(A_rows)
        b_rows = np.atleast_1d(b_rows)
        rows.append(A_rows)
        rhs.append(b_rows)
        labels.extend([label] * A_rows.shape[0])

    ones = np.ones(N * m)
    # correction magnitude: |v_i| <= h_v
    add(sc.H_u, sc.h_v * ones, "v-mag+")
    add(-sc.H_u, sc.h_v * ones, "v-mag-")
    # correction rate: |H_delta v - Hbar v_prev| <= h_delta_v
    shift = sc.H_bar @ cs.v_prev
    add(sc.H_delta, sc.h_delta_v * ones + shift, "v-rate+")
    add(-sc.H_delta, sc.h_delta_v * ones - shift, "v-rate-")
    # terminal rate: appending a zero block next step must stay admissible
    last = np.zeros((m, N * m))
    last[:, (N - 1) * m :] = np.eye(m)
    add(last, sc.h_delta_v * np.ones(m), "v-terminal+")
    add(-last, sc.h_delta_v * np.ones(m), "v-terminal-")
    # tube-tightened error-state rows, i = 1..N-1
    for i in range(1, N):
        Si = S[(i - 1) * n : i * n]
        Pi = Phi[(i - 1) * n : i * n]
        tube = syn.tubes.Xe_i[i] if i < N else None
        if i < N:
            add(tube.normals @ Si, tube.offsets - tube.normals @ (Pi @ s0), f"tube-{i}")
    # terminal set
    SN = S[(N - 1) * n :]
    PN = Phi[(N - 1) * n :]
    term = syn.tubes.Xe_T_bar
    add(term.normals @ SN, term.offsets - term.normals @ (PN @ s0), "terminal")

    # physical-coordinate rows over the preview
    X, U, Ud = ctx.constraints.X, ctx.constraints.U, ctx.constraints.U_delta
    theta_margin = [b.radius for b in syn.tubes.z_theta]
    zx = syn.tubes.z_xtilde.radius
    for i in range(1, N + 1):
        Si = S[(i - 1) * n : i * n]
        Pi = Phi[(i - 1) * n : i * n]
        margin = theta_margin[i] + zx
        off = X.offsets - X.normals @ (Pi @ s0 + ref_window[i]) - margin
        add(X.normals @ Si, off, f"phys-state-{i}")
    for i in range(N):
        # u_i = K s_i + v_i + u_ref_i
        sel = np.zeros((m, N * m))
        sel[:, i * m : (i + 1) * m] = np.eye(m)
        G = (K @ S[(i - 1) * n : i * n]) if i > 0 else np.zeros((m, N * m))
        Ks0 = K @ (Phi[(i - 1) * n : i * n] @ s0) if i > 0 else K @ s0
        off = U.offsets - U.normals @ (Ks0 + u_refs[i])
        add(U.normals @ (G + sel), off, f"phys-input-{i}")
    # physical input rate rows
    prev_G = None
    prev_const = None
    for i in range(N):
        G = (K @ S[(i - 1) * n : i * n]) if i > 0 else np.zeros((m, N * m))
        sel = np.zeros((m, N * m))
        sel[:, i * m : (i + 1) * m] = np.eye(m)
        Ks0 = K @ (Phi[(i - 1) * n : i * n] @ s0) if i > 0 else K @ s0
        row = G + sel
        const = Ks0 + u_refs[i]
        if i == 0:
            if cs.u_prev is not None:
                off = Ud.offsets - Ud.normals @ (const - cs.u_prev)
                add(Ud.normals @ row, off, "phys-rate-0")
        else:
            off = Ud.offsets - Ud.normals @ (const - prev_const)
            add(Ud.normals @ (row - prev_G), off, f"phys-rate-{i}")
        prev_G = row
        prev_const = const

    return Ocp(
        H=H,
        f=f,
        A=np.vstack(rows),
        b=np.concatenate(rhs),
        row_labels=labels,
        Phi=Phi,
        S=S,
        s0=np.asarray(s0, dtype=float),
        const_cost=const_cost,
    )


def step(
    cs: ControllerState,
    x_k: np.ndarray,
    ref_window: np.ndarray,
    ctx: ControllerContext,
):
    """One receding-horizon step.

    Returns ``(u_k, new_state, diagnostics)``; on an infeasible QP, ``u_k`` is
    None and the state is unchanged (the caller decides how to record the
    falsification).  The estimator is NOT advanced here — call
    ``advance_estimator`` once the plant response is available.
    """
    syn = ctx.synthesis
    n, m, N = ctx.n, ctx.m, syn.N
    x_k = np.asarray(x_k, dtype=float)
    ref_window = np.atleast_2d(np.asarray(ref_window, dtype=float))
    if ref_window.shape[0] < N + 2:
        pad = np.repeat(ref_window[-1][None, :], N + 2 - ref_window.shape[0], axis=0)
        ref_window = np.vstack([ref_window, pad])
    xe = x_k - ref_window[0]

    u_refs, ref_residual = _reference_inputs(cs.estimator.theta_hat, ref_window, n)

    # nominal reset: use the measurement whenever it lies in the step-0 tube set
    X0 = syn.tubes.Xe_i[0]
    measured_reset = X0.contains(xe, tol=1e-9)
    if measured_reset or cs.nominal_state is None:
        s0 = xe
        measured_reset = True
    else:
        s0 = cs.nominal_state

    ocp = assemble(cs, s0, ctx, ref_window, u_refs)
    warm = shifted_candidate(cs)
    prob = qp.QuadraticProgram(
        H=ocp.H, f=ocp.f, A_ineq=ocp.A, b_ineq=ocp.b, warm_start=warm
    )
    out = qp.solve(prob, backend=ctx.qp_backend)
    if out.status != qp.STATUS_OPTIMAL:
        diag = StepDiagnostics(
            qp_status=out.status,
            qp_iterations=out.iterations,
            objective=np.nan,
            measured_reset=measured_reset,
            candidate_feasible=None,
            candidate_violation=np.nan,
            ref_residual=ref_residual,
            stage_cost=np.nan,
        )
        return None, cs, diag

    v_seq = out.solution
    v0 = v_seq[:m]
    K = syn.gains.K
    u_e = K @ xe + v0
    u_k = u_e + u_refs[0]

    # propagate the nominal model one step for the next instant's fallback
    est = cs.estimator
    Ahat = est.theta_hat[:, :n]
    Bhat = est.theta_hat[:, n:]
    s_next = (Ahat + Bhat @ K) @ s0 + Bhat @ v0

    new_cs = replace(
        cs,
        u_prev=u_k,
        v_prev=v0,
        nominal_state=s_next,
        last_sequence=v_seq,
        step_index=cs.step_index + 1,
    )

    cand = shifted_candidate(new_cs)
    cand_violation = candidate_row_violation(cand, v0, syn.stacked)
    stage = 0.5 * float(s0 @ (syn.gains.Q @ s0) + v0 @ (syn.gains.R @ v0))
    diag = StepDiagnostics(
        qp_status=out.status,
        qp_iterations=out.iterations,
        objective=out.objective + ocp.const_cost,
        measured_reset=measured_reset,
        candidate_feasible=bool(cand_violation <= 1e-8),
        candidate_violation=cand_violation,
        ref_residual=ref_residual,
        stage_cost=stage,
        nominal_used=s0,
    )
    return u_k, new_cs, diag


def advance_estimator(
    cs: ControllerState,
    x_next: np.ndarray,
    x_k: np.ndarray,
    u_k: np.ndarray,
    ctx: ControllerContext,
) -> ControllerState:
    """Update the parameter estimate from the realized plant transition.

    The regressor is the raw state-input pair, for which the linear model is
    exact; the innovation is then purely estimation error, which keeps the
    Frobenius error monotone under the projected gradient law.
    """
    regressor = np.concatenate([np.asarray(x_k, float), np.asarray(u_k, float)])
    est = adaptation.update(
        cs.estimator, x_next, regressor, ctx.hull, backend=ctx.qp_backend
    )
    return replace(cs, estimator=est)
