"""Closed-loop simulation engine, Monte Carlo driver, and structured logging."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import adaptation, mpc, synthesis
from .geometry import Polytope
from .model import (
    ModelError,
    ParamHull,
    PlantModel,
    ReferenceTrajectory,
    build_error_constraints,
    build_reference_input_set,
)


class SimError(ValueError):
    pass


@dataclass
class Scenario:
    plant: PlantModel
    hull: ParamHull
    X: Polytope
    U: Polytope
    U_delta: Polytope
    ref_points: np.ndarray           # one row per constant segment
    switch_steps: list[int]          # segment start indices (excluding 0)
    N: int
    Q: np.ndarray
    R: np.ndarray
    lam: float
    alpha: float
    gamma: float
    T: int
    seed: int
    tube_scale: float = 1.0
    du_inflation: float = 1.0
    x0_margin: float = 0.9           # interior shrink factor for x0 sampling
    theta_hat0: np.ndarray | None = None


@dataclass
class Prepared:
    """Scenario-level artifacts shared by every Monte Carlo run."""

    reference: ReferenceTrajectory
    constraints: object
    radii: adaptation.ErrorRadii
    synthesis: synthesis.SynthesisResult
    context: mpc.ControllerContext


CSV_COLUMNS = [
    "k",
    "x1", "x2",
    "xr1", "xr2",
    "xe1", "xe2",
    "s1", "s2",
    "u1", "u2",
    "du1", "du2",
    "v1", "v2",
    "theta_err",
    "innov_norm",
    "cost",
    "qp_status",
    "qp_iterations",
    "margin_state",
    "margin_input",
    "margin_rate",
    "state_ok",
    "input_ok",
    "rate_ok",
    "candidate_ok",
]


@dataclass
class SimLog:
    rows: list[dict] = field(default_factory=list)
    status: str = "completed"        # completed | initially-infeasible | falsified
    falsification_step: int | None = None
    falsification_detail: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def violation_count(self) -> int:
        return sum(
            (not r["state_ok"]) + (not r["input_ok"]) + (not r["rate_ok"])
            for r in self.rows
        )


def prepare(scenario: Scenario) -> Prepared:
    sampled = scenario.T + scenario.N + 2
    reference = ReferenceTrajectory.piecewise_constant(
        scenario.ref_points, scenario.switch_steps, sampled
    )
    Ur, d_u = build_reference_input_set(
        scenario.hull, reference, du_inflation=scenario.du_inflation
    )
    cons = build_error_constraints(
        scenario.X, scenario.U, scenario.U_delta, reference, Ur, d_u
    )
    radii = adaptation.compute_error_radii(
        scenario.hull, cons.Xe, cons.u_m, scenario.alpha
    )
    if not scenario.hull.contains(scenario.plant.theta, tol=1e-8):
        raise SimError("true plant parameters outside the uncertainty hull")
    result = synthesis.synthesize(
        scenario.hull,
        cons,
        radii,
        scenario.N,
        scenario.Q,
        scenario.R,
        gamma=scenario.gamma,
        tube_scale=scenario.tube_scale,
    )
    # Learning-rate admissibility: the regressor magnitude bound may use the
    # effective input bound of the implemented law u_e = K x_e + v with
    # |v|_inf <= h_v, which is far tighter than the static difference set.
    K = result.gains.K
    u_m_eff = float(
        np.max(np.linalg.norm(cons.Xe.vertices @ K.T, axis=1))
        + result.stacked.h_v * np.sqrt(scenario.hull.m)
    )
    u_m_bound = min(radii.u_m, u_m_eff)
    cap = (2.0 - scenario.alpha) / scenario.lam
    if radii.x_m**2 + u_m_bound**2 > cap + 1e-12:
        raise SimError(
            "learning rate too large for the constraint sets: "
            f"x_m^2+u_m^2={radii.x_m**2 + u_m_bound**2:.4g} > "
            f"(2-alpha)/lambda={cap:.4g}"
        )
    ctx = mpc.ControllerContext(
        synthesis=result, constraints=cons, hull=scenario.hull
    )
    return Prepared(
        reference=reference,
        constraints=cons,
        radii=radii,
        synthesis=result,
        context=ctx,
    )


def _check_box(p: Polytope, x, tol=1e-9):
    """Margin (min slack) and membership flag for a physical constraint set."""
    slack = p.offsets - p.normals @ np.asarray(x, dtype=float)
    margin = float(np.min(slack))
    return margin, bool(margin >= -tol)


def run(
    scenario: Scenario,
    x0,
    theta_hat0,
    prepared: Prepared | None = None,
) -> SimLog:
    """One closed-loop run with per-step invariant assertions.

    Invariant failures that falsify the underlying guarantees (estimation
    error increase, membership loss, post-acceptance infeasibility) raise;
    constraint violations are recorded in the log so the Monte Carlo
    aggregate can report them.
    """
    if prepared is None:
        prepared = prepare(scenario)
    x0 = np.asarray(x0, dtype=float)
    theta_hat0 = np.asarray(theta_hat0, dtype=float)
    if not scenario.X.contains(x0, tol=1e-9):
        raise SimError("initial state outside the state constraint set")
    if scenario.hull.membership_residual(theta_hat0) > 1e-8:
        raise SimError("initial estimate outside the uncertainty hull")

    est = adaptation.EstimatorState(
        theta_hat=theta_hat0, lam=scenario.lam, alpha=scenario.alpha
    )
    cs = mpc.initial_state(est, scenario.hull.m)
    ctx = prepared.context
    ref = prepared.reference.samples
    log = SimLog()
    sqrt_delta = prepared.radii.sqrt_delta_xtilde
    theta_true = scenario.plant.theta
    theta_err_prev = float(np.linalg.norm(theta_true - theta_hat0))

    x = x0
    u_prev_physical = None
    accepted = False
    for k in range(scenario.T):
        window = ref[k : k + scenario.N + 2]
        u, cs, diag = mpc.step(cs, x, window, ctx)
        if u is None:
            if not accepted:
                log.status = "initially-infeasible"
            else:
                log.status = "falsified"
                log.falsification_step = k
                log.falsification_detail = f"qp {diag.qp_status} after acceptance"
            return log
        accepted = True

        du = None if u_prev_physical is None else u - u_prev_physical
        x_next = scenario.plant.step(x, u)

        cs = mpc.advance_estimator(cs, x_next, x, u, ctx)
        theta_err = float(np.linalg.norm(theta_true - cs.estimator.theta_hat))
        innov = cs.estimator.last_prediction_error
        innov_norm = float(np.linalg.norm(innov))

        if theta_err > theta_err_prev + 1e-9:
            raise SimError(
                f"estimation error increased at step {k}: "
                f"{theta_err_prev!r} -> {theta_err!r}"
            )
        if scenario.hull.membership_residual(cs.estimator.theta_hat) > 1e-8:
            raise SimError(f"estimate left the hull at step {k}")
        if innov_norm > sqrt_delta + 1e-9:
            raise SimError(
                f"prediction error {innov_norm:.6g} exceeded bound "
                f"{sqrt_delta:.6g} at step {k}"
            )

        m_state, state_ok = _check_box(scenario.X, x_next)
        m_input, input_ok = _check_box(scenario.U, u)
        if du is None:
            m_rate, rate_ok = np.nan, True
        else:
            m_rate, rate_ok = _check_box(scenario.U_delta, du)

        xe = x - window[0]
        log.rows.append(
            {
                "k": k,
                "x1": x[0], "x2": x[1] if x.shape[0] > 1 else np.nan,
                "xr1": window[0][0],
                "xr2": window[0][1] if x.shape[0] > 1 else np.nan,
                "xe1": xe[0], "xe2": xe[1] if x.shape[0] > 1 else np.nan,
                "s1": diag.nominal_used[0],
                "s2": diag.nominal_used[1] if x.shape[0] > 1 else np.nan,
                "u1": u[0], "u2": u[1] if u.shape[0] > 1 else np.nan,
                "du1": np.nan if du is None else du[0],
                "du2": np.nan if du is None or u.shape[0] < 2 else du[1],
                "v1": cs.v_prev[0],
                "v2": cs.v_prev[1] if u.shape[0] > 1 else np.nan,
                "theta_err": theta_err,
                "innov_norm": innov_norm,
                "cost": diag.objective,
                "qp_status": diag.qp_status,
                "qp_iterations": diag.qp_iterations,
                "margin_state": m_state,
                "margin_input": m_input,
                "margin_rate": m_rate,
                "state_ok": state_ok,
                "input_ok": input_ok,
                "rate_ok": rate_ok,
                "candidate_ok": bool(diag.candidate_feasible),
            }
        )
        theta_err_prev = theta_err
        u_prev_physical = u
        x = x_next
    return log


@dataclass
class MonteCarloSummary:
    n_runs: int
    statuses: list[str]
    violation_count: int
    falsification_count: int
    initially_infeasible_count: int
    max_terminal_tracking_error: float
    mean_estimator_decay: float      # mean of (initial - final) Frobenius error
    logs: list[SimLog]

    def clean(self) -> bool:
        return self.violation_count == 0 and self.falsification_count == 0


def sample_initial_states(scenario: Scenario, count: int) -> np.ndarray:
    """Seeded low-discrepancy states spread over the (shrunk) state set."""
    n = scenario.plant.n
    sampler = qmc.Halton(d=n, scramble=True, seed=scenario.seed)
    unit = sampler.random(count)
    verts = scenario.X.vertices
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    pts = (lo + unit * (hi - lo)) * scenario.x0_margin
    # Non-box state sets: pull stragglers to the shrunk boundary.
    out = []
    for p in pts:
        if scenario.X.scale(scenario.x0_margin).contains(p):
            out.append(p)
        else:
            scale = scenario.x0_margin / max(
                float(np.max(scenario.X.normals @ p / scenario.X.offsets)), 1e-12
            )
            out.append(p * min(scale, 1.0))
    return np.array(out)


def sample_initial_estimates(scenario: Scenario, count: int) -> list[np.ndarray]:
    """Seeded low-discrepancy estimates spread over the uncertainty hull."""
    hull = scenario.hull
    if hull.box_bounds is not None:
        lower, upper = hull.box_bounds
        varying = np.argwhere(upper - lower > 0)
        sampler = qmc.Halton(d=max(len(varying), 1), scramble=True,
                             seed=scenario.seed + 1)
        unit = sampler.random(count)
        thetas = []
        for row in unit:
            t = lower.copy()
            for (i, j), z in zip(varying, row):
                t[i, j] = lower[i, j] + z * (upper[i, j] - lower[i, j])
            thetas.append(t)
        return thetas
    sampler = qmc.Halton(d=hull.size, scramble=True, seed=scenario.seed + 1)
    unit = sampler.random(count)
    thetas = []
    for row in unit:
        w = -np.log(np.clip(row, 1e-12, 1.0))
        w = w / np.sum(w)
        thetas.append(sum(wi * v for wi, v in zip(w, hull.vertices)))
    return thetas


def monte_carlo(
    scenario: Scenario, n_x0: int, n_theta0: int, prepared: Prepared | None = None
) -> MonteCarloSummary:
    if n_x0 < 1 or n_theta0 < 1:
        raise SimError("Monte Carlo counts must be positive")
    if prepared is None:
        prepared = prepare(scenario)
    x0s = sample_initial_states(scenario, n_x0)
    theta0s = sample_initial_estimates(scenario, n_theta0)
    logs = []
    for x0 in x0s:
        for theta0 in theta0s:
            logs.append(run(scenario, x0, theta0, prepared=prepared))
    statuses = [lg.status for lg in logs]
    violations = sum(lg.violation_count() for lg in logs)
    falsified = sum(1 for s in statuses if s == "falsified")
    initially = sum(1 for s in statuses if s == "initially-infeasible")
    terminal_errors = []
    decays = []
    for lg in logs:
        if lg.rows:
            last = lg.rows[-1]
            terminal_errors.append(
                float(np.hypot(last["xe1"], last["xe2"]))
            )
            decays.append(lg.rows[0]["theta_err"] - last["theta_err"])
    return MonteCarloSummary(
        n_runs=len(logs),
        statuses=statuses,
        violation_count=violations,
        falsification_count=falsified,
        initially_infeasible_count=initially,
        max_terminal_tracking_error=max(terminal_errors) if terminal_errors else np.nan,
        mean_estimator_decay=float(np.mean(decays)) if decays else np.nan,
        logs=logs,
    )


# -- CSV output ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_run_csv(log: SimLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in log.rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def write_summary_csv(summary: MonteCarloSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["n_runs", summary.n_runs])
        writer.writerow(["violation_count", summary.violation_count])
        writer.writerow(["falsification_count", summary.falsification_count])
        writer.writerow(
            ["initially_infeasible_count", summary.initially_infeasible_count]
        )
        writer.writerow(
            ["max_terminal_tracking_error",
             _fmt(summary.max_terminal_tracking_error)]
        )
        writer.writerow(["mean_estimator_decay", _fmt(summary.mean_estimator_decay)])
        for i, s in enumerate(summary.statuses):
            writer.writerow([f"run_{i:03d}_status", s])


def write_outputs(summary: MonteCarloSummary, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, lg in enumerate(summary.logs):
        write_run_csv(lg, out / f"run_{i:03d}.csv")
    write_summary_csv(summary, out / "summary.csv")


# -- canonical scenarios ---------------------------------------------------


def canonical_scenario(**overrides) -> Scenario:
    """Second-order tracking study configuration with tuned defaults."""
    pairs = [
        (np.array([[-0.6, 0.0], [0.35, -0.5]]), 0.8 * np.eye(2)),
        (np.array([[-0.4, 0.0], [0.35, -0.32]]), 1.2 * np.eye(2)),
        (np.array([[-0.6, 0.15], [0.6, -0.5]]), np.array([[0.8, 0.1], [0.1, 0.8]])),
        (np.array([[-0.4, 0.15], [0.6, -0.32]]), np.array([[1.2, 0.1], [0.1, 1.2]])),
    ]
    hull = ParamHull.interval_from_pairs(pairs)
    defaults = dict(
        plant=PlantModel(np.array([[-0.5, 0.0], [0.5, -0.4]]), np.eye(2)),
        hull=hull,
        X=Polytope.inf_ball(2.25, 2),
        U=Polytope.inf_ball(3.0, 2),
        U_delta=Polytope.inf_ball(2.5, 2),
        ref_points=np.array([[1.2, 1.2], [-1.0, 0.8]]),
        switch_steps=[40],
        N=5,
        Q=np.eye(2),
        R=np.eye(2),
        lam=0.045,
        alpha=0.05,
        gamma=0.9,
        T=80,
        seed=2024,
        tube_scale=0.02,
        x0_margin=0.9,
        theta_hat0=np.hstack(
            [np.array([[-0.4, 0.15], [0.35, -0.5]]),
             np.array([[1.0, 0.1], [0.1, 0.8]])]
        ),
    )
    defaults.update(overrides)
    return Scenario(**defaults)


def certainty_equivalence_scenario(**overrides) -> Scenario:
    """Singleton hull at the true parameters: all tube radii must vanish."""
    plant = PlantModel(np.array([[-0.5, 0.0], [0.5, -0.4]]), np.eye(2))
    hull = ParamHull([plant.theta], 2, 2)
    defaults = dict(
        plant=plant,
        hull=hull,
        X=Polytope.inf_ball(2.25, 2),
        U=Polytope.inf_ball(3.0, 2),
        U_delta=Polytope.inf_ball(2.5, 2),
        ref_points=np.array([[1.0, 1.0]]),
        switch_steps=[],
        N=5,
        Q=np.eye(2),
        R=np.eye(2),
        lam=0.018,
        alpha=0.5,
        gamma=0.9,
        T=60,
        seed=7,
        tube_scale=1.0,
        theta_hat0=plant.theta.copy(),
    )
    defaults.update(overrides)
    return Scenario(**defaults)
