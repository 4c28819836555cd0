"""Projection-based gradient parameter estimator and its error radii."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qp
from .geometry import Polytope
from .model import ParamHull


class AdaptationError(ValueError):
    pass


class ExcitationBoundError(AdaptationError):
    """Regressor magnitude exceeded the admissible bound (2 - alpha) / lambda.

    This signals a constraint-design bug upstream: the learning rate was not
    chosen to cover the constraint sets actually in force.
    """


@dataclass(frozen=True)
class EstimatorState:
    theta_hat: np.ndarray          # n x (n+m) estimate [A_hat, B_hat]
    lam: float                     # learning rate, > 0
    alpha: float                   # margin, in (0, 2)
    last_prediction_error: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta_hat", np.asarray(self.theta_hat, dtype=float))
        if self.lam <= 0:
            raise AdaptationError("learning rate must be positive")
        if not 0 < self.alpha < 2:
            raise AdaptationError("margin must lie in (0, 2)")

    @property
    def excitation_bound(self) -> float:
        return (2.0 - self.alpha) / self.lam


@dataclass(frozen=True)
class ErrorRadii:
    """Adaptation-induced error bounds used for tube construction.

    ``delta_xtilde`` bounds the squared one-step prediction error;
    ``delta_theta = (2 - alpha) * sqrt(delta_xtilde)`` bounds the state-space
    effect of one estimate update on any admissible regressor.
    """

    delta_xtilde: float
    delta_theta: float
    x_m: float
    u_m: float
    d_theta: float

    @property
    def sqrt_delta_xtilde(self) -> float:
        return float(np.sqrt(self.delta_xtilde))

    def admissible(self, lam: float, alpha: float) -> bool:
        return self.x_m**2 + self.u_m**2 <= (2.0 - alpha) / lam + 1e-12


def predict(est: EstimatorState, regressor) -> np.ndarray:
    """One-step prediction theta_hat @ [x; u]."""
    return est.theta_hat @ np.asarray(regressor, dtype=float)


def project_hull(M, hull: ParamHull, backend: str | None = None) -> np.ndarray:
    """Orthogonal (Frobenius) projection of M onto the parameter hull.

    Interval-box hulls project exactly by entrywise clipping; general hulls
    solve a small QP over convex-combination weights.  Idempotent up to
    solver tolerance.
    """
    M = np.asarray(M, dtype=float)
    if hull.box_bounds is not None:
        lower, upper = hull.box_bounds
        return np.clip(M, lower, upper)
    V = np.array([v.ravel() for v in hull.vertices])  # G x entries
    G = V.shape[0]
    gram = V @ V.T
    f = -V @ M.ravel()
    prob = qp.QuadraticProgram(
        H=gram + 1e-12 * np.eye(G),
        f=f,
        A_ineq=-np.eye(G),
        b_ineq=np.zeros(G),
        A_eq=np.ones((1, G)),
        b_eq=np.array([1.0]),
        warm_start=np.full(G, 1.0 / G),
    )
    out = qp.solve(prob, backend=backend)
    if out.status != qp.STATUS_OPTIMAL:
        raise AdaptationError(f"hull projection QP failed: {out.status}")
    w = np.clip(out.solution, 0.0, None)
    w = w / np.sum(w)
    return (w @ V).reshape(M.shape)


def update(
    est: EstimatorState,
    x_next,
    regressor,
    hull: ParamHull,
    backend: str | None = None,
) -> EstimatorState:
    """Gradient step on the prediction error, then projection onto the hull."""
    x_next = np.asarray(x_next, dtype=float)
    regressor = np.asarray(regressor, dtype=float)
    mag = float(regressor @ regressor)
    if mag > est.excitation_bound * (1 + 1e-9):
        raise ExcitationBoundError(
            f"regressor magnitude {mag:.6g} exceeds bound {est.excitation_bound:.6g}"
        )
    innovation = x_next - predict(est, regressor)
    stepped = est.theta_hat + est.lam * np.outer(innovation, regressor)
    projected = project_hull(stepped, hull, backend=backend)
    return replace(est, theta_hat=projected, last_prediction_error=innovation)


def compute_error_radii(
    hull: ParamHull, Xe_set: Polytope, ue_bound: float, alpha: float
) -> ErrorRadii:
    """Error radii from the hull diameter and extreme regressor magnitude.

    The prediction-error radius uses the tight product bound
    ``d_theta * max ||[x; u]||`` (the maximum over a Frobenius ball of
    matrices is attained at a rank-one matrix, so the product is exact for
    the worst regressor).
    """
    if not 0 < alpha < 2:
        raise AdaptationError("margin must lie in (0, 2)")
    d_theta = hull.diameter_frobenius()
    x_m = float(np.max(np.linalg.norm(Xe_set.vertices, axis=1)))
    u_m = float(ue_bound)
    sqrt_delta = d_theta * np.sqrt(x_m**2 + u_m**2)
    delta_xtilde = float(sqrt_delta**2)
    delta_theta = float((2.0 - alpha) * sqrt_delta)
    return ErrorRadii(
        delta_xtilde=delta_xtilde,
        delta_theta=delta_theta,
        x_m=x_m,
        u_m=u_m,
        d_theta=d_theta,
    )
