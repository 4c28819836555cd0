"""Offline controller synthesis.

Computes the stabilizing pair (P, K), the closed-loop vertex hull, the
gamma-contractive terminal set, the adaptation-induced disturbance tubes, the
tightened state sets, and the stacked input/rate constraint matrices.  The
result serializes to a deterministic versioned text artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.spatial

from .adaptation import ErrorRadii
from .geometry import (
    Ball,
    Polytope,
    hull_of_points,
    inscribed_box_radius,
    linear_map,
    pontryagin_diff,
    pontryagin_diff_mapped_ball,
)
from .model import ConstraintFamily, ParamHull


class SynthesisError(ValueError):
    pass


@dataclass
class GainCertificate:
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    vertex_margins: np.ndarray

    def verify(self) -> None:
        np.linalg.cholesky(self.P)  # raises if not positive definite
        if np.any(self.vertex_margins <= 0):
            raise SynthesisError(
                f"nonpositive vertex margins: {self.vertex_margins.tolist()}"
            )


@dataclass
class ClosedLoopHull:
    """Vertices A_i + B_i K with norm bounds used by the tube recursion."""

    vertices: list[np.ndarray]
    a_bar: float     # max spectral norm over vertices
    a_frob: float    # max Frobenius norm over vertices


@dataclass
class TubeFamily:
    z_xtilde: Ball
    z_theta: list[Ball]          # N+1 balls, radius 0 at i = 0
    Xe_i: list[Polytope]         # tightened state sets for i = 0..N-1
    Xe_T: Polytope               # gamma-contractive terminal set
    Xe_T_bar: Polytope           # terminal set after parameter-drift tightening


@dataclass
class StackedConstraints:
    H_u: np.ndarray
    H_delta: np.ndarray
    H_bar: np.ndarray
    h_u: float
    h_delta_u: float
    h_v: float
    h_delta_v: float
    N: int
    m: int


@dataclass
class SynthesisResult:
    gains: GainCertificate
    cl_hull: ClosedLoopHull
    radii: ErrorRadii
    tubes: TubeFamily
    stacked: StackedConstraints
    N: int
    tube_scale: float


def _vertex_margins(hull: ParamHull, K, P, Q) -> np.ndarray:
    margins = []
    for i in range(hull.size):
        Acl = hull.A(i) + hull.B(i) @ K
        M = P - Acl.T @ P @ Acl - Q
        margins.append(float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T)))))
    return np.array(margins)


def synthesize_gain(
    hull: ParamHull, Q, R, gamma: float = 0.9, max_retries: int = 8
) -> GainCertificate:
    """Riccati gain at the hull centroid, certified at every vertex.

    If a vertex margin is nonpositive the Riccati weights are inflated and the
    synthesis retried; the certificate always reports margins against the
    original Q.
    """
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    np.linalg.cholesky(Q)
    np.linalg.cholesky(R)
    centroid = hull.centroid()
    Ac, Bc = centroid[:, : hull.n], centroid[:, hull.n :]
    last = None
    for attempt in range(max_retries):
        Qs = Q * (2.0**attempt)
        P = scipy.linalg.solve_discrete_are(Ac, Bc, Qs, R)
        P = 0.5 * (P + P.T)
        K = -np.linalg.solve(R + Bc.T @ P @ Bc, Bc.T @ P @ Ac)
        margins = _vertex_margins(hull, K, P, Q)
        last = margins
        if np.all(margins > 0):
            cert = GainCertificate(K=K, P=P, Q=Q, R=R, gamma=gamma, vertex_margins=margins)
            cert.verify()
            return cert
    raise SynthesisError(
        f"no common quadratic certificate found; final vertex margins {last.tolist()}"
    )


def _extreme_matrices(mats: list[np.ndarray]) -> list[np.ndarray]:
    """Prune a matrix list to the extreme points of its convex hull.

    Many interval-hull corners map to the interior of the closed-loop hull;
    dropping them is lossless for every max-over-hull computation.
    """
    if len(mats) <= 4:
        return mats
    pts = np.array([m.ravel() for m in mats])
    try:
        hull = scipy.spatial.ConvexHull(pts, qhull_options="QJ")
    except (scipy.spatial.QhullError, IndexError):
        return mats
    return [mats[i] for i in sorted(set(hull.vertices))]


def closed_loop_hull(hull: ParamHull, K) -> ClosedLoopHull:
    K = np.asarray(K, dtype=float)
    verts = [hull.A(i) + hull.B(i) @ K for i in range(hull.size)]
    # Spectral and Frobenius norms are convex, so their hull maxima are
    # attained at extreme points; pruning first changes nothing.
    verts = _extreme_matrices(verts)
    a_bar = max(float(np.linalg.norm(v, 2)) for v in verts)
    a_frob = max(float(np.linalg.norm(v)) for v in verts)
    return ClosedLoopHull(vertices=verts, a_bar=a_bar, a_frob=a_frob)


def contractive_terminal_set(
    cl: ClosedLoopHull,
    gamma: float,
    X0: Polytope,
    K,
    Ue: Polytope,
    z_x_radius: float,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> Polytope:
    """Largest-found gamma-contractive set inside X0 for the closed-loop hull.

    Backward intersection recursion from X0; if the terminal-input condition
    K (set (+) ball) inside Ue fails, the set is shrunk by a scalar backoff
    (scaling preserves contractivity).
    """
    if not 0 < gamma < 1:
        raise SynthesisError("gamma must lie in (0, 1)")
    K = np.asarray(K, dtype=float)
    omega = X0
    for _ in range(max_iter):
        rows = [omega.normals]
        offs = [omega.offsets]
        for M in cl.vertices:
            mapped = omega.normals @ M
            # A zero mapped normal means the facet is trivially satisfied
            # one step ahead (0 <= gamma * offset); drop it.
            keep = np.linalg.norm(mapped, axis=1) > 1e-12
            rows.append(mapped[keep])
            offs.append(gamma * omega.offsets[keep])
        cand = Polytope(np.vstack(rows), np.concatenate(offs))
        if cand.dim <= 4:
            # Re-hulling the vertex set yields the minimal H-representation
            # far faster than per-facet redundancy LPs.
            cand = hull_of_points(cand.vertices)
        else:
            cand = cand.remove_redundancy()
        _, cheb = cand.chebyshev_center()
        if cheb <= 1e-9:
            raise SynthesisError(
                "contractive recursion collapsed; reject gamma or loosen constraints"
            )
        # Nested decrease: converged when the previous iterate's support does
        # not exceed the new facets by more than tol.  The tolerance is
        # relative to the set scale so a geometrically shrinking iterate is
        # never mistaken for a fixed point.
        gap = max(
            omega.support(a) - b for a, b in zip(cand.normals, cand.offsets)
        )
        omega = cand
        if gap <= tol * max(float(np.max(cand.offsets)), 1e-12):
            break
    else:
        raise SynthesisError("contractive recursion did not converge")
    # Terminal-input feasibility: K (omega (+) z ball) inside Ue.
    backoff = 1.0
    for c, e in zip(Ue.normals, Ue.offsets):
        Kc = K.T @ c
        if np.linalg.norm(Kc) < 1e-14:
            continue
        vert_term = float(np.max(omega.vertices @ Kc))
        ball_term = z_x_radius * float(np.linalg.norm(Kc))
        if vert_term + ball_term > e:
            # Scaling shrinks the vertex term only; the prediction-error ball
            # is a fixed additive cost that must fit inside the budget first.
            if e - ball_term <= 0 or vert_term <= 0:
                raise SynthesisError(
                    "terminal input budget smaller than the prediction-error "
                    "feedback cost; reject the gain or enlarge the input set"
                )
            backoff = min(backoff, (e - ball_term) / vert_term)
    if backoff < 1.0:
        omega = omega.scale(backoff * (1 - 1e-12))
    return omega


def tube_radii(a_bar: float, delta_theta: float, sqrt_delta_xtilde: float, N: int, scale: float = 1.0):
    """Ball radii for the parameter-drift tubes: r_0 = 0, r_{i+1} = a_bar r_i + d."""
    if a_bar < 0 or delta_theta < 0 or N < 1:
        raise SynthesisError("invalid tube recursion inputs")
    d = scale * delta_theta
    radii = [0.0]
    for _ in range(N):
        radii.append(a_bar * radii[-1] + d)
    return radii, scale * sqrt_delta_xtilde


def tighten_sets(
    Xe: Polytope, theta_radii, z_x_radius: float, Xe_T: Polytope
) -> TubeFamily:
    """Per-step Pontryagin ball subtractions producing the tightened tube sets."""
    N = len(theta_radii) - 1
    z_x = Ball(np.zeros(Xe.dim), z_x_radius)
    Xe_i = []
    for i in range(N):
        tightened = pontryagin_diff(
            Polytope(Xe.normals, Xe.offsets - theta_radii[i]), z_x
        )
        if tightened is None or not tightened.is_c0set():
            raise SynthesisError(
                f"tightened state set empty at step {i}: tube too large for constraints"
            )
        Xe_i.append(tightened)
    Xe_T_bar = pontryagin_diff(Xe_T, Ball(np.zeros(Xe.dim), theta_radii[N]))
    if Xe_T_bar is None or not Xe_T_bar.is_c0set():
        raise SynthesisError(
            "tightened terminal set empty: tube too large for constraints"
        )
    return TubeFamily(
        z_xtilde=z_x,
        z_theta=[Ball(np.zeros(Xe.dim), r) for r in theta_radii],
        Xe_i=Xe_i,
        Xe_T=Xe_T,
        Xe_T_bar=Xe_T_bar,
    )


def build_stacked_constraints(
    N: int,
    m: int,
    Ue: Polytope,
    Ue_delta: Polytope,
    K,
    Xe: Polytope,
    d_x: float,
) -> StackedConstraints:
    """Horizon-stacked input and input-rate constraint matrices and scalars.

    The printed one-sided blocks are materialized two-sided by the consumer;
    the scalars are the largest symmetric inf-norm boxes inscribed in the
    feedback-tightened sets.
    """
    K = np.asarray(K, dtype=float)
    eye = np.eye(m)
    H_u = np.eye(N * m)
    H_delta = np.eye(N * m)
    for i in range(1, N):
        H_delta[i * m : (i + 1) * m, (i - 1) * m : i * m] = -eye
    H_bar = np.zeros((N * m, m))
    H_bar[:m, :] = eye

    h_u = inscribed_box_radius(Ue)
    h_delta_u = inscribed_box_radius(Ue_delta)
    Ve = pontryagin_diff(Ue, linear_map(K, Xe))
    if Ve is None or not Ve.is_c0set():
        raise SynthesisError("V set empty: gain too aggressive for the input budget")
    Ve_delta = pontryagin_diff_mapped_ball(Ue_delta, K, d_x)
    if Ve_delta is None or not Ve_delta.is_c0set():
        raise SynthesisError(
            "V rate set empty: gain too aggressive for the input-rate budget"
        )
    h_v = inscribed_box_radius(Ve)
    h_delta_v = inscribed_box_radius(Ve_delta)
    return StackedConstraints(
        H_u=H_u,
        H_delta=H_delta,
        H_bar=H_bar,
        h_u=h_u,
        h_delta_u=h_delta_u,
        h_v=h_v,
        h_delta_v=h_delta_v,
        N=N,
        m=m,
    )


def synthesize(
    hull: ParamHull,
    constraints: ConstraintFamily,
    radii: ErrorRadii,
    N: int,
    Q,
    R,
    gamma: float = 0.9,
    tube_scale: float = 1.0,
) -> SynthesisResult:
    """Full offline synthesis for one scenario configuration."""
    gains = synthesize_gain(hull, Q, R, gamma=gamma)
    cl = closed_loop_hull(hull, gains.K)
    theta_radii, z_x_radius = tube_radii(
        cl.a_bar, radii.delta_theta, radii.sqrt_delta_xtilde, N, scale=tube_scale
    )
    X0 = pontryagin_diff(constraints.Xe, Ball(np.zeros(constraints.Xe.dim), z_x_radius))
    if X0 is None or not X0.is_c0set():
        raise SynthesisError(
            "state set minus prediction-error tube is empty: tube too large"
        )
    Xe_T = contractive_terminal_set(
        cl, gamma, X0, gains.K, constraints.Ue, z_x_radius
    )
    tubes = tighten_sets(constraints.Xe, theta_radii, z_x_radius, Xe_T)
    stacked = build_stacked_constraints(
        N,
        hull.m,
        constraints.Ue,
        constraints.Ue_delta,
        gains.K,
        constraints.Xe,
        constraints.d_x,
    )
    return SynthesisResult(
        gains=gains,
        cl_hull=cl,
        radii=radii,
        tubes=tubes,
        stacked=stacked,
        N=N,
        tube_scale=tube_scale,
    )


# -- artifact serialization ------------------------------------------------

_MAGIC = "adampc-synthesis-artifact v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_matrix(lines, name, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines.append(f"matrix {name} {M.shape[0]} {M.shape[1]}")
    for row in M:
        lines.append(" ".join(_fmt(v) for v in row))


def save_artifact(result: SynthesisResult, path) -> None:
    lines = [_MAGIC]
    lines.append(f"scalar gamma {_fmt(result.gains.gamma)}")
    lines.append(f"scalar tube_scale {_fmt(result.tube_scale)}")
    lines.append(f"scalar horizon {result.N}")
    lines.append(f"scalar a_bar {_fmt(result.cl_hull.a_bar)}")
    lines.append(f"scalar a_frob {_fmt(result.cl_hull.a_frob)}")
    for key in ("delta_xtilde", "delta_theta", "x_m", "u_m", "d_theta"):
        lines.append(f"scalar {key} {_fmt(getattr(result.radii, key))}")
    for key in ("h_u", "h_delta_u", "h_v", "h_delta_v"):
        lines.append(f"scalar {key} {_fmt(getattr(result.stacked, key))}")
    lines.append(f"scalar m {result.stacked.m}")
    _write_matrix(lines, "K", result.gains.K)
    _write_matrix(lines, "P", result.gains.P)
    _write_matrix(lines, "Q", result.gains.Q)
    _write_matrix(lines, "R", result.gains.R)
    _write_matrix(lines, "vertex_margins", result.gains.vertex_margins[None, :])
    for i, v in enumerate(result.cl_hull.vertices):
        _write_matrix(lines, f"cl_vertex_{i}", v)
    lines.append(
        "list z_theta " + " ".join(_fmt(b.radius) for b in result.tubes.z_theta)
    )
    lines.append(f"scalar z_xtilde {_fmt(result.tubes.z_xtilde.radius)}")
    for i, p in enumerate(result.tubes.Xe_i):
        _write_matrix(lines, f"Xe_{i}_normals", p.normals)
        _write_matrix(lines, f"Xe_{i}_offsets", p.offsets[None, :])
    for name, p in (("Xe_T", result.tubes.Xe_T), ("Xe_T_bar", result.tubes.Xe_T_bar)):
        _write_matrix(lines, f"{name}_normals", p.normals)
        _write_matrix(lines, f"{name}_offsets", p.offsets[None, :])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_artifact(path, radii: ErrorRadii | None = None) -> SynthesisResult:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise SynthesisError(f"unrecognized artifact header in {path}")
    scalars: dict[str, float] = {}
    matrices: dict[str, np.ndarray] = {}
    lists: dict[str, list[float]] = {}
    i = 1
    while i < len(lines):
        ln = lines[i]
        if not ln.strip():
            i += 1
            continue
        kind, rest = ln.split(" ", 1)
        if kind == "scalar":
            name, val = rest.split(" ")
            scalars[name] = float(val)
            i += 1
        elif kind == "list":
            parts = rest.split(" ")
            lists[parts[0]] = [float(v) for v in parts[1:]]
            i += 1
        elif kind == "matrix":
            name, r, c = rest.split(" ")
            r, c = int(r), int(c)
            M = np.array(
                [[float(v) for v in lines[i + 1 + j].split()] for j in range(r)]
            )
            matrices[name] = M.reshape(r, c)
            i += 1 + r
        else:
            raise SynthesisError(f"bad artifact line: {ln!r}")
    N = int(scalars["horizon"])
    m = int(scalars["m"])
    gains = GainCertificate(
        K=matrices["K"],
        P=matrices["P"],
        Q=matrices["Q"],
        R=matrices["R"],
        gamma=scalars["gamma"],
        vertex_margins=matrices["vertex_margins"].ravel(),
    )
    cl_vertices = []
    j = 0
    while f"cl_vertex_{j}" in matrices:
        cl_vertices.append(matrices[f"cl_vertex_{j}"])
        j += 1
    cl = ClosedLoopHull(cl_vertices, scalars["a_bar"], scalars["a_frob"])
    n = gains.P.shape[0]
    tubes = TubeFamily(
        z_xtilde=Ball(np.zeros(n), scalars["z_xtilde"]),
        z_theta=[Ball(np.zeros(n), r) for r in lists["z_theta"]],
        Xe_i=[
            Polytope(matrices[f"Xe_{i}_normals"], matrices[f"Xe_{i}_offsets"].ravel())
            for i in range(N)
        ],
        Xe_T=Polytope(matrices["Xe_T_normals"], matrices["Xe_T_offsets"].ravel()),
        Xe_T_bar=Polytope(
            matrices["Xe_T_bar_normals"], matrices["Xe_T_bar_offsets"].ravel()
        ),
    )
    if radii is None:
        radii = ErrorRadii(
            delta_xtilde=scalars["delta_xtilde"],
            delta_theta=scalars["delta_theta"],
            x_m=scalars["x_m"],
            u_m=scalars["u_m"],
            d_theta=scalars["d_theta"],
        )
    eye = np.eye(m)
    H_delta = np.eye(N * m)
    for k in range(1, N):
        H_delta[k * m : (k + 1) * m, (k - 1) * m : k * m] = -eye
    H_bar = np.zeros((N * m, m))
    H_bar[:m, :] = eye
    stacked = StackedConstraints(
        H_u=np.eye(N * m),
        H_delta=H_delta,
        H_bar=H_bar,
        h_u=scalars["h_u"],
        h_delta_u=scalars["h_delta_u"],
        h_v=scalars["h_v"],
        h_delta_v=scalars["h_delta_v"],
        N=N,
        m=m,
    )
    return SynthesisResult(
        gains=gains,
        cl_hull=cl,
        radii=radii,
        tubes=tubes,
        stacked=stacked,
        N=N,
        tube_scale=scalars["tube_scale"],
    )
