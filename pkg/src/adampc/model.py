"""Plant, uncertainty hull, reference trajectory, and error-coordinate sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .geometry import Ball, GeometryError, Polytope, hull_of_points, minkowski_sum


class ModelError(ValueError):
    pass


@dataclass
class ParamHull:
    """Convex hull of lumped-parameter vertices ``[A_i, B_i]``, each n x (n+m).

    ``box_bounds``, when set, marks the hull as an entrywise interval box
    ``lower <= theta <= upper`` whose listed vertices are the box corners;
    membership and Frobenius projection then have exact closed forms.
    """

    vertices: list[np.ndarray]
    n: int
    m: int
    box_bounds: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if not self.vertices:
            raise ModelError("parameter hull needs at least one vertex")
        self.vertices = [np.asarray(v, dtype=float) for v in self.vertices]
        for v in self.vertices:
            if v.shape != (self.n, self.n + self.m):
                raise ModelError(
                    f"hull vertex shape {v.shape} != ({self.n}, {self.n + self.m})"
                )

    @classmethod
    def from_pairs(cls, pairs) -> "ParamHull":
        pairs = [(np.asarray(A, dtype=float), np.asarray(B, dtype=float)) for A, B in pairs]
        n = pairs[0][0].shape[0]
        m = pairs[0][1].shape[1]
        return cls([np.hstack([A, B]) for A, B in pairs], n, m)

    @classmethod
    def interval_from_pairs(cls, pairs, max_corners: int = 4096) -> "ParamHull":
        """Entrywise interval hull of the given vertex pairs.

        The hull is the box ``[min_i theta_i, max_i theta_i]`` taken entry by
        entry; its corners (one per combination of the varying entries) become
        the vertex list.  The box always contains the convex hull of the
        listed pairs and shares its Frobenius diameter.
        """
        base = cls.from_pairs(pairs)
        stack = np.stack(base.vertices)
        lower = stack.min(axis=0)
        upper = stack.max(axis=0)
        varying = np.argwhere(upper - lower > 0)
        if 2 ** len(varying) > max_corners:
            raise ModelError(
                f"interval hull would need {2 ** len(varying)} corners"
            )
        corners = []
        for picks in itertools.product((0, 1), repeat=len(varying)):
            c = lower.copy()
            for (i, j), hi in zip(varying, picks):
                if hi:
                    c[i, j] = upper[i, j]
            corners.append(c)
        return cls(corners, base.n, base.m, box_bounds=(lower, upper))

    @property
    def size(self) -> int:
        return len(self.vertices)

    def A(self, i: int) -> np.ndarray:
        return self.vertices[i][:, : self.n]

    def B(self, i: int) -> np.ndarray:
        return self.vertices[i][:, self.n :]

    def centroid(self) -> np.ndarray:
        return np.mean(self.vertices, axis=0)

    def diameter_frobenius(self) -> float:
        if self.box_bounds is not None:
            lower, upper = self.box_bounds
            return float(np.linalg.norm(upper - lower))
        best = 0.0
        for i in range(self.size):
            for j in range(i + 1, self.size):
                best = max(best, float(np.linalg.norm(self.vertices[i] - self.vertices[j])))
        return best

    def membership_residual(self, theta) -> float:
        """Distance-style residual; zero (up to tolerance) iff theta is in the hull.

        Interval-box hulls use the exact entrywise violation; general hulls
        solve a convex-combination feasibility LP.
        """
        if self.box_bounds is not None:
            theta = np.asarray(theta, dtype=float)
            lower, upper = self.box_bounds
            return float(
                np.max(np.maximum(np.maximum(lower - theta, theta - upper), 0.0))
            )
        theta = np.asarray(theta, dtype=float).ravel()
        V = np.array([v.ravel() for v in self.vertices]).T  # entries x G
        G = self.size
        # min sum(t) s.t. V w - theta <= t, theta - V w <= t, sum w = 1, w >= 0
        d = V.shape[0]
        c = np.concatenate([np.zeros(G), np.ones(d)])
        A_ub = np.block([[V, -np.eye(d)], [-V, -np.eye(d)]])
        b_ub = np.concatenate([theta, -theta])
        A_eq = np.concatenate([np.ones(G), np.zeros(d)])[None, :]
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=[1.0],
            bounds=[(0, None)] * G + [(0, None)] * d,
            method="highs",
        )
        if res.status != 0:
            return np.inf
        return float(res.fun)

    def contains(self, theta, tol: float = 1e-8) -> bool:
        return self.membership_residual(theta) <= tol


@dataclass
class PlantModel:
    """True plant ``x_{k+1} = A x_k + B u_k`` (hidden from the controller)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ModelError("inconsistent plant dimensions")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)


@dataclass
class ReferenceTrajectory:
    """Time-indexed reference samples confined to a known convex hull."""

    samples: np.ndarray          # (T+1) x n
    hull_vertices: np.ndarray    # L x n

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.hull_vertices = np.atleast_2d(np.asarray(self.hull_vertices, dtype=float))
        hull = self.hull()
        for k, s in enumerate(self.samples):
            if not hull.contains(s, tol=1e-9):
                raise ModelError(f"reference sample {k} outside its hull")

    @classmethod
    def piecewise_constant(cls, points, switch_steps, horizon_len) -> "ReferenceTrajectory":
        """Segments holding each point constant; switch_steps are segment starts.

        ``switch_steps`` excludes step 0; the trajectory is sampled for
        ``horizon_len + 1`` steps so one step of lookahead is always available.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        bounds = [0, *switch_steps, horizon_len + 1]
        if len(points) != len(bounds) - 1:
            raise ModelError("need one reference point per segment")
        rows = []
        for p, lo, hi in zip(points, bounds[:-1], bounds[1:]):
            rows.extend([p] * (hi - lo))
        return cls(np.array(rows), points)

    def hull(self) -> Polytope:
        return hull_of_points(self.hull_vertices)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def segment_starts(self) -> list[int]:
        starts = [0]
        for k in range(1, len(self.samples)):
            if not np.allclose(self.samples[k], self.samples[k - 1]):
                starts.append(k)
        return starts


@dataclass
class ConstraintFamily:
    """Physical constraint sets and their error-coordinate counterparts."""

    X: Polytope
    U: Polytope
    U_delta: Polytope
    Xr_hull: Polytope
    Ur: Polytope
    Xe: Polytope
    Ue: Polytope
    Ue_delta: Polytope
    Xe_delta: Ball
    d_u: float
    d_x: float
    x_m: float = field(init=False)
    u_m: float = field(init=False)

    def __post_init__(self):
        for name in ("X", "U", "U_delta", "Xe", "Ue", "Ue_delta"):
            if not getattr(self, name).is_c0set():
                raise ModelError(f"constraint set {name} is not a C0-set")
        self.x_m = float(np.max(np.linalg.norm(self.Xe.vertices, axis=1)))
        self.u_m = float(np.max(np.linalg.norm(self.Ue.vertices, axis=1)))


def reference_input(xr_k, xr_next, vertex: np.ndarray, n: int):
    """Input reproducing ``xr_next`` from ``xr_k`` under the hull vertex.

    Returns ``(u_r, residual)`` where the residual is the reachability defect
    ``||B u_r - (xr_next - A xr_k)||`` (zero iff exactly reachable).
    """
    vertex = np.asarray(vertex, dtype=float)
    Abar, Bbar = vertex[:, :n], vertex[:, n:]
    xr_k = np.asarray(xr_k, dtype=float)
    xr_next = np.asarray(xr_next, dtype=float)
    gram = Bbar.T @ Bbar
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise ModelError("hull vertex B is rank deficient")
    rhs = xr_next - Abar @ xr_k
    ur = np.linalg.solve(gram, Bbar.T @ rhs)
    residual = float(np.linalg.norm(Bbar @ ur - rhs))
    return ur, residual


def build_reference_input_set(
    hull: ParamHull, reference: ReferenceTrajectory, du_inflation: float = 1.0
):
    """Hull of reference inputs over all (hull vertex, reference vertex pair)
    combinations; an inner approximation of the continuum image, so the rate
    bound may be inflated by a safety factor (default 1.0).
    """
    points = []
    verts = reference.hull_vertices
    for theta in hull.vertices:
        for xr_k in verts:
            for xr_next in verts:
                ur, _ = reference_input(xr_k, xr_next, theta, hull.n)
                points.append(ur)
    Ur = hull_of_points(np.array(points))
    d_u = Ur.diameter() * du_inflation
    return Ur, d_u


def build_error_constraints(
    X: Polytope,
    U: Polytope,
    U_delta: Polytope,
    reference: ReferenceTrajectory,
    Ur: Polytope,
    d_u: float,
) -> ConstraintFamily:
    """Error-coordinate constraint sets for the tracking-to-regulation rewrite.

    The difference sets are Minkowski sums with the reflected subtrahend; the
    rate set's ball summand is realized as the facet-offset outer relaxation
    (exact on each existing facet normal).
    """
    Xr_hull = reference.hull()
    Xe = minkowski_sum(X, Xr_hull.reflect())
    Ue = minkowski_sum(U, Ur.reflect())
    Ue_delta = Polytope(
        U_delta.normals, U_delta.offsets + d_u, vertex_cache=None
    )
    d_x = Xe.diameter()
    return ConstraintFamily(
        X=X,
        U=U,
        U_delta=U_delta,
        Xr_hull=Xr_hull,
        Ur=Ur,
        Xe=Xe,
        Ue=Ue,
        Ue_delta=Ue_delta,
        Xe_delta=Ball(np.zeros(X.dim), d_x),
        d_u=d_u,
        d_x=d_x,
    )
