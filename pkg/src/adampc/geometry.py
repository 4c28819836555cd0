"""Polytope and ball set arithmetic for constraint-set construction.

All polytopes are stored in H-representation ``normals @ x <= offsets`` with
facet normals normalized to unit Euclidean length, so that a Pontryagin
difference with a Euclidean ball is a pure offset subtraction.  Vertex
enumeration is supported for dimension <= 4; higher-dimensional sets must go
through the support-function paths.

Empty results of set tightening are signaled by returning ``None`` rather than
raising: an empty tightened set is a diagnosable configuration error ("tube
too large for constraints"), not a programming bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

VERTEX_ENUM_MAX_DIM = 4

_DEDUP_TOL = 1e-9


class GeometryError(ValueError):
    pass


class UnboundedSetError(GeometryError):
    pass


@dataclass(frozen=True)
class Ball:
    """Euclidean norm ball ``{x : ||x - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius < 0:
            raise GeometryError("ball radius must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def support(self, d: np.ndarray) -> float:
        d = np.asarray(d, dtype=float)
        return float(self.center @ d) + self.radius * float(np.linalg.norm(d))


class Polytope:
    """Bounded convex polytope in H-representation with unit facet normals."""

    def __init__(self, normals, offsets, vertex_cache=None):
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.shape[0]:
            raise GeometryError("normals/offsets row count mismatch")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms < 1e-14):
            raise GeometryError("zero facet normal")
        self.normals = normals / norms[:, None]
        self.offsets = offsets / norms
        self._vertex_cache = None
        if vertex_cache is not None:
            self._vertex_cache = np.atleast_2d(np.asarray(vertex_cache, dtype=float))

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return hull_of_points(points)

    @classmethod
    def box(cls, lb, ub) -> "Polytope":
        lb = np.atleast_1d(np.asarray(lb, dtype=float))
        ub = np.atleast_1d(np.asarray(ub, dtype=float))
        if lb.shape != ub.shape or np.any(lb > ub):
            raise GeometryError("invalid box bounds")
        n = lb.shape[0]
        eye = np.eye(n)
        normals = np.vstack([eye, -eye])
        offsets = np.concatenate([ub, -lb])
        p = cls(normals, offsets)
        if n <= VERTEX_ENUM_MAX_DIM:
            grid = np.meshgrid(*[(lo, hi) for lo, hi in zip(lb, ub)], indexing="ij")
            p._vertex_cache = np.stack([g.ravel() for g in grid], axis=1)
        return p

    @classmethod
    def inf_ball(cls, radius: float, dim: int) -> "Polytope":
        return cls.box(-radius * np.ones(dim), radius * np.ones(dim))

    # -- basic queries -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_facets(self) -> int:
        return self.normals.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    def is_c0set(self) -> bool:
        """True if the origin lies strictly inside (unit normals assumed)."""
        return bool(np.all(self.offsets > 0))

    def is_empty(self, tol: float = 1e-12) -> bool:
        res = linprog(
            np.zeros(self.dim),
            A_ub=self.normals,
            b_ub=self.offsets + tol,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res.status == 2

    def chebyshev_center(self):
        """Center and radius of the largest inscribed Euclidean ball."""
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.normals, np.ones((self.n_facets, 1))])
        bounds = [(None, None)] * n + [(None, float(np.max(self.offsets)) + 1.0)]
        res = linprog(c, A_ub=A, b_ub=self.offsets, bounds=bounds, method="highs")
        if res.status != 0:
            raise GeometryError("chebyshev LP failed (empty or unbounded set)")
        return res.x[:n], float(res.x[n])

    def support(self, d) -> float:
        """max over the set of <d, x>."""
        d = np.asarray(d, dtype=float)
        if np.linalg.norm(d) < 1e-14:
            raise GeometryError("support direction must be nonzero")
        if self._vertex_cache is not None:
            return float(np.max(self._vertex_cache @ d))
        res = linprog(
            -d,
            A_ub=self.normals,
            b_ub=self.offsets,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        if res.status == 3:
            raise UnboundedSetError("set unbounded in requested direction")
        if res.status != 0:
            raise GeometryError(f"support LP failed with status {res.status}")
        return float(-res.fun)

    @property
    def vertices(self) -> np.ndarray:
        if self._vertex_cache is None:
            self._vertex_cache = self._enumerate_vertices()
        return self._vertex_cache

    def _enumerate_vertices(self) -> np.ndarray:
        if self.dim > VERTEX_ENUM_MAX_DIM:
            raise GeometryError(
                f"vertex enumeration limited to dimension <= {VERTEX_ENUM_MAX_DIM}"
            )
        if self.dim == 1:
            a = self.normals[:, 0]
            ub = np.min(self.offsets[a > 0] / a[a > 0]) if np.any(a > 0) else None
            lb = np.max(self.offsets[a < 0] / a[a < 0]) if np.any(a < 0) else None
            if ub is None or lb is None:
                raise UnboundedSetError("unbounded 1-D set")
            return np.array([[lb], [ub]])
        center, radius = self.chebyshev_center()
        if radius <= 1e-12:
            raise GeometryError(
                "set has empty interior; vertex enumeration unsupported"
            )
        halfspaces = np.hstack([self.normals, -self.offsets[:, None]])
        try:
            hs = HalfspaceIntersection(halfspaces, center)
        except QhullError as exc:
            raise UnboundedSetError(f"halfspace intersection failed: {exc}") from exc
        pts = hs.intersections
        if not np.all(np.isfinite(pts)):
            raise UnboundedSetError("unbounded polytope")
        hull = ConvexHull(pts)
        return _dedup_points(pts[hull.vertices])

    def diameter(self) -> float:
        v = self.vertices
        if v.shape[0] == 1:
            return 0.0
        d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=2)
        return float(np.sqrt(np.max(d2)))

    # -- arithmetic --------------------------------------------------------

    def scale(self, gamma: float) -> "Polytope":
        if gamma <= 0:
            raise GeometryError("scale factor must be positive")
        cache = None if self._vertex_cache is None else gamma * self._vertex_cache
        return Polytope(self.normals, gamma * self.offsets, vertex_cache=cache)

    def translate(self, t) -> "Polytope":
        t = np.asarray(t, dtype=float)
        cache = None if self._vertex_cache is None else self._vertex_cache + t
        return Polytope(self.normals, self.offsets + self.normals @ t, vertex_cache=cache)

    def reflect(self) -> "Polytope":
        """The set -P."""
        cache = None if self._vertex_cache is None else -self._vertex_cache
        return Polytope(-self.normals, self.offsets, vertex_cache=cache)

    def intersect(self, other: "Polytope") -> "Polytope":
        if other.dim != self.dim:
            raise GeometryError("dimension mismatch")
        return Polytope(
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.offsets, other.offsets]),
        )

    def remove_redundancy(self, tol: float = 1e-9) -> "Polytope":
        """Drop facets whose removal does not change the set (LP test)."""
        keep = []
        A, b = self.normals, self.offsets
        # Cheap exact-duplicate pass first.
        seen = {}
        for i in range(A.shape[0]):
            key = tuple(np.round(A[i], 10))
            if key in seen:
                j = seen[key]
                if b[i] < b[j]:
                    seen[key] = i
            else:
                seen[key] = i
        idx = sorted(seen.values())
        A, b = A[idx], b[idx]
        m = A.shape[0]
        for i in range(m):
            mask = np.ones(m, dtype=bool)
            mask[i] = False
            res = linprog(
                -A[i],
                A_ub=A[mask],
                b_ub=b[mask],
                bounds=[(None, None)] * self.dim,
                method="highs",
            )
            if res.status == 0 and -res.fun <= b[i] + tol:
                continue  # facet implied by the others
            keep.append(i)
        if not keep:
            # All facets redundant cannot happen for a bounded set.
            keep = list(range(m))
        return Polytope(A[keep], b[keep])


def _dedup_points(points: np.ndarray, tol: float = _DEDUP_TOL) -> np.ndarray:
    out = []
    for p in points:
        if not any(np.linalg.norm(p - q) <= tol for q in out):
            out.append(p)
    return np.array(out)


def _singleton(c: np.ndarray) -> Polytope:
    n = c.shape[0]
    eye = np.eye(n)
    p = Polytope(np.vstack([eye, -eye]), np.concatenate([c, -c]))
    p._vertex_cache = c[None, :]
    return p


def hull_of_points(points: np.ndarray) -> Polytope:
    """H-representation of the convex hull, handling degenerate point sets."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[1]
    pts = _dedup_points(points)
    if pts.shape[0] == 1:
        return _singleton(pts[0])
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    # Affine rank via SVD; degenerate hulls are built in the spanning subspace
    # and lifted back with paired equality facets.
    u, s, vt = np.linalg.svd(centered, full_matrices=True)
    scale = max(1.0, float(np.max(np.abs(pts))))
    rank = int(np.sum(s > 1e-10 * scale))
    if rank == n:
        if n == 1:
            lo, hi = float(np.min(pts)), float(np.max(pts))
            p = Polytope(np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
            p._vertex_cache = np.array([[lo], [hi]])
            return p
        hull = ConvexHull(pts)
        normals = hull.equations[:, :-1]
        offsets = -hull.equations[:, -1]
        p = Polytope(normals, offsets)
        return Polytope(
            p.normals, p.offsets, vertex_cache=_dedup_points(pts[hull.vertices])
        )
    basis = vt[:rank]            # rank x n, spanning directions
    comp = vt[rank:]             # (n-rank) x n, orthogonal complement
    coords = centered @ basis.T  # points in subspace coordinates
    sub = hull_of_points(coords)
    normals = sub.normals @ basis
    offsets = sub.offsets + normals @ centroid
    eq_normals = np.vstack([comp, -comp])
    eq_offsets = np.concatenate([comp @ centroid, -(comp @ centroid)])
    p = Polytope(
        np.vstack([normals, eq_normals]), np.concatenate([offsets, eq_offsets])
    )
    p._vertex_cache = sub.vertices @ basis + centroid
    return p


def minkowski_sum(p: Polytope, q: Polytope) -> Polytope:
    """H-representation of p (+) q via vertex-pair sums and re-hulling."""
    if p.dim != q.dim:
        raise GeometryError("dimension mismatch in Minkowski sum")
    vp, vq = p.vertices, q.vertices
    sums = (vp[:, None, :] + vq[None, :, :]).reshape(-1, p.dim)
    return hull_of_points(sums)


def pontryagin_diff(p: Polytope, q) -> Polytope | None:
    """Pontryagin difference ``p (-) q``; returns None if the result is empty.

    For an H-polytope minuend the facet-wise offset reduction
    ``b_i <- b_i - h_q(a_i)`` is exact.  ``q`` may be a Polytope or a Ball.
    """
    if isinstance(q, Ball):
        if q.dim != p.dim:
            raise GeometryError("dimension mismatch in Pontryagin difference")
        offsets = p.offsets - (p.normals @ q.center + q.radius)
    else:
        if q.dim != p.dim:
            raise GeometryError("dimension mismatch in Pontryagin difference")
        offsets = p.offsets - np.array([q.support(a) for a in p.normals])
    result = Polytope(p.normals, offsets)
    if result.is_empty():
        return None
    return result


def pontryagin_diff_mapped_ball(p: Polytope, M: np.ndarray, r: float) -> Polytope | None:
    """``p (-) M*Ball(0, r)`` computed exactly via support functions."""
    M = np.asarray(M, dtype=float)
    if M.shape[1] != p.dim and M.shape[0] != p.dim:
        raise GeometryError("map/polytope dimension mismatch")
    offsets = p.offsets - r * np.linalg.norm(p.normals @ M, axis=1)
    result = Polytope(p.normals, offsets)
    if result.is_empty():
        return None
    return result


def linear_map(M: np.ndarray, p: Polytope) -> Polytope:
    """Image of p under x -> M x, as the hull of the mapped vertices."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != p.dim:
        raise GeometryError("map columns must match polytope dimension")
    return hull_of_points(p.vertices @ M.T)


def support(p: Polytope, d) -> float:
    return p.support(d)


def diameter(p: Polytope) -> float:
    return p.diameter()


def contains(p: Polytope, x, tol: float = 1e-9) -> bool:
    return p.contains(x, tol)


def scale(p: Polytope, gamma: float) -> Polytope:
    return p.scale(gamma)


def inscribed_box_radius(p: Polytope) -> float:
    """Radius of the largest symmetric inf-norm box contained in p.

    The support of the box ``{|x|_inf <= r}`` in direction a is ``r ||a||_1``,
    so the binding facet gives ``r = min_i b_i / ||a_i||_1``.
    """
    l1 = np.linalg.norm(p.normals, ord=1, axis=1)
    return float(np.min(p.offsets / l1))
