"""Delzant polytopes, vertex charts and quadrature on them.

A polytope is stored as facet inequalities ``delta_k(xi) = <a_k, xi> - c_k >= 0``
with primitive integer conormals ``a_k`` and rational offsets ``c_k``.  Vertices
are always derived from the facet list, exactly, in rational arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np
import sympy
from scipy.optimize import linprog

from ._cells import cell_quadrature, halfspace_vertices


class PolytopeError(ValueError):
    """Malformed or geometrically invalid polytope input."""


def _as_fraction(value: Any) -> Fraction:
    if isinstance(value, bool):
        raise PolytopeError(f"offset must be a number, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise PolytopeError(f"offset must be finite, got {value!r}")
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise PolytopeError(f"cannot parse offset {value!r}") from exc
    raise PolytopeError(f"offset must be a number, got {value!r}")


@dataclass(frozen=True)
class Facet:
    normal: tuple[int, ...]
    offset: Fraction

    def delta(self, xi: Sequence[Fraction]) -> Fraction:
        return sum((Fraction(a) * x for a, x in zip(self.normal, xi)), Fraction(0)) - self.offset


@dataclass(frozen=True)
class Polytope:
    """Convex polytope ``{xi : <a_k, xi> >= c_k for all k}``."""

    dimension: int
    facets: tuple[Facet, ...]
    vertices: tuple[tuple[Fraction, ...], ...] = field(compare=False)

    @cached_property
    def normals(self) -> np.ndarray:
        return np.array([f.normal for f in self.facets], dtype=float)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([float(f.offset) for f in self.facets])

    @cached_property
    def vertex_array(self) -> np.ndarray:
        return np.array([[float(c) for c in v] for v in self.vertices])

    @cached_property
    def barycenter(self) -> np.ndarray:
        """Mean of the vertices (an interior point)."""
        return self.vertex_array.mean(axis=0)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertex_array
        return v.min(axis=0), v.max(axis=0)

    def delta(self, pts: np.ndarray) -> np.ndarray:
        """Facet distances ``delta_k`` at points, shape ``(N, m)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts @ self.normals.T - self.offsets

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.all(self.delta(pts) >= -tol, axis=1)

    def is_interior(self, pts: np.ndarray) -> np.ndarray:
        return np.all(self.delta(pts) > 0.0, axis=1)

    def active_facets(self, vertex: int) -> tuple[int, ...]:
        v = self.vertices[vertex]
        return tuple(k for k, f in enumerate(self.facets) if f.delta(v) == 0)

    def vertex_index(self, point: Sequence[float]) -> int:
        p = np.asarray(point, dtype=float)
        d = np.linalg.norm(self.vertex_array - p, axis=1)
        k = int(np.argmin(d))
        if d[k] > 1e-9 * max(1.0, float(np.abs(p).max(initial=0.0))):
            raise PolytopeError(f"{list(point)} is not a vertex")
        return k

    def to_document(self) -> dict[str, Any]:
        facets = []
        for f in self.facets:
            off: Any = int(f.offset) if f.offset.denominator == 1 else str(f.offset)
            facets.append({"normal": list(f.normal), "offset": off})
        return {"dimension": self.dimension, "facets": facets}


def _enumerate_vertices(n: int, facets: Sequence[Facet]) -> list[tuple[Fraction, ...]]:
    found: list[tuple[Fraction, ...]] = []
    for idx in itertools.combinations(range(len(facets)), n):
        M = sympy.Matrix([list(facets[k].normal) for k in idx])
        if M.det() == 0:
            continue
        rhs = sympy.Matrix([sympy.Rational(facets[k].offset.numerator, facets[k].offset.denominator) for k in idx])
        sol = M.LUsolve(rhs)
        pt = tuple(Fraction(int(s.p), int(s.q)) for s in sol)
        if all(f.delta(pt) >= 0 for f in facets) and pt not in found:
            found.append(pt)
    found.sort()
    return found


def make_polytope(facets: Sequence[tuple[Sequence[int], Any]]) -> Polytope:
    """Build a polytope from ``(normal, offset)`` pairs, validating it."""
    if not facets:
        raise PolytopeError("facet list is empty")
    n = len(facets[0][0])
    if n < 1:
        raise PolytopeError("dimension must be positive")
    parsed = []
    for k, (normal, offset) in enumerate(facets):
        if len(normal) != n:
            raise PolytopeError(f"facet {k}: normal has length {len(normal)}, expected {n}")
        ints = []
        for a in normal:
            if isinstance(a, bool) or not float(a).is_integer():
                raise PolytopeError(f"facet {k}: conormal entries must be integers")
            ints.append(int(a))
        if math.gcd(*ints) != 1:
            raise PolytopeError(f"facet {k}: conormal {ints} is not primitive")
        parsed.append(Facet(tuple(ints), _as_fraction(offset)))

    A = np.array([f.normal for f in parsed], dtype=float)
    c = np.array([float(f.offset) for f in parsed])
    # bounded and with nonempty interior: maximize a slack t in A xi - c >= t
    for sign in (1.0, -1.0):
        for i in range(n):
            obj = np.zeros(n)
            obj[i] = -sign
            res = linprog(obj, A_ub=-A, b_ub=-c, bounds=[(None, None)] * n, method="highs")
            if res.status == 3:
                raise PolytopeError("polytope is unbounded")
            if res.status == 2:
                raise PolytopeError("polytope has empty interior")
    obj = np.zeros(n + 1)
    obj[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((len(parsed), 1))])
    res = linprog(obj, A_ub=A_ub, b_ub=-c, bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0 or -res.fun <= 1e-12:
        raise PolytopeError("polytope has empty interior")

    verts = _enumerate_vertices(n, parsed)
    if len(verts) < n + 1:
        raise PolytopeError("polytope has empty interior")
    return Polytope(n, tuple(parsed), tuple(verts))


def parse_polytope(document: Mapping[str, Any]) -> Polytope:
    """Parse ``{"dimension": n, "facets": [{"normal": [...], "offset": c}, ...]}``."""
    if not isinstance(document, Mapping):
        raise PolytopeError("polytope document must be an object")
    try:
        n = document["dimension"]
        raw = document["facets"]
    except KeyError as exc:
        raise PolytopeError(f"missing field {exc.args[0]!r}") from None
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise PolytopeError("dimension must be a positive integer")
    if not isinstance(raw, Sequence) or isinstance(raw, str) or not raw:
        raise PolytopeError("facets must be a nonempty list")
    pairs = []
    for k, f in enumerate(raw):
        if not isinstance(f, Mapping) or "normal" not in f or "offset" not in f:
            raise PolytopeError(f"facet {k}: expected an object with 'normal' and 'offset'")
        if len(f["normal"]) != n:
            raise PolytopeError(f"facet {k}: normal has length {len(f['normal'])}, expected {n}")
        pairs.append((f["normal"], f["offset"]))
    return make_polytope(pairs)


def interval(a: Any, b: Any) -> Polytope:
    return make_polytope([((1,), a), ((-1,), -_as_fraction(b))])


def box(n: int = 2, side: Any = 1) -> Polytope:
    s = _as_fraction(side)
    facets = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        facets.append((tuple(e), 0))
        facets.append((tuple(-x for x in e), -s))
    return make_polytope(facets)


def simplex(n: int = 2, size: Any = 1) -> Polytope:
    s = _as_fraction(size)
    facets = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        facets.append((tuple(e), 0))
    facets.append((tuple([-1] * n), -s))
    return make_polytope(facets)


# -- Delzant validation ------------------------------------------------------


@dataclass(frozen=True)
class VertexCheck:
    vertex: tuple[Fraction, ...]
    facets: tuple[int, ...]
    determinant: int | None
    ok: bool


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    vertices: tuple[VertexCheck, ...]
    failures: tuple[str, ...]


def validate_delzant(P: Polytope) -> ValidationReport:
    """Check simplicity and unimodularity at every vertex.

    Primitivity of conormals is already enforced at construction, and is
    re-checked here for polytopes built by hand.
    """
    checks = []
    failures = []
    for k, f in enumerate(P.facets):
        if math.gcd(*f.normal) != 1:
            failures.append(f"facet {k}: conormal {list(f.normal)} is not primitive")
    touched: set[int] = set()
    for vi, v in enumerate(P.vertices):
        act = P.active_facets(vi)
        touched.update(act)
        label = "(" + ", ".join(str(c) for c in v) + ")"
        if len(act) != P.dimension:
            checks.append(VertexCheck(v, act, None, False))
            failures.append(f"vertex {label}: {len(act)} facets meet, expected {P.dimension}")
            continue
        det = int(sympy.Matrix([list(P.facets[k].normal) for k in act]).det())
        ok = abs(det) == 1
        checks.append(VertexCheck(v, act, det, ok))
        if not ok:
            failures.append(f"vertex {label}: conormal determinant {det}")
    for k in range(len(P.facets)):
        if k not in touched:
            failures.append(f"facet {k}: inequality is redundant")
    return ValidationReport(not failures, tuple(checks), tuple(failures))


# -- vertex charts -----------------------------------------------------------


@dataclass(frozen=True)
class VertexChart:
    """Affine chart ``xi^p = A xi - c`` sending vertex ``p`` to the origin.

    Rows of ``A`` are the conormals of the facets through ``p``; the chart
    therefore maps those facets to the coordinate hyperplanes and the
    polytope into the positive orthant.
    """

    vertex: tuple[Fraction, ...]
    vertex_index: int
    facets: tuple[int, ...]
    matrix: tuple[tuple[int, ...], ...]
    inverse: tuple[tuple[int, ...], ...]
    constants: tuple[Fraction, ...]

    @cached_property
    def A(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    @cached_property
    def B(self) -> np.ndarray:
        return np.array(self.inverse, dtype=float)

    @cached_property
    def c(self) -> np.ndarray:
        return np.array([float(x) for x in self.constants])

    @cached_property
    def p(self) -> np.ndarray:
        return np.array([float(x) for x in self.vertex])

    @property
    def edges(self) -> np.ndarray:
        """Primitive edge directions ``E^j`` (columns of the inverse)."""
        return self.B.T.copy()

    def to_chart(self, xi: np.ndarray) -> np.ndarray:
        return np.atleast_2d(xi) @ self.A.T - self.c

    def from_chart(self, y: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(y) + self.c) @ self.B.T

    def x_chart(self, x: np.ndarray) -> np.ndarray:
        """Dual coordinates ``x_p^i = du/dxi^p_i`` from ``x = grad u``."""
        return np.atleast_2d(x) @ self.B

    @cached_property
    def exponent_weights(self) -> np.ndarray:
        """``w`` with ``sum_i x_p^i = <w, x>``, i.e. row sums of the inverse."""
        return self.B.sum(axis=1)


def vertex_chart(P: Polytope, p: int | Sequence[float], first: Sequence[int] = ()) -> VertexChart:
    """Chart at vertex ``p`` (index or coordinates).

    ``first`` lists facets (through ``p``) to place as the leading chart
    coordinates; the rest follow in facet order.
    """
    vi = p if isinstance(p, (int, np.integer)) else P.vertex_index(p)
    vi = int(vi)
    act = P.active_facets(vi)
    if len(act) != P.dimension:
        raise PolytopeError(f"vertex {vi} is not simple: {len(act)} facets meet")
    missing = [k for k in first if k not in act]
    if missing:
        raise PolytopeError(f"facets {missing} do not contain vertex {vi}")
    order = list(first) + [k for k in act if k not in first]
    M = sympy.Matrix([list(P.facets[k].normal) for k in order])
    det = int(M.det())
    if abs(det) != 1:
        raise PolytopeError(f"vertex {vi} is not Delzant (determinant {det})")
    inv = M.inv()
    return VertexChart(
        vertex=P.vertices[vi],
        vertex_index=vi,
        facets=tuple(order),
        matrix=tuple(tuple(int(M[i, j]) for j in range(M.cols)) for i in range(M.rows)),
        inverse=tuple(tuple(int(inv[i, j]) for j in range(inv.cols)) for i in range(inv.rows)),
        constants=tuple(P.facets[k].offset for k in order),
    )


def all_vertex_charts(P: Polytope) -> list[VertexChart]:
    return [vertex_chart(P, i) for i in range(len(P.vertices))]


def diameter(P: Polytope) -> float:
    v = P.vertex_array
    d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
    return float(d.max())


# -- grids and quadrature ----------------------------------------------------


def _box_layout(P: Polytope, resolution: int) -> tuple[np.ndarray, float, np.ndarray]:
    if resolution < 1:
        raise PolytopeError("resolution must be positive")
    lo, hi = P.bounds
    h = float((hi - lo).max()) / resolution
    counts = np.maximum(1, np.ceil((hi - lo) / h - 1e-9).astype(int))
    return lo, h, counts


@dataclass(frozen=True)
class Grid:
    """Cell-centred interior sample points.

    ``weights`` is the cell volume ``h**n`` at every point; the sum converges
    to the volume only at first order, so integrals use :class:`Quadrature`.
    """

    points: np.ndarray
    weights: np.ndarray
    h: float
    resolution: int
    cells: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray
    h: float
    resolution: int

    def integrate(self, values: np.ndarray) -> float:
        return float(_pairwise_sum(np.asarray(values, dtype=float) * self.weights))


def _pairwise_sum(a: np.ndarray) -> float:
    # fixed reduction tree, independent of BLAS threading
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])


def interior_grid(P: Polytope, resolution: int) -> Grid:
    """Bounding-box cell centres with ``delta_k >= h/2`` for every facet."""
    lo, h, counts = _box_layout(P, resolution)
    n = P.dimension
    idx = np.indices(tuple(counts)).reshape(n, -1).T
    pts = lo + h * (idx + 0.5)
    scale = max(1.0, float(np.abs(P.offsets).max()))
    mask = np.all(P.delta(pts) >= h / 2 - 1e-12 * scale, axis=1)
    if not mask.any():
        raise PolytopeError(f"resolution {resolution} leaves no interior grid points")
    return Grid(pts[mask], np.full(int(mask.sum()), h**n), h, resolution, idx[mask])


def _clipped(P: Polytope, clip: tuple[np.ndarray, np.ndarray] | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    G, g = P.normals, P.offsets
    if clip is None:
        return G, g, P.vertex_array
    G = np.vstack([G, np.atleast_2d(clip[0])])
    g = np.concatenate([g, np.atleast_1d(clip[1])])
    return G, g, halfspace_vertices(G, g)


def interior_quadrature(
    P: Polytope, resolution: int, clip: tuple[np.ndarray, np.ndarray] | None = None
) -> Quadrature:
    """Cut-cell midpoint rule for ``dmu``, exact on affine integrands.

    ``clip = (G, g)`` restricts the domain to ``G xi >= g`` as well; the
    cell layout is that of the unclipped polytope.
    """
    lo, h, counts = _box_layout(P, resolution)
    n = P.dimension
    G, g, verts = _clipped(P, clip)
    if len(verts) < n + 1:
        return Quadrature(np.zeros((0, n)), np.zeros(0), h, resolution)
    pts, wts, _ = cell_quadrature(G, g, verts, lo, h, counts)
    return Quadrature(pts, wts, h, resolution)


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Per-facet nodes and ``dsigma`` weights (Euclidean measure / |a_k|)."""

    points: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    h: float

    def facet_mass(self) -> np.ndarray:
        return np.array([_pairwise_sum(w) for w in self.weights])

    @cached_property
    def all_points(self) -> np.ndarray:
        return np.vstack(self.points)

    @cached_property
    def all_weights(self) -> np.ndarray:
        return np.concatenate(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return _pairwise_sum(np.asarray(values, dtype=float) * self.all_weights)


def boundary_quadrature(
    P: Polytope, resolution: int, clip: tuple[np.ndarray, np.ndarray] | None = None
) -> BoundaryQuadrature:
    """Midpoint rule on each facet in an orthonormal frame of its hyperplane.

    ``clip`` has the same meaning as in :func:`interior_quadrature`.
    """
    lo, h, _ = _box_layout(P, resolution)
    n = P.dimension
    G_all, g_all, _ = _clipped(P, clip)
    pts_out, wts_out = [], []
    for k, f in enumerate(P.facets):
        a = np.array(f.normal, dtype=float)
        norm = float(np.linalg.norm(a))
        if n == 1:
            x = np.array([[float(f.offset) / a[0]]])
            ok = bool(np.all(G_all @ x[0] - g_all >= -1e-12 * max(1.0, float(np.abs(g_all).max()))))
            pts_out.append(x if ok else np.zeros((0, 1)))
            wts_out.append(np.array([1.0 / norm]) if ok else np.zeros(0))
            continue
        x0 = a * float(f.offset) / norm**2
        # orthonormal basis of the hyperplane direction
        _, _, vt = np.linalg.svd(a[None, :])
        Q = vt[1:].T
        others = [j for j in range(len(g_all)) if j != k]
        G = G_all[others] @ Q
        g = g_all[others] - G_all[others] @ x0
        # drop inequalities that vanish identically on this hyperplane
        keep = np.linalg.norm(G, axis=1) > 1e-14
        if np.any(g[~keep] > 1e-12 * max(1.0, float(np.abs(g_all).max()))):
            pts_out.append(np.zeros((0, n)))
            wts_out.append(np.zeros(0))
            continue
        G, g = G[keep], g[keep]
        if clip is None:
            on = [v for v in P.vertices if f.delta(v) == 0]
            yv = (np.array([[float(c) for c in v] for v in on]) - x0) @ Q
        else:
            yv = halfspace_vertices(G, g)
        if len(yv) < n:
            pts_out.append(np.zeros((0, n)))
            wts_out.append(np.zeros(0))
            continue
        if clip is None:
            ylo, yhi = yv.min(axis=0), yv.max(axis=0)
        else:
            # keep the unclipped layout so cells do not shift with the clip
            on = [v for v in P.vertices if f.delta(v) == 0]
            yfull = (np.array([[float(c) for c in v] for v in on]) - x0) @ Q
            ylo, yhi = yfull.min(axis=0), yfull.max(axis=0)
        counts = np.maximum(1, np.ceil((yhi - ylo) / h - 1e-9).astype(int))
        yp, yw, _ = cell_quadrature(G, g, yv, ylo, h, counts)
        pts_out.append(x0 + yp @ Q.T)
        wts_out.append(yw / norm)
    return BoundaryQuadrature(tuple(pts_out), tuple(wts_out), h)
