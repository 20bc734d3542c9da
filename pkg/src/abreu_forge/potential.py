"""Symplectic potentials: Guillemin term plus a polynomial correction.

Every derivative up to order four is evaluated in closed form, so the
fourth-order operators downstream never touch finite differences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import bundle as _bundle
from .bundle import BundleData
from .polytope import Grid, Polytope, PolytopeError, VertexChart


class ConvexityError(ValueError):
    """Hessian fails to be positive definite; carries the offending point."""

    def __init__(self, message: str, witness: np.ndarray | None = None, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.min_eigenvalue = min_eigenvalue


# -- polynomials -------------------------------------------------------------


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial ``sum coeff * xi**exponents``."""

    n: int
    terms: tuple[tuple[tuple[int, ...], float], ...] = ()

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[tuple[Sequence[int], float]]) -> "Polynomial":
        acc: dict[tuple[int, ...], float] = {}
        for e, c in terms:
            e = tuple(int(x) for x in e)
            if len(e) != n or any(x < 0 for x in e):
                raise ValueError(f"bad exponent vector {list(e)} for dimension {n}")
            acc[e] = acc.get(e, 0.0) + float(c)
        return cls(n, tuple(sorted((e, c) for e, c in acc.items() if c != 0.0)))

    @classmethod
    def quadratic(cls, n: int, scale: float = 0.5) -> "Polynomial":
        terms = []
        for i in range(n):
            e = [0] * n
            e[i] = 2
            terms.append((e, scale))
        return cls.from_terms(n, terms)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial.from_terms(self.n, list(self.terms) + list(other.terms))

    def scaled(self, s: float) -> "Polynomial":
        return Polynomial.from_terms(self.n, [(e, s * c) for e, c in self.terms])

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.derivatives(pts, 0)[0]

    def derivatives(self, pts: np.ndarray, order: int = 4) -> list[np.ndarray]:
        """Value and derivative tensors up to ``order`` at ``pts``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        N, n = pts.shape
        out = [np.zeros((N,) + (n,) * k) for k in range(order + 1)]
        for e, c in self.terms:
            for k in range(order + 1):
                for idx in itertools.combinations_with_replacement(range(n), k):
                    cnt = np.bincount(np.array(idx, dtype=int), minlength=n) if k else np.zeros(n, int)
                    if np.any(cnt > np.array(e)):
                        continue
                    coef = c
                    for i in range(n):
                        for j in range(cnt[i]):
                            coef *= e[i] - j
                    val = np.full(N, coef)
                    for i in range(n):
                        p = e[i] - cnt[i]
                        if p:
                            val = val * pts[:, i] ** p
                    for perm in set(itertools.permutations(idx)):
                        out[k][(slice(None),) + perm] += val
        return out

    def to_document(self) -> list[dict[str, Any]]:
        return [{"exponents": list(e), "coeff": c} for e, c in self.terms]


# -- potentials --------------------------------------------------------------


def _guillemin_derivatives(P: Polytope, pts: np.ndarray, order: int) -> list[np.ndarray]:
    d = P.delta(pts)
    if order == 0:
        # boundary nodes may land a rounding error outside
        tol = 1e-12 * max(1.0, float(np.abs(P.offsets).max()))
        d = np.where((d < 0.0) & (d > -tol), 0.0, d)
    if np.any(d < 0.0):
        raise PolytopeError("Guillemin term evaluated outside the polytope")
    a = P.normals
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = np.log(d)
        val = np.where(d > 0.0, d * logd, 0.0).sum(axis=1)
    out = [val]
    if order >= 1:
        if np.any(d <= 0.0):
            raise PolytopeError("Guillemin derivatives requested on the boundary")
        out.append((logd + 1.0) @ a)
    if order >= 2:
        out.append(np.einsum("nk,ki,kj->nij", 1.0 / d, a, a))
    if order >= 3:
        out.append(-np.einsum("nk,ki,kj,kl->nijl", 1.0 / d**2, a, a, a))
    if order >= 4:
        out.append(2.0 * np.einsum("nk,ki,kj,kl,km->nijlm", 1.0 / d**3, a, a, a, a))
    return out


@dataclass(frozen=True)
class Potential:
    """``u = [Guillemin term] + polynomial`` on a polytope."""

    polytope: Polytope
    guillemin: bool
    polynomial: Polynomial
    base_point: tuple[float, ...] | None = None

    @property
    def n(self) -> int:
        return self.polytope.dimension

    def derivatives(self, pts: np.ndarray, order: int = 4) -> list[np.ndarray]:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = self.polynomial.derivatives(pts, order)
        if self.guillemin:
            g = _guillemin_derivatives(self.polytope, pts, order)
            out = [a + b for a, b in zip(out, g)]
        return out

    def value(self, pts: np.ndarray) -> np.ndarray:
        """Values, continuously extended to the boundary."""
        return self.derivatives(pts, 0)[0]

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        return self.derivatives(pts, 1)[1]

    def hessian(self, pts: np.ndarray) -> np.ndarray:
        return self.derivatives(pts, 2)[2]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.value(pts)

    def with_polynomial(self, poly: Polynomial) -> "Potential":
        return replace(self, polynomial=self.polynomial + poly, base_point=None)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"guillemin": self.guillemin, "polynomial": self.polynomial.to_document()}
        if self.base_point is not None:
            doc["normalize_at"] = list(self.base_point)
        return doc


def guillemin_potential(P: Polytope) -> Potential:
    return Potential(P, True, Polynomial(P.dimension))


def check_convexity(u: Potential, pts: np.ndarray) -> None:
    H = u.hessian(pts)
    eig = np.linalg.eigvalsh(H)[:, 0]
    k = int(np.argmin(eig))
    if eig[k] <= 0.0:
        raise ConvexityError(
            f"Hessian not positive definite at {np.asarray(pts)[k].tolist()} (min eigenvalue {eig[k]:.6g})",
            witness=np.asarray(pts)[k].copy(),
            min_eigenvalue=float(eig[k]),
        )


def perturbed_potential(
    P: Polytope, poly: Polynomial, guillemin: bool = True, check_resolution: int = 32
) -> Potential:
    """``v + poly``, rejected if the Hessian is not positive definite on a grid."""
    from .polytope import interior_grid

    u = Potential(P, guillemin, poly)
    check_convexity(u, interior_grid(P, check_resolution).points)
    return u


def normalize_at(u: Potential, p_o: Sequence[float]) -> Potential:
    """Subtract the tangent plane at ``p_o`` so that ``u(p_o) = 0 = grad u(p_o)``."""
    p = np.asarray(p_o, dtype=float).reshape(1, -1)
    if p.shape[1] != u.n or not u.polytope.is_interior(p)[0]:
        raise PolytopeError(f"normalization point {list(p_o)} is not interior")
    val, grad = u.derivatives(p, 1)
    n = u.n
    terms: list[tuple[Sequence[int], float]] = [((0,) * n, float(-val[0] + grad[0] @ p[0]))]
    for i in range(n):
        e = [0] * n
        e[i] = 1
        terms.append((e, float(-grad[0, i])))
    shifted = Polynomial.from_terms(n, list(u.polynomial.terms) + terms)
    return replace(u, polynomial=shifted, base_point=tuple(float(c) for c in p[0]))


def parse_potential(doc: Mapping[str, Any] | None, P: Polytope) -> Potential:
    doc = doc or {}
    poly = Polynomial.from_terms(
        P.dimension, [(t["exponents"], t["coeff"]) for t in doc.get("polynomial", [])]
    )
    u = Potential(P, bool(doc.get("guillemin", True)), poly)
    if doc.get("normalize_at") is not None:
        u = normalize_at(u, doc["normalize_at"])
    return u


# -- jets --------------------------------------------------------------------


@dataclass(frozen=True)
class JetField:
    """Pointwise derivatives of ``u`` and its Legendre data.

    ``inv[..., i, j] = u^{ij}`` and ``dinv[..., i, j, k] = d u^{ij} / d xi_k``.
    """

    potential: Potential
    points: np.ndarray
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    d3: np.ndarray
    d4: np.ndarray
    inv: np.ndarray
    logdet: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.grad

    @cached_property
    def dinv(self) -> np.ndarray:
        return -np.einsum("nia,njb,nabk->nijk", self.inv, self.inv, self.d3)

    @cached_property
    def f_value(self) -> np.ndarray:
        """Legendre dual ``f(x) = <x, xi> - u(xi)``."""
        return np.einsum("ni,ni->n", self.grad, self.points) - self.value

    def __len__(self) -> int:
        return len(self.points)


def jets(u: Potential, pts: Grid | np.ndarray) -> JetField:
    points = pts.points if isinstance(pts, Grid) else np.atleast_2d(np.asarray(pts, dtype=float))
    val, grad, hess, d3, d4 = u.derivatives(points, 4)
    try:
        chol = np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        check_convexity(u, points)
        raise
    inv = np.linalg.inv(hess)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    return JetField(u, points, val, grad, hess, d3, d4, inv, logdet)


# -- determinant fields ------------------------------------------------------


def log_F_jets(
    j: JetField, B: BundleData, weights: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log F = log D - log det(u_ij) - <w, x>`` and its exact xi-derivatives.

    ``weights = None`` gives ``log F_Delta``; a chart's exponent weights give
    ``log F_p`` (or ``log F_E`` with a partial weight vector).
    """
    lD, gD, hD = _bundle.log_D_jets(B, j.points)
    val = lD - j.logdet
    # d_k log det = tr(U u_k);  d_kl log det = tr(U u_kl) - tr(U u_l U u_k)
    gld = np.einsum("nab,nabk->nk", j.inv, j.d3)
    M = np.einsum("nab,nbck->nack", j.inv, j.d3)
    hld = np.einsum("nab,nabkl->nkl", j.inv, j.d4) - np.einsum("nabl,nbak->nkl", M, M)
    grad = gD - gld
    hess = hD - hld
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        val = val - j.grad @ w
        grad = grad - np.einsum("nik,i->nk", j.hess, w)
        hess = hess - np.einsum("nikl,i->nkl", j.d3, w)
    return val, grad, hess


def f_p_jets(j: JetField, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``f_p = f - <p, x>`` with its exact xi-derivatives."""
    r = j.points - np.asarray(p, dtype=float)
    val = j.f_value - j.grad @ np.asarray(p, dtype=float)
    grad = np.einsum("ni,nik->nk", r, j.hess)
    hess = j.hess + np.einsum("ni,nikl->nkl", r, j.d3)
    return val, grad, hess


def face_weights(chart: VertexChart, face_facets: Sequence[int]) -> np.ndarray:
    """Weights ``w`` with ``<w, x> = sum over face facets of x_p^i``."""
    sel = [i for i, k in enumerate(chart.facets) if k in set(face_facets)]
    if len(sel) != len(face_facets):
        raise PolytopeError("face facets must all pass through the chart vertex")
    return chart.B[:, sel].sum(axis=1)


@dataclass(frozen=True)
class DeterminantField:
    """Logs of ``F_Delta``, per-chart ``F_p`` and an optional face ``F_E``.

    The power-of-four normalization constant of ``F_p`` is omitted: it is an
    additive constant in ``log F_p`` and drops out of every derivative.
    """

    log_F_delta: np.ndarray
    log_F_p: dict[int, np.ndarray]
    log_F_E: np.ndarray | None = None
    face: tuple[int, ...] | None = None

    @property
    def F_delta(self) -> np.ndarray:
        return np.exp(self.log_F_delta)

    def F_p(self, vertex: int) -> np.ndarray:
        return np.exp(self.log_F_p[vertex])

    @property
    def F_E(self) -> np.ndarray | None:
        return None if self.log_F_E is None else np.exp(self.log_F_E)


def face_chart(P: Polytope, face_facets: Sequence[int]) -> VertexChart:
    """Chart at the first vertex lying on all of ``face_facets``."""
    from .polytope import vertex_chart

    for vi in range(len(P.vertices)):
        act = P.active_facets(vi)
        if all(k in act for k in face_facets):
            return vertex_chart(P, vi, first=tuple(face_facets))
    raise PolytopeError(f"facets {list(face_facets)} do not meet in a face")


def determinant_fields(
    j: JetField,
    B: BundleData,
    charts: Sequence[VertexChart] = (),
    face: Sequence[int] | None = None,
) -> DeterminantField:
    base = _bundle.log_D(B, j.points) - j.logdet
    per = {c.vertex_index: base - j.grad @ c.exponent_weights for c in charts}
    logE = None
    if face is not None:
        if len(face) == 0:
            logE = base.copy()
        else:
            ch = face_chart(j.potential.polytope, face)
            logE = base - j.grad @ face_weights(ch, face)
    return DeterminantField(base, per, logE, None if face is None else tuple(face))


# -- Legendre duality --------------------------------------------------------


class LegendreDual:
    """The Kähler potential ``f(x) = sup_xi <x, xi> - u(xi)`` of ``u``.

    ``xi(x) = (grad u)^{-1}(x)`` is found by damped Newton on the convex
    function ``u(xi) - <x, xi>``, kept strictly inside the polytope when the
    Guillemin term is present.
    """

    def __init__(self, u: Potential, tol: float = 1e-14, max_iter: int = 200):
        self.u = u
        self.tol = tol
        self.max_iter = max_iter

    def _feasible(self, pts: np.ndarray) -> np.ndarray:
        if not self.u.guillemin:
            return np.ones(len(pts), dtype=bool)
        return self.u.polytope.is_interior(pts)

    def xi_of_x(self, x: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        N, n = x.shape
        if start is None:
            xi = np.tile(self.u.polytope.barycenter, (N, 1))
        else:
            xi = np.array(np.atleast_2d(start), dtype=float, copy=True)
            bad = ~self._feasible(xi)
            xi[bad] = self.u.polytope.barycenter
        active = np.ones(N, dtype=bool)
        for _ in range(self.max_iter):
            if not active.any():
                break
            ids = np.flatnonzero(active)
            val, g, H = self.u.derivatives(xi[ids], 2)
            r = g - x[ids]
            step = -np.linalg.solve(H, r[..., None])[..., 0]
            dec = -np.einsum("ni,ni->n", r, step)
            obj = val - np.einsum("ni,ni->n", x[ids], xi[ids])
            t = np.ones(len(ids))
            pending = np.ones(len(ids), dtype=bool)
            for _ls in range(60):
                cand = xi[ids] + t[:, None] * step
                ok = self._feasible(cand)
                newobj = np.full(len(ids), np.inf)
                if ok.any():
                    newobj[ok] = self.u.value(cand[ok]) - np.einsum("ni,ni->n", x[ids][ok], cand[ok])
                accept = ok & (newobj <= obj - 0.25 * t * dec + 1e-15 * np.abs(obj))
                pending &= ~accept
                if not pending.any():
                    break
                t = np.where(pending, 0.5 * t, t)
            xi[ids] = xi[ids] + t[:, None] * step
            scale = 1.0 + np.abs(x[ids]).max(axis=1)
            done = (dec < self.tol * scale) | (np.abs(step).max(axis=1) < 1e-16 * (1 + np.abs(xi[ids]).max(axis=1)))
            active[ids[done]] = False
        return xi

    def value(self, x: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = self.xi_of_x(x, start)
        return np.einsum("ni,ni->n", x, xi) - self.u.value(xi)

    def gradient(self, x: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
        return self.xi_of_x(x, start)

    def hessian(self, x: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
        """``f_ij(x) = u^{ij}(xi(x))``."""
        return np.linalg.inv(self.u.hessian(self.xi_of_x(x, start)))


def legendre_recover(dual: LegendreDual, xi: np.ndarray, x0: np.ndarray | None = None, max_iter: int = 100) -> np.ndarray:
    """Transform ``f`` back: ``sup_x <x, xi> - f(x)`` by Newton in ``x``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x = np.zeros_like(xi) if x0 is None else np.array(x0, dtype=float, copy=True)
    warm = None
    for _ in range(max_iter):
        xs = dual.xi_of_x(x, warm)
        warm = xs
        r = xs - xi
        H = np.linalg.inv(dual.u.hessian(xs))
        step = -np.linalg.solve(H, r[..., None])[..., 0]
        # f - <x, xi> is convex; damp large steps for far-off starts
        big = np.abs(step).max(axis=1)
        step *= np.minimum(1.0, 5.0 / np.maximum(big, 1e-300))[:, None]
        x = x + step
        if np.abs(r).max() < 1e-15 and big.max() < 1e-12:
            break
    f = np.einsum("ni,ni->n", x, dual.xi_of_x(x, warm)) - dual.u.value(dual.xi_of_x(x, warm))
    return np.einsum("ni,ni->n", x, xi) - f


@dataclass(frozen=True)
class LegendreReport:
    points: int
    involution_rms: float
    involution_max: float
    duality_max: float
    f_at_origin: float | None


def legendre_check(u: Potential, pts: Grid | np.ndarray) -> LegendreReport:
    """Round-trip ``u -> f -> u`` and ``f_ij u_jk = delta_ik`` on sample points."""
    points = pts.points if isinstance(pts, Grid) else np.atleast_2d(pts)
    dual = LegendreDual(u)
    j = jets(u, points)
    rec = legendre_recover(dual, points)
    err = rec - j.value
    fij = dual.hessian(j.x, start=points)
    dual_err = np.abs(np.einsum("nij,njk->nik", fij, j.hess) - np.eye(u.n)).max()
    f0 = None
    try:
        f0 = float(dual.value(np.zeros((1, u.n)))[0])
    except (PolytopeError, np.linalg.LinAlgError):
        pass
    return LegendreReport(
        len(points), float(np.sqrt(np.mean(err**2))), float(np.abs(err).max()), float(dual_err), f0
    )
