"""The linear functional ``L_A``, the Mabuchi functional ``F_A`` and affine calibration.

    L_A(u) = int_{dDelta} u D dsigma - int_Delta A u D dmu
    F_A(u) = -int_Delta log det(u_ij) D dmu + L_A(u)

Both integrals use the cut-cell rules of :mod:`abreu_forge.polytope`, which
integrate affine functions exactly when ``D`` is constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import bundle as _bundle
from .bundle import BundleData
from .polytope import (
    BoundaryQuadrature,
    Polytope,
    Quadrature,
    boundary_quadrature,
    interior_quadrature,
)
from .potential import ConvexityError, Potential


@dataclass(frozen=True)
class AffineDensity:
    """``A(xi) = a_0 + sum a_i xi_i``."""

    coeffs: tuple[float, ...]

    @classmethod
    def constant(cls, n: int, value: float) -> "AffineDensity":
        return cls((float(value),) + (0.0,) * n)

    @property
    def n(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        c = np.asarray(self.coeffs, dtype=float)
        return c[0] + pts @ c[1:]

    def to_document(self) -> dict[str, Any]:
        return {"a0": self.coeffs[0], "a": list(self.coeffs[1:])}


Density = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Quadratures:
    interior: Quadrature
    boundary: BoundaryQuadrature
    resolution: int


def make_quadratures(
    P: Polytope, resolution: int, clip: tuple[np.ndarray, np.ndarray] | None = None
) -> Quadratures:
    return Quadratures(
        interior_quadrature(P, resolution, clip),
        boundary_quadrature(P, resolution, clip),
        resolution,
    )


@dataclass(frozen=True)
class FunctionalReport:
    boundary: float
    interior: float
    L_A: float
    entropy: float | None
    F_A: float | None
    resolution: int

    def to_document(self) -> dict[str, Any]:
        return {
            "L_A": self.L_A,
            "F_A": self.F_A,
            "entropy": self.entropy,
            "boundary": self.boundary,
            "interior": self.interior,
            "resolution": self.resolution,
        }


def _evaluate(u: Callable[[np.ndarray], np.ndarray], pts: np.ndarray) -> np.ndarray:
    if len(pts) == 0:
        return np.zeros(0)
    return np.asarray(u(pts), dtype=float).reshape(len(pts))


def boundary_term(u: Callable, B: BundleData, Q: Quadratures) -> float:
    pts = Q.boundary.all_points
    if len(pts) == 0:
        return 0.0
    vals = _evaluate(u, pts)
    if not np.all(np.isfinite(vals)):
        k = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"u is not finite at boundary sample {pts[k].tolist()}")
    return Q.boundary.integrate(vals * _bundle.weight_D(B, pts))


def interior_term(u: Callable, A: Density, B: BundleData, Q: Quadratures) -> float:
    pts = Q.interior.points
    if len(pts) == 0:
        return 0.0
    return Q.interior.integrate(_evaluate(u, pts) * _evaluate(A, pts) * _bundle.weight_D(B, pts))


def L_A(u: Callable, A: Density, P: Polytope, B: BundleData, Q: Quadratures) -> FunctionalReport:
    """Linear functional; ``u`` is any callable continuous up to the boundary."""
    del P  # the quadratures already encode the domain
    bd = boundary_term(u, B, Q)
    it = interior_term(u, A, B, Q)
    return FunctionalReport(bd, it, bd - it, None, None, Q.resolution)


def entropy(u: Potential, B: BundleData, Q: Quadratures) -> float:
    pts = Q.interior.points
    sign, logdet = np.linalg.slogdet(u.hessian(pts))
    if np.any(sign <= 0):
        k = int(np.flatnonzero(sign <= 0)[0])
        raise ConvexityError(f"det(u_ij) is not positive at {pts[k].tolist()}", witness=pts[k].copy())
    return -Q.interior.integrate(logdet * _bundle.weight_D(B, pts))


def mabuchi_F_A(u: Potential, A: Density, P: Polytope, B: BundleData, Q: Quadratures) -> FunctionalReport:
    lin = L_A(u, A, P, B, Q)
    ent = entropy(u, B, Q)
    return FunctionalReport(lin.boundary, lin.interior, lin.L_A, ent, ent + lin.L_A, Q.resolution)


def _affine_basis(n: int) -> list[Callable[[np.ndarray], np.ndarray]]:
    basis: list[Callable[[np.ndarray], np.ndarray]] = [lambda p: np.ones(len(p))]
    for i in range(n):
        basis.append(lambda p, i=i: p[:, i])
    return basis


def calibrate_affine_A(P: Polytope, B: BundleData, Q: Quadratures) -> AffineDensity:
    """Affine ``A`` with ``L_A(l) = 0`` for ``l`` in ``{1, xi_1, ..., xi_n}``.

    Solves ``sum_j a_j int l_i l_j D dmu = int_{dDelta} l_i D dsigma``.
    """
    n = P.dimension
    pts = Q.interior.points
    D = _bundle.weight_D(B, pts)
    L = np.column_stack([np.ones(len(pts)), pts])
    gram = np.array([[Q.interior.integrate(L[:, i] * L[:, j] * D) for j in range(n + 1)] for i in range(n + 1)])
    bpts = Q.boundary.all_points
    Lb = np.column_stack([np.ones(len(bpts)), bpts])
    rhs = np.array([Q.boundary.integrate(Lb[:, i] * _bundle.weight_D(B, bpts)) for i in range(n + 1)])
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix is not positive definite; quadrature failed") from exc
    return AffineDensity(tuple(float(c) for c in np.linalg.solve(gram, rhs)))


def affine_defect(A: Density, P: Polytope, B: BundleData, Q: Quadratures) -> np.ndarray:
    """``L_A`` on ``1, xi_1, ..., xi_n``; zero exactly when ``A`` is calibrated."""
    return np.array([L_A(ell, A, P, B, Q).L_A for ell in _affine_basis(P.dimension)])


def affine_scale(P: Polytope, B: BundleData, Q: Quadratures) -> float:
    """Boundary mass ``int |l| D dsigma`` of the basis, used to scale tolerances."""
    bpts = Q.boundary.all_points
    D = _bundle.weight_D(B, bpts)
    return max(
        Q.boundary.integrate(np.abs(ell(bpts)) * D) for ell in _affine_basis(P.dimension)
    )


def affine_function(coeffs: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    c = np.asarray(coeffs, dtype=float)
    return lambda p: c[0] + np.atleast_2d(p) @ c[1:]
