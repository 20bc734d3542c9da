"""Abreu operator, scalar curvature, Ricci components and the box operator.

x-derivatives are never sampled on an x-grid.  A field known through its
xi-gradient ``F_k`` and xi-Hessian ``F_kl`` is pushed forward with

    F_{x^i}      = u^{ik} F_k
    F_{x^i x^j}  = u^{ik} u^{jl} F_kl + u^{ik} (d_k u^{jl}) F_l

and ``f^{ij}``, the inverse of the x-Hessian of ``f``, equals ``u_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import bundle as _bundle
from . import fd
from .bundle import BundleData
from .polytope import VertexChart
from .potential import JetField, Potential, log_F_jets


def x_derivatives(grad_xi: np.ndarray, hess_xi: np.ndarray, j: JetField) -> tuple[np.ndarray, np.ndarray]:
    Fx = np.einsum("nik,nk->ni", j.inv, grad_xi)
    Fxx = np.einsum("nik,njl,nkl->nij", j.inv, j.inv, hess_xi) + np.einsum(
        "nik,njlk,nl->nij", j.inv, j.dinv, grad_xi
    )
    return Fx, Fxx


def box_operator(grad_xi: np.ndarray, hess_xi: np.ndarray, j: JetField, B: BundleData) -> np.ndarray:
    """``sum f^{ij} F_{x^i x^j} + sum_j (d log D / d xi_j) F_{x^j}``."""
    Fx, Fxx = x_derivatives(grad_xi, hess_xi, j)
    _, L, _ = _bundle.log_D_jets(B, j.points)
    return np.einsum("nij,nij->n", j.hess, Fxx) + np.einsum("nj,nj->n", L, Fx)


def abreu_operator(j: JetField, B: BundleData) -> np.ndarray:
    """``-(1/D) sum_ij d^2 (D u^{ij}) / d xi_i d xi_j`` by the product rule."""
    _, L, L2 = _bundle.log_D_jets(B, j.points)
    U, dU = j.inv, j.dinv
    # d_l d_k U^{ij} contracted with k = j, l = i
    dd = -(
        np.einsum("naii,njb,nabj->n", dU, U, j.d3)
        + np.einsum("nia,njbi,nabj->n", U, dU, j.d3)
        + np.einsum("nia,njb,nabji->n", U, U, j.d4)
    )
    div = np.einsum("nijj->ni", dU)
    DD = np.einsum("ni,nj->nij", L, L) + L2
    return -(np.einsum("nij,nij->n", DD, U) + 2.0 * np.einsum("ni,ni->n", L, div) + dd)


def scalar_curvature_xi(j: JetField, B: BundleData) -> np.ndarray:
    return abreu_operator(j, B) + _bundle.h_G_field(B, j.points)


def log_F_function(u: Potential, B: BundleData, weights: np.ndarray | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Pointwise ``log F`` (``F_Delta`` or, with chart weights, ``F_p``)."""

    def func(pts: np.ndarray) -> np.ndarray:
        _, g, H = u.derivatives(pts, 2)
        sign, logdet = np.linalg.slogdet(H)
        val = _bundle.log_D(B, pts) - logdet
        if weights is not None:
            val = val - g @ np.asarray(weights, dtype=float)
        return val

    return func


def field_jets(
    j: JetField,
    B: BundleData,
    weights: np.ndarray | None = None,
    method: str = "exact",
    h: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """xi-gradient and xi-Hessian of ``log F``, exact or by finite differences."""
    if method == "exact":
        _, g, H = log_F_jets(j, B, weights)
        return g, H
    if method == "fd":
        if h is None:
            raise ValueError("finite differences need a grid spacing h")
        return fd.derivatives(log_F_function(j.potential, B, weights), j.potential.polytope, j.points, h)
    raise ValueError(f"unknown method {method!r}")


def scalar_curvature_x(j: JetField, B: BundleData, method: str = "exact", h: float | None = None) -> np.ndarray:
    """``-sum f^{ij} (log F)_{x^i x^j} - sum f^{kl} (log D)_{x^k} (log F)_{x^l} + h_G``."""
    g, H = field_jets(j, B, None, method, h)
    Fx, Fxx = x_derivatives(g, H, j)
    _, L, _ = _bundle.log_D_jets(B, j.points)
    logD_x = np.einsum("nik,nk->ni", j.inv, L)
    first = np.einsum("nij,nij->n", j.hess, Fxx)
    second = np.einsum("nkl,nk,nl->n", j.hess, logD_x, Fx)
    return -first - second + _bundle.h_G_field(B, j.points)


def ricci_toric(j: JetField, B: BundleData, method: str = "exact", h: float | None = None) -> np.ndarray:
    """Toric block ``-(1/4) (log F_Delta)_{x^j x^k}``, shape ``(N, n, n)``."""
    g, H = field_jets(j, B, None, method, h)
    _, Fxx = x_derivatives(g, H, j)
    return -0.25 * Fxx


def ricci_alpha(j: JetField, B: BundleData) -> np.ndarray:
    """Fibre diagonal for each root, shape ``(N, roots)``.

    ``f^{kl} (D_alpha)_{x^k} = 2 M_alpha^l`` because ``(D_alpha)_{x^k} =
    2 sum_m M^m u^{mk}``; the contraction is still done literally.
    """
    if B.trivial:
        return np.zeros((len(j), 0))
    n = j.points.shape[1]
    g, _ = field_jets(j, B)
    Fx = np.einsum("nik,nk->ni", j.inv, g)
    dDa_x = np.einsum("am,nmk->nak", 2.0 * B.M, j.inv)
    first = -0.25 * np.einsum("nkl,nak,nl->na", j.hess, dDa_x, Fx)
    second = 0.25 * (2.0 * B.M) @ B.sigma_vector(n)
    return first + second[None, :]


def A_p_field(chart: VertexChart, j: JetField, B: BundleData) -> np.ndarray:
    """``S - sum_k (d log D / d xi_k)(sigma_k - sum_j b_k^j)``; equals ``-box log F_p``."""
    n = j.points.shape[1]
    _, L, _ = _bundle.log_D_jets(B, j.points)
    return scalar_curvature_xi(j, B) - L @ (B.sigma_vector(n) - chart.exponent_weights)


def box_log_F(
    j: JetField, B: BundleData, weights: np.ndarray | None = None, method: str = "exact", h: float | None = None
) -> np.ndarray:
    g, H = field_jets(j, B, weights, method, h)
    return box_operator(g, H, j, B)


def trace_assembly(grad_xi: np.ndarray, hess_xi: np.ndarray, j: JetField, B: BundleData) -> np.ndarray:
    """Box operator rebuilt from the toric and fibre Hessian blocks.

    Toric block ``F_{x^j x^k}`` traced with ``f^{jk}``; fibre block
    ``sum f^{kl} (D_alpha)_{x^k} F_{x^l}`` traced with ``mult / D_alpha``.
    """
    Fx, Fxx = x_derivatives(grad_xi, hess_xi, j)
    toric = np.einsum("njk,njk->n", j.hess, Fxx)
    if B.trivial:
        return toric
    Da = _bundle.D_alpha_all(B, j.points)
    dDa_x = np.einsum("am,nmk->nak", 2.0 * B.M, j.inv)
    fibre = np.einsum("nkl,nak,nl->na", j.hess, dDa_x, Fx)
    return toric + (fibre / Da) @ B.mult


@dataclass(frozen=True)
class CurvatureBundle:
    points: np.ndarray
    A: np.ndarray
    S: np.ndarray
    ric_toric: np.ndarray
    ric_alpha: np.ndarray
    A_p: dict[int, np.ndarray]

    def columns(self) -> tuple[list[str], np.ndarray]:
        N, n = self.points.shape
        names = [f"xi{i + 1}" for i in range(n)] + ["A", "S"]
        cols = [self.points[:, i] for i in range(n)] + [self.A, self.S]
        for a in range(n):
            for b in range(a, n):
                names.append(f"Ric{a + 1}{b + 1}")
                cols.append(self.ric_toric[:, a, b])
        for r in range(self.ric_alpha.shape[1]):
            names.append(f"Ric_alpha{r + 1}")
            cols.append(self.ric_alpha[:, r])
        for v in sorted(self.A_p):
            names.append(f"A_p{v}")
            cols.append(self.A_p[v])
        return names, np.column_stack(cols)


def curvature(j: JetField, B: BundleData, charts: Sequence[VertexChart] = ()) -> CurvatureBundle:
    A = abreu_operator(j, B)
    S = A + _bundle.h_G_field(B, j.points)
    return CurvatureBundle(
        j.points,
        A,
        S,
        ricci_toric(j, B),
        ricci_alpha(j, B),
        {c.vertex_index: A_p_field(c, j, B) for c in charts},
    )
