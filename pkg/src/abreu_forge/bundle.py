"""Root weight data of the homogeneous bundle and the density it induces.

Each positive T-root contributes an affine factor ``D_alpha = 2 <M_alpha, xi>``;
the weight density is their product (with multiplicity), and
``h_G = sum_i sigma_i d(log D)/d xi_i``.  All derivatives are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .polytope import Polytope, diameter


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class Root:
    M: tuple[int, ...]
    multiplicity: int = 1


@dataclass(frozen=True)
class BundleData:
    roots: tuple[Root, ...] = ()
    sigma: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        dims = {len(r.M) for r in self.roots}
        if len(dims) > 1:
            raise BundleError("root vectors have inconsistent lengths")
        for r in self.roots:
            if any(m < 0 for m in r.M):
                raise BundleError(f"root {list(r.M)} has a negative entry")
            if sum(r.M) <= 0:
                raise BundleError(f"root {list(r.M)} has nonpositive coefficient sum")
            if r.multiplicity < 1:
                raise BundleError(f"root {list(r.M)} has multiplicity {r.multiplicity}")
        if self.roots and self.sigma and len(self.sigma) != len(self.roots[0].M):
            raise BundleError("sigma length does not match root dimension")

    @property
    def trivial(self) -> bool:
        return not self.roots

    @cached_property
    def M(self) -> np.ndarray:
        return np.array([r.M for r in self.roots], dtype=float)

    @cached_property
    def mult(self) -> np.ndarray:
        return np.array([r.multiplicity for r in self.roots], dtype=float)

    def sigma_vector(self, n: int) -> np.ndarray:
        if not self.sigma:
            return np.zeros(n)
        if len(self.sigma) != n:
            raise BundleError(f"sigma has length {len(self.sigma)}, expected {n}")
        return np.array(self.sigma, dtype=float)

    def check_dimension(self, n: int) -> None:
        if self.roots and len(self.roots[0].M) != n:
            raise BundleError(f"roots have length {len(self.roots[0].M)}, polytope dimension is {n}")
        if self.sigma and len(self.sigma) != n:
            raise BundleError(f"sigma has length {len(self.sigma)}, expected {n}")

    def to_document(self) -> dict[str, Any]:
        return {
            "roots": [{"M": list(r.M), "multiplicity": r.multiplicity} for r in self.roots],
            "sigma": list(self.sigma),
        }


TRIVIAL = BundleData()


def parse_bundle(doc: Mapping[str, Any] | None) -> BundleData:
    if doc is None:
        return TRIVIAL
    roots = []
    for k, r in enumerate(doc.get("roots", [])):
        M = r["M"]
        if any(isinstance(m, bool) or not float(m).is_integer() for m in M):
            raise BundleError(f"root {k}: entries of M must be integers")
        roots.append(Root(tuple(int(m) for m in M), int(r.get("multiplicity", 1))))
    sigma = tuple(float(s) for s in doc.get("sigma", []))
    return BundleData(tuple(roots), sigma)


def _pts(xi: Any) -> np.ndarray:
    return np.atleast_2d(np.asarray(xi, dtype=float))


def D_alpha_all(B: BundleData, xi: Any) -> np.ndarray:
    """All affine factors ``2 <M_alpha, xi>``, shape ``(N, roots)``."""
    pts = _pts(xi)
    if B.trivial:
        return np.zeros((len(pts), 0))
    vals = 2.0 * pts @ B.M.T
    if np.any(vals <= 0.0):
        raise BundleError("D_alpha is nonpositive; place the polytope in the positive orthant")
    return vals


def D_alpha(B: BundleData, alpha: int, xi: Any) -> np.ndarray | float:
    if B.trivial:
        raise BundleError("no roots: D is identically 1")
    vals = D_alpha_all(B, xi)[:, alpha]
    return float(vals[0]) if np.ndim(xi) == 1 or np.isscalar(xi) else vals


def weight_D(B: BundleData, xi: Any) -> np.ndarray | float:
    """Product of the factors with multiplicities."""
    pts = _pts(xi)
    vals = np.prod(D_alpha_all(B, pts) ** B.mult, axis=1) if not B.trivial else np.ones(len(pts))
    return float(vals[0]) if np.ndim(xi) <= 1 else vals


def log_D(B: BundleData, pts: np.ndarray) -> np.ndarray:
    pts = _pts(pts)
    if B.trivial:
        return np.zeros(len(pts))
    return np.log(D_alpha_all(B, pts)) @ B.mult


def log_D_jets(B: BundleData, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log D`` with its xi-gradient and xi-Hessian."""
    pts = _pts(pts)
    N, n = pts.shape
    if B.trivial:
        return np.zeros(N), np.zeros((N, n)), np.zeros((N, n, n))
    Da = D_alpha_all(B, pts)
    val = np.log(Da) @ B.mult
    grad = (B.mult / Da) @ (2.0 * B.M)
    hess = -np.einsum("na,ai,aj->nij", B.mult / Da**2, 2.0 * B.M, 2.0 * B.M)
    return val, grad, hess


def h_G_field(B: BundleData, pts: np.ndarray) -> np.ndarray:
    pts = _pts(pts)
    if B.trivial:
        return np.zeros(len(pts))
    _, grad, _ = log_D_jets(B, pts)
    return grad @ B.sigma_vector(pts.shape[1])


@dataclass(frozen=True)
class PositionReport:
    ratios: tuple[float, ...]
    min_D_alpha: tuple[float, ...]
    total: float
    threshold: float
    passed: bool


def check_position_condition(P: Polytope, B: BundleData) -> PositionReport:
    """Sum over roots of ``|M_alpha|_1 diam / min D_alpha`` against ``n/4``.

    ``D_alpha`` is affine, so its minimum over the closed polytope sits at a
    vertex.
    """
    n = P.dimension
    if B.trivial:
        return PositionReport((), (), 0.0, n / 4, True)
    B.check_dimension(n)
    Dv = D_alpha_all(B, P.vertex_array)
    dmin = Dv.min(axis=0)
    diam = diameter(P)
    ratios = B.mult * B.M.sum(axis=1) * diam / dmin
    total = float(ratios.sum())
    return PositionReport(
        tuple(float(r) for r in ratios),
        tuple(float(d) for d in dmin),
        total,
        n / 4,
        total < n / 4,
    )


def roots_from_pairs(pairs: Sequence[tuple[Sequence[int], int]], sigma: Sequence[float] = ()) -> BundleData:
    return BundleData(tuple(Root(tuple(M), m) for M, m in pairs), tuple(float(s) for s in sigma))
