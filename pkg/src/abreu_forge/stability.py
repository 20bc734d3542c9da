"""Sampling falsifier for uniform K-stability over single-crease probes.

A probe is ``u(xi) = max(0, <H, xi - q>)``.  It is affine on the half of the
polytope where it is positive, so both integrals are taken over the polytope
clipped by that halfspace; with ``D`` constant the cut-cell rules then make
``L_A(u)`` exact for any crease position.

The reported ``lambda_hat`` is the smallest ratio ``L_A(u) / int u D dsigma``
found in the probe family.  A nonpositive ratio certifies instability; a
positive value is only evidence of stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .bundle import BundleData
from .functionals import (
    Density,
    L_A,
    affine_defect,
    affine_scale,
    make_quadratures,
)
from .polytope import Polytope


class CalibrationError(ValueError):
    """``L_A`` does not vanish on affine functions."""

    def __init__(self, message: str, defect: np.ndarray | None = None):
        super().__init__(message)
        self.defect = defect


class NormalizationError(ValueError):
    pass


class DegenerateProbe(ValueError):
    pass


@dataclass(frozen=True)
class PLTestFunction:
    H: tuple[float, ...]
    q: tuple[float, ...]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.maximum(0.0, (pts - np.asarray(self.q)) @ np.asarray(self.H))

    def halfspace(self) -> tuple[np.ndarray, np.ndarray]:
        H = np.asarray(self.H, dtype=float)
        return H[None, :], np.array([H @ np.asarray(self.q, dtype=float)])

    def to_document(self) -> dict[str, Any]:
        return {"H": list(self.H), "q": list(self.q)}


def make_pl_test(H: Sequence[float], q: Sequence[float], p_o: Sequence[float], tol: float = 1e-12) -> PLTestFunction:
    """Probe normalized at ``p_o``: requires ``<H, p_o - q> <= 0``."""
    H_ = np.atleast_1d(np.asarray(H, dtype=float))
    q_ = np.atleast_1d(np.asarray(q, dtype=float))
    p_ = np.atleast_1d(np.asarray(p_o, dtype=float))
    val = float(H_ @ (p_ - q_))
    if val > tol:
        raise NormalizationError(f"u(p_o) = {val:.6g} > 0; the probe is not normalized at p_o")
    return PLTestFunction(tuple(float(c) for c in H_), tuple(float(c) for c in q_))


def stability_ratio(
    u: PLTestFunction, A: Density, P: Polytope, B: BundleData, resolution: int = 64, tol: float = 1e-12
) -> float:
    Q = make_quadratures(P, resolution, clip=u.halfspace())
    rep = L_A(u, A, P, B, Q)
    if rep.boundary <= tol:
        raise DegenerateProbe(f"boundary integral {rep.boundary:.3g} is not above {tol:g}")
    return rep.L_A / rep.boundary


def check_calibrated(A: Density, P: Polytope, B: BundleData, resolution: int = 64, tol: float = 1e-8) -> np.ndarray:
    """Raise :class:`CalibrationError` unless ``|L_A(l)| <= tol * scale`` on an affine basis."""
    Q = make_quadratures(P, resolution)
    defect = affine_defect(A, P, B, Q)
    scale = affine_scale(P, B, Q)
    if np.any(np.abs(defect) > tol * scale):
        raise CalibrationError(
            f"L_A does not vanish on affine functions: defect {defect.tolist()} (scale {scale:.6g})",
            defect,
        )
    return defect


@dataclass(frozen=True)
class StabilityReport:
    samples: int
    accepted: int
    lambda_hat: float
    witness: PLTestFunction | None
    negative_witness: PLTestFunction | None
    negative: bool
    seed: int
    p_o: tuple[float, ...]
    resolution: int
    ratios: tuple[float, ...] = ()

    def to_document(self) -> dict[str, Any]:
        return {
            "samples": self.samples,
            "accepted": self.accepted,
            "lambda_hat": self.lambda_hat,
            "negative": self.negative,
            "witness": None if self.witness is None else self.witness.to_document(),
            "negative_witness": None if self.negative_witness is None else self.negative_witness.to_document(),
            "seed": self.seed,
            "p_o": list(self.p_o),
            "resolution": self.resolution,
            "estimate": "minimum over single-crease probes; not a certificate",
        }


def _uniform_in(P: Polytope, rng: np.random.Generator) -> np.ndarray:
    lo, hi = P.bounds
    while True:
        q = lo + (hi - lo) * rng.random(P.dimension)
        if np.all(P.delta(q[None, :]) >= 0.0):
            return q


def draw_probes(P: Polytope, p_o: np.ndarray, samples: int, seed: int) -> list[PLTestFunction | None]:
    """Deterministic probe stream; ``None`` marks a draw rejected by normalization.

    Even draws put the crease through ``p_o`` (always normalized); odd draws
    take ``q`` uniformly in the polytope.  Slopes are uniform in ``[-1, 1]^n``.
    Each draw consumes the generator identically, so shorter runs are prefixes
    of longer ones.
    """
    rng = np.random.default_rng(seed)
    out: list[PLTestFunction | None] = []
    for k in range(samples):
        H = rng.uniform(-1.0, 1.0, P.dimension)
        q = _uniform_in(P, rng)
        if k % 2 == 0:
            q = p_o.copy()
        try:
            out.append(make_pl_test(H, q, p_o))
        except NormalizationError:
            out.append(None)
    return out


def falsify_stability(
    A: Density,
    P: Polytope,
    B: BundleData,
    p_o: Sequence[float] | None = None,
    samples: int = 1000,
    seed: int = 0,
    resolution: int = 64,
    check_calibration: bool = True,
    tol: float = 1e-12,
) -> StabilityReport:
    """Smallest probe ratio over ``samples`` seeded draws.

    Args:
        p_o: normalization point, the barycenter by default.
        check_calibration: require ``L_A`` to vanish on affine functions first.
    """
    if check_calibration:
        check_calibrated(A, P, B, resolution)
    p = P.barycenter if p_o is None else np.asarray(p_o, dtype=float)
    if not P.is_interior(p[None, :])[0]:
        raise ValueError(f"p_o = {p.tolist()} is not interior")
    best = np.inf
    witness = neg = None
    ratios = []
    for probe in draw_probes(P, p, samples, seed):
        if probe is None:
            continue
        try:
            r = stability_ratio(probe, A, P, B, resolution, tol)
        except DegenerateProbe:
            continue
        ratios.append(r)
        if r < best:
            best, witness = r, probe
        if r <= 0.0 and neg is None:
            neg = probe
    return StabilityReport(
        samples,
        len(ratios),
        float(best),
        witness,
        neg,
        neg is not None,
        seed,
        tuple(float(c) for c in p),
        resolution,
        tuple(ratios),
    )
