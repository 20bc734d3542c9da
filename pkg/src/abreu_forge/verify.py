"""Numerical checks of the vertex-chart differential inequalities.

Everything is evaluated on the interior grid.  Exact jets give the operator
values; finite differences appear only where a quantity has no closed-form
derivative (``P``, ``Q``, ``A_E``) or as the oracle in a convergence study.
Margins are empirical: a positive number on a grid proves nothing.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import bundle as _bundle
from . import fd
from .bundle import BundleData, check_position_condition
from .operators import A_p_field, box_operator, field_jets, trace_assembly
from .polytope import Polytope, VertexChart, all_vertex_charts, interior_grid
from .potential import (
    JetField,
    LegendreDual,
    Potential,
    f_p_jets,
    face_chart,
    face_weights,
    jets,
    log_F_jets,
)

IDENTITY_ORDER = 1.8
PSI_FLOOR = 1e-10


@dataclass(frozen=True)
class VerifyConfig:
    """Constants of the inequalities.

    ``kappa`` defaults to ``1 / (4 N2**a)``, which makes ``kappa F**a <= 1/4``
    wherever ``F <= N2``.
    """

    a: float = 1.0 / 3.0
    N2: float | None = None
    N1: float = 100.0
    kappa_override: float | None = None
    resolutions: tuple[int, ...] = (16, 32, 64, 128)

    @property
    def kappa(self) -> float:
        if self.kappa_override is not None:
            return self.kappa_override
        if self.N2 is None:
            raise ValueError("kappa needs N2")
        return 1.0 / (4.0 * self.N2**self.a)

    def with_N2(self, N2: float) -> "VerifyConfig":
        return VerifyConfig(self.a, float(N2), self.N1, self.kappa_override, self.resolutions)


@dataclass(frozen=True)
class InequalityReport:
    name: str
    status: str
    passed: bool | None
    min_margin: float | None = None
    argmin: tuple[float, ...] | None = None
    convergence: tuple[dict[str, float], ...] = ()
    order: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_document(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status,
            "passed": self.passed,
            "min_margin": self.min_margin,
            "argmin": None if self.argmin is None else list(self.argmin),
            "convergence": [dict(row) for row in self.convergence],
            "order": self.order,
            "details": self.details,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ABREU_FORGE_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Sequence) -> list:
    """Ordered map; runs in a thread pool capped by ``ABREU_FORGE_THREADS``."""
    k = min(_threads(), len(items))
    if k <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def _order(rows: Sequence[dict[str, float]], key: str = "error") -> float | None:
    if len(rows) < 2:
        return None
    return fd.observed_order(np.array([r["h"] for r in rows]), np.array([r[key] for r in rows]))


# -- pointwise fields ----------------------------------------------------------


def psi_field(grad_xi: np.ndarray, j: JetField) -> np.ndarray:
    """``sum f^{ij} V_{x^i} V_{x^j}``, which equals ``grad_xi V . u^{ij} . grad_xi V``."""
    return np.einsum("ni,nij,nj->n", grad_xi, j.inv, grad_xi)


def P_field(F: np.ndarray, psi: np.ndarray, cfg: VerifyConfig) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return np.exp(cfg.kappa * F**cfg.a) * np.sqrt(F) * np.asarray(psi, dtype=float)


def matched_jets(u_g: Potential, j_f: JetField) -> JetField:
    """Jets of ``u_g`` at the points whose ``g``-moment image matches ``x_f``."""
    xi_g = LegendreDual(u_g).xi_of_x(j_f.x, start=j_f.points)
    return jets(u_g, xi_g)


def T_and_Q(
    j_f: JetField, j_g: JetField, F_p: np.ndarray, cfg: VerifyConfig, inf_phi: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``T = sum f^{ij} g_ij``, ``Q`` and ``phi = f - g`` at matched ``x``.

    ``f^{ij}`` is the xi-Hessian of ``u_f`` and ``g_ij`` the inverse xi-Hessian
    of ``u_g``, both taken at the same ``x``.
    """
    scale = 1.0 + np.abs(j_f.x).max(initial=0.0)
    if j_f.x.shape != j_g.x.shape or not np.allclose(j_f.x, j_g.x, rtol=0.0, atol=1e-8 * scale):
        raise ValueError("grids incompatible: jets are not at matching x")
    T = np.einsum("nij,nji->n", j_f.hess, j_g.inv)
    phi = j_f.f_value - j_g.f_value
    lo = float(phi.min()) if inf_phi is None else inf_phi
    Q = np.exp(-cfg.N1 * (phi - lo + 1.0)) * np.sqrt(F_p) * T
    return T, Q, phi


def _box_of(func: Callable[[np.ndarray], np.ndarray], j: JetField, B: BundleData, h: float) -> np.ndarray:
    g, H = fd.derivatives(func, j.potential.polytope, j.points, h)
    return box_operator(g, H, j, B)


def _P_function(u: Potential, B: BundleData, weights: np.ndarray | None, cfg: VerifyConfig):
    def func(pts: np.ndarray) -> np.ndarray:
        jj = jets(u, pts)
        lv, g, _ = log_F_jets(jj, B, weights)
        return P_field(np.exp(lv), psi_field(g, jj), cfg)

    return func


def _A_function(u: Potential, B: BundleData, weights: np.ndarray | None):
    """``A = -box V`` evaluated with exact jets at arbitrary points."""

    def func(pts: np.ndarray) -> np.ndarray:
        jj = jets(u, pts)
        _, g, H = log_F_jets(jj, B, weights)
        return -box_operator(g, H, jj, B)

    return func


# -- subharmonicity -----------------------------------------------------------


def choose_N(max_A_p: float, n: int) -> int:
    """Smallest integer ``N`` with ``max A_p < (n/2) N``."""
    return int(math.floor(2.0 * max_A_p / n)) + 1


def identity_residual(u: Potential, B: BundleData, chart: VertexChart, resolution: int) -> dict[str, float]:
    """``max |box log F_p + A_p|`` with ``box log F_p`` from finite differences."""
    G = interior_grid(u.polytope, resolution)
    j = jets(u, G)
    g, H = field_jets(j, B, chart.exponent_weights, "fd", G.h)
    err = np.abs(box_operator(g, H, j, B) + A_p_field(chart, j, B))
    return {"resolution": resolution, "h": G.h, "error": float(err.max())}


def identity_study(
    u: Potential, B: BundleData, charts: Sequence[VertexChart] | None = None, resolutions: Sequence[int] = (16, 32, 64, 128)
) -> InequalityReport:
    charts = list(all_vertex_charts(u.polytope) if charts is None else charts)
    per: dict[str, Any] = {}
    worst: float | None = None
    ok = True
    rows_all: list[dict[str, float]] = []
    for c in charts:
        rows = _map(lambda r: identity_residual(u, B, c, r), list(resolutions))
        order = _order(rows)
        per[str(c.vertex_index)] = {"order": order, "table": rows}
        if order is None or not order >= IDENTITY_ORDER:
            ok = False
        worst = order if worst is None or (order is not None and order < worst) else worst
        for r in rows:
            rows_all.append({"vertex": c.vertex_index, **r})
    return InequalityReport(
        "box log F_p + A_p",
        "pass" if ok else "fail",
        ok,
        min_margin=None,
        convergence=tuple(rows_all),
        order=worst,
        details={"per_vertex": per, "required_order": IDENTITY_ORDER},
    )


def verify_subharmonicity(
    P: Polytope,
    B: BundleData,
    u: Potential,
    resolution: int = 64,
    charts: Sequence[VertexChart] | None = None,
) -> InequalityReport:
    """``box(log F_p + N f_p) > 0`` on the grid for every vertex chart."""
    name = "box(log F_p + N f_p) > 0"
    pos = check_position_condition(P, B)
    if not pos.passed:
        return InequalityReport(
            name,
            "hypothesis_failed",
            False,
            details={
                "reason": "position condition fails",
                "position_total": pos.total,
                "threshold": pos.threshold,
            },
        )
    charts = list(all_vertex_charts(P) if charts is None else charts)
    n = P.dimension
    G = interior_grid(P, resolution)
    j = jets(u, G)
    A_p = {c.vertex_index: A_p_field(c, j, B) for c in charts}
    max_A = max(float(a.max()) for a in A_p.values())
    N = choose_N(max_A, n)
    best = np.inf
    arg: np.ndarray | None = None
    min_fp = np.inf
    per: dict[str, Any] = {}
    for c in charts:
        _, g, H = log_F_jets(j, B, c.exponent_weights)
        box_logF = box_operator(g, H, j, B)
        _, gf, Hf = f_p_jets(j, c.p)
        box_fp = box_operator(gf, Hf, j, B)
        margin = box_logF + N * box_fp
        k = int(np.argmin(margin))
        per[str(c.vertex_index)] = {
            "min_margin": float(margin[k]),
            "min_box_f_p": float(box_fp.min()),
            "max_A_p": float(A_p[c.vertex_index].max()),
        }
        min_fp = min(min_fp, float(box_fp.min()))
        if margin[k] < best:
            best, arg = float(margin[k]), G.points[k]
    bound = n / 2 - 10.0 * G.h
    ok = best > 0.0 and min_fp >= bound
    return InequalityReport(
        name,
        "pass" if ok else "fail",
        ok,
        min_margin=best,
        argmin=tuple(float(c) for c in arg),
        convergence=({"resolution": resolution, "h": G.h, "margin": best},),
        details={
            "N": N,
            "max_A_p": max_A,
            "min_box_f_p": min_fp,
            "box_f_p_bound": bound,
            "position_total": pos.total,
            "per_vertex": per,
        },
    )


# -- the P inequality -----------------------------------------------------------


def _face_setup(u: Potential, face: Sequence[int] | None) -> np.ndarray | None:
    if not face:
        return None
    return face_weights(face_chart(u.polytope, face), face)


def trace_identity_residual(
    u: Potential, B: BundleData, resolution: int, face: Sequence[int] | None = None
) -> dict[str, float]:
    """Assembled trace from finite-difference jets of ``V`` against exact ``box V``."""
    G = interior_grid(u.polytope, resolution)
    j = jets(u, G)
    w = _face_setup(u, face)
    g_fd, H_fd = field_jets(j, B, w, "fd", G.h)
    g, H = field_jets(j, B, w)
    err = np.abs(trace_assembly(g_fd, H_fd, j, B) - box_operator(g, H, j, B))
    exact = np.abs(trace_assembly(g, H, j, B) - box_operator(g, H, j, B))
    return {"resolution": resolution, "h": G.h, "error": float(err.max()), "exact_residual": float(exact.max())}


def trace_identity_study(
    u: Potential, B: BundleData, resolutions: Sequence[int] = (16, 32, 64, 128), face: Sequence[int] | None = None
) -> InequalityReport:
    rows = _map(lambda r: trace_identity_residual(u, B, r, face), list(resolutions))
    order = _order(rows)
    ok = order is not None and order >= IDENTITY_ORDER
    return InequalityReport(
        "trace identity",
        "pass" if ok else "fail",
        ok,
        convergence=tuple(rows),
        order=order,
        details={"required_order": IDENTITY_ORDER},
    )


def vbar_norm_sq(grad_xi: np.ndarray, hess_xi: np.ndarray, j: JetField, B: BundleData) -> np.ndarray:
    """Toric block plus fibre diagonal of the complex Hessian norm of ``V``, with 1/16 scaling."""
    from .operators import x_derivatives

    Vx, Vxx = x_derivatives(grad_xi, hess_xi, j)
    toric = np.einsum("nil,njm,nij,nlm->n", j.hess, j.hess, Vxx, Vxx) / 16.0
    if B.trivial:
        return toric
    Da = _bundle.D_alpha_all(B, j.points)
    dDa_x = np.einsum("am,nmk->nak", 2.0 * B.M, j.inv)
    blk = np.einsum("nkl,nak,nl->na", j.hess, dDa_x, Vx) / Da
    return toric + (blk**2 @ B.mult) / 16.0


def p_inequality_margin(
    P: Polytope,
    B: BundleData,
    u: Potential,
    face: Sequence[int] | None = None,
    cfg: VerifyConfig = VerifyConfig(),
    resolution: int = 32,
) -> InequalityReport:
    """Pointwise ``box P / P - RHS`` for the face determinant ``F_E``; exploratory."""
    gate = trace_identity_study(u, B, cfg.resolutions, face)
    G = interior_grid(P, resolution)
    j = jets(u, G)
    w = _face_setup(u, face)
    lv, g, H = log_F_jets(j, B, w)
    F = np.exp(lv)
    if cfg.N2 is None:
        cfg = cfg.with_N2(float(F.max()))
    psi = psi_field(g, j)
    Pv = P_field(F, psi, cfg)
    lhs = _box_of(_P_function(u, B, w, cfg), j, B, G.h) / np.where(Pv > 0, Pv, np.nan)
    A = -box_operator(g, H, j, B)
    dA = fd.gradient(_A_function(u, B, w), P, G.points, G.h)
    cross = np.abs(np.einsum("ni,nij,nj->n", dA, j.inv, g))
    kF = cfg.kappa * F**cfg.a
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = (
            vbar_norm_sq(g, H, j, B) / (2.0 * psi)
            + cfg.a**2 * kF * (1.0 - 2.0 * kF) * psi
            - 2.0 * cross / psi
            - (cfg.a * kF + 0.5) * A
        )
    keep = psi > PSI_FLOOR
    margin = (lhs - rhs)[keep]
    pts = G.points[keep]
    if len(margin) == 0:
        return InequalityReport(
            "P inequality",
            "exploratory",
            None,
            details={"excluded": int((~keep).sum()), "calibration": gate.to_document()},
        )
    k = int(np.nanargmin(margin))
    return InequalityReport(
        "P inequality",
        "exploratory" if gate.passed else "calibration_failed",
        None,
        min_margin=float(margin[k]),
        argmin=tuple(float(c) for c in pts[k]),
        convergence=({"resolution": resolution, "h": G.h, "margin": float(margin[k])},),
        details={
            "excluded": int((~keep).sum()),
            "negative_points": int((margin < 0).sum()),
            "points": int(len(margin)),
            "kappa": cfg.kappa,
            "N2": cfg.N2,
            "calibration": gate.to_document(),
        },
    )


# -- the P + Q search -------------------------------------------------------------


def vertex_neighbourhood(P: Polytope, chart: VertexChart, pts: np.ndarray, fraction: float = 0.5) -> np.ndarray:
    """Mask of points whose chart coordinates are all below ``fraction`` of the chart extent."""
    P_ext = chart.to_chart(P.vertex_array).max(axis=0)
    y = chart.to_chart(pts)
    return np.all(y <= fraction * P_ext, axis=1)


def _Q_function(u_f: Potential, u_g: Potential, B: BundleData, chart: VertexChart, cfg: VerifyConfig, inf_phi: float):
    def func(pts: np.ndarray) -> np.ndarray:
        jf = jets(u_f, pts)
        jg = matched_jets(u_g, jf)
        lv, _, _ = log_F_jets(jf, B, chart.exponent_weights)
        _, Q, _ = T_and_Q(jf, jg, np.exp(lv), cfg, inf_phi)
        return Q

    return func


def pq_constant_search(
    P: Polytope,
    B: BundleData,
    u: Potential,
    g: Potential,
    cfg: VerifyConfig = VerifyConfig(),
    C1_candidates: Sequence[float] = (0.0, 1.0, 10.0, 100.0, 1000.0),
    resolution: int = 32,
    fraction: float = 0.5,
) -> InequalityReport:
    """Empirical ``C_2(C_1) = inf box(P + Q + C_1 f_p) / (P + Q)**2`` near each vertex."""
    name = "box(P + Q + C1 f_p) >= C2 (P + Q)^2"
    if P.dimension != 2:
        raise ValueError("the P + Q search is defined for n = 2")
    G = interior_grid(P, resolution)
    j = jets(u, G)
    jg = matched_jets(g, j)
    charts = all_vertex_charts(P)
    hyp: dict[str, float] = {"A_p_C1": 0.0, "F_p": 0.0, "phi_plus_z": 0.0}
    setups = []
    for c in charts:
        mask = vertex_neighbourhood(P, c, G.points, fraction)
        lv, lg, _ = log_F_jets(j, B, c.exponent_weights)
        A_p = A_p_field(c, j, B)
        dA = fd.gradient(_A_function(u, B, c.exponent_weights), P, G.points, G.h)
        phi = j.f_value - jg.f_value
        z = np.sqrt(np.exp(c.x_chart(j.x)).sum(axis=1))
        hyp["A_p_C1"] = max(hyp["A_p_C1"], float(np.abs(A_p[mask]).max() + np.abs(dA[mask]).max()))
        hyp["F_p"] = max(hyp["F_p"], float(np.exp(lv[mask]).max()))
        hyp["phi_plus_z"] = max(hyp["phi_plus_z"], float(np.abs(phi[mask]).max() + z[mask].max()))
        setups.append((c, mask, lv, lg, phi))
    N2 = cfg.N2 if cfg.N2 is not None else max(hyp.values())
    cfg = cfg.with_N2(N2)
    violated = {k: v for k, v in hyp.items() if v > N2}
    if violated:
        return InequalityReport(
            name,
            "hypothesis_failed",
            False,
            details={"N2": N2, "hypotheses": hyp, "violated": sorted(violated)},
        )
    table = []
    per_C1: dict[float, float] = {C1: np.inf for C1 in C1_candidates}
    wit: dict[float, np.ndarray] = {}
    for c, mask, lv, lg, phi in setups:
        F = np.exp(lv)
        Pv = P_field(F, psi_field(lg, j), cfg)
        inf_phi = float(phi.min())
        _, Qv, _ = T_and_Q(j, jg, F, cfg, inf_phi)
        box_P = _box_of(_P_function(u, B, c.exponent_weights, cfg), j, B, G.h)
        box_Q = _box_of(_Q_function(u, g, B, c, cfg, inf_phi), j, B, G.h)
        _, gf, Hf = f_p_jets(j, c.p)
        box_fp = box_operator(gf, Hf, j, B)
        denom = (Pv + Qv) ** 2
        ok = mask & (denom > 0)
        for C1 in C1_candidates:
            ratio = (box_P + box_Q + C1 * box_fp)[ok] / denom[ok]
            if len(ratio) == 0:
                continue
            k = int(np.argmin(ratio))
            if ratio[k] < per_C1[C1]:
                per_C1[C1] = float(ratio[k])
                wit[C1] = G.points[ok][k]
    for C1 in C1_candidates:
        table.append({"C1": float(C1), "C2": per_C1[C1]})
    best_C1 = max(C1_candidates, key=lambda c1: per_C1[c1])
    C2 = per_C1[best_C1]
    return InequalityReport(
        name,
        "exploratory",
        None,
        min_margin=C2,
        argmin=tuple(float(x) for x in wit[best_C1]) if best_C1 in wit else None,
        convergence=tuple(table),
        details={
            "best_C1": float(best_C1),
            "C2": C2,
            "positive_C2": bool(C2 > 0),
            "N2": N2,
            "kappa": cfg.kappa,
            "hypotheses": hyp,
            "resolution": resolution,
        },
    )
