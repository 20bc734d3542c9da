"""Central finite differences used as independent oracles.

Stencils are laid out in an orthonormal frame whose first axis is the unit
normal of the nearest facet, so a field of the form ``g(delta_k)`` produces
truncation error only in the normal-normal block.  The step along a frame
axis ``v`` is ``s = h * min(1, d_v / w) ** 1.5``, with ``d_v`` the smallest
scaled distance ``delta_k / |a_k|_1`` over facets that ``v`` crosses.

Fields built from the Guillemin term behave like ``log delta`` near a
facet.  The pushed-forward Hessian error is of order ``(s / delta)**2``, and
tracing it against ``f^{ij} = u_ij ~ 1 / delta`` costs one more power of
``delta``.  This step therefore keeps the traced truncation error uniformly
``O(h**2)``, and axes parallel to the facet keep the full step, so
round-off stays small.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .polytope import Polytope, diameter


def _facet_frames(P: Polytope) -> np.ndarray:
    frames = []
    for a in P.normals:
        _, _, vt = np.linalg.svd(a[None, :])
        V = vt.T.copy()
        nrm = a / np.linalg.norm(a)
        if V[:, 0] @ nrm < 0:
            V[:, 0] = -V[:, 0]
        frames.append(V)
    return np.array(frames)


def stencil_layout(P: Polytope, pts: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-point frames ``(N, n, n)`` (columns are axes) and steps ``(N, n)``."""
    pts = np.atleast_2d(pts)
    d = P.delta(pts)
    A = P.normals
    nearest = np.argmin(d / np.linalg.norm(A, axis=1), axis=1)
    V = _facet_frames(P)[nearest]
    proj = np.abs(np.einsum("kj,nji->nki", A, V))  # |a_k . v_i|
    crosses = proj > 1e-12 * np.linalg.norm(A, axis=1)[None, :, None]
    a1 = np.abs(A).sum(axis=1)
    w = 0.25 * diameter(P)
    with np.errstate(divide="ignore"):
        rho = np.where(crosses, (d / a1)[:, :, None], np.inf).min(axis=1)
        # every stencil point xi +- s_i v_i +- s_j v_j must stay strictly inside
        cap = np.where(crosses, d[:, :, None] / (4.0 * proj), np.inf).min(axis=1)
    s = h * np.minimum(1.0, rho / w) ** 1.5
    return V, np.minimum(s, cap)


def gradient_hessian(
    func: Callable[[np.ndarray], np.ndarray],
    pts: np.ndarray,
    steps: np.ndarray,
    frames: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Second-order central differences of a pointwise function.

    Derivatives are taken along the frame axes and rotated back to the
    standard basis.
    """
    pts = np.atleast_2d(pts)
    N, n = pts.shape
    s = np.broadcast_to(np.asarray(steps, dtype=float).reshape(N, -1), (N, n))
    V = np.broadcast_to(np.eye(n), (N, n, n)) if frames is None else frames
    disp = [s[:, i : i + 1] * V[:, :, i] for i in range(n)]
    f0 = func(pts)
    plus = [func(pts + disp[i]) for i in range(n)]
    minus = [func(pts - disp[i]) for i in range(n)]
    g = np.empty((N, n))
    H = np.empty((N, n, n))
    for i in range(n):
        g[:, i] = (plus[i] - minus[i]) / (2.0 * s[:, i])
        H[:, i, i] = (plus[i] - 2.0 * f0 + minus[i]) / s[:, i] ** 2
    for i in range(n):
        for k in range(i + 1, n):
            pp = func(pts + disp[i] + disp[k])
            pm = func(pts + disp[i] - disp[k])
            mp = func(pts - disp[i] + disp[k])
            mm = func(pts - disp[i] - disp[k])
            H[:, i, k] = H[:, k, i] = (pp - pm - mp + mm) / (4.0 * s[:, i] * s[:, k])
    grad = np.einsum("nji,ni->nj", V, g)
    hess = np.einsum("nai,nij,nbj->nab", V, H, V)
    return grad, hess


def derivatives(
    func: Callable[[np.ndarray], np.ndarray], P: Polytope, pts: np.ndarray, h: float
) -> tuple[np.ndarray, np.ndarray]:
    """Boundary-adapted gradient and Hessian of ``func`` at interior points."""
    V, s = stencil_layout(P, pts, h)
    return gradient_hessian(func, pts, s, V)


def gradient(func: Callable[[np.ndarray], np.ndarray], P: Polytope, pts: np.ndarray, h: float) -> np.ndarray:
    """Boundary-adapted central-difference gradient."""
    pts = np.atleast_2d(pts)
    V, s = stencil_layout(P, pts, h)
    n = pts.shape[1]
    g = np.stack(
        [
            (func(pts + s[:, i : i + 1] * V[:, :, i]) - func(pts - s[:, i : i + 1] * V[:, :, i])) / (2.0 * s[:, i])
            for i in range(n)
        ],
        axis=1,
    )
    return np.einsum("nji,ni->nj", V, g)


def observed_order(h: np.ndarray, err: np.ndarray) -> float:
    """Order from the two finest levels of a refinement study."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(h) < 2 or err[-1] <= 0.0 or err[-2] <= 0.0:
        return float("inf") if len(h) >= 2 and err[-1] == 0.0 else float("nan")
    return float(np.log(err[-2] / err[-1]) / np.log(h[-2] / h[-1]))
