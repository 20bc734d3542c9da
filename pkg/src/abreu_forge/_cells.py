"""Cut-cell midpoint quadrature over convex polytopes given by halfspaces.

A polytope is ``{y : G @ y - g >= 0}``.  Cells of a uniform Cartesian grid
are intersected with it; every nonempty piece contributes one node at its
centroid with weight equal to its exact volume, so affine integrands are
integrated exactly.
"""

from __future__ import annotations

import itertools

import numpy as np
import shapely
from scipy.spatial import ConvexHull, Delaunay


def halfspace_vertices(G: np.ndarray, g: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Vertices of ``{G y >= g}`` by brute-force enumeration of n-subsets."""
    m, n = G.shape
    if n == 0:
        return np.zeros((1, 0))
    scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    found: list[np.ndarray] = []
    for idx in itertools.combinations(range(m), n):
        rows = list(idx)
        M = G[rows]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        y = np.linalg.solve(M, g[rows])
        if np.all(G @ y - g >= -tol * scale):
            if not any(np.allclose(y, z, atol=1e-9 * scale, rtol=0) for z in found):
                found.append(y)
    if not found:
        return np.zeros((0, n))
    return np.array(found)


def _piece_volume_centroid(verts: np.ndarray) -> tuple[float, np.ndarray] | None:
    n = verts.shape[1]
    if len(verts) < n + 1:
        return None
    try:
        hull = ConvexHull(verts)
    except Exception:  # qhull raises on flat input
        return None
    if hull.volume <= 0.0:
        return None
    tri = Delaunay(verts[hull.vertices])
    simp = tri.points[tri.simplices]
    edges = simp[:, 1:, :] - simp[:, :1, :]
    vols = np.abs(np.linalg.det(edges)) / np.prod(np.arange(1, n + 1))
    cents = simp.mean(axis=1)
    total = vols.sum()
    if total <= 0.0:
        return None
    return float(total), (vols[:, None] * cents).sum(axis=0) / total


def cell_quadrature(
    G: np.ndarray,
    g: np.ndarray,
    vertices: np.ndarray,
    lo: np.ndarray,
    h: float,
    counts: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, weights and cell indices of the cut-cell rule.

    Cells are ``lo + h * (idx + [0, 1]^n)`` for ``0 <= idx < counts``.
    Output is ordered by the C-order linear cell index.
    """
    n = G.shape[1]
    counts = np.asarray(counts, dtype=int)
    idx = np.indices(tuple(counts)).reshape(n, -1).T
    lower = lo + h * idx
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    # (cells, corners, facets)
    cvals = (lower[:, None, :] + h * corners[None, :, :]) @ G.T - g
    scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    eps = 1e-13 * scale
    full = np.all(cvals.min(axis=1) >= -eps, axis=1)
    empty = np.any(cvals.max(axis=1) <= eps, axis=1)
    partial = ~full & ~empty

    pts = np.empty((0, n))
    wts = np.empty(0)
    keep = np.empty(0, dtype=int)

    full_ids = np.flatnonzero(full)
    pts_list = [lower[full_ids] + 0.5 * h]
    wts_list = [np.full(len(full_ids), h**n)]
    ids_list = [full_ids]

    part_ids = np.flatnonzero(partial)
    if len(part_ids):
        if n == 1:
            a, b = float(vertices.min()), float(vertices.max())
            l0 = np.maximum(lower[part_ids, 0], a)
            l1 = np.minimum(lower[part_ids, 0] + h, b)
            ok = l1 > l0
            pts_list.append(((l0 + l1) / 2)[ok, None])
            wts_list.append((l1 - l0)[ok])
            ids_list.append(part_ids[ok])
        elif n == 2:
            poly = shapely.MultiPoint([tuple(v) for v in vertices]).convex_hull
            boxes = shapely.box(
                lower[part_ids, 0],
                lower[part_ids, 1],
                lower[part_ids, 0] + h,
                lower[part_ids, 1] + h,
            )
            pieces = shapely.intersection(boxes, poly)
            areas = shapely.area(pieces)
            ok = areas > 0.0
            cents = shapely.get_coordinates(shapely.centroid(pieces[ok]))
            pts_list.append(cents)
            wts_list.append(areas[ok])
            ids_list.append(part_ids[ok])
        else:
            eye = np.eye(n)
            got_p, got_w, got_i = [], [], []
            for cid in part_ids:
                Gc = np.vstack([G, eye, -eye])
                gc = np.concatenate([g, lower[cid], -(lower[cid] + h)])
                res = _piece_volume_centroid(halfspace_vertices(Gc, gc))
                if res is None:
                    continue
                vol, cen = res
                got_p.append(cen)
                got_w.append(vol)
                got_i.append(cid)
            if got_i:
                pts_list.append(np.array(got_p))
                wts_list.append(np.array(got_w))
                ids_list.append(np.array(got_i, dtype=int))

    pts = np.vstack(pts_list) if pts_list else pts
    wts = np.concatenate(wts_list) if wts_list else wts
    keep = np.concatenate(ids_list) if ids_list else keep
    order = np.argsort(keep, kind="stable")
    return pts[order], wts[order], idx[keep[order]]
