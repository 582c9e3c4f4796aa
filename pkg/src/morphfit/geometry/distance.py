"""Signed distance fields from a material step function.

The zero set of the step function is extracted inside every flagged leaf
of a background tree: each leaf is split into a lattice of sub-cubes, each
sub-cube into simplices, and crossings along simplex edges are located by
bisection on the step function's sign.  The resulting segments (2D) or
triangles (3D) form a piecewise-linear surface.  The signed distance to it
is then sampled at the Gauss-Lobatto nodes of every leaf.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import cKDTree

from .background import BackgroundField, source_values


class NoZeroCrossingError(ValueError):
    """The step function has no zero crossing inside the domain."""


def _kuhn_simplices(dim):
    """Kuhn decomposition of the unit cube: ``d!`` simplices as corner bit-vectors."""
    out = []
    for perm in itertools.permutations(range(dim)):
        v = np.zeros(dim, dtype=np.int64)
        simplex = [v.copy()]
        for a in perm:
            v[a] = 1
            simplex.append(v.copy())
        out.append(simplex)
    return np.array(out)  # (d!, d+1, d)


def _lattice(dim, m):
    pts = np.array(list(itertools.product(range(m + 1), repeat=dim)))[:, ::-1]
    flat = lambda p: np.ravel_multi_index(tuple(p[..., a] for a in range(dim))[::-1], (m + 1,) * dim)
    cubes = np.array(list(itertools.product(range(m), repeat=dim)))[:, ::-1]
    kuhn = _kuhn_simplices(dim)
    simp = cubes[:, None, None, :] + kuhn[None]          # (m^d, d!, d+1, d)
    simp = flat(simp).reshape(-1, dim + 1)
    return pts, simp


def _bisect(src, a, b, sa, iters=52):
    """Crossing of the sign change between ``a`` and ``b`` (``sa`` = a is outside)."""
    for _ in range(iters):
        mid = 0.5 * (a + b)
        s = source_values(src, mid) > 0
        same = s == sa
        a = np.where(same[:, None], mid, a)
        b = np.where(same[:, None], b, mid)
    return 0.5 * (a + b)


def extract_zero_set(field: BackgroundField, source=None, resolution=None):
    """Piecewise-linear zero set of ``source`` inside the flagged leaves.

    Returns segments ``(n, 2, 2)`` in 2D or triangles ``(n, 3, 3)`` in 3D.
    """
    src = source if source is not None else (field.source if field.source is not None else field)
    dim = field.dim
    m = resolution or (8 if dim == 2 else 2)
    leaves = np.flatnonzero(field.cut)
    if not len(leaves):
        raise NoZeroCrossingError("no background cell contains a zero crossing")
    lat, simp = _lattice(dim, m)
    h = field.cell_size(field.level[leaves])
    X = field.cell_lo(leaves)[:, None, :] + lat[None] / m * h[:, None, :]   # (C, P, d)
    out = source_values(src, X.reshape(-1, dim)).reshape(X.shape[:2]) > 0
    # global integer lattice keys for deduplicating edges
    scale = (2 ** (field.max_level - field.level[leaves])) * m
    gidx = field.index[leaves][:, None, :] * scale[:, None, None] + lat[None] * (
        scale // m)[:, None, None]
    stride = int(gidx.max()) + 1
    gkey = np.zeros(gidx.shape[:2], dtype=np.int64)
    for a in range(dim):
        gkey = gkey * stride + gidx[..., a]

    S = out[:, simp]                                      # (C, nS, d+1)
    active = np.any(S, axis=2) & ~np.all(S, axis=2)
    ci, si = np.nonzero(active)
    if not len(ci):
        raise NoZeroCrossingError("no sign change found in the flagged cells")
    verts = simp[si]                                      # (nA, d+1)
    Sv = S[ci, si]                                        # (nA, d+1)
    pos = X[ci[:, None], verts]                           # (nA, d+1, d)
    keys = gkey[ci[:, None], verts]

    edges = list(itertools.combinations(range(dim + 1), 2))
    ea = np.array([e[0] for e in edges])
    eb = np.array([e[1] for e in edges])
    crosses = Sv[:, ea] != Sv[:, eb]                      # (nA, nEdge)
    ka, kb = keys[:, ea], keys[:, eb]
    ekey = np.stack([np.minimum(ka, kb), np.maximum(ka, kb)], axis=-1)
    sel = np.nonzero(crosses)
    uniq, inv = np.unique(ekey[sel], axis=0, return_inverse=True)
    inv = inv.ravel()
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    pa = pos[sel[0][first], ea[sel[1][first]]]
    pb = pos[sel[0][first], eb[sel[1][first]]]
    sa = Sv[sel[0][first], ea[sel[1][first]]]
    cross_pts = _bisect(src, pa, pb, sa)
    P = np.full(crosses.shape + (dim,), np.nan)
    P[sel] = cross_pts[inv]

    if dim == 2:
        # exactly two of the three edges cross
        order = np.argsort(~crosses, axis=1, kind="stable")[:, :2]
        seg = np.take_along_axis(P, order[:, :, None], axis=1)
        return seg
    tris = []
    n_out = Sv.sum(axis=1)
    one = (n_out == 1) | (n_out == 3)
    if np.any(one):
        order = np.argsort(~crosses[one], axis=1, kind="stable")[:, :3]
        tris.append(np.take_along_axis(P[one], order[:, :, None], axis=1))
    two = n_out == 2
    if np.any(two):
        # quad: cycle inside/outside pairs (i1,o1),(i1,o2),(i2,o2),(i2,o1)
        Pt, St = P[two], Sv[two]
        ins = np.argsort(St, axis=1, kind="stable")        # False (inside) first
        i1, i2, o1, o2 = ins[:, 0], ins[:, 1], ins[:, 2], ins[:, 3]
        eidx = {e: k for k, e in enumerate(edges)}
        lut = np.full((4, 4), -1)
        for (u, v), k in eidx.items():
            lut[u, v] = lut[v, u] = k
        r = np.arange(len(Pt))
        q = [Pt[r, lut[i1, o1]], Pt[r, lut[i1, o2]], Pt[r, lut[i2, o2]], Pt[r, lut[i2, o1]]]
        tris.append(np.stack([q[0], q[1], q[2]], axis=1))
        tris.append(np.stack([q[0], q[2], q[3]], axis=1))
    return np.concatenate(tris)


def _segment_distance(x, a, b):
    ab = b - a
    t = np.einsum("...d,...d->...", x - a, ab) / np.maximum(np.einsum("...d,...d->...", ab, ab), 1e-300)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(x - (a + t[..., None] * ab), axis=-1)


def _triangle_distance(x, a, b, c):
    """Exact point-triangle distance (closest point by Voronoi regions)."""
    ab, ac, ap = b - a, c - a, x - a
    dot = lambda u, v: np.einsum("...d,...d->...", u, v)
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp, cp = x - b, x - c
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(denom != 0, denom, 1e-300)
    v = vb / denom
    w = vc / denom
    face = a + v[..., None] * ab + w[..., None] * ac
    dist = np.linalg.norm(x - face, axis=-1)
    outside = (va < 0) | (vb < 0) | (vc < 0)
    if np.any(outside):
        edge = np.minimum(np.minimum(_segment_distance(x[outside], a[outside], b[outside]),
                                     _segment_distance(x[outside], b[outside], c[outside])),
                          _segment_distance(x[outside], c[outside], a[outside]))
        dist[outside] = edge
    return dist


def distance_to_elements(points, elements, k: int = 8, chunk: int = 50000) -> np.ndarray:
    """Unsigned distance from ``points`` to a set of segments or triangles.

    The exact distance is taken over the ``k`` elements with the nearest
    centroids.
    """
    points = np.atleast_2d(points)
    cent = elements.mean(axis=1)
    tree = cKDTree(cent)
    k = min(k, len(elements))
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        x = points[s:s + chunk]
        _, nb = tree.query(x, k=k)
        nb = nb.reshape(len(x), k)
        E = elements[nb]                                   # (n, k, nv, d)
        xx = np.broadcast_to(x[:, None, :], E[:, :, 0].shape)
        if elements.shape[1] == 2:
            d = _segment_distance(xx, E[:, :, 0], E[:, :, 1])
        else:
            d = _triangle_distance(xx, E[:, :, 0], E[:, :, 1], E[:, :, 2])
        out[s:s + chunk] = d.min(axis=1)
    return out


def distance_field(background: BackgroundField, order: int | None = None, source=None,
                   resolution: int | None = None) -> BackgroundField:
    """Signed distance to the zero set of a step function, on the same tree.

    Parameters
    ----------
    background : field built from the step function (or any level function
        with the desired sign); its flagged leaves are searched for the
        zero set
    order : leaf order of the output (default: the background's order)
    source : evaluable used for root finding and signs; defaults to the
        background's own ``source`` or, failing that, its interpolant
    resolution : lattice subdivisions per leaf for zero-set extraction

    Raises
    ------
    NoZeroCrossingError
        If no sign change is found.
    """
    src = source if source is not None else (
        background.source if background.source is not None else background)
    elems = extract_zero_set(background, src, resolution)
    p = background.order if order is None else int(order)
    out = background.with_values(np.zeros((background.num_leaves, (p + 1) ** background.dim)),
                                 order=p)
    nodes = out.node_positions().reshape(-1, background.dim)
    # nodes on shared cell faces repeat; evaluate each position once
    uniq, inv = np.unique(nodes, axis=0, return_inverse=True)
    dist = distance_to_elements(uniq, elems)
    sign = np.where(source_values(src, uniq) > 0, 1.0, -1.0)
    out.values = (sign * dist)[inv.ravel()].reshape(out.values.shape)
    out.zero_set = elems
    return out
