"""Point location in curved high-order meshes and background trees."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import HighOrderMesh
from .background import BackgroundField, PointNotFoundError


class MeshLocator:
    """Find ``(element, xbar)`` with ``position(element, xbar) = x``.

    Candidates come from a k-d tree over element bounding-box centers; each
    candidate is tested by Newton inversion of the element map starting at
    the reference-element center.
    """

    def __init__(self, mesh: HighOrderMesh, max_newton: int = 30):
        self.mesh = mesh
        self.max_newton = max_newton
        X = mesh.element_coords()
        lo, hi = X.min(axis=1), X.max(axis=1)
        pad = 0.1 * (hi - lo).max(axis=1, keepdims=True)
        self.lo, self.hi = lo - pad, hi + pad
        self.centers = 0.5 * (self.lo + self.hi)
        self.radius = float(np.linalg.norm(self.hi - self.lo, axis=1).max() / 2)
        self.tree = cKDTree(self.centers)
        self.diam = mesh.diameter()
        ref = mesh.ref
        self.start = np.full(mesh.dim, 1.0 / (mesh.dim + 1) if ref.is_simplex else 0.5)

    def _inside_ref(self, xbar, tol=1e-8):
        if self.mesh.ref.is_simplex:
            return np.all(xbar >= -tol, axis=1) & (xbar.sum(axis=1) <= 1 + tol)
        return np.all((xbar >= -tol) & (xbar <= 1 + tol), axis=1)

    def _newton(self, elems, x):
        ref = self.mesh.ref
        Xe = self.mesh.element_coords()[elems]
        xbar = np.tile(self.start, (len(x), 1))
        tol = 1e-13 * self.diam
        for _ in range(self.max_newton):
            vals, grads, _ = ref.eval_basis(xbar)
            r = np.einsum("ni,nia->na", vals, Xe) - x
            if np.all(np.linalg.norm(r, axis=1) <= tol):
                break
            A = np.einsum("nia,nib->nab", Xe, grads)
            step = np.linalg.solve(A, r[..., None])[..., 0]
            xbar = np.clip(xbar - step, -0.5, 1.5)
        vals, _, _ = ref.eval_basis(xbar)
        res = np.linalg.norm(np.einsum("ni,nia->na", vals, Xe) - x, axis=1)
        return xbar, res

    def find(self, x):
        """Element ids and reference coordinates for points ``x`` (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(x)
        cand = self.tree.query_ball_point(x, self.radius)
        cand = [sorted(c, key=lambda e, p=p: np.linalg.norm(self.centers[e] - p))
                for c, p in zip(cand, x)]
        cand = [[e for e in c if np.all(x[i] >= self.lo[e]) and np.all(x[i] <= self.hi[e])]
                for i, c in enumerate(cand)]
        elem = -np.ones(n, dtype=np.int64)
        xbar = np.zeros((n, self.mesh.dim))
        depth = max((len(c) for c in cand), default=0)
        for r in range(depth):
            todo = np.array([i for i in range(n) if elem[i] < 0 and len(cand[i]) > r], dtype=np.int64)
            if not len(todo):
                continue
            e = np.array([cand[i][r] for i in todo])
            xb, res = self._newton(e, x[todo])
            ok = (res <= 1e-10 * self.diam) & self._inside_ref(xb)
            elem[todo[ok]] = e[ok]
            xbar[todo[ok]] = xb[ok]
        if np.any(elem < 0):
            bad = np.flatnonzero(elem < 0)[0]
            raise PointNotFoundError(f"no element contains point {x[bad]}")
        return elem, xbar


def find_point(where, x):
    """Locate ``x`` in a mesh or a background field.

    Returns ``(ids, xbar)``; for a single point ``x`` of shape ``(d,)`` the
    id is an int and ``xbar`` a vector.
    """
    single = np.ndim(x) == 1
    if isinstance(where, BackgroundField):
        ids, xbar = where.find_point(x)
    elif isinstance(where, HighOrderMesh):
        ids, xbar = MeshLocator(where).find(x)
    elif isinstance(where, MeshLocator):
        ids, xbar = where.find(x)
    else:
        raise TypeError("find_point expects a HighOrderMesh, MeshLocator or BackgroundField")
    if single:
        return int(ids[0]), xbar[0]
    return ids, xbar
