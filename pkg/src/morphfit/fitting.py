"""Surface fitting: material marking, conforming splits, trimming, the fit
node set and the penalty term ``F_sigma = w * sum_s sigma(x_s)^2``.

Material indicators ``eta`` are 0/1 per element; faces shared by elements
with different indicators form the interface to be fitted.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .mesh import NEW_BOUNDARY_ATTR, HighOrderMesh, from_element_coords
from .refelem import UnsupportedGeometryError


class EmptyFitSetError(ValueError):
    """The fit node set is empty."""


# ---------------------------------------------------------------------------
# marking


def quadrature_sigma(mesh: HighOrderMesh, ls, coords=None):
    """Level-set values at the physical quadrature points, ``(nE, nq)``."""
    xq = mesh.quadrature_positions(coords=coords)
    nE, nq, d = xq.shape
    return np.asarray(ls.evaluate(xq.reshape(-1, d), 0)[0]).reshape(nE, nq)


def _group_ids(mesh, groups):
    if groups is None:
        return None
    if isinstance(groups, str):
        if groups not in mesh.tags:
            raise ValueError(f"mesh has no {groups!r} tag to group elements by")
        groups = mesh.tags[groups]
    groups = np.asarray(groups, dtype=np.int64)
    if groups.shape != (mesh.num_elems,):
        raise ValueError("groups must have one entry per element")
    return np.unique(groups, return_inverse=True)[1].ravel()


def mark_integral(mesh: HighOrderMesh, ls, groups=None) -> np.ndarray:
    """``eta = 0`` where the integral of sigma over the element is >= 0, else 1.

    With ``groups`` (per-element group ids, or the name of a mesh tag such
    as ``"cell"``) the integral is taken over each group and every member
    gets the group's label.
    """
    s = quadrature_sigma(mesh, ls)
    detA = mesh.det_jacobians()
    integral = np.einsum("eq,eq,q->e", s, detA, mesh.ref.quad_weights)
    g = _group_ids(mesh, groups)
    if g is not None:
        integral = np.bincount(g, weights=integral)[g]
    return np.where(integral >= 0, 0, 1).astype(np.int64)


def mark_sign_at_max(mesh: HighOrderMesh, ls, groups=None) -> np.ndarray:
    """``eta`` from the sign of sigma at the quadrature point of largest ``|sigma|``.

    Ties in ``|sigma|`` go to the first quadrature point (of the lowest
    element id within a group); ``sigma >= 0`` gives 0.
    """
    s = quadrature_sigma(mesh, ls)
    k = np.argmax(np.abs(s), axis=1)
    v = s[np.arange(len(s)), k]
    g = _group_ids(mesh, groups)
    if g is not None:
        # within a group: largest |sigma| first, lowest element id on ties
        order = np.lexsort((np.arange(len(v)), -np.abs(v), g))
        first = np.ones(len(order), dtype=bool)
        first[1:] = g[order][1:] != g[order][:-1]
        best = np.empty(g.max() + 1)
        best[g[order][first]] = v[order][first]
        v = best[g]
    return np.where(v >= 0, 0, 1).astype(np.int64)


def interface_face_mask(mesh: HighOrderMesh, eta) -> np.ndarray:
    """``(nE, nF)`` mask of faces shared with an element of different label."""
    eta = np.asarray(eta)
    _, nb, _ = mesh.faces()
    other = eta[np.maximum(nb, 0)]
    return (nb >= 0) & (other != eta[:, None])


def interface_face_counts(mesh: HighOrderMesh, eta) -> np.ndarray:
    """Number of interface faces ``N_{E,M}`` of every element."""
    return interface_face_mask(mesh, eta).sum(axis=1)


def relabel(mesh: HighOrderMesh, eta, visit=None):
    """Two-pass relabeling that limits elements to one interface face.

    Elements are visited in ascending id (or ascending ``visit`` key), first
    those with ``eta = 0`` and then those with ``eta = 1`` (original
    labels).  With ``N_M`` the current number of interface faces and
    ``N_F`` the number of faces: ``N_M <= 1`` keeps the label,
    ``N_M = N_F - 1`` flips it, anything else keeps it.

    Returns
    -------
    eta : relabeled indicators
    split_requests : ids of elements still having more than one interface
        face after both passes
    """
    eta0 = np.asarray(eta, dtype=np.int64)
    out = eta0.copy()
    _, nb, _ = mesh.faces()
    nF = nb.shape[1]
    seq = np.arange(len(eta0)) if visit is None else np.argsort(visit, kind="stable")
    for label in (0, 1):
        for e in seq[eta0[seq] == label]:
            n = nb[e]
            nm = int(np.sum((n >= 0) & (out[np.maximum(n, 0)] != out[e])))
            if nm > 1 and nm == nF - 1:
                out[e] = 1 - out[e]
    requests = np.flatnonzero(interface_face_counts(mesh, out) > 1)
    return out, requests


# ---------------------------------------------------------------------------
# splitting and trimming

#: inset fraction of the inner quad in the five-quad split
QUAD_INSET = 0.25


def _quad_children(a=QUAD_INSET):
    """Five children of the unit square: inner quad plus one trapezoid per
    face.  Corners listed counter-clockwise from the child's first vertex."""
    b = 1 - a
    return np.array([
        [(0, 0), (1, 0), (b, a), (a, a)],      # face y=0
        [(1, 0), (1, 1), (b, b), (b, a)],      # face x=1
        [(1, 1), (0, 1), (a, b), (b, b)],      # face y=1
        [(0, 1), (0, 0), (a, a), (a, b)],      # face x=0
        [(a, a), (b, a), (b, b), (a, b)],      # inner
    ], dtype=float)


def _tri_children():
    c = (1 / 3, 1 / 3)
    return np.array([[(0, 0), (1, 0), c], [(1, 0), (0, 1), c], [(0, 1), (0, 0), c]], dtype=float)


def _child_ref_points(geom, corners, nodes):
    """Parent reference coordinates of the child's reference nodes."""
    if geom == "quad":
        s, t = nodes[:, 0:1], nodes[:, 1:2]
        c = corners
        return ((1 - s) * (1 - t) * c[0] + s * (1 - t) * c[1] + s * t * c[2] + (1 - s) * t * c[3])
    return corners[0] + nodes @ (corners[1:] - corners[0])


def inherit_attributes(mesh: HighOrderMesh, tol=None):
    """Attribute function that looks up boundary faces of ``mesh`` by the
    centroid of their vertices; unknown faces get ``NEW_BOUNDARY_ATTR``."""
    fv = mesh.ref.face_vertices
    if len(mesh.bdr_faces) == 0:
        return lambda v: NEW_BOUNDARY_ATTR
    cent = np.array([mesh.coords[mesh.elems[e, list(fv[f])]].mean(axis=0)
                     for e, f, _ in mesh.bdr_faces])
    attrs = mesh.bdr_faces[:, 2]
    tree = cKDTree(cent)
    tol = 1e-9 * mesh.diameter() if tol is None else tol

    def attr(v):
        d, k = tree.query(np.mean(v, axis=0))
        return int(attrs[k]) if d <= tol else NEW_BOUNDARY_ATTR

    return attr


def split_elements(mesh: HighOrderMesh, requests, eta=None):
    """Conforming splits of the requested elements.

    Quads are split into an inner quad and four trapezoids, one on each
    parent face, so every corner shared by two parent faces is split
    between two children.  Triangles are split into three through the
    centroid.  The parent's faces are not refined, so neighbors are left
    untouched and the mesh stays conforming.

    Parameters
    ----------
    mesh : 2D quad or triangle mesh
    requests : element ids to split
    eta : per-element indicators (default ``mesh.material``); children
        inherit the parent's value

    Returns
    -------
    mesh : new mesh with ``material`` set to the inherited indicators
    """
    if mesh.geom not in ("quad", "tri"):
        raise UnsupportedGeometryError(f"conforming splits are not available for {mesh.geom!r}")
    requests = np.unique(np.asarray(requests, dtype=np.int64))
    eta = mesh.material if eta is None else np.asarray(eta, dtype=np.int64)
    if len(requests) == 0:
        out = mesh.copy()
        out.material = None if eta is None else eta.copy()
        return out
    ref = mesh.ref
    kids = _quad_children() if mesh.geom == "quad" else _tri_children()
    child_pts = np.concatenate([_child_ref_points(mesh.geom, c, ref.nodes) for c in kids])
    vals, _, _ = ref.eval_basis(child_pts)
    X = mesh.element_coords()
    keep = np.setdiff1d(np.arange(mesh.num_elems), requests)
    new = (vals @ X[requests]).reshape(len(requests) * len(kids), ref.num_nodes, mesh.dim)
    xe = np.concatenate([X[keep], new])
    mat = None
    if eta is not None:
        mat = np.concatenate([eta[keep], np.repeat(eta[requests], len(kids))])
    tol = 1e-9 * mesh.diameter()
    out = from_element_coords(mesh.geom, mesh.order, xe, material=mat,
                              attr_fn=inherit_attributes(mesh), tol=tol)
    return out


split_quads = split_elements


def trim(mesh: HighOrderMesh, eta, keep) -> HighOrderMesh:
    """Submesh of elements with ``eta == keep``.

    ``keep=None`` keeps everything.  Unused nodes are dropped; surviving
    boundary faces keep their attribute and newly exposed faces get
    ``NEW_BOUNDARY_ATTR``.
    """
    eta = np.asarray(eta, dtype=np.int64)
    if keep is None:
        out = mesh.copy()
        out.material = eta.copy()
        return out
    sel = np.flatnonzero(eta == int(keep))
    if len(sel) == 0:
        raise ValueError(f"trimming leaves no elements with indicator {keep}")
    used, inv = np.unique(mesh.elems[sel], return_inverse=True)
    tags = {k: (v[sel] if isinstance(v, np.ndarray) and v.shape[:1] == (mesh.num_elems,) else v)
            for k, v in mesh.tags.items()}
    out = HighOrderMesh(mesh.geom, mesh.order, mesh.coords[used], inv.reshape(len(sel), -1),
                        material=eta[sel], tags=tags)
    out.compute_boundary(inherit_attributes(mesh))
    return out


# ---------------------------------------------------------------------------
# fit node set


def select_fit_nodes(mesh: HighOrderMesh, mode: str = "interface", eta=None, attrs=None) -> np.ndarray:
    """Sorted ids of the nodes to be fitted.

    ``interface`` mode takes all nodes on faces whose two elements have
    different ``eta`` (default ``mesh.material``); ``boundary`` mode takes
    all nodes on boundary faces whose attribute is in ``attrs`` (all
    boundary faces if ``attrs`` is None).
    """
    if mode == "interface":
        eta = mesh.material if eta is None else eta
        if eta is None:
            raise ValueError("interface mode needs material indicators")
        mask = interface_face_mask(mesh, eta)
        fn = mesh.ref.face_nodes
        ids = [mesh.elems[e, list(fn[f])] for e, f in zip(*np.nonzero(mask))]
        nodes = np.unique(np.concatenate(ids)) if ids else np.zeros(0, dtype=np.int64)
    elif mode == "boundary":
        nodes = mesh.boundary_node_ids(None if attrs is None else set(attrs))
    else:
        raise ValueError(f"unknown fit mode {mode!r}")
    if len(nodes) == 0:
        raise EmptyFitSetError(f"no nodes selected for fitting ({mode} mode)")
    return nodes


# ---------------------------------------------------------------------------
# penalty term


class FitTerm:
    """``F_sigma`` for a fixed node set and level set.

    With a nodal Lagrange basis each fitted node ``x_s`` is a mesh node, so
    ``dx(xbar_s)/dx_{a,i}`` is 1 for the node's own entry and 0 elsewhere:
    the gradient lives on the fitted nodes and the Hessian is block
    diagonal with one ``d x d`` block per fitted node.
    """

    def __init__(self, nodes, ls, dim: int, num_nodes: int):
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.ls = ls
        self.dim = dim
        self.ndof = num_nodes * dim
        self.dofs = (self.nodes[:, None] * dim + np.arange(dim)).ravel()

    def positions(self, coords):
        return np.asarray(coords, dtype=float).reshape(-1, self.dim)[self.nodes]

    def sigma(self, coords, order=0):
        """Values (and derivatives up to ``order``) of sigma at the fitted nodes."""
        if len(self.nodes) == 0:
            z = np.zeros(0)
            return z, np.zeros((0, self.dim)), np.zeros((0, self.dim, self.dim))
        return self.ls.evaluate(self.positions(coords), order)

    def fit_error(self, coords) -> float:
        if len(self.nodes) == 0:
            return 0.0
        return float(np.max(np.abs(self.sigma(coords)[0])))

    def energy(self, coords, w) -> float:
        return float(w * np.sum(self.sigma(coords)[0] ** 2))

    def gradient(self, coords, w) -> np.ndarray:
        s, g, _ = self.sigma(coords, 1)
        out = np.zeros(self.ndof)
        out[self.dofs] = (2 * w * s[:, None] * g).ravel()
        return out

    def hessian_blocks(self, coords, w) -> np.ndarray:
        """``(nS, d, d)`` blocks ``2 w (grad sigma grad sigma^T + sigma hess sigma)``."""
        s, g, H = self.sigma(coords, 2)
        return 2 * w * (g[:, :, None] * g[:, None, :] + s[:, None, None] * H)

    def hessian(self, coords, w) -> csr_matrix:
        B = self.hessian_blocks(coords, w)
        d = self.dim
        r = np.repeat(self.dofs.reshape(-1, d), d, axis=1).ravel()
        c = np.tile(self.dofs.reshape(-1, d), (1, d)).ravel()
        return csr_matrix((B.ravel(), (r, c)), shape=(self.ndof, self.ndof))


def _term(coords, nodes, ls):
    coords = np.asarray(coords, dtype=float)
    d = ls.dim
    return FitTerm(nodes, ls, d, coords.size // d)


def objective_sigma(coords, nodes, ls, w) -> float:
    """``F_sigma = w * sum_s sigma(x_s)^2``."""
    return _term(coords, nodes, ls).energy(coords, w)


def grad_sigma(coords, nodes, ls, w) -> np.ndarray:
    """Gradient of ``F_sigma`` w.r.t. the flattened coordinates."""
    return _term(coords, nodes, ls).gradient(coords, w)


def hess_sigma(coords, nodes, ls, w) -> csr_matrix:
    """Hessian of ``F_sigma`` (uses ``sigma * hess sigma`` in the second term)."""
    return _term(coords, nodes, ls).hessian(coords, w)


def fit_error(coords, nodes, ls) -> float:
    """``max_s |sigma(x_s)|``."""
    if len(nodes) == 0:
        raise EmptyFitSetError("fit error of an empty node set")
    return _term(coords, nodes, ls).fit_error(coords)


# ---------------------------------------------------------------------------
# adaptive weight


@dataclass(frozen=True)
class WeightState:
    """Penalization weight and its adaptation parameters.

    ``counter_mode`` selects how ``n`` evolves: ``"algorithm"`` resets it
    when the weight grows and increments it otherwise; ``"consecutive"``
    counts consecutive weight increases and resets on progress.
    """

    w: float = 10.0
    alpha: float = 10.0
    eps_dsigma: float = 1e-3
    n: int = 0
    N: int = 10
    adaptive: bool = True
    counter_mode: str = "algorithm"

    def __post_init__(self):
        if not self.w >= 0:
            raise ValueError("w must be nonnegative")
        if self.counter_mode not in ("algorithm", "consecutive"):
            raise ValueError("counter_mode must be 'algorithm' or 'consecutive'")


def stagnated(state: WeightState, err_k: float, err_k1: float) -> bool:
    """Relative decrease of the fit error below ``eps_dsigma``."""
    if err_k1 <= 0:
        return False
    return (err_k - err_k1) / err_k1 < state.eps_dsigma


def update_weight(state: WeightState, err_k: float, err_k1: float) -> WeightState:
    """Grow the weight by ``alpha`` when the fit error stagnates."""
    if not state.adaptive:
        return state
    if stagnated(state, err_k, err_k1):
        n = 0 if state.counter_mode == "algorithm" else state.n + 1
        return replace(state, w=state.alpha * state.w, n=n)
    n = state.n + 1 if state.counter_mode == "algorithm" else 0
    return replace(state, n=n)
