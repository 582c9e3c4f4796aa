"""High-order mesh container, element maps and structured mesh factories."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .refelem import GEOM_DIM, ReferenceElement, reference_element


class InvalidMeshError(ValueError):
    """Raised when a mesh has a nonpositive Jacobian determinant."""


#: attribute given to boundary faces created by trimming or splitting
NEW_BOUNDARY_ATTR = 0


@dataclass(eq=False)
class HighOrderMesh:
    """Conforming mesh of a single element geometry and order.

    ``coords`` holds one row per node; the flattened ``coords.ravel()`` is
    the global coordinate vector (node-major, ``d`` entries per node).
    ``bdr_faces`` rows are ``(element, local_face, attribute)``.
    ``material`` is the per-element 0/1 indicator, or ``None``.
    """

    geom: str
    order: int
    coords: np.ndarray
    elems: np.ndarray
    bdr_faces: np.ndarray = None
    material: np.ndarray | None = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=float)
        self.elems = np.ascontiguousarray(self.elems, dtype=np.int64)
        if self.coords.ndim != 2 or self.coords.shape[1] != self.dim:
            raise ValueError(f"coords must have shape (n, {self.dim})")
        if self.elems.ndim != 2 or self.elems.shape[1] != self.ref.num_nodes:
            raise ValueError(f"elems must have shape (n, {self.ref.num_nodes})")
        if self.elems.size and (self.elems.min() < 0 or self.elems.max() >= len(self.coords)):
            raise ValueError("element node id out of range")
        if self.elems.size:
            srt = np.sort(self.elems, axis=1)
            if np.any(srt[:, 1:] == srt[:, :-1]):
                raise ValueError("element lists a node id more than once")
        if self.bdr_faces is None:
            self.bdr_faces = np.zeros((0, 3), dtype=np.int64)
        self.bdr_faces = np.asarray(self.bdr_faces, dtype=np.int64).reshape(-1, 3)
        if self.material is not None:
            self.material = np.asarray(self.material, dtype=np.int64)
            if self.material.shape != (self.num_elems,):
                raise ValueError("material must have one entry per element")
        self._faces = None

    # -- basic properties -------------------------------------------------
    @property
    def dim(self) -> int:
        return GEOM_DIM[self.geom]

    @property
    def ref(self) -> ReferenceElement:
        return reference_element(self.geom, self.order)

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def num_elems(self) -> int:
        return self.elems.shape[0]

    def copy(self) -> "HighOrderMesh":
        return replace(self, coords=self.coords.copy(), elems=self.elems.copy(),
                       bdr_faces=self.bdr_faces.copy(),
                       material=None if self.material is None else self.material.copy(),
                       tags=dict(self.tags))

    def with_coords(self, coords) -> "HighOrderMesh":
        """Same topology, new node positions (face tables are shared)."""
        out = replace(self, coords=np.array(coords, dtype=float).reshape(self.coords.shape),
                      tags=dict(self.tags))
        out._faces = self._faces
        return out

    def element_coords(self, coords=None) -> np.ndarray:
        """Node coordinates gathered per element, shape ``(nE, Np, d)``."""
        x = self.coords if coords is None else np.asarray(coords).reshape(self.coords.shape)
        return x[self.elems]

    def _check_elem(self, e):
        if not (0 <= int(e) < self.num_elems):
            raise IndexError(f"element id {e} out of range [0, {self.num_elems})")

    # -- element maps ---------------------------------------------------------
    def position(self, e: int, xbar) -> np.ndarray:
        """Physical image of reference point(s) ``xbar`` in element ``e``."""
        self._check_elem(e)
        vals, _, _ = self.ref.eval_basis(np.atleast_2d(xbar))
        x = vals @ self.coords[self.elems[e]]
        return x[0] if np.ndim(xbar) == 1 else x

    def jacobian(self, e: int, xbar) -> np.ndarray:
        """Jacobian ``dx/dxbar`` at reference point(s) in element ``e``."""
        self._check_elem(e)
        _, grads, _ = self.ref.eval_basis(np.atleast_2d(xbar))
        A = np.einsum("ia,qib->qab", self.coords[self.elems[e]], grads)
        return A[0] if np.ndim(xbar) == 1 else A

    def jacobians(self, points=None, coords=None) -> np.ndarray:
        """Jacobians of all elements at reference points, shape ``(nE, nq, d, d)``.

        Defaults to the reference element's quadrature points.
        """
        pts = self.ref.quad_points if points is None else np.atleast_2d(points)
        _, grads, _ = self.ref.eval_basis(pts)
        return np.einsum("eia,qib->eqab", self.element_coords(coords), grads)

    def det_jacobians(self, points=None, coords=None) -> np.ndarray:
        return np.linalg.det(self.jacobians(points, coords))

    def quadrature_positions(self, points=None, coords=None) -> np.ndarray:
        """Physical quadrature point positions, shape ``(nE, nq, d)``."""
        pts = self.ref.quad_points if points is None else np.atleast_2d(points)
        vals, _, _ = self.ref.eval_basis(pts)
        return np.einsum("eia,qi->eqa", self.element_coords(coords), vals)

    def bounding_box(self):
        return self.coords.min(axis=0), self.coords.max(axis=0)

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    # -- faces ----------------------------------------------------------------
    def faces(self):
        """Face adjacency.

        Returns
        -------
        keys : (nE, nF, nv) sorted global vertex ids of each local face
        neighbor : (nE, nF) neighboring element across each face, -1 on the boundary
        neighbor_face : (nE, nF) local face id in the neighbor, -1 on the boundary
        """
        if self._faces is None:
            ref = self.ref
            fv = np.array(ref.face_vertices)
            keys = np.sort(self.elems[:, fv], axis=2)
            nE, nF, nv = keys.shape
            flat = keys.reshape(-1, nv)
            _, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
            inv = inv.ravel()
            if counts.max(initial=0) > 2:
                raise InvalidMeshError("a face is shared by more than two elements")
            order = np.argsort(inv, kind="stable")
            sorted_inv = inv[order]
            neighbor = -np.ones(nE * nF, dtype=np.int64)
            pair = np.flatnonzero(sorted_inv[1:] == sorted_inv[:-1])
            a, b = order[pair], order[pair + 1]
            neighbor[a], neighbor[b] = b, a
            nb_elem = np.where(neighbor >= 0, neighbor // nF, -1).reshape(nE, nF)
            nb_face = np.where(neighbor >= 0, neighbor % nF, -1).reshape(nE, nF)
            self._faces = (keys, nb_elem, nb_face)
        return self._faces

    def face_node_ids(self, e: int, f: int) -> np.ndarray:
        return self.elems[e, list(self.ref.face_nodes[f])]

    def boundary_node_ids(self, attrs=None) -> np.ndarray:
        """Sorted node ids on boundary faces whose attribute is in ``attrs``."""
        fn = self.ref.face_nodes
        ids = []
        for e, f, a in self.bdr_faces:
            if attrs is None or a in attrs:
                ids.append(self.elems[e, list(fn[f])])
        if not ids:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(ids))

    def compute_boundary(self, attr_fn=None):
        """Recompute ``bdr_faces`` from face adjacency.

        ``attr_fn(vertex_coords)`` maps the ``(nv, d)`` vertex coordinates
        of a boundary face to an attribute; defaults to ``1``.
        """
        _, nb, _ = self.faces()
        e, f = np.nonzero(nb < 0)
        fv = self.ref.face_vertices
        attrs = np.ones(len(e), dtype=np.int64)
        if attr_fn is not None:
            for k, (ee, ff) in enumerate(zip(e, f)):
                attrs[k] = attr_fn(self.coords[self.elems[ee, list(fv[ff])]])
        self.bdr_faces = np.column_stack([e, f, attrs]).astype(np.int64)
        return self.bdr_faces

    def check_conforming(self) -> bool:
        """True if every interior face lists identical node ids from both sides."""
        _, nb, nbf = self.faces()
        fn = self.ref.face_nodes
        for e, f in zip(*np.nonzero(nb >= 0)):
            mine = set(self.elems[e, list(fn[f])].tolist())
            theirs = set(self.elems[nb[e, f], list(fn[nbf[e, f]])].tolist())
            if mine != theirs:
                return False
        return True

    def node_adjacency_pattern(self):
        """Sparse (n, n) pattern of node pairs sharing an element."""
        Np = self.ref.num_nodes
        r = np.repeat(self.elems, Np, axis=1).ravel()
        c = np.tile(self.elems, (1, Np)).ravel()
        m = coo_matrix((np.ones(len(r)), (r, c)), shape=(self.num_nodes,) * 2).tocsr()
        m.data[:] = 1.0
        return m


def min_detA(mesh: HighOrderMesh, coords=None) -> float:
    """Minimum Jacobian determinant over all elements and quadrature points."""
    if mesh.num_elems == 0:
        return np.inf
    return float(mesh.det_jacobians(coords=coords).min())


def position(mesh: HighOrderMesh, e: int, xbar):
    return mesh.position(e, xbar)


def jacobian(mesh: HighOrderMesh, e: int, xbar):
    return mesh.jacobian(e, xbar)


# ---------------------------------------------------------------------------
# construction helpers


def merge_nodes(xe: np.ndarray, tol: float):
    """Merge coincident element nodes.

    Parameters
    ----------
    xe : (nE, Np, d) per-element node coordinates
    tol : points closer than ``tol`` are identified

    Returns
    -------
    coords : (n, d) unique node coordinates (first occurrence kept)
    elems : (nE, Np) connectivity
    """
    nE, Np, d = xe.shape
    pts = xe.reshape(-1, d)
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    n = len(pts)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(g, directed=False)
    # renumber clusters by first appearance
    _, first = np.unique(label, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    ids = rank[label]
    coords = np.empty((len(first), d))
    coords[ids[::-1]] = pts[::-1]  # first occurrence wins
    return coords, ids.reshape(nE, Np)


def from_element_coords(geom, order, xe, material=None, attr_fn=None, tol=None):
    """Assemble a conforming mesh from per-element node coordinates."""
    xe = np.asarray(xe, dtype=float)
    if tol is None:
        span = np.ptp(xe.reshape(-1, xe.shape[-1]), axis=0).max()
        tol = 1e-9 * max(span, 1e-300)
    coords, elems = merge_nodes(xe, tol)
    mesh = HighOrderMesh(geom, order, coords, elems, material=material)
    mesh.compute_boundary(attr_fn)
    return mesh


def box_attribute(lo, hi, tol=1e-9):
    """Attribute function for axis-aligned boxes.

    Faces on ``x=lo`` get 1, ``x=hi`` 2, ``y=lo`` 3, ``y=hi`` 4, ``z=lo`` 5,
    ``z=hi`` 6; anything else gets :data:`NEW_BOUNDARY_ATTR`.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)

    def attr(v):
        for a in range(v.shape[1]):
            if np.all(np.abs(v[:, a] - lo[a]) < tol):
                return 2 * a + 1
            if np.all(np.abs(v[:, a] - hi[a]) < tol):
                return 2 * a + 2
        return NEW_BOUNDARY_ATTR

    return attr


def _affine_simplex_nodes(ref, verts):
    # verts: (d+1, d) physical vertices in reference vertex order
    v = np.asarray(verts, float)
    return v[0] + ref.nodes @ (v[1:] - v[0])


def _oriented(verts):
    v = np.asarray(verts, float)
    if np.linalg.det((v[1:] - v[0]).T) < 0:
        v = v.copy()
        v[[1, 2]] = v[[2, 1]]
    return v


_SPLITS = {"tri": (2, 4), "tet": (24,)}


def make_cartesian(dim: int, counts, order: int, geom: str | None = None,
                   split: int | None = None, lo=None, hi=None) -> HighOrderMesh:
    """Structured mesh of the unit box (or ``[lo, hi]``).

    Parameters
    ----------
    dim : 2 or 3
    counts : cells per direction (an int is broadcast)
    order : element order
    geom : ``quad``/``tri`` in 2D, ``hex``/``tet`` in 3D (default tensor)
    split : triangles per quad (2 or 4) or tets per hex (24)

    The parent cell of every element (lexicographic, x fastest) is stored
    in ``tags["cell"]``.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    counts = np.broadcast_to(np.atleast_1d(np.asarray(counts, dtype=int)), (dim,)).copy()
    if np.any(counts < 1):
        raise ValueError("need at least one cell per direction")
    if geom is None:
        geom = "quad" if dim == 2 else "hex"
    if GEOM_DIM.get(geom) != dim or geom == "segment":
        raise ValueError(f"geometry {geom!r} unsupported in {dim}D")
    if geom in _SPLITS:
        split = _SPLITS[geom][0] if split is None else split
        if split not in _SPLITS[geom]:
            raise ValueError(f"{geom} split must be one of {_SPLITS[geom]}")
    lo = np.zeros(dim) if lo is None else np.asarray(lo, float)
    hi = np.ones(dim) if hi is None else np.asarray(hi, float)
    h = (hi - lo) / counts
    ref = reference_element(geom, order)

    xe, cell = [], []
    for ci, c in enumerate(_lex_cells(counts)):
        c0 = lo + c * h
        if geom in ("quad", "hex"):
            xe.append(c0 + ref.nodes * h)
            cell.append(ci)
            continue
        corners = [c0 + np.array(v) * h for v in _unit_corners(dim)]
        for simplex in _split_cell(geom, split, corners):
            xe.append(_affine_simplex_nodes(ref, _oriented(simplex)))
            cell.append(ci)
    xe = np.array(xe)
    out = from_element_coords(geom, order, xe, attr_fn=box_attribute(lo, hi),
                              tol=1e-9 * float(h.min()))
    # parent Cartesian cell of every element
    out.tags["cell"] = np.array(cell, dtype=np.int64)
    return out


def _lex_cells(counts):
    grids = np.meshgrid(*[np.arange(c) for c in counts[::-1]], indexing="ij")
    return np.column_stack([g.ravel() for g in grids[::-1]])


def _unit_corners(dim):
    if dim == 2:
        return [(0, 0), (1, 0), (1, 1), (0, 1)]
    return [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]


_HEX_FACES = [(0, 1, 2, 3), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7), (4, 5, 6, 7)]


def _split_cell(geom, split, corners):
    c = [np.asarray(v, float) for v in corners]
    if geom == "tri":
        if split == 2:
            return [(c[0], c[1], c[2]), (c[0], c[2], c[3])]
        m = np.mean(c, axis=0)
        return [(c[0], c[1], m), (c[1], c[2], m), (c[2], c[3], m), (c[3], c[0], m)]
    center = np.mean(c, axis=0)
    out = []
    for face in _HEX_FACES:
        fc = np.mean([c[i] for i in face], axis=0)
        for k in range(4):
            a, b = c[face[k]], c[face[(k + 1) % 4]]
            out.append((center, fc, a, b))
    return out
