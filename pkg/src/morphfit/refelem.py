"""Reference elements: nodal Lagrange bases and quadrature rules.

Tensor elements (segment, quad, hex) live on ``[0, 1]^d`` and carry
Lagrange bases on Gauss-Lobatto nodes.  Simplices (tri, tet) live on the
unit right simplex and use equispaced nodes.

Node ordering is lexicographic with the first coordinate varying fastest.
Local vertices and faces follow the tables below::

    quad  vertices (0,0) (1,0) (1,1) (0,1)
          faces    0: y=0   1: x=1   2: y=1   3: x=0
    tri   vertices (0,0) (1,0) (0,1)
          faces    0: y=0   1: x+y=1   2: x=0
    hex   vertices bottom quad (z=0) then top quad (z=1)
          faces    0: z=0  1: y=0  2: x=1  3: y=1  4: x=0  5: z=1
    tet   vertices (0,0,0) (1,0,0) (0,1,0) (0,0,1)
          faces    0: z=0  1: y=0  2: x+y+z=1  3: x=0
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi, roots_legendre

GEOMETRIES = ("segment", "quad", "tri", "hex", "tet")
GEOM_DIM = {"segment": 1, "quad": 2, "tri": 2, "hex": 3, "tet": 3}
TENSOR_GEOMS = ("segment", "quad", "hex")
SIMPLEX_GEOMS = ("tri", "tet")

_VERTICES = {
    "segment": [(0.0,), (1.0,)],
    "quad": [(0, 0), (1, 0), (1, 1), (0, 1)],
    "tri": [(0, 0), (1, 0), (0, 1)],
    "hex": [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    "tet": [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)],
}

# Each face is (kind, axis, value): kind "plane" means x[axis] == value,
# kind "diag" means sum(x) == 1.
_FACES = {
    "segment": [("plane", 0, 0), ("plane", 0, 1)],
    "quad": [("plane", 1, 0), ("plane", 0, 1), ("plane", 1, 1), ("plane", 0, 0)],
    "tri": [("plane", 1, 0), ("diag", None, 1), ("plane", 0, 0)],
    "hex": [("plane", 2, 0), ("plane", 1, 0), ("plane", 0, 1),
            ("plane", 1, 1), ("plane", 0, 0), ("plane", 2, 1)],
    "tet": [("plane", 2, 0), ("plane", 1, 0), ("diag", None, 1), ("plane", 0, 0)],
}

_MEASURE = {"segment": 1.0, "quad": 1.0, "hex": 1.0, "tri": 0.5, "tet": 1.0 / 6.0}


class InvalidOrderError(ValueError):
    pass


class UnsupportedGeometryError(ValueError):
    pass


def _check_geom(geom):
    if geom not in GEOMETRIES:
        raise UnsupportedGeometryError(f"unsupported element geometry {geom!r}")


def gauss_lobatto_nodes(p: int) -> np.ndarray:
    """Return the ``p + 1`` Gauss-Lobatto points mapped to ``[0, 1]``.

    The interior points are the roots of the derivative of the Legendre
    polynomial of degree ``p``.
    """
    if int(p) != p or p < 1:
        raise InvalidOrderError(f"order must be an integer >= 1, got {p!r}")
    p = int(p)
    if p == 1:
        return np.array([0.0, 1.0])
    inner = np.sort(legendre.Legendre.basis(p).deriv().roots().real)
    # polish the interior roots with a few Newton steps on P_p'
    dP = legendre.Legendre.basis(p).deriv()
    d2P = dP.deriv()
    for _ in range(3):
        inner = inner - dP(inner) / d2P(inner)
    t = np.concatenate(([-1.0], inner, [1.0]))
    x = 0.5 * (t + 1.0)
    x = 0.5 * (x + (1.0 - x[::-1]))
    x[0], x[-1] = 0.0, 1.0
    return x


def gauss_legendre_rule(n: int):
    """``n``-point Gauss-Legendre rule on ``[0, 1]`` (exact to degree 2n-1)."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    t, w = roots_legendre(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _gauss_jacobi01(n, alpha):
    # rule on [0,1] for weight (1-x)^alpha
    t, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (t + 1.0), w / 2.0 ** (alpha + 1)


def quadrature_rule(geom: str, npts: int):
    """Quadrature on the reference element.

    Tensor geometries use tensor Gauss-Legendre rules with ``npts`` points
    per direction; simplices use collapsed Gauss-Jacobi rules with the same
    count per direction.  All rules are exact for polynomials of degree
    ``2 * npts - 1`` (total degree for simplices, per variable otherwise).

    Returns
    -------
    points : (nq, d) array
    weights : (nq,) array, summing to the reference measure.
    """
    _check_geom(geom)
    if npts < 1:
        raise ValueError("npts must be >= 1")
    d = GEOM_DIM[geom]
    if geom in TENSOR_GEOMS:
        x, w = gauss_legendre_rule(npts)
        pts = np.array(list(itertools.product(x, repeat=d)))[:, ::-1]
        wts = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
        return np.ascontiguousarray(pts), wts
    if geom == "tri":
        u, wu = _gauss_jacobi01(npts, 1.0)
        v, wv = gauss_legendre_rule(npts)
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
        return pts, W.ravel()
    # tet
    u, wu = _gauss_jacobi01(npts, 2.0)
    v, wv = _gauss_jacobi01(npts, 1.0)
    s, ws = gauss_legendre_rule(npts)
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    W = wu[:, None, None] * wv[None, :, None] * ws[None, None, :]
    pts = np.column_stack([U.ravel(), (V * (1 - U)).ravel(), (S * (1 - U) * (1 - V)).ravel()])
    return pts, W.ravel()


def _lagrange_1d(nodes):
    """Legendre-coefficient matrices for the 1D Lagrange basis and derivatives."""
    p = len(nodes) - 1
    V = legendre.legvander(2.0 * nodes - 1.0, p)
    C = np.linalg.inv(V)  # column i = Legendre coefficients of basis i
    C1 = legendre.legder(C, 1, axis=0) * 2.0 if p >= 1 else np.zeros((1, p + 1))
    C2 = legendre.legder(C, 2, axis=0) * 4.0 if p >= 2 else np.zeros((1, p + 1))
    return C, C1, C2


def _eval_1d(coeffs, x):
    C, C1, C2 = coeffs
    t = 2.0 * np.asarray(x, dtype=float) - 1.0
    v = legendre.legvander(t, C.shape[0] - 1) @ C
    g = legendre.legvander(t, C1.shape[0] - 1) @ C1
    h = legendre.legvander(t, C2.shape[0] - 1) @ C2
    return v, g, h


def _simplex_lattice(d, p):
    if d == 2:
        return [(i, j) for j in range(p + 1) for i in range(p + 1 - j)]
    return [(i, j, k) for k in range(p + 1) for j in range(p + 1 - k)
            for i in range(p + 1 - j - k)]


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Nodal reference element for a ``(geom, order)`` pair.

    Attributes
    ----------
    nodes : (Np, d) array of reference node coordinates.
    quad_points, quad_weights : default quadrature rule (``order + 2``
        points per direction).
    vertex_nodes : local node ids of the element vertices.
    face_nodes : per local face, the local node ids lying on that face.
    face_vertices : per local face, the local node ids of its vertices.
    """

    geom: str
    order: int
    nodes: np.ndarray = field(repr=False)
    quad_points: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)
    vertex_nodes: tuple = field(repr=False)
    face_nodes: tuple = field(repr=False)
    face_vertices: tuple = field(repr=False)
    _basis_data: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return GEOM_DIM[self.geom]

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_faces(self) -> int:
        return len(self.face_nodes)

    @property
    def measure(self) -> float:
        return _MEASURE[self.geom]

    @property
    def is_simplex(self) -> bool:
        return self.geom in SIMPLEX_GEOMS

    def quadrature(self, npts: int | None = None):
        if npts is None:
            return self.quad_points, self.quad_weights
        return quadrature_rule(self.geom, npts)

    def eval_basis(self, points):
        """Evaluate basis values, gradients and Hessians at reference points.

        Parameters
        ----------
        points : (n, d) array (a single point of shape (d,) is accepted)

        Returns
        -------
        values : (n, Np)
        grads : (n, Np, d)
        hessians : (n, Np, d, d)
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        if self.geom in TENSOR_GEOMS:
            out = self._eval_tensor(pts)
        else:
            out = self._eval_simplex(pts)
        if single:
            return tuple(a[0] for a in out)
        return out

    def _eval_tensor(self, pts):
        coeffs, idx = self._basis_data
        n, d = pts.shape
        v1, g1, h1 = [], [], []
        for a in range(d):
            v, g, h = _eval_1d(coeffs, pts[:, a])
            v1.append(v[:, idx[:, a]])
            g1.append(g[:, idx[:, a]])
            h1.append(h[:, idx[:, a]])
        values = np.prod(v1, axis=0)
        Np = idx.shape[0]
        grads = np.empty((n, Np, d))
        hess = np.empty((n, Np, d, d))
        for a in range(d):
            ga = g1[a].copy()
            for c in range(d):
                if c != a:
                    ga *= v1[c]
            grads[:, :, a] = ga
            for b in range(d):
                if a == b:
                    hab = h1[a].copy()
                    others = [c for c in range(d) if c != a]
                else:
                    hab = g1[a] * g1[b]
                    others = [c for c in range(d) if c not in (a, b)]
                for c in others:
                    hab = hab * v1[c]
                hess[:, :, a, b] = hab
        return values, grads, hess

    def _eval_simplex(self, pts):
        C, expo = self._basis_data
        n, d = pts.shape
        xi = 2.0 * pts - 1.0
        m = expo.shape[0]
        # monomials prod xi_a^e_a and their derivatives
        P = np.ones((n, m))
        dP = np.ones((n, m, d))
        d2P = np.ones((n, m, d, d))
        for a in range(d):
            e = expo[:, a]
            pa = _pow(xi[:, a], e)
            dpa = e * _pow(xi[:, a], e - 1) * 2.0
            d2pa = e * (e - 1) * _pow(xi[:, a], e - 2) * 4.0
            P *= pa
            for b in range(d):
                dP[:, :, b] *= dpa if b == a else pa
                for c in range(d):
                    if b == a and c == a:
                        d2P[:, :, b, c] *= d2pa
                    elif b == a or c == a:
                        d2P[:, :, b, c] *= dpa
                    else:
                        d2P[:, :, b, c] *= pa
        values = P @ C
        grads = np.einsum("nmb,mi->nib", dP, C)
        hess = np.einsum("nmbc,mi->nibc", d2P, C)
        return values, grads, hess


def _pow(x, e):
    e = np.asarray(e)
    out = np.where(e[None, :] > 0, x[:, None] ** np.maximum(e, 0)[None, :], 1.0)
    return np.where(e[None, :] < 0, 0.0, out)


@lru_cache(maxsize=None)
def reference_element(geom: str, order: int, npts: int | None = None) -> ReferenceElement:
    """Build (and cache) the reference element for ``geom`` of ``order``."""
    _check_geom(geom)
    if int(order) != order or order < 1:
        raise InvalidOrderError(f"order must be an integer >= 1, got {order!r}")
    order = int(order)
    d = GEOM_DIM[geom]
    if geom in TENSOR_GEOMS:
        x1 = gauss_lobatto_nodes(order)
        idx = np.array(list(itertools.product(range(order + 1), repeat=d)))[:, ::-1]
        nodes = x1[idx]
        basis_data = (_lagrange_1d(x1), idx)
        lattice = idx
    else:
        lattice = np.array(_simplex_lattice(d, order))
        nodes = lattice / float(order)
        expo = np.array([e for e in itertools.product(range(order + 1), repeat=d)
                         if sum(e) <= order])
        xi = 2.0 * nodes - 1.0
        V = np.prod(_pow_matrix(xi, expo), axis=2)
        basis_data = (np.linalg.inv(V), expo)
    nodes = np.ascontiguousarray(nodes, dtype=float)

    verts = np.array(_VERTICES[geom], dtype=float)
    vertex_nodes = tuple(int(np.flatnonzero(np.all(np.abs(nodes - v) < 1e-14, axis=1))[0])
                         for v in verts)
    face_nodes, face_vertices = [], []
    for kind, axis, val in _FACES[geom]:
        if kind == "plane":
            on = lattice[:, axis] == (0 if val == 0 else order)
        else:
            on = lattice.sum(axis=1) == order
        ids = np.flatnonzero(on)
        face_nodes.append(tuple(int(i) for i in ids))
        face_vertices.append(tuple(v for v in vertex_nodes if v in set(ids.tolist())))
    npts = order + 2 if npts is None else npts
    qp, qw = quadrature_rule(geom, npts)
    return ReferenceElement(geom, order, nodes, qp, qw, vertex_nodes,
                            tuple(face_nodes), tuple(face_vertices), basis_data)


def _pow_matrix(xi, expo):
    # (n, m, d) array of xi[n, a] ** expo[m, a]
    return xi[:, None, :] ** expo[None, :, :]


def eval_basis(ref: ReferenceElement, points):
    """Module-level alias of :meth:`ReferenceElement.eval_basis`."""
    return ref.eval_basis(points)
