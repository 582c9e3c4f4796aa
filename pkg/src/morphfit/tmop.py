"""TMOP quality metrics, target matrices and the quality objective.

The objective is ``F_mu = sum_E sum_q w_q det(W) mu(A_q W^-1)`` where ``A``
is the element Jacobian at quadrature point ``q``.  Derivatives are taken
with respect to the global coordinate vector ``coords.ravel()``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from . import kernels
from ._kernels_py import _det, cofactor, invariant_derivs
from .mesh import HighOrderMesh, InvalidMeshError
from .refelem import GEOM_DIM, TENSOR_GEOMS


class MetricUndefinedError(ValueError):
    """Raised when a metric is evaluated at ``det(T) <= 0``."""


_METRIC_DIMS = {2: (2,), 80: (2,), 303: (3,), 77: (2, 3)}


@dataclass(frozen=True)
class MetricId:
    """One of ``mu2``, ``mu77``, ``mu80(gamma)``, ``mu303``."""

    code: int
    gamma: float = 0.5

    def __post_init__(self):
        if self.code not in _METRIC_DIMS:
            raise ValueError(f"unknown metric mu{self.code}; choose from 2, 77, 80, 303")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @classmethod
    def parse(cls, text, gamma=0.5) -> "MetricId":
        s = str(text).lower().removeprefix("mu")
        return cls(int(s), gamma)

    def check_dim(self, d):
        if d not in _METRIC_DIMS[self.code]:
            raise ValueError(f"metric mu{self.code} is not defined for {d}D meshes")

    def __str__(self):
        return f"mu{self.code}" + (f"(gamma={self.gamma})" if self.code == 80 else "")


def default_metric(dim: int) -> MetricId:
    return MetricId(2 if dim == 2 else 303)


def _as_metric(metric) -> MetricId:
    if isinstance(metric, MetricId):
        return metric
    return MetricId.parse(metric)


@dataclass(frozen=True)
class TargetSpec:
    """Target construction: ``identity`` (W = I) or ``ideal`` (equilateral
    simplex), optionally scaled uniformly."""

    kind: str = "identity"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "ideal"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("target scale must be positive")


def target_matrix(spec: TargetSpec, geom: str) -> np.ndarray:
    """Constant target Jacobian ``W`` for ``geom``."""
    d = GEOM_DIM[geom]
    if spec.kind == "identity":
        return spec.scale * np.eye(d)
    if geom in TENSOR_GEOMS:
        raise ValueError(f"ideal-simplex target requested for tensor geometry {geom!r}")
    if geom == "tri":
        W = np.array([[1.0, 0.5], [0.0, np.sqrt(3.0) / 2.0]])
    else:
        W = np.array([[1.0, 0.5, 0.5],
                      [0.0, np.sqrt(3.0) / 2.0, np.sqrt(3.0) / 6.0],
                      [0.0, 0.0, np.sqrt(2.0 / 3.0)]])
    return spec.scale * W


# ---------------------------------------------------------------------------
# pointwise metrics


def _invariants(T):
    T = np.asarray(T, dtype=float)
    tau = float(np.linalg.det(T))
    if tau <= 0:
        raise MetricUndefinedError(f"metric undefined for det(T) = {tau:g} <= 0")
    return T, float(np.sum(T * T)), tau


def metric_eval(metric, T) -> float:
    """Value of the metric at the matrix ``T``."""
    m = _as_metric(metric)
    T, I1, tau = _invariants(T)
    m.check_dim(T.shape[0])
    return float(invariant_derivs(m.code, m.gamma, I1, tau)[0])


def metric_grad(metric, T) -> np.ndarray:
    """``d mu / dT`` as a ``d x d`` matrix."""
    m = _as_metric(metric)
    T, I1, tau = _invariants(T)
    m.check_dim(T.shape[0])
    _, fI, ft, *_ = invariant_derivs(m.code, m.gamma, I1, tau)
    return 2 * fI * T + ft * cofactor(T)


def metric_hess(metric, T) -> np.ndarray:
    """``d^2 mu / dT_ab dT_ce`` as a ``(d, d, d, d)`` array."""
    m = _as_metric(metric)
    T, I1, tau = _invariants(T)
    d = T.shape[0]
    m.check_dim(d)
    _, fI, ft, fII, fIt, ftt = invariant_derivs(m.code, m.gamma, I1, tau)
    C = cofactor(T)
    eye = np.eye(d)
    out = 2 * fI * np.einsum("ac,be->abce", eye, eye)
    out += 4 * fII * np.einsum("ab,ce->abce", T, T)
    out += 2 * fIt * (np.einsum("ab,ce->abce", T, C) + np.einsum("ab,ce->abce", C, T))
    out += ftt * np.einsum("ab,ce->abce", C, C)
    # d C_ab / d T_ce = (C_ab C_ce - C_ae C_cb) / tau
    out += ft / tau * (np.einsum("ab,ce->abce", C, C) - np.einsum("ae,cb->abce", C, C))
    return out


# ---------------------------------------------------------------------------
# global objective


class SparseAssembler:
    """Fixed CSR pattern for element-block matrices on a mesh topology."""

    def __init__(self, elems: np.ndarray, d: int, ndof: int):
        nE, Np = elems.shape
        ldof = (elems[:, :, None] * d + np.arange(d)).reshape(nE, Np * d)
        rows = np.repeat(ldof, Np * d, axis=1).ravel()
        cols = np.tile(ldof, (1, Np * d)).ravel()
        key = rows * ndof + cols
        self.keys, self.map = np.unique(key, return_inverse=True)
        self.map = self.map.ravel()
        self.ndof = ndof
        r = self.keys // ndof
        self.indices = (self.keys % ndof).astype(np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=ndof))])
        self.ldof = ldof

    def slot(self, rows, cols):
        """Data indices of existing pattern entries ``(rows, cols)``."""
        key = np.asarray(rows) * self.ndof + np.asarray(cols)
        pos = np.searchsorted(self.keys, key)
        if np.any(pos >= len(self.keys)) or np.any(self.keys[np.minimum(pos, len(self.keys) - 1)] != key):
            raise KeyError("entry outside the sparsity pattern")
        return pos

    def data(self, local):
        """Sum element blocks ``(nE, n, n)`` into CSR data."""
        return np.bincount(self.map, weights=np.asarray(local).ravel(), minlength=len(self.keys))

    def matrix(self, data) -> csr_matrix:
        return csr_matrix((data, self.indices, self.indptr), shape=(self.ndof, self.ndof))

    def vector(self, local):
        """Sum element vectors ``(nE, n)`` into a global vector."""
        return np.bincount(self.ldof.ravel(), weights=np.asarray(local).ravel(), minlength=self.ndof)


class QualityObjective:
    """``F_mu`` and its derivatives for a fixed mesh topology.

    Parameters
    ----------
    mesh : mesh providing topology and reference element
    target : TargetSpec
    metric : MetricId or metric code
    npts : quadrature points per direction (default ``order + 2``)
    backend : ``"compiled"``, ``"python"`` or None (auto)
    """

    def __init__(self, mesh: HighOrderMesh, target: TargetSpec | None = None, metric=None,
                 npts: int | None = None, backend: str | None = None):
        self.mesh = mesh
        self.target = target or TargetSpec()
        self.metric = default_metric(mesh.dim) if metric is None else _as_metric(metric)
        self.metric.check_dim(mesh.dim)
        self.backend = backend
        W = target_matrix(self.target, mesh.geom)
        self.W = W
        self.detW = float(np.linalg.det(W))
        pts, wts = mesh.ref.quadrature(npts)
        _, grads, _ = mesh.ref.eval_basis(pts)
        self.D = np.ascontiguousarray(grads @ np.linalg.inv(W))
        self.wq = np.ascontiguousarray(wts * self.detW)
        self.quad_points = pts
        self.ndof = mesh.num_nodes * mesh.dim
        self._asm = None

    @property
    def assembler(self) -> SparseAssembler:
        if self._asm is None:
            self._asm = SparseAssembler(self.mesh.elems, self.mesh.dim, self.ndof)
        return self._asm

    def _run(self, coords, order):
        X = np.asarray(coords, dtype=float).reshape(-1, self.mesh.dim)[self.mesh.elems]
        out = kernels.tmop_element(X, self.D, self.wq, self.metric.code, self.metric.gamma,
                                   order, backend=self.backend)
        if not out[3] > 0:
            raise InvalidMeshError(f"nonpositive Jacobian determinant (min det(T) = {out[3]:g})")
        return out

    def min_det(self, coords) -> float:
        """Minimum ``det(A)`` at this objective's quadrature points."""
        X = np.asarray(coords, dtype=float).reshape(-1, self.mesh.dim)[self.mesh.elems]
        A = np.einsum("eia,qib->eqab", X, self.D @ self.W)
        return float(_det(A).min())

    def energy(self, coords) -> float:
        return float(self._run(coords, 0)[0].sum())

    def gradient(self, coords) -> np.ndarray:
        _, g, _, _ = self._run(coords, 1)
        return self.assembler.vector(g.reshape(g.shape[0], -1))

    def energy_and_gradient(self, coords):
        e, g, _, _ = self._run(coords, 1)
        return float(e.sum()), self.assembler.vector(g.reshape(g.shape[0], -1))

    def hessian_data(self, coords) -> np.ndarray:
        _, _, H, _ = self._run(coords, 2)
        n = H.shape[1] * H.shape[2]
        return self.assembler.data(H.reshape(H.shape[0], n, n))

    def hessian(self, coords) -> csr_matrix:
        return self.assembler.matrix(self.hessian_data(coords))


def objective_mu(mesh, spec=None, metric=None, npts=None) -> float:
    """Quality objective ``F_mu`` of ``mesh``."""
    return QualityObjective(mesh, spec, metric, npts).energy(mesh.coords)


def grad_mu(mesh, spec=None, metric=None, npts=None) -> np.ndarray:
    """Gradient of ``F_mu`` w.r.t. ``mesh.coords.ravel()``."""
    return QualityObjective(mesh, spec, metric, npts).gradient(mesh.coords)


def hess_mu(mesh, spec=None, metric=None, npts=None) -> csr_matrix:
    """Sparse symmetric Hessian of ``F_mu``."""
    return QualityObjective(mesh, spec, metric, npts).hessian(mesh.coords)
