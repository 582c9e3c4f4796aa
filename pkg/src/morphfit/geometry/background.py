"""Adaptively refined background fields on a quadtree/octree.

A ``BackgroundField`` covers an axis-aligned box split into an initial
grid of root cells.  Each root cell is refined by bisection in every
direction; leaves store a tensor-product polynomial of order ``p_B`` by its
values at the cell's Gauss-Lobatto nodes.  Hanging nodes are allowed: the
field is only ever point-sampled.
"""
from __future__ import annotations

import itertools
import warnings
from pathlib import Path

import numpy as np

from ..meshio import MeshFormatError, UnsupportedVersionError
from ..refelem import reference_element
from .primitives import LevelSet

MAGIC = "morphfit-background"
VERSION = "v1"


class OutOfDomainError(ValueError):
    """A query point lies outside the background domain."""


class PointNotFoundError(LookupError):
    """No cell or element contains the query point."""


def source_values(source, pts) -> np.ndarray:
    """Values of a level set or plain callable at ``pts``."""
    if isinstance(source, LevelSet) or hasattr(source, "evaluate"):
        return np.asarray(source.evaluate(pts, 0)[0], dtype=float)
    return np.asarray(source(pts), dtype=float).reshape(len(pts))


def _cell_geom(dim):
    return "quad" if dim == 2 else "hex"


def sample_points(dim: int, order: int) -> np.ndarray:
    """Reference sample points used by the refinement test: Gauss-Lobatto
    nodes (which include the corners), the centroid and face midpoints."""
    ref = reference_element(_cell_geom(dim), order)
    extra = [np.full(dim, 0.5)]
    for a in range(dim):
        for s in (0.0, 1.0):
            m = np.full(dim, 0.5)
            m[a] = s
            extra.append(m)
    pts = np.vstack([ref.nodes, extra])
    return np.unique(np.round(pts, 14), axis=0)


class BackgroundField(LevelSet):
    """Piecewise-polynomial field on a refined Cartesian tree.

    Parameters
    ----------
    lo, hi : domain corners
    counts : initial grid cells per direction
    order : polynomial order ``p_B`` of every leaf
    level : (nL,) refinement level of each leaf
    index : (nL, d) integer cell index at that level
    values : (nL, Np) field values at the leaf Gauss-Lobatto nodes
    cut : (nL,) whether the refinement test flagged the leaf
    source : optional evaluable the field was sampled from (not saved)
    """

    def __init__(self, lo, hi, counts, order, level, index, values, cut=None, source=None):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.dim = self.lo.size
        if self.dim not in (2, 3) or np.any(self.hi <= self.lo):
            raise ValueError("bad background bounding box")
        self.counts = np.asarray(counts, dtype=np.int64).reshape(self.dim)
        self.order = int(order)
        self.ref = reference_element(_cell_geom(self.dim), self.order)
        self.level = np.asarray(level, dtype=np.int64)
        self.index = np.asarray(index, dtype=np.int64).reshape(-1, self.dim)
        self.values = np.asarray(values, dtype=float).reshape(len(self.level), self.ref.num_nodes)
        self.cut = np.zeros(len(self.level), bool) if cut is None else np.asarray(cut, bool)
        self.source = source
        self.root_h = (self.hi - self.lo) / self.counts
        self._max_level = int(self.level.max(initial=0))
        self._stride = int(self.counts.max()) << (self._max_level + 1)
        keys = self._keys(self.level, self.index)
        self._order = np.argsort(keys)
        self._sorted_keys = keys[self._order]
        self._warned = False

    # -- geometry of cells --------------------------------------------------
    @property
    def num_leaves(self) -> int:
        return len(self.level)

    @property
    def max_level(self) -> int:
        return self._max_level

    def cell_size(self, level) -> np.ndarray:
        return self.root_h / (2.0 ** np.asarray(level))[..., None]

    def cell_lo(self, leaves=None) -> np.ndarray:
        leaves = np.arange(self.num_leaves) if leaves is None else np.asarray(leaves)
        return self.lo + self.index[leaves] * self.cell_size(self.level[leaves])

    def finest_cell_diameter(self) -> float:
        return float(np.linalg.norm(self.root_h / 2.0 ** self._max_level))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def node_positions(self) -> np.ndarray:
        """Physical positions of every leaf's nodes, shape ``(nL, Np, d)``."""
        h = self.cell_size(self.level)
        return self.cell_lo()[:, None, :] + self.ref.nodes[None] * h[:, None, :]

    def with_values(self, values, order=None, source=None) -> "BackgroundField":
        """Same tree, new leaf values (optionally at another order)."""
        return BackgroundField(self.lo, self.hi, self.counts, self.order if order is None else order,
                               self.level, self.index, values, self.cut, source)

    # -- point location ------------------------------------------------------
    def _keys(self, level, index):
        key = np.zeros(len(level), dtype=np.int64)
        for a in range(self.dim):
            key = key * self._stride + index[:, a]
        return key * 64 + level

    def find_point(self, x):
        """Leaf ids and local coordinates in ``[0, 1]^d`` of points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tol = 1e-12 * self.diameter()
        if np.any(x < self.lo - tol) or np.any(x > self.hi + tol):
            bad = np.flatnonzero(np.any((x < self.lo - tol) | (x > self.hi + tol), axis=1))[0]
            raise OutOfDomainError(f"point {x[bad]} is outside the background domain "
                                   f"[{self.lo}, {self.hi}]")
        u = (x - self.lo) / self.root_h
        leaf = -np.ones(len(x), dtype=np.int64)
        todo = np.arange(len(x))
        for L in range(self._max_level + 1):
            if not len(todo):
                break
            n = self.counts << L
            idx = np.clip(np.floor(u[todo] * (1 << L)).astype(np.int64), 0, n - 1)
            key = self._keys(np.full(len(todo), L), idx)
            pos = np.minimum(np.searchsorted(self._sorted_keys, key), len(self._sorted_keys) - 1)
            hit = self._sorted_keys[pos] == key
            leaf[todo[hit]] = self._order[pos[hit]]
            todo = todo[~hit]
        if len(todo):
            raise PointNotFoundError(f"no leaf contains point {x[todo[0]]}")
        h = self.cell_size(self.level[leaf])
        xbar = (x - self.cell_lo(leaf)) / h
        return leaf, xbar

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, x, order=2):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        leaf, xbar = self.find_point(x)
        vals, grads, hess = self.ref.eval_basis(xbar)
        c = self.values[leaf]
        h = self.cell_size(self.level[leaf])
        out = np.einsum("ni,ni->n", vals, c)
        if order < 1:
            return out, None, None
        g = np.einsum("nia,ni->na", grads, c) / h
        H = None
        if order >= 2:
            if self.order == 1 and not self._warned:
                warnings.warn("background order 1 has zero second derivatives; Newton on the "
                              "fitting term reduces to Gauss-Newton", RuntimeWarning, stacklevel=2)
                self._warned = True
            H = np.einsum("niab,ni->nab", hess, c) / (h[:, :, None] * h[:, None, :])
        return out, g, H


def _default_counts(lo, hi, base=4):
    ext = np.asarray(hi, float) - np.asarray(lo, float)
    return np.maximum(1, np.round(base * ext / ext.max())).astype(np.int64)


def build_background(source, bbox=None, order: int = 3, max_depth: int = 5,
                     counts=None) -> BackgroundField:
    """Sample ``source`` on a tree refined around its zero set.

    A cell is refined when the source values at its sample points (see
    ``sample_points``) include both positive and nonpositive values, until
    ``max_depth`` refinements.  The leaf values are the source values at
    the leaf Gauss-Lobatto nodes.

    Parameters
    ----------
    source : LevelSet or callable mapping ``(n, d)`` points to ``(n,)`` values
    bbox : ``(lo, hi)``; defaults to the unit box
    order : leaf polynomial order ``p_B``
    max_depth : maximum number of refinements of a root cell
    counts : initial grid cells per direction (default: 4 along the longest
        side, proportional on the others)
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    dim = getattr(source, "dim", None)
    if bbox is None:
        if dim is None:
            raise ValueError("bbox is required for a plain callable source")
        bbox = (np.zeros(dim), np.ones(dim))
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    dim = lo.size
    counts = _default_counts(lo, hi) if counts is None else np.broadcast_to(
        np.asarray(counts, dtype=np.int64), (dim,)).copy()
    root_h = (hi - lo) / counts
    samples = sample_points(dim, order)
    children = np.array(list(itertools.product((0, 1), repeat=dim)))[:, ::-1]

    idx = np.array(list(itertools.product(*[range(c) for c in counts[::-1]])))[:, ::-1]
    levels, indices, cuts = [], [], []
    for L in range(max_depth + 1):
        h = root_h / 2.0 ** L
        pts = (lo + idx * h)[:, None, :] + samples[None] * h
        v = source_values(source, pts.reshape(-1, dim)).reshape(len(idx), -1)
        cut = np.any(v > 0, axis=1) & np.any(v <= 0, axis=1)
        refine = cut if L < max_depth else np.zeros(len(idx), bool)
        keep = ~refine
        levels.append(np.full(keep.sum(), L))
        indices.append(idx[keep])
        cuts.append(cut[keep])
        idx = (2 * idx[refine][:, None, :] + children[None]).reshape(-1, dim)
        if not len(idx):
            break
    field = BackgroundField(lo, hi, counts, order, np.concatenate(levels),
                            np.concatenate(indices), np.zeros((sum(map(len, levels)),
                                                               (order + 1) ** dim)),
                            np.concatenate(cuts), source)
    nodes = field.node_positions()
    field.values = source_values(source, nodes.reshape(-1, dim)).reshape(nodes.shape[:2])
    return field


# ---------------------------------------------------------------------------
# native file format
#
#   morphfit-background v1 <dim> <order> <n_leaves>
#   <lo_1> ... <lo_d>
#   <hi_1> ... <hi_d>
#   <count_1> ... <count_d>
#   <level> <i_1> ... <i_d> <cut> <v_1> ... <v_Np>     (one line per leaf)


def dumps(field: BackgroundField) -> str:
    out = [f"{MAGIC} {VERSION} {field.dim} {field.order} {field.num_leaves}",
           " ".join(repr(float(v)) for v in field.lo),
           " ".join(repr(float(v)) for v in field.hi),
           " ".join(str(int(c)) for c in field.counts)]
    for L, ix, c, vals in zip(field.level, field.index, field.cut, field.values):
        out.append(" ".join([str(int(L)), *(str(int(i)) for i in ix), str(int(c)),
                             *(repr(float(v)) for v in vals)]))
    return "\n".join(out) + "\n"


def save(field: BackgroundField, path) -> None:
    Path(path).write_text(dumps(field))


def loads(text: str) -> BackgroundField:
    lines = [(k + 1, s.split()) for k, s in enumerate(text.splitlines())
             if s.strip() and not s.strip().startswith("#")]
    if not lines:
        raise MeshFormatError("empty background file", 1)
    ln, head = lines[0]
    if head[0] != MAGIC:
        raise MeshFormatError(f"not a {MAGIC} file", ln)
    if len(head) < 2 or head[1] != VERSION:
        raise UnsupportedVersionError(f"unsupported background format version "
                                      f"{head[1] if len(head) > 1 else '?'!r}", ln)
    try:
        dim, order, nL = (int(t) for t in head[2:5])
        if len(head) != 5:
            raise ValueError
    except ValueError:
        raise MeshFormatError("malformed header", ln) from None
    if len(lines) != 4 + nL:
        raise MeshFormatError(f"expected {nL} leaf lines, found {len(lines) - 4}",
                              lines[-1][0] + 1)
    try:
        lo = np.array(lines[1][1], dtype=float)
        hi = np.array(lines[2][1], dtype=float)
        counts = np.array(lines[3][1], dtype=np.int64)
    except ValueError:
        raise MeshFormatError("malformed domain lines", lines[1][0]) from None
    if not (lo.size == hi.size == counts.size == dim):
        raise MeshFormatError("domain lines do not match the dimension", lines[1][0])
    Np = (order + 1) ** dim
    rows = np.empty((nL, 2 + dim + Np))
    for k, (ln, tok) in enumerate(lines[4:]):
        if len(tok) != 2 + dim + Np:
            raise MeshFormatError(f"expected {2 + dim + Np} values per leaf, got {len(tok)}", ln)
        try:
            rows[k] = [float(t) for t in tok]
        except ValueError as exc:
            raise MeshFormatError(f"bad leaf line: {exc}", ln) from None
    return BackgroundField(lo, hi, counts, order, rows[:, 0].astype(np.int64),
                           rows[:, 1:1 + dim].astype(np.int64), rows[:, 2 + dim:],
                           rows[:, 1 + dim] != 0)


def load(path) -> BackgroundField:
    return loads(Path(path).read_text())
