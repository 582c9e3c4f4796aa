"""Analytic level-set primitives and CSG trees.

Sign convention: every level function is negative inside the region it
describes.  Primitives return exact signed distances where practical and
sign-correct level functions otherwise.  All evaluators are vectorized:
``evaluate(x, order)`` takes points of shape ``(n, d)`` and returns
``(values (n,), grads (n, d) | None, hessians (n, d, d) | None)``.
"""
from __future__ import annotations

import numpy as np


class LevelSet:
    """Base class for evaluable level-set functions."""

    dim: int

    def evaluate(self, x, order: int = 2):
        raise NotImplementedError

    def value(self, x) -> np.ndarray:
        return self.evaluate(np.atleast_2d(x), 0)[0]

    def __call__(self, x):
        return self.value(x)

    # composition helpers
    def __and__(self, other):
        return Intersection(self, other)

    def __or__(self, other):
        return Union(self, other)

    def __sub__(self, other):
        return Difference(self, other)


def _points(x, dim):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


def _vec(v, name):
    v = np.asarray(v, dtype=float).ravel()
    if v.size not in (2, 3):
        raise ValueError(f"{name} must have 2 or 3 components")
    return v


def _pack(vals, grads, hess, order):
    return vals, (grads if order >= 1 else None), (hess if order >= 2 else None)


def _safe_norm(v):
    r = np.linalg.norm(v, axis=-1)
    return r, np.where(r > 0, r, 1.0)


class Sphere(LevelSet):
    """``|x - c| - r`` (a circle in 2D)."""

    def __init__(self, center, radius):
        self.center = _vec(center, "center")
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.dim = self.center.size

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        v = x - self.center
        r, rs = _safe_norm(v)
        n = v / rs[:, None]
        eye = np.eye(self.dim)
        hess = (eye - n[:, :, None] * n[:, None, :]) / rs[:, None, None]
        hess[r == 0] = 0.0
        return _pack(r - self.radius, n, hess, order)

    def sexpr_args(self):
        return [self.center, self.radius]


class Box(LevelSet):
    """Exact signed distance to an axis-aligned box."""

    def __init__(self, center, halfwidths):
        self.center = _vec(center, "center")
        self.half = np.asarray(halfwidths, dtype=float).ravel()
        if self.half.shape != self.center.shape or np.any(self.half <= 0):
            raise ValueError("halfwidths must be positive, one per dimension")
        self.dim = self.center.size

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        v = x - self.center
        s = np.where(v >= 0, 1.0, -1.0)
        q = np.abs(v) - self.half
        qp = np.maximum(q, 0.0)
        rout, rs = _safe_norm(qp)
        inside = rout == 0
        k = np.argmax(q, axis=1)
        vals = np.where(inside, q[np.arange(len(q)), k], rout)
        grads = s * qp / rs[:, None]
        gin = np.zeros_like(v)
        gin[np.arange(len(q)), k] = s[np.arange(len(q)), k]
        grads[inside] = gin[inside]
        # outside: distance to the nearest face/edge/corner; curvature only
        # in the directions where q > 0
        mask = (qp > 0).astype(float)
        n = grads * mask
        hess = (mask[:, :, None] * np.eye(self.dim) - n[:, :, None] * n[:, None, :]) / rs[:, None, None]
        hess[inside] = 0.0
        return _pack(vals, grads, hess, order)

    def sexpr_args(self):
        return [self.center, self.half]


class HalfSpace(LevelSet):
    """``(x - p) . n / |n|``; the kept region lies opposite to ``n``."""

    def __init__(self, point, normal):
        self.point = _vec(point, "point")
        n = _vec(normal, "normal")
        if n.shape != self.point.shape or not np.linalg.norm(n) > 0:
            raise ValueError("normal must be nonzero and match the point dimension")
        self.normal = n / np.linalg.norm(n)
        self.dim = self.point.size

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        n = len(x)
        return _pack((x - self.point) @ self.normal, np.tile(self.normal, (n, 1)),
                     np.zeros((n, self.dim, self.dim)), order)

    def sexpr_args(self):
        return [self.point, self.normal]


class Cylinder(LevelSet):
    """Capped cylinder around ``axis`` through ``center``.

    The level function is ``max(radial distance - r, |axial| - length/2)``,
    which is an exact distance inside and off the rim.  ``length=None``
    gives an infinite cylinder.  In 2D this is a strip (or capped strip).
    """

    def __init__(self, center, axis, radius, length=None):
        self.center = _vec(center, "center")
        a = _vec(axis, "axis")
        if a.shape != self.center.shape or not np.linalg.norm(a) > 0:
            raise ValueError("axis must be nonzero and match the center dimension")
        self.axis = a / np.linalg.norm(a)
        self.radius = float(radius)
        self.length = None if length is None else float(length)
        if self.radius <= 0 or (self.length is not None and self.length <= 0):
            raise ValueError("radius and length must be positive")
        self.dim = self.center.size

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        v = x - self.center
        t = v @ self.axis
        w = v - t[:, None] * self.axis
        r, rs = _safe_norm(w)
        n = w / rs[:, None]
        P = np.eye(self.dim) - np.outer(self.axis, self.axis)
        hr = (P - n[:, :, None] * n[:, None, :]) / rs[:, None, None]
        hr[r == 0] = 0.0
        vals, grads, hess = r - self.radius, n, hr
        if self.length is not None:
            cap = np.abs(t) - 0.5 * self.length
            use = cap > vals
            vals = np.where(use, cap, vals)
            gcap = np.sign(t)[:, None] * self.axis
            grads = np.where(use[:, None], gcap, grads)
            hess = np.where(use[:, None, None], 0.0, hess)
        return _pack(vals, grads, hess, order)

    def sexpr_args(self):
        out = [self.center, self.axis, self.radius]
        return out + ([self.length] if self.length is not None else [])


class Parabola(LevelSet):
    """``x_k - v_k - a |x_perp - v_perp|^2`` with ``k = axis`` (last by default).

    Negative on the side below the parabola along ``axis``.
    """

    def __init__(self, vertex, a, axis=None):
        self.vertex = _vec(vertex, "vertex")
        self.dim = self.vertex.size
        self.a = float(a)
        self.axis = self.dim - 1 if axis is None else int(axis)
        if not 0 <= self.axis < self.dim:
            raise ValueError("axis out of range")

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        v = x - self.vertex
        perp = np.ones(self.dim, dtype=bool)
        perp[self.axis] = False
        vals = v[:, self.axis] - self.a * np.sum(v[:, perp] ** 2, axis=1)
        grads = -2 * self.a * v
        grads[:, self.axis] = 1.0
        H = np.diag(np.where(perp, -2 * self.a, 0.0))
        return _pack(vals, grads, np.broadcast_to(H, (len(x), self.dim, self.dim)).copy(), order)

    def sexpr_args(self):
        return [self.vertex, self.a, self.axis]


class Polygon(LevelSet):
    """Convex 2D polygon (counter-clockwise or clockwise vertex list).

    Uses the maximum of the signed edge-line distances, exact inside and
    sign-correct outside.  A trapezium is the four-vertex case.
    """

    def __init__(self, vertices):
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
            raise ValueError("polygon needs at least three 2D vertices")
        area = 0.5 * np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1])
        if area == 0:
            raise ValueError("degenerate polygon")
        if area < 0:
            V = V[::-1]
        self.vertices = V
        E = np.roll(V, -1, axis=0) - V
        N = np.column_stack([E[:, 1], -E[:, 0]])
        N /= np.linalg.norm(N, axis=1)[:, None]
        if np.any(np.einsum("ij,ij->i", np.roll(V, -2, axis=0) - V, N) > 1e-12):
            raise ValueError("polygon must be convex")
        self.normals = N
        self.dim = 2

    def evaluate(self, x, order=2):
        x = _points(x, 2)
        d = np.einsum("nkd,kd->nk", x[:, None, :] - self.vertices[None], self.normals)
        k = np.argmax(d, axis=1)
        return _pack(d[np.arange(len(x)), k], self.normals[k], np.zeros((len(x), 2, 2)), order)

    def sexpr_args(self):
        return list(self.vertices)


class _Combine(LevelSet):
    op = ""

    def __init__(self, *children):
        if len(children) < 2:
            raise ValueError(f"{self.op} needs at least two operands")
        dims = {c.dim for c in children}
        if len(dims) != 1:
            raise ValueError("CSG operands have different dimensions")
        self.children = list(children)
        self.dim = dims.pop()

    def _select(self, vals):
        raise NotImplementedError

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        parts = [c.evaluate(x, order) for c in self.children]
        vals, signs = self._signed(parts)
        k = self._select(vals)
        idx = np.arange(len(x))
        out_v = vals[k, idx]
        if order < 1:
            return out_v, None, None
        g = np.stack([s * p[1] for s, p in zip(signs, parts)])[k, idx]
        h = None
        if order >= 2:
            h = np.stack([s * p[2] for s, p in zip(signs, parts)])[k, idx]
        return out_v, g, h

    def _signed(self, parts):
        return np.stack([p[0] for p in parts]), [1.0] * len(parts)


class Intersection(_Combine):
    """Inside all operands: ``max`` of the level functions."""

    op = "intersection"

    def _select(self, vals):
        return np.argmax(vals, axis=0)


class Union(_Combine):
    """Inside any operand: ``min`` of the level functions."""

    op = "union"

    def _select(self, vals):
        return np.argmin(vals, axis=0)


class Difference(_Combine):
    """First operand minus all others: ``max(s_A, -s_B, -s_C, ...)``."""

    op = "difference"

    def _signed(self, parts):
        signs = [1.0] + [-1.0] * (len(parts) - 1)
        return np.stack([s * p[0] for s, p in zip(signs, parts)]), signs

    def _select(self, vals):
        return np.argmax(vals, axis=0)


def eval_levelset(ls, x):
    """Value, gradient and Hessian of ``ls`` at ``x``.

    A single point ``(d,)`` gives ``(float, (d,), (d, d))``; an array of
    points gives the batched arrays.
    """
    x = np.asarray(x, dtype=float)
    v, g, h = ls.evaluate(np.atleast_2d(x), 2)
    if x.ndim == 1:
        return float(v[0]), g[0], h[0]
    return v, g, h


def csg_step(ls, x):
    """Material step function: ``+1`` outside, ``-1`` inside.

    Points on the zero set (value exactly 0) count as inside.
    """
    v = np.asarray(ls.value(np.atleast_2d(x)))
    s = np.where(v > 0, 1.0, -1.0)
    return float(s[0]) if np.ndim(x) == 1 else s


class StepFunction(LevelSet):
    """``csg_step`` of a level set, as an evaluable field (zero derivatives)."""

    def __init__(self, ls):
        self.ls = ls
        self.dim = ls.dim

    def evaluate(self, x, order=2):
        x = _points(x, self.dim)
        n = len(x)
        return _pack(csg_step(self.ls, x), np.zeros((n, self.dim)),
                     np.zeros((n, self.dim, self.dim)), order)


# ---------------------------------------------------------------------------
# s-expression description files
#
#   expr      := "(" operator expr expr+ ")" | "(" primitive arg* ")"
#   operator  := union | intersection | difference
#   primitive := sphere | circle | box | cylinder | halfspace | parabola
#                | polygon | trapezium
#   arg       := number | "(" number+ ")"
#
# ``;`` starts a comment that runs to the end of the line.
#   (sphere (cx cy [cz]) r)          (box (cx ..) (hx ..))
#   (cylinder (c ..) (axis ..) r [length])
#   (halfspace (p ..) (n ..))        (parabola (v ..) a [axis])
#   (polygon (x y) (x y) (x y) ...)  (trapezium (x y) (x y) (x y) (x y))


class SexprError(ValueError):
    """Malformed primitive-tree description."""


_OPERATORS = {"union": Union, "intersection": Intersection, "difference": Difference}


def _tokenize(text):
    toks = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split(";", 1)[0]
        for tok in line.replace("(", " ( ").replace(")", " ) ").split():
            toks.append((tok, lineno))
    return toks


def _parse_list(toks, pos):
    # toks[pos] == "("
    items = []
    pos += 1
    while True:
        if pos >= len(toks):
            raise SexprError("unbalanced parentheses: missing ')'")
        tok, line = toks[pos]
        if tok == ")":
            return items, pos + 1
        if tok == "(":
            sub, pos = _parse_list(toks, pos)
            items.append((sub, line))
        else:
            items.append((tok, line))
            pos += 1


def _number(item):
    tok, line = item
    if isinstance(tok, list):
        raise SexprError(f"line {line}: expected a number, got a list")
    try:
        return float(tok)
    except ValueError:
        raise SexprError(f"line {line}: expected a number, got {tok!r}") from None


def _vector(item):
    tok, line = item
    if not isinstance(tok, list):
        raise SexprError(f"line {line}: expected a coordinate list, got {tok!r}")
    return np.array([_number(t) for t in tok])


def _build(items, line):
    if not items or isinstance(items[0][0], list):
        raise SexprError(f"line {line}: expected an operator or primitive name")
    name = items[0][0].lower()
    args = items[1:]
    try:
        if name in _OPERATORS:
            kids = []
            for tok, ln in args:
                if not isinstance(tok, list):
                    raise SexprError(f"line {ln}: operand of {name} must be a list")
                kids.append(_build(tok, ln))
            return _OPERATORS[name](*kids)
        if name in ("sphere", "circle"):
            return Sphere(_vector(args[0]), _number(args[1]))
        if name == "box":
            return Box(_vector(args[0]), _vector(args[1]))
        if name == "cylinder":
            length = _number(args[3]) if len(args) > 3 else None
            return Cylinder(_vector(args[0]), _vector(args[1]), _number(args[2]), length)
        if name == "halfspace":
            return HalfSpace(_vector(args[0]), _vector(args[1]))
        if name == "parabola":
            axis = int(_number(args[2])) if len(args) > 2 else None
            return Parabola(_vector(args[0]), _number(args[1]), axis)
        if name in ("polygon", "trapezium"):
            return Polygon([_vector(a) for a in args])
    except IndexError:
        raise SexprError(f"line {line}: too few arguments for {name}") from None
    except SexprError:
        raise
    except ValueError as exc:
        raise SexprError(f"line {line}: {exc}") from None
    raise SexprError(f"line {line}: unknown primitive or operator {name!r}")


def parse_sexpr(text: str) -> LevelSet:
    """Parse a primitive-tree description."""
    toks = _tokenize(text)
    if not toks:
        raise SexprError("empty description")
    if toks[0][0] != "(":
        raise SexprError(f"line {toks[0][1]}: expected '('")
    items, pos = _parse_list(toks, 0)
    if pos != len(toks):
        raise SexprError(f"line {toks[pos][1]}: trailing input after expression")
    return _build(items, toks[0][1])


def _fmt(v):
    if np.ndim(v) == 0:
        return repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v))
    return "(" + " ".join(repr(float(t)) for t in v) + ")"


def to_sexpr(ls: LevelSet, indent: int = 0) -> str:
    """Inverse of ``parse_sexpr`` for trees built from this module."""
    pad = "  " * indent
    if isinstance(ls, _Combine):
        inner = "\n".join(to_sexpr(c, indent + 1) for c in ls.children)
        return f"{pad}({ls.op}\n{inner})"
    names = {Sphere: "sphere", Box: "box", Cylinder: "cylinder", HalfSpace: "halfspace",
             Parabola: "parabola", Polygon: "polygon"}
    name = names.get(type(ls))
    if name is None:
        raise TypeError(f"cannot serialize {type(ls).__name__}")
    return f"{pad}({name} " + " ".join(_fmt(a) for a in ls.sexpr_args()) + ")"


def load_sexpr(path) -> LevelSet:
    with open(path) as fh:
        return parse_sexpr(fh.read())
