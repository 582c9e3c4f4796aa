import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphfit.geometry import (Box, Cylinder, Difference, HalfSpace, Intersection, MeshLocator,
                               NoZeroCrossingError, OutOfDomainError, Parabola,
                               PointNotFoundError, Polygon, SexprError, Sphere, StepFunction,
                               Union, build_background, builtin_shape, csg_step,
                               distance_field, eval_levelset, extract_zero_set, find_point,
                               load_background, parse_sexpr, save_background, to_sexpr)
from morphfit.geometry.background import dumps, loads
from morphfit.mesh import make_cartesian
from morphfit.meshio import MeshFormatError, UnsupportedVersionError

from conftest import perturbed_mesh

PRIMITIVES = [
    Sphere((0.5, 0.5), 0.3),
    Sphere((0.4, 0.5, 0.6), 0.25),
    Box((0.5, 0.4), (0.2, 0.1)),
    Box((0.5, 0.5, 0.5), (0.2, 0.3, 0.1)),
    HalfSpace((0.3, 0.0), (1.0, 1.0)),
    Cylinder((0.5, 0.5, 0.5), (0, 1, 1), 0.2, 0.4),
    Cylinder((0.5, 0.5), (1, 0), 0.1),
    Parabola((0.5, 0.2), 2.0),
    Parabola((0.5, 0.5, 0.5), -1.0, axis=0),
    Polygon([(0.1, 0.1), (0.9, 0.1), (0.7, 0.6), (0.3, 0.6)]),
]


def test_sphere_center_and_boundary_values():
    v, g, h = eval_levelset(Sphere((0.5, 0.5), 0.3), np.array([0.5, 0.5]))
    assert np.isclose(v, -0.3)
    assert np.allclose(g, 0) and np.allclose(h, 0)
    v, g, h = eval_levelset(Sphere((0.5, 0.5), 0.3), np.array([0.8, 0.5]))
    assert abs(v) < 1e-15 and np.allclose(g, [1, 0])
    assert np.allclose(h, [[0, 0], [0, 1 / 0.3]])


def test_halfspace_value():
    v, g, h = eval_levelset(HalfSpace((0.0, 0.0), (1.0, 0.0)), np.array([0.7, 0.2]))
    assert np.isclose(v, 0.7) and np.allclose(g, [1, 0]) and np.allclose(h, 0)


def test_csg2d_signs():
    ls = builtin_shape("csg2d")
    assert csg_step(ls, np.array([0.0, 0.0])) == 1.0       # far corner, outside
    assert csg_step(ls, np.array([0.35, 0.5])) == 1.0      # removed by a strip
    assert csg_step(ls, np.array([0.5, 0.5])) == -1.0
    assert csg_step(ls, np.array([0.5, 0.7])) == -1.0
    assert csg_step(ls, np.array([0.5, 0.75])) == -1.0     # box edge counts as inside
    s = csg_step(ls, np.array([[0.0, 0.0], [0.5, 0.3]]))
    assert np.array_equal(s, [1.0, -1.0])


def test_csg_operators():
    a = Sphere((0.0, 0.0), 1.0)
    b = HalfSpace((0.0, 0.0), (1.0, 0.0))
    x = np.array([[0.5, 0.0], [-0.5, 0.0], [2.0, 0.0], [-2.0, 0.0]])
    va, vb = a.value(x), b.value(x)
    assert np.allclose(Intersection(a, b).value(x), np.maximum(va, vb))
    assert np.allclose(Union(a, b).value(x), np.minimum(va, vb))
    assert np.allclose(Difference(a, b).value(x), np.maximum(va, -vb))
    assert np.allclose((a & b).value(x), Intersection(a, b).value(x))
    assert np.allclose((a - b).value(x), Difference(a, b).value(x))
    with pytest.raises(ValueError):
        Union(a, Sphere((0, 0, 0), 1.0))
    with pytest.raises(ValueError):
        Union(a)


def test_step_function_field():
    s = StepFunction(Sphere((0.5, 0.5), 0.3))
    v, g, h = s.evaluate(np.array([[0.5, 0.5], [0.0, 0.0], [0.75, 0.5]]))
    assert np.array_equal(v, [-1.0, 1.0, -1.0])
    assert not g.any() and not h.any()


@pytest.mark.parametrize("ls", PRIMITIVES, ids=lambda l: type(l).__name__)
def test_primitive_derivatives_fd(ls, rng):
    x = rng.uniform(0.05, 0.95, (40, ls.dim))
    v, g, H = ls.evaluate(x)
    h = 1e-6
    for a in range(ls.dim):
        e = np.zeros(ls.dim)
        e[a] = h
        vp, gp, _ = ls.evaluate(x + e)
        vm, gm, _ = ls.evaluate(x - e)
        # skip points where a kink (max/argmax switch) lies within the stencil
        smooth = np.all(np.isclose((vp - vm) / (2 * h), g[:, a], atol=1e-6))
        ok = np.abs((vp - vm) / (2 * h) - g[:, a]) < 1e-6
        assert ok.mean() > 0.9 or smooth
        fd = (gp - gm) / (2 * h)
        good = ok & np.all(np.abs(fd - H[:, :, a]) < 1e-4 * (1 + np.abs(H[:, :, a])), axis=1)
        assert good.mean() > 0.9


@pytest.mark.parametrize("ls", PRIMITIVES, ids=lambda l: type(l).__name__)
def test_sexpr_roundtrip(ls, rng):
    back = parse_sexpr(to_sexpr(ls))
    x = rng.uniform(0, 1, (20, ls.dim))
    # normalized directions are re-normalized on parse, so allow an ulp
    assert np.allclose(back.value(x), ls.value(x), rtol=0, atol=1e-15)


@pytest.mark.parametrize("name", ["circle", "sphere", "csg2d", "csg3d"])
def test_sexpr_roundtrip_builtin(name, rng):
    ls = builtin_shape(name)
    text = to_sexpr(ls)
    assert to_sexpr(parse_sexpr(text)) == text
    x = rng.uniform(0, 1, (50, ls.dim))
    assert np.array_equal(parse_sexpr(text).value(x), ls.value(x))


def test_sexpr_comments_and_aliases():
    ls = parse_sexpr("""; a disk minus a wedge
    (difference
      (circle (0.5 0.5) 0.3)   ; body
      (trapezium (0.4 0.4) (0.6 0.4) (0.6 0.6) (0.4 0.6)))""")
    assert ls.value(np.array([[0.5, 0.5]]))[0] > 0
    assert ls.value(np.array([[0.5, 0.25]]))[0] < 0


@pytest.mark.parametrize("text", [
    "", "sphere (0 0) 1", "(sphere (0 0) 1", "(sphere (0 0) 1))", "(blob (0 0) 1)",
    "(sphere (0 0))", "(sphere (0 0) x)", "(sphere (0 0) -1)", "(union (sphere (0 0) 1))",
    "(union (sphere (0 0) 1) 3)", "(polygon (0 0) (1 1) (2 2))",
])
def test_sexpr_errors(text):
    with pytest.raises(SexprError):
        parse_sexpr(text)


def test_sexpr_error_reports_line():
    with pytest.raises(SexprError, match="line 3"):
        parse_sexpr("(union\n (sphere (0 0) 1)\n (box (0 0) (q 1)))")


def test_builtin_unknown():
    with pytest.raises(ValueError):
        builtin_shape("torus")


# -- background fields ---------------------------------------------------------


@pytest.mark.parametrize("dim,order", [(2, 1), (2, 2), (2, 3), (3, 2)])
def test_background_reproduces_polynomials(dim, order, rng):
    coef = rng.normal(size=(dim,))

    def poly(x):
        return np.prod(x ** order, axis=1) + x @ coef - 0.4

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        bg = build_background(poly, ([0] * dim, [1] * dim), order=order, max_depth=2)
        x = rng.uniform(0, 1, (200, dim))
        v, g, _ = bg.evaluate(x)
    assert np.allclose(v, poly(x), atol=1e-10)
    gx = order * np.prod(x ** order, axis=1)[:, None] / x + coef
    assert np.allclose(g, gx, atol=1e-8)


def test_background_refines_around_circle():
    ls = builtin_shape("circle")
    bg = build_background(ls, order=2, max_depth=4)
    assert bg.max_level == 4
    assert np.array_equal(bg.counts, [4, 4])
    # the finest leaves are children of cells that straddle the circle
    fine = bg.level == 4
    c = bg.cell_lo(np.flatnonzero(fine)) + 0.5 * bg.cell_size(4)
    assert np.all(np.abs(ls.value(c)) < 2 * bg.finest_cell_diameter())
    # leaves tile the domain exactly
    assert np.isclose(np.prod(bg.cell_size(bg.level), axis=1).sum(), 1.0)


def test_background_leaf_count_grows_with_depth():
    ls = builtin_shape("circle")
    counts = [build_background(ls, order=1, max_depth=d).num_leaves for d in range(5)]
    assert counts[0] == 16
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_background_no_crossing_stays_coarse():
    bg = build_background(lambda x: np.ones(len(x)), ([0, 0], [1, 1]), order=2, max_depth=5)
    assert bg.num_leaves == 16 and not bg.cut.any()
    with pytest.raises(NoZeroCrossingError):
        extract_zero_set(bg)


def test_background_default_counts_follow_aspect():
    bg = build_background(builtin_shape("circle"), bbox=([0, 0], [2, 1]), order=1, max_depth=0)
    assert np.array_equal(bg.counts, [4, 2])


def test_background_out_of_domain():
    bg = build_background(builtin_shape("circle"), order=2, max_depth=1)
    with pytest.raises(OutOfDomainError):
        bg.evaluate(np.array([[1.5, 0.5]]))
    # boundary points are inside
    bg.evaluate(np.array([[1.0, 1.0], [0.0, 0.0]]))


def test_background_order_one_warns_once():
    bg = build_background(builtin_shape("circle"), order=1, max_depth=1)
    with pytest.warns(RuntimeWarning):
        bg.evaluate(np.array([[0.3, 0.3]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bg.evaluate(np.array([[0.3, 0.3]]))
        bg.evaluate(np.array([[0.3, 0.3]]), order=1)


def test_background_save_load_roundtrip(tmp_path, rng):
    bg = build_background(builtin_shape("csg2d"), order=3, max_depth=3)
    p = tmp_path / "bg.txt"
    save_background(bg, p)
    back = load_background(p)
    x = rng.uniform(0, 1, (100, 2))
    assert np.array_equal(back.value(x), bg.value(x))
    assert np.array_equal(back.cut, bg.cut)
    assert dumps(back) == p.read_text()


def test_background_format_errors():
    text = dumps(build_background(builtin_shape("circle"), order=1, max_depth=1))
    with pytest.raises(UnsupportedVersionError):
        loads(text.replace(" v1 ", " v7 ", 1))
    with pytest.raises(MeshFormatError):
        loads("\n".join(text.splitlines()[:-1]))
    with pytest.raises(MeshFormatError):
        loads(text.replace("morphfit-background", "nope", 1))
    with pytest.raises(MeshFormatError):
        loads("")


@given(pt=st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_background_find_point_inverse(pt):
    bg = _CIRCLE_BG
    x = np.array([pt])
    leaf, xbar = bg.find_point(x)
    assert np.all(xbar >= -1e-12) and np.all(xbar <= 1 + 1e-12)
    back = bg.cell_lo(leaf) + xbar * bg.cell_size(bg.level[leaf])
    assert np.allclose(back, x, atol=1e-14)


_CIRCLE_BG = build_background(builtin_shape("circle"), order=2, max_depth=3)


# -- distance fields -----------------------------------------------------------


def test_distance_circle():
    ls = builtin_shape("circle")
    bg = build_background(StepFunction(ls), order=3, max_depth=5)
    d = distance_field(bg, source=ls)
    v = d.value(np.array([[0.5, 0.5]]))[0]
    assert abs(v + 0.3) < 0.01
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (400, 2))
    assert np.abs(d.value(x) - ls.value(x)).max() < 2 * bg.finest_cell_diameter()
    # near the zero set the field behaves like a distance
    th = rng.uniform(0, 2 * np.pi, 100)
    r = 0.3 + rng.uniform(-0.03, 0.03, 100)
    near = 0.5 + r[:, None] * np.column_stack([np.cos(th), np.sin(th)])
    gn = np.linalg.norm(d.evaluate(near, 1)[1], axis=1)
    assert np.all((gn > 0.8) & (gn < 1.2))


def test_distance_from_step_only():
    # no smooth source: root finding runs on the sampled step function
    ls = builtin_shape("circle")
    bg = build_background(StepFunction(ls), order=2, max_depth=4)
    d = distance_field(bg)
    x = np.random.default_rng(2).uniform(0, 1, (200, 2))
    assert np.abs(d.value(x) - ls.value(x)).max() < 2 * bg.finest_cell_diameter()


def test_zero_set_lies_on_surface():
    ls = builtin_shape("sphere")
    bg = build_background(StepFunction(ls), order=2, max_depth=3)
    tris = extract_zero_set(bg, ls)
    assert tris.shape[1:] == (3, 3)
    assert np.abs(ls.value(tris.reshape(-1, 3))).max() < 1e-12


def test_distance_no_crossing():
    bg = build_background(StepFunction(Sphere((5.0, 5.0), 0.1)), order=2, max_depth=3)
    with pytest.raises(NoZeroCrossingError):
        distance_field(bg)


# -- mesh point location ---------------------------------------------------------


@pytest.mark.parametrize("geom,dim", [("quad", 2), ("tri", 2), ("hex", 3), ("tet", 3)])
def test_locator_recovers_reference_points(geom, dim, rng):
    m = perturbed_mesh(dim, 2, 2, geom, amp=0.2, seed=1)
    e = rng.integers(0, m.num_elems, 20)
    xb = rng.uniform(0.05, 0.95, (20, dim))
    if m.ref.is_simplex:
        xb /= dim * 1.05
    x = np.array([m.position(k, p[None])[0] for k, p in zip(e, xb)])
    loc = MeshLocator(m)
    ids, found = loc.find(x)
    back = np.array([m.position(k, p[None])[0] for k, p in zip(ids, found)])
    assert np.allclose(back, x, atol=1e-12)
    assert np.array_equal(ids, e)


def test_locator_nodes_and_affine():
    m = make_cartesian(2, 4, 1)
    eid, xbar = find_point(m, np.array([0.3, 0.6]))
    assert eid == 1 + 4 * 2
    assert np.allclose(xbar, [0.2, 0.4])
    ids, _ = find_point(m, m.coords)
    assert np.all((ids >= 0) & (ids < m.num_elems))


def test_locator_outside():
    m = make_cartesian(2, 2, 2)
    with pytest.raises(PointNotFoundError):
        find_point(m, np.array([1.5, 0.5]))
    with pytest.raises(TypeError):
        find_point("mesh", np.array([0.5, 0.5]))


def test_find_point_in_background():
    leaf, xbar = find_point(_CIRCLE_BG, np.array([0.01, 0.02]))
    assert _CIRCLE_BG.level[leaf] == 0 and np.allclose(xbar, [0.04, 0.08])
