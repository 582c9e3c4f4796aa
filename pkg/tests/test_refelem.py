import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphfit.refelem import (GEOM_DIM, InvalidOrderError, UnsupportedGeometryError,
                              gauss_lobatto_nodes, quadrature_rule, reference_element)

GEOMS = ("segment", "quad", "tri", "hex", "tet")


def num_nodes(geom, p):
    d = GEOM_DIM[geom]
    if geom in ("segment", "quad", "hex"):
        return (p + 1) ** d
    if geom == "tri":
        return (p + 1) * (p + 2) // 2
    return (p + 1) * (p + 2) * (p + 3) // 6


def random_ref_points(geom, n, rng):
    d = GEOM_DIM[geom]
    x = rng.uniform(0, 1, (n, d))
    if geom in ("tri", "tet"):
        x = x[np.sum(x, axis=1) <= 1]
    return x


def test_gauss_lobatto_small_orders():
    assert np.array_equal(gauss_lobatto_nodes(1), [0.0, 1.0])
    assert np.allclose(gauss_lobatto_nodes(2), [0.0, 0.5, 1.0], atol=1e-15)
    s = 0.5 / np.sqrt(5.0)
    assert np.allclose(gauss_lobatto_nodes(3), [0.0, 0.5 - s, 0.5 + s, 1.0], atol=1e-15)


@pytest.mark.parametrize("p", range(1, 9))
def test_gauss_lobatto_properties(p):
    x = gauss_lobatto_nodes(p)
    assert len(x) == p + 1
    assert x[0] == 0.0 and x[-1] == 1.0
    assert np.all(np.diff(x) > 0)
    assert np.allclose(x + x[::-1], 1.0, atol=1e-15)
    # interior nodes are roots of P_p' on [-1, 1]
    if p > 1:
        dP = np.polynomial.legendre.Legendre.basis(p).deriv()
        assert np.allclose(dP(2 * x[1:-1] - 1), 0.0, atol=1e-10)


@pytest.mark.parametrize("p", [0, -1, 1.5])
def test_gauss_lobatto_rejects_bad_order(p):
    with pytest.raises(InvalidOrderError):
        gauss_lobatto_nodes(p)


def test_unknown_geometry():
    with pytest.raises(UnsupportedGeometryError):
        reference_element("prism", 1)
    with pytest.raises(UnsupportedGeometryError):
        quadrature_rule("pyramid", 2)


@pytest.mark.parametrize("geom", GEOMS)
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_node_counts_and_vertices(geom, p):
    ref = reference_element(geom, p)
    assert ref.num_nodes == num_nodes(geom, p)
    verts = ref.nodes[list(ref.vertex_nodes)]
    d = GEOM_DIM[geom]
    if geom in ("segment", "quad", "hex"):
        expected = set(itertools.product((0.0, 1.0), repeat=d))
    else:
        expected = {tuple(v) for v in np.vstack([np.zeros(d), np.eye(d)])}
    assert {tuple(v) for v in np.round(verts, 12)} == expected


@pytest.mark.parametrize("geom", GEOMS)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_lagrange_property(geom, p):
    ref = reference_element(geom, p)
    vals, _, _ = ref.eval_basis(ref.nodes)
    assert np.allclose(vals, np.eye(ref.num_nodes), atol=1e-12)


@pytest.mark.parametrize("geom", GEOMS)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_partition_of_unity(geom, p, rng):
    ref = reference_element(geom, p)
    x = random_ref_points(geom, 30, rng)
    vals, grads, hess = ref.eval_basis(x)
    assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-10)
    assert np.allclose(hess.sum(axis=1), 0.0, atol=1e-8)


def test_segment_quadratic_by_hand():
    ref = reference_element("segment", 2)
    v, _, _ = ref.eval_basis(np.array([0.25]))
    # quadratic Lagrange polynomials on {0, 1/2, 1}
    x = 0.25
    expected = [2 * (x - 0.5) * (x - 1), -4 * x * (x - 1), 2 * x * (x - 0.5)]
    assert np.allclose(v, expected, atol=1e-14)


def _monomials(geom, p):
    d = GEOM_DIM[geom]
    if geom in ("segment", "quad", "hex"):
        return [e for e in itertools.product(range(p + 1), repeat=d)]
    return [e for e in itertools.product(range(p + 1), repeat=d) if sum(e) <= p]


@pytest.mark.parametrize("geom", GEOMS)
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_polynomial_reproduction(geom, p, rng):
    ref = reference_element(geom, p)
    expo = np.array(_monomials(geom, p))
    coef = rng.normal(size=len(expo))

    def poly(x):
        return np.prod(x[:, None, :] ** expo[None], axis=2) @ coef

    x = random_ref_points(geom, 50, rng)
    vals, _, _ = ref.eval_basis(x)
    assert np.max(np.abs(vals @ poly(ref.nodes) - poly(x))) < 1e-12


@pytest.mark.parametrize("geom", GEOMS)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_basis_derivatives_fd(geom, p, rng):
    ref = reference_element(geom, p)
    d = ref.dim
    x = random_ref_points(geom, 10, rng) * 0.8 + 0.05
    _, grads, hess = ref.eval_basis(x)
    h = 1e-5
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        vp, gp, _ = ref.eval_basis(x + e)
        vm, gm, _ = ref.eval_basis(x - e)
        fd = (vp - vm) / (2 * h)
        assert np.max(np.abs(fd - grads[:, :, a])) <= 1e-7 * max(1.0, np.abs(grads).max())
        fdh = (gp - gm) / (2 * h)
        assert np.max(np.abs(fdh - hess[:, :, :, a])) <= 1e-6 * max(1.0, np.abs(hess).max())


def test_quadrature_examples():
    pts, w = quadrature_rule("quad", 1)
    assert np.allclose(pts, [[0.5, 0.5]]) and np.allclose(w, [1.0])
    pts, w = quadrature_rule("segment", 2)
    assert np.isclose(w @ pts[:, 0] ** 3, 0.25, atol=1e-15)
    _, w = quadrature_rule("tri", 1)
    assert np.isclose(w.sum(), 0.5)


@pytest.mark.parametrize("geom", GEOMS)
@given(n=st.integers(1, 6))
def test_quadrature_weights_positive_and_sum_to_measure(geom, n):
    _, w = quadrature_rule(geom, n)
    assert np.all(w > 0)
    assert np.isclose(w.sum(), reference_element(geom, 1).measure, rtol=1e-13)


@pytest.mark.parametrize("geom", ("tri", "tet"))
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_simplex_quadrature_exactness(geom, n):
    # int over the unit simplex of x^a y^b [z^c] = a! b! [c!] / (a+b+[c]+d)!
    from math import factorial
    d = GEOM_DIM[geom]
    pts, w = quadrature_rule(geom, n)
    for e in itertools.product(range(2 * n), repeat=d):
        if sum(e) > 2 * n - 1:
            continue
        exact = np.prod([factorial(k) for k in e]) / factorial(sum(e) + d)
        assert np.isclose(w @ np.prod(pts ** np.array(e), axis=1), exact, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("geom", ("segment", "quad", "hex"))
@pytest.mark.parametrize("n", [1, 2, 3])
def test_tensor_quadrature_exactness(geom, n):
    d = GEOM_DIM[geom]
    pts, w = quadrature_rule(geom, n)
    for e in itertools.product(range(2 * n), repeat=d):
        exact = np.prod([1.0 / (k + 1) for k in e])
        assert np.isclose(w @ np.prod(pts ** np.array(e), axis=1), exact, rtol=1e-12)


@pytest.mark.parametrize("geom", ("quad", "tri", "hex", "tet"))
def test_face_nodes_lie_on_faces(geom):
    ref = reference_element(geom, 3)
    d = ref.dim
    for f, ids in enumerate(ref.face_nodes):
        X = ref.nodes[list(ids)]
        V = ref.nodes[list(ref.face_vertices[f])]
        # all face nodes lie in the affine hull of the face vertices
        base = V[0]
        span = (V[1:] - base).T
        coef, res, *_ = np.linalg.lstsq(span, (X - base).T, rcond=None)
        assert np.allclose(span @ coef, (X - base).T, atol=1e-12)
        assert len(ids) == (4 if d == 2 else (16 if geom == "hex" else 10))
