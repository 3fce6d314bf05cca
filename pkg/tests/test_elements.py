from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from meevc.elements import (
    LOCAL_EDGES, MAX_QUADRATURE_DEGREE, REF_VERTICES, CapabilityError, DomainError,
    build_reference_element, check_inside, dof_matrix, lattice_points, quadrature,
    reference_curl_matrix,
)

DEGREES = [1, 2, 3, 4]


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@given(deg=st.integers(1, MAX_QUADRATURE_DEGREE), data=st.data())
def test_quadrature_exactness(deg, data):
    rule = quadrature(deg)
    a = data.draw(st.integers(0, deg))
    b = data.draw(st.integers(0, deg - a))
    x, y = rule.points.T
    approx = np.sum(rule.weights * x**a * y**b)
    assert approx == pytest.approx(monomial_integral(a, b), rel=1e-13, abs=1e-16)
    assert np.all(rule.weights > 0)
    check_inside(rule.points)


def test_quadrature_limits():
    with pytest.raises(CapabilityError):
        quadrature(MAX_QUADRATURE_DEGREE + 1)
    with pytest.raises(CapabilityError):
        quadrature(0)


@pytest.mark.parametrize("N", DEGREES)
@pytest.mark.parametrize("family,dim", [
    ("CG", lambda N: (N + 1) * (N + 2) // 2),
    ("DG", lambda N: N * (N + 1) // 2),
    ("RT", lambda N: N * (N + 2)),
])
def test_unisolvent(family, dim, N):
    e = build_reference_element(family, N)
    assert e.dim == dim(N)
    np.testing.assert_allclose(dof_matrix(e), np.eye(e.dim), atol=1e-13)


@pytest.mark.parametrize("N", [0, 5])
def test_unsupported_degree(N):
    with pytest.raises(CapabilityError):
        build_reference_element("RT", N)
    with pytest.raises(CapabilityError):
        build_reference_element("ND", 1)


def test_outside_points_rejected():
    e = build_reference_element("CG", 2)
    with pytest.raises(DomainError):
        e.tabulate([[0.8, 0.8]])
    with pytest.raises(DomainError):
        e.tabulate([[-0.1, 0.2]])


@pytest.mark.parametrize("N", DEGREES)
def test_partition_of_unity(N):
    pts = quadrature(8).points
    for fam in ("CG", "DG"):
        vals = build_reference_element(fam, N).tabulate(pts).values
        np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)


def test_lowest_order_closed_forms():
    # CG1 = barycentric coordinates; RT1 = x - vertex scaled to unit flux
    pts = quadrature(6).points
    x, y = pts.T
    cg = build_reference_element("CG", 1).tabulate(pts).values
    np.testing.assert_allclose(cg, np.column_stack([1 - x - y, x, y]), atol=1e-15)
    rt = build_reference_element("RT", 1).tabulate(pts).values
    for i in range(3):
        expect = pts - REF_VERTICES[i]
        np.testing.assert_allclose(rt[:, i], expect, atol=1e-14)


@pytest.mark.parametrize("family", ["CG", "DG", "RT"])
@pytest.mark.parametrize("N", DEGREES)
def test_derivatives_match_finite_differences(family, N, rng):
    e = build_reference_element(family, N)
    pts = 0.05 + 0.6 * rng.random((6, 2)) * [1, 0.5]
    h = 1e-6
    d = e.tabulate(pts).derivatives
    for k in range(2):
        step = np.zeros(2)
        step[k] = h
        fd = (e.tabulate(pts + step).values - e.tabulate(pts - step).values) / (2 * h)
        np.testing.assert_allclose(d[..., k], fd, atol=1e-6 * max(1, np.abs(fd).max()))


@pytest.mark.parametrize("N", DEGREES)
def test_rt_divergence_in_dg(N):
    """div RT_N lies in P_{N-1}: the DG interpolant of the divergence reproduces it."""
    rt = build_reference_element("RT", N)
    dg = build_reference_element("DG", N)
    nodes = lattice_points(N - 1) if N > 1 else np.array([[1 / 3, 1 / 3]])
    pts = quadrature(9).points
    div_nodes = rt.tabulate(nodes).div
    div_pts = rt.tabulate(pts).div
    recon = dg.tabulate(pts).values @ div_nodes
    np.testing.assert_allclose(recon, div_pts, atol=1e-11)


@pytest.mark.parametrize("N", DEGREES)
def test_reference_curl_in_rt(N):
    C = reference_curl_matrix(N)
    pts = quadrature(9).points
    cg = build_reference_element("CG", N).tabulate(pts)
    rt = build_reference_element("RT", N).tabulate(pts)
    np.testing.assert_allclose(np.einsum("pic,ij->pjc", rt.values, C), cg.curl, atol=1e-12)
    # reference divergence of every curl vanishes
    np.testing.assert_allclose(rt.div @ C, 0.0, atol=1e-11)


@pytest.mark.parametrize("N", DEGREES)
def test_rt_normal_trace_is_degree_n_minus_1(N):
    """On each edge the normal flux of a basis function is a polynomial of degree N-1
    whose Legendre moments pick out exactly one edge degree of freedom."""
    rt = build_reference_element("RT", N)
    s, w = np.polynomial.legendre.leggauss(N + 3)
    s, w = 0.5 * (s + 1), 0.5 * w
    for e, (a, b) in enumerate(LOCAL_EDGES):
        t = REF_VERTICES[b] - REF_VERTICES[a]
        pts = REF_VERTICES[a] + s[:, None] * t
        flux = rt.tabulate(pts).values @ np.array([t[1], -t[0]])
        for m in range(N):
            Pm = np.polynomial.legendre.legval(2 * s - 1, np.eye(N)[m])
            mom = w @ (Pm[:, None] * flux)
            expect = np.zeros(rt.dim)
            expect[e * N + m] = 1.0
            np.testing.assert_allclose(mom, expect, atol=1e-12)
        # degree N-1: the moment against P_N vanishes
        PN = np.polynomial.legendre.legval(2 * s - 1, np.eye(N + 1)[N])
        np.testing.assert_allclose(w @ (PN[:, None] * flux), 0.0, atol=1e-11)
