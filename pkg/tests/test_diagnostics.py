import numpy as np
import pytest
from scipy.integrate import dblquad

from meevc.assembly import build_operators, project_solenoidal
from meevc.cases import SHEAR_EXTENT, get_case, shear_layer_init
from meevc.diagnostics import (
    CSV_FIELDS, ERROR_FIELDS, DiagnosticRecord, divergence_norm, enstrophy, kinetic_energy,
    l2_error, quadratic_by_quadrature, record, total_vorticity,
)
from meevc.elements import quadrature
from meevc.mesh import make_periodic_rect_mesh
from meevc.spaces import Field, project_l2


@pytest.fixture(scope="module", params=[1, 3])
def ops(request):
    return build_operators(make_periodic_rect_mesh(4, 4, *SHEAR_EXTENT, "crisscross"), request.param)


def test_quadratic_quantities_two_ways(ops, rng):
    u = Field(ops.U, rng.standard_normal(ops.U.dim))
    w = Field(ops.W, rng.standard_normal(ops.W.dim))
    assert kinetic_energy(u, ops.M) == pytest.approx(quadratic_by_quadrature(u), rel=1e-13)
    assert enstrophy(w, ops.N) == pytest.approx(quadratic_by_quadrature(w), rel=1e-13)


def test_divergence_norm_matches_quadrature(ops, rng):
    c = rng.standard_normal(ops.U.dim)
    rule = quadrature(2 * ops.U.degree + 2)
    div = ops.U.divergence(c, rule.points)
    _, det, _ = ops.U.geometry
    direct = np.sqrt(np.sum(div**2 * det[:, None] * rule.weights))
    assert divergence_norm(c, ops) == pytest.approx(direct, rel=1e-11)
    solenoidal = ops.curl_matrix @ rng.standard_normal(ops.W.dim)
    assert divergence_norm(solenoidal, ops) < 1e-12


CUTS = [0.0, np.pi / 2, np.pi, 1.5 * np.pi, 2 * np.pi]


def _adaptive(f):
    # split at the profile centres and the branch switch so the integrator resolves them
    return sum(dblquad(lambda y, x: float(f(x, y)), 0, 2 * np.pi, a, b, epsabs=1e-12, epsrel=1e-13)[0]
               for a, b in zip(CUTS[:-1], CUTS[1:]))


@pytest.mark.parametrize("n,pattern,N", [(20, "diagonal", 1), (16, "crisscross", 3)])
def test_total_vorticity_against_adaptive_quadrature(n, pattern, N):
    """<w_h, 1> of the projected initial data equals the integral of the profile;
    1 lies in CG, so only the projection's quadrature separates the two."""
    o = build_operators(make_periodic_rect_mesh(n, n, *SHEAR_EXTENT, pattern), N)
    for f in (lambda x, y: shear_layer_init(x, y)[2],
              lambda x, y: shear_layer_init(x, y)[2] ** 2):
        w = project_l2(o.W, f, qdegree=20)
        ref = _adaptive(f)
        assert abs(total_vorticity(w, o.N) - ref) < 1e-8 * max(1.0, abs(ref))


def test_total_vorticity_of_one(ops):
    assert total_vorticity(np.ones(ops.W.dim), ops.N) == pytest.approx((2 * np.pi) ** 2, rel=1e-13)
    c = 1.7
    assert enstrophy(np.full(ops.W.dim, c), ops.N) == pytest.approx(0.5 * c**2 * (2 * np.pi) ** 2)


def test_taylor_green_limits():
    c = get_case("taylor-green")
    o = build_operators(make_periodic_rect_mesh(8, 8, *c.extent), 4)
    u = project_solenoidal(o, lambda x, y: c.velocity(x, y))
    w = project_l2(o.W, lambda x, y: c.vorticity(x, y))
    assert kinetic_energy(u, o.M) == pytest.approx(1.0, rel=1e-6)
    assert enstrophy(w, o.N) == pytest.approx(2 * np.pi**2, rel=1e-6)
    assert abs(total_vorticity(w, o.N)) < 1e-12
    assert kinetic_energy(2 * u.coefficients, o.M) == pytest.approx(4 * kinetic_energy(u, o.M))
    zero = Field(o.U, np.zeros(o.U.dim))
    assert kinetic_energy(zero, o.M) == 0.0
    assert l2_error(zero, lambda x, y: c.velocity(x, y)) == pytest.approx(np.sqrt(2.0), rel=1e-10)
    assert l2_error(u, lambda x, y: c.velocity(x, y)) < 1e-3


def test_shear_initial_vorticity_total_is_zero():
    assert abs(_adaptive(lambda x, y: shear_layer_init(x, y)[2])) < 1e-8


def test_l2_error_rates_and_zero():
    c = get_case("taylor-green")
    errs = []
    for n in (4, 8):
        o = build_operators(make_periodic_rect_mesh(n, n, *c.extent), 2)
        u = project_solenoidal(o, lambda x, y: c.velocity(x, y))
        errs.append(l2_error(u, lambda x, y: c.velocity(x, y)))
        const = project_l2(o.W, lambda x, y: 1.0 + 0 * x)
        assert l2_error(const, lambda x, y: 1.0 + 0 * x) < 1e-12
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.3)


def test_record_rows(ops, rng):
    u = Field(ops.U, ops.curl_matrix @ rng.standard_normal(ops.W.dim))
    w = Field(ops.W, rng.standard_normal(ops.W.dim))
    r = record(ops, u, w, 0.5)
    assert r.err_u is None and len(r.row()) == len(CSV_FIELDS)
    r2 = record(ops, u, w, 0.5, lambda x, y: (0 * x, 0 * y), lambda x, y: 0 * x)
    assert len(r2.row(True)) == len(CSV_FIELDS + ERROR_FIELDS)
    assert r2.err_u == pytest.approx(np.sqrt(2 * r.K), rel=1e-10)
    assert r2.err_w == pytest.approx(np.sqrt(2 * r.E), rel=1e-10)


@pytest.mark.parametrize("kw", [dict(K=-1.0), dict(E=np.nan), dict(div_norm=-1e-3), dict(err_u=np.inf)])
def test_record_validation(kw):
    base = dict(t=0.0, K=1.0, E=1.0, Wtot=0.0, div_norm=0.0)
    base.update(kw)
    with pytest.raises(ValueError):
        DiagnosticRecord(**base)
