"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Runtime is dominated by criterion 7 (about 20 minutes on one core). Set
``MEEVC_ACCEPTANCE_FULL=1`` to include the degree-4 32x32 point.
"""
import os

import numpy as np
import pytest

from meevc.assembly import (
    assemble_curl_load, assemble_rotation, assemble_transport, build_operators, project_solenoidal,
)
from meevc.cases import SHEAR_EXTENT, get_case
from meevc.diagnostics import l2_error, record
from meevc.mesh import build_mesh, make_periodic_rect_mesh
from meevc.spaces import Field, project_l2
from meevc.timestepper import SimState, bootstrap, run, run_reversed, step

from conftest import TINY_MESHES, report_criterion
from oracles import dense_curl_load, dense_operators, dense_rotation, dense_transport

SHEAR = get_case("shear-layer")
TG = get_case("taylor-green")


def _fit(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _start(case, mesh, N, dt, nu):
    ops = build_operators(mesh, N)
    u0 = project_solenoidal(ops, lambda x, y: case.velocity(x, y, 0.0, nu), time=0.0)
    w0 = project_l2(ops.W, lambda x, y: case.vorticity(x, y, 0.0, nu), time=0.0)
    return bootstrap(ops, u0, w0, dt, nu)


# ------------------------------------------------------------------ 1

def test_criterion_1_subcomplex_exactness():
    meshes = {
        "1x1": make_periodic_rect_mesh(1, 1, *SHEAR_EXTENT),
        "8x8 diagonal": make_periodic_rect_mesh(8, 8, *SHEAR_EXTENT),
        "10x10 crisscross": make_periodic_rect_mesh(10, 10, *SHEAR_EXTENT, "crisscross"),
    }
    rng = np.random.default_rng(1)
    worst_dc = worst_rep = 0.0
    for mesh in meshes.values():
        for N in range(1, 5):
            ops = build_operators(mesh, N)
            C = ops.curl_matrix
            worst_dc = max(worst_dc, abs(ops.D @ C).max())
            for _ in range(3):
                w = rng.standard_normal(ops.W.dim)
                l = assemble_curl_load(ops, w)
                worst_rep = max(worst_rep, np.abs(l - ops.M @ (C @ w)).max())
    ok = worst_dc < 1e-11 and worst_rep < 1e-12
    report_criterion(1, ok, f"max|DC| = {worst_dc:.2e} (< 1e-11), max|l - MCw| = {worst_rep:.2e} (< 1e-12)")
    assert ok


# ------------------------------------------------------------------ 2

def test_criterion_2_dense_oracle():
    rng = np.random.default_rng(2)
    worst = {}
    for make in TINY_MESHES.values():
        mesh = make()
        for N in range(1, 5):
            ops = build_operators(mesh, N)
            ref, (bu, _, bw) = dense_operators(ops.U, ops.Q, ops.W)
            diffs = {k: np.abs(getattr(ops, k).toarray() - A).max() for k, A in ref.items()}
            w = rng.standard_normal(ops.W.dim)
            u = rng.standard_normal(ops.U.dim)
            diffs["R"] = np.abs(assemble_rotation(ops, w).toarray() - dense_rotation(bu, bw, w)).max()
            diffs["W"] = np.abs(assemble_transport(ops, u).toarray() - dense_transport(bu, bw, u)).max()
            diffs["l"] = np.abs(assemble_curl_load(ops, w) - dense_curl_load(bu, bw, w)).max()
            for k, v in diffs.items():
                worst[k] = max(worst.get(k, 0.0), v)
    top = max(worst.values())
    ok = top < 1e-13
    report_criterion(2, ok, "max entry difference " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                     + " (< 1e-13, p = 1..4, meshes of 2-4 triangles)")
    assert ok


# ------------------------------------------------------------------ 3-5

def _drifts(state, t_end):
    ops = state.ops
    r0 = record(ops, state.u, state.omega, state.t)
    out = dict(K=0.0, E=0.0, W=0.0, div=r0.div_norm)

    def cb(s, rep):
        r = record(ops, s.u, s.omega, s.t)
        out["K"] = max(out["K"], abs(r.K - r0.K) / r0.K)
        out["E"] = max(out["E"], abs(r.E - r0.E) / r0.E)
        out["W"] = max(out["W"], abs(r.Wtot - r0.Wtot))
        out["div"] = max(out["div"], r.div_norm)

    run(state, t_end=t_end, callbacks=[cb])
    return out


def _conservation_ok(d):
    return d["K"] < 1e-10 and d["E"] < 1e-10 and d["W"] < 1e-10 and d["div"] < 1e-11


def _fmt(d):
    return f"dK/K {d['K']:.1e}, dE/E {d['E']:.1e}, dW {d['W']:.1e}, div {d['div']:.1e}"


def test_criterion_3_inviscid_conservation():
    mesh = make_periodic_rect_mesh(20, 20, *SHEAR_EXTENT)
    assert mesh.n_triangles == 800
    parts, ok = [], True
    for dt in (1.0, 0.5, 0.25, 0.125):
        state, rep = _start(SHEAR, mesh, 1, dt, 0.0)
        d = _drifts(state, 16.0)
        ok &= _conservation_ok(d)
        parts.append(f"dt={dt:g}: {_fmt(d)}")
    report_criterion(3, ok, "; ".join(parts))
    assert ok


def test_criterion_4_long_time_conservation():
    mesh = make_periodic_rect_mesh(5, 5, *SHEAR_EXTENT, "crisscross")
    assert mesh.n_triangles == 100
    state, rep = _start(SHEAR, mesh, 4, 1.0, 0.0)
    d = _drifts(state, 128.0)
    ok = _conservation_ok(d)
    report_criterion(4, ok, f"p=4, 100 triangles, dt=1, t=128: {_fmt(d)}")
    assert ok


def test_criterion_5_time_reversibility():
    mesh = make_periodic_rect_mesh(20, 20, *SHEAR_EXTENT)
    s0, _ = _start(SHEAR, mesh, 1, 0.25, 0.0)
    fwd, _ = run(s0, t_end=2.0)
    back, _ = run_reversed(fwd, t_back=0.0)
    err = np.abs(back.omega.coefficients - s0.omega.coefficients).max()
    ok = err < 1e-10 and back.k == 0
    report_criterion(5, ok, f"max vorticity coefficient error after t=2 round trip {err:.2e} (< 1e-10)")
    assert ok


# ------------------------------------------------------------------ 6

def test_criterion_6_temporal_convergence():
    """Velocity error at t_end against dt.

    ``u^{K+1/2}`` is stored half a step ahead of the final vorticity. Compared
    with the exact field at t_end (the published protocol) the half-step
    offset dominates and the error is first order. Compared at its own time
    the same data converge at second order; both slopes are reported.
    """
    mesh = make_periodic_rect_mesh(20, 20, *TG.extent)
    assert mesh.n_triangles == 800
    ops = build_operators(mesh, 4)
    u0 = project_solenoidal(ops, lambda x, y: TG.velocity(x, y, 0.0, TG.nu), time=0.0)
    w0 = project_l2(ops.W, lambda x, y: TG.vorticity(x, y, 0.0, TG.nu), time=0.0)
    dts = [1, 1 / 2, 1 / 4, 1 / 8, 1 / 16]
    at_tend, at_own = [], []
    for dt in dts:
        s, _ = bootstrap(ops, u0, w0, dt, TG.nu)
        s, _ = run(s, t_end=1.0)
        at_tend.append(l2_error(s.u, lambda x, y: TG.velocity(x, y, 1.0, TG.nu)))
        at_own.append(l2_error(s.u, lambda x, y: TG.velocity(x, y, s.t_u, TG.nu)))
    slope = _fit(dts, at_tend)
    ratios = [a / b for a, b in zip(at_tend[:-1], at_tend[1:])]
    ok = abs(slope - 1.0) <= 0.2 and all(1.6 <= r <= 2.4 for r in ratios)
    report_criterion(6, ok, f"slope {slope:.3f} (1.0 +- 0.2), halving ratios "
                     + ", ".join(f"{r:.2f}" for r in ratios)
                     + f"; errors {', '.join(f'{e:.2e}' for e in at_tend)}"
                     + f"; same data at the velocity's own time: slope {_fit(dts, at_own):.2f}")
    assert ok


# ------------------------------------------------------------------ 7

def test_criterion_7_spatial_convergence():
    full = os.environ.get("MEEVC_ACCEPTANCE_FULL") == "1"
    plan = {1: (2.5e-2, [8, 16, 32]), 2: (1e-3, [8, 16, 32]), 4: (1e-4, [8, 16, 32] if full else [8, 16])}
    parts, ok = [], True
    for N, (dt, levels) in plan.items():
        errs = []
        for n in levels:
            s, _ = _start(TG, make_periodic_rect_mesh(n, n, *TG.extent), N, dt, TG.nu)
            s, _ = run(s, t_end=0.25)
            errs.append(l2_error(s.u, lambda x, y: TG.velocity(x, y, s.t_u, TG.nu)))
        slope = _fit([TG.extent[0] / n for n in levels], errs)
        ok &= abs(slope - N) <= 0.3
        skipped = "" if len(levels) == 3 else " (32x32 skipped for runtime)"
        parts.append(f"p={N}: slope {slope:.2f}{skipped}")
    report_criterion(7, ok, "; ".join(parts) + " (target p +- 0.3)")
    assert ok


# ------------------------------------------------------------------ 8

def _random_mesh(rng):
    nx, ny = (int(v) for v in rng.integers(1, 4, 2))
    L = rng.uniform(0.5, 7.0, 2)
    if rng.random() < 0.5:
        return make_periodic_rect_mesh(nx, ny, *L)
    m = make_periodic_rect_mesh(nx, ny, *L, "crisscross")
    v = m.vertices.copy()
    v[(nx + 1) * (ny + 1):] += rng.uniform(-0.2, 0.2, (nx * ny, 2)) * L / [nx, ny]
    return build_mesh(v, m.triangles, L)


def test_criterion_8_per_step_invariants():
    rng = np.random.default_rng(8)
    worst = dict(a=0.0, b=0.0, c=0.0, d=0.0)
    steps = 0
    while steps < 100:
        ops = build_operators(_random_mesh(rng), int(rng.integers(1, 5)))
        u = ops.curl_matrix @ rng.standard_normal(ops.W.dim) + ops.harmonic @ rng.standard_normal(2)
        dt = float(rng.choice([1.0, 0.5, 0.25, 0.1]))
        s = SimState(ops, Field(ops.U, u, dt / 2), Field(ops.W, rng.standard_normal(ops.W.dim), 0.0),
                     Field(ops.Q, np.zeros(ops.Q.dim), 0.0), 0, dt, 0.0)
        for _ in range(10):
            s1, _ = step(s)
            w0, w1 = s.omega.coefficients, s1.omega.coefficients
            u0, u1 = s.u.coefficients, s1.u.coefficients
            Nw0 = ops.N @ w0
            a = abs(np.sum(ops.N @ (w1 - w0))) / max(1.0, np.abs(Nw0).sum())
            b = abs(w1 @ ops.N @ w1 - w0 @ Nw0) / (w0 @ Nw0)
            c = abs(u1 @ ops.M @ u1 - u0 @ ops.M @ u0) / (u0 @ ops.M @ u0)
            d = np.abs(ops.D @ u1).max()
            for k, v in zip("abcd", (a, b, c, d)):
                worst[k] = max(worst[k], v)
            s = s1
            steps += 1
    ok = worst["a"] < 1e-12 and worst["b"] < 1e-12 and worst["c"] < 1e-12 and worst["d"] < 1e-11
    report_criterion(8, ok, f"{steps} random steps: (a) {worst['a']:.1e} (b) {worst['b']:.1e} "
                     f"(c) {worst['c']:.1e} (d) {worst['d']:.1e}")
    assert ok
