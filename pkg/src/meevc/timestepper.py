"""Staggered midpoint time integration.

Velocity lives at half-integer instants and vorticity and total pressure at
integer instants. One step maps ``(u^{k+1/2}, w^k)`` to ``(u^{k+3/2}, w^{k+1})``
in two linear solves:

vorticity::

    (N - dt/4 S + nu dt/2 L) w^{k+1} = (N + dt/4 S - nu dt/2 L) w^k,
    S = W(u^{k+1/2}) - W(u^{k+1/2})^T

velocity::

    [M + dt/2 R(w^{k+1})   -dt P] [u^{k+3/2}]   [(M - dt/2 R) u^{k+1/2} - nu dt l(w^{k+1})]
    [D                      0   ] [p^{k+1}  ] = [0                                         ]

The viscous term enters with the sign that makes it dissipative: ``L`` is the
positive semidefinite curl-curl matrix.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import (
    OperatorSet, SolverError, assemble_curl_load, assemble_rotation, assemble_transport,
    saddle_matrix, solve_with_residual,
)
from .spaces import Field

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-12
SOLVE_ABORT = 1e-9
PICARD_TOL = 1e-12
PICARD_MAXIT = 50
DIV_TOL_INITIAL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        self.residual = residual
        super().__init__(msg)


class CapabilityError(ValueError):
    pass


@dataclass(frozen=True)
class StepReport:
    residual_vorticity: float = 0.0
    residual_velocity: float = 0.0
    picard_iterations: int = 0
    picard_update: float = 0.0
    div_max: float = 0.0
    pressure_mismatch: float | None = None
    wall_time: float = 0.0


@dataclass(frozen=True, eq=False)
class SimState:
    """``u`` at ``t^{k+1/2}``, ``omega`` and ``pbar`` at ``t^k = t0 + k dt``.

    After :func:`bootstrap` the pressure is the midpoint value of the coupled
    first step and is tagged ``dt/2``.
    """
    ops: OperatorSet = field(repr=False)
    u: Field
    omega: Field
    pbar: Field
    k: int
    dt: float
    nu: float
    t0: float = 0.0

    @property
    def t(self) -> float:
        return self.t0 + self.k * self.dt

    @property
    def t_u(self) -> float:
        return self.t + 0.5 * self.dt


def _rel(delta, ref):
    n = np.linalg.norm(ref)
    d = np.linalg.norm(delta)
    return d / n if n > 0 else d


# ----------------------------------------------------------------- blocks

def vorticity_matrices(ops: OperatorSet, u, dt, nu):
    """``(A_lhs, A_rhs)`` of the vorticity update for velocity ``u``."""
    Wm = assemble_transport(ops, u)
    S = Wm - Wm.T
    lhs = ops.N - (dt / 4) * S + (nu * dt / 2) * ops.L
    rhs = ops.N + (dt / 4) * S - (nu * dt / 2) * ops.L
    return lhs.tocsc(), rhs.tocsr()


def solve_vorticity(ops, omega, u, dt, nu):
    lhs, rhs = vorticity_matrices(ops, u, dt, nu)
    return solve_with_residual(lhs, rhs @ omega, SOLVE_TOL, SOLVE_ABORT)


def velocity_system(ops: OperatorSet, omega, dt):
    """Bordered saddle matrix and ``M - dt/2 R`` for vorticity ``omega``."""
    R = assemble_rotation(ops, omega)
    A = ops.M + (dt / 2) * R
    return saddle_matrix(A, ops.P, ops.D, ops.pressure_pin, scale=dt), (ops.M - (dt / 2) * R)


def solve_velocity(ops, u, omega, dt, nu):
    """Return ``(u_new, pbar, residual)``; ``pbar`` has zero coefficient mean."""
    K, B = velocity_system(ops, omega, dt)
    b = B @ u
    if nu != 0.0:
        b = b - nu * dt * assemble_curl_load(ops, omega)
    rhs = np.concatenate([b, np.zeros(ops.Q.dim + 1)])
    x, res = solve_with_residual(K, rhs, SOLVE_TOL, SOLVE_ABORT)
    nU, nQ = ops.U.dim, ops.Q.dim
    p = x[nU:nU + nQ]
    return x[:nU], p - p.mean(), res


# ------------------------------------------------------------- operations

def bootstrap(ops: OperatorSet, u0: Field, omega0: Field, dt: float, nu: float,
              tol=PICARD_TOL, maxit=PICARD_MAXIT):
    """First, fully coupled midpoint step solved by Picard iteration.

    Returns ``(state, report)`` with ``state.u = (u^1 + u^0)/2`` and
    ``state.omega = omega0``.
    """
    t_start = time.perf_counter()
    u0c, w0c = u0.coefficients, omega0.coefficients
    div0 = np.abs(ops.D @ u0c).max(initial=0.0)
    if div0 > DIV_TOL_INITIAL:
        raise ValueError(f"initial velocity not divergence-free: max|D u0| = {div0:.3e}")
    u1, w1 = u0c.copy(), w0c.copy()
    p = np.zeros(ops.Q.dim)
    update = np.inf
    res_u = res_w = 0.0
    for it in range(1, maxit + 1):
        w_mid = 0.5 * (w1 + w0c)
        u1_new, p, res_u = solve_velocity(ops, u0c, w_mid, dt, nu)
        u_mid = 0.5 * (u1_new + u0c)
        w1_new, res_w = solve_vorticity(ops, w0c, u_mid, dt, nu)
        update = max(_rel(u1_new - u1, u1_new), _rel(w1_new - w1, w1_new))
        u1, w1 = u1_new, w1_new
        if not np.isfinite(update):
            break
        if update <= tol:
            break
    else:
        it = maxit
    if not update <= tol:
        raise ConvergenceError(
            f"Picard bootstrap did not converge in {maxit} iterations "
            f"(last update {update:.3e})", update)
    u_half = 0.5 * (u1 + u0c)
    t0 = u0.time or 0.0
    state = SimState(
        ops,
        u=u0.with_coefficients(u_half, t0 + dt / 2),
        omega=omega0.with_coefficients(w0c.copy(), t0),
        pbar=Field(ops.Q, p, t0 + dt / 2),
        k=0, dt=float(dt), nu=float(nu), t0=float(t0),
    )
    report = StepReport(res_w, res_u, it, float(update),
                        float(np.abs(ops.D @ u_half).max(initial=0.0)),
                        wall_time=time.perf_counter() - t_start)
    return state, report


def step_vorticity(state: SimState, dt=None):
    """``omega^{k+1}`` from ``(u^{k+1/2}, omega^k)``; returns ``(Field, residual)``."""
    dt = state.dt if dt is None else dt
    w, res = solve_vorticity(state.ops, state.omega.coefficients, state.u.coefficients,
                             dt, state.nu)
    return state.omega.with_coefficients(w, state.t + dt), res


def step_velocity(state: SimState, omega_next, dt=None):
    """``(u^{k+3/2}, pbar^{k+1}, residual)`` given ``omega^{k+1}``."""
    dt = state.dt if dt is None else dt
    wc = omega_next.coefficients if isinstance(omega_next, Field) else omega_next
    u, p, res = solve_velocity(state.ops, state.u.coefficients, wc, dt, state.nu)
    t_next = state.t + dt
    return (state.u.with_coefficients(u, t_next + 0.5 * dt),
            Field(state.ops.Q, p, t_next), res)


def step(state: SimState):
    """One forward step; returns ``(new_state, report)``."""
    t_start = time.perf_counter()
    w, res_w = step_vorticity(state)
    u, p, res_u = step_velocity(state, w)
    new = replace(state, u=u, omega=w, pbar=p, k=state.k + 1)
    div = float(np.abs(state.ops.D @ u.coefficients).max(initial=0.0))
    return new, StepReport(res_w, res_u, div_max=div, wall_time=time.perf_counter() - t_start)


def backward_step(state: SimState):
    """Inverse of :func:`step` for ``nu = 0``.

    Undoes the velocity update with ``-dt`` using the current vorticity, then
    the vorticity update with ``-dt`` using the recovered velocity. The
    pressure solved in the backward velocity system is compared with the
    stored pressure when that one is tagged at ``state.t`` (a forward value).
    The returned state carries the recovered pressure, tagged at the time it
    belongs to, one step ahead of the new state.
    """
    if state.nu != 0.0:
        raise CapabilityError("time reversal is only defined for nu = 0")
    t_start = time.perf_counter()
    ops, dt = state.ops, state.dt
    u_prev, p_back, res_u = solve_velocity(ops, state.u.coefficients,
                                           state.omega.coefficients, -dt, 0.0)
    w_prev, res_w = solve_vorticity(ops, state.omega.coefficients, u_prev, -dt, 0.0)
    t_prev = state.t - dt
    mismatch = None
    if state.pbar.time is not None and np.isclose(state.pbar.time, state.t):
        mismatch = float(np.abs(p_back - state.pbar.coefficients).max(initial=0.0))
    new = replace(state,
                  u=state.u.with_coefficients(u_prev, t_prev + 0.5 * dt),
                  omega=state.omega.with_coefficients(w_prev, t_prev),
                  pbar=Field(ops.Q, p_back, state.t),
                  k=state.k - 1)
    div = float(np.abs(ops.D @ u_prev).max(initial=0.0))
    return new, StepReport(res_w, res_u, div_max=div, pressure_mismatch=mismatch,
                           wall_time=time.perf_counter() - t_start)


def n_steps_for(span: float, dt: float) -> int:
    """Integer step count for a time span, rejecting non-multiples of ``dt``."""
    n = span / dt
    k = int(round(n))
    if k < 0 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise ValueError(f"time span {span} is not a non-negative integer multiple of dt={dt}")
    return k


def run(state: SimState, t_end=None, n_steps=None, callbacks=()):
    """Advance until ``state.t == t_end`` (or for ``n_steps``).

    Each callback is called as ``cb(state, report)`` after every step.
    Returns ``(state, reports)``.
    """
    if n_steps is None:
        if t_end is None:
            raise ValueError("give t_end or n_steps")
        n_steps = n_steps_for(t_end - state.t, state.dt)
    reports = []
    for _ in range(n_steps):
        state, rep = step(state)
        reports.append(rep)
        if rep.residual_velocity > SOLVE_TOL or rep.residual_vorticity > SOLVE_TOL:
            log.warning("step %d: residuals %.2e / %.2e above %.0e", state.k,
                        rep.residual_vorticity, rep.residual_velocity, SOLVE_TOL)
        for cb in callbacks:
            cb(state, rep)
    return state, reports


def run_reversed(state: SimState, t_back=None, n_steps=None, callbacks=()):
    """Step backwards until ``state.t == t_back``; inviscid only."""
    if state.nu != 0.0:
        raise CapabilityError("time reversal is only defined for nu = 0")
    if n_steps is None:
        if t_back is None:
            raise ValueError("give t_back or n_steps")
        n_steps = n_steps_for(state.t - t_back, state.dt)
    reports = []
    for _ in range(n_steps):
        state, rep = backward_step(state)
        reports.append(rep)
        for cb in callbacks:
            cb(state, rep)
    return state, reports


# ------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = "meevc-checkpoint 1"


def write_checkpoint(state: SimState, path):
    """Plain-text checkpoint: header lines, then each coefficient vector."""
    path = Path(path)
    m = state.ops.U.mesh
    lines = [CHECKPOINT_MAGIC,
             f"k {state.k}", f"t0 {float(state.t0)!r}", f"dt {float(state.dt)!r}",
             f"nu {float(state.nu)!r}",
             f"degree {state.ops.U.degree}",
             f"mesh {m.n_vertices} {m.n_edges} {m.n_triangles} {float(m.extent[0])!r} {float(m.extent[1])!r}"]
    for name, f in (("u", state.u), ("omega", state.omega), ("pbar", state.pbar)):
        t = None if f.time is None else float(f.time)
        lines.append(f"{name} {f.space.family} {f.space.dim} {t!r}")
        lines.extend(repr(float(v)) for v in f.coefficients)
    path.write_text("\n".join(lines) + "\n")


def read_checkpoint(path, ops: OperatorSet) -> SimState:
    """Load a checkpoint written by :func:`write_checkpoint` onto matching operators."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    head = {}
    pos = 1
    while pos < len(text) and text[pos].split()[0] not in ("u", "omega", "pbar"):
        key, *vals = text[pos].split()
        head[key] = vals
        pos += 1
    m = ops.U.mesh
    if int(head["degree"][0]) != ops.U.degree or [int(v) for v in head["mesh"][:3]] != [
            m.n_vertices, m.n_edges, m.n_triangles]:
        raise ValueError(f"{path}: checkpoint does not match the operator set")
    fields = {}
    spaces = {"u": ops.U, "omega": ops.W, "pbar": ops.Q}
    while pos < len(text):
        name, _, dim, t = text[pos].split()
        dim = int(dim)
        vals = np.array([float(v) for v in text[pos + 1: pos + 1 + dim]])
        fields[name] = Field(spaces[name], vals, None if t == "None" else float(t))
        pos += 1 + dim
    return SimState(ops, fields["u"], fields["omega"], fields["pbar"],
                    k=int(head["k"][0]), dt=float(head["dt"][0]), nu=float(head["nu"][0]),
                    t0=float(head["t0"][0]))


__all__ = [
    "SimState", "StepReport", "ConvergenceError", "CapabilityError", "SolverError",
    "bootstrap", "step", "step_vorticity", "step_velocity", "backward_step", "run",
    "run_reversed", "write_checkpoint", "read_checkpoint", "n_steps_for",
]
