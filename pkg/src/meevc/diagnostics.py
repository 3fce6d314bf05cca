"""Conserved quantities and error norms."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .elements import MAX_QUADRATURE_DEGREE, quadrature
from .spaces import Field

CSV_FIELDS = ("t", "K", "E", "Wtot", "div_norm")
ERROR_FIELDS = ("err_u", "err_w")


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    K: float
    E: float
    Wtot: float
    div_norm: float
    err_u: float | None = None
    err_w: float | None = None

    def __post_init__(self):
        vals = [v for v in asdict(self).values() if v is not None]
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite diagnostic: {self}")
        if self.K < 0 or self.E < 0 or self.div_norm < 0:
            raise ValueError(f"negative quadratic diagnostic: {self}")

    def row(self, with_errors=False):
        keys = CSV_FIELDS + (ERROR_FIELDS if with_errors else ())
        return [getattr(self, k) for k in keys]


def _c(x):
    return x.coefficients if isinstance(x, Field) else np.asarray(x, dtype=float)


def kinetic_energy(u, M) -> float:
    """``K = 1/2 u^T M u``."""
    c = _c(u)
    return 0.5 * float(c @ (M @ c))


def enstrophy(omega, Nmat) -> float:
    """``E = 1/2 w^T N w``."""
    c = _c(omega)
    return 0.5 * float(c @ (Nmat @ c))


def total_vorticity(omega, Nmat) -> float:
    """``<omega_h, 1> = 1^T N w`` (the all-ones CG vector is the constant 1)."""
    c = _c(omega)
    return float(np.sum(Nmat @ c))


def divergence_norm(u, ops) -> float:
    """``||div u_h||_{L2}`` through the DG projection of the divergence.

    ``div u_h`` lies in DG_{N-1}, so with ``d = D u`` the norm is
    ``sqrt(d^T M_Q^{-1} d)`` exactly.
    """
    d = ops.D @ _c(u)
    return float(np.sqrt(max(d @ ops.Q._mass_lu.solve(d), 0.0)))


def _error_rule(space):
    return quadrature(min(MAX_QUADRATURE_DEGREE, 2 * space.degree + 6))


def l2_error(field: Field, exact, rule=None) -> float:
    """``sqrt(int |exact - field|^2)`` with ``exact(x, y)`` scalar or a 2-tuple."""
    space = field.space
    rule = rule or _error_rule(space)
    X = space.mesh.physical_points(rule.points)
    fh = space.values(field.coefficients, rule.points)
    ex = exact(X[..., 0], X[..., 1])
    if space.is_vector:
        ex = np.stack(ex, axis=-1) if isinstance(ex, tuple) else np.asarray(ex)
        sq = np.sum((ex - fh) ** 2, axis=-1)
    else:
        sq = (np.broadcast_to(ex, fh.shape) - fh) ** 2
    _, det, _ = space.geometry
    return float(np.sqrt(np.sum(sq * det[:, None] * rule.weights)))


def quadratic_by_quadrature(field: Field) -> float:
    """``1/2 int |f_h|^2`` evaluated pointwise (second path for K and E)."""
    space = field.space
    rule = quadrature(min(MAX_QUADRATURE_DEGREE, 2 * space.degree + 2))
    v = space.values(field.coefficients, rule.points)
    sq = np.sum(v**2, axis=-1) if space.is_vector else v**2
    _, det, _ = space.geometry
    return 0.5 * float(np.sum(sq * det[:, None] * rule.weights))


def record(ops, u, omega, t, exact_u=None, exact_w=None) -> DiagnosticRecord:
    """Diagnostics of a velocity/vorticity pair; errors only when exact fields are given."""
    err_u = l2_error(u, exact_u) if exact_u is not None else None
    err_w = l2_error(omega, exact_w) if exact_w is not None else None
    return DiagnosticRecord(
        t=float(t),
        K=kinetic_energy(u, ops.M),
        E=enstrophy(omega, ops.N),
        Wtot=total_vorticity(omega, ops.N),
        div_norm=divergence_norm(u, ops),
        err_u=err_u, err_w=err_w,
    )
