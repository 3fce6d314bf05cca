"""Global function spaces RT_N, DG_{N-1} and CG_N over a periodic mesh."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import splu

from .elements import (
    build_reference_element, check_inside, lattice_points, quadrature, rt_dof_functionals,
)
from .mesh import Mesh


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    """Global numbering of one element family over a mesh.

    ``local_to_global[t, i]`` is the global index of local basis function ``i``
    on triangle ``t``; the global function restricted to ``t`` equals
    ``signs[t, i]`` times the mapped local one.
    """
    mesh: Mesh
    family: str
    degree: int
    element: object = field(repr=False)
    dim: int = 0
    local_to_global: np.ndarray = field(default=None, repr=False)
    signs: np.ndarray = field(default=None, repr=False)

    @property
    def global_dof_count(self):
        return self.dim

    @property
    def is_vector(self):
        return self.family == "RT"

    @cached_property
    def geometry(self):
        return self.mesh.jacobians()

    def local_coefficients(self, coeffs):
        """Per-triangle coefficients of the reference basis, shape (nt, nloc)."""
        return self.signs * np.asarray(coeffs)[self.local_to_global]

    def reference_values(self, coeffs, ref_points):
        """Values of the field pulled back to the reference triangle.

        For RT this is the reference vector (before the Piola map); shape
        (nt, P) or (nt, P, 2).
        """
        tab = self.element.tabulate(ref_points, check=False)
        c = self.local_coefficients(coeffs)
        if self.is_vector:
            return np.einsum("ti,pic->tpc", c, tab.values)
        return c @ tab.values.T

    def values(self, coeffs, ref_points):
        """Physical values at the image of ``ref_points`` in every triangle."""
        ref = self.reference_values(coeffs, ref_points)
        if self.is_vector:
            J, det, _ = self.geometry
            return np.einsum("tab,tpb->tpa", J, ref) / det[:, None, None]
        return ref

    def divergence(self, coeffs, ref_points):
        """Physical divergence (RT only), shape (nt, P)."""
        tab = self.element.tabulate(ref_points, check=False)
        _, det, _ = self.geometry
        return (self.local_coefficients(coeffs) @ tab.div.T) / det[:, None]

    @cached_property
    def mass_matrix(self):
        from .assembly import mass_matrix
        return mass_matrix(self)

    @cached_property
    def _mass_lu(self):
        M = self.mass_matrix.tocsc()
        try:
            return splu(M)
        except RuntimeError as exc:
            raise AssemblyError(f"singular {self.family} mass matrix: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficient vector over a space, tagged with the time it represents."""
    space: FunctionSpace
    coefficients: np.ndarray
    time: float | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} coefficients, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coefficients", c)

    @property
    def c(self):
        return self.coefficients

    def with_coefficients(self, coefficients, time=None):
        return replace(self, coefficients=coefficients, time=time)

    def __call__(self, t, points):
        return evaluate(self, t, points)


def zeros(space, time=None) -> Field:
    return Field(space, np.zeros(space.dim), time)


def build_space(mesh: Mesh, family: str, N: int) -> FunctionSpace:
    """Number the degrees of freedom of ``family`` in {CG, DG, RT} at degree N."""
    family = family.upper()
    elem = build_reference_element(family, N)
    nt = mesh.n_triangles
    V, E = mesh.n_vertices, mesh.n_edges
    tri, tedge, tsign = mesh.triangles, mesh.tri_edges, mesh.tri_edge_signs
    l2g = np.empty((nt, elem.dim), dtype=np.int64)
    signs = np.ones((nt, elem.dim))

    if family == "DG":
        l2g[:] = np.arange(nt * elem.dim).reshape(nt, elem.dim)
        dim = nt * elem.dim
    elif family == "CG":
        ne = N - 1
        ni = (N - 1) * (N - 2) // 2
        l2g[:, :3] = mesh.vertex_class[tri]
        for e in range(3):
            k = np.arange(ne)
            along = np.where(tsign[:, e, None] > 0, k, ne - 1 - k)
            l2g[:, 3 + e * ne: 3 + (e + 1) * ne] = V + tedge[:, e, None] * ne + along
        off = V + E * ne
        l2g[:, 3 + 3 * ne:] = off + np.arange(nt * ni).reshape(nt, ni)
        dim = off + nt * ni
    elif family == "RT":
        ni = N * (N - 1)
        for e in range(3):
            for m in range(N):
                col = e * N + m
                l2g[:, col] = tedge[:, e] * N + m
                # reversing an edge flips the normal and maps P_m(s) to (-1)^m P_m(s)
                signs[:, col] = np.where(tsign[:, e] > 0, 1.0, (-1.0) ** (m + 1))
        off = E * N
        l2g[:, 3 * N:] = off + np.arange(nt * ni).reshape(nt, ni)
        dim = off + nt * ni
    else:
        raise ValueError(f"unknown family {family!r}")
    return FunctionSpace(mesh, family, N, elem, int(dim), l2g, signs)


def evaluate(field: Field, t: int, points) -> np.ndarray:
    """Evaluate ``field`` on triangle ``t`` at reference ``points``."""
    space = field.space
    if not 0 <= t < space.mesh.n_triangles:
        raise ValueError(f"triangle index {t} out of range")
    points = check_inside(points)
    tab = space.element.tabulate(points, check=False)
    c = space.signs[t] * field.coefficients[space.local_to_global[t]]
    if space.is_vector:
        J, det, _ = space.geometry
        ref = np.einsum("i,pic->pc", c, tab.values)
        return ref @ J[t].T / det[t]
    return tab.values @ c


# --------------------------------------------------------- reductions of f

def _as_vector(f_vals):
    if isinstance(f_vals, tuple):
        return np.stack(f_vals, axis=-1)
    return np.asarray(f_vals)


def load_vector(space: FunctionSpace, f, qdegree=None) -> np.ndarray:
    """``b_i = <f, phi_i>`` for a pointwise function ``f(x, y)``."""
    N = space.degree
    rule = quadrature(qdegree or min(20, 2 * N + 6))
    X = space.mesh.physical_points(rule.points)
    fv = f(X[..., 0], X[..., 1])
    tab = space.element.tabulate(rule.points, check=False)
    J, det, _ = space.geometry
    if space.is_vector:
        fv = _as_vector(fv)
        # <f, J v / det J> det J = f . J v
        pulled = np.einsum("tpa,tab->tpb", fv, J)
        local = np.einsum("tpb,pib,p->ti", pulled, tab.values, rule.weights)
    else:
        fv = np.broadcast_to(fv, X.shape[:2])
        local = np.einsum("tp,pi,p->ti", fv * det[:, None], tab.values, rule.weights)
    b = np.zeros(space.dim)
    np.add.at(b, space.local_to_global, space.signs * local)
    return b


def project_l2(space: FunctionSpace, f, time=None, qdegree=None) -> Field:
    """L2-orthogonal projection of ``f(x, y)`` onto ``space``.

    Vector fields may be returned as an ``(fx, fy)`` tuple or stacked on the
    last axis.
    """
    b = load_vector(space, f, qdegree)
    return Field(space, space._mass_lu.solve(b), time)


def interpolate(space: FunctionSpace, f, time=None) -> Field:
    """Canonical interpolant: nodal for CG/DG, moment-based for RT."""
    mesh = space.mesh
    out = np.zeros(space.dim)
    if space.is_vector:
        J, det, inv_t = space.geometry

        def pulled(ref_pts):
            X = mesh.physical_points(ref_pts)
            fv = _as_vector(f(X[..., 0], X[..., 1]))
            # inverse Piola: v_ref = det J * J^{-1} f
            v = det[:, None, None] * np.einsum("tba,tpb->tpa", inv_t, fv)
            return np.moveaxis(v, 0, 1)  # (P, nt, 2)

        local = rt_dof_functionals(space.degree)(pulled).T  # (nt, nloc)
    else:
        nodes = lattice_points(space.element.poly_degree)
        X = mesh.physical_points(nodes)
        local = np.broadcast_to(f(X[..., 0], X[..., 1]), X.shape[:2])
    out[space.local_to_global] = space.signs * local
    return Field(space, out, time)
