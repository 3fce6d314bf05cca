"""Global sparse operators of the MEEVC discretisation.

Constant operators (indices ``i`` = row, ``j`` = column)::

    M_ij = <v_j, v_i>                 velocity mass           (d_U x d_U)
    N_ij = <xi_j, xi_i>               vorticity mass          (d_W x d_W)
    P_ij = <q_j, div v_i>             pressure coupling       (d_U x d_Q)
    D_ij = <div v_j, q_i>             divergence, D = P^T     (d_Q x d_U)
    L_ij = <curl xi_j, curl xi_i>     curl-curl stiffness     (d_W x d_W)

State dependent::

    R_ij = <omega x v_j, v_i>         omega x v = omega * (-v_y, v_x)
    W_ij = <xi_j, div(u xi_i)>
    l_i  = <curl omega, v_i>

On affine triangles the Piola factors cancel in P, R and W, which are then
assembled from reference tables alone.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .elements import quadrature, reference_curl_matrix
from .spaces import Field, FunctionSpace, interpolate, load_vector

_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])  # curl xi = _ROT @ grad xi


def bilinear_degree(N):
    return 2 * N + 2


def trilinear_degree(N):
    return 3 * N + 2


def _threads():
    try:
        return max(1, int(os.environ.get("MEEVC_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, nt, *arrays):
    """Apply ``fn`` to element chunks; results concatenated in element order."""
    workers = _threads()
    if workers == 1 or nt < 2 * workers:
        return fn(*arrays)
    bounds = np.linspace(0, nt, workers + 1).astype(int)
    parts = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(workers) as pool:
        return np.concatenate(list(pool.map(lambda args: fn(*args), parts)))


class SparsityPattern:
    """Fixed scatter map from per-element blocks to a CSR matrix.

    Duplicate contributions are reduced with ``np.bincount`` in a fixed order,
    so repeated assembly is bit-reproducible.
    """

    def __init__(self, test: FunctionSpace, trial: FunctionSpace):
        self.shape = (test.dim, trial.dim)
        rows = np.broadcast_to(test.local_to_global[:, :, None],
                               (len(test.local_to_global),) + (test.element.dim, trial.element.dim))
        cols = np.broadcast_to(trial.local_to_global[:, None, :], rows.shape)
        key = rows.ravel() * trial.dim + cols.ravel()
        uniq, self.inverse = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, trial.dim)
        self.indices = c.astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(test.dim + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self.sign = test.signs[:, :, None] * trial.signs[:, None, :]

    def assemble(self, local) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=(self.sign * local).ravel(),
                           minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def scatter_vector(space: FunctionSpace, local) -> np.ndarray:
    return np.bincount(space.local_to_global.ravel(),
                       weights=(space.signs * local).ravel(), minlength=space.dim)


def _metric(space):
    """J^T J / det J per triangle, flattened to (nt, 4)."""
    J, det, _ = space.geometry
    return (np.einsum("tai,taj->tij", J, J) / det[:, None, None]).reshape(-1, 4)


def _vector_kernel(vals, w):
    """K[(a, b), (i, j)] = sum_q w_q vals[q, i, a] vals[q, j, b]."""
    n = vals.shape[1]
    return np.einsum("q,qia,qjb->abij", w, vals, vals).reshape(4, n * n)


def mass_matrix(space: FunctionSpace) -> sp.csr_matrix:
    N = space.degree
    rule = quadrature(bilinear_degree(N))
    tab = space.element.tabulate(rule.points, check=False)
    n = space.element.dim
    pattern = SparsityPattern(space, space)
    if space.is_vector:
        local = (_metric(space) @ _vector_kernel(tab.values, rule.weights)).reshape(-1, n, n)
    else:
        ref = np.einsum("q,qi,qj->ij", rule.weights, tab.values, tab.values)
        _, det, _ = space.geometry
        local = det[:, None, None] * ref
    return pattern.assemble(local)


@dataclass(eq=False)
class OperatorSet:
    U: FunctionSpace
    Q: FunctionSpace
    W: FunctionSpace
    M: sp.csr_matrix
    N: sp.csr_matrix
    P: sp.csr_matrix
    D: sp.csr_matrix
    L: sp.csr_matrix
    bilinear_rule: object = field(repr=False)
    trilinear_rule: object = field(repr=False)

    @property
    def Nmat(self):
        return self.N

    @cached_property
    def _tables(self):
        rule = self.trilinear_rule
        rt = self.U.element.tabulate(rule.points, check=False)
        cg = self.W.element.tabulate(rule.points, check=False)
        w = rule.weights
        rot_v = np.stack([-rt.values[..., 1], rt.values[..., 0]], axis=-1)
        nU, nW = self.U.element.dim, self.W.element.dim
        return dict(
            w=w,
            cg=cg.values, cg_grad=cg.derivatives, cg_curl=cg.curl,
            rt=rt.values, rt_div=rt.div,
            # rotation kernel: v_i . (omega x v_j) / omega, per point
            rot=np.einsum("qia,qja->qij", rt.values, rot_v).reshape(len(w), nU * nU),
            xixi=np.einsum("qi,qj->qij", cg.values, cg.values).reshape(len(w), nW * nW),
            gradxi=np.einsum("qid,qj->qdij", cg.derivatives, cg.values).reshape(len(w) * 2, nW * nW),
        )

    @cached_property
    def _patterns(self):
        return SparsityPattern(self.U, self.U), SparsityPattern(self.W, self.W)

    @cached_property
    def curl_matrix(self) -> sp.csr_matrix:
        """C with ``curl(omega_h)`` having RT coefficients ``C @ omega``."""
        return curl_matrix(self.U, self.W)

    @cached_property
    def pressure_null(self):
        """DG coefficients of the constant 1 (left null vector of D)."""
        return interpolate(self.Q, lambda x, y: np.ones_like(x)).coefficients

    @cached_property
    def pressure_pin(self):
        """Unit vector on the first DG coefficient.

        Bordering with this sparse vector removes the constant pressure mode
        without the dense row a mean constraint would add; the coefficient
        mean is subtracted afterwards.
        """
        e = np.zeros(self.Q.dim)
        e[0] = 1.0
        return e

    @cached_property
    def harmonic(self):
        """RT coefficients of the constant fields (1, 0) and (0, 1), shape (d_U, 2).

        On the torus the discretely divergence-free fields are exactly
        ``range(C)`` plus these two.
        """
        ex = interpolate(self.U, lambda x, y: (np.ones_like(x), np.zeros_like(x))).coefficients
        ey = interpolate(self.U, lambda x, y: (np.zeros_like(x), np.ones_like(x))).coefficients
        return np.column_stack([ex, ey])

    @cached_property
    def ones_W(self):
        return np.ones(self.W.dim)


def _check_same_mesh(*spaces):
    mesh = spaces[0].mesh
    if any(s.mesh is not mesh for s in spaces):
        raise ValueError("spaces are defined over different meshes")


def assemble_constant_operators(U: FunctionSpace, Q: FunctionSpace,
                                W: FunctionSpace) -> OperatorSet:
    _check_same_mesh(U, Q, W)
    if not (U.family == "RT" and Q.family == "DG" and W.family == "CG"):
        raise ValueError("expected (RT, DG, CG) spaces")
    if not U.degree == Q.degree == W.degree:
        raise ValueError("spaces must share the complex degree N")
    N = U.degree
    rule = quadrature(bilinear_degree(N))
    rt = U.element.tabulate(rule.points, check=False)
    cg = W.element.tabulate(rule.points, check=False)
    dg = Q.element.tabulate(rule.points, check=False)
    w = rule.weights
    nW = W.element.dim

    M = mass_matrix(U)
    Nm = mass_matrix(W)
    metric = _metric(W)
    curl_kernel = _vector_kernel(cg.curl, w)
    L = SparsityPattern(W, W).assemble(
        _chunked(lambda m: (m @ curl_kernel).reshape(-1, nW, nW), len(metric), metric))
    p_ref = np.einsum("q,qi,qj->ij", w, rt.div, dg.values)
    P = SparsityPattern(U, Q).assemble(np.broadcast_to(p_ref, (U.mesh.n_triangles,) + p_ref.shape))
    D = P.T.tocsr()
    ops = OperatorSet(U, Q, W, M, Nm, P, D, L, rule, quadrature(trilinear_degree(N)))
    return ops


def build_operators(mesh, N) -> OperatorSet:
    from .spaces import build_space
    return assemble_constant_operators(build_space(mesh, "RT", N), build_space(mesh, "DG", N),
                                       build_space(mesh, "CG", N))


def _coeffs(x):
    return x.coefficients if isinstance(x, Field) else np.asarray(x, dtype=float)


def assemble_rotation(ops: OperatorSet, omega) -> sp.csr_matrix:
    """R(omega); skew-symmetric by construction."""
    tb = ops._tables
    om = ops.W.local_coefficients(_coeffs(omega)) @ tb["cg"].T  # (nt, nq)
    n = ops.U.element.dim
    local = _chunked(lambda o: ((o * tb["w"]) @ tb["rot"]).reshape(-1, n, n), len(om), om)
    return ops._patterns[0].assemble(local)


def assemble_transport(ops: OperatorSet, u) -> sp.csr_matrix:
    """W(u) with ``W_ij = <xi_j, (div u) xi_i + u . grad xi_i>``."""
    tb = ops._tables
    c = ops.U.local_coefficients(_coeffs(u))
    uref = np.einsum("ti,qic->tqc", c, tb["rt"])  # Piola factors cancel
    div = c @ tb["rt_div"].T
    w = tb["w"]
    n = ops.W.element.dim

    def block(ur, dv):
        out = (dv * w) @ tb["xixi"]
        out += (ur * w[:, None]).reshape(len(ur), -1) @ tb["gradxi"]
        return out.reshape(-1, n, n)

    return ops._patterns[1].assemble(_chunked(block, len(c), uref, div))


def assemble_curl_load(ops: OperatorSet, omega) -> np.ndarray:
    """``l_i = <curl omega, v_i>``."""
    tb = ops._tables
    c = ops.W.local_coefficients(_coeffs(omega))
    curl = np.einsum("ti,qia->tqa", c, tb["cg_curl"])
    metric = _metric(ops.U).reshape(-1, 2, 2)
    local = np.einsum("q,tqa,tab,qib->ti", tb["w"], curl, metric, tb["rt"])
    return scatter_vector(ops.U, local)


def curl_matrix(U: FunctionSpace, W: FunctionSpace) -> sp.csr_matrix:
    """Map CG_N coefficients to the RT_N coefficients of their curl.

    Edge coefficients are seen by two triangles; contributions are averaged,
    and agree exactly when the complex is realised correctly.
    """
    _check_same_mesh(U, W)
    local = reference_curl_matrix(U.degree)
    nt = U.mesh.n_triangles
    rows = np.broadcast_to(U.local_to_global[:, :, None], (nt,) + local.shape).ravel()
    cols = np.broadcast_to(W.local_to_global[:, None, :], (nt,) + local.shape).ravel()
    vals = (U.signs[:, :, None] * W.signs[:, None, :] * local).ravel()
    keep = vals != 0.0
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(U.dim, W.dim)).tocsr()
    mult = np.bincount(U.local_to_global.ravel(), minlength=U.dim).astype(float)
    return (sp.diags(1.0 / mult) @ A).tocsr()


def project_solenoidal(ops: OperatorSet, f, time=None, qdegree=None) -> Field:
    """L2 projection of a vector field onto the discretely divergence-free subspace.

    Solves ``M u - P lam = b, D u = 0`` with the multiplier's constant mode
    pinned, so ``D u`` vanishes to round-off.
    """
    b = load_vector(ops.U, f, qdegree)
    K = saddle_matrix(ops.M, ops.P, ops.D, ops.pressure_pin)
    rhs = np.concatenate([b, np.zeros(ops.Q.dim + 1)])
    x = solve_checked(K, rhs)
    return Field(ops.U, x[:ops.U.dim], time)


def saddle_matrix(A, P, D, null, scale=1.0):
    """``[[A, -scale P, 0], [D, 0, n], [0, n^T, 0]]``.

    ``n`` must not be orthogonal to the constant pressure mode; since
    ``P @ 1 = 0`` the multiplier row is satisfied with a zero multiplier.
    """
    n = sp.csr_matrix(null.reshape(-1, 1))
    return sp.bmat([[A, -scale * P, None], [D, None, n], [None, n.T, None]], format="csc")


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        self.residual = residual
        super().__init__(msg)


def solve_checked(A, b, tol=1e-12, abort=1e-9, refine=3):
    """Sparse LU solve with iterative refinement; returns the solution.

    Raises :class:`SolverError` if the relative residual stays above ``abort``.
    """
    x, _ = solve_with_residual(A, b, tol, abort, refine)
    return x


def solve_with_residual(A, b, tol=1e-12, abort=1e-9, refine=3):
    A = sp.csc_matrix(A)
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SolverError(f"factorisation failed: {exc}") from exc
    x = lu.solve(b)
    scale = np.linalg.norm(b)
    if scale == 0.0:
        return x, 0.0
    res = np.linalg.norm(b - A @ x) / scale
    for _ in range(refine):
        if res <= tol:
            break
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(b - A @ x) / scale
    if not np.isfinite(res) or res > abort:
        raise SolverError(f"linear solve residual {res:.3e} above {abort:g}", res)
    return x, res


def dump_triplets(A, path):
    """Write ``row col value`` lines (sorted, full precision)."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
