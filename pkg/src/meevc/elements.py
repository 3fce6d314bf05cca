"""Reference-triangle elements: quadrature, CG_N, DG_{N-1} and RT_N bases.

All bases live on the reference triangle {(0,0), (1,0), (0,1)} and are stored
as coefficient matrices over the Bernstein basis of the element's polynomial
degree, so values and first derivatives are exact polynomial evaluations.

Local topology shared with :mod:`meevc.mesh`: local edge ``i`` is opposite
local vertex ``i`` and is traversed counter-clockwise,
``e0 = v1 -> v2``, ``e1 = v2 -> v0``, ``e2 = v0 -> v1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 4
MAX_QUADRATURE_DEGREE = 20
BARYCENTRIC_TOL = 1e-12

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


class CapabilityError(ValueError):
    """Requested degree or rule is outside the supported range."""


class DomainError(ValueError):
    """Evaluation point lies outside the reference triangle."""


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Collapsed (conical product) Gauss rule on the reference triangle.

    Uses Gauss-Jacobi(1, 0) in the collapsed direction and Gauss-Legendre in
    the other, so all weights are positive and all points are interior. The
    one-point rule is the barycenter rule.
    """
    if not 1 <= degree <= MAX_QUADRATURE_DEGREE:
        raise CapabilityError(
            f"quadrature degree {degree} outside [1, {MAX_QUADRATURE_DEGREE}]")
    n = (degree + 2) // 2
    t, wt = roots_jacobi(n, 1.0, 0.0)
    s, ws = roots_legendre(n)
    eta = 0.5 * (1.0 + t)
    xi = 0.5 * (1.0 + s)
    wt = wt / 4.0
    ws = ws / 2.0
    x = np.outer(1.0 - eta, xi).ravel()
    y = np.repeat(eta, n)
    w = np.outer(wt, ws).ravel()
    pts = np.column_stack([x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, 2 * n - 1)


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    s, w = roots_legendre(n)
    return 0.5 * (1.0 + s), 0.5 * w


# ----------------------------------------------------------------- monomials

def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents (a, b) of x^a y^b with a + b <= degree, graded order."""
    return np.array([(d - b, b) for d in range(degree + 1) for b in range(d + 1)],
                    dtype=int).reshape(-1, 2)


def _powers(v, top):
    out = np.ones((top + 1,) + v.shape)
    for k in range(1, top + 1):
        out[k] = out[k - 1] * v
    return out


def eval_monomials(exps, points):
    """Values and gradients of monomials; shapes (P, m) and (P, m, 2)."""
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    top = int(exps.max()) if exps.size else 0
    px, py = _powers(x, top), _powers(y, top)
    a, b = exps[:, 0], exps[:, 1]
    val = px[a].T * py[b].T
    dx = np.where(a > 0, a * px[np.maximum(a - 1, 0)].T, 0.0) * py[b].T
    dy = px[a].T * np.where(b > 0, b * py[np.maximum(b - 1, 0)].T, 0.0)
    return val, np.stack([dx, dy], axis=-1)


def lattice_points(degree: int) -> np.ndarray:
    """Equispaced nodes ordered vertices, edges (along local traversal), interior."""
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    nodes = [REF_VERTICES[i] for i in range(3)]
    for a, b in LOCAL_EDGES:
        for k in range(1, degree):
            nodes.append(REF_VERTICES[a] + k / degree * (REF_VERTICES[b] - REF_VERTICES[a]))
    for j in range(1, degree):
        for i in range(1, degree - j):
            nodes.append(np.array([i / degree, j / degree]))
    return np.array(nodes)


def check_inside(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lam = np.column_stack([1.0 - points.sum(axis=1), points[:, 0], points[:, 1]])
    if np.any(lam < -BARYCENTRIC_TOL):
        raise DomainError("point outside the reference triangle")
    return points


# ------------------------------------------------------ exact construction
#
# Bases are built in rational arithmetic over monomials, then converted to
# Bernstein coefficients of the same degree and rounded once to double.
# Bernstein evaluation keeps RT_4 round-off near machine precision, where the
# monomial form cancels digits.

def _exact_lattice(d):
    if d == 0:
        return [(Fraction(1, 3), Fraction(1, 3))]
    return [(Fraction(int(round(x * d)), d), Fraction(int(round(y * d)), d))
            for x, y in lattice_points(d)]


def _mono_row(exps, pt):
    x, y = pt
    return [x ** int(a) * y ** int(b) for a, b in exps]


def bernstein_exponents(d):
    """Barycentric multi-indices (a0, a1, a2), a0 + a1 + a2 = d."""
    return np.array([(d - i - j, i, j) for j in range(d + 1) for i in range(d + 1 - j)],
                    dtype=int).reshape(-1, 3)


def _bern_row(d, pt):
    x, y = pt
    lam = (1 - x - y, x, y)
    out = []
    for a in bernstein_exponents(d):
        c = Fraction(factorial(d), factorial(a[0]) * factorial(a[1]) * factorial(a[2]))
        out.append(c * lam[0] ** int(a[0]) * lam[1] ** int(a[1]) * lam[2] ** int(a[2]))
    return out


def _solve_exact(A, B):
    """Solve A X = B over the rationals (Gauss-Jordan, partial pivoting by nonzero)."""
    n = len(A)
    m = len(B[0])
    aug = [list(A[i]) + list(B[i]) for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    return [row[n:n + m] for row in aug]


def _to_bernstein(d, node_values):
    """Bernstein coefficients from values at the degree-d lattice (rows = nodes)."""
    nodes = _exact_lattice(d)
    B = [_bern_row(d, p) for p in nodes]
    return _solve_exact(B, node_values)


def _lagrange_bernstein(d):
    n = len(_exact_lattice(d))
    ident = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    return _to_bernstein(d, ident)


def _shifted_legendre(m):
    """Integer coefficients of P_m(2s - 1) in powers of s."""
    return [(-1) ** (m + k) * comb(m, k) * comb(m + k, k) for k in range(m + 1)]


def _poly_s(exps, coeffs, xa, t):
    """Coefficients in s of sum_k coeffs[k] * m_k(xa + s t)."""
    top = int(exps.sum(axis=1).max()) if len(exps) else 0
    out = [Fraction(0)] * (top + 1)
    for (a, b), c in zip(exps, coeffs):
        if c == 0:
            continue
        px = [comb(int(a), k) * xa[0] ** (int(a) - k) * t[0] ** k for k in range(int(a) + 1)]
        py = [comb(int(b), k) * xa[1] ** (int(b) - k) * t[1] ** k for k in range(int(b) + 1)]
        for i, u in enumerate(px):
            for j, v in enumerate(py):
                out[i + j] += c * u * v
    return out


def _rt_exact_dofs(N, exps, span):
    """A[d][j] = dof_d(span_j) exactly; ``span[c][k][j]`` rational."""
    n = len(span[0][0])
    rows = []
    verts = [(Fraction(int(v[0])), Fraction(int(v[1]))) for v in REF_VERTICES]
    for a, b in LOCAL_EDGES:
        xa = verts[a]
        t = (verts[b][0] - xa[0], verts[b][1] - xa[1])
        rn = (t[1], -t[0])
        flux = []
        for j in range(n):
            cs = [rn[0] * span[0][k][j] + rn[1] * span[1][k][j] for k in range(len(exps))]
            flux.append(_poly_s(exps, cs, xa, t))
        for m in range(N):
            leg = _shifted_legendre(m)
            rows.append([sum(Fraction(lc) * fc / (i + k + 1)
                             for i, lc in enumerate(leg) for k, fc in enumerate(f))
                         for f in flux])
    inner = _bernstein_monomials(N - 2) if N >= 2 else []
    avg = N * (N - 1)  # 1 / int(B_k): interior moments are weighted averages
    for c in range(2):
        for test in inner:
            row = []
            for j in range(n):
                row.append(avg * sum(span[c][k][j] * w * Fraction(
                    factorial(int(a + p)) * factorial(int(b + q)),
                    factorial(int(a + p + b + q) + 2))
                    for k, (a, b) in enumerate(exps) if span[c][k][j] != 0
                    for (p, q), w in test.items()))
            rows.append(row)
    return rows


def _bernstein_monomials(d):
    """Each degree-d Bernstein polynomial as ``{(a, b): coefficient}``."""
    out = []
    for a0, a1, a2 in bernstein_exponents(d):
        mult = factorial(d) // (factorial(a0) * factorial(a1) * factorial(a2))
        poly = {}
        # (1 - x - y)^a0 expanded by the multinomial theorem
        for i in range(a0 + 1):
            for j in range(a0 - i + 1):
                c = (factorial(a0) // (factorial(i) * factorial(j) * factorial(a0 - i - j))
                     * (-1) ** (i + j))
                key = (int(a1 + i), int(a2 + j))
                poly[key] = poly.get(key, 0) + mult * c
        out.append({k: Fraction(v) for k, v in poly.items() if v})
    return out


# ----------------------------------------------------------------- elements

def eval_bernstein(d, points):
    """Bernstein values (P, m) and Cartesian gradients (P, m, 2) of degree d."""
    points = np.atleast_2d(points)
    lam = np.stack([1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]])
    alpha = bernstein_exponents(d)
    pw = np.stack([_powers(lam[k], d) for k in range(3)])  # (3, d+1, P)
    mult = np.array([factorial(d) / (factorial(a[0]) * factorial(a[1]) * factorial(a[2]))
                     for a in alpha])
    terms = np.stack([pw[k][alpha[:, k]] for k in range(3)])  # (3, m, P)
    val = (mult[:, None] * terms[0] * terms[1] * terms[2]).T
    dlam = []
    for k in range(3):
        dk = alpha[:, k]
        lower = pw[k][np.maximum(dk - 1, 0)] * dk[:, None]
        others = [terms[j] for j in range(3) if j != k]
        dlam.append((mult[:, None] * lower * others[0] * others[1]).T)
    grad = np.stack([dlam[1] - dlam[0], dlam[2] - dlam[0]], axis=-1)
    return val, grad


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """A polynomial basis on the reference triangle.

    ``coeffs[k, i]`` (scalar families) or ``coeffs[c, k, i]`` (RT, component
    ``c``) is the weight of Bernstein polynomial ``k`` of degree
    ``poly_degree`` in basis function ``i``. ``dof_kinds`` lists
    ``("vertex", v, 0)``, ``("edge", e, order)`` or ``("interior", -1, k)``.
    """
    family: str
    degree: int
    poly_degree: int
    coeffs: np.ndarray
    dof_kinds: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def is_vector(self) -> bool:
        return self.family == "RT"

    def tabulate(self, points, check=True):
        """Return a :class:`Tabulation` of the basis at reference ``points``."""
        if check:
            points = check_inside(points)
        val, grad = eval_bernstein(self.poly_degree, np.atleast_2d(points))
        if not self.is_vector:
            values = val @ self.coeffs
            grads = np.einsum("pkd,ki->pid", grad, self.coeffs)
            curl = np.stack([grads[..., 1], -grads[..., 0]], axis=-1)
            return Tabulation(values, grads, None, curl)
        values = np.einsum("pk,cki->pic", val, self.coeffs)
        # jac[p, i, c, d] = d(component c)/d(x_d)
        jac = np.einsum("pkd,cki->picd", grad, self.coeffs)
        div = jac[..., 0, 0] + jac[..., 1, 1]
        return Tabulation(values, jac, div, None)


@dataclass(frozen=True)
class Tabulation:
    values: np.ndarray
    derivatives: np.ndarray
    div: np.ndarray | None
    curl: np.ndarray | None


def _check_degree(N):
    if not (isinstance(N, (int, np.integer)) and 1 <= N <= MAX_DEGREE):
        raise CapabilityError(f"degree {N} outside supported range 1..{MAX_DEGREE}")


def _cg_kinds(N):
    kinds = [("vertex", v, 0) for v in range(3)]
    kinds += [("edge", e, k) for e in range(3) for k in range(N - 1)]
    kinds += [("interior", -1, k) for k in range((N - 1) * (N - 2) // 2)]
    return tuple(kinds)


def rt_spanning_set(N):
    """Exact spanning set of P_{N-1}^2 + x P~_{N-1} over degree-N monomials.

    Returns ``(exps, span)`` with ``span[c][k][j]`` the rational weight of
    monomial ``k`` in component ``c`` of function ``j``.
    """
    exps = monomial_exponents(N)
    index = {tuple(e): k for k, e in enumerate(exps)}
    low = monomial_exponents(N - 1)
    cols = []
    for c in range(2):
        for a, b in low:
            col = [[Fraction(0)] * len(exps) for _ in range(2)]
            col[c][index[(a, b)]] = Fraction(1)
            cols.append(col)
    for a, b in low[low.sum(axis=1) == N - 1]:
        col = [[Fraction(0)] * len(exps) for _ in range(2)]
        col[0][index[(a + 1, b)]] = Fraction(1)
        col[1][index[(a, b + 1)]] = Fraction(1)
        cols.append(col)
    span = [[[cols[j][c][k] for j in range(len(cols))] for k in range(len(exps))]
            for c in range(2)]
    return exps, span


def rt_dof_functionals(N):
    """Callable applying the RT_N moment functionals to reference vector fields.

    The returned function takes ``f(points) -> (P, ..., 2)`` and returns the
    ``N(N+2)`` moments along axis 0: per local edge the normal-flux moments
    against Legendre polynomials of orders ``0..N-1`` in the edge parameter,
    then interior moments of each component against the degree ``N-2``
    Bernstein polynomials scaled to unit integral, so every functional is
    O(1) and the dual basis stays O(1) as well.
    """
    s, ws = gauss_legendre_01(N + 1)
    legendre = np.stack([np.polyval(_shifted_legendre(m)[::-1], s) for m in range(N)])
    rule = quadrature(max(2 * N, 1))
    inner_vals = N * (N - 1) * eval_bernstein(N - 2, rule.points)[0] if N >= 2 else None

    def apply(f):
        out = []
        for a, b in LOCAL_EDGES:
            xa, xb = REF_VERTICES[a], REF_VERTICES[b]
            t = xb - xa
            rn = np.array([t[1], -t[0]])
            pts = xa + s[:, None] * t
            fn = np.tensordot(f(pts), rn, axes=([-1], [0]))  # (ns, ...)
            out.append(np.tensordot(legendre * ws, fn, axes=([1], [0])))
        if N >= 2:
            fv = f(rule.points)  # (nq, ..., 2)
            wq = rule.weights
            for c in range(2):
                out.append(np.tensordot(inner_vals.T * wq, fv[..., c], axes=([1], [0])))
        return np.concatenate(out, axis=0)

    return apply


def _rt_kinds(N):
    kinds = [("edge", e, m) for e in range(3) for m in range(N)]
    kinds += [("interior", -1, k) for k in range(N * (N - 1))]
    return tuple(kinds)


@lru_cache(maxsize=None)
def build_reference_element(family: str, N: int) -> ReferenceElement:
    """Build the reference basis for ``family`` in {"CG", "DG", "RT"} at degree N.

    ``N`` is the complex degree: DG is built at polynomial degree ``N - 1``.
    """
    family = family.upper()
    _check_degree(N)
    if family == "CG":
        coeffs = _lagrange_bernstein(N)
        return ReferenceElement("CG", N, N, _as_float(coeffs), _cg_kinds(N))
    if family == "DG":
        coeffs = _lagrange_bernstein(N - 1)
        kinds = tuple(("interior", -1, k) for k in range(len(coeffs)))
        return ReferenceElement("DG", N, N - 1, _as_float(coeffs), kinds)
    if family == "RT":
        exps, span = rt_spanning_set(N)
        n = N * (N + 2)
        A = _rt_exact_dofs(N, exps, span)
        ident = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
        Ainv = _solve_exact(A, ident)
        nodes = _exact_lattice(N)
        comps = []
        for c in range(2):
            # basis_i = sum_j span_j Ainv[j][i]; tabulate at lattice nodes, convert
            mono = [[sum(span[c][k][j] * Ainv[j][i] for j in range(n)) for i in range(n)]
                    for k in range(len(exps))]
            vals = [[sum(r[k] * mono[k][i] for k in range(len(exps))) for i in range(n)]
                    for r in (_mono_row(exps, p) for p in nodes)]
            comps.append(_as_float(_to_bernstein(N, vals)))
        return ReferenceElement("RT", N, N, np.stack(comps), _rt_kinds(N))
    raise CapabilityError(f"unknown element family {family!r}")


def _as_float(rows):
    return np.array([[float(v) for v in row] for row in rows])


def eval_basis(elem: ReferenceElement, points) -> Tabulation:
    return elem.tabulate(points)


def dof_matrix(elem: ReferenceElement) -> np.ndarray:
    """Degrees of freedom applied to the basis; identity for a unisolvent element."""
    if elem.family == "RT":
        return rt_dof_functionals(elem.degree)(lambda p: elem.tabulate(p, check=False).values)
    nodes = lattice_points(elem.poly_degree)
    return elem.tabulate(nodes).values


def reference_curl_matrix(N: int) -> np.ndarray:
    """Local RT_N coefficients of the curls of the CG_N basis, shape (dim RT, dim CG)."""
    cg = build_reference_element("CG", N)
    return rt_dof_functionals(N)(lambda p: cg.tabulate(p, check=False).curl)


# --------------------------------------------------------------- Piola map

def piola_map_rt(values, J, detJ):
    """Contravariant map of reference vectors: ``J v / det J``.

    ``values`` has the component axis last; ``J`` is (2, 2) or broadcastable
    (..., 2, 2) with ``detJ`` matching its leading shape.
    """
    J = np.asarray(J, dtype=float)
    detJ = np.asarray(detJ, dtype=float)
    if J.ndim == 2:
        return values @ J.T / detJ
    raise ValueError("use the batched helpers in meevc.spaces for stacked maps")


def piola_divergence(ref_div, detJ):
    return ref_div / detJ
