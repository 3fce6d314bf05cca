"""Periodic triangular meshes of a rectangle (torus topology).

Triangles reference the *unwrapped* vertex list, so element geometry never
crosses the periodic seam; periodicity lives entirely in the vertex and edge
identification maps.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .elements import LOCAL_EDGES

PERIODIC_RTOL = 1e-10
GEOMETRY_TOL = 1e-14


class MeshError(ValueError):
    pass


class TopologyError(MeshError):
    pass


class GeometryError(MeshError):
    pass


class MeshParseError(MeshError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Periodic triangulation.

    Attributes
    ----------
    vertices : (nv, 2) unwrapped coordinates.
    triangles : (nt, 3) counter-clockwise vertex indices.
    vertex_class : (nv,) dense index of the identified (torus) vertex.
    periodic_vertex_map : (nv,) smallest original index in each vertex's class.
    edges : (E, 2) original vertex indices of one representative per torus
        edge, listed in the global orientation.
    tri_edges : (nt, 3) torus edge of local edge i (opposite vertex i).
    tri_edge_signs : (nt, 3) +1 when the counter-clockwise traversal of the
        local edge agrees with the global orientation, else -1.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    extent: tuple
    vertex_class: np.ndarray
    periodic_vertex_map: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_signs: np.ndarray

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_vertices(self):
        """Vertex count after periodic identification."""
        return int(self.vertex_class.max()) + 1

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    @property
    def periodic_edge_map(self):
        return self.tri_edges

    @property
    def areas(self):
        return 0.5 * self.jacobians()[1]

    @property
    def h(self):
        """Longest edge length."""
        p = self.vertices[self.triangles]
        lengths = [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in LOCAL_EDGES]
        return float(np.max(lengths))

    def jacobians(self):
        """Batched affine maps: J (nt, 2, 2), det J (nt,), J^{-T} (nt, 2, 2)."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv_t = np.empty_like(J)
        inv_t[:, 0, 0] = J[:, 1, 1]
        inv_t[:, 0, 1] = -J[:, 1, 0]
        inv_t[:, 1, 0] = -J[:, 0, 1]
        inv_t[:, 1, 1] = J[:, 0, 0]
        inv_t /= det[:, None, None]
        return J, det, inv_t

    def physical_points(self, ref_points):
        """Map reference points to every triangle: shape (nt, P, 2)."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return p[:, 0][:, None, :] + np.einsum("tij,pj->tpi", J, np.atleast_2d(ref_points))


@dataclass(frozen=True)
class AffineMap:
    origin: np.ndarray
    J: np.ndarray
    detJ: float
    inv_t: np.ndarray

    def __call__(self, ref_points):
        return self.origin + np.atleast_2d(ref_points) @ self.J.T


def affine_map(mesh: Mesh, t: int) -> AffineMap:
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range")
    return _affine_from_points(mesh.vertices[mesh.triangles[t]])


def _affine_from_points(p, tol=GEOMETRY_TOL):
    p = np.asarray(p, dtype=float)
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    det = float(np.linalg.det(J))
    scale = max(np.abs(J).max() ** 2, np.finfo(float).tiny)
    if det <= tol * scale:
        raise GeometryError(f"degenerate or inverted triangle (det J = {det:g})")
    return AffineMap(p[0].copy(), J, det, np.linalg.inv(J).T)


# -------------------------------------------------------------- identification

def _cluster(points, tol):
    """Label points that coincide within ``tol`` (dense labels, first-seen order)."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse]


def _wrap(points, extent, tol):
    out = np.array(points, dtype=float)
    for d in range(2):
        L = extent[d]
        out[:, d] = np.mod(out[:, d], L)
        out[np.abs(out[:, d] - L) < tol, d] = 0.0
    return out


def build_mesh(vertices, triangles, extent) -> Mesh:
    """Assemble topology, orient triangles counter-clockwise and validate the torus."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    Lx, Ly = map(float, extent)
    if Lx <= 0 or Ly <= 0:
        raise ValueError("domain extents must be positive")
    nv = len(vertices)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        raise TopologyError("triangle references a nonexistent vertex")
    used = np.zeros(nv, bool)
    used[triangles.ravel()] = True
    if not used.all():
        raise TopologyError(f"dangling vertex {int(np.flatnonzero(~used)[0])}")

    p = vertices[triangles]
    det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
           - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = det < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    scale = max(Lx, Ly)
    if np.any(np.abs(det) <= GEOMETRY_TOL * scale ** 2):
        raise GeometryError("degenerate triangle")

    tol = PERIODIC_RTOL * scale
    vclass = _cluster(_wrap(vertices, (Lx, Ly), tol), tol)
    rep = np.full(vclass.max() + 1, nv)
    np.minimum.at(rep, vclass, np.arange(nv))
    periodic_vertex_map = rep[vclass]

    # torus edges are identified by their wrapped midpoints
    a = triangles[:, [e[0] for e in LOCAL_EDGES]]
    b = triangles[:, [e[1] for e in LOCAL_EDGES]]
    mids = 0.5 * (vertices[a] + vertices[b]).reshape(-1, 2)
    eclass = _cluster(_wrap(mids, (Lx, Ly), tol), tol).reshape(-1, 3)
    n_edges = eclass.max() + 1
    counts = np.bincount(eclass.ravel(), minlength=n_edges)
    if np.any(counts != 2):
        raise TopologyError("edge not shared by exactly two triangles after identification")

    # global orientation: lower -> higher identified vertex; ties (an edge
    # whose ends are the same torus vertex) by lexicographically positive vector
    ca, cb = vclass[a], vclass[b]
    d = vertices[b] - vertices[a]
    positive = (d[..., 0] > tol) | ((np.abs(d[..., 0]) <= tol) & (d[..., 1] > 0))
    forward = np.where(ca != cb, ca < cb, positive)
    signs = np.where(forward, 1, -1)

    flat_e, flat_s = eclass.ravel(), signs.ravel()
    if np.any(np.bincount(flat_e, weights=flat_s, minlength=n_edges) != 0):
        raise TopologyError("an edge is traversed in the same direction by both neighbours")

    _, first = np.unique(flat_e, return_index=True)
    fa, fb, fs = a.ravel()[first], b.ravel()[first], flat_s[first]
    edges = np.column_stack([np.where(fs > 0, fa, fb), np.where(fs > 0, fb, fa)])

    mesh = Mesh(vertices, triangles, (Lx, Ly), vclass, periodic_vertex_map,
                edges, eclass, signs)
    if mesh.euler_characteristic != 0:
        raise TopologyError(f"V - E + F = {mesh.euler_characteristic}, expected 0 (torus)")
    area = float(mesh.areas.sum())
    if abs(area - Lx * Ly) > 1e-10 * Lx * Ly:
        raise TopologyError(f"triangles cover area {area}, domain area is {Lx * Ly}")
    return mesh


def make_periodic_rect_mesh(nx, ny, Lx, Ly, pattern="diagonal") -> Mesh:
    """Structured periodic mesh of ``[0, Lx] x [0, Ly]``.

    ``diagonal`` splits each cell into 2 triangles, ``crisscross`` into 4
    around a cell-centre vertex.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError("cell counts must be positive integers")
    if not (Lx > 0 and Ly > 0):
        raise ValueError("domain extents must be positive")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = [np.column_stack([X.ravel(), Y.ravel()])]
    node = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    v00 = node[:-1, :-1].ravel()
    v10 = node[1:, :-1].ravel()
    v11 = node[1:, 1:].ravel()
    v01 = node[:-1, 1:].ravel()
    if pattern == "diagonal":
        tris = np.concatenate([np.column_stack([v00, v10, v11]),
                               np.column_stack([v00, v11, v01])])
    elif pattern == "crisscross":
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        CX, CY = np.meshgrid(cx, cy, indexing="ij")
        c = (nx + 1) * (ny + 1) + np.arange(nx * ny)
        verts.append(np.column_stack([CX.ravel(), CY.ravel()]))
        tris = np.concatenate([np.column_stack([v00, v10, c]),
                               np.column_stack([v10, v11, c]),
                               np.column_stack([v11, v01, c]),
                               np.column_stack([v01, v00, c])])
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return build_mesh(np.concatenate(verts), tris, (Lx, Ly))


# ------------------------------------------------------------------ file I/O

MAGIC = "meevc-mesh 1"


def _data_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def load_mesh(path) -> Mesh:
    """Read the plain-text mesh format (see :func:`save_mesh`)."""
    lines = list(_data_lines(Path(path).read_text()))
    if not lines:
        raise MeshParseError("empty mesh file", 1)
    it = iter(lines)

    def take(count, kind, what):
        try:
            lineno, line = next(it)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file reading {what}",
                                 lines[-1][0] + 1) from None
        parts = line.split()
        if len(parts) != count:
            raise MeshParseError(f"expected {count} values for {what}", lineno)
        try:
            return [kind(x) for x in parts]
        except ValueError:
            raise MeshParseError(f"malformed {what}: {line!r}", lineno) from None

    lineno, header = next(it)
    if header != MAGIC:
        raise MeshParseError(f"expected header {MAGIC!r}", lineno)
    Lx, Ly = take(2, float, "domain extent")
    nv, nt = take(2, int, "counts")
    verts = [take(2, float, "vertex") for _ in range(nv)]
    tris = [take(3, int, "triangle") for _ in range(nt)]
    rest = next(it, None)
    if rest is not None:
        raise MeshParseError("trailing data after triangles", rest[0])
    return build_mesh(np.array(verts, dtype=float).reshape(-1, 2), tris, (Lx, Ly))


def save_mesh(mesh: Mesh, path):
    lines = [MAGIC, f"{mesh.extent[0]!r} {mesh.extent[1]!r}",
             f"{len(mesh.vertices)} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += ["{} {} {}".format(*t) for t in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
