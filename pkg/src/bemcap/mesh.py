"""Closed surface triangulations, newest vertex bisection and derived meshes.

A triangle ``(v0, v1, v2)`` is stored counter-clockwise seen from outside, and
its reference edge is ``(v0, v1)``. Bisection of the reference edge at the
midpoint ``m`` produces the sons ``(v2, v0, m)`` and ``(v1, v2, m)``, so the
newest vertex of a son is always its last vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np


class MeshError(ValueError):
    """Raised when a triangulation violates a structural invariant.

    ``triangle`` is the index of the offending triangle when there is one.
    """

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


def edge_table(triangles):
    """Unique undirected edges and the edge ids of each triangle.

    Returns
    -------
    edges : ndarray, shape (E, 2)
        Sorted vertex pairs in lexicographic order.
    tri_edges : ndarray, shape (N, 3)
        Column ``k`` holds the id of the edge ``(v_k, v_{k+1})``; column 0 is
        the reference edge.
    """
    tris = np.asarray(triangles, dtype=np.int64)
    pairs = np.stack([tris, np.roll(tris, -1, axis=1)], axis=2).reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def triangle_areas(vertices, triangles):
    p = np.asarray(vertices)[np.asarray(triangles)]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def check_triangulation(vertices, triangles, closed=True):
    """Raise :class:`MeshError` unless the surface is closed, oriented and non-degenerate."""
    vertices = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError("vertices must have shape (n, 3)")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must have shape (N, 3)")
    if len(tris) == 0:
        raise MeshError("mesh has no triangles")
    missing = np.flatnonzero((tris < 0).any(axis=1) | (tris >= len(vertices)).any(axis=1))
    if missing.size:
        raise MeshError(f"triangle {missing[0]} references a missing vertex", triangle=int(missing[0]))
    for k, t in enumerate(tris):
        if len(set(t.tolist())) != 3:
            raise MeshError(f"triangle {k} repeats a vertex", triangle=k)
    areas = triangle_areas(vertices, tris)
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise MeshError(f"triangle {bad[0]} is degenerate", triangle=int(bad[0]))
    directed = {}
    for k, t in enumerate(tris.tolist()):
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            if (a, b) in directed:
                raise MeshError(
                    f"edge ({a}, {b}) traversed in the same direction by triangles "
                    f"{directed[(a, b)]} and {k}: inconsistent orientation or non-manifold edge", triangle=k)
            directed[(a, b)] = k
    if closed:
        for (a, b), k in directed.items():
            if (b, a) not in directed:
                raise MeshError(f"edge ({a}, {b}) of triangle {k} has no neighbour: surface is open", triangle=k)


@dataclass(frozen=True)
class Triangulation:
    """Conforming triangulation of a closed surface.

    Attributes
    ----------
    vertices : ndarray, shape (n, 3)
    triangles : ndarray, shape (N, 3)
        Vertex indices; the first two form the reference edge.
    generation : int
        Number of refinement steps applied since the initial mesh.
    parent : ndarray or None
        For refined meshes, the index of each triangle's ancestor in the
        previous mesh.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    generation: int = 0
    parent: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def __len__(self):
        return len(self.triangles)

    def corners(self):
        """Corner coordinates, shape (N, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self):
        return triangle_areas(self.vertices, self.triangles)

    def normals(self):
        p = self.corners()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def validate(self, closed=True):
        check_triangulation(self.vertices, self.triangles, closed=closed)
        return self


def longest_edge_first(vertices, triangles):
    """Rotate each triangle so its longest edge becomes the reference edge.

    Ties go to the edge whose opposite vertex has the smallest index. The
    rotation is cyclic, so orientation is kept.
    """
    v = np.asarray(vertices, dtype=float)
    out = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    for k, t in enumerate(out):
        best = None
        for s in range(3):
            a, b, c = t[s], t[(s + 1) % 3], t[(s + 2) % 3]
            # rounded so that edges equal in exact arithmetic tie
            length = round(float(np.linalg.norm(v[a] - v[b])), 12)
            key = (-length, c)
            if best is None or key < best[0]:
                best = (key, s)
        out[k] = np.roll(t, -best[1])
    return out


def initial_mesh(vertices, triangles, closed=True):
    """Validated :class:`Triangulation` with longest-edge reference edges."""
    check_triangulation(vertices, triangles, closed=closed)
    tris = longest_edge_first(vertices, triangles)
    return Triangulation(vertices, tris, 0)


# --------------------------------------------------------------------------- geometry

def voxel_surface(voxels):
    """Boundary of a union of unit voxels, two triangles per exposed unit face.

    Each unit square is split along the diagonal through its lexicographically
    smallest corner.
    """
    occupied = {tuple(int(c) for c in v) for v in voxels}
    index = {}
    verts = []
    tris = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for cell in sorted(occupied):
        for axis, side in product(range(3), (0, 1)):
            nb = list(cell)
            nb[axis] += 1 if side else -1
            if tuple(nb) in occupied:
                continue
            u, w = [a for a in range(3) if a != axis]
            base = list(cell)
            base[axis] += side
            quad = []
            for du, dw in ((0, 0), (1, 0), (1, 1), (0, 1)):
                p = list(base)
                p[u] += du
                p[w] += dw
                quad.append(tuple(p))
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            e1 = np.subtract(quad[1], quad[0])
            e2 = np.subtract(quad[2], quad[0])
            if np.dot(np.cross(e1, e2), normal) < 0:
                quad = quad[::-1]
            s = min(range(4), key=lambda i: quad[i])
            q = [vid(quad[(s + i) % 4]) for i in range(4)]
            tris.append((q[0], q[1], q[2]))
            tris.append((q[0], q[2], q[3]))
    return np.array(verts, dtype=float), np.array(tris, dtype=np.int64)


# Unit cube as an extruded square: bottom and top split along the diagonal
# (0,0)-(1,1); each side face split from the end of that diagonal it contains.
_CUBE_VERTICES = np.array(list(product((0.0, 1.0), repeat=3)))  # lexicographic
_CUBE_EXTRUDED = np.array([
    (0, 6, 4), (0, 2, 6),      # z = 0
    (1, 5, 7), (1, 7, 3),      # z = 1
    (0, 3, 2), (0, 1, 3),      # x = 0
    (6, 5, 4), (6, 7, 5),      # x = 1
    (0, 4, 5), (0, 5, 1),      # y = 0
    (6, 2, 3), (6, 3, 7),      # y = 1
])


def cube(split: str = "extruded"):
    """Unit cube ``(0, 1)^3`` with 12 triangles.

    Parameters
    ----------
    split : {"extruded", "lexicographic"}
        Face diagonals of an extruded square, or on every face the diagonal
        through the lexicographically smallest corner.
    """
    if split == "extruded":
        return initial_mesh(_CUBE_VERTICES, _CUBE_EXTRUDED)
    if split == "lexicographic":
        v, t = voxel_surface([(0, 0, 0)])
        return initial_mesh(v, t)
    raise MeshError(f"unknown cube split {split!r}")


def fichera():
    """``[-1, 1]^3`` without the octant ``[0, 1]^3``, 48 triangles."""
    cells = [c for c in product((-1, 0), repeat=3) if c != (0, 0, 0)]
    v, t = voxel_surface(cells)
    return initial_mesh(v, t)


@dataclass(frozen=True)
class StarParams:
    points: int = 3
    outer: float = 1.0
    inner: float = 0.3
    half_thickness: float = 0.25

    def check(self):
        if self.points < 3:
            raise MeshError(f"star needs at least 3 points, got {self.points}")
        if not 0.0 < self.inner < self.outer:
            raise MeshError(f"star radii must satisfy 0 < r < R, got r={self.inner}, R={self.outer}")
        if self.half_thickness <= 0.0:
            raise MeshError(f"star half thickness must be positive, got {self.half_thickness}")


def star(params: StarParams | None = None):
    """Prism over a ``2K``-gon star, caps fanned from their centres (``8K`` triangles)."""
    p = params or StarParams()
    p.check()
    n = 2 * p.points
    ang = 2.0 * math.pi * np.arange(n) / n
    rad = np.where(np.arange(n) % 2 == 0, p.outer, p.inner)
    ring = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    t = p.half_thickness
    verts = np.vstack([
        np.column_stack([ring, np.full(n, -t)]),
        np.column_stack([ring, np.full(n, t)]),
        [[0.0, 0.0, -t], [0.0, 0.0, t]],
    ])
    cb, ct = 2 * n, 2 * n + 1
    tris = []
    for k in range(n):
        k1 = (k + 1) % n
        b0, b1, t0, t1 = k, k1, n + k, n + k1
        tris += [(b0, b1, t1), (b0, t1, t0), (ct, t0, t1), (cb, b1, b0)]
    return initial_mesh(verts, np.array(tris))


def generate_geometry(kind: str, params: StarParams | None = None) -> Triangulation:
    """Initial mesh for ``"cube"``, ``"fichera"`` or ``"star"``."""
    if kind == "cube":
        return cube()
    if kind == "fichera":
        return fichera()
    if kind == "star":
        return star(params)
    raise MeshError(f"unknown geometry {kind!r}")


# --------------------------------------------------------------------------- refinement

def _closure(tri_edges, marked_edges):
    while True:
        hit = marked_edges[tri_edges].any(axis=1)
        need = hit & ~marked_edges[tri_edges[:, 0]]
        if not need.any():
            return marked_edges
        marked_edges[tri_edges[need, 0]] = True


def refine_nvb(mesh: Triangulation, marked, edges: str = "all") -> Triangulation:
    """Coarsest conforming NVB refinement bisecting every marked triangle.

    Parameters
    ----------
    mesh : Triangulation
    marked : iterable of int
        Triangle indices.
    edges : {"all", "reference"}
        Which edges of a marked triangle are flagged before the closure:
        all three (a marked triangle gets 4 sons) or only its reference edge
        (at least 2 sons).

    Returns
    -------
    Triangulation
        Refined mesh; sons replace their parent in place, in the order the
        recursive bisection produces them. New vertices are appended in edge
        order.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        return Triangulation(mesh.vertices, mesh.triangles, mesh.generation,
                             np.arange(len(mesh)))
    if marked.min() < 0 or marked.max() >= len(mesh):
        raise IndexError("marked triangle index out of range")
    if edges not in ("all", "reference"):
        raise ValueError(f"edges must be 'all' or 'reference', got {edges!r}")
    tris = mesh.triangles
    table, tri_edges = edge_table(tris)
    flag = np.zeros(len(table), dtype=bool)
    if edges == "all":
        flag[tri_edges[marked].ravel()] = True
    else:
        flag[tri_edges[marked, 0]] = True
    flag = _closure(tri_edges, flag)

    split = np.flatnonzero(flag)
    new_ids = mesh.num_vertices + np.arange(split.size)
    new_verts = 0.5 * (mesh.vertices[table[split, 0]] + mesh.vertices[table[split, 1]])
    vertices = np.vstack([mesh.vertices, new_verts])

    lookup = {}
    for (a, b), m in zip(table[split].tolist(), new_ids.tolist()):
        lookup[(a, b)] = lookup[(b, a)] = m

    out = []
    parent = []

    def bisect(a, b, c, k):
        m = lookup.get((a, b))
        if m is None:
            out.append((a, b, c))
            parent.append(k)
            return
        bisect(c, a, m, k)
        bisect(b, c, m, k)

    for k, t in enumerate(tris.tolist()):
        bisect(*t, k)
    return Triangulation(vertices, np.array(out, dtype=np.int64), mesh.generation + 1,
                         np.array(parent, dtype=np.int64))


def refine_uniform(mesh: Triangulation) -> Triangulation:
    """Bisect every edge once: each triangle gets 4 sons."""
    return refine_nvb(mesh, range(len(mesh)), edges="all")


# --------------------------------------------------------------------------- derived meshes

# Child (a, b, owner-slot) patterns inside a parent (v0, v1, v2) with edge
# midpoints m01, m12, m20 and centroid c; every child is (a, b, c).
_CHILD_SLOTS = (("v0", "m01"), ("m01", "v1"), ("v1", "m12"),
                ("m12", "v2"), ("v2", "m20"), ("m20", "v0"))
_CHILD_OWNER = (0, 1, 1, 2, 2, 0)


@dataclass(frozen=True)
class BaryMesh:
    """Six-fold barycentric refinement.

    Vertices are numbered primal vertices first, then edge midpoints (in
    :func:`edge_table` order), then centroids. Children of primal triangle
    ``k`` occupy rows ``6k .. 6k + 5``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    parent_primal: np.ndarray
    owner_vertex: np.ndarray
    owner_slot: np.ndarray
    num_primal_vertices: int

    def corners(self):
        return self.vertices[self.triangles]

    def areas(self):
        return triangle_areas(self.vertices, self.triangles)

    def __len__(self):
        return len(self.triangles)


def build_bary(mesh: Triangulation) -> BaryMesh:
    tris = mesh.triangles
    n_v = mesh.num_vertices
    edges, tri_edges = edge_table(tris)
    n_e = len(edges)
    n_t = len(tris)
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    cents = mesh.corners().mean(axis=1)
    vertices = np.vstack([mesh.vertices, mids, cents])
    label = {
        "v0": tris[:, 0], "v1": tris[:, 1], "v2": tris[:, 2],
        "m01": n_v + tri_edges[:, 0], "m12": n_v + tri_edges[:, 1], "m20": n_v + tri_edges[:, 2],
    }
    c = n_v + n_e + np.arange(n_t)
    children = np.stack([np.column_stack([label[a], label[b], c]) for a, b in _CHILD_SLOTS], axis=1)
    slot = np.tile(np.array(_CHILD_OWNER), n_t)
    parent = np.repeat(np.arange(n_t), 6)
    owner = tris[parent, slot]
    return BaryMesh(vertices, children.reshape(-1, 3), parent, owner, slot, n_v)


@dataclass(frozen=True)
class DualMesh:
    """Dual cells, one per primal vertex, as lists of bary triangle indices."""

    cells: list = field(repr=False)
    areas: np.ndarray

    def __len__(self):
        return len(self.cells)


def build_dual(mesh: Triangulation, bary: BaryMesh) -> DualMesh:
    order = np.argsort(bary.owner_vertex, kind="stable")
    counts = np.bincount(bary.owner_vertex, minlength=mesh.num_vertices)
    cells = np.split(order, np.cumsum(counts)[:-1])
    areas = np.bincount(bary.owner_vertex, weights=bary.areas(), minlength=mesh.num_vertices)
    return DualMesh(cells, areas)


@dataclass(frozen=True)
class MeshMetrics:
    diam: np.ndarray
    area: np.ndarray
    min_angle: np.ndarray
    circumradius: np.ndarray


def mesh_metrics(mesh) -> MeshMetrics:
    """Longest edge, area, smallest interior angle and circumradius of every triangle."""
    p = mesh.vertices[mesh.triangles] if hasattr(mesh, "triangles") else np.asarray(mesh)
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    area = 0.5 * np.linalg.norm(np.cross(e[:, 0], -e[:, 2]), axis=1)
    angles = np.empty_like(lengths)
    for k in range(3):
        u = -e[:, k - 1]
        w = e[:, k]
        cosang = np.einsum("ij,ij->i", u, w) / (lengths[:, k - 1] * lengths[:, k])
        angles[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    circum = lengths.prod(axis=1) / (4.0 * area)
    return MeshMetrics(lengths.max(axis=1), area, angles.min(axis=1), circum)


def vertex_components(mesh: Triangulation) -> np.ndarray:
    """Connected-component label of every vertex (labels ``0 .. c - 1``)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    t = mesh.triangles
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    n = mesh.num_vertices
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels
