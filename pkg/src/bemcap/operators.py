"""Single-layer Galerkin matrices and the sparse maps of the dual-mesh scheme.

The single-layer operator is discretised on the barycentric refinement. The
dual-mesh matrix and the regularised hypersingular matrix are Galerkin
products ``S^T V^bary S`` with sparse maps ``S``. For large meshes these
products are accumulated from row blocks of ``V^bary`` so that the full
``6N x 6N`` matrix is never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .mesh import BaryMesh, DualMesh, Triangulation, build_bary, build_dual, vertex_components
from .quadrature import (FAR_DEGREE, FAR_RATIO, SINGULAR_ORDER, near_rule_degree, VERY_FAR_DEGREE,
                         VERY_FAR_RATIO, PairKind, QuadratureError, singular_rule, triangle_gauss_rule)

FOUR_PI = 4.0 * math.pi
BLOCK_BYTES = 256 * 2**20


@dataclass(frozen=True)
class QuadratureOptions:
    """Rule choices for single-layer assembly.

    Attributes
    ----------
    order : int
        Gauss points per dimension for touching pairs.
    far_ratio : float
        Centroid distance over the larger diameter above which the far rule
        is used for disjoint pairs.
    far_degree, near_degree : int
        Triangle rule degrees for far and near disjoint pairs. ``near_degree``
        defaults to ``near_rule_degree(order)``.
    very_far_ratio, very_far_degree :
        A cheaper rule for pairs even further apart.
    """

    order: int = SINGULAR_ORDER
    far_ratio: float = FAR_RATIO
    far_degree: int = FAR_DEGREE
    near_degree: int | None = None
    very_far_ratio: float = VERY_FAR_RATIO
    very_far_degree: int = VERY_FAR_DEGREE

    def __post_init__(self):
        if self.order < 1:
            raise QuadratureError(f"order must be positive, got {self.order}")
        if self.near_degree is None:
            object.__setattr__(self, "near_degree", near_rule_degree(self.order))


def _as_mesh_arrays(triangles):
    """``(vertices, triangles)`` from a mesh object or a ``(n, 3, 3)`` corner array."""
    if hasattr(triangles, "vertices") and hasattr(triangles, "triangles"):
        return np.asarray(triangles.vertices, dtype=float), np.asarray(triangles.triangles, dtype=np.int64)
    corners = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
    verts, inverse = np.unique(corners.reshape(-1, 3), axis=0, return_inverse=True)
    return verts, inverse.reshape(-1, 3).astype(np.int64)


def touching_pairs(triangles, num_vertices):
    """Pairs ``i <= j`` of triangles sharing at least one vertex."""
    n = len(triangles)
    rows = np.repeat(np.arange(n), 3)
    inc = sp.csr_matrix((np.ones(3 * n), (rows, triangles.ravel())), shape=(n, num_vertices))
    shared = sp.triu(inc @ inc.T).tocoo()
    order = np.lexsort((shared.col, shared.row))
    return shared.row[order].astype(np.int64), shared.col[order].astype(np.int64)


class _Prepared:
    """Per-triangle quadrature data shared by all assembly routines."""

    def __init__(self, vertices, triangles, opts: QuadratureOptions):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.opts = opts
        corners = self.vertices[self.triangles]
        e = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 1],
                      corners[:, 0] - corners[:, 2]], axis=1)
        self.area = 0.5 * np.linalg.norm(np.cross(e[:, 0], -e[:, 2]), axis=1)
        if np.any(self.area <= 0.0):
            raise QuadratureError(f"degenerate triangle {int(np.argmin(self.area))}")
        self.diam = np.linalg.norm(e, axis=2).max(axis=1)
        self.centers = corners.mean(axis=1)
        vf = triangle_gauss_rule(opts.very_far_degree)
        self.p_vf = np.einsum("qa,nad->nqd", vf.barycentric, corners)
        self.w_vf = self.area[:, None] * vf.weights[None, :]
        lo = triangle_gauss_rule(opts.far_degree)
        hi = triangle_gauss_rule(opts.near_degree)
        self.l_lo = np.ascontiguousarray(lo.barycentric)
        self.l_hi = np.ascontiguousarray(hi.barycentric)
        self.p_lo = np.einsum("qa,nad->nqd", self.l_lo, corners)
        self.p_hi = np.einsum("qa,nad->nqd", self.l_hi, corners)
        self.w_lo = self.area[:, None] * lo.weights[None, :]
        self.w_hi = self.area[:, None] * hi.weights[None, :]
        self.pi, self.pj = touching_pairs(self.triangles, len(self.vertices))
        rules = [singular_rule(k, opts.order)
                 for k in (PairKind.COMMON_VERTEX, PairKind.COMMON_EDGE, PairKind.IDENTICAL)]
        self.rx = np.ascontiguousarray(np.concatenate([r.x for r in rules]))
        self.ry = np.ascontiguousarray(np.concatenate([r.y for r in rules]))
        self.rw = np.ascontiguousarray(np.concatenate([r.weights for r in rules]))
        self.offsets = np.concatenate([[0], np.cumsum([len(r.weights) for r in rules])]).astype(np.int64)

    def __len__(self):
        return len(self.triangles)

    def singular(self, want_p1=False):
        vals = np.empty(self.pi.size)
        blocks = np.zeros((self.pi.size, 3, 3)) if want_p1 else np.zeros((1, 3, 3))
        _kernels.singular_pairs(self.vertices, self.triangles, self.pi, self.pj, self.rx, self.ry,
                                self.rw, self.offsets, vals, blocks, want_p1)
        return vals, blocks

    def row_blocks(self, block_rows=None):
        """Yield ``(r0, r1, B)`` with ``B = V[r0:r1, r0:]``."""
        n = len(self)
        if block_rows is None:
            block_rows = max(1, min(n, BLOCK_BYTES // (8 * n)))
        vals, _ = self.singular()
        starts = np.searchsorted(self.pi, np.arange(0, n + block_rows, block_rows))
        for b, r0 in enumerate(range(0, n, block_rows)):
            r1 = min(n, r0 + block_rows)
            out = np.empty((r1 - r0, n - r0))
            _kernels.fill_regular_p0(out, r0, r1, r0, self.triangles, self.centers, self.diam,
                                     self.p_vf, self.w_vf, self.p_lo, self.w_lo, self.p_hi, self.w_hi,
                                     self.opts.far_ratio, self.opts.very_far_ratio)
            sl = slice(starts[b], starts[b + 1])
            i, j, v = self.pi[sl], self.pj[sl], vals[sl]
            out[i - r0, j - r0] = v
            low = j < r1
            out[j[low] - r0, i[low] - r0] = v[low]
            yield r0, r1, out


def assemble_single_layer(triangles, options: QuadratureOptions | None = None) -> np.ndarray:
    """Dense Galerkin matrix of the single-layer operator for P0 functions.

    Parameters
    ----------
    triangles : mesh or array_like, shape (n, 3, 3)
        Either an object with ``vertices`` and ``triangles`` or the corner
        coordinates; in the latter case shared corners are found by exact
        coordinate equality.
    options : QuadratureOptions, optional

    Returns
    -------
    ndarray, shape (n, n)
        ``V[i, j] = (1/4 pi) int_{T_i} int_{T_j} |x - y|^-1``.
    """
    verts, tris = _as_mesh_arrays(triangles)
    prep = _Prepared(verts, tris, options or QuadratureOptions())
    n = len(prep)
    out = np.empty((n, n))
    for r0, r1, blk in prep.row_blocks():
        out[r0:r1, r0:] = blk
        out[r1:, r0:r1] = blk[:, r1 - r0:].T
    return out


def galerkin_products(triangles, maps, options: QuadratureOptions | None = None, block_rows=None):
    """``[S^T V S for S in maps]`` without forming ``V`` in full.

    Each map is a sparse matrix with as many rows as there are triangles.
    """
    verts, tris = _as_mesh_arrays(triangles)
    prep = _Prepared(verts, tris, options or QuadratureOptions())
    maps = [sp.csr_matrix(S) for S in maps]
    acc = [np.zeros((S.shape[1], S.shape[1])) for S in maps]
    for r0, r1, blk in prep.row_blocks(block_rows):
        w = r1 - r0
        for S, A in zip(maps, acc):
            Sb = S[r0:r1]
            Sr = S[r1:]
            diag = blk[:, :w]
            A += (Sb.T @ (Sb.T @ diag.T).T)
            if Sr.shape[0]:
                # Columns right of the block: X = O S_r, contributes X and X^T
                off = Sb.T @ (Sr.T @ blk[:, w:].T).T
                A += off
                A += off.T
    for A in acc:
        A += A.T
        A *= 0.5
    return acc


def assemble_p1_p0(triangles, options: QuadratureOptions | None = None, full: bool = False) -> np.ndarray:
    """Single-layer matrix with discontinuous P1 tests.

    Parameters
    ----------
    full : bool
        If True return the ``(3n, 3n)`` P1-P1 matrix, otherwise the
        ``(3n, n)`` matrix ``V^{P1} E`` of P1 tests against P0 trials.
        Row ``3k + t`` belongs to the hat of local vertex ``t`` of triangle ``k``.
    """
    verts, tris = _as_mesh_arrays(triangles)
    prep = _Prepared(verts, tris, options or QuadratureOptions())
    n = len(prep)
    out = np.zeros((3 * n, 3 * n) if full else (3 * n, n))
    _kernels.fill_regular_p1(out, not full, prep.triangles, prep.centers, prep.diam,
                             prep.p_lo, prep.w_lo, prep.l_lo, prep.p_hi, prep.w_hi, prep.l_hi,
                             prep.opts.far_ratio)
    _, blocks = prep.singular(want_p1=True)
    _kernels.store_p1_pairs(out, not full, prep.pi, prep.pj, blocks)
    return out


# --------------------------------------------------------------------------- sparse maps

def dual_projection(bary: BaryMesh) -> sp.csr_matrix:
    """``P[i, owner(i)] = 1``: dual P0 coefficients to bary P0 coefficients."""
    n = len(bary)
    return sp.csr_matrix((np.ones(n), (np.arange(n), bary.owner_vertex)),
                         shape=(n, bary.num_primal_vertices))


def primal_projection(bary: BaryMesh, num_triangles: int | None = None) -> sp.csr_matrix:
    """``R[i, parent(i)] = 1``: primal P0 coefficients to bary P0 coefficients."""
    n = len(bary)
    m = int(bary.parent_primal.max()) + 1 if num_triangles is None else num_triangles
    return sp.csr_matrix((np.ones(n), (np.arange(n), bary.parent_primal)), shape=(n, m))


def p1_embedding(mesh: Triangulation) -> sp.csr_matrix:
    """``E[3k + t, k] = 1``: primal P0 into discontinuous P1."""
    n = len(mesh)
    return sp.csr_matrix((np.ones(3 * n), (np.arange(3 * n), np.repeat(np.arange(n), 3))),
                         shape=(3 * n, n))


def hat_gradients(mesh: Triangulation) -> np.ndarray:
    """Surface gradients of the three local hat functions, shape (N, 3, 3).

    ``g[k, t]`` is the gradient on triangle ``k`` of the hat of its local
    vertex ``t``.
    """
    p = mesh.corners()
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    twice_area = np.linalg.norm(cross, axis=1)
    n = cross / twice_area[:, None]
    g = np.empty_like(p)
    for t in range(3):
        opp = p[:, (t + 2) % 3] - p[:, (t + 1) % 3]
        g[:, t] = np.cross(n, opp) / twice_area[:, None]
    return g


def curl_maps(mesh: Triangulation, bary: BaryMesh):
    """``[Q_1, Q_2, Q_3]``: S1 coefficients to Cartesian components of the surface curl.

    Row ``i`` is the bary triangle, where ``nu x grad phi_j`` is constant.
    """
    g = hat_gradients(mesh)
    normals = mesh.normals()
    curls = np.cross(normals[:, None, :], g)  # (N, 3 local vertices, 3 components)
    parent = bary.parent_primal
    rows = np.repeat(np.arange(len(bary)), 3)
    cols = mesh.triangles[parent].ravel()
    shape = (len(bary), mesh.num_vertices)
    return [sp.csr_matrix((curls[parent, :, m].ravel(), (rows, cols)), shape=shape) for m in range(3)]


# Barycentric coordinates (w.r.t. the parent) of the corners of each bary child.
_HALF = 0.5
_THIRD = 1.0 / 3.0
_CHILD_BARY = np.array([
    [[1, 0, 0], [_HALF, _HALF, 0], [_THIRD] * 3],
    [[_HALF, _HALF, 0], [0, 1, 0], [_THIRD] * 3],
    [[0, 1, 0], [0, _HALF, _HALF], [_THIRD] * 3],
    [[0, _HALF, _HALF], [0, 0, 1], [_THIRD] * 3],
    [[0, 0, 1], [_HALF, 0, _HALF], [_THIRD] * 3],
    [[_HALF, 0, _HALF], [1, 0, 0], [_THIRD] * 3],
], dtype=float)


def mass_matrix(mesh: Triangulation, bary: BaryMesh, dual: DualMesh | None = None) -> sp.csc_matrix:
    """``M[j, i] = int_{T_i^dual} phi_j``, exact per bary triangle."""
    means = _CHILD_BARY.mean(axis=1)  # (6, 3): mean of lambda_t over each child
    area = bary.areas()
    parent = bary.parent_primal
    child = np.arange(len(bary)) % 6
    vals = area[:, None] * means[child]
    rows = mesh.triangles[parent].ravel()
    cols = np.repeat(bary.owner_vertex, 3)
    m = mesh.num_vertices
    M = sp.csc_matrix((vals.ravel(), (rows, cols)), shape=(m, m))
    M.sum_duplicates()
    return M


def stabilization_vector(mesh: Triangulation) -> np.ndarray:
    """``a[j] = int phi_j``: a third of the area of the triangles around vertex ``j``."""
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas() / 3.0, 3),
                       minlength=mesh.num_vertices)


def rhs_moments(dual: DualMesh, bary: BaryMesh | None = None, f=None) -> np.ndarray:
    """``f^dual[i] = <f, chi_i^dual>``; exact cell areas for ``f = 1``.

    ``f`` is a callable on points of shape (q, 3), integrated with a degree-4
    rule per bary triangle.
    """
    if f is None:
        return np.asarray(dual.areas, dtype=float).copy()
    if bary is None:
        raise ValueError("a general right-hand side needs the bary mesh")
    rule = triangle_gauss_rule(4)
    pts = np.einsum("qa,nad->nqd", rule.barycentric, bary.corners())
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(len(bary), -1)
    per = bary.areas() * (vals @ rule.weights)
    return np.bincount(bary.owner_vertex, weights=per, minlength=len(dual))


def primal_moments(mesh: Triangulation) -> np.ndarray:
    """``<1, chi_k>`` for primal P0."""
    return mesh.areas()


def p1_moments(mesh: Triangulation) -> np.ndarray:
    """``<1, p_{k,t}>`` for the discontinuous P1 basis: a third of the area each."""
    return np.repeat(mesh.areas() / 3.0, 3)


def refinement_embedding(fine: Triangulation, num_coarse: int) -> sp.csr_matrix:
    """Primal P0 on the coarse mesh into primal P0 on its NVB refinement."""
    if fine.parent is None:
        raise ValueError("mesh carries no parent map")
    n = len(fine)
    return sp.csr_matrix((np.ones(n), (np.arange(n), fine.parent)), shape=(n, num_coarse))


# --------------------------------------------------------------------------- capacity system

@dataclass
class CapacitySystem:
    """Everything the dual-mesh capacity solve needs on one mesh.

    ``Vdual = P^T V^bary P`` and ``Dcurl = sum_m Q_m^T V^bary Q_m`` are held as
    dense ``M x M`` matrices. With ``storage="bary"`` the bary matrix is kept as
    well and the maps are applied literally.
    """

    mesh: Triangulation
    bary: BaryMesh
    dual: DualMesh
    P: sp.csr_matrix
    Q: list
    M: sp.csc_matrix
    a: np.ndarray
    components: np.ndarray
    f: np.ndarray
    Vdual: np.ndarray
    Dcurl: np.ndarray
    Vbary: np.ndarray | None = None
    _lu: object = field(default=None, repr=False)
    _luT: object = field(default=None, repr=False)

    def __post_init__(self):
        try:
            self._lu = splu(sp.csc_matrix(self.M))
            self._luT = splu(sp.csc_matrix(self.M.T))
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular mass matrix: {exc}") from exc

    @property
    def size(self):
        return self.Vdual.shape[0]

    def solve_M(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    def solve_MT(self, b):
        return self._luT.solve(np.asarray(b, dtype=float))

    def apply_Vdual(self, x):
        if self.Vbary is not None:
            return self.P.T @ (self.Vbary @ (self.P @ x))
        return self.Vdual @ x

    def stabilization(self, x):
        """``sum_c a_c (a_c . x)`` with one rank-one term per connected component."""
        x = np.asarray(x, dtype=float)
        ncomp = int(self.components.max()) + 1
        if x.ndim == 1:
            s = np.bincount(self.components, weights=self.a * x, minlength=ncomp)
            return self.a * s[self.components]
        s = np.zeros((ncomp, x.shape[1]))
        np.add.at(s, self.components, self.a[:, None] * x)
        return self.a[:, None] * s[self.components]

    def apply_Dreg(self, x):
        if self.Vbary is not None:
            d = sum(Q.T @ (self.Vbary @ (Q @ x)) for Q in self.Q)
        else:
            d = self.Dcurl @ x
        return d + self.stabilization(x)

    def apply_preconditioned(self, xt):
        x = self.solve_M(self.apply_Dreg(xt))
        return self.solve_MT(self.apply_Vdual(x))

    def Dreg_matrix(self):
        return self.Dcurl + self.stabilization(np.eye(self.size))


def build_capacity_system(mesh: Triangulation, bary: BaryMesh | None = None, dual: DualMesh | None = None,
                          options: QuadratureOptions | None = None, storage: str = "galerkin",
                          block_rows=None) -> CapacitySystem:
    """Assemble the dual-mesh capacity system.

    Parameters
    ----------
    storage : {"galerkin", "bary"}
        ``"bary"`` keeps the dense ``6N x 6N`` single-layer matrix; ``"galerkin"``
        only keeps its ``M x M`` Galerkin products.
    """
    if storage not in ("galerkin", "bary"):
        raise ValueError(f"unknown storage {storage!r}")
    bary = bary or build_bary(mesh)
    dual = dual or build_dual(mesh, bary)
    options = options or QuadratureOptions()
    P = dual_projection(bary)
    Q = curl_maps(mesh, bary)
    Vbary = None
    if storage == "bary":
        Vbary = assemble_single_layer(bary, options)
        Vdual = np.asarray(P.T @ (P.T @ Vbary).T)
        Dcurl = sum(np.asarray(S.T @ (S.T @ Vbary).T) for S in Q)
        Vdual = 0.5 * (Vdual + Vdual.T)
        Dcurl = 0.5 * (Dcurl + Dcurl.T)
    else:
        Vdual, D1, D2, D3 = galerkin_products(bary, [P] + Q, options, block_rows)
        Dcurl = D1 + D2 + D3
    return CapacitySystem(mesh=mesh, bary=bary, dual=dual, P=P, Q=Q, M=mass_matrix(mesh, bary, dual),
                          a=stabilization_vector(mesh), components=vertex_components(mesh),
                          f=rhs_moments(dual), Vdual=Vdual, Dcurl=Dcurl, Vbary=Vbary)


@dataclass
class PrimalSystem:
    """Primal P0 Galerkin system with the P1 data for the residual estimator."""

    mesh: Triangulation
    V_p1E: np.ndarray
    V: np.ndarray
    f: np.ndarray
    f_p1: np.ndarray
    E: sp.csr_matrix


def build_primal_system(mesh: Triangulation, options: QuadratureOptions | None = None) -> PrimalSystem:
    """``V^{P0} = E^T V^{P1} E`` from one P1-test assembly, so both share quadrature."""
    E = p1_embedding(mesh)
    VE = assemble_p1_p0(mesh, options)
    V = np.asarray(E.T @ VE)
    V = 0.5 * (V + V.T)
    return PrimalSystem(mesh, VE, V, primal_moments(mesh), p1_moments(mesh), E)
