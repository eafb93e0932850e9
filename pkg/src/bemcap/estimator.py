"""A posteriori error indicators and Doerfler marking."""

from __future__ import annotations

import numpy as np

from .mesh import BaryMesh, Triangulation, mesh_metrics
from .operators import _CHILD_BARY, hat_gradients


def _affine_square_integral(area, g):
    """Exact integral of an affine function squared; ``g`` holds corner values (n, 3)."""
    s = (g ** 2).sum(axis=1) + g[:, 0] * g[:, 1] + g[:, 1] * g[:, 2] + g[:, 2] * g[:, 0]
    return area * s / 6.0


ZZ_WEIGHTS = ("circumradius", "diam")


def mesh_size(mesh: Triangulation, weight: str = "circumradius") -> np.ndarray:
    """Element size used to weight the ZZ indicators."""
    met = mesh_metrics(mesh)
    if weight == "circumradius":
        return met.circumradius
    if weight == "diam":
        return met.diam
    raise ValueError(f"unknown mesh-size weight {weight!r}; expected one of {ZZ_WEIGHTS}")


def zz_indicators(x, mesh: Triangulation, bary: BaryMesh, dual=None, weight: str = "circumradius") -> np.ndarray:
    """Squared indicators ``h(T) * ||Phi - I Phi||^2_{L2(T)}`` per primal triangle.

    Parameters
    ----------
    x : array_like, shape (M,)
        Dual P0 coefficients, one per primal vertex. ``I Phi`` is the
        continuous piecewise affine function with the same nodal values.
    weight : {"circumradius", "diam"}
        Element size ``h(T)``. On right triangles the circumradius is half
        the diameter.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (mesh.num_vertices,):
        raise ValueError(f"expected {mesh.num_vertices} dual coefficients, got shape {x.shape}")
    parent = bary.parent_primal
    child = np.arange(len(bary)) % 6
    nodal = x[mesh.triangles[parent]]                   # (6N, 3) parent nodal values
    interp = np.einsum("nca,na->nc", _CHILD_BARY[child], nodal)
    g = x[bary.owner_vertex][:, None] - interp
    per_child = _affine_square_integral(bary.areas(), g)
    l2 = np.bincount(parent, weights=per_child, minlength=len(mesh))
    return mesh_size(mesh, weight) * l2


def local_p1_mass(area):
    """Element P1 mass matrices, shape (n, 3, 3)."""
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return np.asarray(area)[:, None, None] * base


def residual_projection(residual_moments, mesh: Triangulation) -> np.ndarray:
    """Nodal values ``(N, 3)`` of the element-wise L2 projection onto P1.

    ``residual_moments[3k + t]`` is the residual tested with the hat of local
    vertex ``t`` of triangle ``k``.
    """
    r = np.asarray(residual_moments, dtype=float).reshape(-1, 3)
    area = mesh.areas()
    if np.any(area <= 0.0):
        raise np.linalg.LinAlgError("singular local mass matrix (degenerate triangle)")
    return np.linalg.solve(local_p1_mass(area), r[:, :, None])[:, :, 0]


def residual_indicators(x, mesh: Triangulation, V_p1E, f_p1) -> np.ndarray:
    """Squared weighted-residual indicators ``diam(T) * area(T) * |grad p_T|^2``.

    Parameters
    ----------
    x : array_like, shape (N,)
        Primal P0 coefficients.
    V_p1E : ndarray, shape (3N, N)
        Single-layer matrix with P1 tests and P0 trials.
    f_p1 : array_like, shape (3N,)
        Right-hand side tested with the P1 basis.
    """
    r = np.asarray(f_p1, dtype=float) - V_p1E @ np.asarray(x, dtype=float)
    p = residual_projection(r, mesh)
    grad = np.einsum("nt,ntd->nd", p, hat_gradients(mesh))
    met = mesh_metrics(mesh)
    return met.diam * met.area * (grad ** 2).sum(axis=1)


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Smallest set whose squared indicators reach ``theta`` times the total.

    Indicators are taken in decreasing order, ties by increasing index.
    Returns the sorted indices; empty if all indicators vanish.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    eta = np.asarray(indicators, dtype=float)
    total = eta.sum()
    if total <= 0.0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    csum = np.cumsum(eta[order])
    count = int(np.searchsorted(csum, theta * total, side="left")) + 1
    count = min(count, eta.size)
    if theta == 1.0:
        count = max(count, int(np.count_nonzero(eta)))
    return np.sort(order[:count])
