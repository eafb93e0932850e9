"""Quadrature on triangles and on pairs of triangles.

Triangle rules live on the reference triangle ``{(s, t) : s, t >= 0, s + t <= 1}``
with weights normalised to sum to one, so ``area * sum(w * f(points))``
integrates ``f`` over a physical triangle.

Pair rules integrate ``k(x, y)`` over ``tau x tau`` where ``tau`` is the
reference triangle ``{(u1, u2) : 0 <= u2 <= u1 <= 1}`` mapped onto a flat
triangle ``(p0, p1, p2)`` by ``p0 + u1 (p1 - p0) + u2 (p2 - p1)``. For pairs
that touch, the rules come from the standard relative-coordinate (Duffy type)
splitting of the four dimensional domain into simplices on which ``1/|x - y|``
times the Jacobian is analytic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares
from scipy.special import roots_jacobi, roots_legendre

FOUR_PI = 4.0 * math.pi

# Distance / diameter ratio above which the cheap far-field rule is used.
FAR_RATIO = 4.0
FAR_DEGREE = 3
# Beyond this ratio a three-point rule keeps the entry error below 1e-6.
VERY_FAR_RATIO = 16.0
VERY_FAR_DEGREE = 2
NEAR_DEGREE = 6
MAX_RULE_DEGREE = 20
SINGULAR_ORDER = 4


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature rule on the reference triangle.

    ``points`` holds ``(s, t)`` pairs, the point being ``p0 + s (p1 - p0) + t (p2 - p0)``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)

    @property
    def barycentric(self) -> np.ndarray:
        s, t = self.points.T
        return np.column_stack([1.0 - s - t, s, t])

    def map(self, tri: np.ndarray) -> np.ndarray:
        """Physical points for a ``(3, 3)`` array of triangle corners."""
        return self.barycentric @ tri


def monomial_integral(a: int, b: int) -> float:
    """Integral of ``s**a t**b`` over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def _orbit_points(kind, params):
    if kind == "s3":
        return [(1 / 3, 1 / 3)]
    if kind == "s21":
        (a,) = params
        return [(a, a), (a, 1 - 2 * a), (1 - 2 * a, a)]
    b, c = params
    d = 1 - b - c
    return [(b, c), (c, b), (b, d), (d, b), (c, d), (d, c)]


def _symmetric_rule(orbits, degree):
    # Polish tabulated orbit parameters against the exact moment equations.
    layout = []
    x0 = []
    for kind, params, weight in orbits:
        layout.append((kind, len(params)))
        x0.extend(params)
        x0.append(weight)

    def unpack(x):
        pts, wts, pos = [], [], 0
        for kind, npar in layout:
            params = x[pos:pos + npar]
            weight = x[pos + npar]
            pos += npar + 1
            orbit = _orbit_points(kind, params)
            pts.extend(orbit)
            wts.extend([weight] * len(orbit))
        return np.array(pts), np.array(wts)

    exps = [(a, d - a) for d in range(degree + 1) for a in range(d + 1)]
    exact = np.array([2.0 * monomial_integral(a, b) for a, b in exps])

    def residual(x):
        pts, wts = unpack(x)
        return np.array([wts @ (pts[:, 0] ** a * pts[:, 1] ** b) for a, b in exps]) - exact

    sol = least_squares(residual, np.array(x0), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    pts, wts = unpack(sol.x)
    return pts, wts


def _conical_rule(degree):
    n = (degree + 2) // 2
    # Collapse the square onto the triangle: s = u, t = v (1 - u).
    xu, wu = roots_jacobi(n, 1.0, 0.0)
    xv, wv = roots_legendre(n)
    u = 0.5 * (1.0 + xu)
    wu = wu / 4.0
    v = 0.5 * (xv + 1.0)
    wv = wv / 2.0
    s = np.repeat(u, n)
    t = np.outer(1.0 - u, v).ravel()
    w = np.outer(wu, wv).ravel()
    return np.column_stack([s, t]), 2.0 * w


@lru_cache(maxsize=None)
def triangle_gauss_rule(degree: int) -> TriangleRule:
    """Symmetric or collapsed Gauss rule exact up to ``degree`` (1 to 20)."""
    if not 1 <= degree <= MAX_RULE_DEGREE:
        raise QuadratureError(f"unsupported triangle rule degree {degree}")
    if degree == 1:
        pts, wts = np.array([[1 / 3, 1 / 3]]), np.array([1.0])
    elif degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 3)
    elif degree in (3, 4):
        pts, wts = _symmetric_rule(
            [("s21", [0.445948490915965], 0.223381589678011),
             ("s21", [0.091576213509771], 0.109951743655322)], 4)
    elif degree == 5:
        r = math.sqrt(15.0)
        a, b = (6 - r) / 21, (6 + r) / 21
        wa, wb = (155 - r) / 2400, (155 + r) / 2400
        pts = np.array([[1 / 3, 1 / 3], [a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                        [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
        wts = 2.0 * np.array([9 / 80, wa, wa, wa, wb, wb, wb])
    elif degree == 6:
        pts, wts = _symmetric_rule(
            [("s21", [0.249286745170910], 0.116786275726379),
             ("s21", [0.063089014491502], 0.050844906370207),
             ("s111", [0.053145049844817, 0.310352451033784], 0.082851075618374)], 6)
    else:
        pts, wts = _conical_rule(degree)
    pts.flags.writeable = False
    wts.flags.writeable = False
    return TriangleRule(pts, wts, degree)


class PairKind(enum.IntEnum):
    DISJOINT = 0
    COMMON_VERTEX = 1
    COMMON_EDGE = 2
    IDENTICAL = 3


@dataclass(frozen=True)
class PairClass:
    """How two triangles of one mesh touch.

    ``perm_a`` / ``perm_b`` reorder the local vertices so that shared
    vertices come first, in the same order for both triangles.
    """

    kind: PairKind
    perm_a: tuple
    perm_b: tuple


def classify_pair(tri_a, tri_b) -> PairClass:
    a = [int(v) for v in tri_a]
    b = [int(v) for v in tri_b]
    shared = sorted(set(a) & set(b))
    kind = PairKind(len(shared))
    if kind is PairKind.IDENTICAL:
        # Keep the local ordering of ``a`` for both; a rotation of b that
        # matches it exists only if orientations agree, so align by index.
        perm_a = (0, 1, 2)
        perm_b = tuple(b.index(v) for v in a)
        return PairClass(kind, perm_a, perm_b)
    rest_a = [i for i in range(3) if a[i] not in shared]
    rest_b = [i for i in range(3) if b[i] not in shared]
    perm_a = tuple([a.index(v) for v in shared] + rest_a)
    perm_b = tuple([b.index(v) for v in shared] + rest_b)
    return PairClass(kind, perm_a, perm_b)


def _gauss01(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _identical_regions(xi, e1, e2, e3):
    one = np.ones_like(xi)
    jac = xi ** 3 * e1 ** 2 * e2
    regions = [
        ((xi, xi * (1 - e1 + e1 * e2)), (xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        ((xi * (1 - e1 * e2 * e3), xi * (1 - e1)), (xi, xi * (1 - e1 + e1 * e2))),
        ((xi, xi * e1 * (1 - e2 + e2 * e3)), (xi * (1 - e1 * e2), xi * e1 * (1 - e2))),
        ((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * (1 - e2 + e2 * e3))),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * (1 - e2))),
        ((xi, xi * e1 * (1 - e2)), (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))),
    ]
    return [(x, y, jac * one) for x, y in regions]


def _edge_regions(xi, e1, e2, e3):
    j1 = xi ** 3 * e1 ** 2
    j2 = xi ** 3 * e1 ** 2 * e2
    regions = [
        ((xi, xi * e1 * e3), (xi * (1 - e1 * e2), xi * e1 * (1 - e2)), j1),
        ((xi, xi * e1), (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), j2),
        ((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * e2 * e3), j2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), (xi, xi * e1), j2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * e2), j2),
    ]
    # The split is not invariant under x <-> y; averaging with the swapped
    # copy makes the rule symmetric in its two triangles.
    return [(x, y, 0.5 * j) for x, y, j in regions] + [(y, x, 0.5 * j) for x, y, j in regions]


def _vertex_regions(xi, e1, e2, e3):
    jac = xi ** 3 * e2
    return [
        ((xi, xi * e1), (xi * e2, xi * e2 * e3), jac),
        ((xi * e2, xi * e2 * e3), (xi, xi * e1), jac),
    ]


@dataclass(frozen=True)
class PairRule:
    """Points ``(u1, u2)`` on both reference triangles plus weights.

    Weights include every Jacobian of the reference construction; the physical
    integral is ``(2|A|)(2|B|) * sum(w * k(x(u), y(v)))``.
    """

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def singular_rule(kind: PairKind, order: int) -> PairRule:
    """Tensor Gauss rule of ``order`` points per dimension for a touching pair."""
    if kind is PairKind.DISJOINT:
        raise QuadratureError("disjoint pairs use the tensor triangle rules")
    if order < 1:
        raise QuadratureError(f"order must be positive, got {order}")
    g, gw = _gauss01(order)
    xi, e1, e2, e3 = (a.ravel() for a in np.meshgrid(g, g, g, g, indexing="ij"))
    w4 = np.einsum("a,b,c,d->abcd", gw, gw, gw, gw).ravel()
    build = {PairKind.IDENTICAL: _identical_regions,
             PairKind.COMMON_EDGE: _edge_regions,
             PairKind.COMMON_VERTEX: _vertex_regions}[kind]
    xs, ys, ws = [], [], []
    for (x1, x2), (y1, y2), jac in build(xi, e1, e2, e3):
        xs.append(np.column_stack([x1, x2]))
        ys.append(np.column_stack([y1, y2]))
        ws.append(w4 * jac)
    rule = PairRule(np.concatenate(xs), np.concatenate(ys), np.concatenate(ws))
    for arr in (rule.x, rule.y, rule.weights):
        arr.flags.writeable = False
    return rule


def near_rule_degree(order: int) -> int:
    """Triangle rule degree for close disjoint pairs; grows with the singular order."""
    return min(MAX_RULE_DEGREE, max(NEAR_DEGREE, 2 * order - 2))


def far_rule_degree(ratio: float, order: int = SINGULAR_ORDER) -> int:
    """Triangle rule degree for a disjoint pair at ``distance / diameter = ratio``."""
    if ratio > VERY_FAR_RATIO:
        return VERY_FAR_DEGREE
    return FAR_DEGREE if ratio > FAR_RATIO else near_rule_degree(order)


def tensor_pair_rule(degree_a: int, degree_b: int | None = None) -> PairRule:
    """Tensor product of two triangle rules, in the pair-rule convention."""
    ra = triangle_gauss_rule(degree_a)
    rb = triangle_gauss_rule(degree_a if degree_b is None else degree_b)

    def to_tau(pts):
        # (s, t) on the corner triangle -> (u1, u2) on tau: s = u1 - u2, t = u2.
        return np.column_stack([pts[:, 0] + pts[:, 1], pts[:, 1]])

    xa = np.repeat(to_tau(ra.points), len(rb), axis=0)
    yb = np.tile(to_tau(rb.points), (len(ra), 1))
    w = 0.25 * np.outer(ra.weights, rb.weights).ravel()
    return PairRule(xa, yb, w)


def _tau_to_physical(tri, u):
    p0, p1, p2 = tri
    return p0 + u[:, :1] * (p1 - p0) + u[:, 1:] * (p2 - p1)


def _area(tri):
    return 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))


def apply_pair_rule(tri_a, tri_b, rule: PairRule, kernel=None) -> float:
    """Evaluate a pair rule on physical triangles (reference implementation)."""
    x = _tau_to_physical(tri_a, rule.x)
    y = _tau_to_physical(tri_b, rule.y)
    if kernel is None:
        vals = 1.0 / np.linalg.norm(x - y, axis=1) / FOUR_PI
    else:
        vals = kernel(x, y)
    return 4.0 * _area(tri_a) * _area(tri_b) * float(rule.weights @ vals)


def pair_integral(tri_a, tri_b, pair: PairClass | None = None, order: int = SINGULAR_ORDER) -> float:
    """``(1/4 pi) int_A int_B |x - y|^-1`` for two flat triangles.

    Parameters
    ----------
    tri_a, tri_b : array_like, shape (3, 3)
        Triangle corners.
    pair : PairClass, optional
        Touching configuration. If omitted, shared corners are detected by
        exact coordinate equality.
    order : int
        Gauss points per dimension for touching pairs; also raises the rule
        degree for close disjoint pairs.
    """
    tri_a = np.asarray(tri_a, dtype=float)
    tri_b = np.asarray(tri_b, dtype=float)
    area_a, area_b = _area(tri_a), _area(tri_b)
    if area_a <= 0.0 or area_b <= 0.0:
        raise QuadratureError("degenerate triangle")
    if pair is None:
        pair = classify_pair(*_coordinate_labels(tri_a, tri_b))
    if pair.kind is PairKind.DISJOINT:
        diam = max(_diameter(tri_a), _diameter(tri_b))
        ratio = np.linalg.norm(tri_a.mean(0) - tri_b.mean(0)) / diam
        deg = far_rule_degree(ratio, order)
        ra = triangle_gauss_rule(deg)
        xa = ra.map(tri_a)
        xb = ra.map(tri_b)
        dist = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=2)
        return area_a * area_b * float(ra.weights @ (1.0 / dist) @ ra.weights) / FOUR_PI
    a = tri_a[list(pair.perm_a)]
    b = tri_b[list(pair.perm_b)]
    return apply_pair_rule(a, b, singular_rule(pair.kind, order))


def _diameter(tri):
    return max(np.linalg.norm(tri[i] - tri[j]) for i, j in ((0, 1), (1, 2), (2, 0)))


def _coordinate_labels(tri_a, tri_b):
    """Vertex labels by lexicographic rank of the coordinates.

    The labels do not depend on argument order, so shared corners are
    aligned the same way for ``(a, b)`` and ``(b, a)``.
    """
    keys = sorted({tuple(p) for p in tri_a} | {tuple(p) for p in tri_b})
    rank = {k: i for i, k in enumerate(keys)}
    return [[rank[tuple(p)] for p in tri] for tri in (tri_a, tri_b)]
