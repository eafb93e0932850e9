"""Compiled loops for single-layer assembly."""

import math

import numpy as np
from numba import njit

INV_FOUR_PI = 1.0 / (4.0 * math.pi)


@njit(cache=True)
def _touch(tris, i, j):
    for r in range(3):
        for c in range(3):
            if tris[i, r] == tris[j, c]:
                return True
    return False


@njit(cache=True, fastmath=True)
def _cloud_pair_at(p, w, i, j):
    s = 0.0
    for a in range(p.shape[1]):
        xa0 = p[i, a, 0]
        xa1 = p[i, a, 1]
        xa2 = p[i, a, 2]
        acc = 0.0
        for b in range(p.shape[1]):
            d0 = xa0 - p[j, b, 0]
            d1 = xa1 - p[j, b, 1]
            d2 = xa2 - p[j, b, 2]
            acc += w[j, b] / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        s += w[i, a] * acc
    return s


@njit(cache=True)
def fill_regular_p0(out, r0, r1, c0, tris, centers, diam, p_vf, w_vf, p_lo, w_lo, p_hi, w_hi,
                    far_ratio, very_far_ratio):
    """Fill ``out[i - r0, j - c0]`` for rows ``[r0, r1)`` and columns ``>= c0``.

    Only ``j >= i`` is evaluated; entries inside the diagonal block are
    mirrored. Touching pairs are left untouched. ``p_*`` are per-triangle
    physical points ``(n, q, 3)`` and ``w_*`` physical weights ``(n, q)`` for
    the very far, far and near rules.
    """
    n = centers.shape[0]
    for i in range(r0, r1):
        ci0 = centers[i, 0]
        ci1 = centers[i, 1]
        ci2 = centers[i, 2]
        hi = diam[i]
        for j in range(max(i, c0), n):
            if _touch(tris, i, j):
                continue
            d0 = ci0 - centers[j, 0]
            d1 = ci1 - centers[j, 1]
            d2 = ci2 - centers[j, 2]
            h = max(hi, diam[j])
            dist2 = d0 * d0 + d1 * d1 + d2 * d2
            if dist2 > (h * very_far_ratio) ** 2:
                v = _cloud_pair_at(p_vf, w_vf, i, j)
            elif dist2 > (h * far_ratio) ** 2:
                v = _cloud_pair_at(p_lo, w_lo, i, j)
            else:
                v = _cloud_pair_at(p_hi, w_hi, i, j)
            v *= INV_FOUR_PI
            out[i - r0, j - c0] = v
            if j < r1 and j != i:
                out[j - r0, i - c0] = v


@njit(cache=True)
def _cloud_pair_p1(pa, wa, la, pb, wb, lb, blk):
    for r in range(3):
        for c in range(3):
            blk[r, c] = 0.0
    for a in range(pa.shape[0]):
        for b in range(pb.shape[0]):
            d0 = pa[a, 0] - pb[b, 0]
            d1 = pa[a, 1] - pb[b, 1]
            d2 = pa[a, 2] - pb[b, 2]
            k = wa[a] * wb[b] / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            for r in range(3):
                kr = k * la[a, r]
                for c in range(3):
                    blk[r, c] += kr * lb[b, c]


@njit(cache=True)
def fill_regular_p1(out, sum_cols, tris, centers, diam, p_lo, w_lo, l_lo, p_hi, w_hi, l_hi, far_ratio):
    """Discontinuous-P1 Galerkin blocks for all non-touching pairs.

    ``out`` must be zero on entry. With ``sum_cols`` the column basis
    functions of each triangle are summed, giving the ``(3n, n)`` matrix of
    P1 tests against P0 trials.
    """
    n = centers.shape[0]
    blk = np.empty((3, 3))
    for i in range(n):
        for j in range(i, n):
            if _touch(tris, i, j):
                continue
            d0 = centers[i, 0] - centers[j, 0]
            d1 = centers[i, 1] - centers[j, 1]
            d2 = centers[i, 2] - centers[j, 2]
            h = max(diam[i], diam[j])
            if math.sqrt(d0 * d0 + d1 * d1 + d2 * d2) > far_ratio * h:
                _cloud_pair_p1(p_lo[i], w_lo[i], l_lo, p_lo[j], w_lo[j], l_lo, blk)
            else:
                _cloud_pair_p1(p_hi[i], w_hi[i], l_hi, p_hi[j], w_hi[j], l_hi, blk)
            for r in range(3):
                for c in range(3):
                    blk[r, c] *= INV_FOUR_PI
            store_p1(out, sum_cols, i, j, blk)


@njit(cache=True)
def store_p1(out, sum_cols, i, j, blk):
    for r in range(3):
        for c in range(3):
            v = blk[r, c]
            if sum_cols:
                out[3 * i + r, j] += v
                if i != j:
                    out[3 * j + c, i] += v
            else:
                out[3 * i + r, 3 * j + c] = v
                out[3 * j + c, 3 * i + r] = v


@njit(cache=True)
def store_p1_pairs(out, sum_cols, pi, pj, blocks):
    for p in range(pi.shape[0]):
        store_p1(out, sum_cols, pi[p], pj[p], blocks[p])


@njit(cache=True)
def _align(ta, tb, pa, pb):
    # Shared corners first, in the same order for both; returns the count.
    ns = 0
    for r in range(3):
        for c in range(3):
            if ta[r] == tb[c]:
                pa[ns] = r
                pb[ns] = c
                ns += 1
    k = ns
    for r in range(3):
        used = False
        for m in range(ns):
            if pa[m] == r:
                used = True
        if not used:
            pa[k] = r
            k += 1
    k = ns
    for c in range(3):
        used = False
        for m in range(ns):
            if pb[m] == c:
                used = True
        if not used:
            pb[k] = c
            k += 1
    return ns


@njit(cache=True)
def singular_pairs(verts, tris, pi, pj, rx, ry, rw, offsets, out, blocks, want_p1):
    """Touching-pair integrals by relative-coordinate rules.

    ``rx``, ``ry``, ``rw`` hold the concatenated rules for vertex, edge and
    identical contact; ``offsets[k]:offsets[k + 1]`` selects contact ``k + 1``.
    ``out[p]`` receives the P0 value and, when ``want_p1``, ``blocks[p]`` the
    3x3 P1 block in the triangles' own local vertex order.
    """
    pa = np.empty(3, dtype=np.int64)
    pb = np.empty(3, dtype=np.int64)
    A = np.empty((3, 3))
    B = np.empty((3, 3))
    blk = np.empty((3, 3))
    for p in range(pi.shape[0]):
        ta = tris[pi[p]]
        tb = tris[pj[p]]
        ns = _align(ta, tb, pa, pb)
        for r in range(3):
            for d in range(3):
                A[r, d] = verts[ta[pa[r]], d]
                B[r, d] = verts[tb[pb[r]], d]
        e1a = A[1] - A[0]
        e2a = A[2] - A[1]
        e1b = B[1] - B[0]
        e2b = B[2] - B[1]
        ca = np.cross(A[1] - A[0], A[2] - A[0])
        cb = np.cross(B[1] - B[0], B[2] - B[0])
        jac = math.sqrt(ca[0] ** 2 + ca[1] ** 2 + ca[2] ** 2) * math.sqrt(cb[0] ** 2 + cb[1] ** 2 + cb[2] ** 2)
        lo = offsets[ns - 1]
        hi = offsets[ns]
        s = 0.0
        for r in range(3):
            for c in range(3):
                blk[r, c] = 0.0
        for q in range(lo, hi):
            u1 = rx[q, 0]
            u2 = rx[q, 1]
            v1 = ry[q, 0]
            v2 = ry[q, 1]
            d0 = A[0, 0] + u1 * e1a[0] + u2 * e2a[0] - B[0, 0] - v1 * e1b[0] - v2 * e2b[0]
            d1 = A[0, 1] + u1 * e1a[1] + u2 * e2a[1] - B[0, 1] - v1 * e1b[1] - v2 * e2b[1]
            d2 = A[0, 2] + u1 * e1a[2] + u2 * e2a[2] - B[0, 2] - v1 * e1b[2] - v2 * e2b[2]
            k = rw[q] / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            s += k
            if want_p1:
                la0 = 1.0 - u1
                la1 = u1 - u2
                la2 = u2
                lb0 = 1.0 - v1
                lb1 = v1 - v2
                lb2 = v2
                blk[0, 0] += k * la0 * lb0
                blk[0, 1] += k * la0 * lb1
                blk[0, 2] += k * la0 * lb2
                blk[1, 0] += k * la1 * lb0
                blk[1, 1] += k * la1 * lb1
                blk[1, 2] += k * la1 * lb2
                blk[2, 0] += k * la2 * lb0
                blk[2, 1] += k * la2 * lb1
                blk[2, 2] += k * la2 * lb2
        out[p] = s * jac * INV_FOUR_PI
        if want_p1:
            for r in range(3):
                for c in range(3):
                    blocks[p, pa[r], pb[c]] = blk[r, c] * jac * INV_FOUR_PI
