import numpy as np
import pytest
import scipy.sparse as sp

from bemcap.mesh import Triangulation, build_bary, build_dual, cube, fichera, refine_nvb
from bemcap.operators import (QuadratureOptions, assemble_p1_p0, assemble_single_layer, build_capacity_system,
                              build_primal_system, curl_maps, dual_projection, galerkin_products,
                              hat_gradients, mass_matrix, p1_embedding, p1_moments, primal_projection,
                              refinement_embedding, rhs_moments, stabilization_vector, touching_pairs)
from bemcap.quadrature import classify_pair, pair_integral

from oracles import EDGE_PARTNER, FROZEN, UNIT


@pytest.fixture(scope="module")
def cube_parts():
    m = cube()
    b = build_bary(m)
    d = build_dual(m, b)
    return m, b, d


@pytest.fixture(scope="module")
def cube_vbary(cube_parts):
    return assemble_single_layer(cube_parts[1])


@pytest.fixture(scope="module")
def cube_system(cube_parts):
    m, b, d = cube_parts
    return build_capacity_system(m, b, d, storage="bary")


def single_triangle():
    return Triangulation(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])


def test_single_layer_is_spd(cube_vbary):
    V = cube_vbary
    assert V.shape == (72, 72)
    np.testing.assert_allclose(V, V.T, rtol=0, atol=1e-12 * np.abs(V).max())
    rng = np.random.default_rng(1)
    X = rng.normal(size=(72, 100))
    assert np.all(np.einsum("ik,ij,jk->k", X, V, X) > 0)
    assert np.linalg.eigvalsh(V).min() > 0


def test_single_layer_entries_equal_pair_integral(cube_parts, cube_vbary):
    b = cube_parts[1]
    p = b.corners()
    rng = np.random.default_rng(3)
    pairs = [(i, i) for i in range(0, 72, 7)] + [tuple(rng.integers(0, 72, 2)) for _ in range(60)]
    for i, j in pairs:
        pc = classify_pair(b.triangles[i], b.triangles[j])
        assert cube_vbary[i, j] == pytest.approx(pair_integral(p[i], p[j], pc), rel=1e-12)


def test_two_triangle_matrix_matches_oracle():
    V = assemble_single_layer(np.array([UNIT, EDGE_PARTNER]), QuadratureOptions(order=8))
    assert V[0, 1] == pytest.approx(FROZEN["edge"], rel=1e-6)
    assert V[1, 0] == V[0, 1]
    assert V[0, 0] == pytest.approx(FROZEN["identical"], rel=1e-6)


def test_touching_pairs_cover_all_shared_vertices(cube_parts):
    m = cube_parts[0]
    pi, pj = touching_pairs(m.triangles, m.num_vertices)
    assert np.all(pi <= pj)
    for i, j in zip(pi, pj):
        assert set(m.triangles[i]) & set(m.triangles[j])


def test_galerkin_products_match_dense(cube_parts, cube_vbary):
    m, b, _ = cube_parts
    P = dual_projection(b)
    Q = curl_maps(m, b)
    for rows in (None, 5, 13):
        out = galerkin_products(b, [P] + Q, block_rows=rows)
        for S, A in zip([P] + Q, out):
            ref = np.asarray(S.T @ cube_vbary @ S)
            np.testing.assert_allclose(A, ref, rtol=1e-12, atol=1e-15)


def test_dual_projection(cube_parts):
    _, b, d = cube_parts
    P = dual_projection(b)
    assert P.nnz == 72 and np.all(P.data == 1.0)
    np.testing.assert_array_equal(P @ np.ones(8), np.ones(72))
    PtP = (P.T @ P).toarray()
    np.testing.assert_array_equal(np.diag(PtP), [len(c) for c in d.cells])
    assert np.count_nonzero(PtP - np.diag(np.diag(PtP))) == 0


def test_primal_projection_and_embedding(cube_parts, cube_vbary):
    m, b, _ = cube_parts
    R = primal_projection(b)
    np.testing.assert_array_equal(R @ np.ones(12), np.ones(72))
    V0 = np.asarray(R.T @ cube_vbary @ R)
    assert np.linalg.eigvalsh(0.5 * (V0 + V0.T)).min() > 0
    E = p1_embedding(m)
    np.testing.assert_array_equal(E @ np.ones(12), np.ones(36))


def test_hat_gradient_closed_form():
    g = hat_gradients(single_triangle())
    np.testing.assert_allclose(g[0, 0], [-1, -1, 0], atol=1e-15)
    np.testing.assert_allclose(g[0, 1], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(g[0, 2], [0, 1, 0], atol=1e-15)


def test_curl_map_fixture():
    m = single_triangle()
    b = build_bary(m)
    Q = curl_maps(m, b)
    curl = np.array([Qm[:, 0].toarray().ravel() for Qm in Q]).T
    np.testing.assert_allclose(curl, np.tile([1.0, -1.0, 0.0], (6, 1)), atol=1e-15)


def test_curl_maps_annihilate_constants(cube_parts, cube_system):
    m, b, _ = cube_parts
    for Q in curl_maps(m, b):
        np.testing.assert_allclose(Q @ np.ones(m.num_vertices), 0.0, atol=1e-14)
    np.testing.assert_allclose(cube_system.Dcurl @ np.ones(8), 0.0, atol=1e-13)


def test_mass_matrix_sums(cube_parts):
    m, b, d = cube_parts
    M = mass_matrix(m, b, d)
    assert M.shape == (8, 8)
    np.testing.assert_allclose(np.asarray(M.sum(axis=0)).ravel(), d.areas, rtol=1e-14)
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), stabilization_vector(m), rtol=1e-14)
    x = np.random.default_rng(0).normal(size=8)
    y = sp.linalg.spsolve(M, M @ x)
    assert np.linalg.norm(M @ y - M @ x) < 1e-12


def test_mass_matrix_entries_by_quadrature():
    m = refine_nvb(cube(), [0, 5], edges="reference")
    b = build_bary(m)
    M = mass_matrix(m, b).toarray()
    # brute force: integrate every hat over every bary child with a degree-2 rule
    lam = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    ref = np.zeros_like(M)
    corners = m.corners()
    for i in range(len(b)):
        k = b.parent_primal[i]
        pts = lam @ b.corners()[i]
        # barycentric coordinates of the points in the parent
        T = np.column_stack([corners[k, 1] - corners[k, 0], corners[k, 2] - corners[k, 0]])
        st = np.linalg.lstsq(T, (pts - corners[k, 0]).T, rcond=None)[0].T
        bc = np.column_stack([1 - st.sum(axis=1), st])
        for t in range(3):
            ref[m.triangles[k, t], b.owner_vertex[i]] += b.areas()[i] * bc[:, t].mean()
    np.testing.assert_allclose(M, ref, rtol=1e-12, atol=1e-15)


def test_stabilization_vector(cube_parts):
    m = cube_parts[0]
    a = stabilization_vector(m)
    assert a.sum() == pytest.approx(6.0)
    valence = np.bincount(m.triangles.ravel())
    np.testing.assert_allclose(a[valence == 4], 2.0 / 3.0)


def test_rhs_moments(cube_parts):
    m, b, d = cube_parts
    assert rhs_moments(d).sum() == pytest.approx(6.0)
    np.testing.assert_array_equal(rhs_moments(d, b, lambda x: np.zeros(len(x))), np.zeros(8))
    assert rhs_moments(d, b, lambda x: x[:, 0]).sum() == pytest.approx(3.0, rel=1e-13)
    np.testing.assert_allclose(rhs_moments(d, b, lambda x: np.ones(len(x))), d.areas, rtol=1e-13)
    with pytest.raises(ValueError):
        rhs_moments(d, None, lambda x: x[:, 0])


def test_capacity_system_maps(cube_system):
    s = cube_system
    rng = np.random.default_rng(5)
    Vd = np.asarray(s.P.T @ s.Vbary @ s.P)
    for _ in range(20):
        x = rng.normal(size=8)
        np.testing.assert_allclose(s.apply_Vdual(x), Vd @ x, rtol=1e-13, atol=1e-15)
    x, y = rng.normal(size=(2, 8))
    assert x @ s.apply_Vdual(y) == pytest.approx(y @ s.apply_Vdual(x), rel=1e-12)
    one = np.ones(8)
    np.testing.assert_allclose(s.apply_Dreg(one), s.a * 6.0, rtol=1e-12)
    assert one @ s.apply_Dreg(one) == pytest.approx(36.0, rel=1e-12)
    # energy through V^dual equals energy through V^bary on P x
    assert x @ s.apply_Vdual(x) == pytest.approx((s.P @ x) @ s.Vbary @ (s.P @ x), rel=1e-14)


def test_storage_modes_agree(cube_parts, cube_system):
    m, b, d = cube_parts
    g = build_capacity_system(m, b, d)
    assert g.Vbary is None
    np.testing.assert_allclose(g.Vdual, cube_system.Vdual, rtol=1e-13, atol=1e-16)
    np.testing.assert_allclose(g.Dcurl, cube_system.Dcurl, rtol=1e-12, atol=1e-15)
    x = np.random.default_rng(2).normal(size=8)
    np.testing.assert_allclose(g.apply_preconditioned(x), cube_system.apply_preconditioned(x), rtol=1e-11)


def test_vdual_and_vp0_spd_on_refined_mesh():
    m = refine_nvb(fichera(), [0, 7, 30], edges="reference")
    s = build_capacity_system(m)
    assert np.linalg.eigvalsh(s.Vdual).min() > 0
    prim = build_primal_system(m)
    assert np.linalg.eigvalsh(prim.V).min() > 0
    np.testing.assert_allclose(prim.V, prim.V.T, rtol=1e-12)


def test_primal_system_consistent_with_p0_assembly(cube_parts):
    m = cube_parts[0]
    prim = build_primal_system(m)
    V0 = assemble_single_layer(m)
    np.testing.assert_allclose(prim.V, V0, rtol=1e-12)
    np.testing.assert_allclose(prim.E.T @ prim.f_p1, prim.f, rtol=1e-14)
    np.testing.assert_allclose(p1_moments(m).sum(), 6.0)


def test_p1_blocks_against_quadrature(cube_parts):
    m = cube_parts[0]
    full = assemble_p1_p0(m, full=True)
    np.testing.assert_allclose(full, full.T, rtol=1e-12, atol=1e-16)
    VE = assemble_p1_p0(m)
    np.testing.assert_allclose(full @ p1_embedding(m).toarray(), VE, rtol=1e-12, atol=1e-15)


def test_refinement_embedding():
    coarse = cube()
    fine = refine_nvb(coarse, [0, 3], edges="reference")
    J = refinement_embedding(fine, len(coarse))
    np.testing.assert_allclose(J.T @ fine.areas(), coarse.areas(), rtol=1e-14)
    with pytest.raises(ValueError):
        refinement_embedding(coarse, 12)


def test_multi_component_stabilization():
    tet = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tris = np.array([(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)])
    m = Triangulation(np.vstack([tet, tet + 3.0]), np.vstack([tris, tris + 4]))
    s = build_capacity_system(m)
    D = s.Dreg_matrix()
    assert np.linalg.eigvalsh(D).min() > 0
    comp = np.r_[np.ones(4), np.zeros(4)]
    np.testing.assert_allclose(s.apply_Dreg(comp), s.a * comp * s.a[:4].sum(), rtol=1e-12, atol=1e-14)
