import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spclosure.grid import (apply_filter, cell_blocks, inner_product, make_filter_pair, make_grid_pair,
                            reconstruct, remap_conservative, remap_matrix, sgs_content)


def fp_of(I, J, domain=(0.0, 1.0)):
    return make_filter_pair(make_grid_pair(domain, I, J))


def test_grid_burgers_size():
    g = make_grid_pair((0.0, 2 * np.pi), 20, 50)
    assert g.N == 1000
    assert g.h == pytest.approx(2 * np.pi / 1000, rel=1e-15)
    assert g.H == pytest.approx(50 * g.h, rel=1e-15)


def test_grid_identity_case():
    g = make_grid_pair((0.0, 1.0), 1, 1)
    assert (g.N, g.h, g.H) == (1, 1.0, 1.0)


def test_grid_kdv_size():
    g = make_grid_pair((0.0, 32.0), 30, 20)
    assert g.N == 600
    assert g.H == pytest.approx(32 / 30)


def test_grid_centers_and_mass():
    g = make_grid_pair((1.0, 3.0), 2, 2)
    np.testing.assert_allclose(g.fine_centers(), [1.25, 1.75, 2.25, 2.75])
    np.testing.assert_allclose(g.coarse_centers(), [1.5, 2.5])
    assert np.all(g.omega > 0) and np.all(g.Omega > 0)
    with pytest.raises(ValueError):
        g.omega[0] = 1.0


@pytest.mark.parametrize("I,J,dom", [(0, 2, (0, 1)), (2, 0, (0, 1)), (2, 2, (1, 1)), (2, 2, (1, 0)), (1.5, 2, (0, 1))])
def test_grid_rejects_bad_input(I, J, dom):
    with pytest.raises(ValueError):
        make_grid_pair(dom, I, J)


def test_filter_examples():
    fp = fp_of(2, 2)
    np.testing.assert_allclose(apply_filter(fp, np.full(4, 3.25)), [3.25, 3.25])
    np.testing.assert_allclose(apply_filter(fp, [1.0, 2.0, 3.0, 4.0]), [1.5, 3.5])
    np.testing.assert_allclose(reconstruct(fp, [1.5, 3.5]), [1.5, 1.5, 3.5, 3.5])
    np.testing.assert_allclose(sgs_content(fp, [1.0, 2.0, 3.0, 4.0]), [-0.5, 0.5, -0.5, 0.5])


def test_filter_matches_dense_operator():
    rng = np.random.default_rng(0)
    fp = fp_of(20, 50, (0, 2 * np.pi))
    u = rng.normal(size=1000)
    dense = fp.W_dense() @ u
    np.testing.assert_allclose(apply_filter(fp, u), dense, rtol=1e-14, atol=1e-14 * np.abs(dense).max())
    ub = rng.normal(size=20)
    np.testing.assert_array_equal(reconstruct(fp, ub), fp.overlap_matrix().T @ ub)


def test_dense_operators_structure():
    fp = fp_of(3, 4)
    W, R, O = fp.W_dense(), fp.R_dense(), fp.overlap_matrix()
    g = fp.grid
    np.testing.assert_allclose(W, np.diag(1 / g.Omega) @ O @ np.diag(g.omega))
    np.testing.assert_array_equal(R, O.T)
    np.testing.assert_allclose(W @ R, np.eye(3), atol=1e-15)


def test_length_errors():
    fp = fp_of(2, 2)
    for fn, x in ((apply_filter, np.ones(3)), (reconstruct, np.ones(3)), (sgs_content, np.ones(5)),
                  (cell_blocks, np.ones(3))):
        with pytest.raises(ValueError):
            fn(fp, x)
    with pytest.raises(ValueError):
        inner_product(np.ones(3), np.ones(4), np.ones(3))


def test_inner_product_total_measure():
    g = make_grid_pair((0.0, 5.0), 5, 7)
    assert inner_product(np.ones(g.N), np.ones(g.N), g.omega) == pytest.approx(5.0, rel=1e-14)


def test_projection_removes_reconstructed_fields():
    rng = np.random.default_rng(1)
    fp = fp_of(6, 5)
    u = reconstruct(fp, rng.normal(size=6))
    assert np.max(np.abs(sgs_content(fp, u))) < 4 * np.finfo(float).eps * np.abs(u).max()


def test_sgs_content_filters_to_zero():
    rng = np.random.default_rng(2)
    fp = fp_of(20, 50, (0, 2 * np.pi))
    up = sgs_content(fp, rng.normal(size=1000))
    assert np.max(np.abs(apply_filter(fp, up))) < 1e-13


@settings(max_examples=60, deadline=None)
@given(I=st.integers(1, 30), J=st.integers(1, 30), length=st.floats(0.1, 50.0), seed=st.integers(0, 2**31))
def test_filter_identities(I, J, length, seed):
    rng = np.random.default_rng(seed)
    g = make_grid_pair((0.0, length), I, J)
    fp = make_filter_pair(g)
    u = rng.normal(size=g.N)
    a, b = rng.normal(size=I), rng.normal(size=I)
    # W R = I
    assert np.max(np.abs(apply_filter(fp, reconstruct(fp, a)) - a)) < 1e-14 * max(1, np.abs(a).max())
    # (R a, R b)_omega = (a, b)_Omega
    lhs = inner_product(reconstruct(fp, a), reconstruct(fp, b), g.omega)
    rhs = inner_product(a, b, g.Omega)
    assert abs(lhs - rhs) <= 1e-13 * g.H * np.linalg.norm(a) * np.linalg.norm(b)
    # (R ubar, u')_omega = 0
    ub, up = apply_filter(fp, u), sgs_content(fp, u)
    scale = g.h * np.linalg.norm(reconstruct(fp, ub)) * np.linalg.norm(u)
    assert abs(inner_product(reconstruct(fp, ub), up, g.omega)) <= 1e-13 * scale
    # momentum invariance
    assert np.sum(g.omega * u) == pytest.approx(np.sum(g.Omega * ub), rel=1e-12, abs=1e-12 * g.h * np.abs(u).sum())
    # energy split
    E = 0.5 * inner_product(u, u, g.omega)
    assert E == pytest.approx(0.5 * inner_product(ub, ub, g.Omega) + 0.5 * inner_product(up, up, g.omega), rel=1e-12)


def test_remap_identity_and_conservation():
    rng = np.random.default_rng(3)
    u = rng.normal(size=1000)
    np.testing.assert_allclose(remap_conservative(u, 2 * np.pi, 1000), u, atol=1e-13)
    v = remap_conservative(u, 2 * np.pi, 990)
    assert v.shape == (990,)
    assert np.sum(v) * (2 * np.pi / 990) == pytest.approx(np.sum(u) * (2 * np.pi / 1000), rel=1e-12)
    np.testing.assert_allclose(remap_matrix(1000, 990, 2 * np.pi) @ u, v, atol=1e-12)


def test_remap_preserves_constants():
    np.testing.assert_allclose(remap_conservative(np.full((2, 1000), 1.7), 1.0, 990), 1.7, rtol=1e-12)
