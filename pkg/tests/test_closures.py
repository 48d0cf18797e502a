import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spclosure import autodiff as ad
from spclosure.audits import random_sp
from spclosure.boundary import INFLOW_OUTFLOW
from spclosure.closures import (CoarseContext, FilterTransform, NoClosure, Smagorinsky, SPClosure, VanillaCNN,
                                constrained_stencil_apply, constrained_weights, default_cnn_net, default_sp_net,
                                make_sp, no_closure_rhs, smagorinsky_rhs, sp_momentum_residual, sp_rhs,
                                transposed_kernel, vanilla_cnn_rhs)
from spclosure.compression import CompressionOperator, StateTransform
from spclosure.grid import make_filter_pair, make_grid_pair
from spclosure.nn import ConvNet, forward
from spclosure.pde import BCSpec, burgers_config, full_rhs, kdv_config


def circulant(n, taps):
    A = np.zeros((n, n))
    for off, w in taps.items():
        A[np.arange(n), (np.arange(n) + off) % n] += w
    return A


def transform(I, J, length=2 * np.pi, seed=0):
    fp = make_filter_pair(make_grid_pair((0.0, length), I, J))
    th = np.random.default_rng(seed).normal(size=J)
    return StateTransform(fp, CompressionOperator(th / np.linalg.norm(th)))


def dense_blocks(w, I, constrained=True):
    """Dense (2I x 2I) operator of a (2, 2, 2B+1) block stencil."""
    w = np.array(w, dtype=float)
    if constrained:
        w[:, 0] -= w[:, 0].mean(axis=-1, keepdims=True)
    Bh = w.shape[-1] // 2
    M = np.zeros((2 * I, 2 * I))
    for o in range(2):
        for c in range(2):
            M[o * I:(o + 1) * I, c * I:(c + 1) * I] = circulant(I, {m - Bh: w[o, c, m] for m in range(w.shape[-1])})
    return M


def dense_sp_closure(m, a):
    """Independent dense evaluation of the SP closure for one periodic state."""
    I, H = m.I, m.H
    tensors = m.layout().unpack(m.params)
    net = m.net.with_params(m.params[:m.net.n_params])
    f = full_rhs(m.cfg, a[:I], H, BCSpec())
    fields = forward(net, np.stack([a[:I], a[I:], f]))
    k = np.diag(np.concatenate([fields[-2], fields[-1]]))
    B2, B3 = dense_blocks(tensors["B2"], I), dense_blocks(tensors["B3"], I)
    out = (B2.T @ k @ B3 - B3.T @ k @ B2) @ a
    if m.include_dissipation:
        q2 = np.diag(np.concatenate([fields[0], fields[1]]) ** 2)
        B1 = dense_blocks(tensors["B1"], I)
        out = out - B1.T @ q2 @ B1 @ a
    return out / H


def test_constrained_weights_example():
    np.testing.assert_allclose(constrained_weights(np.array([1.0, 2.0, 3.0])), [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(constrained_weights(np.array([1.0, 2.0, 3.0]), False), [1.0, 2.0, 3.0])


def test_constrained_stencil_on_constant_and_dense():
    rng = np.random.default_rng(0)
    b = rng.normal(size=5)
    np.testing.assert_allclose(constrained_stencil_apply(b, np.full(12, 3.3)), 0.0, atol=1e-14)
    f = rng.normal(size=12)
    bb = b - b.mean()
    A = circulant(12, {j - 2: bb[j] for j in range(5)})
    np.testing.assert_allclose(constrained_stencil_apply(b, f), A @ f, atol=1e-14)
    A = circulant(12, {j - 2: b[j] for j in range(5)})
    np.testing.assert_allclose(constrained_stencil_apply(b, f, constrained=False), A @ f, atol=1e-14)
    with pytest.raises(ValueError):
        constrained_stencil_apply(np.ones(4), f)


def test_transposed_kernel_is_adjoint():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 2, 5))
    I = 9
    M = dense_blocks(w, I, constrained=False)
    a, b = rng.normal(size=(2, I)), rng.normal(size=(2, I))
    pad = lambda x: np.concatenate([x[:, -2:], x, x[:, :2]], -1)  # noqa: E731
    Ma = ad.conv1d(pad(a)[None], w)[0]
    Mtb = ad.conv1d(pad(b)[None], transposed_kernel(w))[0]
    np.testing.assert_allclose(Ma.ravel(), M @ a.ravel(), atol=1e-13)
    np.testing.assert_allclose(Mtb.ravel(), M.T @ b.ravel(), atol=1e-13)


@pytest.mark.parametrize("equation", ["burgers", "kdv"])
def test_sp_matches_dense_oracle(equation):
    rng = np.random.default_rng(2)
    m = random_sp(equation, 12, 4, rng, hidden=(5, 5))
    a = rng.normal(size=24)
    c = ad.value(m.closure(a, 0.0))[0]
    np.testing.assert_allclose(c, dense_sp_closure(m, a), rtol=1e-11, atol=1e-11 * np.abs(c).max())
    r = sp_rhs(m, a)
    f = full_rhs(m.cfg, a[:12], m.H, BCSpec())
    np.testing.assert_allclose(r, np.concatenate([f, np.zeros(12)]) + c, atol=1e-11 * np.abs(r).max())


def test_sp_zero_cnn_output_reduces_to_coarse_rhs():
    st_ = transform(10, 5)
    m = make_sp(burgers_config(), st_, seed=0)
    p = m.params.copy()
    n = m.net.n_params
    p[:n] = 0.0  # weights and biases zero -> k = q = 0
    m = m.with_params(p)
    a = np.random.default_rng(3).normal(size=20)
    f = full_rhs(burgers_config(), a[:10], m.H)
    np.testing.assert_allclose(sp_rhs(m, a), np.concatenate([f, np.zeros(10)]), atol=1e-14)


def test_sp_energy_law_and_momentum():
    rng = np.random.default_rng(4)
    m = random_sp("burgers", 16, 5, rng, hidden=(6, 6))
    a = rng.normal(size=16 * 2) * 1.5
    H, I = m.H, m.I
    f = full_rhs(m.cfg, a[:I], H)
    lhs = H * a @ sp_rhs(m, a)
    tensors = m.layout().unpack(m.params)
    net = m.net.with_params(m.params[:m.net.n_params])
    fields = forward(net, np.stack([a[:I], a[I:], f]))
    qB1a = np.concatenate([fields[0], fields[1]]) * (dense_blocks(tensors["B1"], I) @ a)
    rhs = H * a[:I] @ f - qB1a @ qB1a
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-11 * (abs(H * a[:I] @ f) + qB1a @ qB1a))
    assert sp_momentum_residual(m, a[None]) < 1e-12 * np.linalg.norm(a)


def test_momentum_negative_control():
    rng = np.random.default_rng(5)
    m = random_sp("burgers", 16, 5, rng, hidden=(6, 6))
    a = rng.normal(size=32)
    tensors = m.layout().unpack(m.params)
    net = m.net.with_params(m.params[:m.net.n_params])
    I, H = 16, m.H
    fields = forward(net, np.stack([a[:I], a[I:], full_rhs(m.cfg, a[:I], H)]))
    k = np.diag(np.concatenate([fields[-2], fields[-1]]))
    B2 = dense_blocks(tensors["B2"], I, constrained=False)
    B3 = dense_blocks(tensors["B3"], I, constrained=False)
    c = (B2.T @ k @ B3 - B3.T @ k @ B2) @ a / H
    assert abs(H * c[:I].sum()) > 1e-6
    assert sp_momentum_residual(m, np.zeros((1, 32))) == 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), I=st.integers(8, 24), J=st.integers(2, 8), kdv=st.booleans())
def test_sp_structure_property(seed, I, J, kdv):
    rng = np.random.default_rng(seed)
    m = random_sp("kdv" if kdv else "burgers", I, J, rng, hidden=(4, 4))
    a = rng.normal(size=(1, 2 * I))
    _, skew, diss = m.terms(a, 0.0)
    A = a.reshape(1, 2, I)
    sk = ad.value(skew)
    assert abs(np.sum(A * sk)) <= 1e-11 * max(np.sum(np.abs(A * sk)), 1e-300)
    if diss is not None:
        assert -np.sum(A * ad.value(diss)) <= 1e-14 * np.sum(np.abs(A * ad.value(diss)))
    assert sp_momentum_residual(m, a) < 1e-12 * max(1.0, np.linalg.norm(a))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.integers(1, 15))
def test_sp_translation_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    m = random_sp("burgers", 16, 3, rng, hidden=(4,))
    a = rng.normal(size=(2, 16))
    r = ad.value(m.rhs(a.ravel(), 0.0)).reshape(2, 16)
    rs = ad.value(m.rhs(np.roll(a, shift, -1).ravel(), 0.0)).reshape(2, 16)
    np.testing.assert_allclose(rs, np.roll(r, shift, -1), atol=1e-12 * np.abs(r).max())


def test_sp_inflow_value_is_local_to_the_left_boundary():
    # the inflow value reaches 2B + r + p cells into the domain, no further
    rng = np.random.default_rng(6)
    m = random_sp("burgers", 12, 4, rng, hidden=(3,))
    a = rng.normal(size=24)
    ctx = CoarseContext(INFLOW_OUTFLOW, lambda t: 0.3 + 0.0 * t)
    r1 = ad.value(m.rhs(a, 0.0, ctx))
    assert np.all(np.isfinite(r1))
    ctx2 = CoarseContext(INFLOW_OUTFLOW, lambda t: 0.8)
    assert not np.allclose(r1[:3], ad.value(m.rhs(a, 0.0, ctx2))[:3])
    reach = 2 * m.B + m.net.radius + m.cfg.radius
    r2 = ad.value(m.rhs(a, 0.0, ctx2))
    np.testing.assert_allclose(r1[reach:12], r2[reach:12], atol=1e-12)
    np.testing.assert_allclose(r1[12 + reach:], r2[12 + reach:], atol=1e-12)


def test_sp_forcing_added():
    rng = np.random.default_rng(7)
    m = random_sp("burgers", 10, 3, rng, hidden=(3,))
    a = rng.normal(size=20)
    F = rng.normal(size=20)
    np.testing.assert_allclose(ad.value(m.rhs(a, 0.0, CoarseContext(forcing=F))), sp_rhs(m, a) + F, atol=1e-13)


def test_sp_parameter_counts():
    st_ = transform(30, 20, 32.0)
    kd = make_sp(kdv_config(), st_)
    assert kd.layout().size == ConvNet(3, (30, 30), 2, 5).n_params + 2 * 2 * 2 * 5
    bu = make_sp(burgers_config(), transform(30, 10))
    assert bu.layout().size == ConvNet(3, (20, 20), 4, 5).n_params + 3 * 2 * 2 * 3
    with pytest.raises(ValueError):
        SPClosure(burgers_config(), st_, ConvNet(3, (4,), 3, 5))
    with pytest.raises(ValueError):
        SPClosure(burgers_config(), st_, default_sp_net("burgers"), B=0)


def test_sp_non_finite_raises():
    rng = np.random.default_rng(8)
    m = random_sp("burgers", 10, 3, rng, hidden=(3,))
    a = rng.normal(size=20)
    a[3] = np.inf
    with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
        m.rhs(a, 0.0)


def vanilla(I=16, J=4, seed=0):
    fp = make_filter_pair(make_grid_pair((0.0, 2 * np.pi), I, J))
    return VanillaCNN(burgers_config(), FilterTransform(fp), default_cnn_net((5, 5), 7)).init(seed)


def test_vanilla_cnn_zero_and_dense():
    m = vanilla()
    ub = np.random.default_rng(9).normal(size=16)
    f = full_rhs(m.cfg, ub, m.H)
    z = m.with_params(np.zeros_like(m.params))
    np.testing.assert_allclose(vanilla_cnn_rhs(z, ub), f, atol=1e-14)
    out = vanilla_cnn_rhs(m, ub)
    v = forward(m.net.with_params(m.params), np.stack([ub, f]))[0]
    Q = (circulant(16, {1: 1.0, 0: -1.0})) / m.H
    np.testing.assert_allclose(out - f, Q @ v, atol=1e-12)
    assert abs(m.H * np.sum(out - f)) < 1e-12 * np.abs(out - f).sum()


def test_smagorinsky_properties():
    fp = make_filter_pair(make_grid_pair((0.0, 2 * np.pi), 20, 5))
    tr = FilterTransform(fp)
    sm = Smagorinsky(burgers_config(), tr, 0.3)
    np.testing.assert_allclose(sm.closure(np.full(20, 1.7), 0.0, CoarseContext()), 0.0, atol=1e-12)
    ub = np.random.default_rng(10).normal(size=20)
    c = sm.closure(ub, 0.0, CoarseContext())
    assert ub @ c * sm.H <= 0
    # dense oracle of -Q^T diag(nu_t) Q
    Q = circulant(20, {1: 1.0, 0: -1.0}) / sm.H
    nu = (sm.H * 0.3) ** 2 * np.abs(Q @ ub)
    np.testing.assert_allclose(c, -Q.T @ (nu * (Q @ ub)), atol=1e-12)
    nc = NoClosure(burgers_config(), tr)
    np.testing.assert_allclose(smagorinsky_rhs(Smagorinsky(burgers_config(), tr, 0.0), ub), no_closure_rhs(nc, ub))
    with pytest.raises(ValueError):
        Smagorinsky(burgers_config(), tr, -0.1)


def test_no_closure_examples():
    fp = make_filter_pair(make_grid_pair((0.0, 32.0), 20, 5))
    nc = NoClosure(kdv_config(), FilterTransform(fp))
    ub = np.random.default_rng(11).normal(size=20)
    out = no_closure_rhs(nc, ub)
    np.testing.assert_allclose(out, full_rhs(kdv_config(), ub, nc.H))
    assert abs(ub @ out) < 1e-12 * np.linalg.norm(ub) * np.linalg.norm(out)
    bnc = NoClosure(burgers_config(), FilterTransform(fp))
    np.testing.assert_allclose(no_closure_rhs(bnc, np.full(20, 2.0)), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        NoClosure(burgers_config(forcing=np.ones(20)), FilterTransform(fp))


def test_batched_rhs_matches_rows():
    rng = np.random.default_rng(12)
    m = random_sp("kdv", 10, 3, rng, hidden=(3,))
    a = rng.normal(size=(4, 20))
    out = ad.value(m.rhs(a, 0.0))
    for i in range(4):
        np.testing.assert_allclose(out[i], ad.value(m.rhs(a[i], 0.0)), atol=1e-13)
