import warnings

import numpy as np
import pytest

from spclosure import autodiff as ad
from spclosure.closures import CoarseContext, FilterTransform, Smagorinsky
from spclosure.datagen import DNSConfig, build_dataset
from spclosure.pde import rk4_step
from spclosure.training import (AdamState, TrainConfig, adam_step, default_train_config, derivative_loss,
                                fit_smagorinsky, group_loss, hyperparameter_sweep, prepare_groups, rollout,
                                traj_stride, train, trajectory_loss)
from spclosure.workflow import build_model


@pytest.fixture(scope="module")
def tiny():
    dns = DNSConfig("burgers", N=8, domain=(0.0, 2 * np.pi), dt=2.5e-3, T=0.5, save_every=5e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_dataset("burgers", "periodic", 4, np.random.default_rng(0), fraction=0.25, dns=dns)
    return dns, ds


@pytest.fixture(scope="module")
def tiny_inflow():
    dns = DNSConfig("burgers", N=16, domain=(0.0, 2 * np.pi), dt=2.5e-3, T=0.2, save_every=5e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_dataset("burgers", "inflow_outflow", 3, np.random.default_rng(1), fraction=0.3, dns=dns)
    return dns, ds


def tiny_sp(dns, ds, seed=0):
    return build_model("sp", dns, 8, ds=ds, seed=seed, hidden=(1,), kernel_size=3)


def fd_check(fn, theta, idx, eps=1e-5, tol=1e-5):
    _, g = ad.value_and_grad(fn, theta)
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = eps
        fd = (ad.value(fn(theta + e)) - ad.value(fn(theta - e))) / (2 * eps)
        assert abs(g[i] - fd) <= tol * max(abs(fd), abs(g[i]), 1e-3), (i, g[i], fd)


def test_adam_examples():
    cfg = TrainConfig(lr=0.1)
    th = np.array([1.0, -2.0])
    out, st = adam_step(th, np.zeros(2), AdamState.zeros(2), cfg)
    np.testing.assert_array_equal(out, th)
    g = np.array([0.3, -4.0])
    out, st = adam_step(th, g, AdamState.zeros(2), cfg)
    # first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(out, th - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-15)
    assert st.step == 1
    a1, s1 = adam_step(out, g, st, cfg)
    a2, s2 = adam_step(out, g, st, cfg)
    np.testing.assert_array_equal(a1, a2)
    m = 0.9 * (0.1 * g) + 0.1 * g
    v = 0.999 * (0.001 * g * g) + 0.001 * g * g
    ref = out - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(a1, ref, rtol=1e-14)
    with pytest.raises(ValueError):
        adam_step(th, np.zeros(3), AdamState.zeros(2), cfg)


def test_config_validation_and_defaults():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs_derivative=-1)
    b, k = default_train_config("burgers"), default_train_config("kdv")
    assert (b.traj_steps, b.dt, b.batch, b.lr) == (5, 0.01, 20, 1e-3)
    assert (k.traj_steps, k.dt) == (20, 5e-3)


def test_traj_stride():
    assert traj_stride(0.01, 5e-3) == 2
    assert traj_stride(0.01, 2.5e-3) == 4
    with pytest.raises(ValueError):
        traj_stride(0.007, 5e-3)


def test_derivative_loss_examples(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    g = prepare_groups(m, ds, "all")[0]
    out = ad.value(m.rhs(g.a[:3], 0.0))
    assert ad.value(derivative_loss(m, g.a[:3], out, CoarseContext())) == 0.0
    r = out[0] - g.target[0]
    assert ad.value(derivative_loss(m, g.a[:1], g.target[:1], CoarseContext())) == pytest.approx(r @ r, rel=1e-13)
    brute = np.mean([np.sum((out[i] - g.target[i]) ** 2) for i in range(3)])
    assert ad.value(derivative_loss(m, g.a[:3], g.target[:3], CoarseContext())) == pytest.approx(brute, rel=1e-13)


def test_trajectory_loss_examples(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    g = prepare_groups(m, ds, "all", traj_steps=1, dt=0.01)[0]
    a = g.a[:2]
    step = rk4_step(lambda x, t: ad.value(m.rhs(x, t)), a, 0.0, 0.01)
    assert ad.value(trajectory_loss(m, a, step[:, None], CoarseContext(), 0.01)) == 0.0
    fut = g.future[:2]
    ref = np.sum((step - fut[:, 0]) ** 2) / 2
    assert ad.value(trajectory_loss(m, a, fut, CoarseContext(), 0.01)) == pytest.approx(ref, rel=1e-13)
    assert len(rollout(m, a, CoarseContext(), 3, 0.01)) == 3


def test_trajectory_targets_use_stride(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    g = prepare_groups(m, ds, "train", traj_steps=5, dt=0.01)[0]
    s, k, i = ds.index[ds.rows("train")[0]]
    ss = ds.sets[s]
    if i + 10 < len(ss.times):
        for n in range(1, 6):
            np.testing.assert_allclose(g.future[0, n - 1], m.encode(ss.states[k, i + 2 * n]))
    assert g.has_future.dtype == bool


def test_gradients_match_finite_differences(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds, seed=3)
    g = prepare_groups(m, ds, "train", traj_steps=5, dt=0.01)[0]
    rows = np.flatnonzero(g.has_future)[:2]
    ctx = CoarseContext()
    theta = m.params
    idx = range(theta.size)
    fd_check(lambda th: derivative_loss(m, g.a[rows], g.target[rows], ctx, th), theta, idx)
    fd_check(lambda th: trajectory_loss(m, g.a[rows], g.future[rows], ctx, 0.01, th), theta, idx, tol=1e-4)


def test_inflow_gradients(tiny_inflow):
    dns, ds = tiny_inflow
    m = build_model("sp", dns, 8, ds=ds, seed=1, hidden=(1,), kernel_size=3)
    g = prepare_groups(m, ds, "all", traj_steps=2, dt=0.01)[0]
    rows = np.flatnonzero(g.has_future)[:2]
    ctx = g.context(rows)
    fd_check(lambda th: trajectory_loss(m, g.a[rows], g.future[rows], ctx, 0.01, th), m.params,
             range(0, m.params.size, 3), tol=1e-4)
    assert np.all(np.isfinite(g.target)) and g.forcing is not None


def test_zero_epochs_returns_initialization(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    res = train(m, ds, TrainConfig(epochs_derivative=0, epochs_trajectory=0))
    np.testing.assert_array_equal(res.model.params, m.params)
    assert res.curve == []


def test_training_reduces_loss_and_is_deterministic(tiny, tmp_path):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    cfg = TrainConfig(lr=1e-2, epochs_derivative=15, epochs_trajectory=2, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r1 = train(m, ds, cfg)
        r2 = train(m, ds, cfg)
    assert r1.curve == r2.curve
    np.testing.assert_array_equal(r1.model.params, r2.model.params)
    tr = prepare_groups(m, ds, "train")
    assert group_loss(r1.model, tr, "derivative", 0.01) < group_loss(m, tr, "derivative", 0.01)
    assert [c[1] for c in r1.curve] == ["derivative"] * 15 + ["trajectory"] * 2
    r1.write_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,phase,train,val" and len(lines) == 18


def test_best_validation_checkpoint(tiny):
    dns, ds = tiny
    m = tiny_sp(dns, ds)
    res = train(m, ds, TrainConfig(lr=1e-2, epochs_derivative=5, epochs_trajectory=0))
    va = prepare_groups(m, ds, "val")
    assert group_loss(res.model, va, "derivative", 0.01) == pytest.approx(
        min([group_loss(m, va, "derivative", 0.01)] + [c[3] for c in res.curve]), rel=1e-12)


def test_fit_smagorinsky_grid(tiny):
    dns, ds = tiny
    sm = build_model("smagorinsky", dns, 4)
    fitted = fit_smagorinsky(sm, ds, grid=[0.0, 0.1, 0.5])
    groups = prepare_groups(sm, ds, "train")
    losses = [group_loss(sm, groups, "derivative", 0.0, np.array([c])) for c in (0.0, 0.1, 0.5)]
    assert fitted.Cs == [0.0, 0.1, 0.5][int(np.argmin(losses))]
    assert isinstance(fitted, Smagorinsky)


def test_sweep_cardinality(tiny):
    dns, ds = tiny
    cfg = TrainConfig(epochs_derivative=1, epochs_trajectory=3)
    rows = hyperparameter_sweep(lambda h: build_model("sp", dns, 8, ds=ds, hidden=h, kernel_size=3), ds, cfg,
                                layers=(0, 1, 2), channels=(2, 3, 4))
    assert len(rows) == 9
    assert [(r[0], r[1]) for r in rows][:4] == [(0, 2), (0, 3), (0, 4), (1, 2)]
    assert all(np.isfinite(r[2]) and r[2] >= 0 for r in rows)


def test_vanilla_cnn_trains(tiny):
    dns, ds = tiny
    m = build_model("cnn", dns, 4, hidden=(2,), kernel_size=3)
    res = train(m, ds, TrainConfig(lr=1e-2, epochs_derivative=3, epochs_trajectory=0))
    assert len(res.curve) == 3
    assert isinstance(m.transform, FilterTransform)
