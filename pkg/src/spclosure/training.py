"""Derivative fitting, trajectory fitting and Adam.

Training targets are precomputed once per model: encoded snapshots ``T u``,
encoded right-hand sides ``T (f_h(u) + F)`` and, for trajectory fitting,
encoded reference states ``T u(t0 + i dtbar)``.  Mini-batches never mix
boundary kinds so that one padded evaluation serves the whole batch.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .boundary import INFLOW_OUTFLOW
from .closures import CoarseContext, ClosureModel, Smagorinsky
from .datagen import ConditionBatch, SnapshotDataset
from .pde import BURGERS, rk4_step


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 20
    epochs_derivative: int = 100
    epochs_trajectory: int = 20
    traj_steps: int = 5
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "batch", "traj_steps", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs_derivative < 0 or self.epochs_trajectory < 0:
            raise ValueError("epoch counts must be non-negative")


def default_train_config(equation: str, **kw) -> TrainConfig:
    base = dict(traj_steps=5, dt=0.01) if equation == BURGERS else dict(traj_steps=20, dt=5e-3)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta, grad, st: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update; returns the new parameters and state."""
    grad = np.asarray(grad, dtype=np.float64)
    if st.m.shape != grad.shape:
        raise ValueError("optimizer state does not match the parameter vector")
    k = st.step + 1
    m = cfg.beta1 * st.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * st.v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1 ** k)
    v_hat = v / (1 - cfg.beta2 ** k)
    theta = np.asarray(theta) - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return theta, AdamState(m, v, k)


# targets -------------------------------------------------------------------

@dataclass
class Group:
    """Encoded samples sharing one simulation set (hence one boundary kind)."""

    bc_kind: str
    a: np.ndarray                 # (p, dof) encoded states
    target: np.ndarray            # (p, dof) encoded right-hand sides
    t0: np.ndarray                # (p,) snapshot times
    conds: Optional[ConditionBatch] = None   # inflow per sample
    forcing: Optional[np.ndarray] = None     # (p, dof) encoded forcing
    future: Optional[np.ndarray] = None      # (p, n, dof) encoded reference states
    has_future: Optional[np.ndarray] = None  # (p,) bool

    def __len__(self):
        return len(self.a)

    def context(self, rows) -> CoarseContext:
        alpha = None
        if self.bc_kind == INFLOW_OUTFLOW:
            sub, t0 = self.conds.subset(rows), self.t0[rows]
            alpha = lambda tau: sub(t0 + tau)  # noqa: E731
        forcing = None if self.forcing is None else self.forcing[rows]
        return CoarseContext(self.bc_kind, alpha, forcing)


def traj_stride(dt: float, save_every: float) -> int:
    r = dt / save_every
    k = int(round(r))
    if k < 1 or not math.isclose(r, k, rel_tol=1e-9):
        raise ValueError(f"dtbar={dt} is not an integer multiple of the saved interval {save_every}")
    return k


def prepare_groups(model: ClosureModel, ds: SnapshotDataset, which: str,
                   traj_steps: int = 0, dt: float = 0.01) -> list:
    rows = ds.rows(which)
    out = []
    stride = traj_stride(dt, ds.dns.save_every) if traj_steps else 0
    for s, ss in enumerate(ds.sets):
        r = rows[ds.index[rows, 0] == s]
        if len(r) == 0:
            continue
        k, i = ds.index[r, 1], ds.index[r, 2]
        u = ss.states[k, i]
        t0 = ss.times[i]
        f = ss.fine_rhs(u, t0, k)
        g = Group(ss.bc_kind, model.encode(u), model.encode(f), t0)
        if ss.bc_kind == INFLOW_OUTFLOW:
            g.conds = ConditionBatch([ss.conditions[j] for j in k])
        if ss.forcing is not None:
            g.forcing = model.encode(ss.forcing[k])
        if traj_steps:
            n_t = len(ss.times)
            has = i + traj_steps * stride < n_t
            fut = np.zeros((len(r), traj_steps) + g.a.shape[1:])
            for m in range(1, traj_steps + 1):
                j = np.minimum(i + m * stride, n_t - 1)
                fut[:, m - 1] = model.encode(ss.states[k, j])
            g.future, g.has_future = fut, has
        out.append(g)
    return out


# losses ----------------------------------------------------------------------

def derivative_loss(model: ClosureModel, a, target, ctx: CoarseContext, params=None, t=0.0):
    """``(1/p) sum_p ||G(Tu) - T f_h(u)||^2``."""
    r = model.rhs(a, t, ctx, params) - target
    p = ad.value(r).shape[0] if ad.value(r).ndim > 1 else 1
    return ad.sum_(ad.square(r)) * (1.0 / p)


def rollout(model: ClosureModel, a, ctx: CoarseContext, n: int, dt: float, params=None):
    """``n`` RK4 steps of the coarse model; returns the list of states after each step."""
    rhs = lambda x, t: model.rhs(x, t, ctx, params)  # noqa: E731
    states = []
    for i in range(n):
        a = rk4_step(rhs, a, i * dt, dt)
        states.append(a)
    return states


def trajectory_loss(model: ClosureModel, a, future, ctx: CoarseContext, dt: float, params=None):
    """``(1/(p n)) sum_p sum_i ||S^i(Tu) - T u(t0 + i dtbar)||^2``."""
    n = future.shape[-2]
    p = future.shape[0]
    total = 0.0
    for i, s in enumerate(rollout(model, a, ctx, n, dt, params)):
        total = total + ad.sum_(ad.square(s - future[:, i]))
    return total * (1.0 / (p * n))


def _trajectory_rows(g: Group):
    return np.flatnonzero(g.has_future)


def group_loss(model, groups, kind, dt, params=None, rows_per_group=None) -> float:
    """Mean loss over all samples of ``groups`` (no gradient)."""
    tot, count = 0.0, 0
    for gi, g in enumerate(groups):
        rows = np.arange(len(g)) if kind == "derivative" else _trajectory_rows(g)
        for s in range(0, len(rows), 200):
            r = rows[s:s + 200]
            ctx = g.context(r)
            if kind == "derivative":
                L = derivative_loss(model, g.a[r], g.target[r], ctx, params)
            else:
                L = trajectory_loss(model, g.a[r], g.future[r], ctx, dt, params)
            tot += ad.value(L) * len(r)
            count += len(r)
    return tot / max(count, 1)


def _batches(groups, kind, batch, rng):
    out = []
    for gi, g in enumerate(groups):
        rows = np.arange(len(g)) if kind == "derivative" else _trajectory_rows(g)
        rows = rng.permutation(rows)
        out += [(gi, rows[s:s + batch]) for s in range(0, len(rows), batch)]
    order = rng.permutation(len(out))
    return [out[k] for k in order]


@dataclass
class TrainResult:
    model: ClosureModel
    curve: list = field(default_factory=list)  # rows (epoch, phase, train, val)
    best_val: float = float("inf")
    aborted: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "phase", "train", "val"])
            for row in self.curve:
                w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])


def train(model: ClosureModel, ds: SnapshotDataset, cfg: TrainConfig, log=None) -> TrainResult:
    """Derivative fitting then trajectory fitting; keeps the best validation parameters.

    Validation loss is measured on the phase's own loss; the best parameters
    are tracked separately per phase and the trajectory phase, when run,
    decides the final checkpoint.
    """
    rng = np.random.default_rng(cfg.seed)
    need_traj = cfg.epochs_trajectory > 0
    tr = prepare_groups(model, ds, "train", cfg.traj_steps if need_traj else 0, cfg.dt)
    va = prepare_groups(model, ds, "val", cfg.traj_steps if need_traj else 0, cfg.dt)
    if need_traj:
        short = sum(int(np.sum(~g.has_future)) for g in tr)
        if short:
            warnings.warn(f"{short} training snapshots lack a full future window; skipped for trajectory fitting")
    theta = model.params.copy()
    res = TrainResult(model)
    epoch = 0
    for phase, n_epochs in (("derivative", cfg.epochs_derivative), ("trajectory", cfg.epochs_trajectory)):
        if n_epochs == 0:
            continue
        st = AdamState.zeros(theta.size)
        best_val, best_theta = group_loss(model, va, phase, cfg.dt, theta), theta.copy()
        for _ in range(n_epochs):
            epoch += 1
            tot, cnt = 0.0, 0
            try:
                for gi, rows in _batches(tr, phase, cfg.batch, rng):
                    g = tr[gi]
                    ctx = g.context(rows)
                    if phase == "derivative":
                        fn = lambda th: derivative_loss(model, g.a[rows], g.target[rows], ctx, th)  # noqa: E731
                    else:
                        fn = lambda th: trajectory_loss(model, g.a[rows], g.future[rows], ctx, cfg.dt, th)  # noqa: E731
                    L, grad = ad.value_and_grad(fn, theta)
                    if not np.all(np.isfinite(grad)):
                        raise ad.NonFiniteError("gradient")
                    theta, st = adam_step(theta, grad, st, cfg)
                    tot += L * len(rows)
                    cnt += len(rows)
            except ad.NonFiniteError:
                warnings.warn(f"non-finite loss in {phase} epoch {epoch}; training aborted")
                res.aborted = True
                break
            val = group_loss(model, va, phase, cfg.dt, theta)
            train_loss = tot / max(cnt, 1)
            res.curve.append((epoch, phase, float(train_loss), float(val)))
            if log:
                log(f"epoch {epoch} {phase} train={train_loss:.6g} val={val:.6g}")
            if val < best_val:
                best_val, best_theta = val, theta.copy()
        theta = best_theta
        res.best_val = best_val
        if res.aborted:
            break
    res.model = model.with_params(theta)
    return res


# baselines and tuning ------------------------------------------------------

def fit_smagorinsky(model: Smagorinsky, ds: SnapshotDataset, which: str = "train",
                    grid=None) -> Smagorinsky:
    """Grid search of ``C_s`` on the derivative-fitting loss."""
    grid = np.round(np.arange(0.0, 2.0 + 1e-9, 0.01), 2) if grid is None else np.asarray(grid)
    groups = prepare_groups(model, ds, which)
    losses = [group_loss(model, groups, "derivative", 0.0, np.array([c])) for c in grid]
    return model.with_params(np.array([grid[int(np.argmin(losses))]]))


def rhs_nrmse(model: ClosureModel, groups) -> float:
    """Relative RHS reproduction error on the resolved part."""
    num, den = 0.0, 0.0
    I = model.I
    for g in groups:
        for s in range(0, len(g), 200):
            r = np.arange(s, min(s + 200, len(g)))
            out = ad.value(model.rhs(g.a[r], 0.0, g.context(r)))
            num += np.sum((out[:, :I] - g.target[r, :I]) ** 2)
            den += np.sum(g.target[r, :I] ** 2)
    return float(np.sqrt(num / den)) if den else float("nan")


def hyperparameter_sweep(make_model, ds: SnapshotDataset, cfg: TrainConfig,
                         layers=(0, 1, 2), channels=(10, 20, 30), log=None) -> list:
    """Derivative-fitting-only sweep; rows ``(layers, channels, val_nrmse)``.

    ``make_model(hidden)`` builds an initialized model for a tuple of hidden widths.
    """
    cfg = replace(cfg, epochs_trajectory=0)
    rows = []
    for nl in layers:
        for ch in channels:
            model = make_model(tuple([ch] * nl))
            res = train(model, ds, cfg)
            val = rhs_nrmse(res.model, prepare_groups(res.model, ds, "val"))
            rows.append((nl, ch, val))
            if log:
                log(f"layers={nl} channels={ch} val_nrmse={val:.6g}")
    return rows
