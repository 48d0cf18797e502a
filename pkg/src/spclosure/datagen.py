"""Random simulation conditions and reference (DNS) datasets.

Conditions are random Fourier series

    xi(y) = a1 + a2 / sqrt(M) * sum_{i=2}^{M} C_i1 sin(2 pi i y / a3) + C_i2 cos(2 pi i y / a3)

with ``M ~ U{2..8}`` and ``C_ij = sign * U[1/2, 1]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary import INFLOW_OUTFLOW, PERIODIC
from .pde import BURGERS, KDV, BCSpec, PDEConfig, burgers_config, full_rhs, with_forcing, integrate, kdv_config

M_MIN, M_MAX = 2, 8


@dataclass(frozen=True)
class FourierCondition:
    alpha1: float
    alpha2: float
    alpha3: float
    M: int
    C: np.ndarray  # (M, 2); row i-1 holds C_i1, C_i2

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.shape != (self.M, 2):
            raise ValueError(f"coefficients must have shape ({self.M}, 2)")
        if self.alpha3 <= 0:
            raise ValueError("period alpha3 must be positive")
        object.__setattr__(self, "C", C)

    def __call__(self, y):
        return eval_condition(self, y)


def sample_condition(alpha1, alpha2, alpha3, rng) -> FourierCondition:
    if alpha3 <= 0:
        raise ValueError("period alpha3 must be positive")
    M = int(rng.integers(M_MIN, M_MAX + 1))
    sign = rng.choice([-1.0, 1.0], size=(M, 2))
    C = sign * rng.uniform(0.5, 1.0, size=(M, 2))
    return FourierCondition(float(alpha1), float(alpha2), float(alpha3), M, C)


def eval_condition(fc: FourierCondition, y):
    y = np.asarray(y, dtype=np.float64)
    i = np.arange(2, fc.M + 1)
    arg = np.multiply.outer(y, i * (2 * np.pi / fc.alpha3))
    series = np.sin(arg) @ fc.C[1:, 0] + np.cos(arg) @ fc.C[1:, 1]
    return fc.alpha1 + fc.alpha2 / np.sqrt(fc.M) * series


class ConditionBatch:
    """Vectorized evaluation of several conditions: ``batch(y)`` has shape (n, ...)."""

    def __init__(self, conds):
        conds = list(conds)
        n = len(conds)
        self.conds = conds
        self.a1 = np.array([c.alpha1 for c in conds])
        self.scale = np.array([c.alpha2 / np.sqrt(c.M) for c in conds])
        self.a3 = np.array([c.alpha3 for c in conds])
        self.C = np.zeros((n, M_MAX, 2))
        for k, c in enumerate(conds):
            self.C[k, 1:c.M] = c.C[1:]

    def __len__(self):
        return len(self.conds)

    def subset(self, idx) -> "ConditionBatch":
        return ConditionBatch([self.conds[i] for i in np.atleast_1d(idx)])

    def __call__(self, y):
        """Evaluate condition ``k`` at ``y[k]`` (``y`` scalar or shape (n,))."""
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), self.a1.shape)
        i = np.arange(1, M_MAX + 1)
        arg = (y / self.a3)[:, None] * (2 * np.pi * i)
        series = np.sum(np.sin(arg) * self.C[..., 0] + np.cos(arg) * self.C[..., 1], axis=-1)
        return self.a1 + self.scale * series


@dataclass(frozen=True)
class DNSConfig:
    equation: str
    N: int
    domain: tuple
    dt: float
    T: float
    save_every: float = 5e-3
    nu: float = 0.01

    def pde(self) -> PDEConfig:
        return burgers_config(self.nu) if self.equation == BURGERS else kdv_config()

    @property
    def h(self) -> float:
        return (self.domain[1] - self.domain[0]) / self.N

    @property
    def x(self) -> np.ndarray:
        return self.domain[0] + (np.arange(self.N) + 0.5) * self.h

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]


def default_dns(equation: str, **kw) -> DNSConfig:
    if equation == BURGERS:
        base = dict(equation=BURGERS, N=1000, domain=(0.0, 2 * np.pi), dt=2.5e-3, T=10.0)
    elif equation == KDV:
        base = dict(equation=KDV, N=600, domain=(0.0, 32.0), dt=1e-4, T=10.0, nu=0.0)
    else:
        raise ValueError(f"unknown equation {equation!r}")
    base.update(kw)
    return DNSConfig(**base)


@dataclass
class SimulationSet:
    """A batch of reference simulations sharing equation, grid and BC kind."""

    dns: DNSConfig
    bc_kind: str
    times: np.ndarray           # (n_t,)
    states: np.ndarray          # (n_traj, n_t, N)
    conditions: list            # initial-condition or inflow FourierCondition per trajectory
    forcing: Optional[np.ndarray] = None  # (n_traj, N) or None
    forcing_conditions: Optional[list] = None

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def alpha(self, idx=None):
        """Inflow function for trajectories ``idx`` (None for periodic runs)."""
        if self.bc_kind != INFLOW_OUTFLOW:
            return None
        batch = ConditionBatch(self.conditions)
        return batch if idx is None else batch.subset(idx)

    def bc(self, idx=None) -> BCSpec:
        return BCSpec(self.bc_kind, self.alpha(idx))

    def fine_rhs(self, u, t, idx):
        """``f_h(u) + F`` for snapshots ``u`` of trajectories ``idx`` at times ``t``."""
        idx = np.atleast_1d(idx)
        cfg = self.dns.pde()
        bc = BCSpec(PERIODIC) if self.bc_kind == PERIODIC else BCSpec(
            INFLOW_OUTFLOW, lambda tt, a=self.alpha(idx): a(tt))
        out = full_rhs(cfg, u, self.dns.h, bc, t)
        if self.forcing is not None:
            out = out + self.forcing[idx]
        return out


def make_conditions(dns: DNSConfig, bc_kind: str, count: int, rng):
    """Initial states, condition records and forcing for ``count`` simulations."""
    x = dns.x
    if dns.equation == KDV:
        if bc_kind != PERIODIC:
            raise ValueError("KdV data is periodic only")
        conds = [sample_condition(0.0, 0.6, dns.length, rng) for _ in range(count)]
        return np.stack([c(x) for c in conds]), conds, None, None
    if bc_kind == PERIODIC:
        conds = [sample_condition(2.0, 1.0, dns.length, rng) for _ in range(count)]
        return np.stack([c(x) for c in conds]), conds, None, None
    conds = [sample_condition(2.0, 1.0, 2 * np.pi, rng) for _ in range(count)]
    fconds = [sample_condition(0.0, 0.5, dns.length, rng) for _ in range(count)]
    u0 = np.stack([np.full(dns.N, c(0.0)) for c in conds])
    F = np.stack([c(x) for c in fconds])
    return u0, conds, F, fconds


def _integrate_batch(dns: DNSConfig, bc_kind: str, u0, conds, forcing):
    cfg = with_forcing(dns.pde(), forcing)
    alpha = ConditionBatch(conds) if bc_kind == INFLOW_OUTFLOW else None
    bc = BCSpec(bc_kind, alpha)
    rhs = lambda u, t: full_rhs(cfg, u, dns.h, bc, t)  # noqa: E731
    return integrate(rhs, u0, dns.dt, dns.T, dns.save_every)


def run_dns(dns: DNSConfig, bc_kind: str, u0, conds, forcing=None) -> SimulationSet:
    """Integrate a batch of reference simulations; divergent runs are dropped with a warning."""
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    traj = _integrate_batch(dns, bc_kind, u0, conds, forcing)
    keep = np.arange(len(conds))
    if traj.diverged:
        # find the culprits one by one, then rerun the survivors together
        keep = []
        for k in range(len(conds)):
            one = _integrate_batch(dns, bc_kind, u0[k:k + 1], conds[k:k + 1],
                                   None if forcing is None else forcing[k:k + 1])
            if one.diverged:
                warnings.warn(f"reference simulation {k} diverged at t={one.blowup_time:.4g}; dropped")
            else:
                keep.append(k)
        keep = np.array(keep, dtype=int)
        forcing = None if forcing is None else np.asarray(forcing)[keep]
        if len(keep) == 0:
            return SimulationSet(dns, bc_kind, traj.times, np.zeros((0, 0, dns.N)), [], forcing)
        traj = _integrate_batch(dns, bc_kind, u0[keep], [conds[k] for k in keep], forcing)
    return SimulationSet(dns, bc_kind, traj.times, np.moveaxis(traj.states, 0, 1),
                         [conds[k] for k in keep], None if forcing is None else np.asarray(forcing))


def simulate_conditions(dns: DNSConfig, bc_kind: str, count: int, rng, max_batch: int = 25):
    u0, conds, F, fconds = make_conditions(dns, bc_kind, count, rng)
    parts = []
    for s in range(0, count, max_batch):
        sl = slice(s, s + max_batch)
        parts.append(run_dns(dns, bc_kind, u0[sl], conds[sl], None if F is None else F[sl]))
    out = parts[0]
    if len(parts) > 1:
        out = SimulationSet(dns, bc_kind, out.times, np.concatenate([p.states for p in parts]),
                            sum((p.conditions for p in parts), []),
                            None if F is None else np.concatenate([p.forcing for p in parts]))
    if fconds is not None:
        # keep forcing records aligned with surviving trajectories
        ids = {id(c): k for k, c in enumerate(conds)}
        keep = [ids[id(c)] for c in out.conditions]
        out.forcing_conditions = [fconds[k] for k in keep]
    return out


@dataclass
class SnapshotDataset:
    """Subsampled snapshots referencing one or more simulation sets.

    ``index`` rows are ``(set, trajectory, time index)``; ``split`` is 0 for
    training and 1 for validation.
    """

    sets: list
    index: np.ndarray
    split: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.index)

    @property
    def dns(self) -> DNSConfig:
        return self.sets[0].dns

    def rows(self, which: str = "all") -> np.ndarray:
        if which == "all":
            return np.arange(len(self.index))
        code = {"train": 0, "val": 1}[which]
        return np.flatnonzero(self.split == code)

    def states(self, rows=None) -> np.ndarray:
        rows = self.rows() if rows is None else np.asarray(rows)
        return np.stack([self.sets[s].states[k, i] for s, k, i in self.index[rows]]) if len(rows) else \
            np.zeros((0, self.dns.N))

    def times(self, rows=None) -> np.ndarray:
        rows = self.rows() if rows is None else np.asarray(rows)
        return np.array([self.sets[s].times[i] for s, k, i in self.index[rows]])


def subsample(sets, fraction: float, rng, train_fraction: float = 0.7) -> SnapshotDataset:
    """Sample ``fraction`` of all saved (trajectory, time) pairs and split by trajectory.

    Trajectories, not snapshots, are assigned to training or validation so
    that validation snapshots come from unseen conditions.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    pairs = np.array([(s, k, i) for s, ss in enumerate(sets)
                      for k in range(ss.n_traj) for i in range(len(ss.times))], dtype=np.int64)
    n = max(1, int(round(fraction * len(pairs))))
    pick = np.sort(rng.choice(len(pairs), size=n, replace=False))
    index = pairs[pick]
    split = np.zeros(len(index), dtype=np.int64)
    for s, ss in enumerate(sets):
        order = rng.permutation(ss.n_traj)
        n_train = int(round(train_fraction * ss.n_traj))
        if ss.n_traj > 1:
            n_train = min(max(n_train, 1), ss.n_traj - 1)
        val = set(order[n_train:].tolist())
        mask = (index[:, 0] == s) & np.isin(index[:, 1], list(val))
        split[mask] = 1
    return SnapshotDataset(list(sets), index, split)


def build_dataset(equation: str, bc_kind: str, count: int, rng, fraction: float = 0.1,
                  dns: Optional[DNSConfig] = None, train_fraction: float = 0.7) -> SnapshotDataset:
    """Run ``count`` reference simulations and subsample their snapshots.

    ``bc_kind="mixed"`` splits the count evenly between periodic and
    inflow/outflow Burgers runs.
    """
    if count < 1:
        raise ValueError("count must be positive")
    dns = default_dns(equation) if dns is None else dns
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if bc_kind == "mixed":
        if equation != BURGERS:
            raise ValueError("mixed boundary data only exists for Burgers")
        n_p = (count + 1) // 2
        sets = [simulate_conditions(dns, PERIODIC, n_p, rng)]
        if count - n_p:
            sets.append(simulate_conditions(dns, INFLOW_OUTFLOW, count - n_p, rng))
    else:
        sets = [simulate_conditions(dns, bc_kind, count, rng)]
    ds = subsample(sets, fraction, rng, train_fraction)
    ds.meta.update(equation=equation, bc_kind=bc_kind, count=count, fraction=fraction)
    return ds
