"""End-to-end helpers shared by the command line and the test suites:
model construction for a DOF budget, coarse simulation, evaluation against
filtered DNS, and persistence of datasets, compressions and checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .boundary import INFLOW_OUTFLOW
from .closures import (CoarseContext, FilterTransform, NoClosure, Smagorinsky, SPClosure, VanillaCNN,
                       default_B, default_cnn_net, default_sp_net)
from .compression import CompressionOperator, StateTransform, compression_loss, fit_compression
from .container import read_container, write_container
from .datagen import (DNSConfig, FourierCondition, M_MAX, SimulationSet,
                      SnapshotDataset)
from .grid import make_filter_pair, make_grid_pair, remap_conservative
from .metrics import energy_report, integrated_nrmse, nrmse, RunReport
from .nn import ConvNet
from .pde import BURGERS, integrate

MODEL_KINDS = ("sp", "cnn", "smagorinsky", "nc")


def coarse_cells(kind: str, dof: int) -> int:
    if dof < 2:
        raise ValueError("DOF must be at least 2")
    if kind == "sp":
        if dof % 2:
            raise ValueError("SP closures need an even DOF (DOF = 2I)")
        return dof // 2
    return dof


def filter_for(dns: DNSConfig, I: int):
    """Filter pair on the fine grid closest to ``dns.N`` that ``I`` divides."""
    J = max(1, int(round(dns.N / I)))
    g = make_grid_pair(dns.domain, I, J)
    return make_filter_pair(g), (dns.N if I * J != dns.N else None)


def fit_transform(ds: SnapshotDataset, I: int, which: str = "train") -> StateTransform:
    fp, n_src = filter_for(ds.dns, I)
    snaps = ds.states(ds.rows(which))
    if n_src:
        snaps = remap_conservative(snaps, ds.dns.length, fp.N)
    return StateTransform(fp, fit_compression(snaps, fp), n_src)


def validation_compression_loss(ds: SnapshotDataset, st: StateTransform) -> float:
    """``L_s`` on the validation snapshots; NaN when the split left none."""
    rows = ds.rows("val")
    if len(rows) == 0:
        return float("nan")
    snaps = st.prepare(ds.states(rows))
    return compression_loss(st.comp, snaps, st.fp)


def build_model(kind: str, dns: DNSConfig, dof: int, ds: Optional[SnapshotDataset] = None,
                transform: Optional[StateTransform] = None, seed: int = 0, hidden=None,
                kernel_size=None, B=None, Cs: float = 0.0):
    """Initialized closure model of ``kind`` with ``dof`` degrees of freedom."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cfg = dns.pde()
    I = coarse_cells(kind, dof)
    if kind == "sp":
        if transform is None:
            if ds is None:
                raise ValueError("SP models need a dataset or a fitted compression")
            transform = fit_transform(ds, I)
        net = default_sp_net(dns.equation, hidden, kernel_size or 5)
        B = default_B(dns.equation) if B is None else B
        return SPClosure(cfg, transform, net, B, dns.equation == BURGERS).init(seed)
    fp, n_src = filter_for(dns, I)
    ft = FilterTransform(fp, n_src)
    if kind == "nc":
        return NoClosure(cfg, ft)
    if kind == "smagorinsky":
        return Smagorinsky(cfg, ft, Cs)
    net = default_cnn_net(hidden or (20, 20), kernel_size or 7)
    return VanillaCNN(cfg, ft, net).init(seed)


# simulation ----------------------------------------------------------------

def context_for(model, sims: SimulationSet, idx) -> CoarseContext:
    idx = np.atleast_1d(idx)
    alpha = sims.alpha(idx) if sims.bc_kind == INFLOW_OUTFLOW else None
    forcing = None if sims.forcing is None else model.encode(sims.forcing[idx])
    return CoarseContext(sims.bc_kind, alpha, forcing)


def initial_state(model, u0, s_init: str = "true"):
    a0 = model.encode(u0)
    if isinstance(model, SPClosure) and s_init == "zero":
        a0 = a0.copy()
        a0[..., model.I:] = 0.0
    return a0


def simulate_model(model, sims: SimulationSet, idx=None, dt: float = 0.01, T: Optional[float] = None,
                   save_every: Optional[float] = None, s_init: str = "true"):
    """Run the coarse model from the initial states of trajectories ``idx``.

    Returns ``(trajectory, wall_seconds)``; trajectory states have shape
    ``(n_t, n_traj, dof)``.
    """
    idx = np.arange(sims.n_traj) if idx is None else np.atleast_1d(idx)
    T = sims.dns.T if T is None else T
    ctx = context_for(model, sims, idx)
    a0 = initial_state(model, sims.states[idx, 0], s_init)
    rhs = lambda a, t: ad.value(model.rhs(a, t, ctx))  # noqa: E731
    t0 = time.perf_counter()
    traj = integrate(rhs, a0, dt, T, save_every or dt)
    return traj, time.perf_counter() - t0


def filtered_reference(model, sims: SimulationSet, idx, times) -> np.ndarray:
    """Encoded DNS states at ``times`` (nearest saved instants), shape (n_t, n_traj, dof)."""
    idx = np.atleast_1d(idx)
    k = np.rint(np.asarray(times) / sims.dns.save_every).astype(int)
    if np.any(np.abs(k * sims.dns.save_every - np.asarray(times)) > 1e-9) or k.max() >= len(sims.times):
        raise ValueError("requested times are not saved in the reference data")
    return np.stack([model.encode(sims.states[idx, j]) for j in k])


def evaluate_run(model, traj, sims: SimulationSet, idx, dt: float, T: Optional[float] = None,
                 kind: Optional[str] = None, wall=None, dns_wall=None) -> list:
    """One ``RunReport`` per trajectory comparing the resolved field with filtered DNS.

    Errors are reported on the save grid of ``traj``; ``dt`` is only used
    when the run holds a single state.
    """
    idx = np.atleast_1d(idx)
    T = sims.dns.T if T is None else T
    dt = float(traj.times[1] - traj.times[0]) if len(traj.times) > 1 else dt
    n_full = int(round(T / dt)) + 1
    times = np.arange(n_full) * dt
    ref = filtered_reference(model, sims, idx, times)
    I, H, L = model.I, model.H, sims.dns.length
    kind = kind or model.kind
    out = []
    for j in range(len(idx)):
        st = traj.states[:, j]
        ok = np.all(np.isfinite(st), axis=-1)
        n = len(st) if ok.all() else int(np.argmin(ok))
        stable = not traj.diverged and n == n_full
        e = nrmse(st[:n, :I], ref[:n, j, :I], H, L)
        if n < n_full:
            e = np.concatenate([e, np.full(n_full - n, np.inf)])
        rep = energy_report(st[:n], H, "sp" if kind == "sp" else "nc")
        ratio = None if (wall is None or not dns_wall) else wall / dns_wall
        out.append(RunReport(times, e, integrated_nrmse(e, dt, T), rep["dP"], rep["dE"], stable, ratio,
                             dict(Ebar=rep["Ebar"], E=rep["E"])))
    return out


# persistence -----------------------------------------------------------------

def _cond_rows(conds) -> np.ndarray:
    rows = np.zeros((len(conds), 4 + 2 * M_MAX))
    for k, c in enumerate(conds):
        rows[k, :4] = (c.alpha1, c.alpha2, c.alpha3, c.M)
        rows[k, 4:4 + 2 * c.M] = c.C.ravel()
    return rows


def _cond_list(rows) -> list:
    out = []
    for r in np.atleast_2d(rows):
        M = int(r[3])
        out.append(FourierCondition(r[0], r[1], r[2], M, r[4:4 + 2 * M].reshape(M, 2)))
    return out


def save_dataset(path, ds: SnapshotDataset, extra_meta=None) -> None:
    arrays = {"index": ds.index, "split": ds.split}
    sets = []
    for s, ss in enumerate(ds.sets):
        arrays[f"set{s}.times"] = ss.times
        arrays[f"set{s}.states"] = ss.states
        arrays[f"set{s}.conditions"] = _cond_rows(ss.conditions)
        if ss.forcing is not None:
            arrays[f"set{s}.forcing"] = ss.forcing
        if ss.forcing_conditions is not None:
            arrays[f"set{s}.forcing_conditions"] = _cond_rows(ss.forcing_conditions)
        sets.append(dict(bc_kind=ss.bc_kind))
    meta = dict(kind="dataset", dns=asdict(ss.dns), sets=sets, meta=ds.meta)
    meta["dns"]["domain"] = list(ss.dns.domain)
    if extra_meta:
        meta["config"] = extra_meta
    write_container(path, arrays, meta)


def load_dataset(path) -> SnapshotDataset:
    arrays, meta = read_container(path)
    if meta.get("kind") != "dataset":
        raise ValueError(f"{path} is not a dataset container")
    d = dict(meta["dns"])
    d["domain"] = tuple(d["domain"])
    dns = DNSConfig(**d)
    sets = []
    for s, info in enumerate(meta["sets"]):
        fc = arrays.get(f"set{s}.forcing_conditions")
        sets.append(SimulationSet(dns, info["bc_kind"], arrays[f"set{s}.times"], arrays[f"set{s}.states"],
                                  _cond_list(arrays[f"set{s}.conditions"]), arrays.get(f"set{s}.forcing"),
                                  None if fc is None else _cond_list(fc)))
    return SnapshotDataset(sets, arrays["index"].astype(np.int64), arrays["split"].astype(np.int64),
                           meta.get("meta", {}))


def save_compression(path, st: StateTransform, equation: str, loss=None) -> None:
    meta = dict(kind="compression", equation=equation, I=st.I, J=st.fp.J, N=st.fp.N,
                n_source=st.n_source, domain=[st.fp.grid.domain_start, st.fp.grid.domain_end],
                val_loss=loss)
    write_container(path, {"t_hat": st.comp.t_hat}, meta)


def load_compression(path) -> StateTransform:
    arrays, meta = read_container(path)
    if meta.get("kind") != "compression":
        raise ValueError(f"{path} is not a compression container")
    g = make_grid_pair(tuple(meta["domain"]), meta["I"], meta["J"])
    return StateTransform(make_filter_pair(g), CompressionOperator(arrays["t_hat"]), meta["n_source"])


def save_checkpoint(path, model, equation: str, extra_meta=None) -> None:
    fp = model.transform.fp
    meta = dict(kind="checkpoint", model=model.kind, equation=equation, I=model.I, J=fp.J, N=fp.N,
                n_source=model.transform.n_source, domain=[fp.grid.domain_start, fp.grid.domain_end],
                nu=model.cfg.nu)
    arrays = {"theta": model.params}
    if isinstance(model, SPClosure):
        arrays["t_hat"] = model.transform.comp.t_hat
        meta.update(B=model.B, include_dissipation=model.include_dissipation)
    if hasattr(model, "net"):
        meta.update(hidden=list(model.net.hidden), kernel_size=model.net.kernel_size,
                    in_channels=model.net.in_channels, out_channels=model.net.out_channels)
    if extra_meta:
        meta["config"] = extra_meta
    write_container(path, arrays, meta)


def load_checkpoint(path, expect: Optional[dict] = None):
    """Rebuild a model; ``expect`` keys (equation, I, J, B) must match the stored values."""
    arrays, meta = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    for key, val in (expect or {}).items():
        if val is not None and meta.get(key) != val:
            raise ValueError(f"checkpoint {key}={meta.get(key)!r} does not match requested {val!r}")
    from .pde import burgers_config, kdv_config
    cfg = burgers_config(meta["nu"]) if meta["equation"] == BURGERS else kdv_config()
    g = make_grid_pair(tuple(meta["domain"]), meta["I"], meta["J"])
    fp = make_filter_pair(g)
    kind = meta["model"]
    if kind == "sp":
        st = StateTransform(fp, CompressionOperator(arrays["t_hat"]), meta["n_source"])
        net = ConvNet(meta["in_channels"], tuple(meta["hidden"]), meta["out_channels"], meta["kernel_size"])
        return SPClosure(cfg, st, net, meta["B"], meta["include_dissipation"], arrays["theta"])
    ft = FilterTransform(fp, meta["n_source"])
    if kind == "cnn":
        net = ConvNet(meta["in_channels"], tuple(meta["hidden"]), meta["out_channels"], meta["kernel_size"])
        return VanillaCNN(cfg, ft, net, arrays["theta"])
    if kind == "smagorinsky":
        return Smagorinsky(cfg, ft, float(arrays["theta"][0]))
    return NoClosure(cfg, ft)
