"""Command line interface.

    spclosure <command> --config FILE [--seed N] [--out DIR] [--set KEY=VALUE ...]

Commands: datagen, compress, train, simulate, evaluate, spectrum, verify, tune.
The config file holds one ``key = value`` per line (``#`` starts a comment);
``--set`` overrides single keys.  Keys and defaults are listed in ``DEFAULTS``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .audits import SUITES
from .container import read_container, write_container
from .datagen import build_dataset, default_dns
from .metrics import energy_spectrum
from .pde import BURGERS
from .training import TrainConfig, default_train_config, fit_smagorinsky, hyperparameter_sweep, train
from .workflow import (build_model, evaluate_run, fit_transform, load_checkpoint, load_compression,
                       load_dataset, save_checkpoint, save_compression, save_dataset, simulate_model,
                       validation_compression_loss)

log = logging.getLogger("spclosure")

DEFAULTS = {
    "equation": "burgers",      # burgers | kdv
    "bc": "periodic",           # periodic | inflow_outflow | mixed
    "count": None,              # trajectories; 50 (Burgers per BC kind) or 100 (KdV)
    "fraction": 0.1,            # snapshot subsample
    "T": 10.0,                  # simulated time
    "dataset": "dataset.spnc",
    "compression": "",          # optional fitted compression for SP training
    "checkpoint": "checkpoint.spnc",
    "run": "run.spnc",
    "model": "sp",              # sp | cnn | smagorinsky | nc
    "dof": 60,
    "hidden": "",               # comma separated widths, empty = default
    "kernel_size": 0,           # 0 = default
    "epochs_derivative": 100,
    "epochs_trajectory": 20,
    "batch": 20,
    "lr": 1e-3,
    "traj_steps": 0,            # 0 = equation default
    "dt": 0.0,                  # coarse step; 0 = equation default
    "s_init": "true",           # true | zero (SP0)
    "t_start": 3.0,             # spectrum averaging window
    "t_end": 7.0,
    "suites": "filter,sp,eigen",
}


def parse_value(text: str):
    t = text.strip()
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def read_config(path) -> dict:
    cfg = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            cfg[k.strip()] = parse_value(v)
    return cfg


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for item in args.set or []:
        k, _, v = item.partition("=")
        cfg[k.strip()] = parse_value(v)
    unknown = set(cfg) - set(DEFAULTS) - {"seed", "out"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg["seed"] = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cfg["out"] = args.out or cfg.get("out") or "."
    os.makedirs(cfg["out"], exist_ok=True)
    return cfg


def _path(cfg, key):
    """Input path: as given when it exists, otherwise relative to the output directory."""
    p = str(cfg[key])
    return p if os.path.isabs(p) or os.path.exists(p) else os.path.join(cfg["out"], p)


def _out_path(cfg, key):
    p = str(cfg[key])
    return p if os.path.isabs(p) else os.path.join(cfg["out"], p)


def _hidden(cfg):
    h = str(cfg["hidden"]).strip()
    return tuple(int(x) for x in h.split(",") if x.strip()) if h else None


def _train_config(cfg, equation) -> TrainConfig:
    kw = dict(lr=float(cfg["lr"]), batch=int(cfg["batch"]), seed=int(cfg["seed"]),
              epochs_derivative=int(cfg["epochs_derivative"]),
              epochs_trajectory=int(cfg["epochs_trajectory"]))
    if cfg["traj_steps"]:
        kw["traj_steps"] = int(cfg["traj_steps"])
    if cfg["dt"]:
        kw["dt"] = float(cfg["dt"])
    return default_train_config(equation, **kw)


def _coarse_dt(cfg, equation):
    return float(cfg["dt"]) if cfg["dt"] else (0.01 if equation == BURGERS else 5e-3)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# commands --------------------------------------------------------------------

def cmd_datagen(cfg):
    eq = cfg["equation"]
    count = cfg["count"] or (100 if eq != BURGERS else (100 if cfg["bc"] == "mixed" else 50))
    dns = default_dns(eq, T=float(cfg["T"]))
    ds = build_dataset(eq, cfg["bc"], int(count), np.random.default_rng(cfg["seed"]),
                       fraction=float(cfg["fraction"]), dns=dns)
    path = _out_path(cfg, "dataset")
    save_dataset(path, ds, cfg)
    n_traj = sum(s.n_traj for s in ds.sets)
    log.info("wrote %s: %d trajectories, %d snapshots (%d validation)", path, n_traj, len(ds), int(ds.split.sum()))
    return path


def cmd_compress(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    I = int(cfg["dof"]) // 2
    st = fit_transform(ds, I)
    loss = validation_compression_loss(ds, st)
    path = _out_path(cfg, "compression") if cfg["compression"] else os.path.join(cfg["out"], "compression.spnc")
    save_compression(path, st, ds.dns.equation, loss)
    log.info("I=%d J=%d validation L_s=%.6g -> %s", I, st.fp.J, loss, path)
    return loss


def cmd_train(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    eq = ds.dns.equation
    transform = load_compression(_path(cfg, "compression")) if cfg["compression"] else None
    model = build_model(cfg["model"], ds.dns, int(cfg["dof"]), ds=ds, transform=transform,
                        seed=int(cfg["seed"]), hidden=_hidden(cfg), kernel_size=int(cfg["kernel_size"]) or None)
    ckpt = _out_path(cfg, "checkpoint")
    if cfg["model"] == "smagorinsky":
        model = fit_smagorinsky(model, ds)
        log.info("C_s = %.2f", model.Cs)
    elif cfg["model"] in ("sp", "cnn"):
        res = train(model, ds, _train_config(cfg, eq), log=log.info)
        res.write_csv(os.path.join(cfg["out"], "losses.csv"))
        model = res.model
        if res.aborted:
            log.warning("training aborted on a non-finite loss; best parameters so far are saved")
    save_checkpoint(ckpt, model, eq, cfg)
    log.info("wrote %s", ckpt)
    return ckpt


def _load_model(cfg, ds):
    if cfg["model"] == "nc" and not os.path.exists(_path(cfg, "checkpoint")):
        return build_model("nc", ds.dns, int(cfg["dof"]))
    return load_checkpoint(_path(cfg, "checkpoint"), expect=dict(equation=ds.dns.equation))


def cmd_simulate(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    model = _load_model(cfg, ds)
    dt = _coarse_dt(cfg, ds.dns.equation)
    arrays, runs = {}, []
    for s, sims in enumerate(ds.sets):
        traj, wall = simulate_model(model, sims, dt=dt, T=float(cfg["T"]), s_init=str(cfg["s_init"]))
        arrays[f"set{s}.states"] = traj.states
        arrays[f"set{s}.times"] = traj.times
        runs.append(dict(diverged=bool(traj.diverged), blowup_time=traj.blowup_time, wall=wall))
        log.info("set %d: %d trajectories, diverged=%s, %.2fs", s, sims.n_traj, traj.diverged, wall)
    path = _out_path(cfg, "run")
    ckpt = os.path.splitext(path)[0] + ".model.spnc"
    save_checkpoint(ckpt, model, ds.dns.equation)
    write_container(path, arrays, dict(kind="run", model=model.kind, checkpoint=ckpt, dt=dt, T=float(cfg["T"]),
                                       s_init=str(cfg["s_init"]), sets=runs, config=cfg))
    return path


def _load_run(cfg):
    arrays, meta = read_container(_path(cfg, "run"))
    if meta.get("kind") != "run":
        raise ValueError("not a run container")
    return arrays, meta


class _Traj:
    def __init__(self, times, states, diverged):
        self.times, self.states, self.diverged = times, states, diverged


def cmd_evaluate(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    arrays, meta = _load_run(cfg)
    model = load_checkpoint(meta["checkpoint"])
    rows, summary = [], []
    for s, sims in enumerate(ds.sets):
        traj = _Traj(arrays[f"set{s}.times"], arrays[f"set{s}.states"], meta["sets"][s]["diverged"])
        idx = np.arange(sims.n_traj)
        reps = evaluate_run(model, traj, sims, idx, meta["dt"], meta["T"], wall=meta["sets"][s]["wall"])
        for k, rep in zip(idx, reps):
            for t, e, dp, de in rep.rows():
                rows.append((s, int(k), t, e, dp, de))
            summary.append((s, int(k), sims.bc_kind, rep.i_nrmse, rep.stable))
    _write_csv(os.path.join(cfg["out"], "metrics.csv"), ["set", "trajectory", "time", "nrmse", "dP", "dE"], rows)
    _write_csv(os.path.join(cfg["out"], "summary.csv"), ["set", "trajectory", "bc", "i_nrmse", "stable"], summary)
    mean = float(np.mean([r[3] for r in summary]))
    log.info("mean I-NRMSE %.6g, stable %d/%d", mean, sum(r[4] for r in summary), len(summary))
    return mean


def cmd_spectrum(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    arrays, meta = _load_run(cfg)
    model = load_checkpoint(meta["checkpoint"])
    sims = ds.sets[0]
    times = arrays["set0.times"]
    win = (times >= float(cfg["t_start"]) - 1e-9) & (times <= float(cfg["t_end"]) + 1e-9)
    ub = arrays["set0.states"][win][..., :model.I]
    k_dns = np.rint(times[win] / ds.dns.save_every).astype(int)
    ref = model.encode(sims.states[:, k_dns])[..., :model.I]
    k, E = energy_spectrum(ub, ds.dns.length)
    _, Er = energy_spectrum(ref, ds.dns.length)
    _write_csv(os.path.join(cfg["out"], "spectrum.csv"), ["k", "model", "filtered_dns"], zip(k, E, Er))
    return k, E, Er


def cmd_verify(cfg):
    rows, ok = [], True
    for name in str(cfg["suites"]).split(","):
        name = name.strip()
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}")
        for c in SUITES[name](seed=cfg["seed"]) if name != "eigen" else SUITES[name]():
            rows.append((c.name, "PASS" if c.passed else "FAIL", c.value, c.limit))
            ok &= bool(c.passed)
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value:.3e} limit={c.limit:.1e}")
    _write_csv(os.path.join(cfg["out"], "verify.csv"), ["check", "status", "value", "limit"], rows)
    return ok


def cmd_tune(cfg):
    ds = load_dataset(_path(cfg, "dataset"))
    eq = ds.dns.equation
    tc = _train_config(cfg, eq)
    kind = cfg["model"] if cfg["model"] in ("sp", "cnn") else "sp"
    st = fit_transform(ds, int(cfg["dof"]) // 2) if kind == "sp" else None
    make = lambda hidden: build_model(kind, ds.dns, int(cfg["dof"]), transform=st,  # noqa: E731
                                      seed=int(cfg["seed"]), hidden=hidden)
    rows = hyperparameter_sweep(make, ds, tc, log=log.info)
    _write_csv(os.path.join(cfg["out"], "sweep.csv"), ["layers", "channels", "val_nrmse"], rows)
    return rows


COMMANDS = dict(datagen=cmd_datagen, compress=cmd_compress, train=cmd_train, simulate=cmd_simulate,
                evaluate=cmd_evaluate, spectrum=cmd_spectrum, verify=cmd_verify, tune=cmd_tune)


def build_parser():
    p = argparse.ArgumentParser(prog="spclosure", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except (ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return 2
    if args.command == "verify" and not result:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
