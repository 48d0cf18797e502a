"""Randomized property suites behind ``spclosure verify``.

Each suite returns a list of ``Check(name, passed, value, limit)`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .closures import SPClosure, default_B, default_sp_net
from .compression import CompressionOperator, StateTransform
from .grid import apply_filter, inner_product, make_filter_pair, make_grid_pair, reconstruct, sgs_content
from .metrics import dissipation_eigen_check, dissipation_eigenvalues
from .pde import BURGERS, KDV, burgers_config, kdv_config


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    limit: float


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def filter_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-12) -> list:
    """Filter identities on random ``(I, J, u)`` cases; worst relative error per identity."""
    rng = np.random.default_rng(seed)
    worst = dict(WR=0.0, inner=0.0, orth=0.0, momentum=0.0, energy=0.0)
    for _ in range(n_cases):
        I, J = int(rng.integers(2, 40)), int(rng.integers(1, 20))
        g = make_grid_pair((0.0, float(rng.uniform(0.5, 10.0))), I, J)
        fp = make_filter_pair(g)
        u = rng.normal(size=g.N)
        ub = rng.normal(size=I)
        # W R = I
        worst["WR"] = max(worst["WR"], np.max(np.abs(apply_filter(fp, reconstruct(fp, ub)) - ub)) / np.max(np.abs(ub)))
        # (R a, b)_omega = (a, W b)_Omega
        lhs = inner_product(reconstruct(fp, ub), u, g.omega)
        rhs = inner_product(ub, apply_filter(fp, u), g.Omega)
        worst["inner"] = max(worst["inner"], abs(lhs - rhs) / (np.linalg.norm(ub) * np.linalg.norm(u) * g.H))
        up = sgs_content(fp, u)
        rub = reconstruct(fp, apply_filter(fp, u))
        scale = np.sqrt(inner_product(rub, rub, g.omega) * inner_product(u, u, g.omega))
        worst["orth"] = max(worst["orth"], abs(inner_product(rub, up, g.omega)) / max(scale, 1e-300))
        P = np.sum(g.omega * u)
        Pbar = np.sum(g.Omega * apply_filter(fp, u))
        worst["momentum"] = max(worst["momentum"], abs(P - Pbar) / np.sum(np.abs(g.omega * u)))
        E = 0.5 * inner_product(u, u, g.omega)
        Eb = 0.5 * inner_product(apply_filter(fp, u), apply_filter(fp, u), g.Omega)
        Ep = 0.5 * inner_product(up, up, g.omega)
        worst["energy"] = max(worst["energy"], _rel(E, Eb + Ep))
    return [Check(f"filter.{k}", v < tol, v, tol) for k, v in worst.items()]


def random_sp(equation: str, I: int, J: int, rng, hidden=None, kernel_size=5) -> SPClosure:
    dom = (0.0, 2 * np.pi) if equation == BURGERS else (0.0, 32.0)
    g = make_grid_pair(dom, I, J)
    t_hat = rng.normal(size=J)
    st = StateTransform(make_filter_pair(g), CompressionOperator(t_hat / np.linalg.norm(t_hat)))
    cfg = burgers_config(nu=0.0) if equation == BURGERS else kdv_config()
    net = default_sp_net(equation, hidden, kernel_size)
    m = SPClosure(cfg, st, net, default_B(equation), equation == BURGERS)
    return m.with_params(rng.normal(size=m.layout().size) * 0.5)


def sp_suite(n_cases: int = 100, seed: int = 0, hidden=(8, 8)) -> list:
    """Energy and momentum structure of the SP closure for random parameters and states."""
    rng = np.random.default_rng(seed)
    worst_skew, worst_diss, worst_mom = 0.0, -np.inf, 0.0
    for k in range(n_cases):
        eq = BURGERS if k % 2 == 0 else KDV
        I = int(rng.integers(8, 33))
        J = int(rng.integers(2, 11))
        m = random_sp(eq, I, J, rng, hidden)
        a = rng.normal(size=(1, 2 * I)) * rng.uniform(0.1, 3.0)
        _, skew, diss = m.terms(a, 0.0)
        A = a.reshape(1, 2, I)
        H = m.H
        sk = ad.value(skew)
        e_skew = H * np.sum(A * sk)
        scale = H * np.sum(np.abs(A * sk))
        worst_skew = max(worst_skew, abs(e_skew) / max(scale, 1e-300))
        if diss is not None:
            worst_diss = max(worst_diss, -H * np.sum(A * ad.value(diss)))
        c = ad.value(m.closure(a, 0.0))
        mom = abs(H * np.sum(c[:, :I]))
        worst_mom = max(worst_mom, mom / max(H * np.sum(np.abs(c[:, :I])), 1e-300))
    return [Check("sp.skew_energy", worst_skew < 1e-11, worst_skew, 1e-11),
            Check("sp.dissipation_sign", worst_diss <= 0.0, worst_diss, 0.0),
            Check("sp.momentum", worst_mom < 1e-12, worst_mom, 1e-12)]


def eigen_suite(Is=range(10, 101, 10), Js=(2, 5, 10, 20, 50)) -> list:
    lam1 = max(abs(dissipation_eigenvalues(I, J)[0]) for I in Is for J in Js)
    lam2 = max(dissipation_eigen_check(I, J) for I in Is for J in Js)
    return [Check("eigen.lambda1_zero", lam1 < 1e-12, lam1, 1e-12),
            Check("eigen.lambda2_negative", lam2 < 0.0, lam2, 0.0)]


SUITES = dict(filter=filter_suite, sp=sp_suite, eigen=eigen_suite)
