"""Structure-preserving finite-difference right-hand sides and RK4 time stepping.

Stencils are written against pre-padded arrays (``*_valid`` functions) so that
the same code evaluates periodic, ghost-cell and extended-domain (closure)
configurations.  All functions accept ndarrays or autodiff Vars, acting on the
last axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .boundary import INFLOW_OUTFLOW, PERIODIC, pad

BURGERS = "burgers"
KDV = "kdv"


@dataclass(frozen=True)
class BCSpec:
    kind: str = PERIODIC
    alpha: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in (PERIODIC, INFLOW_OUTFLOW):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == INFLOW_OUTFLOW and self.alpha is None:
            raise ValueError("inflow/outflow boundary needs an inflow function alpha(t)")

    def inflow(self, t):
        return None if self.alpha is None else self.alpha(t)


@dataclass(frozen=True)
class PDEConfig:
    kind: str = BURGERS
    nu: float = 0.01
    epsilon: float = 6.0
    mu: float = 1.0
    # C(u)u as printed approximates -d(u^2)/dx; the equations carry -1/2 d(u^2)/dx
    conv_scale: float = 0.5
    forcing: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (BURGERS, KDV):
            raise ValueError(f"unknown equation {self.kind!r}")
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")

    @property
    def radius(self) -> int:
        """Stencil half-width of the discretization."""
        return 1 if self.kind == BURGERS else 2


def burgers_config(nu=0.01, forcing=None) -> PDEConfig:
    return PDEConfig(BURGERS, nu=nu, forcing=forcing)


def with_forcing(cfg: PDEConfig, forcing) -> PDEConfig:
    return replace(cfg, forcing=None if forcing is None else np.asarray(forcing, dtype=np.float64))


def kdv_config(epsilon=6.0, mu=1.0) -> PDEConfig:
    return PDEConfig(KDV, nu=0.0, epsilon=epsilon, mu=mu)


# stencils on padded input --------------------------------------------------

def _shift(up, depth, offset, L):
    return up[..., depth + offset:depth + offset + L]


def convection_valid(up, h):
    """Skew-symmetric convection on input padded by one cell per side."""
    L = ad.value(up).shape[-1] - 2
    um, u0, upp = _shift(up, 1, -1, L), _shift(up, 1, 0, L), _shift(up, 1, 1, L)
    return (ad.square(um) - ad.square(upp) + u0 * (um - upp)) * (1.0 / (3.0 * h))


def diffusion_valid(up, nu, h):
    """``-Q^T diag(nu) Q u`` on input padded by one cell per side.

    ``nu`` is a scalar or a face array of length ``L + 1`` (face ``j`` sits
    between padded cells ``j`` and ``j + 1``).
    """
    flux = (up[..., 1:] - up[..., :-1]) * nu
    return (flux[..., 1:] - flux[..., :-1]) * (1.0 / (h * h))


def dispersion_valid(up, mu, h):
    """``-mu d3u/dx3`` with the skew five-point stencil; input padded by two cells."""
    L = ad.value(up).shape[-1] - 4
    s = lambda o: _shift(up, 2, o, L)  # noqa: E731
    stencil = (s(2) - s(-2)) + 2.0 * (s(-1) - s(1))
    return stencil * (-mu / (2.0 * h ** 3))


def rhs_valid(cfg: PDEConfig, up, h):
    """Unforced right-hand side on input padded by ``cfg.radius`` cells."""
    if cfg.kind == BURGERS:
        out = convection_valid(up, h) * cfg.conv_scale
        if cfg.nu != 0:
            out = out + diffusion_valid(up, cfg.nu, h)
        return out
    inner = up[..., 1:-1]
    return convection_valid(inner, h) * (cfg.epsilon * cfg.conv_scale) + dispersion_valid(up, cfg.mu, h)


# public operators ----------------------------------------------------------

def _padded(u, depth, bc: BCSpec, t):
    return pad(u, bc.kind, depth, alpha=bc.inflow(t) if bc.kind == INFLOW_OUTFLOW else None)


def convection_rhs(u, h, bc: BCSpec = BCSpec(), t=0.0):
    if ad.value(u).shape[-1] < 3:
        raise ValueError("convection needs at least 3 cells")
    return convection_valid(_padded(u, 1, bc, t), h)


def diffusion_rhs(u, nu, h, bc: BCSpec = BCSpec(), t=0.0):
    if np.any(np.asarray(ad.value(nu)) < 0):
        raise ValueError("viscosity must be non-negative")
    return diffusion_valid(_padded(u, 1, bc, t), nu, h)


def kdv_dispersion_rhs(u, mu, h, bc: BCSpec = BCSpec()):
    if bc.kind != PERIODIC:
        raise ValueError("the dispersion stencil is only supported with periodic boundaries")
    if ad.value(u).shape[-1] < 5:
        raise ValueError("dispersion needs at least 5 cells")
    return dispersion_valid(_padded(u, 2, bc, 0.0), mu, h)


def full_rhs(cfg: PDEConfig, u, h, bc: BCSpec = BCSpec(), t=0.0):
    if cfg.kind == KDV and bc.kind != PERIODIC:
        raise ValueError("KdV is only supported with periodic boundaries")
    out = rhs_valid(cfg, _padded(u, cfg.radius, bc, t), h)
    if cfg.forcing is not None:
        if np.shape(cfg.forcing)[-1] != ad.value(u).shape[-1]:
            raise ValueError("forcing length does not match the grid")
        out = out + cfg.forcing
    return out


def energy(u, h):
    return 0.5 * h * np.sum(np.square(u), axis=-1)


def momentum(u, h):
    return h * np.sum(u, axis=-1)


# time integration ----------------------------------------------------------

class DivergenceError(FloatingPointError):
    pass


def rk4_step(rhs, state, t, dt):
    """One classical Runge-Kutta step for ``d state / dt = rhs(state, t)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = rhs(state, t)
    k2 = rhs(state + k1 * (0.5 * dt), t + 0.5 * dt)
    k3 = rhs(state + k2 * (0.5 * dt), t + 0.5 * dt)
    k4 = rhs(state + k3 * dt, t + dt)
    return state + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diverged: bool = False
    blowup_time: Optional[float] = None

    @property
    def stable(self) -> bool:
        return not self.diverged


def _steps(span, dt, what):
    n = span / dt
    k = int(round(n))
    if k < 1 or not math.isclose(n, k, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"{what}={span} is not a positive multiple of dt={dt}")
    return k


def integrate(rhs, state0, dt, T, save_every=None, t0=0.0) -> Trajectory:
    """RK4 integration from ``t0`` to ``t0 + T`` saving every ``save_every``.

    On the first non-finite state the run stops; the partial trajectory is
    returned with ``diverged=True`` and the time of blow-up.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    save_every = dt if save_every is None else save_every
    n_steps = _steps(T, dt, "T")
    stride = _steps(save_every, dt, "save_every")
    if n_steps % stride:
        raise ValueError("T must be a multiple of save_every")
    state = np.array(state0, dtype=np.float64)
    times, states = [t0], [state.copy()]
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_steps + 1):
            t = t0 + (n - 1) * dt
            try:
                state = rk4_step(rhs, state, t, dt)
            except FloatingPointError:
                state = np.full_like(state, np.nan)
            if not np.all(np.isfinite(state)):
                return Trajectory(np.array(times), np.array(states), True, t0 + n * dt)
            if n % stride == 0:
                times.append(t0 + n * dt)
                states.append(state.copy())
    return Trajectory(np.array(times), np.array(states))


def simulate(cfg: PDEConfig, bc: BCSpec, u0, dt, T, save_every, h) -> Trajectory:
    """Fine-grid reference simulation; ``u0`` may carry leading batch axes."""
    rhs = lambda u, t: full_rhs(cfg, u, h, bc, t)  # noqa: E731
    traj = integrate(rhs, u0, dt, T, save_every)
    if traj.diverged:
        warnings.warn(f"simulation diverged at t={traj.blowup_time:.6g}")
    return traj
