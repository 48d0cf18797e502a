"""Ghost-cell padding for periodic and inflow/outflow boundaries.

Inflow (left):   u_{-i+1} = 2 alpha(t) - u_i       (midpoint value equals alpha)
Outflow (right): u_{N+i}  = u_{N-i+1}              (symmetric, zero gradient)

The same rules hold on the coarse grid for the filtered field.  The SGS
variables reflect through the scalar ``rho = J t^T P t`` with ``P`` the
index-reversal permutation: ``s_{-i+1} = -rho s_i`` and ``s_{I+i} = rho s_{I-i+1}``.

All padding acts on the last axis and works for ndarrays and autodiff Vars.
``alpha`` may be a scalar or an array broadcastable to the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PERIODIC = "periodic"
INFLOW_OUTFLOW = "inflow_outflow"


def periodic_pad(x, depth: int):
    if depth == 0:
        return x
    L = ad.value(x).shape[-1]
    left = np.arange(-depth, 0) % L
    right = np.arange(depth) % L
    return ad.concatenate([ad.take(x, left), x, ad.take(x, right)], axis=-1)


def _mirror_indices(L, depth):
    if depth > L:
        raise ValueError(f"ghost depth {depth} exceeds grid length {L}")
    left = np.arange(depth - 1, -1, -1)      # u_depth ... u_1
    right = np.arange(L - 1, L - 1 - depth, -1)  # u_L ... u_{L-depth+1}
    return left, right


def _alpha_column(alpha, like):
    a = np.asarray(alpha, dtype=np.float64)
    return a[..., None] if a.ndim else a


def inflow_outflow_pad(x, alpha, depth: int):
    """Pad with ``2 alpha - u`` on the left and a mirror on the right."""
    if depth == 0:
        return x
    L = ad.value(x).shape[-1]
    li, ri = _mirror_indices(L, depth)
    left = 2.0 * _alpha_column(alpha, x) - ad.take(x, li)
    return ad.concatenate([_broadcast_like(left, x), x, ad.take(x, ri)], axis=-1)


def _broadcast_like(part, x):
    # the ghost block must carry the leading shape of x for concatenation
    target = ad.value(x).shape[:-1] + ad.value(part).shape[-1:]
    if ad.value(part).shape == target:
        return part
    return part + np.zeros(target)


def sgs_pad(s, rho: float, depth: int):
    """Pad SGS variables for inflow/outflow boundaries."""
    if depth == 0:
        return s
    L = ad.value(s).shape[-1]
    li, ri = _mirror_indices(L, depth)
    return ad.concatenate([ad.take(s, li) * (-rho), s, ad.take(s, ri) * rho], axis=-1)


def fine_ghosts(u, alpha, t, depth: int):
    """Inflow/outflow ghost padding of a fine field; ``alpha`` is a callable of time or a value."""
    a = alpha(t) if callable(alpha) else alpha
    return inflow_outflow_pad(u, a, depth)


def coarse_ghosts(ubar, alpha, t, depth: int):
    a = alpha(t) if callable(alpha) else alpha
    return inflow_outflow_pad(ubar, a, depth)


def reflection_coefficient(t_vec) -> float:
    """``rho = J t^T P t``; equals ``t_hat^T P t_hat`` for ``t = t_hat / sqrt(J)``."""
    t_vec = np.asarray(t_vec, dtype=np.float64)
    J = t_vec.size
    return float(J * t_vec @ t_vec[::-1])


def sgs_ghosts(s, t_vec, depth: int):
    return sgs_pad(s, reflection_coefficient(t_vec), depth)


@dataclass(frozen=True)
class GhostSpec:
    depth: int
    alpha: object = None
    rho: float = 1.0


def pad(x, bc_kind: str, depth: int, alpha=None, sgs_rho=None):
    """Dispatch helper: periodic wrap or inflow/outflow ghosts.

    With ``sgs_rho`` set, the SGS reflection rule is used instead of the
    velocity rule (inflow/outflow only).
    """
    if bc_kind == PERIODIC:
        return periodic_pad(x, depth)
    if bc_kind == INFLOW_OUTFLOW:
        if sgs_rho is not None:
            return sgs_pad(x, sgs_rho, depth)
        if alpha is None:
            raise ValueError("inflow/outflow padding needs an inflow value")
        return inflow_outflow_pad(x, alpha, depth)
    raise ValueError(f"unknown boundary kind {bc_kind!r}")
