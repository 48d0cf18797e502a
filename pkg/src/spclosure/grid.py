"""Uniform fine/coarse grid pairs and the averaging filter.

The filter ``W`` averages the ``J`` fine cells inside each coarse cell and the
reconstruction ``R`` repeats each coarse value ``J`` times.  Both act on the
last axis, so batches of states of shape ``(..., N)`` are handled directly.
Dense matrices are only built on request (test oracles, small eigenproblems).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridPair:
    domain_start: float
    domain_end: float
    N: int
    I: int
    J: int
    h: float
    H: float
    omega: np.ndarray = field(repr=False)
    Omega: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return self.domain_end - self.domain_start

    def fine_centers(self) -> np.ndarray:
        return self.domain_start + (np.arange(self.N) + 0.5) * self.h

    def coarse_centers(self) -> np.ndarray:
        return self.domain_start + (np.arange(self.I) + 0.5) * self.H


def make_grid_pair(domain, I: int, J: int) -> GridPair:
    """Build a uniform grid of ``I`` coarse cells, each split into ``J`` fine cells."""
    start, end = float(domain[0]), float(domain[1])
    if int(I) != I or int(J) != J or I < 1 or J < 1:
        raise ValueError(f"I and J must be positive integers, got I={I}, J={J}")
    if not end > start:
        raise ValueError(f"degenerate interval [{start}, {end}]")
    I, J = int(I), int(J)
    N = I * J
    h = (end - start) / N
    H = J * h
    # mass matrices are kept as their diagonals
    omega = np.full(N, h)
    Omega = np.full(I, H)
    omega.setflags(write=False)
    Omega.setflags(write=False)
    return GridPair(start, end, N, I, J, h, H, omega, Omega)


@dataclass(frozen=True)
class FilterPair:
    grid: GridPair

    @property
    def I(self) -> int:
        return self.grid.I

    @property
    def J(self) -> int:
        return self.grid.J

    @property
    def N(self) -> int:
        return self.grid.N

    def overlap_matrix(self) -> np.ndarray:
        return np.kron(np.eye(self.I), np.ones((1, self.J)))

    def W_dense(self) -> np.ndarray:
        g = self.grid
        return (1.0 / g.Omega)[:, None] * self.overlap_matrix() * g.omega[None, :]

    def R_dense(self) -> np.ndarray:
        return self.overlap_matrix().T.copy()


def make_filter_pair(grid: GridPair) -> FilterPair:
    return FilterPair(grid)


def _check_last(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (n,):
        raise ValueError(f"{what}: expected last axis of length {n}, got shape {x.shape}")
    return x


def apply_filter(fp: FilterPair, u) -> np.ndarray:
    """Mass-weighted average of the fine cells in every coarse cell."""
    g = fp.grid
    u = _check_last(u, g.N, "apply_filter")
    w = (u * g.omega).reshape(u.shape[:-1] + (g.I, g.J)).sum(axis=-1)
    return w / g.Omega


def reconstruct(fp: FilterPair, ubar) -> np.ndarray:
    """Piecewise-constant reconstruction: repeat each coarse value ``J`` times."""
    ubar = _check_last(ubar, fp.I, "reconstruct")
    return np.repeat(ubar, fp.J, axis=-1)


def sgs_content(fp: FilterPair, u) -> np.ndarray:
    """Fine-grid residual ``u - R W u``."""
    u = _check_last(u, fp.N, "sgs_content")
    return u - reconstruct(fp, apply_filter(fp, u))


def cell_blocks(fp: FilterPair, u) -> np.ndarray:
    """Reshape a fine field ``(..., N)`` into per-coarse-cell blocks ``(..., I, J)``."""
    u = _check_last(u, fp.N, "cell_blocks")
    return u.reshape(u.shape[:-1] + (fp.I, fp.J))


def inner_product(x, y, mass) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    if mass.ndim == 2:
        mass = np.diagonal(mass)
    if not (x.shape == y.shape == mass.shape):
        raise ValueError(f"length mismatch: {x.shape}, {y.shape}, {mass.shape}")
    return float(np.sum(x * mass * y))


def remap_conservative(u, domain_length: float, n_new: int) -> np.ndarray:
    """Project a piecewise-constant field on a uniform grid onto another uniform grid.

    Cell averages of the new grid are exact integrals of the old piecewise-constant
    function, so the integral (momentum) is preserved exactly up to rounding.
    Linear in ``u``; acts on the last axis.
    """
    u = np.asarray(u, dtype=np.float64)
    n_old = u.shape[-1]
    if n_new == n_old:
        return u.copy()
    h_old = domain_length / n_old
    h_new = domain_length / n_new
    cum = np.concatenate(
        [np.zeros(u.shape[:-1] + (1,)), np.cumsum(u * h_old, axis=-1)], axis=-1)
    edges = np.arange(n_new + 1) * h_new / h_old
    j = np.minimum(np.floor(edges).astype(int), n_old - 1)
    frac = edges - j
    at_edges = cum[..., j] + frac * (cum[..., j + 1] - cum[..., j])
    return np.diff(at_edges, axis=-1) / h_new


def remap_matrix(n_old: int, n_new: int, domain_length: float = 1.0) -> np.ndarray:
    """Dense form of :func:`remap_conservative` (oracle use)."""
    return remap_conservative(np.eye(n_old), domain_length, n_new).T
