"""Linear compression of the subgrid-scale content into one variable per coarse cell.

Each coarse cell's SGS block ``mu_i`` (length ``J``) is projected onto a single
direction: ``s_i = t^T mu_i`` with ``t = t_hat / sqrt(J)``.  The direction is the
dominant left singular vector of the snapshot matrix of SGS blocks, obtained
from the ``J x J`` Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import FilterPair, apply_filter, cell_blocks, remap_conservative, sgs_content


@dataclass(frozen=True)
class CompressionOperator:
    t_hat: np.ndarray

    def __post_init__(self):
        t_hat = np.asarray(self.t_hat, dtype=np.float64)
        if t_hat.ndim != 1:
            raise ValueError("compression vector must be one-dimensional")
        object.__setattr__(self, "t_hat", t_hat)

    @property
    def J(self) -> int:
        return self.t_hat.size

    @property
    def t(self) -> np.ndarray:
        return self.t_hat / np.sqrt(self.J)

    @classmethod
    def from_t(cls, t) -> "CompressionOperator":
        t = np.asarray(t, dtype=np.float64)
        return cls(t * np.sqrt(t.size))


def _sign_fix(v):
    # largest-magnitude entry positive; ties resolved by the first such entry
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def snapshot_matrix(snapshots, fp: FilterPair) -> np.ndarray:
    """SGS blocks of all snapshots as columns, shape ``(J, I * p)``."""
    snaps = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
    blocks = cell_blocks(fp, sgs_content(fp, snaps))  # (p, I, J)
    return blocks.reshape(-1, fp.J).T


def fit_compression(snapshots, fp: FilterPair) -> CompressionOperator:
    X = snapshot_matrix(snapshots, fp)
    if X.shape[1] == 0:
        raise ValueError("no snapshots to fit the compression")
    gram = X @ X.T
    if not np.any(gram):
        raise ValueError("snapshots carry no SGS content; compression direction undefined")
    w, V = np.linalg.eigh(gram)
    return CompressionOperator(_sign_fix(V[:, -1]))


def compression_loss(comp: CompressionOperator, snapshots, fp: FilterPair) -> float:
    """Mean absolute mismatch between cell SGS energy and its compressed estimate."""
    X = snapshot_matrix(snapshots, fp)
    captured = (comp.t @ X) ** 2
    return float(np.mean(np.abs(np.sum(X * X, axis=0) / fp.J - captured)))


@dataclass(frozen=True)
class StateTransform:
    """Maps a fine state to ``a = [ubar; s]``.

    ``n_source`` is the length of incoming fine states; when it differs from
    the filter's fine grid the state is first remapped conservatively.
    """

    fp: FilterPair
    comp: CompressionOperator
    n_source: Optional[int] = None

    def __post_init__(self):
        if self.comp.J != self.fp.J:
            raise ValueError(f"compression length {self.comp.J} does not match J={self.fp.J}")

    @property
    def I(self) -> int:
        return self.fp.I

    def prepare(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        n_src = self.n_source or self.fp.N
        if u.shape[-1] != n_src:
            raise ValueError(f"expected fine states of length {n_src}, got {u.shape[-1]}")
        if n_src != self.fp.N:
            u = remap_conservative(u, self.fp.grid.length, self.fp.N)
        return u

    def filter(self, u) -> np.ndarray:
        return apply_filter(self.fp, self.prepare(u))

    def sgs(self, u) -> np.ndarray:
        mu = cell_blocks(self.fp, sgs_content(self.fp, self.prepare(u)))
        return mu @ self.comp.t

    def dense(self) -> np.ndarray:
        n_src = self.n_source or self.fp.N
        return to_state(self, np.eye(n_src)).T


def to_state(st: StateTransform, u) -> np.ndarray:
    u = st.prepare(u)
    ubar = apply_filter(st.fp, u)
    s = cell_blocks(st.fp, sgs_content(st.fp, u)) @ st.comp.t
    return np.concatenate([ubar, s], axis=-1)


def transform_rhs(st: StateTransform, du_dt) -> np.ndarray:
    """Transform a fine tangent vector; ``T`` is linear, so this is ``to_state``."""
    return to_state(st, du_dt)


def split_state(a):
    I = a.shape[-1] // 2
    return a[..., :I], a[..., I:]
