"""Coarse-grid closure models.

Every model exposes ``rhs(state, t, ctx, params=None)`` where ``state`` has
shape ``(..., dof)``.  ``params`` defaults to the model's stored flat parameter
vector and may be an autodiff ``Var`` during training.

Boundary handling uses extended-domain evaluation: the state is padded once
(periodic wrap or ghost cells) to the full receptive-field depth, every
stencil and convolution is evaluated in "valid" mode, and only the interior
cells remain.  With periodic padding this reproduces circular convolutions
exactly, so transposed stencils are exact adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .boundary import INFLOW_OUTFLOW, PERIODIC, pad
from .compression import StateTransform
from .grid import FilterPair, apply_filter, remap_conservative
from .nn import ConvNet, forward_tensors, glorot_params
from .pde import BURGERS, KDV, PDEConfig, rhs_valid


@dataclass(frozen=True)
class CoarseContext:
    """Boundary and forcing information shared by a batch of coarse states.

    ``alpha`` maps time to the inflow value(s), shape broadcastable to the
    batch; ``forcing`` is the transformed steady forcing, added to the RHS.
    """

    bc_kind: str = PERIODIC
    alpha: Optional[Callable] = None
    forcing: Optional[np.ndarray] = None

    def inflow(self, t):
        if self.bc_kind != INFLOW_OUTFLOW:
            return None
        if self.alpha is None:
            raise ValueError("inflow/outflow context needs alpha(t)")
        return self.alpha(t)


PERIODIC_CONTEXT = CoarseContext()


@dataclass(frozen=True)
class FilterTransform:
    """Fine state to filtered coarse state (models without SGS variables)."""

    fp: FilterPair
    n_source: Optional[int] = None

    @property
    def I(self) -> int:
        return self.fp.I

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        n_src = self.n_source or self.fp.N
        if u.shape[-1] != n_src:
            raise ValueError(f"expected fine states of length {n_src}, got {u.shape[-1]}")
        if n_src != self.fp.N:
            u = remap_conservative(u, self.fp.grid.length, self.fp.N)
        return apply_filter(self.fp, u)


def _apply_transform(transform, u):
    if isinstance(transform, StateTransform):
        from .compression import to_state
        return to_state(transform, u)
    return transform.apply(u)


def _crop(x, depth, keep):
    """Reduce the padding of ``x`` from ``depth`` to ``keep`` cells per side."""
    d = depth - keep
    if d == 0:
        return x
    return x[..., d:ad.value(x).shape[-1] - d]


def _check_finite(fields, what):
    if not np.all(np.isfinite(ad.value(fields))):
        raise ad.NonFiniteError(what)


def _batched(state):
    v = ad.value(state)
    if v.ndim == 1:
        return ad.reshape(state, (1,) + v.shape), True
    return state, False


# stencils ------------------------------------------------------------------

def constrained_weights(b, constrained: bool = True):
    """Subtract the mean so the stencil weights sum to zero."""
    if not constrained:
        return b
    n = ad.value(b).shape[-1]
    return b - ad.sum_(b, axis=-1, keepdims=True) * (1.0 / n)


def constrained_stencil_apply(b, f, constrained: bool = True, padding: str = PERIODIC, alpha=None):
    """Apply the stencil ``(Bf)_i = sum_j bbar_j f_{i+j}``, ``j = -B..B``."""
    n = ad.value(b).shape[-1]
    if n % 2 == 0:
        raise ValueError("stencil must have odd length 2B+1")
    B = n // 2
    bb = constrained_weights(b, constrained)
    fp = pad(f, padding, B, alpha=alpha)
    fp2, squeeze = _batched(fp)
    out = ad.conv1d(ad.reshape(fp2, (ad.value(fp2).shape[0], 1, -1)),
                    ad.reshape(bb, (1, 1, n)))
    out = ad.reshape(out, (ad.value(out).shape[0], -1))
    return out[0] if squeeze else out


def block_weights(w):
    """Zero-sum constraint on the blocks acting on the resolved channel.

    ``w`` has shape (2, 2, 2B+1): ``w[o, c]`` is block ``B^{o+1, c+1}``.
    """
    col0 = constrained_weights(w[:, 0:1, :])
    return ad.concatenate([col0, w[:, 1:2, :]], axis=1)


def transposed_kernel(w):
    """Kernel of the adjoint convolution: swap channels and reverse taps."""
    return ad.transpose(w, (1, 0, 2))[..., ::-1]


# models --------------------------------------------------------------------

class ClosureModel:
    name = "base"
    kind = "base"

    def __init__(self, cfg: PDEConfig, transform, params=None):
        if cfg.forcing is not None:
            raise ValueError("coarse models take forcing through the context, not the config")
        self.cfg = cfg
        self.transform = transform
        self.params = np.zeros(self.layout().size) if params is None else np.asarray(params, float)
        if self.params.shape != (self.layout().size,):
            raise ValueError(f"expected {self.layout().size} parameters, got {self.params.shape}")

    @property
    def I(self) -> int:
        return self.transform.I

    @property
    def H(self) -> float:
        return self.transform.fp.grid.H

    @property
    def dof(self) -> int:
        return self.I

    def layout(self) -> ad.ParameterLayout:
        return ad.ParameterLayout((), ())

    def with_params(self, params):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = np.asarray(params, dtype=np.float64).copy()
        return new

    def encode(self, u) -> np.ndarray:
        """Coarse state of a fine (DNS) state."""
        return _apply_transform(self.transform, u)

    def context(self, bc_kind=PERIODIC, alpha=None, forcing_fine=None) -> CoarseContext:
        forcing = None if forcing_fine is None else self.encode(forcing_fine)
        return CoarseContext(bc_kind, alpha, forcing)

    def resolved(self, state):
        return state[..., :self.I]

    def _pad_u(self, ub, depth, ctx, t):
        return pad(ub, ctx.bc_kind, depth, alpha=ctx.inflow(t))

    def _finish(self, out, ctx):
        if ctx.forcing is not None:
            out = out + ctx.forcing
        return out

    def coarse_rhs(self, ub, t, ctx):
        """``f_H`` on the interior cells."""
        p = self.cfg.radius
        return rhs_valid(self.cfg, self._pad_u(ub, p, ctx, t), self.H)

    def rhs(self, state, t, ctx: CoarseContext = PERIODIC_CONTEXT, params=None):
        raise NotImplementedError

    def rhs_fn(self, ctx: CoarseContext = PERIODIC_CONTEXT, params=None):
        return lambda a, t: self.rhs(a, t, ctx, params)


class NoClosure(ClosureModel):
    name = "NC"
    kind = "nc"

    def rhs(self, state, t, ctx=PERIODIC_CONTEXT, params=None):
        return self._finish(self.coarse_rhs(state, t, ctx), ctx)


class Smagorinsky(ClosureModel):
    """Constant-coefficient eddy viscosity ``nu_t = (H C_s)^2 |Q u|``."""

    name = "SM"
    kind = "smagorinsky"

    def __init__(self, cfg, transform, Cs: float = 0.0):
        if Cs < 0:
            raise ValueError("C_s must be non-negative")
        super().__init__(cfg, transform, np.array([Cs], dtype=float))

    def layout(self):
        return ad.ParameterLayout(("Cs",), ((1,),))

    @property
    def Cs(self) -> float:
        return float(self.params[0])

    def closure(self, ub, t, ctx, params=None):
        Cs = self.params[0] if params is None else params[0]
        H = self.H
        up = self._pad_u(ub, 1, ctx, t)
        grad = (up[..., 1:] - up[..., :-1]) * (1.0 / H)
        nu_t = ad.absolute(grad) * ((H * Cs) ** 2)
        flux = grad * nu_t
        return (flux[..., 1:] - flux[..., :-1]) * (1.0 / H)

    def rhs(self, state, t, ctx=PERIODIC_CONTEXT, params=None):
        out = self.coarse_rhs(state, t, ctx) + self.closure(state, t, ctx, params)
        return self._finish(out, ctx)


class VanillaCNN(ClosureModel):
    """Closure ``Qbar CNN(ubar, f_H(ubar))`` with a forward difference ``Qbar``."""

    name = "CNN"
    kind = "cnn"

    def __init__(self, cfg, transform, net: ConvNet, params=None):
        if net.in_channels != 2 or net.out_channels != 1:
            raise ValueError("vanilla CNN closure needs 2 input and 1 output channel")
        self.net = net
        super().__init__(cfg, transform, params)

    def layout(self):
        return self.net.layout()

    def init(self, seed):
        rng = np.random.default_rng(seed)
        return self.with_params(self.layout().pack(glorot_params(self.net, rng)))

    def closure(self, ub, t, ctx, params=None):
        tensors = self.layout().unpack(self.params if params is None else params)
        p, r = self.cfg.radius, self.net.radius
        G = 1 + r + p
        ub2, squeeze = _batched(ub)
        up = self._pad_u(ub2, G, ctx, t)
        f_ext = rhs_valid(self.cfg, up, self.H)
        inp = ad.stack([_crop(up, G, 1 + r), _crop(f_ext, G - p, 1 + r)], axis=-2)
        v = forward_tensors(self.net, tensors, inp)[..., 0, :]  # padded by one cell
        _check_finite(v, "cnn output")
        I = self.I
        c = (v[..., 2:I + 2] - v[..., 1:I + 1]) * (1.0 / self.H)
        f_int = _crop(f_ext, G - p, 0)
        return (c[0], f_int[0]) if squeeze else (c, f_int)

    def rhs(self, state, t, ctx=PERIODIC_CONTEXT, params=None):
        c, f = self.closure(state, t, ctx, params)
        return self._finish(f + c, ctx)


class SPClosure(ClosureModel):
    """Energy- and momentum-conserving closure on the extended state ``[ubar; s]``.

    The closure is ``Omega_2^{-1} (B2^T k B3 - B3^T k B2) a - Omega_2^{-1} B1^T q^2 B1 a``
    with ``k = diag(k1, k2)`` and ``q = diag(q1, q2)`` produced by a CNN that sees
    ``(ubar, s, f_H(ubar))``.  The blocks of every ``B_i`` acting on ``ubar`` have
    zero-sum weights, so the closure adds no momentum.
    """

    name = "SP"
    kind = "sp"

    def __init__(self, cfg, transform: StateTransform, net: ConvNet, B: int = 1,
                 include_dissipation: bool = True, params=None):
        if net.in_channels != 3:
            raise ValueError("SP closure CNN takes 3 input channels")
        need = 4 if include_dissipation else 2
        if net.out_channels != need:
            raise ValueError(f"SP closure CNN needs {need} output channels")
        if B < 1:
            raise ValueError("stencil half-width B must be positive")
        self.net = net
        self.B = int(B)
        self.include_dissipation = bool(include_dissipation)
        self.rho = float(transform.comp.J * transform.comp.t @ transform.comp.t[::-1])
        super().__init__(cfg, transform, params)

    @property
    def dof(self) -> int:
        return 2 * self.I

    @property
    def depth(self) -> int:
        """Ghost depth needed for one RHS evaluation."""
        return max(self.B + self.net.radius + self.cfg.radius, 2 * self.B)

    def _stencil_names(self):
        return ("B1", "B2", "B3") if self.include_dissipation else ("B2", "B3")

    def layout(self):
        K = 2 * self.B + 1
        names = self._stencil_names()
        return self.net.layout() + ad.ParameterLayout(names, tuple((2, 2, K) for _ in names))

    def init(self, seed):
        rng = np.random.default_rng(seed)
        tensors = glorot_params(self.net, rng)
        K = 2 * self.B + 1
        std = np.sqrt(2.0 / (4 * K))
        for n in self._stencil_names():
            tensors[n] = rng.normal(0.0, std, size=(2, 2, K))
        return self.with_params(self.layout().pack(tensors))

    def pad_state(self, a, t, ctx, depth):
        I = self.I
        ub, s = a[..., :I], a[..., I:]
        up = self._pad_u(ub, depth, ctx, t)
        sp = pad(s, ctx.bc_kind, depth,
                 sgs_rho=self.rho if ctx.bc_kind == INFLOW_OUTFLOW else None)
        return up, sp

    def terms(self, a, t, ctx=PERIODIC_CONTEXT, params=None):
        """``(f_H, skew, dissipative)`` on interior cells, each of shape ``(B, ...)``.

        ``f_H`` has shape (B, I); the two closure terms have shape (B, 2, I)
        and already include the ``Omega_2^{-1}`` scaling.
        """
        tensors = self.layout().unpack(self.params if params is None else params)
        a, _ = _batched(a)
        B, r, p = self.B, self.net.radius, self.cfg.radius
        G = self.depth
        up, sp = self.pad_state(a, t, ctx, G)
        f_ext = rhs_valid(self.cfg, up, self.H)  # padded by G - p
        d_in = B + r
        inp = ad.stack([_crop(up, G, d_in), _crop(sp, G, d_in), _crop(f_ext, G - p, d_in)], axis=-2)
        fields = forward_tensors(self.net, tensors, inp)  # (n, C, I + 2B)
        _check_finite(fields, "cnn output")
        a2 = ad.stack([_crop(up, G, 2 * B), _crop(sp, G, 2 * B)], axis=-2)  # (n, 2, I + 4B)

        w2, w3 = block_weights(tensors["B2"]), block_weights(tensors["B3"])
        k = fields[:, -2:, :]
        B2a, B3a = ad.conv1d(a2, w2), ad.conv1d(a2, w3)
        skew = (ad.conv1d(k * B3a, transposed_kernel(w2))
                - ad.conv1d(k * B2a, transposed_kernel(w3))) * (1.0 / self.H)
        if self.include_dissipation:
            w1 = block_weights(tensors["B1"])
            q = fields[:, :2, :]
            diss = ad.conv1d(ad.square(q) * ad.conv1d(a2, w1), transposed_kernel(w1)) * (1.0 / self.H)
        else:
            diss = None
        return _crop(f_ext, G - p, 0), skew, diss

    def rhs(self, state, t, ctx=PERIODIC_CONTEXT, params=None):
        squeeze = ad.value(state).ndim == 1
        f, skew, diss = self.terms(state, t, ctx, params)
        c = skew if diss is None else skew - diss
        out = ad.concatenate([f + c[:, 0, :], c[:, 1, :]], axis=-1)
        if squeeze:
            out = out[0]
        return self._finish(out, ctx)

    def closure(self, state, t, ctx=PERIODIC_CONTEXT, params=None):
        """Closure part of the RHS (no ``f_H``, no forcing), shape (B, 2I)."""
        _, skew, diss = self.terms(state, t, ctx, params)
        c = skew if diss is None else skew - diss
        return ad.concatenate([c[:, 0, :], c[:, 1, :]], axis=-1)

    def momentum_residual(self, state, params=None) -> np.ndarray:
        """Momentum added by the closure, ``H * sum(closure on ubar)`` (periodic)."""
        c = ad.value(self.closure(state, 0.0, PERIODIC_CONTEXT, params))
        return self.H * np.sum(c[:, :self.I], axis=-1)


def sp_rhs(m: SPClosure, a, t=0.0, ctx=PERIODIC_CONTEXT):
    return m.rhs(a, t, ctx)


def sp_momentum_residual(m: SPClosure, a) -> float:
    return float(np.max(np.abs(m.momentum_residual(a))))


def vanilla_cnn_rhs(m: VanillaCNN, ubar, t=0.0, ctx=PERIODIC_CONTEXT):
    return m.rhs(ubar, t, ctx)


def smagorinsky_rhs(m: Smagorinsky, ubar, t=0.0, ctx=PERIODIC_CONTEXT):
    return m.rhs(ubar, t, ctx)


def no_closure_rhs(m: NoClosure, ubar, t=0.0, ctx=PERIODIC_CONTEXT):
    return m.rhs(ubar, t, ctx)


def default_sp_net(equation: str, hidden=None, kernel_size=5) -> ConvNet:
    """CNN of the SP closure with the tuned widths (20 for Burgers, 30 for KdV)."""
    if hidden is None:
        hidden = (20, 20) if equation == BURGERS else (30, 30)
    out = 4 if equation == BURGERS else 2
    return ConvNet(3, tuple(hidden), out, kernel_size)


def default_cnn_net(hidden=(20, 20), kernel_size=7) -> ConvNet:
    return ConvNet(2, tuple(hidden), 1, kernel_size)


def default_B(equation: str) -> int:
    return 1 if equation == BURGERS else 2


def make_sp(cfg: PDEConfig, transform: StateTransform, net=None, B=None, seed=0,
            include_dissipation=None) -> SPClosure:
    net = default_sp_net(cfg.kind) if net is None else net
    B = default_B(cfg.kind) if B is None else B
    if include_dissipation is None:
        include_dissipation = cfg.kind != KDV
    return SPClosure(cfg, transform, net, B, include_dissipation).init(seed)
