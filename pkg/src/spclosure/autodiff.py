"""Reverse-mode automatic differentiation on a tape of coarse numpy primitives.

Every primitive accepts plain ``ndarray`` inputs as well as :class:`Var`.  When no
input is a ``Var`` the primitive simply evaluates with numpy, so model code is
written once and runs both inside training (recorded) and in plain simulation
(not recorded, no overhead).

Usage::

    tape = Tape()
    theta = tape.variable(theta0)
    loss = model_loss(theta)
    (g,) = tape.gradient(loss, [theta])
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A recorded primitive produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by primitive '{op}'")
        self.op = op


class Tape:
    def __init__(self, check_finite: bool = True):
        self.nodes: list[Var] = []
        self.check_finite = check_finite

    def variable(self, value) -> "Var":
        v = Var(np.array(value, dtype=np.float64), self, (), None, "leaf")
        self.nodes.append(v)
        return v

    def _record(self, value, parents, vjp, op) -> "Var":
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
        v = Var(value, self, parents, vjp, op)
        self.nodes.append(v)
        return v

    def gradient(self, out: "Var", wrt, seed=None) -> list[np.ndarray]:
        """Adjoints of ``out`` with respect to each Var in ``wrt``.

        ``out`` is usually a scalar; for array outputs ``seed`` is the
        cotangent (defaults to ones).
        """
        if not isinstance(out, Var):
            return [np.zeros_like(w.value) for w in wrt]
        adj = {id(out): np.ones_like(out.value) if seed is None else np.asarray(seed, float)}
        leaves = {}
        for node in reversed(self.nodes):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if node.vjp is None:
                leaves[id(node)] = g
                continue
            for p, gp in zip(node.parents, node.vjp(g)):
                if gp is None:
                    continue
                k = id(p)
                adj[k] = adj[k] + gp if k in adj else gp
        return [np.array(leaves.get(id(w), np.zeros_like(w.value))) for w in wrt]


class Var:
    __slots__ = ("value", "tape", "parents", "vjp", "op")
    __array_priority__ = 1000.0

    def __init__(self, value, tape, parents, vjp, op):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _parents(*xs):
    return tuple(x for x in xs if isinstance(x, Var))


# elementwise ---------------------------------------------------------------

def add(a, b):
    tape = _tape_of(a, b)
    va, vb = value(a), value(b)
    out = va + vb
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)

    def vjp(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g, sa))
        if isinstance(b, Var):
            res.append(_unbroadcast(g, sb))
        return res
    return tape._record(out, _parents(a, b), vjp, "add")


def sub(a, b):
    tape = _tape_of(a, b)
    va, vb = value(a), value(b)
    out = va - vb
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)

    def vjp(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g, sa))
        if isinstance(b, Var):
            res.append(-_unbroadcast(g, sb))
        return res
    return tape._record(out, _parents(a, b), vjp, "sub")


def mul(a, b):
    tape = _tape_of(a, b)
    va, vb = value(a), value(b)
    out = va * vb
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)

    def vjp(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g * vb, sa))
        if isinstance(b, Var):
            res.append(_unbroadcast(g * va, sb))
        return res
    return tape._record(out, _parents(a, b), vjp, "mul")


def div(a, b):
    tape = _tape_of(a, b)
    va, vb = value(a), value(b)
    out = va / vb
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)

    def vjp(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g / vb, sa))
        if isinstance(b, Var):
            res.append(_unbroadcast(-g * out / vb, sb))
        return res
    return tape._record(out, _parents(a, b), vjp, "div")


def square(x):
    if not isinstance(x, Var):
        return np.square(x)
    vx = x.value
    return x.tape._record(vx * vx, (x,), lambda g: (2.0 * g * vx,), "square")


def power(x, p):
    if not isinstance(x, Var):
        return np.power(x, p)
    vx = x.value
    out = np.power(vx, p)
    return x.tape._record(out, (x,), lambda g: (g * p * np.power(vx, p - 1),), "power")


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0
    return x.tape._record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def absolute(x):
    if not isinstance(x, Var):
        return np.abs(x)
    sgn = np.sign(x.value)
    return x.tape._record(np.abs(x.value), (x,), lambda g: (g * sgn,), "abs")


# reductions and shape ------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return x.tape._record(np.asarray(out), (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False):
    n = value(x).size if axis is None else np.prod([value(x).shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    old = x.value.shape
    return x.tape._record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    if not isinstance(x, Var):
        return np.transpose(x, axes)
    inv = np.argsort(axes)
    return x.tape._record(np.transpose(x.value, axes), (x,),
                          lambda g: (np.transpose(g, inv),), "transpose")


def _basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None
               for i in items)


def getitem(x, idx):
    if not isinstance(x, Var):
        return x[idx]
    shape = x.value.shape
    basic = _basic_index(idx)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return x.tape._record(np.array(x.value[idx]), (x,), vjp, "getitem")


def take(x, indices):
    """Gather along the last axis (indices may repeat)."""
    indices = np.asarray(indices, dtype=np.intp)
    if not isinstance(x, Var):
        return np.take(x, indices, axis=-1)
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(np.moveaxis(full, -1, 0), indices, np.moveaxis(g, -1, 0))
        return (full,)
    return x.tape._record(np.take(x.value, indices, axis=-1), (x,), vjp, "take")


def concatenate(xs, axis=-1):
    xs = list(xs)
    tape = _tape_of(*xs)
    vals = [value(x) for x in xs]
    if tape is None:
        return np.concatenate(vals, axis=axis)
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        return [p for x, p in zip(xs, parts) if isinstance(x, Var)]
    return tape._record(out, _parents(*xs), vjp, "concatenate")


def stack(xs, axis=0):
    xs = list(xs)
    tape = _tape_of(*xs)
    vals = [value(x) for x in xs]
    if tape is None:
        return np.stack(vals, axis=axis)
    out = np.stack(vals, axis=axis)

    def vjp(g):
        parts = np.moveaxis(g, axis, 0)
        return [parts[i] for i, x in enumerate(xs) if isinstance(x, Var)]
    return tape._record(out, _parents(*xs), vjp, "stack")


# convolution ---------------------------------------------------------------

def conv1d(x, w, b=None):
    """Valid 1D cross-correlation.

    ``x``: (B, Cin, L), ``w``: (Cout, Cin, K), ``b``: (Cout,) or None.
    Returns (B, Cout, L - K + 1) with
    ``y[n, o, i] = sum_{c,k} w[o, c, k] x[n, c, i + k] + b[o]``.
    """
    tape = _tape_of(x, w, b)
    vx, vw = value(x), value(w)
    K = vw.shape[-1]
    L_out = vx.shape[-1] - K + 1
    if L_out < 1:
        raise ValueError(f"input length {vx.shape[-1]} shorter than kernel {K}")
    if vx.shape[-2] != vw.shape[1]:
        raise ValueError(f"channel mismatch: input has {vx.shape[-2]}, kernel expects {vw.shape[1]}")
    n, cin = vx.shape[0], vx.shape[1]
    cout = vw.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(vx, K, axis=-1)  # (B, Cin, Lout, K)
    cols = win.transpose(0, 2, 1, 3).reshape(n, L_out, cin * K)
    wmat = vw.reshape(cout, cin * K)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1)
    if b is not None:
        out = out + value(b)[:, None]
    if tape is None:
        return out

    def vjp(g):
        res = []
        gt = g.transpose(0, 2, 1)  # (B, Lout, Cout)
        if isinstance(x, Var):
            gx = np.zeros(vx.shape)
            gcols = np.matmul(gt, wmat).reshape(n, L_out, cin, K).transpose(0, 2, 1, 3)
            for k in range(K):
                gx[..., k:k + L_out] += gcols[..., k]
            res.append(gx)
        if isinstance(w, Var):
            gw = gt.reshape(-1, cout).T @ cols.reshape(-1, cin * K)
            res.append(gw.reshape(vw.shape))
        if isinstance(b, Var):
            res.append(g.sum(axis=(0, 2)))
        return res
    return tape._record(out, _parents(x, w, b), vjp, "conv1d")


# parameter layout ----------------------------------------------------------

@dataclass(frozen=True)
class ParameterLayout:
    """Named tensors packed into one flat vector."""

    names: tuple
    shapes: tuple

    @property
    def sizes(self):
        return tuple(int(np.prod(s)) for s in self.shapes)

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def unpack(self, flat) -> dict:
        """Split ``flat`` (ndarray or Var) into named tensors."""
        if value(flat).shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {value(flat).shape}")
        off = self.offsets()
        return {n: reshape(getitem(flat, slice(off[i], off[i + 1])), s)
                for i, (n, s) in enumerate(zip(self.names, self.shapes))}

    def pack(self, tensors: dict) -> np.ndarray:
        parts = []
        for n, s in zip(self.names, self.shapes):
            t = np.asarray(tensors[n], dtype=np.float64)
            if t.shape != tuple(s):
                raise ValueError(f"tensor {n}: expected shape {s}, got {t.shape}")
            parts.append(t.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def __add__(self, other: "ParameterLayout") -> "ParameterLayout":
        return ParameterLayout(self.names + other.names, self.shapes + other.shapes)


def value_and_grad(fn, theta):
    """Evaluate scalar ``fn(theta)`` and its gradient with respect to the flat vector."""
    tape = Tape()
    x = tape.variable(theta)
    out = fn(x)
    (g,) = tape.gradient(out, [x])
    return float(value(out)), g


def grad(fn, theta) -> np.ndarray:
    return value_and_grad(fn, theta)[1]
