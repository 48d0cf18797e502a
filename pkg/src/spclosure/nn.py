"""Small 1D convolutional network used inside the closures.

Convolutions have stride 1 and odd kernels; ReLU between layers and a linear
output layer.  ``forward`` accepts either a ready-padded input (``padding=
"valid"``), wraps it circularly, or takes explicit ghost blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ConvNet:
    in_channels: int
    hidden: tuple
    out_channels: int
    kernel_size: int = 5
    params: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        chans = self.channels
        if any(int(c) < 1 for c in chans):
            raise ValueError(f"every layer needs at least one channel, got {chans}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        object.__setattr__(self, "hidden", tuple(int(c) for c in self.hidden))

    @property
    def channels(self) -> tuple:
        return (self.in_channels,) + tuple(self.hidden) + (self.out_channels,)

    @property
    def n_layers(self) -> int:
        return len(self.channels) - 1

    @property
    def radius(self) -> int:
        """Receptive-field half-width of the stacked convolutions."""
        return self.n_layers * (self.kernel_size - 1) // 2

    def layout(self, prefix: str = "cnn") -> ad.ParameterLayout:
        names, shapes = [], []
        ch = self.channels
        for l in range(self.n_layers):
            names += [f"{prefix}.w{l}", f"{prefix}.b{l}"]
            shapes += [(ch[l + 1], ch[l], self.kernel_size), (ch[l + 1],)]
        return ad.ParameterLayout(tuple(names), tuple(shapes))

    @property
    def n_params(self) -> int:
        return self.layout().size

    def with_params(self, params) -> "ConvNet":
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        return ConvNet(self.in_channels, self.hidden, self.out_channels, self.kernel_size, params)


def glorot_params(net: ConvNet, rng: np.random.Generator, prefix="cnn") -> dict:
    out = {}
    ch, K = net.channels, net.kernel_size
    for l in range(net.n_layers):
        fan_in, fan_out = ch[l] * K, ch[l + 1] * K
        std = np.sqrt(2.0 / (fan_in + fan_out))
        out[f"{prefix}.w{l}"] = rng.normal(0.0, std, size=(ch[l + 1], ch[l], K))
        out[f"{prefix}.b{l}"] = np.zeros(ch[l + 1])
    return out


def init_glorot(net: ConvNet, seed) -> ConvNet:
    """Glorot-normal weights, zero biases; deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return net.with_params(net.layout().pack(glorot_params(net, rng)))


def forward_tensors(net: ConvNet, tensors: dict, x, prefix="cnn"):
    """Valid evaluation: output is shorter than ``x`` by ``2 * net.radius``."""
    h = x
    for l in range(net.n_layers):
        h = ad.conv1d(h, tensors[f"{prefix}.w{l}"], tensors[f"{prefix}.b{l}"])
        if l < net.n_layers - 1:
            h = ad.relu(h)
    return h


def forward(net: ConvNet, x, padding: str = "circular", ghost=None, params=None):
    """Evaluate the network on ``x`` of shape ``(C, L)`` or ``(B, C, L)``.

    ``padding``: "circular" (same-length output), "valid" (no padding), or
    "ghost" with ``ghost=(left, right)`` blocks of width ``net.radius``.
    """
    params = net.params if params is None else params
    if params is None:
        raise ValueError("network has no parameters; call init_glorot first")
    tensors = net.layout().unpack(params)
    squeeze = ad.value(x).ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + ad.value(x).shape)
    if ad.value(x).shape[-2] != net.in_channels:
        raise ValueError(f"expected {net.in_channels} input channels, got {ad.value(x).shape[-2]}")
    r = net.radius
    if padding == "circular" and r:
        L = ad.value(x).shape[-1]
        x = ad.concatenate([ad.take(x, np.arange(-r, 0) % L), x, ad.take(x, np.arange(r) % L)], -1)
    elif padding == "ghost" and r:
        left, right = ghost
        if squeeze:
            left = ad.reshape(left, (1,) + ad.value(left).shape)
            right = ad.reshape(right, (1,) + ad.value(right).shape)
        x = ad.concatenate([left, x, right], axis=-1)
    elif padding not in ("valid", "circular", "ghost"):
        raise ValueError(f"unknown padding {padding!r}")
    y = forward_tensors(net, tensors, x)
    return y[0] if squeeze else y
