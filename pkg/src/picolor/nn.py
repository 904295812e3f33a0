"""Building blocks shared by the embedding and autoregressive networks.

Layers register their parameters in a :class:`~picolor.params.ParameterStore`
at construction and are called with a dict of parameter tensors, so the same
layer object serves raw weights, Polyak shadows and taped training passes.
Passing ``init=True`` to a call runs data-dependent initialization: each
weight-normalized convolution rescales its gain and bias so that its output on
the current batch has zero mean and unit variance per channel.
"""

import numpy as np

from . import autograd as ag

DIRECTION_INIT_STD = 0.05


def concat_elu(x):
    """``[elu(x), elu(-x)]`` stacked on the channel axis."""
    return ag.concat([ag.elu(x), ag.elu(-x)], axis=1)


def weight_norm_conv(x, direction, gain, bias, stride=1, dilation=1, padding="same"):
    """Convolution with kernel ``gain * direction / ||direction||`` per output channel."""
    co = direction.shape[0]
    if gain.shape != (co,):
        raise ValueError(f"gain must have shape ({co},), got {gain.shape}")
    sq = ag.tsum(ag.square(direction), axis=(1, 2, 3))
    if np.any(sq.data <= 0.0):
        bad = int(np.flatnonzero(sq.data <= 0.0)[0])
        raise ValueError(f"weight-norm direction has zero norm for output channel {bad}")
    scale = gain / ag.sqrt(sq)
    kernel = direction * ag.reshape(scale, (co, 1, 1, 1))
    return ag.conv2d(x, kernel, bias, stride=stride, dilation=dilation, padding=padding)


def causal_padding(kind, kernel, dilation=1):
    """Explicit padding for ``same``, ``down`` and ``down_right`` convolutions."""
    kh, kw = kernel
    if kind == "same":
        return "same"
    if kind == "down":
        return (dilation * (kh - 1), 0, dilation * (kw - 1) // 2, dilation * (kw - 1) // 2)
    if kind == "down_right":
        return (dilation * (kh - 1), 0, dilation * (kw - 1), 0)
    raise ValueError(f"unknown convolution kind {kind!r}")


class WNConv:
    """Weight-normalized convolution owning ``.direction``, ``.gain`` and ``.bias``."""

    def __init__(self, store, name, c_in, c_out, kernel=(3, 3), stride=1, dilation=1,
                 padding="same", zero_init=False, init_scale=1.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        self.kernel = (kh, kw)
        self.stride, self.dilation, self.padding = stride, dilation, padding
        self.zero_init = zero_init
        self.init_scale = init_scale
        self.direction = store.add(f"{name}.direction", rng.normal(0.0, DIRECTION_INIT_STD, (c_out, c_in, kh, kw)))
        self.gain = store.add(f"{name}.gain", np.zeros(c_out) if zero_init else np.ones(c_out))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))

    def __call__(self, p, x, init=False):
        if init and not self.zero_init:
            self._data_init(p, x)
        return weight_norm_conv(
            x, p[self.direction], p[self.gain], p[self.bias],
            stride=self.stride, dilation=self.dilation, padding=self.padding,
        )

    def _data_init(self, p, x):
        v = p[self.direction].data
        norm = np.sqrt((v * v).sum(axis=(1, 2, 3)))
        unit = ag.Tensor(v / norm[:, None, None, None])
        t = ag.conv2d(ag.Tensor(x.data), unit, None, self.stride, self.dilation, self.padding).data
        mean = t.mean(axis=(0, 2, 3))
        std = np.sqrt(t.var(axis=(0, 2, 3)) + 1e-12)
        # constant inputs (e.g. a zeroed condition) carry no scale information
        std = np.where(std < 1e-5, 1.0, std)
        p[self.gain].data[...] = self.init_scale / std
        p[self.bias].data[...] = -mean * self.init_scale / std


class GatedResBlock:
    """Residual block: two convolutions behind concatenated ELUs, optional gate.

    ``out = x + c * sigmoid(g)`` where ``(c, g)`` split the second convolution's
    2C channels; without gating the second convolution has C channels and is
    added directly. ``aux`` (another stream) enters the first convolution's
    output through a 1x1 convolution of its concatenated ELU; ``cond`` enters
    through a plain 1x1 projection. The second convolution starts at zero so
    the block is an exact identity at construction.
    """

    def __init__(self, store, name, channels, kind="same", kernel=(3, 3), dilation=1,
                 aux_channels=0, cond_channels=0, gating=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.gating = gating
        self.conv1 = WNConv(store, f"{name}.conv1", 2 * channels, channels, kernel, dilation=dilation,
                            padding=causal_padding(kind, kernel, dilation), rng=rng)
        self.aux = (WNConv(store, f"{name}.aux", 2 * aux_channels, channels, (1, 1), padding="valid", rng=rng)
                    if aux_channels else None)
        self.cond = (WNConv(store, f"{name}.cond", cond_channels, channels, (1, 1), padding="valid", rng=rng)
                     if cond_channels else None)
        out = 2 * channels if gating else channels
        self.conv2 = WNConv(store, f"{name}.conv2", 2 * channels, out, kernel,
                            padding=causal_padding(kind, kernel), zero_init=True, rng=rng)

    def __call__(self, p, x, aux=None, cond=None, init=False):
        if x.shape[1] != self.channels:
            raise ValueError(f"block expects {self.channels} channels, got input of shape {x.shape}")
        c1 = self.conv1(p, concat_elu(x), init)
        if self.aux is not None:
            if aux is None:
                raise ValueError("block was built with an auxiliary input but none was given")
            c1 = c1 + self.aux(p, concat_elu(aux), init)
        if self.cond is not None and cond is not None:
            if cond.shape[2:] != c1.shape[2:]:
                raise ValueError(f"condition {cond.shape} does not match block activations {c1.shape}")
            c1 = c1 + self.cond(p, cond, init)
        c2 = self.conv2(p, concat_elu(c1), init)
        if not self.gating:
            return x + c2
        c, g = ag.split(c2, 2, axis=1)
        return x + c * ag.sigmoid(g)


def randomize_gains(store, rng, scale=0.5):
    """Give every gain a random nonzero value (lifts zero-initialized branches)."""
    for name, e in store.items():
        if name.endswith(".gain"):
            e.value[...] = rng.uniform(0.5, 1.5, e.value.shape) * scale * rng.choice([-1.0, 1.0], e.value.shape)
        elif name.endswith(".bias"):
            e.value[...] = rng.normal(0.0, 0.1, e.value.shape)
        e.shadow[...] = e.value
    return store
