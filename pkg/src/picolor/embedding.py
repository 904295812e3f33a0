"""Feed-forward grayscale embedding network.

Architectures are written as a short layer string, one token per row of the
architecture table::

    c3/1:32     3x3 convolution, stride 1, 32 output channels
    r:32x2      two gated residual blocks of width 32
    r:256x3:d2  three residual blocks whose first convolution has dilation 2

Every convolution after the first is preceded by a concatenated ELU.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .nn import GatedResBlock, WNConv, concat_elu

PRESETS = {
    "cifar": "c3/1:32 r:32x2 c3/2:64 r:64x2 c3/1:128 r:128x2 c3/1:256 r:256x3:d2 c3/1:256",
    "ilsvrc": ("c3/1:64 r:64x2 c3/2:128 r:128x2 c3/2:256 r:256x2 c3/1:512 r:512x3:d2 "
               "c3/1:512 r:512x3:d4 c3/1:512"),
    "desk": "c3/1:32 r:32x1 c3/2:64 r:64x1 c3/1:128 r:128x2:d2 c3/1:128",
    "toy": "c3/1:16 r:16x1 c3/2:32 r:32x1:d2 c3/1:32",
}

_CONV = re.compile(r"^c(\d+)/(\d+):(\d+)$")
_RES = re.compile(r"^r:(\d+)x(\d+)(?::d(\d+))?$")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" or "resblock"
    kernel: int = 3
    stride: int = 1
    width: int = 32
    repeat: int = 1
    dilation: int = 1


@dataclass(frozen=True)
class EmbeddingConfig:
    layers: tuple = field(default_factory=tuple)
    gating: bool = True

    @classmethod
    def parse(cls, text, gating=True):
        text = PRESETS.get(text, text)
        layers = []
        for tok in text.split():
            m = _CONV.match(tok)
            if m:
                layers.append(LayerSpec("conv", int(m[1]), int(m[2]), int(m[3])))
                continue
            m = _RES.match(tok)
            if m:
                layers.append(LayerSpec("resblock", 3, 1, int(m[1]), int(m[2]), int(m[3] or 1)))
                continue
            raise ValueError(f"cannot parse embedding layer token {tok!r}")
        if not layers or layers[0].kind != "conv":
            raise ValueError("embedding architecture must start with a convolution")
        return cls(tuple(layers), gating)

    @property
    def factor(self):
        return int(np.prod([l.stride for l in self.layers if l.kind == "conv"]))

    @property
    def width(self):
        return self.layers[-1].width

    def output_shape(self, in_res):
        """(resolution, width) of the embedding for a square ``in_res`` input, without building weights."""
        res = in_res
        for spec in self.layers:
            if spec.kind == "conv":
                res = -(-res // spec.stride)
        return res, self.width

    def to_text(self):
        toks = []
        for l in self.layers:
            if l.kind == "conv":
                toks.append(f"c{l.kernel}/{l.stride}:{l.width}")
            else:
                toks.append(f"r:{l.width}x{l.repeat}" + (f":d{l.dilation}" if l.dilation != 1 else ""))
        return " ".join(toks)


class EmbeddingNet:
    """The luminance embedding network; parameters live under ``prefix``."""

    def __init__(self, config, store, factor=None, prefix="embed", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if factor is not None and config.factor != factor:
            raise ValueError(
                f"embedding strides multiply to {config.factor} but the chroma subsample factor is {factor}"
            )
        self.config = config
        self.factor = config.factor
        self.width = config.width
        self.layers = []
        c_in = 1
        conv_i = 0
        for li, spec in enumerate(config.layers):
            if spec.kind == "conv":
                fan_in = c_in if conv_i == 0 else 2 * c_in
                conv = WNConv(store, f"{prefix}.{li:02d}.conv", fan_in, spec.width,
                              (spec.kernel, spec.kernel), stride=spec.stride, rng=rng)
                self.layers.append(("conv", conv, conv_i == 0))
                conv_i += 1
            else:
                if spec.width != c_in:
                    raise ValueError(f"layer {li}: residual width {spec.width} != incoming width {c_in}")
                for r in range(spec.repeat):
                    blk = GatedResBlock(store, f"{prefix}.{li:02d}.res{r}", spec.width, "same",
                                        (3, 3), dilation=spec.dilation, gating=config.gating, rng=rng)
                    self.layers.append(("res", blk, False))
            c_in = spec.width

    def __call__(self, p, luminance, init=False):
        """Luminance (N, 1, H, W) in [-1, 1] -> embedding (N, width, H/f, W/f)."""
        h, w = luminance.shape[2:]
        if h % self.factor or w % self.factor:
            raise ValueError(f"input {h}x{w} is not divisible by the subsample factor {self.factor}")
        x = luminance
        for kind, layer, first in self.layers:
            if kind == "conv":
                x = layer(p, x if first else concat_elu(x), init)
            else:
                x = layer(p, x, init=init)
        return x

    def summary(self, in_res):
        """One text row per table entry: operation, resolution, width, dilation."""
        rows = [f"{'Operation':<22}{'Res.':>6}{'Width':>7}{'D':>4}"]
        res = in_res
        for spec in self.config.layers:
            if spec.kind == "conv":
                res = -(-res // spec.stride)
                op = f"Conv. {spec.kernel}x{spec.kernel}/{spec.stride}"
            else:
                op = f"Resid. block x {spec.repeat}"
            d = str(spec.dilation) if spec.kind == "resblock" and spec.dilation != 1 else "--"
            rows.append(f"{op:<22}{res:>6}{spec.width:>7}{d:>4}")
        return "\n".join(rows)


def zeros_embedding(n, width, h, w, dtype=np.float64):
    return ag.Tensor(np.zeros((n, width, h, w), dtype=dtype))
