"""Causal two-stream autoregressive network over subsampled chroma.

A vertical stream sees every row strictly above the current pixel (down-shifted
2x3 convolutions); a horizontal stream sees the pixels to the left in the
current row (down-right-shifted 2x2 convolutions) and receives the vertical
stream through a 1x1 link. The embedding biases the first convolution of every
residual block. The input is the normalized (a, b) planes plus a constant-one
channel, so the first pixel still gets a learnable distribution.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .colorspace import N_LEVELS
from .mixture import LOG_SCALE_FLOOR, N_MIXTURES, n_outputs
from .nn import GatedResBlock, WNConv, causal_padding

HEAD_INIT_SCALE = 0.1


@dataclass(frozen=True)
class ARConfig:
    n_resblocks: int = 4
    channels: int = 160
    gating: bool = True
    n_mixtures: int = N_MIXTURES
    n_levels: int = N_LEVELS
    log_scale_floor: float = LOG_SCALE_FLOOR

    def __post_init__(self):
        if self.channels % 2:
            raise ValueError(f"AR channels must be even, got {self.channels}")
        if self.n_resblocks < 0 or self.n_mixtures < 1 or self.n_levels < 2:
            raise ValueError(f"invalid AR config {self}")

    @property
    def n_outputs(self):
        return n_outputs(self.n_mixtures)


class PixelCNN:
    """The autoregressive network; parameters live under ``prefix``."""

    def __init__(self, config, store, cond_channels, prefix="ar", rng=None):
        rng = rng if rng is not None else np.random.default_rng(1)
        c = config.channels
        self.config = config
        self.u_init = WNConv(store, f"{prefix}.u_init", 3, c, (2, 3),
                             padding=causal_padding("down", (2, 3)), rng=rng)
        self.ul_init_row = WNConv(store, f"{prefix}.ul_init_row", 3, c, (1, 3),
                                  padding=causal_padding("down", (1, 3)), rng=rng)
        self.ul_init_col = WNConv(store, f"{prefix}.ul_init_col", 3, c, (2, 1),
                                  padding=causal_padding("down_right", (2, 1)), rng=rng)
        self.u_blocks = []
        self.ul_blocks = []
        for i in range(config.n_resblocks):
            self.u_blocks.append(GatedResBlock(
                store, f"{prefix}.u{i}", c, "down", (2, 3), cond_channels=cond_channels,
                gating=config.gating, rng=rng))
            self.ul_blocks.append(GatedResBlock(
                store, f"{prefix}.ul{i}", c, "down_right", (2, 2), aux_channels=c,
                cond_channels=cond_channels, gating=config.gating, rng=rng))
        self.head = WNConv(store, f"{prefix}.head", c, config.n_outputs, (1, 1), padding="valid",
                           init_scale=HEAD_INIT_SCALE, rng=rng)
        self.forward_count = 0

    def __call__(self, p, chroma, embedding=None, init=False):
        """Chroma (N, 2, h, w) in [-1, 1] -> mixture parameters (N, 6K, h, w)."""
        if chroma.ndim != 4 or chroma.shape[1] != 2:
            raise ValueError(f"chroma must be (N, 2, h, w), got {chroma.shape}")
        if embedding is not None and (embedding.shape[0] != chroma.shape[0]
                                      or embedding.shape[2:] != chroma.shape[2:]):
            raise ValueError(f"embedding {embedding.shape} is not aligned with chroma {chroma.shape}")
        self.forward_count += 1
        n, _, h, w = chroma.shape
        ones = ag.Tensor(np.ones((n, 1, h, w), dtype=chroma.dtype))
        x = ag.concat([chroma, ones], axis=1)
        u = ag.shift_down(self.u_init(p, x, init))
        ul = ag.shift_down(self.ul_init_row(p, x, init)) + ag.shift_right(self.ul_init_col(p, x, init))
        for ub, ulb in zip(self.u_blocks, self.ul_blocks):
            u = ub(p, u, cond=embedding, init=init)
            ul = ulb(p, ul, aux=u, cond=embedding, init=init)
        return self.head(p, ag.elu(ul), init)


def dependency_matrix(net, p, chroma, embedding=None, delta=0.5, chunk=64):
    """Exact impulse-traced dependency of outputs on inputs for one image.

    ``dep[i, j]`` is True when changing chroma pixel ``j`` (raster index)
    changes any output channel at pixel ``i``, compared bit for bit. Each
    perturbed copy is compared with an unperturbed copy at the same batch
    position, so the check does not depend on batch-size effects in BLAS.
    """
    chroma = np.asarray(chroma.data if isinstance(chroma, ag.Tensor) else chroma)
    _, _, h, w = chroma.shape
    n = h * w
    dep = np.zeros((n, n), dtype=bool)
    emb = None if embedding is None else np.asarray(embedding.data if isinstance(embedding, ag.Tensor) else embedding)
    for start in range(0, n, chunk):
        js = np.arange(start, min(start + chunk, n))
        base = np.repeat(chroma, len(js), axis=0)
        pert = base.copy()
        pert[np.arange(len(js)), :, js // w, js % w] += delta
        e = None if emb is None else ag.Tensor(np.repeat(emb, len(js), axis=0))
        out0 = net(p, ag.Tensor(base), e).data
        out1 = net(p, ag.Tensor(pert), e).data
        changed = np.any(out0 != out1, axis=1).reshape(len(js), n)
        dep[:, js] = changed.T
    return dep


def causal_mask(h, w):
    """Strict raster-order mask: pixel i may depend on j only when j < i."""
    n = h * w
    return np.tril(np.ones((n, n), dtype=bool), k=-1)
