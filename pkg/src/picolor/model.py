"""Full colorization model and the embedding-only ablation."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .embedding import EmbeddingConfig, EmbeddingNet
from .mixture import mixture_nll_field
from .nn import WNConv
from .params import ParameterStore
from .pixelcnn import HEAD_INIT_SCALE, ARConfig, PixelCNN


@dataclass(frozen=True)
class ModelConfig:
    embedding: str = "desk"
    ar: ARConfig = field(default_factory=ARConfig)
    factor: int = 2
    gating: bool = True
    zero_embedding: bool = False

    def embedding_config(self):
        return EmbeddingConfig.parse(self.embedding, gating=self.gating)

    def ar_config(self):
        return replace(self.ar, gating=self.gating)


class ColorizationModel:
    """Embedding network feeding the causal chroma network."""

    kind = "full"

    def __init__(self, config, store=None, seed=0, dtype=np.float64):
        self.config = config
        self.store = store if store is not None else ParameterStore(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
        self.embed_net = EmbeddingNet(config.embedding_config(), self.store, factor=config.factor, rng=rng)
        self.ar_net = PixelCNN(config.ar_config(), self.store, cond_channels=self.embed_net.width, rng=rng)
        self.n_levels = config.ar.n_levels
        self.floor = config.ar.log_scale_floor

    @property
    def factor(self):
        return self.config.factor

    def params(self, variant="raw", requires_grad=False):
        return self.store.tensors(variant, requires_grad)

    def embed(self, p, luminance, init=False):
        emb = self.embed_net(p, _t(luminance, self.store.dtype), init)
        if self.config.zero_embedding:
            emb = ag.Tensor(np.zeros_like(emb.data))
        return emb

    def mixture_field(self, p, luminance, chroma, embedding=None, init=False):
        """Raw (N, 6K, h, w) mixture parameters under teacher forcing."""
        if embedding is None:
            embedding = self.embed(p, luminance, init)
        return self.ar_net(p, _t(chroma, self.store.dtype), embedding, init)

    def pixel_nll(self, p, batch, init=False):
        out = self.mixture_field(p, batch.luminance, batch.chroma, init=init)
        return mixture_nll_field(out, batch.a_bins, batch.b_bins, self.n_levels, self.floor)

    def loss(self, p, batch, init=False):
        """Summed NLL in nats over every image and chroma pixel of the batch."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        return ag.tsum(self.pixel_nll(p, batch, init))

    def initialize(self, batch, head_only=False):
        """Data-dependent initialization of all weight-normalized convolutions."""
        if head_only:
            raise ValueError("head_only initialization applies to the embedding-only model")
        p = self.params("raw")
        self.mixture_field(p, batch.luminance, batch.chroma, init=True)
        for _, e in self.store.items():
            e.shadow[...] = e.value


class EmbeddingOnlyModel:
    """Embedding network plus a 1x1 head emitting independent per-pixel mixtures."""

    kind = "embedding_only"

    def __init__(self, config, store=None, seed=0, dtype=np.float64):
        self.config = config
        self.store = store if store is not None else ParameterStore(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
        self.embed_net = EmbeddingNet(config.embedding_config(), self.store, factor=config.factor, rng=rng)
        head_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAB1]))
        self.head = WNConv(self.store, "ablation.head", self.embed_net.width, config.ar.n_outputs, (1, 1),
                           padding="valid", init_scale=HEAD_INIT_SCALE, rng=head_rng)
        self.n_levels = config.ar.n_levels
        self.floor = config.ar.log_scale_floor

    @property
    def factor(self):
        return self.config.factor

    def params(self, variant="raw", requires_grad=False):
        return self.store.tensors(variant, requires_grad)

    def mixture_field(self, p, luminance, chroma=None, init=False):
        emb = self.embed_net(p, _t(luminance, self.store.dtype), init)
        return self.head(p, emb, init)

    def pixel_nll(self, p, batch, init=False):
        out = self.mixture_field(p, batch.luminance, init=init)
        return mixture_nll_field(out, batch.a_bins, batch.b_bins, self.n_levels, self.floor)

    def loss(self, p, batch, init=False):
        if len(batch) == 0:
            raise ValueError("empty batch")
        return ag.tsum(self.pixel_nll(p, batch, init))

    def initialize(self, batch, head_only=False):
        """Data-dependent init; ``head_only`` keeps a transplanted embedding intact."""
        p = self.params("raw")
        if head_only:
            emb = self.embed_net(p, _t(batch.luminance, self.store.dtype))
            self.head(p, emb, init=True)
        else:
            self.mixture_field(p, batch.luminance, init=True)
        for _, e in self.store.items():
            e.shadow[...] = e.value

    def load_embedding_from(self, store, variant="raw"):
        """Copy ``embed.*`` weights from a trained full model's store."""
        src = store.arrays(variant)
        for name, e in self.store.items():
            if name.startswith("embed."):
                e.value[...] = src[name]
                e.shadow[...] = src[name]


def build_model(config, seed=0, dtype=np.float64, variant="full"):
    if variant == "full":
        return ColorizationModel(config, seed=seed, dtype=dtype)
    if variant == "embedding_only":
        return EmbeddingOnlyModel(config, seed=seed, dtype=dtype)
    raise ValueError(f"unknown model variant {variant!r}")


def attach_store(model_cls, config, store, seed=0):
    """Rebuild a model around an existing store (e.g. one loaded from a checkpoint)."""
    fresh = model_cls(config, seed=seed, dtype=store.dtype)
    expected = fresh.store.shapes()
    from .checkpoint import check_architecture

    check_architecture(store, expected)
    fresh.store = store
    return fresh


def _t(x, dtype):
    if isinstance(x, ag.Tensor):
        return x if x.dtype == dtype else ag.Tensor(x.data.astype(dtype))
    return ag.Tensor(np.asarray(x, dtype=dtype))
