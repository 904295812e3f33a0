"""Sampling, likelihood evaluation, saturation and the two ablations.

Sampling is the naive sequential procedure: one full autoregressive forward
pass per chroma pixel, in raster order, each reading the distribution at the
current pixel and writing the drawn bin centers back into the canvas. Every
image in a batch draws from its own stream, so results do not depend on what
else is in the batch.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import colorspace as cs
from .data import Batch, permutation_hash
from .mixture import MixtureParams, bits_per_dim, map_estimate, mixture_nll, sample_from_uniforms
from .model import ColorizationModel, EmbeddingOnlyModel
from .seeding import derive_seed

log = logging.getLogger(__name__)

MONTAGE_COLUMNS = 4


@dataclass
class ColorizationResult:
    luminance: np.ndarray  # (H, W) in [0, 100], the input plane
    samples: list  # LabImage per sample, chroma at the model's subsampled resolution
    nll: list  # joint NLL in nats per sample
    saturation: list  # percent, after bilinear chroma upsampling
    seeds: list = field(default_factory=list)


@dataclass
class EvalReport:
    dataset: str
    n_images: int
    total_nats: float
    dims: int
    bits_per_dim: float
    mean_saturation: float = None
    config_hash: str = ""
    weights: str = "polyak"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)


# ------------------------------------------------------------------ saturation

def saturation_map(L, a, b):
    """Per-pixel ``C / sqrt(C^2 + L^2)`` in percent; 0 where L = C = 0."""
    L = np.asarray(L, dtype=np.float64)
    c = np.hypot(a, b)
    denom = np.hypot(c, L)
    return 100.0 * np.divide(c, denom, out=np.zeros_like(denom), where=denom > 0)


def saturation(img):
    """Mean perceptual saturation (percent) of a LabImage, upsampling chroma bilinearly if needed."""
    if img.factor != 1:
        img = cs.upsample_chroma(img, "bilinear")
    return float(saturation_map(img.L, img.a, img.b).mean())


# ------------------------------------------------------------------- sampling

def _params_at(field_tensor, y, x):
    return MixtureParams.from_channels(field_tensor.data[:, :, y, x], axis=1)


def sample_sequential(model, embedding, seeds, variant="polyak"):
    """Raster-order rollout for a batch of embeddings.

    ``seeds`` gives one integer per batch element; element ``n`` draws three
    uniforms per pixel from ``np.random.default_rng(seeds[n])``. Returns
    ``(a_bins, b_bins, log_probs)`` with shapes (N, h, w) and log-probabilities
    accumulated per image in nats.
    """
    if not isinstance(model, ColorizationModel):
        raise TypeError("sequential sampling needs the full autoregressive model")
    n, _, h, w = embedding.shape
    if len(seeds) != n:
        raise ValueError(f"need one seed per image: {len(seeds)} seeds for {n} embeddings")
    p = model.params(variant)
    rngs = [np.random.default_rng(s) for s in seeds]
    dtype = model.store.dtype
    canvas = np.zeros((n, 2, h, w), dtype=dtype)
    a_bins = np.zeros((n, h, w), dtype=np.int64)
    b_bins = np.zeros((n, h, w), dtype=np.int64)
    logp = np.zeros(n)
    centers = cs.dequantize_ab(np.arange(model.n_levels), model.n_levels)
    for y in range(h):
        for x in range(w):
            out = model.ar_net(p, ag.Tensor(canvas), embedding)
            params = _params_at(out, y, x)
            u = np.stack([r.random(3) for r in rngs])
            a, b = sample_from_uniforms(params, u, model.n_levels, model.floor)
            logp -= mixture_nll(params, a, b, model.n_levels, model.floor)
            a_bins[:, y, x], b_bins[:, y, x] = a, b
            canvas[:, 0, y, x] = centers[a]
            canvas[:, 1, y, x] = centers[b]
    return a_bins, b_bins, logp


def _bins_to_lab(L, a_bins, b_bins, factor, n_levels):
    na, nb = cs.dequantize_ab(a_bins, n_levels), cs.dequantize_ab(b_bins, n_levels)
    a, b = cs.denormalize_ab(na, nb)
    return cs.LabImage(L, a, b, factor)


def load_luminance(path):
    """Grayscale PNG -> L plane in [0, 100]. RGB files are converted through Lab."""
    pix = cs.read_png(path)
    if pix.ndim == 2:
        return cs.gray_to_luminance(pix)
    return cs.rgb_to_lab(pix).L


def _check_divisible(L, factor):
    h, w = L.shape
    if h % factor or w % factor:
        ph, pw = (-h) % factor, (-w) % factor
        raise ValueError(
            f"image {h}x{w} is not divisible by the subsample factor {factor}; "
            f"pad by {ph} rows and {pw} columns (to {h + ph}x{w + pw})"
        )


def colorize(model, luminance, n_samples, seed, out_dir=None, variant="polyak", stem="sample"):
    """Draw ``n_samples`` colorizations of one luminance plane (or grayscale PNG path).

    Sample ``k`` uses the stream ``derive_seed(seed, "colorize", k)``. With
    ``out_dir`` the samples are written as PNGs plus a JSON sidecar.
    """
    L = load_luminance(luminance) if isinstance(luminance, (str, Path)) else np.asarray(luminance, np.float64)
    _check_divisible(L, model.factor)
    seeds = [derive_seed(seed, "colorize", k) for k in range(n_samples)]
    lum = np.broadcast_to(cs.normalize_luminance(L), (n_samples, 1) + L.shape)
    p = model.params(variant)
    emb = model.embed(p, lum)
    a_bins, b_bins, logp = sample_sequential(model, emb, seeds, variant)
    samples = [_bins_to_lab(L, a_bins[k], b_bins[k], model.factor, model.n_levels) for k in range(n_samples)]
    result = ColorizationResult(L, samples, [float(-v) for v in logp],
                                [saturation(s) for s in samples], seeds)
    if out_dir is not None:
        write_colorization(result, out_dir, stem)
    return result


def write_colorization(result, out_dir, stem="sample"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, img in enumerate(result.samples):
        path = out / f"{stem}_{k:03d}.png"
        cs.write_png(path, cs.lab_to_rgb(cs.upsample_chroma(img, "bilinear")))
        files.append(path.name)
    dims = 2 * result.samples[0].a.size if result.samples else 0
    sidecar = {
        "samples": [
            {"file": f, "seed": s, "nll_nats": nll, "bpd": bits_per_dim(nll, dims), "saturation_pct": sat}
            for f, s, nll, sat in zip(files, result.seeds, result.nll, result.saturation)
        ]
    }
    (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return files


def map_colorize_embedding_only(model, luminance, variant="polyak"):
    """Per-pixel exact MAP chroma from the embedding-only ablation model."""
    if not isinstance(model, EmbeddingOnlyModel):
        raise TypeError("MAP colorization without the autoregressive part needs the embedding-only model")
    L = load_luminance(luminance) if isinstance(luminance, (str, Path)) else np.asarray(luminance, np.float64)
    _check_divisible(L, model.factor)
    out = model.mixture_field(model.params(variant), cs.normalize_luminance(L)[None, None])
    params = MixtureParams.from_channels(out.data[0], axis=0)
    a_bins, b_bins = map_estimate(params, "exact", model.n_levels, model.floor)
    return _bins_to_lab(L, a_bins, b_bins, model.factor, model.n_levels)


# ----------------------------------------------------------------- evaluation

def per_image_nll(model, batch, variant="polyak"):
    """Teacher-forced NLL (nats) of each image in ``batch``."""
    nll = model.pixel_nll(model.params(variant), batch).data
    return nll.reshape(len(batch), -1).sum(axis=1, dtype=np.float64)


def evaluate_bpd(model, dataset, variant="polyak", split="heldout", batch_size=64, config_hash="",
                 table_path=None):
    """Teacher-forced bits/dim over a split, in manifest order."""
    ids = dataset.manifest.ids(split)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    shapes = {dataset.images[i].shape for i in ids}
    if len(shapes) != 1:
        raise ValueError(f"images in split {split!r} have mixed resolutions: {sorted(shapes)}")
    total, dims, rows = 0.0, 0, []
    for start in range(0, len(ids), batch_size):
        batch = dataset.batch(ids[start:start + batch_size])
        nll = model.pixel_nll(model.params(variant), batch).data
        total += float(np.sum(nll, dtype=np.float64))
        dims += batch.n_dims
        per = nll.reshape(len(batch), -1).sum(axis=1, dtype=np.float64)
        per_dims = batch.n_dims // len(batch)
        for k, eid in enumerate(batch.ids):
            rows.append((eid, float(per[k]), bits_per_dim(per[k], per_dims), None))
    if table_path is not None:
        write_table(rows, table_path)
    return EvalReport(dataset.manifest.root, len(ids), total, dims, bits_per_dim(total, dims),
                      config_hash=config_hash, weights=variant)


def write_table(rows, path):
    """Per-image CSV: filename, nats, bpd, saturation."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "nats", "bpd", "saturation"])
        for name, nats, bpd, sat in rows:
            w.writerow([name, f"{nats:.6f}", f"{bpd:.6f}", "" if sat is None else f"{sat:.4f}"])
    return path


# ------------------------------------------------------------------- montages

def montage(tiles, columns=MONTAGE_COLUMNS, gap=2):
    """Arrange equally sized (H, W, 3) uint8 tiles into a grid, row-major."""
    if not tiles:
        raise ValueError("montage needs at least one tile")
    h, w = tiles[0].shape[:2]
    rows = -(-len(tiles) // columns)
    sheet = np.full((rows * (h + gap) - gap, columns * (w + gap) - gap, 3), 255, dtype=np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, columns)
        sheet[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = t
    return sheet


def gray_tile(L):
    v = np.clip(np.rint(np.asarray(L) * 2.55), 0, 255).astype(np.uint8)
    return np.repeat(v[..., None], 3, axis=2)


def sample_grid(model, dataset, n, seed, out_path, split="heldout", variant="polyak"):
    """One montage row per image: grayscale input, two samples, ground truth."""
    ids = dataset.manifest.ids(split)[:n]
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    tiles = []
    for i, eid in enumerate(ids):
        rgb = dataset.images[eid]
        L = cs.rgb_to_lab(rgb).L
        res = colorize(model, L, 2, derive_seed(seed, "grid", i), variant=variant)
        tiles.append(gray_tile(L))
        tiles.extend(cs.lab_to_rgb(cs.upsample_chroma(s, "bilinear")) for s in res.samples)
        tiles.append(rgb)
    cs.write_png(out_path, montage(tiles))
    return out_path


def sample_saturation(model, dataset, ids, seed, variant="polyak", batch_size=32):
    """Mean saturation of one sample per image (full model) or of the MAP output (ablation)."""
    values = []
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        Ls = [cs.rgb_to_lab(dataset.images[e]).L for e in chunk]
        if isinstance(model, EmbeddingOnlyModel):
            values.extend(saturation(map_colorize_embedding_only(model, L, variant)) for L in Ls)
            continue
        lum = np.stack([cs.normalize_luminance(L)[None] for L in Ls])
        emb = model.embed(model.params(variant), lum)
        seeds = [derive_seed(seed, "saturation", start + k) for k in range(len(chunk))]
        a, b, _ = sample_sequential(model, emb, seeds, variant)
        values.extend(saturation(_bins_to_lab(L, a[k], b[k], model.factor, model.n_levels))
                      for k, L in enumerate(Ls))
    return float(np.mean(values)), values


def as_batch(dataset, lab_images, ids=None):
    """Batch from LabImages with quantized chroma (e.g. sampled outputs)."""
    n_levels = cs.N_LEVELS
    parts = []
    for img in lab_images:
        na, nb = cs.normalize_ab(img)
        ab, bb = cs.quantize_ab(na, n_levels), cs.quantize_ab(nb, n_levels)
        centers = np.stack([cs.dequantize_ab(ab, n_levels), cs.dequantize_ab(bb, n_levels)])
        parts.append((cs.normalize_luminance(img.L)[None], centers, ab, bb))
    ids = ids or [f"image_{k}" for k in range(len(parts))]
    return Batch(ids, np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts]),
                 np.stack([p[2] for p in parts]), np.stack([p[3] for p in parts]))


def ablation_param_audit(gated, ungated):
    """Parameter counts of the gated and ungated models and where they differ."""
    gs, us = gated.store.shapes(), ungated.store.shapes()
    if set(gs) != set(us):
        raise ValueError(f"variants differ in parameter names: {sorted(set(gs) ^ set(us))}")
    diff = {k: int(np.prod(gs[k]) - np.prod(us[k])) for k in gs if gs[k] != us[k]}
    return {
        "gated": gated.store.n_values(),
        "ungated": ungated.store.n_values(),
        "difference": gated.store.n_values() - ungated.store.n_values(),
        "differing_parameters": diff,
    }


def run_order_hash(dataset, seed, epochs):
    from .data import epoch_permutation, epoch_seed

    train_ids = dataset.split_ids("train")
    return permutation_hash(
        sum((epoch_permutation(train_ids, epoch_seed(seed, e)) for e in range(epochs)), [])
    )
