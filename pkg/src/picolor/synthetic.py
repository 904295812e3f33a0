"""Procedural scenes with luminance-correlated color, for desk-scale runs.

Each image has a sky band, a ground band of one of three materials and a few
colored objects. Every color class has a typical lightness, so luminance (and
texture) partly determines chroma; two classes share a lightness, which leaves
genuine ambiguity for the model to represent.
"""

from pathlib import Path

import numpy as np

from . import colorspace as cs
from .seeding import rng_for

# (L, a, b) centers of object color classes
OBJECT_CLASSES = {
    "red": (45.0, 62.0, 42.0),
    "green": (45.0, -42.0, 38.0),
    "yellow": (85.0, 0.0, 72.0),
    "purple": (33.0, 42.0, -38.0),
    "orange": (66.0, 38.0, 62.0),
    "teal": (57.0, -30.0, -6.0),
}
GROUNDS = {
    "grass": ((35.0, 55.0), (-40.0, -25.0), (25.0, 45.0), 7.0),
    "sand": ((65.0, 80.0), (0.0, 10.0), (18.0, 32.0), 1.5),
    "water": ((40.0, 55.0), (-12.0, 0.0), (-32.0, -16.0), 3.0),
}


def scene_lab(rng, size=32, noise=1.0):
    """One procedural scene as an (H, W, 3) Lab array."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lab = np.zeros((size, size, 3))
    horizon = int(rng.integers(size // 4, size // 2 + size // 8 + 1))

    sky = yy < horizon
    top_l, low_l = rng.uniform(55, 68), rng.uniform(75, 88)
    t = yy / max(horizon, 1)
    lab[..., 0] = np.where(sky, top_l + (low_l - top_l) * t, 0.0)
    lab[..., 1] = np.where(sky, rng.uniform(-8, 4), 0.0)
    lab[..., 2] = np.where(sky, rng.uniform(-45, -25) * (1.0 - 0.4 * t), 0.0)

    name = list(GROUNDS)[int(rng.integers(len(GROUNDS)))]
    (l_lo, l_hi), a_rng, b_rng, texture = GROUNDS[name]
    gl = rng.uniform(l_lo, l_hi)
    ga, gb = rng.uniform(*a_rng), rng.uniform(*b_rng)
    if name == "water":
        tex = texture * np.sin(yy * rng.uniform(1.2, 2.0) + rng.uniform(0, 6.28))
    else:
        tex = texture * rng.standard_normal((size, size))
    ground = ~sky
    lab[..., 0] = np.where(ground, gl + tex, lab[..., 0])
    lab[..., 1] = np.where(ground, ga + 0.3 * tex, lab[..., 1])
    lab[..., 2] = np.where(ground, gb + 0.3 * tex, lab[..., 2])

    classes = list(OBJECT_CLASSES)
    for _ in range(int(rng.integers(1, 4))):
        L0, a0, b0 = OBJECT_CLASSES[classes[int(rng.integers(len(classes)))]]
        L0 += rng.uniform(-4, 4)
        a0 += rng.uniform(-6, 6)
        b0 += rng.uniform(-6, 6)
        cy, cx = rng.uniform(0.2, 0.9) * size, rng.uniform(0.1, 0.9) * size
        r = rng.uniform(0.08, 0.22) * size
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * rng.uniform(0.5, 1.5))
        shade = 6.0 * (yy - cy) / max(r, 1.0)
        lab[..., 0] = np.where(mask, L0 - shade, lab[..., 0])
        lab[..., 1] = np.where(mask, a0, lab[..., 1])
        lab[..., 2] = np.where(mask, b0, lab[..., 2])

    if noise > 0:
        lab[..., 0] += noise * rng.standard_normal((size, size))
        lab[..., 1:] += 1.5 * noise * rng.standard_normal((size, size, 2))
    lab[..., 0] = np.clip(lab[..., 0], 0, 100)
    return lab


def scene_rgb(seed, index, size=32, noise=1.0):
    return cs.lab_array_to_rgb(scene_lab(rng_for(seed, "synthetic", index), size, noise))


def write_folder(out, n, size=32, seed=0, noise=1.0):
    """Write ``n`` scenes as ``scene_00000.png`` ... into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        p = out / f"scene_{i:05d}.png"
        cs.write_png(p, scene_rgb(seed, i, size, noise))
        paths.append(p)
    return paths


def make_dataset(n, size=32, factor=2, seed=0, noise=1.0, heldout_fraction=0.1):
    """In-memory :class:`~picolor.data.Dataset` of ``n`` scenes (ids as written by :func:`write_folder`)."""
    from .data import Dataset, DatasetManifest, ManifestEntry, assign_splits

    images = {f"scene_{i:05d}.png": scene_rgb(seed, i, size, noise) for i in range(n)}
    entries = assign_splits([ManifestEntry(k, k) for k in images], heldout_fraction)
    return Dataset(DatasetManifest("synthetic", size, factor, heldout_fraction, entries), images)
