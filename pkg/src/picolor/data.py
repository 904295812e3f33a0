"""Dataset ingestion: PNG folders and CIFAR-10 binary batches.

Images are held as 8-bit RGB; training pairs are made on demand by converting
to Lab, normalizing luminance to [-1, 1] and quantizing block-mean chroma.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import colorspace as cs
from .seeding import derive_seed

log = logging.getLogger(__name__)

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
HELDOUT_FRACTION = 0.1


@dataclass
class ManifestEntry:
    id: str
    source: str
    split: str = "train"
    resized: bool = False
    label: int = -1


@dataclass
class DatasetManifest:
    root: str
    resolution: int
    factor: int
    heldout_fraction: float = HELDOUT_FRACTION
    entries: list = field(default_factory=list)
    warnings: int = 0

    def ids(self, split=None):
        return [e.id for e in self.entries if split is None or e.split == split]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["entries"] = [ManifestEntry(**e) for e in d["entries"]]
        return cls(**d)


@dataclass
class Batch:
    ids: list
    luminance: np.ndarray  # (N, 1, H, W) in [-1, 1]
    chroma: np.ndarray  # (N, 2, h, w) bin centers in [-1, 1]
    a_bins: np.ndarray  # (N, h, w)
    b_bins: np.ndarray
    chroma_exact: np.ndarray = None  # (N, 2, h, w) before quantization

    def __len__(self):
        return len(self.ids)

    @property
    def n_dims(self):
        return int(self.a_bins.size * 2)

    def take(self, index):
        sel = np.atleast_1d(np.arange(len(self.ids))[index])
        return Batch(
            [self.ids[i] for i in sel], self.luminance[sel], self.chroma[sel],
            self.a_bins[sel], self.b_bins[sel],
            None if self.chroma_exact is None else self.chroma_exact[sel],
        )

    @classmethod
    def concat(cls, batches):
        return cls(
            sum((b.ids for b in batches), []),
            np.concatenate([b.luminance for b in batches]),
            np.concatenate([b.chroma for b in batches]),
            np.concatenate([b.a_bins for b in batches]),
            np.concatenate([b.b_bins for b in batches]),
            None if any(b.chroma_exact is None for b in batches)
            else np.concatenate([b.chroma_exact for b in batches]),
        )


def _split_key(entry_id):
    return hashlib.sha256(entry_id.encode("utf-8")).hexdigest()


def assign_splits(entries, heldout_fraction=HELDOUT_FRACTION):
    """Mark ``round(n * fraction)`` entries as heldout: those with the smallest id hash."""
    n_held = int(round(len(entries) * heldout_fraction))
    ranked = sorted(entries, key=lambda e: (_split_key(e.id), e.id))
    held = {e.id for e in ranked[:n_held]}
    for e in entries:
        e.split = "heldout" if e.id in held else "train"
    return entries


def fit_resolution(rgb, resolution):
    """Center-crop to square, then bilinear-resize to ``resolution``."""
    h, w = rgb.shape[:2]
    if (h, w) == (resolution, resolution):
        return rgb, False
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = rgb[top:top + side, left:left + side]
    im = Image.fromarray(crop).resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8), True


class Dataset:
    """A manifest plus the decoded 8-bit RGB images it refers to."""

    def __init__(self, manifest, images):
        self.manifest = manifest
        self.images = images
        self._cache = {}

    def __len__(self):
        return len(self.manifest.entries)

    @property
    def factor(self):
        return self.manifest.factor

    def split_ids(self, split):
        ids = self.manifest.ids(split)
        if not ids:
            raise ValueError(f"split {split!r} is empty")
        return ids

    def example(self, entry_id):
        """(luminance (1,H,W), chroma centers (2,h,w), a_bins, b_bins, exact chroma) for one image."""
        hit = self._cache.get(entry_id)
        if hit is None:
            hit = image_to_example(self.images[entry_id], self.factor)
            self._cache[entry_id] = hit
        return hit

    def batch(self, ids):
        if len(ids) == 0:
            raise ValueError("empty batch: no image ids given")
        parts = [self.example(i) for i in ids]
        return Batch(
            list(ids),
            np.stack([p[0] for p in parts]),
            np.stack([p[1] for p in parts]),
            np.stack([p[2] for p in parts]),
            np.stack([p[3] for p in parts]),
            np.stack([p[4] for p in parts]),
        )

    def subset(self, n, split=None):
        """First ``n`` entries (manifest order), keeping their split labels."""
        entries = [e for e in self.manifest.entries if split is None or e.split == split][:n]
        m = DatasetManifest(self.manifest.root, self.manifest.resolution, self.manifest.factor,
                            self.manifest.heldout_fraction, entries, self.manifest.warnings)
        return Dataset(m, {e.id: self.images[e.id] for e in entries})


def image_to_example(rgb, factor, n_levels=cs.N_LEVELS):
    lab = cs.subsample_chroma(cs.rgb_to_lab(rgb), factor)
    lum = cs.normalize_luminance(lab.L)[None]
    na, nb = cs.normalize_ab(lab)
    a_bins = cs.quantize_ab(na, n_levels)
    b_bins = cs.quantize_ab(nb, n_levels)
    centers = np.stack([cs.dequantize_ab(a_bins, n_levels), cs.dequantize_ab(b_bins, n_levels)])
    return lum, centers, a_bins, b_bins, np.stack([na, nb])


def scan_folder(path, resolution, factor, heldout_fraction=HELDOUT_FRACTION):
    """Recursively load every PNG under ``path``; returns a :class:`Dataset`."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset folder {path!r} does not exist")
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() == ".png" and p.is_file())
    entries, images, warnings = [], {}, 0
    for f in files:
        rel = f.relative_to(root).as_posix()
        try:
            rgb = cs.read_rgb_png(f)
        except Exception as exc:  # PIL raises several unrelated types for bad files
            log.warning("skipping unreadable image %s: %s", rel, exc)
            warnings += 1
            continue
        rgb, resized = fit_resolution(rgb, resolution)
        entries.append(ManifestEntry(rel, rel, resized=resized))
        images[rel] = rgb
    if not entries:
        raise ValueError(f"no readable PNG files under {path!r}")
    assign_splits(entries, heldout_fraction)
    manifest = DatasetManifest(str(root), resolution, factor, heldout_fraction, entries, warnings)
    return Dataset(manifest, images)


def decode_cifar10(blob, name="batch"):
    """Decode CIFAR-10 binary records -> (labels, images (N, 32, 32, 3) uint8)."""
    if len(blob) % CIFAR_RECORD:
        raise ValueError(
            f"{name}: length {len(blob)} is not a multiple of {CIFAR_RECORD} "
            f"(residue {len(blob) % CIFAR_RECORD} bytes at offset {len(blob) - len(blob) % CIFAR_RECORD})"
        )
    rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(int)
    pix = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return labels, np.ascontiguousarray(pix)


def read_cifar10_binary(files, factor=2, heldout_fraction=HELDOUT_FRACTION, limit=None):
    """Load CIFAR-10 ``data_batch_*.bin`` files into a :class:`Dataset`."""
    entries, images = [], {}
    for f in files:
        f = Path(f)
        labels, pix = decode_cifar10(f.read_bytes(), f.name)
        for i, (lab, img) in enumerate(zip(labels, pix)):
            eid = f"{f.name}:{i:05d}"
            entries.append(ManifestEntry(eid, f"{f.name}@{i * CIFAR_RECORD}", label=int(lab)))
            images[eid] = img
            if limit is not None and len(entries) >= limit:
                break
        if limit is not None and len(entries) >= limit:
            break
    if not entries:
        raise ValueError("no CIFAR-10 records found")
    assign_splits(entries, heldout_fraction)
    root = str(Path(files[0]).parent) if files else ""
    return Dataset(DatasetManifest(root, CIFAR_SIDE, factor, heldout_fraction, entries), images)


def load_dataset(path, resolution=32, factor=2, heldout_fraction=HELDOUT_FRACTION, limit=None):
    """Folder of PNGs, a folder of CIFAR-10 ``*.bin`` batches, or a single ``.bin`` file."""
    p = Path(path)
    if p.is_file() and p.suffix == ".bin":
        return read_cifar10_binary([p], factor, heldout_fraction, limit)
    if p.is_dir():
        bins = sorted(q for q in p.iterdir() if q.suffix == ".bin" and q.stat().st_size % CIFAR_RECORD == 0)
        if bins:
            return read_cifar10_binary(bins, factor, heldout_fraction, limit)
        ds = scan_folder(p, resolution, factor, heldout_fraction)
        return ds if limit is None else ds.subset(limit)
    raise FileNotFoundError(f"dataset path {path!r} does not exist")


def epoch_permutation(ids, epoch_seed):
    rng = np.random.default_rng(epoch_seed)
    return [ids[i] for i in rng.permutation(len(ids))]


def make_batches(dataset, split, batch_size, epoch_seed):
    """Yield batches of one epoch in a seed-derived order; the last may be partial."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_permutation(dataset.split_ids(split), epoch_seed)
    for start in range(0, len(order), batch_size):
        yield dataset.batch(order[start:start + batch_size])


def epoch_seed(root_seed, epoch):
    return derive_seed(root_seed, "epoch", epoch)


def permutation_hash(ids):
    return hashlib.sha256("\n".join(ids).encode()).hexdigest()[:16]


def write_manifest(dataset, path):
    Path(path).write_text(dataset.manifest.to_json())
    return path
