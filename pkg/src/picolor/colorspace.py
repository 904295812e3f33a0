"""sRGB <-> CIELAB conversion, chroma normalization/quantization and resampling.

Conventions: L in [0, 100], a in [-127, 128], b in [-128, 127]; both chroma
ranges map affinely onto [-1, 1], where 256 uniform bins of width 2/255 have
their centers exactly on the integer chroma values.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

L_RANGE = (0.0, 100.0)
A_RANGE = (-127.0, 128.0)
B_RANGE = (-128.0, 127.0)
N_LEVELS = 256

# sRGB primaries, D65 white
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_EPS = (6.0 / 29.0) ** 3
_KAPPA = 3.0 * (6.0 / 29.0) ** 2


@dataclass
class LabImage:
    """Full-resolution luminance with chroma planes at ``1/factor`` resolution."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray
    factor: int = 1

    def __post_init__(self):
        h, w = self.L.shape
        f = self.factor
        if h % f or w % f:
            raise ValueError(f"luminance {h}x{w} is not divisible by subsample factor {f}")
        if self.a.shape != (h // f, w // f) or self.b.shape != (h // f, w // f):
            raise ValueError(
                f"chroma planes {self.a.shape}/{self.b.shape} do not match {h}x{w} at factor {f}"
            )

    @property
    def shape(self):
        return self.L.shape


def srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(np.maximum(c, 0.0031308), 1 / 2.4) - 0.055)


def rgb_array_to_lab(rgb):
    """(..., 3) uint8 sRGB -> (..., 3) float Lab with chroma clamped to the ranges."""
    lin = srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), xyz / _KAPPA + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([np.clip(L, *L_RANGE), np.clip(a, *A_RANGE), np.clip(b, *B_RANGE)], axis=-1)


def lab_array_to_rgb(lab):
    """(..., 3) float Lab -> (..., 3) uint8 sRGB, clipping out-of-gamut colors."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > 6.0 / 29.0, f ** 3, _KAPPA * (f - 4.0 / 29.0)) * _WHITE
    lin = np.clip(xyz @ _XYZ_TO_RGB.T, 0.0, 1.0)
    return np.round(linear_to_srgb(lin) * 255.0).astype(np.uint8)


def rgb_to_lab(pixels):
    lab = rgb_array_to_lab(pixels)
    return LabImage(lab[..., 0], lab[..., 1], lab[..., 2], 1)


def lab_to_rgb(img):
    if img.factor != 1:
        raise ValueError("lab_to_rgb needs full-resolution chroma; call upsample_chroma first")
    return lab_array_to_rgb(np.stack([img.L, img.a, img.b], axis=-1))


def block_mean(plane, factor):
    h, w = plane.shape
    if h % factor or w % factor:
        raise ValueError(f"plane {h}x{w} is not divisible by factor {factor}")
    return plane.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def subsample_chroma(img, factor):
    """Replace chroma with ``factor x factor`` block means."""
    if img.factor != 1:
        raise ValueError("subsample_chroma expects a full-resolution image")
    if factor not in (1, 2, 4):
        raise ValueError(f"subsample factor must be 1, 2 or 4, got {factor}")
    if factor == 1:
        return LabImage(img.L, img.a.copy(), img.b.copy(), 1)
    return LabImage(img.L, block_mean(img.a, factor), block_mean(img.b, factor), factor)


def _bilinear_axis(n_in, factor):
    pos = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_plane(plane, factor, mode="bilinear"):
    """Upsample a 2-D plane by an integer factor (half-pixel-centered bilinear)."""
    if factor == 1:
        return plane.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(plane, factor, axis=0), factor, axis=1)
    if mode != "bilinear":
        raise ValueError(f"mode must be 'nearest' or 'bilinear', got {mode!r}")
    h, w = plane.shape
    r0, r1, ry = _bilinear_axis(h, factor)
    c0, c1, cx = _bilinear_axis(w, factor)
    rows = plane[r0] * (1.0 - ry)[:, None] + plane[r1] * ry[:, None]
    return rows[:, c0] * (1.0 - cx) + rows[:, c1] * cx


def upsample_chroma(img, mode="bilinear"):
    f = img.factor
    return LabImage(img.L, resize_plane(img.a, f, mode), resize_plane(img.b, f, mode), 1)


# ---------------------------------------------------------- normalization

def _check_range(v, lo, hi, what):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < lo - 1e-9) or np.any(v > hi + 1e-9):
        raise ValueError(f"{what} outside [{lo}, {hi}]: min {v.min()}, max {v.max()}")
    return v


def normalize_a(a):
    a = _check_range(a, *A_RANGE, "a")
    return (a - A_RANGE[0]) * (2.0 / 255.0) - 1.0


def normalize_b(b):
    b = _check_range(b, *B_RANGE, "b")
    return (b - B_RANGE[0]) * (2.0 / 255.0) - 1.0


def denormalize_a(na):
    return (np.asarray(na) + 1.0) * 127.5 + A_RANGE[0]


def denormalize_b(nb):
    return (np.asarray(nb) + 1.0) * 127.5 + B_RANGE[0]


def normalize_ab(img):
    return normalize_a(img.a), normalize_b(img.b)


def denormalize_ab(na, nb):
    return denormalize_a(na), denormalize_b(nb)


def bin_width(n_levels=N_LEVELS):
    return 2.0 / (n_levels - 1)


def quantize_ab(v, n_levels=N_LEVELS):
    """Normalized value(s) in [-1, 1] -> nearest bin index."""
    v = _check_range(v, -1.0, 1.0, "normalized chroma")
    idx = np.rint((v + 1.0) / bin_width(n_levels)).astype(np.int64)
    return np.clip(idx, 0, n_levels - 1)


def dequantize_ab(bins, n_levels=N_LEVELS):
    """Bin index -> bin center in normalized units."""
    bins = np.asarray(bins)
    if np.any(bins < 0) or np.any(bins >= n_levels):
        raise ValueError(f"bin index outside [0, {n_levels - 1}]")
    return -1.0 + bin_width(n_levels) * bins


def normalize_luminance(L):
    return np.asarray(L, dtype=np.float64) / 50.0 - 1.0


# ---------------------------------------------------------------- PNG I/O

def read_png(path):
    """Read a PNG as uint8; returns (H, W) for grayscale files, (H, W, 3) otherwise."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_rgb_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path, pixels):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG")
    return path


def gray_to_luminance(gray):
    """8-bit single-channel values -> L = 100 * v / 255."""
    return 100.0 * np.asarray(gray, dtype=np.float64) / 255.0
