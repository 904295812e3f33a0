"""Discretized logistic mixture over the quantized (a, b) chroma alphabet.

Per pixel the model emits ``6K`` numbers laid out channel-wise as
``[weight_logits, mu_a, mu_b, log_scale_a, log_scale_b, coeff_ba]``. The
pixel distribution is ``sum_k w_k P_k(a) P_k(b | a)`` where ``P_k(b | a)`` is
centered at ``mu_b + coeff_ba * x_a`` with ``x_a`` the center of the realized
a-bin. Values live in normalized units [-1, 1]; the two edge bins absorb the
logistic tails.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from . import autograd as ag
from . import kernels
from .colorspace import N_LEVELS

N_MIXTURES = 10
LOG_SCALE_FLOOR = -7.0
FIELDS = ("logits", "mu_a", "mu_b", "log_scale_a", "log_scale_b", "coeff_ba")


def n_outputs(k=N_MIXTURES):
    return 6 * k


@dataclass
class MixtureParams:
    """Mixture parameters; every field has shape ``(..., K)``."""

    logits: np.ndarray
    mu_a: np.ndarray
    mu_b: np.ndarray
    log_scale_a: np.ndarray
    log_scale_b: np.ndarray
    coeff_ba: np.ndarray

    @property
    def k(self):
        return self.logits.shape[-1]

    @property
    def batch_shape(self):
        return self.logits.shape[:-1]

    @classmethod
    def from_channels(cls, arr, axis=1):
        """Split a ``6K``-channel array (channel axis ``axis``) into fields of shape (..., K)."""
        arr = np.moveaxis(np.asarray(arr, dtype=np.float64), axis, -1)
        k = arr.shape[-1] // 6
        if arr.shape[-1] != 6 * k:
            raise ValueError(f"mixture head needs a multiple of 6 channels, got {arr.shape[-1]}")
        return cls(*(arr[..., i * k:(i + 1) * k] for i in range(6)))

    def to_channels(self, axis=1):
        arr = np.concatenate([getattr(self, f) for f in FIELDS], axis=-1)
        return np.moveaxis(arr, -1, axis)

    def pixel(self, index):
        return MixtureParams(*(getattr(self, f)[index] for f in FIELDS))

    def clamped(self, floor=LOG_SCALE_FLOOR):
        return MixtureParams(
            self.logits, self.mu_a, self.mu_b,
            np.maximum(self.log_scale_a, floor), np.maximum(self.log_scale_b, floor), self.coeff_ba,
        )


def bin_centers(n_levels=N_LEVELS):
    return np.linspace(-1.0, 1.0, n_levels)


def _bin_center(bins, n_levels):
    return -1.0 + (2.0 / (n_levels - 1)) * np.asarray(bins)


def discretized_logistic_logpmf(mu, log_scale, bins, n_levels=N_LEVELS):
    """Log-probability of bin(s) under a discretized logistic (no scale clamping)."""
    bins = np.asarray(bins)
    if np.any(bins < 0) or np.any(bins >= n_levels):
        raise ValueError(f"bin index outside [0, {n_levels - 1}]")
    u = _bin_center(bins, n_levels) - np.asarray(mu, dtype=np.float64)
    logp, _, _ = kernels._numpy.discretized_logistic(
        u, np.asarray(log_scale, dtype=np.float64), bins, n_levels, need_grad=False)
    return logp


def _component_logpmf_grid(params, n_levels):
    """Per-component log P(a) (K, n) and log P(b | a) (K, n, n) for one pixel."""
    x = bin_centers(n_levels)
    idx = np.arange(n_levels)
    la = discretized_logistic_logpmf(params.mu_a[:, None], params.log_scale_a[:, None], idx[None, :], n_levels)
    mean_b = params.mu_b[:, None] + params.coeff_ba[:, None] * x[None, :]
    lb = discretized_logistic_logpmf(mean_b[:, :, None], params.log_scale_b[:, None, None],
                                     idx[None, None, :], n_levels)
    return la, lb


def log_pmf_grid(params, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Log of the full ``n_levels x n_levels`` PMF for one pixel, indexed [a, b]."""
    p = params.clamped(floor)
    la, lb = _component_logpmf_grid(p, n_levels)
    logw = log_softmax(p.logits)
    return logsumexp(logw[:, None, None] + la[:, :, None] + lb, axis=0)


def pmf_enumerate(params, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Exact PMF over the alphabet for one pixel (grid[a, b])."""
    return np.exp(log_pmf_grid(params, n_levels, floor))


def mixture_nll(params, a_bins, b_bins, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Negative log-likelihood (nats) of target bins; params fields are (..., K)."""
    a_bins = np.asarray(a_bins)
    b_bins = np.asarray(b_bins)
    p = params.clamped(floor)
    x_a = _bin_center(a_bins, n_levels)
    la = discretized_logistic_logpmf(p.mu_a, p.log_scale_a, a_bins[..., None], n_levels)
    mean_b = p.mu_b + p.coeff_ba * x_a[..., None]
    lb = discretized_logistic_logpmf(mean_b, p.log_scale_b, b_bins[..., None], n_levels)
    return -logsumexp(log_softmax(p.logits, axis=-1) + la + lb, axis=-1)


def mixture_nll_field(params, a_bins, b_bins, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Differentiable per-pixel NLL of an (N, 6K, H, W) tensor against (N, H, W) bins.

    Uses the fused kernel (compiled when available) for value and gradient.
    """
    pd = params.data
    need = ag._tracking(params) is not None
    nll, grad = kernels.mixture_nll(pd, a_bins, b_bins, n_levels, floor, need_grad=need)
    return ag._make(nll, (params,), lambda g: (g[:, None] * grad,))


def _logistic_quantile(mu, log_scale, u):
    with np.errstate(divide="ignore"):
        return mu + np.exp(log_scale) * (np.log(u) - np.log1p(-u))


def _quantize_clamped(x, n_levels):
    x = np.clip(x, -1.0, 1.0)
    return np.clip(np.rint((x + 1.0) / (2.0 / (n_levels - 1))), 0, n_levels - 1).astype(np.int64)


def sample_from_uniforms(params, u, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Draw (a_bin, b_bin) from three uniforms per pixel, ``u`` of shape (..., 3).

    The component is chosen by inverse CDF over the softmax weights; a and b
    are drawn by the logistic quantile function, clamped to [-1, 1] and
    quantized. b's mean uses the center of the drawn a-bin.
    """
    p = params.clamped(floor)
    w = softmax(p.logits, axis=-1)
    cdf = np.cumsum(w, axis=-1)
    comp = (u[..., 0:1] >= cdf[..., :-1]).sum(axis=-1)
    comp = comp[..., None]

    def pick(field):
        return np.take_along_axis(field, comp, axis=-1)[..., 0]

    a_bin = _quantize_clamped(_logistic_quantile(pick(p.mu_a), pick(p.log_scale_a), u[..., 1]), n_levels)
    x_a = _bin_center(a_bin, n_levels)
    mean_b = pick(p.mu_b) + pick(p.coeff_ba) * x_a
    b_bin = _quantize_clamped(_logistic_quantile(mean_b, pick(p.log_scale_b), u[..., 2]), n_levels)
    return a_bin, b_bin


def sample(params, rng, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Draw one (a_bin, b_bin) per pixel of ``params`` using ``rng``."""
    u = rng.random(params.batch_shape + (3,))
    return sample_from_uniforms(params, u, n_levels, floor)


def map_estimate(params, mode="exact", n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR, chunk=8):
    """Most probable (a_bin, b_bin) per pixel.

    ``exact`` searches the enumerated grid (ties go to the smallest (a, b));
    ``fast`` quantizes the mean of the heaviest component.
    """
    if mode == "fast":
        p = params.clamped(floor)
        k = np.argmax(p.logits, axis=-1)[..., None]
        mu_a = np.take_along_axis(p.mu_a, k, -1)[..., 0]
        mu_b = np.take_along_axis(p.mu_b, k, -1)[..., 0] + np.take_along_axis(p.coeff_ba, k, -1)[..., 0] * mu_a
        return _quantize_clamped(mu_a, n_levels), _quantize_clamped(mu_b, n_levels)
    if mode != "exact":
        raise ValueError(f"mode must be 'exact' or 'fast', got {mode!r}")
    shape = params.batch_shape
    flat = MixtureParams(*(getattr(params, f).reshape(-1, params.k) for f in FIELDS))
    n = flat.logits.shape[0]
    a_out = np.empty(n, dtype=np.int64)
    b_out = np.empty(n, dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        grids = batched_log_pmf_grid(flat.pixel(slice(start, stop)), n_levels, floor)
        best = grids.reshape(stop - start, -1).argmax(axis=1)
        a_out[start:stop], b_out[start:stop] = np.divmod(best, n_levels)
    return a_out.reshape(shape), b_out.reshape(shape)


def batched_log_pmf_grid(params, n_levels=N_LEVELS, floor=LOG_SCALE_FLOOR):
    """Log-PMF grids for a flat batch of pixels: returns (P, n, n)."""
    p = params.clamped(floor)
    idx = np.arange(n_levels)
    x = bin_centers(n_levels)
    la = discretized_logistic_logpmf(p.mu_a[..., None], p.log_scale_a[..., None], idx, n_levels)
    mean_b = p.mu_b[..., None] + p.coeff_ba[..., None] * x
    lb = discretized_logistic_logpmf(mean_b[..., None], p.log_scale_b[..., None, None], idx, n_levels)
    logw = log_softmax(p.logits, axis=-1)
    return logsumexp(logw[..., None, None] + la[..., None] + lb, axis=1)


def bits_per_dim(total_nll_nats, n_chroma_dims):
    """Convert a total NLL in nats to bits per predicted chroma dimension."""
    if n_chroma_dims <= 0:
        raise ValueError("bits_per_dim needs a positive number of dimensions")
    return float(total_nll_nats) / (np.log(2.0) * n_chroma_dims)
