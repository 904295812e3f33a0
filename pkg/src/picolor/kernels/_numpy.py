"""Pure-numpy reference kernels.

These are always importable and serve as the fallback when the compiled
extension is missing. Each function has an identical signature in
``_ckernels.pyx``.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

NAME = "numpy"


def im2col(xp, kh, kw, stride, dilation, out_h, out_w):
    """Gather patches of a padded NCHW array into an (N, Ho, Wo, C, kh, kw) array."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, out_h, out_w, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh * dilation, sw * dilation),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def col2im(cols, padded_shape, stride, dilation):
    """Scatter-add patch gradients back onto a padded NCHW array (adjoint of im2col)."""
    n, out_h, out_w, c, kh, kw = cols.shape
    dxp = np.zeros(padded_shape, dtype=cols.dtype)
    # (N, C, kh, kw, Ho, Wo) so each kernel tap is a contiguous-ish slab
    g = cols.transpose(0, 3, 4, 5, 1, 2)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            dxp[:, :, r0:r0 + h_span:stride, c0:c0 + w_span:stride] += g[:, :, i, j]
    return dxp


def _softplus(x):
    return np.logaddexp(0.0, x)


def discretized_logistic(u, log_scale, bins, n_levels, need_grad=True):
    """Log-mass of a discretized logistic plus its partials.

    ``u`` is the target bin center minus the mean, in normalized units.
    Returns ``(logp, dlogp_du, dlogp_dlogscale)``; the partials are None
    when ``need_grad`` is false.
    """
    half = 1.0 / (n_levels - 1)
    inv = np.exp(-log_scale)
    p = inv * (u + half)
    m = inv * (u - half)
    r = (2.0 * half) * inv
    lo = bins == 0
    hi = bins == n_levels - 1
    mid = ~(lo | hi)

    sp_negp = _softplus(-p)
    sp_m = _softplus(m)
    with np.errstate(divide="ignore"):
        gap = np.log(-np.expm1(-r))
    logp = np.where(lo, -sp_negp, np.where(hi, -sp_m, -sp_negp - sp_m + gap))
    if not need_grad:
        return logp, None, None

    sig_negp = expit(-p)
    sig_m = expit(m)
    use_p = ~hi
    use_m = ~lo
    du = inv * (use_p * sig_negp - use_m * sig_m)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gap_grad = np.where(mid, r / np.expm1(r), 0.0)
    dls = use_m * m * sig_m - use_p * p * sig_negp - gap_grad
    return logp, du, dls


def mixture_nll(params, a_bins, b_bins, n_levels, log_scale_floor, need_grad=True):
    """Per-pixel negative log-likelihood of the chroma mixture.

    ``params`` is (N, 6K, H, W) laid out as [logits, mu_a, mu_b, log_s_a,
    log_s_b, coeff_ba]; bins are (N, H, W) integer arrays. Returns the
    (N, H, W) NLL in nats and, when requested, d(nll)/d(params) per pixel.
    """
    n, ch, h, w = params.shape
    k = ch // 6
    logits = params[:, 0 * k:1 * k]
    mu_a = params[:, 1 * k:2 * k]
    mu_b = params[:, 2 * k:3 * k]
    raw_ls_a = params[:, 3 * k:4 * k]
    raw_ls_b = params[:, 4 * k:5 * k]
    coeff = params[:, 5 * k:6 * k]

    delta = 2.0 / (n_levels - 1)
    a_b = a_bins[:, None]
    b_b = b_bins[:, None]
    x_a = (-1.0 + delta * a_b).astype(params.dtype)
    x_b = (-1.0 + delta * b_b).astype(params.dtype)

    ls_a = np.maximum(raw_ls_a, log_scale_floor)
    ls_b = np.maximum(raw_ls_b, log_scale_floor)
    la, dla_du, dla_dls = discretized_logistic(x_a - mu_a, ls_a, a_b, n_levels)
    lb, dlb_du, dlb_dls = discretized_logistic(x_b - (mu_b + coeff * x_a), ls_b, b_b, n_levels)

    lmax = logits.max(axis=1, keepdims=True)
    log_norm = lmax + np.log(np.exp(logits - lmax).sum(axis=1, keepdims=True))
    joint = logits - log_norm + la + lb
    jmax = joint.max(axis=1, keepdims=True)
    lse = jmax + np.log(np.exp(joint - jmax).sum(axis=1, keepdims=True))
    nll = -lse[:, 0]
    if not need_grad:
        return nll.astype(params.dtype, copy=False), None

    resp = np.exp(joint - lse)
    weights = np.exp(logits - log_norm)
    grad = np.empty_like(params)
    grad[:, 0 * k:1 * k] = weights - resp
    grad[:, 1 * k:2 * k] = resp * dla_du
    gb = resp * dlb_du
    grad[:, 2 * k:3 * k] = gb
    grad[:, 3 * k:4 * k] = -resp * dla_dls * (raw_ls_a >= log_scale_floor)
    grad[:, 4 * k:5 * k] = -resp * dlb_dls * (raw_ls_b >= log_scale_floor)
    grad[:, 5 * k:6 * k] = gb * x_a
    return nll.astype(params.dtype, copy=False), grad
