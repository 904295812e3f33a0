# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: patch gather/scatter for convolutions and the fused
discretized-logistic-mixture likelihood with its gradient."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, fmax

cnp.import_array()

NAME = "cython"

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
           Py_ssize_t dilation, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, out_h, out_w, c, kh, kw), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] o = out
    cdef Py_ssize_t b, y, x, ch, i, j, r0, c0
    with nogil:
        for b in range(n):
            for y in range(out_h):
                for x in range(out_w):
                    r0 = y * stride
                    c0 = x * stride
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                o[b, y, x, ch, i, j] = xp[b, ch, r0 + i * dilation, c0 + j * dilation]
    return out


def col2im(real[:, :, :, :, :, ::1] cols, padded_shape, Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t n = cols.shape[0], out_h = cols.shape[1], out_w = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3], kh = cols.shape[4], kw = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros(padded_shape, dtype=dtype)
    cdef real[:, :, :, ::1] d = out
    cdef Py_ssize_t b, y, x, ch, i, j, r0, c0
    # walk cols in memory order; scattered writes stay within one kh x kw window
    with nogil:
        for b in range(n):
            for y in range(out_h):
                for x in range(out_w):
                    r0 = y * stride
                    c0 = x * stride
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                d[b, ch, r0 + i * dilation, c0 + j * dilation] += cols[b, y, x, ch, i, j]
    return out


cdef inline void sigmoid_softplus(double x, double *sig, double *sp) noexcept nogil:
    # sigmoid(x) and softplus(x) from one shared exponential
    # log1p(e) rounds to e below 1e-16, which is common for distant components
    cdef double e
    if x >= 0:
        e = exp(-x)
        sig[0] = 1.0 / (1.0 + e)
        sp[0] = x + (e if e < 1e-16 else log1p(e))
    else:
        e = exp(x)
        sig[0] = e / (1.0 + e)
        sp[0] = e if e < 1e-16 else log1p(e)


cdef inline void disc_logistic(double u, double ls, long bin, long n_levels,
                               double *logp, double *du, double *dls) noexcept nogil:
    cdef double half = 1.0 / (n_levels - 1)
    cdef double inv = exp(-ls)
    cdef double p = inv * (u + half)
    cdef double m = inv * (u - half)
    cdef double r = 2.0 * half * inv
    cdef double sp, sm, spp, spm, t
    if bin == 0:
        sigmoid_softplus(-p, &sp, &spp)
        logp[0] = -spp
        du[0] = inv * sp
        dls[0] = -p * sp
    elif bin == n_levels - 1:
        sigmoid_softplus(m, &sm, &spm)
        logp[0] = -spm
        du[0] = -inv * sm
        dls[0] = m * sm
    else:
        sigmoid_softplus(-p, &sp, &spp)
        sigmoid_softplus(m, &sm, &spm)
        t = expm1(-r)  # r / expm1(r) == r * (1 + t) / -t
        logp[0] = -spp - spm + log(-t)
        du[0] = inv * (sp - sm)
        dls[0] = -p * sp + m * sm - r * (1.0 + t) / -t


def mixture_nll(real[:, :, :, ::1] params, long[:, :, ::1] a_bins, long[:, :, ::1] b_bins,
                long n_levels, double log_scale_floor, bint need_grad=True):
    cdef Py_ssize_t n = params.shape[0], ch = params.shape[1]
    cdef Py_ssize_t h = params.shape[2], w = params.shape[3]
    cdef Py_ssize_t k = ch // 6
    dtype = np.float32 if real is float else np.float64
    nll_arr = np.empty((n, h, w), dtype=dtype)
    cdef real[:, :, ::1] nll = nll_arr
    grad_arr = np.zeros((n, ch, h, w), dtype=dtype) if need_grad else None
    cdef real[:, :, :, ::1] g
    if need_grad:
        g = grad_arr
    cdef double delta = 2.0 / (n_levels - 1)
    cdef double[::1] joint = np.empty(k)
    cdef double[::1] dla_du = np.empty(k)
    cdef double[::1] dla_dls = np.empty(k)
    cdef double[::1] dlb_du = np.empty(k)
    cdef double[::1] dlb_dls = np.empty(k)
    cdef double[::1] logw = np.empty(k)
    cdef double[::1] ew = np.empty(k)
    cdef double[::1] ej = np.empty(k)
    cdef Py_ssize_t b, y, x, q
    cdef long ab, bb
    cdef double xa, xb, lmax, lnorm, jmax, lse, la, lb, ls_a, ls_b, mean_b, resp, s, sj
    with nogil:
        for b in range(n):
            for y in range(h):
                for x in range(w):
                    ab = a_bins[b, y, x]
                    bb = b_bins[b, y, x]
                    xa = -1.0 + delta * ab
                    xb = -1.0 + delta * bb
                    lmax = params[b, 0, y, x]
                    for q in range(1, k):
                        lmax = fmax(lmax, params[b, q, y, x])
                    s = 0.0
                    for q in range(k):
                        ew[q] = exp(params[b, q, y, x] - lmax)
                        s += ew[q]
                    lnorm = lmax + log(s)
                    jmax = -1e308
                    for q in range(k):
                        logw[q] = params[b, q, y, x] - lnorm
                        ls_a = fmax(params[b, 3 * k + q, y, x], log_scale_floor)
                        ls_b = fmax(params[b, 4 * k + q, y, x], log_scale_floor)
                        disc_logistic(xa - params[b, k + q, y, x], ls_a, ab, n_levels,
                                      &la, &dla_du[q], &dla_dls[q])
                        mean_b = params[b, 2 * k + q, y, x] + params[b, 5 * k + q, y, x] * xa
                        disc_logistic(xb - mean_b, ls_b, bb, n_levels,
                                      &lb, &dlb_du[q], &dlb_dls[q])
                        joint[q] = logw[q] + la + lb
                        jmax = fmax(jmax, joint[q])
                    sj = 0.0
                    for q in range(k):
                        ej[q] = exp(joint[q] - jmax)
                        sj += ej[q]
                    lse = jmax + log(sj)
                    nll[b, y, x] = -lse
                    if need_grad:
                        for q in range(k):
                            resp = ej[q] / sj
                            g[b, q, y, x] = ew[q] / s - resp
                            g[b, k + q, y, x] = resp * dla_du[q]
                            g[b, 2 * k + q, y, x] = resp * dlb_du[q]
                            if params[b, 3 * k + q, y, x] >= log_scale_floor:
                                g[b, 3 * k + q, y, x] = -resp * dla_dls[q]
                            if params[b, 4 * k + q, y, x] >= log_scale_floor:
                                g[b, 4 * k + q, y, x] = -resp * dlb_dls[q]
                            g[b, 5 * k + q, y, x] = resp * dlb_du[q] * xa
    return nll_arr, grad_arr
