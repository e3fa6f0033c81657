# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mixture-of-logistics kernels; same contracts as _mixlogistic_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, fmax, isfinite

cnp.import_array()

cdef double LO = 0.05
cdef double HI = 0.95
cdef double SPAN = 0.9
cdef double LOG_SPAN = log(0.9)


cdef inline double _sigmoid(double u) nogil:
    cdef double e
    if u >= 0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef inline double _prep(const double[:] logits, const double[:] log_scales,
                         double[:] logpi, double[:] pi, double[:] inv) nogil:
    """Fill log-weights, weights and inverse scales for one row; returns log Z."""
    cdef Py_ssize_t k, K = logits.shape[0]
    cdef double m = logits[0], s = 0.0, lz
    for k in range(1, K):
        if logits[k] > m:
            m = logits[k]
    for k in range(K):
        s += exp(logits[k] - m)
    lz = m + log(s)
    for k in range(K):
        logpi[k] = logits[k] - lz
        pi[k] = exp(logpi[k])
        inv[k] = exp(-log_scales[k])
    return lz


cdef inline void _sig_pair(double xi, double* e, double* s, double* s_bar) nogil:
    # sigma(xi), sigma(-xi) and exp(-|xi|) from a single exponential
    e[0] = exp(-fabs(xi))
    if xi >= 0:
        s[0] = 1.0 / (1.0 + e[0])
        s_bar[0] = e[0] / (1.0 + e[0])
    else:
        s[0] = e[0] / (1.0 + e[0])
        s_bar[0] = 1.0 / (1.0 + e[0])


cdef inline double _w_at(double x, const double[:] means, double[:] pi, double[:] inv,
                         Py_ssize_t K) nogil:
    cdef Py_ssize_t k
    cdef double c = 0.0, c_bar = 0.0, e, s, sb
    for k in range(K):
        _sig_pair((x - means[k]) * inv[k], &e, &s, &sb)
        c += pi[k] * s
        c_bar += pi[k] * sb
    return log(LO + SPAN * c) - log(LO + SPAN * c_bar)


def mix_cdf(double[:] x, double[:, :] logits, double[:, :] means, double[:, :] log_scales):
    cdef Py_ssize_t i, k, M = x.shape[0], K = logits.shape[1]
    out = np.empty(M)
    cdef double[:] o = out
    cdef double[:, :] scratch = np.empty((3, K))
    cdef double[:] logpi = scratch[0]
    cdef double[:] pi = scratch[1]
    cdef double[:] inv = scratch[2]
    cdef double c
    with nogil:
        for i in range(M):
            _prep(logits[i], log_scales[i], logpi, pi, inv)
            c = 0.0
            for k in range(K):
                c += pi[k] * _sigmoid((x[i] - means[i, k]) * inv[k])
            o[i] = c
    return out


def mix_transform(double[:] x, double[:, :] logits, double[:, :] means, double[:, :] log_scales):
    cdef Py_ssize_t i, k, M = x.shape[0], K = logits.shape[1]
    w_arr = np.empty(M)
    ld_arr = np.empty(M)
    cdef double[:] w = w_arr
    cdef double[:] ld = ld_arr
    cdef double[:, :] scratch = np.empty((4, K))
    cdef double[:] logpi = scratch[0]
    cdef double[:] pi = scratch[1]
    cdef double[:] inv = scratch[2]
    cdef double[:] lr = scratch[3]
    cdef double c, c_bar, t, t_bar, xi, e, s, sb, m, acc
    with nogil:
        for i in range(M):
            _prep(logits[i], log_scales[i], logpi, pi, inv)
            c = 0.0
            c_bar = 0.0
            m = -1e300
            for k in range(K):
                xi = (x[i] - means[i, k]) * inv[k]
                _sig_pair(xi, &e, &s, &sb)
                c += pi[k] * s
                c_bar += pi[k] * sb
                # log of pi_k * logistic density: softplus(xi) + softplus(-xi) = |xi| + 2 log1p(e)
                lr[k] = logpi[k] - log_scales[i, k] - fabs(xi) - 2.0 * log1p(e)
                if lr[k] > m:
                    m = lr[k]
            acc = 0.0
            for k in range(K):
                acc += exp(lr[k] - m)
            t = LO + SPAN * c
            t_bar = LO + SPAN * c_bar
            w[i] = log(t) - log(t_bar)
            ld[i] = LOG_SPAN + m + log(acc) - log(t) - log(t_bar)
    return w_arr, ld_arr


def mix_transform_grad(double[:] x, double[:, :] logits, double[:, :] means,
                       double[:, :] log_scales, double[:] gw, double[:] gld):
    cdef Py_ssize_t i, k, M = x.shape[0], K = logits.shape[1]
    gx_arr = np.empty(M)
    gl_arr = np.empty((M, K))
    gm_arr = np.empty((M, K))
    gs_arr = np.empty((M, K))
    cdef double[:] gx = gx_arr
    cdef double[:, :] gl = gl_arr
    cdef double[:, :] gm = gm_arr
    cdef double[:, :] gs = gs_arr
    cdef double c, c_bar, t, t_bar, a, m, z, pdf, acc, resp, rho, e
    cdef double[:, :] scratch = np.empty((8, K))
    cdef double[:] logpi = scratch[0]
    cdef double[:] pi = scratch[1]
    cdef double[:] inv = scratch[2]
    cdef double[:] xi = scratch[3]
    cdef double[:] sg = scratch[4]
    cdef double[:] sgb = scratch[5]
    cdef double[:] lr = scratch[6]
    cdef double[:] ex = scratch[7]
    with nogil:
        for i in range(M):
            _prep(logits[i], log_scales[i], logpi, pi, inv)
            c = 0.0
            c_bar = 0.0
            m = -1e300
            for k in range(K):
                xi[k] = (x[i] - means[i, k]) * inv[k]
                _sig_pair(xi[k], &e, &sg[k], &sgb[k])
                c += pi[k] * sg[k]
                c_bar += pi[k] * sgb[k]
                lr[k] = logpi[k] - log_scales[i, k] - fabs(xi[k]) - 2.0 * log1p(e)
                if lr[k] > m:
                    m = lr[k]
            z = 0.0
            pdf = 0.0
            for k in range(K):
                ex[k] = exp(lr[k] - m)
                z += ex[k]
            pdf = exp(m) * z
            t = LO + SPAN * c
            t_bar = LO + SPAN * c_bar
            a = SPAN / (t * t_bar) * (gw[i] - gld[i] * (1.0 - 2.0 * t))
            acc = 0.0
            for k in range(K):
                resp = ex[k] / z
                rho = exp(lr[k])
                # d/dxi log(logistic pdf) = sigma(-xi) - sigma(xi)
                acc += resp * (sgb[k] - sg[k]) * inv[k]
                gm[i, k] = -a * rho - gld[i] * resp * (sgb[k] - sg[k]) * inv[k]
                gs[i, k] = (-a * pi[k] * sg[k] * sgb[k] * xi[k]
                            - gld[i] * resp * ((sgb[k] - sg[k]) * xi[k] + 1.0))
                gl[i, k] = a * pi[k] * (sg[k] - c) + gld[i] * (resp - pi[k])
            gx[i] = a * pdf + gld[i] * acc
    return gx_arr, gl_arr, gm_arr, gs_arr


def mix_transform_inverse(double[:] w, double[:, :] logits, double[:, :] means,
                          double[:, :] log_scales, double tol=1e-12, int max_iter=200):
    cdef Py_ssize_t i, k, M = w.shape[0], K = logits.shape[1]
    cdef int it, widen
    x_arr = np.empty(M)
    ok_arr = np.zeros(M, dtype=np.uint8)
    cdef double[:] xo = x_arr
    cdef unsigned char[:] ok = ok_arr
    cdef double[:, :] scratch = np.empty((3, K))
    cdef double[:] logpi = scratch[0]
    cdef double[:] pi = scratch[1]
    cdef double[:] inv = scratch[2]
    cdef double t, lo, hi, mid, scale, width, target
    cdef bint good
    with nogil:
        for i in range(M):
            target = w[i]
            if not isfinite(target):
                continue
            t = _sigmoid(target)
            if t <= LO or t >= HI:
                continue
            _prep(logits[i], log_scales[i], logpi, pi, inv)
            scale = exp(log_scales[i, 0])
            lo = means[i, 0]
            hi = means[i, 0]
            for k in range(1, K):
                scale = fmax(scale, exp(log_scales[i, k]))
                if means[i, k] < lo:
                    lo = means[i, k]
                if means[i, k] > hi:
                    hi = means[i, k]
            lo -= 20.0 * scale
            hi += 20.0 * scale
            good = True
            widen = 0
            while _w_at(lo, means[i], pi, inv, K) > target:
                width = hi - lo
                lo -= width
                widen += 1
                if widen > 64:
                    good = False
                    break
            widen = 0
            while good and _w_at(hi, means[i], pi, inv, K) < target:
                width = hi - lo
                hi += width
                widen += 1
                if widen > 64:
                    good = False
                    break
            if not good:
                continue
            for it in range(max_iter):
                mid = 0.5 * (lo + hi)
                if _w_at(mid, means[i], pi, inv, K) < target:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= tol * fmax(1.0, fabs(mid)):
                    break
            mid = 0.5 * (lo + hi)
            if hi - lo <= tol * fmax(1.0, fabs(mid)):
                xo[i] = mid
                ok[i] = 1
    x_arr[ok_arr == 0] = np.nan
    return x_arr, ok_arr.astype(bool)
