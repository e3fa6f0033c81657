"""Pure-numpy mixture-of-logistics kernels (fallback for the Cython build).

All functions are elementwise over M scalars; mixture parameters are (M, K)
arrays of unnormalized logits, means and log-scales. The transform is

    w = logit(LO + (HI - LO) * cdf(x)),   cdf(x) = sum_k pi_k sigmoid((x - mu_k) e^{-s_k})

and ``ld`` is log dw/dx.
"""

import numpy as np

LO = 0.05
HI = 0.95
SPAN = HI - LO
LOG_SPAN = float(np.log(SPAN))


def _softplus(u):
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))


def _pieces(x, logits, means, log_scales):
    log_pi = _log_softmax(logits)
    pi = np.exp(log_pi)
    inv_scale = np.exp(-log_scales)
    xi = (x[:, None] - means) * inv_scale
    sig = _sigmoid(xi)
    sig_neg = _sigmoid(-xi)
    c = np.sum(pi * sig, axis=1)
    c_bar = np.sum(pi * sig_neg, axis=1)
    return log_pi, pi, inv_scale, xi, sig, sig_neg, c, c_bar


def mix_cdf(x, logits, means, log_scales):
    return _pieces(x, logits, means, log_scales)[6]


def mix_transform(x, logits, means, log_scales):
    """Return (w, ld) for every element."""
    log_pi, pi, inv_scale, xi, sig, sig_neg, c, c_bar = _pieces(x, logits, means, log_scales)
    t = LO + SPAN * c
    t_bar = LO + SPAN * c_bar
    w = np.log(t) - np.log(t_bar)
    log_rho = log_pi - _softplus(-xi) - _softplus(xi) - log_scales
    m = log_rho.max(axis=1)
    log_pdf = m + np.log(np.sum(np.exp(log_rho - m[:, None]), axis=1))
    ld = LOG_SPAN + log_pdf - np.log(t) - np.log(t_bar)
    return w, ld


def mix_transform_grad(x, logits, means, log_scales, gw, gld):
    """Gradients of sum(gw * w + gld * ld) w.r.t. x, logits, means, log_scales."""
    log_pi, pi, inv_scale, xi, sig, sig_neg, c, c_bar = _pieces(x, logits, means, log_scales)
    t = LO + SPAN * c
    t_bar = LO + SPAN * c_bar
    log_rho = log_pi - _softplus(-xi) - _softplus(xi) - log_scales
    m = log_rho.max(axis=1, keepdims=True)
    e = np.exp(log_rho - m)
    resp = e / e.sum(axis=1, keepdims=True)
    rho = np.exp(log_rho)
    pdf = rho.sum(axis=1)

    a = SPAN / (t * t_bar) * (gw - gld * (1.0 - 2.0 * t))
    one_m2s = sig_neg - sig
    gl = gld[:, None]
    ac = a[:, None]
    gx = a * pdf + gld * np.sum(resp * one_m2s * inv_scale, axis=1)
    gmeans = -ac * rho - gl * resp * one_m2s * inv_scale
    glog_scales = -ac * pi * sig * sig_neg * xi - gl * resp * (one_m2s * xi + 1.0)
    glogits = ac * pi * (sig - c[:, None]) + gl * (resp - pi)
    return gx, glogits, gmeans, glog_scales


def mix_transform_inverse(w, logits, means, log_scales, tol=1e-12, max_iter=200):
    """Invert ``mix_transform`` by bisection. Returns (x, ok) with ok a bool mask."""
    w = np.asarray(w, dtype=np.float64)
    t = _sigmoid(w)
    ok = (t > LO) & (t < HI) & np.isfinite(w)
    scale = np.exp(log_scales).max(axis=1)
    lo = means.min(axis=1) - 20.0 * scale
    hi = means.max(axis=1) + 20.0 * scale
    # Widen the bracket geometrically until it encloses the root.
    for _ in range(64):
        w_lo, _ = mix_transform(lo, logits, means, log_scales)
        w_hi, _ = mix_transform(hi, logits, means, log_scales)
        bad_lo = (w_lo > w) & ok
        bad_hi = (w_hi < w) & ok
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
    else:
        ok &= ~(bad_lo | bad_hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        w_mid, _ = mix_transform(mid, logits, means, log_scales)
        below = w_mid < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all((hi - lo <= tol * np.maximum(1.0, np.abs(mid))) | ~ok):
            break
    x = 0.5 * (lo + hi)
    ok &= hi - lo <= tol * np.maximum(1.0, np.abs(x))
    return np.where(ok, x, np.nan), ok
