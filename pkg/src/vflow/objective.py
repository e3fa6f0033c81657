"""ELBO, importance-sampled likelihood, dequantization bound, bits/dim."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import VFlowModel
from .numerics import Rng, logsumexp


@dataclass
class ElboEstimate:
    """Per-row ELBO and its parts, in nats: value = log_p - log_q - log_r."""

    value: np.ndarray
    log_p: np.ndarray
    log_q: np.ndarray
    log_r: np.ndarray | None = None

    def mean(self) -> float:
        return float(np.mean(self.value))


def _zeros(n):
    return np.zeros(n)


def elbo(model: VFlowModel, x, rng: Rng, eps_q=None):
    """One reparameterized draw z ~ q(z|x) per row of ``x``.

    Returns (ElboEstimate, cache); pass the cache to ``elbo_backward``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_x:
        raise ValueError(f"expected x of shape (N, {model.d_x}), got {x.shape}")
    n = x.shape[0]
    if model.d_z == 0:
        log_p, p_cache = model.p.log_prob_cached(x)
        return ElboEstimate(log_p, log_p, _zeros(n)), ("plain", p_cache, None)
    if eps_q is None:
        eps_q = rng.normal((n, model.d_z))
    z, log_q, q_cache = model.q.sample_cached(x, eps_q)
    log_p, p_cache = model.p.log_prob_cached(np.concatenate([x, z], axis=1))
    return ElboEstimate(log_p - log_q, log_p, log_q), ("vflow", p_cache, q_cache)


def elbo_backward(model: VFlowModel, cache, weights=None):
    """Parameter gradients of sum(weights * elbo) (default: the batch mean).

    Returns (grads, grad_x) where grad_x is the gradient w.r.t. the data rows.
    """
    kind, p_cache, q_cache = cache
    n = p_cache[0].shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    g_in, grads = model.p.backward(p_cache, w, "p")
    if kind == "plain":
        return grads, g_in
    gx = g_in[:, :model.d_x]
    gz = g_in[:, model.d_x:]
    gctx, q_grads = model.q.backward(q_cache, gz, -w, "q")
    grads.update(q_grads)
    if gctx is not None:
        gx = gx + gctx
    return grads, gx


def elbo_discrete(model: VFlowModel, x_int, rng: Rng, eps_r=None, eps_q=None):
    """Dequantization bound: u ~ r(u|x), z ~ q(z|x+u), log p(x+u, z) - log r - log q."""
    if model.r is None:
        raise ValueError("model has no dequantization flow r(u|x)")
    x = np.asarray(x_int, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_x:
        raise ValueError(f"expected x of shape (N, {model.d_x}), got {x.shape}")
    n = x.shape[0]
    if eps_r is None:
        eps_r = rng.normal((n, model.d_x))
    u, log_r, r_cache = model.r.sample_cached(x, eps_r)
    v = x + u
    if model.d_z:
        if eps_q is None:
            eps_q = rng.normal((n, model.d_z))
        z, log_q, q_cache = model.q.sample_cached(v, eps_q)
        log_p, p_cache = model.p.log_prob_cached(np.concatenate([v, z], axis=1))
    else:
        log_q, q_cache = _zeros(n), None
        log_p, p_cache = model.p.log_prob_cached(v)
    est = ElboEstimate(log_p - log_q - log_r, log_p, log_q, log_r)
    return est, ("discrete", p_cache, q_cache, r_cache)


def elbo_discrete_backward(model: VFlowModel, cache, weights=None):
    _, p_cache, q_cache, r_cache = cache
    n = p_cache[0].shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    g_in, grads = model.p.backward(p_cache, w, "p")
    gv = g_in[:, :model.d_x]
    if model.d_z:
        gctx, q_grads = model.q.backward(q_cache, g_in[:, model.d_x:], -w, "q")
        grads.update(q_grads)
        if gctx is not None:
            gv = gv + gctx
    _, r_grads = model.r.backward(r_cache, gv, -w, "r")
    grads.update(r_grads)
    return grads


def _log_weights(model, x, rng, discrete):
    if discrete:
        est, _ = elbo_discrete(model, x, rng)
    else:
        est, _ = elbo(model, x, rng)
    return est.value


def importance_log_likelihood(model: VFlowModel, x, samples: int, rng: Rng,
                              discrete: bool = False, max_rows: int = 65536):
    """Per-row importance-sampled log-likelihood with ``samples`` proposals each.

    For discrete data the proposals are joint draws from r(u|x) q(z|x+u).
    """
    if samples < 1:
        raise ValueError("importance sampling needs at least one sample")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_x:
        raise ValueError(f"expected data of shape (N, {model.d_x}), got {x.shape}")
    if model.d_z == 0 and not discrete:
        return model.p.log_prob(x)
    n = x.shape[0]
    out = np.empty(n)
    chunk = max(1, max_rows // samples)
    for start in range(0, n, chunk):
        xs = x[start:start + chunk]
        rep = np.repeat(xs, samples, axis=0)
        lw = _log_weights(model, rep, rng, discrete).reshape(xs.shape[0], samples)
        out[start:start + xs.shape[0]] = logsumexp(lw, axis=1) - math.log(samples)
    return out


def bits_per_dim(total_nats, dim: int):
    """Convert a (discrete) log-likelihood in nats to bits per dimension."""
    if dim < 1:
        raise ValueError("dim must be positive")
    return -np.asarray(total_nats) / (dim * math.log(2.0))


def quadrature_log_marginal(model: VFlowModel, x, lower=-8.0, upper=8.0, nodes=4001):
    """log of the integral of p(x, z) over a one-dimensional z, per row (Simpson rule)."""
    from .numerics import simpson_weights

    if model.d_z != 1:
        raise ValueError("quadrature marginal needs d_z == 1")
    zs, w = simpson_weights(lower, upper, nodes)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for i, row in enumerate(x):
        pts = np.concatenate([np.repeat(row[None], zs.size, axis=0), zs[:, None]], axis=1)
        out[i] = logsumexp(model.p.log_prob(pts) + np.log(w))
    return out


def quadrature_log_mass_discrete(model: VFlowModel, x_int, u_nodes=41, z_nodes=161,
                                 z_bounds=(-8.0, 8.0)):
    """log P(x) = log of the integral over u in [0,1]^d_x (and z, if d_z == 1) of p(x+u, z).

    Tensor-product Simpson rule; intended for d_x <= 2 as a brute-force oracle.
    """
    from .numerics import simpson_weights

    if model.d_z > 1:
        raise ValueError("discrete quadrature oracle supports d_z <= 1")
    us, wu = simpson_weights(0.0, 1.0, u_nodes)
    grids = np.meshgrid(*([us] * model.d_x), indexing="ij")
    u = np.stack([g.reshape(-1) for g in grids], axis=1)
    log_wu = np.sum(np.log(np.stack(np.meshgrid(*([wu] * model.d_x), indexing="ij"), -1).reshape(-1, model.d_x)), axis=1)
    if model.d_z:
        zs, wz = simpson_weights(z_bounds[0], z_bounds[1], z_nodes)
    out = np.empty(len(x_int))
    for i, row in enumerate(np.asarray(x_int, dtype=np.float64)):
        v = row[None] + u
        if model.d_z:
            pts = np.concatenate([np.repeat(v, zs.size, axis=0), np.tile(zs, v.shape[0])[:, None]], axis=1)
            lw = np.repeat(log_wu, zs.size) + np.tile(np.log(wz), v.shape[0])
        else:
            pts, lw = v, log_wu
        out[i] = logsumexp(model.p.log_prob(pts) + lw)
    return out
