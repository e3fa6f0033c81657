"""Invertible layers with analytic log-determinants and gradients.

Every layer works on a batch ``x`` of shape (N, dim) and returns per-row
log-determinants of shape (N,). ``backward(cache, grad_y, grad_logdet)``
returns the gradients of ``sum(grad_y * y) + sum(grad_logdet * logdet)``
with respect to the input, the context and every parameter (parameter
gradients are summed over the batch).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .kernels import HI, LO
from .numerics import Rng


class InversionError(ValueError):
    """Raised when a value lies outside a layer's image or a root solve fails."""


def soft_clamp(raw, bound):
    if bound is None:
        return raw, np.ones_like(raw)
    t = np.tanh(raw / bound)
    return bound * t, 1.0 - t * t


def soft_clamp_inverse(value, bound):
    return value if bound is None else bound * np.arctanh(np.asarray(value) / bound)


def make_mask(kind: str, dim: int, invert: bool = False) -> np.ndarray:
    """Boolean pass-through mask. For odd dims the pass-through part is larger."""
    idx = np.arange(dim)
    if kind == "checker":
        mask = idx % 2 == 0
    elif kind == "channel":
        mask = idx < (dim + 1) // 2
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return ~mask if invert else mask


def _rng(rng):
    return rng if rng is not None else Rng(0)


class MLP:
    """tanh MLP. A context vector enters through its own linear map added to
    the first pre-activation (the output pre-activation when there are no
    hidden layers)."""

    def __init__(self, in_dim, hidden, n_hidden, out_dim, context_dim=0, rng=None,
                 zero_out=True):
        rng = _rng(rng)
        self.in_dim, self.hidden, self.n_hidden = in_dim, hidden, n_hidden
        self.out_dim, self.context_dim = out_dim, context_dim
        p = {}
        fan_in = in_dim
        for k in range(n_hidden):
            p[f"w{k}"] = rng.normal((fan_in, hidden)) / math.sqrt(max(fan_in + (context_dim if k == 0 else 0), 1))
            p[f"b{k}"] = np.zeros(hidden)
            fan_in = hidden
        if zero_out:
            p["w_out"] = np.zeros((fan_in, out_dim))
        else:
            p["w_out"] = rng.normal((fan_in, out_dim)) / math.sqrt(max(fan_in, 1))
        p["b_out"] = np.zeros(out_dim)
        if context_dim:
            first = hidden if n_hidden else out_dim
            p["w_ctx"] = rng.normal((context_dim, first)) / math.sqrt(context_dim + in_dim)
        self.params = p

    def forward(self, x, context=None):
        p = self.params
        hs = []
        h = x
        for k in range(self.n_hidden):
            pre = h @ p[f"w{k}"] + p[f"b{k}"]
            if k == 0 and self.context_dim:
                pre = pre + context @ p["w_ctx"]
            h = np.tanh(pre)
            hs.append(h)
        out = h @ p["w_out"] + p["b_out"]
        if self.n_hidden == 0 and self.context_dim:
            out = out + context @ p["w_ctx"]
        return out, (x, context, hs)

    def backward(self, cache, grad_out):
        x, context, hs = cache
        p = self.params
        grads = {}
        h_last = hs[-1] if hs else x
        grads["w_out"] = h_last.T @ grad_out
        grads["b_out"] = grad_out.sum(axis=0)
        g = grad_out
        if self.n_hidden == 0:
            g_first = g
            gx = g @ p["w_out"].T
        else:
            gh = g @ p["w_out"].T
            for k in range(self.n_hidden - 1, -1, -1):
                gpre = gh * (1.0 - hs[k] * hs[k])
                inp = hs[k - 1] if k > 0 else x
                grads[f"w{k}"] = inp.T @ gpre
                grads[f"b{k}"] = gpre.sum(axis=0)
                gh = gpre @ p[f"w{k}"].T
            g_first = gpre
            gx = gh
        gctx = None
        if self.context_dim:
            grads["w_ctx"] = context.T @ g_first
            gctx = g_first @ p["w_ctx"].T
        return gx, gctx, grads

    def spec(self):
        return {"hidden": self.hidden, "n_hidden": self.n_hidden}


class FlowLayer:
    """Base class. Subclasses set ``kind``, ``dim``, ``context_dim`` and ``params``."""

    kind = "layer"
    context_dim = 0

    def parameters(self):
        """(local name, array) pairs in a stable order."""
        items = list(self.params.items())
        net = getattr(self, "net", None)
        if net is not None:
            items += [(f"net.{k}", v) for k, v in net.params.items()]
        return items

    def _check(self, x, context):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"{self.kind}: expected input of shape (N, {self.dim}), got {x.shape}")
        if self.context_dim:
            if context is None or context.shape != (x.shape[0], self.context_dim):
                got = None if context is None else context.shape
                raise ValueError(
                    f"{self.kind}: expected context of shape ({x.shape[0]}, {self.context_dim}), got {got}"
                )

    def forward(self, x, context=None):
        y, logdet, _ = self.forward_cached(x, context)
        return y, logdet

    def forward_cached(self, x, context=None):
        raise NotImplementedError

    def inverse(self, y, context=None):
        raise NotImplementedError

    def backward(self, cache, grad_y, grad_logdet):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


def _net_grads(grads):
    return {f"net.{k}": v for k, v in grads.items()}


class ActNorm(FlowLayer):
    """y = x * exp(log_scale) + bias, with optional data-dependent init."""

    kind = "actnorm"

    def __init__(self, dim):
        self.dim = dim
        self.params = {"log_scale": np.zeros(dim), "bias": np.zeros(dim)}
        self.initialized = False

    def data_init(self, x):
        std = x.std(axis=0)
        log_scale = -np.log(np.maximum(std, 1e-6))
        self.params["log_scale"][...] = log_scale
        self.params["bias"][...] = -x.mean(axis=0) * np.exp(log_scale)
        self.initialized = True

    def forward_cached(self, x, context=None):
        self._check(x, None)
        p = self.params
        y = x * np.exp(p["log_scale"]) + p["bias"]
        logdet = np.full(x.shape[0], p["log_scale"].sum())
        return y, logdet, x

    def inverse(self, y, context=None):
        p = self.params
        x = (y - p["bias"]) * np.exp(-p["log_scale"])
        return x, np.full(y.shape[0], -p["log_scale"].sum())

    def backward(self, cache, grad_y, grad_logdet):
        x = cache
        scale = np.exp(self.params["log_scale"])
        grads = {
            "log_scale": (grad_y * x).sum(axis=0) * scale + grad_logdet.sum(),
            "bias": grad_y.sum(axis=0),
        }
        return grad_y * scale, None, grads

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "initialized": self.initialized}


class PointwiseLinear(FlowLayer):
    """y = x W for a free square W (log|det W| via LU)."""

    kind = "pointwise"

    def __init__(self, dim, rng=None, weight=None):
        self.dim = dim
        if weight is None:
            q, r = np.linalg.qr(_rng(rng).normal((dim, dim)))
            q = q * np.sign(np.diag(r))
            if np.linalg.det(q) < 0:
                q[:, 0] = -q[:, 0]
            weight = q
        self.params = {"weight": np.array(weight, dtype=np.float64)}

    def forward_cached(self, x, context=None):
        self._check(x, None)
        w = self.params["weight"]
        _, logabs = np.linalg.slogdet(w)
        return x @ w, np.full(x.shape[0], logabs), x

    def inverse(self, y, context=None):
        w = self.params["weight"]
        _, logabs = np.linalg.slogdet(w)
        x = np.linalg.solve(w.T, y.T).T
        return x, np.full(y.shape[0], -logabs)

    def backward(self, cache, grad_y, grad_logdet):
        x = cache
        w = self.params["weight"]
        gw = x.T @ grad_y + grad_logdet.sum() * np.linalg.inv(w).T
        return grad_y @ w.T, None, {"weight": gw}

    def spec(self):
        return {"kind": self.kind, "dim": self.dim}


class _CouplingBase(FlowLayer):
    def _setup_mask(self, dim, mask, mask_kind, mask_invert):
        if isinstance(mask, str):
            mask_kind, mask = mask, make_mask(mask, dim, mask_invert)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (dim,) or mask.all() or not mask.any():
            raise ValueError("split mask needs at least one pass-through and one transformed entry")
        self.dim = dim
        self.mask = mask
        self.mask_kind = mask_kind
        self.mask_invert = mask_invert
        self.pass_idx = np.flatnonzero(mask)
        self.trans_idx = np.flatnonzero(~mask)

    def _mask_spec(self):
        return {"mask": self.mask.astype(int).tolist(), "mask_kind": self.mask_kind,
                "mask_invert": self.mask_invert}


class AffineCoupling(_CouplingBase):
    """y1 = x1, y2 = mu(x1) + exp(s(x1)) * x2 with s soft-clamped to [-clamp, clamp]."""

    kind = "affine_coupling"

    def __init__(self, dim, mask="checker", hidden=50, n_hidden=2, context_dim=0,
                 clamp=5.0, rng=None, mask_kind="custom", mask_invert=False, zero_out=True):
        self._setup_mask(dim, mask, mask_kind, mask_invert)
        self.context_dim = context_dim
        self.clamp = clamp
        n_t = self.trans_idx.size
        self.net = MLP(self.pass_idx.size, hidden, n_hidden, 2 * n_t, context_dim, rng, zero_out)
        self.params = {}

    def _mu_s(self, x1, context):
        out, ncache = self.net.forward(x1, context)
        n_t = self.trans_idx.size
        mu = out[:, :n_t]
        s, ds = soft_clamp(out[:, n_t:], self.clamp)
        return mu, s, ds, ncache

    def forward_cached(self, x, context=None):
        self._check(x, context)
        x1 = x[:, self.pass_idx]
        x2 = x[:, self.trans_idx]
        mu, s, ds, ncache = self._mu_s(x1, context)
        es = np.exp(s)
        y = np.empty_like(x)
        y[:, self.pass_idx] = x1
        y[:, self.trans_idx] = mu + es * x2
        return y, s.sum(axis=1), (x2, es, ds, ncache)

    def inverse(self, y, context=None):
        self._check(y, context)
        y1 = y[:, self.pass_idx]
        mu, s, _, _ = self._mu_s(y1, context)
        x = np.empty_like(y)
        x[:, self.pass_idx] = y1
        x[:, self.trans_idx] = (y[:, self.trans_idx] - mu) * np.exp(-s)
        return x, -s.sum(axis=1)

    def backward(self, cache, grad_y, grad_logdet):
        x2, es, ds, ncache = cache
        gy2 = grad_y[:, self.trans_idx]
        g_s = (gy2 * es * x2 + grad_logdet[:, None]) * ds
        g_out = np.concatenate([gy2, g_s], axis=1)
        g_x1, gctx, ngrads = self.net.backward(ncache, g_out)
        gx = np.empty_like(grad_y)
        gx[:, self.pass_idx] = grad_y[:, self.pass_idx] + g_x1
        gx[:, self.trans_idx] = gy2 * es
        return gx, gctx, _net_grads(ngrads)

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "context_dim": self.context_dim,
                "clamp": self.clamp, **self._mask_spec(), **self.net.spec()}


class MixLogisticCoupling(_CouplingBase):
    """y2 = logit(0.05 + 0.9 * MixLogCDF(x2)) * exp(a) + b, parameters from x1.

    Per transformed coordinate the net emits K logits, K means, K log-scales,
    then a (soft-clamped) and b.
    """

    kind = "mixlogistic_coupling"

    def __init__(self, dim, mask="checker", components=4, hidden=50, n_hidden=2,
                 context_dim=0, clamp=5.0, rng=None, mask_kind="custom", mask_invert=False,
                 zero_out=True):
        self._setup_mask(dim, mask, mask_kind, mask_invert)
        self.context_dim = context_dim
        self.clamp = clamp
        self.K = components
        n_t = self.trans_idx.size
        self.width = 3 * components + 2
        self.net = MLP(self.pass_idx.size, hidden, n_hidden, n_t * self.width, context_dim, rng,
                       zero_out)
        # Spread the component means so they are not symmetric at init.
        b = self.net.params["b_out"].reshape(n_t, self.width)
        b[:, components:2 * components] = np.linspace(-1.0, 1.0, components) if components > 1 else 0.0
        self.params = {}

    def _unpack(self, x1, context):
        out, ncache = self.net.forward(x1, context)
        n, n_t, k = x1.shape[0], self.trans_idx.size, self.K
        o = out.reshape(n, n_t, self.width)
        logits = o[:, :, :k].reshape(-1, k)
        means = o[:, :, k:2 * k].reshape(-1, k)
        log_scales = o[:, :, 2 * k:3 * k].reshape(-1, k)
        a, da = soft_clamp(o[:, :, 3 * k], self.clamp)
        b = o[:, :, 3 * k + 1]
        return logits, means, log_scales, a, da, b, ncache

    def forward_cached(self, x, context=None):
        self._check(x, context)
        x1 = x[:, self.pass_idx]
        x2 = x[:, self.trans_idx]
        logits, means, log_scales, a, da, b, ncache = self._unpack(x1, context)
        w, ld = kernels.mix_transform(x2.reshape(-1), logits, means, log_scales)
        w = w.reshape(x2.shape)
        ea = np.exp(a)
        y = np.empty_like(x)
        y[:, self.pass_idx] = x1
        y[:, self.trans_idx] = w * ea + b
        logdet = (ld.reshape(x2.shape) + a).sum(axis=1)
        return y, logdet, (x2, logits, means, log_scales, w, ea, da, ncache)

    def inverse(self, y, context=None):
        self._check(y, context)
        y1 = y[:, self.pass_idx]
        y2 = y[:, self.trans_idx]
        logits, means, log_scales, a, _, b, _ = self._unpack(y1, context)
        w = ((y2 - b) * np.exp(-a)).reshape(-1)
        x2, ok = kernels.mix_transform_inverse(w, logits, means, log_scales)
        if not np.all(ok):
            t = 1.0 / (1.0 + np.exp(-w[~ok]))
            if np.any((t <= LO) | (t >= HI)):
                raise InversionError("value outside the image of the mixture-logistic coupling")
            raise InversionError("bisection did not converge")
        x2 = x2.reshape(y2.shape)
        _, ld = kernels.mix_transform(x2.reshape(-1), logits, means, log_scales)
        x = np.empty_like(y)
        x[:, self.pass_idx] = y1
        x[:, self.trans_idx] = x2
        return x, -(ld.reshape(y2.shape) + a).sum(axis=1)

    def backward(self, cache, grad_y, grad_logdet):
        x2, logits, means, log_scales, w, ea, da, ncache = cache
        n, n_t, k = x2.shape[0], x2.shape[1], self.K
        gy2 = grad_y[:, self.trans_idx]
        gld = np.repeat(grad_logdet, n_t)
        gx2, g_logits, g_means, g_logs = kernels.mix_transform_grad(
            x2.reshape(-1), logits, means, log_scales, (gy2 * ea).reshape(-1), gld
        )
        g_out = np.empty((n, n_t, self.width))
        g_out[:, :, :k] = g_logits.reshape(n, n_t, k)
        g_out[:, :, k:2 * k] = g_means.reshape(n, n_t, k)
        g_out[:, :, 2 * k:3 * k] = g_logs.reshape(n, n_t, k)
        g_out[:, :, 3 * k] = (gy2 * w * ea + grad_logdet[:, None]) * da
        g_out[:, :, 3 * k + 1] = gy2
        g_x1, gctx, ngrads = self.net.backward(ncache, g_out.reshape(n, -1))
        gx = np.empty_like(grad_y)
        gx[:, self.pass_idx] = grad_y[:, self.pass_idx] + g_x1
        gx[:, self.trans_idx] = gx2.reshape(n, n_t)
        return gx, gctx, _net_grads(ngrads)

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "context_dim": self.context_dim,
                "clamp": self.clamp, "components": self.K, **self._mask_spec(), **self.net.spec()}


class Sigmoid(FlowLayer):
    kind = "sigmoid"

    def __init__(self, dim):
        self.dim = dim
        self.params = {}

    def forward_cached(self, x, context=None):
        self._check(x, None)
        y = _sigmoid(x)
        logdet = np.sum(-np.logaddexp(0.0, -x) - np.logaddexp(0.0, x), axis=1)
        return y, logdet, y

    def inverse(self, y, context=None):
        if np.any((y <= 0.0) | (y >= 1.0)) or not np.all(np.isfinite(y)):
            raise InversionError("sigmoid inverse needs entries strictly inside (0, 1)")
        x = np.log(y) - np.log1p(-y)
        logdet = np.sum(np.log(y) + np.log1p(-y), axis=1)
        return x, -logdet

    def backward(self, cache, grad_y, grad_logdet):
        y = cache
        gx = grad_y * y * (1.0 - y) + grad_logdet[:, None] * (1.0 - 2.0 * y)
        return gx, None, {}

    def spec(self):
        return {"kind": self.kind, "dim": self.dim}


def _sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class TupleFlip(FlowLayer):
    """Fixed permutation; built from a mask it swaps pass-through and transformed slots."""

    kind = "tuple_flip"

    def __init__(self, dim, perm=None, mask=None):
        self.dim = dim
        if perm is None:
            if mask is None:
                mask = make_mask("checker", dim)
            mask = np.asarray(mask, dtype=bool)
            perm = np.arange(dim)
            a, b = np.flatnonzero(mask), np.flatnonzero(~mask)
            m = min(a.size, b.size)
            perm[a[:m]], perm[b[:m]] = b[:m], a[:m]
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(dim)):
            raise ValueError("perm must be a permutation of range(dim)")
        self.perm = perm
        self.inv_perm = np.argsort(perm)
        self.params = {}

    def forward_cached(self, x, context=None):
        self._check(x, None)
        return x[:, self.perm], np.zeros(x.shape[0]), None

    def inverse(self, y, context=None):
        return y[:, self.inv_perm], np.zeros(y.shape[0])

    def backward(self, cache, grad_y, grad_logdet):
        return grad_y[:, self.inv_perm], None, {}

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "perm": self.perm.tolist()}


class GaussianConditional(FlowLayer):
    """z = mu(c) + exp(log_sigma(c)) * eps, with mu and log_sigma read from the context."""

    kind = "gaussian_conditional"

    def __init__(self, dim, context_dim, hidden=50, n_hidden=2, clamp=5.0, rng=None,
                 zero_out=True):
        if context_dim < 1:
            raise ValueError("GaussianConditional needs a context")
        self.dim, self.context_dim, self.clamp = dim, context_dim, clamp
        self.net = MLP(context_dim, hidden, n_hidden, 2 * dim, 0, rng, zero_out)
        self.params = {}

    def _mu_ls(self, context):
        out, ncache = self.net.forward(context)
        ls, dls = soft_clamp(out[:, self.dim:], self.clamp)
        return out[:, :self.dim], ls, dls, ncache

    def forward_cached(self, x, context=None):
        self._check(x, context)
        mu, ls, dls, ncache = self._mu_ls(context)
        sig = np.exp(ls)
        return mu + sig * x, ls.sum(axis=1), (x, sig, dls, ncache)

    def inverse(self, y, context=None):
        self._check(y, context)
        mu, ls, _, _ = self._mu_ls(context)
        return (y - mu) * np.exp(-ls), -ls.sum(axis=1)

    def backward(self, cache, grad_y, grad_logdet):
        x, sig, dls, ncache = cache
        g_ls = (grad_y * x * sig + grad_logdet[:, None]) * dls
        gctx, _, ngrads = self.net.backward(ncache, np.concatenate([grad_y, g_ls], axis=1))
        return grad_y * sig, gctx, _net_grads(ngrads)

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "context_dim": self.context_dim,
                "clamp": self.clamp, **self.net.spec()}


class MixAffine(FlowLayer):
    """Forced x/z mixing on the [x | z] layout: output is [z | mu(z) + exp(s(z)) * x]."""

    kind = "mix_affine"

    def __init__(self, d_x, d_z, hidden=50, n_hidden=2, clamp=5.0, rng=None, zero_out=True):
        self.d_x, self.d_z, self.dim, self.clamp = d_x, d_z, d_x + d_z, clamp
        self.net = MLP(d_z, hidden, n_hidden, 2 * d_x, 0, rng, zero_out)
        self.params = {}

    def _mu_s(self, z):
        out, ncache = self.net.forward(z)
        s, ds = soft_clamp(out[:, self.d_x:], self.clamp)
        return out[:, :self.d_x], s, ds, ncache

    def forward_cached(self, x, context=None):
        self._check(x, None)
        xx, z = x[:, :self.d_x], x[:, self.d_x:]
        mu, s, ds, ncache = self._mu_s(z)
        es = np.exp(s)
        y = np.concatenate([z, mu + es * xx], axis=1)
        return y, s.sum(axis=1), (xx, es, ds, ncache)

    def inverse(self, y, context=None):
        z, y2 = y[:, :self.d_z], y[:, self.d_z:]
        mu, s, _, _ = self._mu_s(z)
        return np.concatenate([(y2 - mu) * np.exp(-s), z], axis=1), -s.sum(axis=1)

    def backward(self, cache, grad_y, grad_logdet):
        xx, es, ds, ncache = cache
        gy1, gy2 = grad_y[:, :self.d_z], grad_y[:, self.d_z:]
        g_s = (gy2 * xx * es + grad_logdet[:, None]) * ds
        gz, _, ngrads = self.net.backward(ncache, np.concatenate([gy2, g_s], axis=1))
        return np.concatenate([gy2 * es, gy1 + gz], axis=1), None, _net_grads(ngrads)

    def spec(self):
        return {"kind": self.kind, "d_x": self.d_x, "d_z": self.d_z, "clamp": self.clamp,
                **self.net.spec()}


LAYER_KINDS = {
    cls.kind: cls
    for cls in (ActNorm, PointwiseLinear, AffineCoupling, MixLogisticCoupling, Sigmoid,
                TupleFlip, GaussianConditional, MixAffine)
}


def layer_from_spec(spec: dict) -> FlowLayer:
    """Rebuild a layer skeleton from ``layer.spec()``; parameters are loaded separately."""
    s = dict(spec)
    kind = s.pop("kind")
    if kind == "actnorm":
        layer = ActNorm(s["dim"])
        layer.initialized = bool(s.get("initialized", True))
        return layer
    if kind == "pointwise":
        return PointwiseLinear(s["dim"], weight=np.eye(s["dim"]))
    if kind == "sigmoid":
        return Sigmoid(s["dim"])
    if kind == "tuple_flip":
        return TupleFlip(s["dim"], perm=s["perm"])
    if kind == "affine_coupling":
        return AffineCoupling(s["dim"], np.array(s["mask"], dtype=bool), s["hidden"], s["n_hidden"],
                              s["context_dim"], s["clamp"], mask_kind=s["mask_kind"],
                              mask_invert=s["mask_invert"])
    if kind == "mixlogistic_coupling":
        return MixLogisticCoupling(s["dim"], np.array(s["mask"], dtype=bool), s["components"],
                                   s["hidden"], s["n_hidden"], s["context_dim"], s["clamp"],
                                   mask_kind=s["mask_kind"], mask_invert=s["mask_invert"])
    if kind == "gaussian_conditional":
        return GaussianConditional(s["dim"], s["context_dim"], s["hidden"], s["n_hidden"], s["clamp"])
    if kind == "mix_affine":
        return MixAffine(s["d_x"], s["d_z"], s["hidden"], s["n_hidden"], s["clamp"])
    raise ValueError(f"unknown layer kind {kind!r}")


# Function-style entry points over single instances.

def mix_log_cdf(x, pi, mu, s):
    """sum_i pi_i * sigmoid((x - mu_i) * exp(-s_i)) for scalar or 1-D ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    pi = np.asarray(pi, dtype=np.float64)
    k = pi.size
    tile = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64), (x.size, k))
    out = kernels.mix_cdf(x, tile(np.log(pi)), tile(mu), tile(s))
    return out if out.size > 1 else float(out[0])


def mix_logistic_transform(x2, logits, means, log_scales, a, b):
    """Elementwise clamped mixture-logistic map; returns (y2, elementwise log-derivative)."""
    x2 = np.asarray(x2, dtype=np.float64)
    shape = x2.shape
    k = np.shape(logits)[-1]
    w, ld = kernels.mix_transform(x2.reshape(-1), np.reshape(logits, (-1, k)),
                                  np.reshape(means, (-1, k)), np.reshape(log_scales, (-1, k)))
    a = np.asarray(a, dtype=np.float64)
    y = w.reshape(shape) * np.exp(a) + b
    return y, ld.reshape(shape) + a


def gaussian_conditional_forward(layer: GaussianConditional, context, eps):
    return layer.forward(eps, context)


def mix_affine_forward(layer: MixAffine, x, z):
    y, logdet = layer.forward(np.concatenate([x, z], axis=1))
    return (y[:, :layer.d_z], y[:, layer.d_z:]), logdet
