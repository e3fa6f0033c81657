"""Flows built from layers: unconditional p-flows and conditional q/r-flows.

Direction conventions:

* ``Flow`` layers run data -> noise in their forward direction; sampling
  applies the inverses in reverse order.
* ``ConditionalFlow`` layers run noise -> value in their forward direction,
  so a reparameterized sample and its log-density come from one pass.
  Evaluating the density of an arbitrary value uses the inverses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    ActNorm,
    AffineCoupling,
    FlowLayer,
    GaussianConditional,
    InversionError,
    MixAffine,
    MixLogisticCoupling,
    PointwiseLinear,
    Sigmoid,
    layer_from_spec,
    make_mask,
)
from .numerics import Rng, log_normal_pdf


class DivergenceError(FloatingPointError):
    """Non-finite value produced during a forward pass."""


def _add(grads, prefix, local):
    for k, v in local.items():
        grads[f"{prefix}.{k}"] = v


def _layer_names(prefix, i, layer):
    return [(f"{prefix}.{i}.{layer.kind}.{k}", v) for k, v in layer.parameters()]


class Flow:
    """Unconditional flow over ``dim`` with a standard normal base."""

    def __init__(self, dim: int, layers: list[FlowLayer]):
        for layer in layers:
            if layer.dim != dim or layer.context_dim:
                raise ValueError(f"layer {layer.kind} does not map R^{dim} -> R^{dim} unconditionally")
        self.dim = dim
        self.layers = list(layers)

    def named_parameters(self, prefix="p"):
        out = []
        for i, layer in enumerate(self.layers):
            out += _layer_names(prefix, i, layer)
        return out

    def forward(self, x):
        """Map data to noise; returns (eps, total logdet)."""
        h = x
        total = np.zeros(x.shape[0])
        for layer in self.layers:
            h, ld = layer.forward(h)
            total += ld
        return h, total

    def log_prob(self, x):
        eps, logdet = self.forward(self._check(x))
        return log_normal_pdf(eps) + logdet

    def log_prob_cached(self, x):
        h = self._check(x)
        total = np.zeros(x.shape[0])
        caches = []
        for layer in self.layers:
            h, ld, c = layer.forward_cached(h)
            total += ld
            caches.append(c)
        logp = log_normal_pdf(h) + total
        if not np.all(np.isfinite(logp)):
            raise DivergenceError("non-finite log-density in flow forward pass")
        return logp, (h, caches)

    def backward(self, cache, grad_logp, prefix="p"):
        """Gradients of sum(grad_logp * logp); returns (grad_x, parameter grads)."""
        eps, caches = cache
        g = -eps * grad_logp[:, None]
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g, _, local = layer.backward(caches[i], g, grad_logp)
            _add(grads, f"{prefix}.{i}.{layer.kind}", local)
        return g, grads

    def inverse(self, eps):
        h = eps
        for i in range(len(self.layers) - 1, -1, -1):
            try:
                h, _ = self.layers[i].inverse(h)
            except InversionError as err:
                raise InversionError(f"layer {i} ({self.layers[i].kind}): {err}") from err
        return h

    def sample(self, rng: Rng, n: int):
        if n < 1:
            raise ValueError("number of samples must be at least 1")
        return self.inverse(rng.normal((n, self.dim)))

    def data_init(self, x):
        h = x
        for layer in self.layers:
            if isinstance(layer, ActNorm) and not layer.initialized:
                layer.data_init(h)
            h, _ = layer.forward(h)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected data of shape (N, {self.dim}), got {x.shape}")
        return x

    def spec(self):
        return [layer.spec() for layer in self.layers]


class ConditionalFlow:
    """Flow over ``dim`` given a context vector; forward direction is noise -> value."""

    def __init__(self, dim: int, context_dim: int, layers: list[FlowLayer]):
        for layer in layers:
            if layer.dim != dim or layer.context_dim not in (0, context_dim):
                raise ValueError(f"layer {layer.kind} is inconsistent with dim={dim}, context={context_dim}")
        self.dim = dim
        self.context_dim = context_dim
        self.layers = list(layers)

    named_parameters = Flow.named_parameters

    def _ctx(self, context):
        context = np.asarray(context, dtype=np.float64)
        if context.ndim != 2 or context.shape[1] != self.context_dim:
            raise ValueError(f"expected context of shape (N, {self.context_dim}), got {context.shape}")
        return context

    def sample_cached(self, context, eps):
        """Push ``eps`` through the layers; returns (value, log q(value|context), cache)."""
        context = self._ctx(context)
        h = eps
        total = np.zeros(eps.shape[0])
        caches = []
        for layer in self.layers:
            h, ld, c = layer.forward_cached(h, context if layer.context_dim else None)
            total += ld
            caches.append(c)
        logq = log_normal_pdf(eps) - total
        if not np.all(np.isfinite(logq)) or not np.all(np.isfinite(h)):
            raise DivergenceError("non-finite value in conditional flow sampling pass")
        return h, logq, caches

    def sample(self, context, rng: Rng):
        eps = rng.normal((np.shape(context)[0], self.dim))
        value, logq, _ = self.sample_cached(context, eps)
        return value, logq

    def backward(self, cache, grad_value, grad_logq, prefix="q"):
        """Gradients of sum(grad_value * value) + sum(grad_logq * logq).

        Returns (grad_context, parameter grads).
        """
        caches = cache
        g = grad_value
        gld = -grad_logq
        gctx = None
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g, gc, local = layer.backward(caches[i], g, gld)
            if gc is not None:
                gctx = gc if gctx is None else gctx + gc
            _add(grads, f"{prefix}.{i}.{layer.kind}", local)
        return gctx, grads

    def log_prob(self, value, context):
        context = self._ctx(context)
        h = np.asarray(value, dtype=np.float64)
        total = np.zeros(h.shape[0])
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            try:
                h, ld = layer.inverse(h, context if layer.context_dim else None)
            except InversionError as err:
                raise InversionError(f"layer {i} ({layer.kind}): {err}") from err
            total += ld
        return log_normal_pdf(h) + total

    def data_init(self, context, eps):
        h = eps
        for layer in self.layers:
            if isinstance(layer, ActNorm) and not layer.initialized:
                layer.data_init(h)
            h, _ = layer.forward(h, context if layer.context_dim else None)

    def spec(self):
        return [layer.spec() for layer in self.layers]


@dataclass
class VFlowModel:
    """p over [x | z], q(z | x), optional r(u | x) for dequantization.

    ``d_z == 0`` gives a plain flow over x (``q`` must then be None).
    """

    d_x: int
    d_z: int
    p: Flow
    q: ConditionalFlow | None = None
    r: ConditionalFlow | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p.dim != self.d_x + self.d_z:
            raise ValueError("p-flow dimension must equal d_x + d_z")
        if self.d_z and (self.q is None or self.q.dim != self.d_z or self.q.context_dim != self.d_x):
            raise ValueError("q-flow must have dim d_z and context d_x")
        if self.r is not None and (self.r.dim != self.d_x or self.r.context_dim != self.d_x):
            raise ValueError("r-flow must have dim d_x and context d_x")

    def named_parameters(self):
        out = self.p.named_parameters("p")
        if self.q is not None:
            out += self.q.named_parameters("q")
        if self.r is not None:
            out += self.r.named_parameters("r")
        return out

    def parameter_dict(self):
        return dict(self.named_parameters())

    def num_parameters(self):
        return sum(v.size for _, v in self.named_parameters())

    def spec(self):
        return {
            "d_x": self.d_x,
            "d_z": self.d_z,
            "p": self.p.spec(),
            "q": None if self.q is None else self.q.spec(),
            "r": None if self.r is None else self.r.spec(),
            "meta": self.meta,
        }

    @classmethod
    def from_spec(cls, spec):
        d_x, d_z = spec["d_x"], spec["d_z"]
        p = Flow(d_x + d_z, [layer_from_spec(s) for s in spec["p"]])
        q = None if spec["q"] is None else ConditionalFlow(d_z, d_x, [layer_from_spec(s) for s in spec["q"]])
        r = None if spec["r"] is None else ConditionalFlow(d_x, d_x, [layer_from_spec(s) for s in spec["r"]])
        return cls(d_x, d_z, p, q, r, dict(spec.get("meta", {})))

    def sample(self, rng: Rng, n: int):
        """Samples of x; z is dropped."""
        return self.p.sample(rng, n)[:, :self.d_x]


# Builders


def glow_steps(dim, steps, hidden=50, n_hidden=2, mask="checker", coupling="affine",
               components=4, context_dim=0, clamp=5.0, rng=None, actnorm=True, pointwise=True):
    """Glow-style steps: ActNorm -> PointwiseLinear -> coupling, alternating mask parity."""
    rng = rng if rng is not None else Rng(0)
    layers = []
    for i in range(steps):
        invert = i % 2 == 1
        m = make_mask(mask, dim, invert)
        if actnorm:
            layers.append(ActNorm(dim))
        if pointwise:
            layers.append(PointwiseLinear(dim, rng))
        if coupling == "affine":
            layers.append(AffineCoupling(dim, m, hidden, n_hidden, context_dim, clamp, rng,
                                         mask_kind=mask, mask_invert=invert))
        elif coupling == "mixlogistic":
            layers.append(MixLogisticCoupling(dim, m, components, hidden, n_hidden, context_dim,
                                              clamp, rng, mask_kind=mask, mask_invert=invert))
        else:
            raise ValueError(f"unknown coupling {coupling!r}")
    return layers


def build_q(d_z, d_x, steps=1, hidden=50, n_hidden=2, mask="checker", coupling="affine",
            components=4, clamp=5.0, rng=None, sigmoid=False):
    """Conditional q(z|x). One-dimensional z uses a Gaussian layer, since a
    coupling cannot split a single coordinate."""
    if d_z == 1:
        layers = [GaussianConditional(1, d_x, hidden, n_hidden, clamp, rng)]
    else:
        layers = glow_steps(d_z, steps, hidden, n_hidden, mask, coupling, components, d_x, clamp, rng)
    if sigmoid:
        layers.append(Sigmoid(d_z))
    return ConditionalFlow(d_z, d_x, layers)


def build_vflow(d_x, d_z, p_steps, q_steps=1, hidden=50, n_hidden=2, mask="checker",
                coupling="affine", components=4, clamp=5.0, q_hidden=None, q_n_hidden=None,
                mix_affine=False, r_steps=0, rng=None):
    rng = rng if rng is not None else Rng(0)
    dim = d_x + d_z
    p_layers = []
    if mix_affine and d_z:
        p_layers.append(MixAffine(d_x, d_z, hidden, n_hidden, clamp, rng))
    p_layers += glow_steps(dim, p_steps, hidden, n_hidden, mask, coupling, components, 0, clamp, rng)
    p = Flow(dim, p_layers)
    q = None
    if d_z:
        q = build_q(d_z, d_x, q_steps, q_hidden or hidden,
                    n_hidden if q_n_hidden is None else q_n_hidden, mask, "affine", components,
                    clamp, rng)
    r = None
    if r_steps:
        r_layers = glow_steps(d_x, r_steps, hidden, n_hidden, mask, "affine", components, d_x,
                              clamp, rng) + [Sigmoid(d_x)]
        r = ConditionalFlow(d_x, d_x, r_layers)
    return VFlowModel(d_x, d_z, p, q, r)
