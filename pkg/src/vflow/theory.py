"""Embedding a D_X-dimensional flow into a (D_X + D_Z)-dimensional one that
ignores z, plus an identity q(z|x), and numerical checks that the ELBO and
importance-sampled likelihood of the pair reproduce the original flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ActNorm, AffineCoupling, PointwiseLinear, TupleFlip, make_mask
from .model import ConditionalFlow, Flow, VFlowModel, build_q
from .numerics import Rng, log_normal_pdf
from .objective import elbo, importance_log_likelihood, quadrature_log_marginal

EQUALITY_TOL = 1e-9


class UnsupportedLayerError(ValueError):
    pass


def _embed_coupling(layer: AffineCoupling, d_x: int, d_z: int) -> AffineCoupling:
    if layer.context_dim:
        raise UnsupportedLayerError("conditional couplings are not supported for embedding")
    kind = layer.mask_kind if layer.mask_kind in ("checker", "channel") else "checker"
    mask = np.concatenate([layer.mask, make_mask(kind, d_z, layer.mask_invert)])
    net = layer.net
    new = AffineCoupling(d_x + d_z, mask, net.hidden, net.n_hidden, 0, layer.clamp,
                         mask_kind=kind, mask_invert=layer.mask_invert)
    n_px, n_pa = layer.pass_idx.size, new.pass_idx.size
    n_tx, n_ta = layer.trans_idx.size, new.trans_idx.size
    src, dst = net.params, new.net.params
    for k in range(net.n_hidden):
        w = src[f"w{k}"]
        if k == 0:
            # z_1 inputs get zero weights
            w = np.vstack([w, np.zeros((n_pa - n_px, w.shape[1]))])
        dst[f"w{k}"][...] = w
        dst[f"b{k}"][...] = src[f"b{k}"]
    w_out = np.zeros_like(dst["w_out"])
    b_out = np.zeros_like(dst["b_out"])
    rows = src["w_out"].shape[0]
    # mu and s columns for the z_2 outputs stay zero
    w_out[:rows, :n_tx] = src["w_out"][:, :n_tx]
    w_out[:rows, n_ta:n_ta + n_tx] = src["w_out"][:, n_tx:]
    b_out[:n_tx] = src["b_out"][:n_tx]
    b_out[n_ta:n_ta + n_tx] = src["b_out"][n_tx:]
    dst["w_out"][...] = w_out
    dst["b_out"][...] = b_out
    return new


def embed_layer(layer, d_x: int, d_z: int):
    if isinstance(layer, ActNorm):
        new = ActNorm(d_x + d_z)
        new.params["log_scale"][...] = np.concatenate([layer.params["log_scale"], np.zeros(d_z)])
        new.params["bias"][...] = np.concatenate([layer.params["bias"], np.zeros(d_z)])
        new.initialized = True
        return new
    if isinstance(layer, PointwiseLinear):
        w = np.eye(d_x + d_z)
        w[:d_x, :d_x] = layer.params["weight"]
        return PointwiseLinear(d_x + d_z, weight=w)
    if isinstance(layer, TupleFlip):
        return TupleFlip(d_x + d_z, perm=np.concatenate([layer.perm, d_x + np.arange(d_z)]))
    if isinstance(layer, AffineCoupling):
        return _embed_coupling(layer, d_x, d_z)
    raise UnsupportedLayerError(f"layer kind {layer.kind!r} is unsupported for embedding")


def embed_flow(base: Flow, d_z: int) -> Flow:
    """Flow on [x | z] whose every layer acts as f_l(x) on x and as identity on z."""
    if d_z < 1:
        raise ValueError("d_z must be positive")
    return Flow(base.dim + d_z, [embed_layer(layer, base.dim, d_z) for layer in base.layers])


def trivial_q(d_z: int, d_x: int, hidden: int = 50, n_hidden: int = 2, steps: int = 1,
              rng: Rng | None = None) -> ConditionalFlow:
    """A q(z|x) of the usual architecture with its output stage zeroed: q = N(0, I)."""
    q = build_q(d_z, d_x, steps, hidden, n_hidden, rng=rng if rng is not None else Rng(0))
    for layer in q.layers:
        if isinstance(layer, ActNorm):
            layer.params["log_scale"][...] = 0.0
            layer.params["bias"][...] = 0.0
            layer.initialized = True
        elif isinstance(layer, PointwiseLinear):
            layer.params["weight"][...] = np.eye(d_z)
        net = getattr(layer, "net", None)
        if net is not None:
            net.params["w_out"][...] = 0.0
            net.params["b_out"][...] = 0.0
    return q


def embedded_model(base: Flow, d_z: int, rng: Rng | None = None) -> VFlowModel:
    return VFlowModel(base.dim, d_z, embed_flow(base, d_z), trivial_q(d_z, base.dim, rng=rng))


@dataclass
class EmbeddingReport:
    d_x: int
    d_z: int
    log_px: np.ndarray
    log_pa: np.ndarray
    log_pz: np.ndarray
    elbo: np.ndarray
    importance: dict = field(default_factory=dict)
    quadrature: np.ndarray | None = None

    @property
    def factorization_error(self) -> float:
        return float(np.max(np.abs(self.log_pa - self.log_px - self.log_pz)))

    @property
    def elbo_error(self) -> float:
        return float(np.max(np.abs(self.elbo - self.log_px)))

    @property
    def importance_error(self) -> float:
        errs = [np.max(np.abs(v - self.log_px)) for v in self.importance.values()]
        return float(max(errs, default=0.0))

    @property
    def quadrature_error(self) -> float | None:
        if self.quadrature is None:
            return None
        return float(np.max(np.abs(self.quadrature - self.log_px)))

    def passed(self, tol: float = EQUALITY_TOL, quad_tol: float = 1e-6) -> bool:
        ok = max(self.factorization_error, self.elbo_error, self.importance_error) < tol
        if self.quadrature is not None:
            ok = ok and self.quadrature_error < quad_tol
        return ok

    def summary(self) -> dict:
        return {
            "d_x": self.d_x,
            "d_z": self.d_z,
            "n_points": int(self.log_px.size),
            "factorization_error": self.factorization_error,
            "elbo_error": self.elbo_error,
            "importance_error": {str(s): float(np.max(np.abs(v - self.log_px)))
                                 for s, v in self.importance.items()},
            "quadrature_error": self.quadrature_error,
            "passed": self.passed(),
        }


def verify_theorem1(base: Flow, d_z: int, n_points: int, rng: Rng, samples=(1, 16),
                    x=None, quadrature: bool | None = None) -> EmbeddingReport:
    """Check log p_a(x,z) = log p_x(x) + log N(z), ELBO = log p_x(x) and
    IS(S) = log p_x(x) on random points for the embedded model."""
    model = embedded_model(base, d_z, rng=Rng(rng.spawn_seed()))
    if x is None:
        x = 2.0 * rng.normal((n_points, base.dim))
    z = rng.normal((x.shape[0], d_z))
    log_px = base.log_prob(x)
    log_pa = model.p.log_prob(np.concatenate([x, z], axis=1))
    log_pz = log_normal_pdf(z)
    est, _ = elbo(model, x, rng)
    importance = {s: importance_log_likelihood(model, x, s, rng) for s in samples}
    quad = None
    if quadrature or (quadrature is None and d_z == 1):
        quad = quadrature_log_marginal(model, x, -8.0, 8.0, 2001)
    return EmbeddingReport(base.dim, d_z, log_px, log_pa, log_pz, est.value, importance, quad)
