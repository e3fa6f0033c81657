import numpy as np
import pytest

from layercheck import randomize
from vflow.layers import MixLogisticCoupling, TupleFlip
from vflow.model import Flow, glow_steps
from vflow.numerics import Rng
from vflow.theory import (
    EQUALITY_TOL,
    UnsupportedLayerError,
    embed_flow,
    embedded_model,
    trivial_q,
    verify_theorem1,
)


def base_flow(seed, d_x=2, mask="checker", n_hidden=2):
    rng = Rng(seed)
    layers = glow_steps(d_x, 3, 8, n_hidden, mask=mask, rng=rng)
    layers.insert(2, TupleFlip(d_x))
    for layer in layers:
        randomize(layer, rng, 0.2)
    return Flow(d_x, layers)


@pytest.mark.parametrize("d_x,d_z,mask,n_hidden", [
    (2, 1, "checker", 2), (2, 2, "channel", 1), (3, 3, "checker", 0), (2, 8, "channel", 2),
])
def test_embedding_equalities(d_x, d_z, mask, n_hidden):
    report = verify_theorem1(base_flow(d_x + d_z, d_x, mask, n_hidden), d_z, 40, Rng(1))
    assert report.factorization_error < EQUALITY_TOL
    assert report.elbo_error < EQUALITY_TOL
    assert report.importance_error < EQUALITY_TOL
    assert report.passed()


def test_quadrature_agrees_at_one_latent():
    report = verify_theorem1(base_flow(5), 1, 10, Rng(2))
    assert report.quadrature is not None
    assert report.quadrature_error < 1e-8


def test_embedded_flow_ignores_z_and_keeps_it():
    base = base_flow(3)
    flow = embed_flow(base, 2)
    rng = Rng(0)
    x, z = rng.normal((6, 2)), rng.normal((6, 2))
    eps, ld = flow.forward(np.concatenate([x, z], axis=1))
    eps_x, ld_x = base.forward(x)
    assert np.allclose(eps[:, :2], eps_x, atol=1e-12)
    assert np.array_equal(eps[:, 2:], z)
    assert np.allclose(ld, ld_x, atol=1e-12)


def test_trivial_q_is_standard_normal():
    q = trivial_q(3, 2, hidden=5, rng=Rng(1))
    rng = Rng(2)
    ctx, eps = rng.normal((4, 2)), rng.normal((4, 3))
    z, logq, _ = q.sample_cached(ctx, eps)
    assert np.array_equal(z, eps)
    assert np.allclose(logq, -0.5 * np.sum(eps**2, axis=1) - 1.5 * np.log(2 * np.pi))


def test_mixlogistic_base_is_unsupported():
    base = Flow(2, [MixLogisticCoupling(2, "checker", 2, 4, 1, rng=Rng(0))])
    with pytest.raises(UnsupportedLayerError, match="unsupported for embedding"):
        embed_flow(base, 1)


def test_identity_base_passes():
    report = verify_theorem1(Flow(2, []), 2, 5, Rng(0))
    assert report.passed()
    assert report.summary()["passed"] is True


def test_embedded_model_shapes():
    model = embedded_model(base_flow(1), 4)
    assert model.d_x == 2 and model.d_z == 4 and model.p.dim == 6
    with pytest.raises(ValueError):
        embed_flow(base_flow(1), 0)
