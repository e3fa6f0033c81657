import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layercheck import KINDS, gradient_error, logdet_error, random_layer, randomize, roundtrip_error
from vflow.layers import (
    ActNorm,
    AffineCoupling,
    GaussianConditional,
    InversionError,
    MixAffine,
    MixLogisticCoupling,
    PointwiseLinear,
    Sigmoid,
    TupleFlip,
    gaussian_conditional_forward,
    layer_from_spec,
    make_mask,
    mix_affine_forward,
    soft_clamp,
    soft_clamp_inverse,
)
from vflow.numerics import Rng

seeds = st.integers(0, 2**32 - 1)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_gradients_match_finite_differences(kind, seed):
    rng = Rng(seed)
    assert gradient_error(random_layer(kind, rng), rng) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_inverse_round_trip(kind, seed):
    rng = Rng(seed)
    rt, ld = roundtrip_error(random_layer(kind, rng), rng)
    assert rt < 1e-8
    assert ld < 1e-8


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_logdet_matches_numeric_jacobian(kind, seed):
    rng = Rng(seed)
    assert logdet_error(random_layer(kind, rng), rng) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_spec_round_trip(kind):
    rng = Rng(1)
    layer = random_layer(kind, rng)
    clone = layer_from_spec(layer.spec())
    for (n1, a1), (n2, a2) in zip(layer.parameters(), clone.parameters()):
        assert n1 == n2 and a1.shape == a2.shape
        a2[...] = a1
    x = rng.normal((4, layer.dim))
    ctx = rng.normal((4, layer.context_dim)) if layer.context_dim else None
    assert np.array_equal(layer.forward(x, ctx)[0], clone.forward(x, ctx)[0])


def test_masks():
    assert make_mask("checker", 5).tolist() == [True, False, True, False, True]
    assert make_mask("channel", 5).tolist() == [True, True, True, False, False]
    assert make_mask("channel", 4, invert=True).tolist() == [False, False, True, True]
    with pytest.raises(ValueError):
        make_mask("stripes", 4)


def test_coupling_needs_both_parts():
    with pytest.raises(ValueError):
        AffineCoupling(3, np.array([True, True, True]))
    with pytest.raises(ValueError):
        AffineCoupling(1, "checker")


def test_zero_initialized_coupling_is_identity():
    layer = AffineCoupling(4, "checker", 8, 2, rng=Rng(0))
    x = Rng(1).normal((6, 4))
    y, ld = layer.forward(x)
    assert np.array_equal(y, x)
    assert np.all(ld == 0)


def test_wrong_shapes_rejected():
    layer = AffineCoupling(4, "checker", 8, 1, context_dim=2, rng=Rng(0))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((3, 5)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((3, 4)))


@given(st.floats(-50, 50))
def test_soft_clamp_bounds_and_inverse(raw):
    v, dv = soft_clamp(np.array([raw]), 5.0)
    assert abs(v[0]) <= 5.0
    assert 0.0 <= dv[0] <= 1.0
    if abs(raw) < 15:
        assert soft_clamp_inverse(v, 5.0)[0] == pytest.approx(raw, rel=1e-6, abs=1e-9)


def test_actnorm_data_init_standardizes():
    rng = Rng(0)
    x = 3.0 + 2.0 * rng.normal((500, 3))
    layer = ActNorm(3)
    layer.data_init(x)
    y, _ = layer.forward(x)
    assert np.allclose(y.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(y.std(axis=0), 1, atol=1e-12)
    assert layer.initialized


def test_pointwise_init_is_rotation():
    w = PointwiseLinear(5, Rng(3)).params["weight"]
    assert np.allclose(w @ w.T, np.eye(5), atol=1e-12)
    assert np.linalg.det(w) == pytest.approx(1.0)


def test_sigmoid_inverse_domain():
    layer = Sigmoid(2)
    with pytest.raises(InversionError):
        layer.inverse(np.array([[0.5, 1.0]]))


def test_mixlogistic_inverse_out_of_image():
    rng = Rng(4)
    layer = randomize(MixLogisticCoupling(2, "checker", 3, 4, 1, rng=rng), rng)
    with pytest.raises(InversionError):
        layer.inverse(np.array([[0.0, 1e6]]))


def test_tuple_flip_swaps_halves():
    layer = TupleFlip(4, mask=make_mask("channel", 4))
    y, ld = layer.forward(np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert y.tolist() == [[3.0, 4.0, 1.0, 2.0]]
    assert ld[0] == 0.0
    with pytest.raises(ValueError):
        TupleFlip(3, perm=[0, 0, 1])


def test_gaussian_conditional_wrapper():
    rng = Rng(2)
    layer = randomize(GaussianConditional(2, 3, 5, 1, rng=rng), rng)
    ctx, eps = rng.normal((4, 3)), rng.normal((4, 2))
    z, ld = gaussian_conditional_forward(layer, ctx, eps)
    assert z.shape == (4, 2) and ld.shape == (4,)


def test_mix_affine_keeps_z_and_mixes_x():
    rng = Rng(2)
    layer = randomize(MixAffine(2, 3, 5, 1, rng=rng), rng)
    x, z = rng.normal((4, 2)), rng.normal((4, 3))
    (z_out, x_out), ld = mix_affine_forward(layer, x, z)
    assert np.array_equal(z_out, z)
    assert x_out.shape == (4, 2) and ld.shape == (4,)
