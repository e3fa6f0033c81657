import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vflow.numerics import (
    LOG_2PI,
    QuadratureSpec,
    Rng,
    derive_seed,
    finite_diff_gradient,
    log_normal_pdf,
    logsumexp,
    numeric_jacobian,
    numeric_jacobian_logdet,
    quadrature_1d,
    simpson_weights,
)


def test_rng_is_deterministic_and_restorable():
    a, b = Rng(7), Rng(7)
    assert np.array_equal(a.normal((4, 3)), b.normal((4, 3)))
    state = a.get_state()
    first = a.normal(10)
    a.set_state(state)
    assert np.array_equal(first, a.normal(10))
    assert not np.array_equal(Rng(8).normal(5), Rng(7).normal(5))


def test_rng_state_survives_json():
    import json

    rng = Rng(3)
    rng.uniform(5)
    state = json.loads(json.dumps(rng.get_state()))
    other = Rng(0)
    other.set_state(state)
    assert np.array_equal(rng.normal(6), other.normal(6))


def test_derive_seed_separates_streams():
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(5, 1, 7) == derive_seed(5, 1, 7)
    assert 0 <= derive_seed(2**40, 3) < 2**63


def test_log_normal_pdf_origin():
    assert log_normal_pdf(np.zeros((1, 3)))[0] == pytest.approx(-1.5 * LOG_2PI, abs=1e-15)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_logsumexp_matches_shifted_sum(values):
    v = np.array(values)
    m = v.max()
    expected = m + math.log(sum(math.exp(x - m) for x in values))
    assert logsumexp(v) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_logsumexp_rejects_empty():
    with pytest.raises(ValueError):
        logsumexp(np.array([]))


def test_finite_diff_on_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    g = finite_diff_gradient(lambda v: 0.5 * v @ a @ v, x)
    assert np.allclose(g, a @ x, atol=1e-9)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_diff_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        finite_diff_gradient(lambda v: np.log(v[0]), np.array([0.0]))


def test_numeric_jacobian_linear_map():
    w = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 3.0], [1.0, 0.0, 1.0]])
    jac = numeric_jacobian(lambda v: w @ v, np.ones(3))
    assert np.allclose(jac, w, atol=1e-9)
    assert numeric_jacobian_logdet(lambda v: w @ v, np.ones(3)) == pytest.approx(math.log(7.0), abs=1e-9)


def test_numeric_jacobian_logdet_singular():
    with pytest.raises(np.linalg.LinAlgError):
        numeric_jacobian_logdet(lambda v: np.array([v[0], v[0]]), np.ones(2))


def test_quadrature_gaussian_mass():
    spec = QuadratureSpec(-8.0, 8.0, 4001)
    assert quadrature_1d(lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi), spec) == pytest.approx(1.0, abs=1e-12)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(1.0, 0.0, 11)
    with pytest.raises(ValueError):
        QuadratureSpec(0.0, 1.0, 2)


@settings(max_examples=30)
@given(st.integers(3, 201), st.floats(-5, 0), st.floats(0.1, 5))
def test_simpson_weights_integrate_cubics_exactly(nodes, lo, width):
    xs, w = simpson_weights(lo, lo + width, nodes)
    hi = lo + width
    exact = (hi**4 - lo**4) / 4 + (hi**2 - lo**2) / 2
    assert np.sum(w * (xs**3 + xs)) == pytest.approx(exact, rel=1e-10, abs=1e-10)
