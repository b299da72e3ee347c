import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsmf.errors import LambdaOutOfRange, NonProbabilityMeasure, ValidationError
from qsmf.measure import SignedAtomicMeasure as M
from qsmf.measure import mean_degree
from qsmf.model import (ModelParams, ResponseSpec, fitness, fitness_deviation, mean_fitness, reproduction_density,
                        response)


def test_fitness_examples():
    p = ModelParams(s=0.2, b=1.0, c=1.0)
    assert fitness(0.37, 0.37, p) == pytest.approx(1.0, abs=1e-15)
    assert fitness(0.0, 0.5, ModelParams(s=0.2, b=2.0, c=1.0)) == pytest.approx(1.2)
    assert fitness(1.0, 0.0, p) == pytest.approx(0.8)


def test_mean_fitness_examples():
    nu = M([0.1, 0.7], [0.4, 0.6])
    assert mean_fitness(nu, ModelParams(s=0.3, b=0.5, c=0.5)) == 1.0
    assert mean_fitness(M([0.0, 1.0], [0.5, 0.5]), ModelParams(s=0.2, b=2.0, c=1.0)) == pytest.approx(1.1)
    assert mean_fitness(M.delta(0.0), ModelParams(s=0.9, b=3.0, c=1.0)) == 1.0
    with pytest.raises(NonProbabilityMeasure):
        mean_fitness(M([0.1], [0.5]), ModelParams())


def test_response_examples():
    assert response(0.3, ResponseSpec.identity()) == 0.3
    assert response(0.5, ResponseSpec.hill(2.0, 0.5)) == pytest.approx(0.5)
    assert response(0.9, ResponseSpec.linear(2.0, 0.5)) == 1.0
    assert response(0.1, ResponseSpec.linear(-1.0, 0.05)) == 0.0
    assert response(0.9, ResponseSpec.constant(0.25)) == 0.25
    assert ResponseSpec.hill(2.0, 0.4)(0.4) == pytest.approx(0.5)


@pytest.mark.parametrize("kwargs", [
    dict(s=2.0, b=1.0, c=1.0),
    dict(s=0.0),
    dict(b=-1.0),
    dict(lam=1.5),
    dict(n=1),
    dict(n=2.5),
])
def test_params_validation(kwargs):
    with pytest.raises(ValidationError):
        ModelParams(**kwargs)


def test_selection_bound_message():
    with pytest.raises(ValidationError, match="0<s<1/c"):
        ModelParams(s=2.0, c=1.0)


@pytest.mark.parametrize("kwargs", [
    dict(kind="cubic"),
    dict(kind="constant", level=1.5),
    dict(kind="hill", exponent=0.0),
    dict(kind="hill", threshold=1.0),
])
def test_response_validation(kwargs):
    with pytest.raises(ValidationError):
        ResponseSpec(**kwargs)


def test_lambda_above_half_allowed_without_reproduction_density():
    params = ModelParams(lam=0.8)
    with pytest.raises(LambdaOutOfRange):
        reproduction_density(M.delta(0.3), params, ResponseSpec.identity())


def test_reproduction_density_lambda_zero_is_reweighting():
    nu = M([0.2, 0.6], [0.5, 0.5])
    params = ModelParams(s=0.2, lam=0.0)
    phi = reproduction_density(nu, params, ResponseSpec.constant(0.9))
    w = fitness(nu.positions, 0.4, params) * nu.masses
    assert phi.positions.tolist() == [0.2, 0.6]
    np.testing.assert_allclose(phi.masses, w / w.sum(), rtol=0, atol=1e-15)


def test_reproduction_density_lambda_half_is_delta():
    nu = M([0.2, 0.6], [0.5, 0.5])
    spec = ResponseSpec.hill(2.0, 0.4)
    phi = reproduction_density(nu, ModelParams(lam=0.5), spec)
    assert phi == M.delta(response(0.4, spec))


def test_reproduction_density_fixed_point():
    phi = reproduction_density(M.delta(0.35), ModelParams(lam=0.3), ResponseSpec.identity())
    assert phi.positions.tolist() == [0.35]
    assert phi.masses[0] == pytest.approx(1.0, abs=1e-15)


params_st = st.builds(
    lambda s_frac, b, c, lam: ModelParams(s=s_frac / c, b=b, c=c, lam=lam),
    st.floats(0.01, 0.99), st.floats(0.0, 3.0), st.floats(0.1, 3.0), st.floats(0.0, 0.5),
)
spec_st = st.one_of(
    st.just(ResponseSpec.identity()),
    st.floats(0, 1).map(ResponseSpec.constant),
    st.builds(ResponseSpec.linear, st.floats(-3, 3), st.floats(-1, 2)),
    st.builds(ResponseSpec.hill, st.floats(0.5, 6), st.floats(0.05, 0.95)),
)


@st.composite
def probabilities(draw):
    k = draw(st.integers(1, 10))
    pos = draw(st.lists(st.floats(0, 1), min_size=k, max_size=k))
    w = np.asarray(draw(st.lists(st.floats(1e-3, 1), min_size=k, max_size=k)))
    return M(pos, w / w.sum())


@settings(max_examples=300, deadline=None)
@given(probabilities(), params_st, spec_st)
def test_reproduction_density_is_probability(nu, params, spec):
    phi = reproduction_density(nu, params, spec)
    assert phi.total == pytest.approx(1.0, abs=1e-12)
    assert phi.masses.min() >= 0.0
    assert np.all((phi.positions >= 0) & (phi.positions <= 1))


@settings(max_examples=300, deadline=None)
@given(probabilities(), params_st)
def test_fitness_deviation_identity(nu, params):
    pbar = mean_degree(nu)
    lhs = fitness(nu.positions, pbar, params) - mean_fitness(nu, params)
    np.testing.assert_allclose(lhs, fitness_deviation(nu.positions, pbar, params), rtol=0, atol=1e-12)
    np.testing.assert_allclose(lhs, -params.s * params.c * (nu.positions - pbar), rtol=0, atol=1e-12)
