from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from src.errors import InputError, RefusalError
from src.tools.weights.tool.weights import (
    Beta,
    Estimator,
    Exponential,
    FiniteDiscrete,
    PointMass,
    UniformInterval,
    WeightProfile,
    enumerate_outcomes,
    expect_max,
    parse_shorthand,
    sample,
    stream,
)


def test_finite_discrete_merges_and_sorts():
    d = FiniteDiscrete(values=[2, 0, 2], probs=[0.25, 0.5, 0.25])
    assert d.values == [0.0, 2.0]
    assert d.probs == [0.5, 0.5]
    assert d.cdf(1) == 0.5


def test_invalid_distributions_are_rejected():
    with pytest.raises(ValidationError):
        FiniteDiscrete(values=[1, 2], probs=[0.5, 0.6])
    with pytest.raises(ValidationError):
        FiniteDiscrete(values=[-1], probs=[1.0])
    with pytest.raises(ValidationError):
        UniformInterval(a=1, b=1)
    with pytest.raises(ValidationError):
        Exponential(rate=0)


def test_shorthand():
    assert parse_shorthand("point:3") == PointMass(value=3)
    bernoulli = parse_shorthand("bernoulli:10,0.1")
    assert bernoulli.values == [0.0, 10.0]
    assert isinstance(parse_shorthand("uniform:0,1"), UniformInterval)
    assert parse_shorthand("exp:2").mean() == 0.5
    assert parse_shorthand("beta:2,2,4") == Beta(a=2, b=2, scale=4)
    assert parse_shorthand("beta:2,2").mean() == 0.5
    with pytest.raises(InputError):
        parse_shorthand("pareto:1")


def test_sampling_is_reproducible_per_substream():
    profile = WeightProfile.of("uniform:0,1", "exp:1", "bernoulli:4,0.5")
    assert sample(profile, stream(7, 1)) == sample(profile, stream(7, 1))
    assert sample(profile, stream(7, 1)) != sample(profile, stream(7, 2))
    assert all(v >= 0 for v in sample(profile, stream(3)))


def test_enumerate_outcomes():
    profile = WeightProfile.of("bernoulli:2,0.5", "point:1")
    table = enumerate_outcomes(profile)
    assert len(table) == 2
    assert sum(table.probs) == 1
    assert set(table.rows) == {(0, 1), (2, 1)}
    assert table.expectation(lambda row: max(row)) == Fraction(3, 2)


def test_enumerate_outcomes_refusals():
    with pytest.raises(RefusalError):
        enumerate_outcomes(WeightProfile.of("uniform:0,1"))
    with pytest.raises(RefusalError):
        enumerate_outcomes(WeightProfile.of(*["bernoulli:1,0.5"] * 5), limit=16)


def test_expect_max_point_masses():
    assert expect_max(WeightProfile.point_masses([3, 2, 1])).value == 3


def test_expect_max_rank_one_tight_instance():
    n = 10
    profile = WeightProfile.of("point:1", f"bernoulli:{n},{1 / n}")
    estimate = expect_max(profile)
    assert estimate.exact
    assert estimate.value == Fraction(19, 10)


def test_expect_max_monte_carlo_agrees_with_exact():
    profile = WeightProfile.of("bernoulli:2,0.5", "bernoulli:3,0.25")
    exact = expect_max(profile).value
    estimate = expect_max(profile, Estimator.monte_carlo(trials=20_000, seed=11))
    assert not estimate.exact
    assert abs(estimate.value - float(exact)) <= 5 * estimate.stderr + 1e-9


def test_expect_max_uniform_pair():
    # E[max of two U(0,1)] = 2/3
    estimate = expect_max(WeightProfile.of("uniform:0,1", "uniform:0,1"), Estimator.monte_carlo(trials=40_000, seed=5))
    assert estimate.value == pytest.approx(2 / 3, abs=5 * estimate.stderr)


def test_exact_estimator_refuses_continuous_weights():
    with pytest.raises(RefusalError):
        expect_max(WeightProfile.of("exp:1"))


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=5))
def test_point_masses_enumerate_to_one_outcome(values):
    table = enumerate_outcomes(WeightProfile.point_masses(values))
    assert len(table) == 1
    assert table.rows[0] == tuple(values)
    assert np.isclose(float(table.probs[0]), 1.0)


if __name__ == "__main__":
    pytest.main([__file__])
