import math

import numpy as np
import pytest

from src.config import Config
from src.errors import InputError, RefusalError
from src.tools.matroid.tool.matroid import UniformMatroid
from src.tools.mechanism.tool.mechanism import (
    REVENUE_COLUMNS,
    BMUMDInstance,
    PostedPriceMechanism,
    build_adversary_dp,
    copies_prophet_selection,
    parse_bmumd,
    revenue_stats,
    run_mechanism_copies,
    run_mechanism_m,
    two_by_two_uniform,
)
from src.tools.mechanism.tool.virtual import inverse_virtual, regularity_check, virtual_value
from src.tools.policy.tool.policy import PolicyKind
from src.tools.weights.tool.weights import Beta, Exponential, UniformInterval

UNIFORM = UniformInterval(a=0.0, b=1.0)
EXPONENTIAL = Exponential(rate=2.0)
BETA = Beta(a=2.0, b=2.0)


@pytest.fixture(scope="module")
def mechanism():
    return PostedPriceMechanism(two_by_two_uniform(), seed=0)


def test_virtual_values():
    assert virtual_value(UNIFORM, 0.75) == pytest.approx(0.5)
    assert virtual_value(EXPONENTIAL, 1.0) == pytest.approx(0.5)
    assert virtual_value(UniformInterval(a=1.0, b=3.0), 2.0) == pytest.approx(1.0)


def test_inverse_virtual_clamps():
    assert inverse_virtual(UNIFORM, 0.5) == pytest.approx(0.75)
    assert inverse_virtual(UNIFORM, -2.0) == 0.0
    assert inverse_virtual(UNIFORM, 1.5) == math.inf
    assert inverse_virtual(UNIFORM, math.inf) == math.inf
    assert inverse_virtual(EXPONENTIAL, 1.0) == pytest.approx(1.5)
    assert inverse_virtual(EXPONENTIAL, -1.0) == 0.0


def test_regularity():
    assert regularity_check(UNIFORM)
    assert regularity_check(EXPONENTIAL, grid_size=4)
    assert regularity_check(BETA)
    assert not regularity_check(Beta(a=0.5, b=0.5))


def test_beta_virtual_values_invert():
    assert virtual_value(BETA, 0.5) == pytest.approx(0.5 - 0.5 / 1.5)
    for t in (-1.0, 0.0, 0.3, 0.9):
        assert virtual_value(BETA, inverse_virtual(BETA, t)) == pytest.approx(t, abs=1e-8)
    assert inverse_virtual(BETA, -1e9) == 0.0
    assert inverse_virtual(BETA, 2.0) == math.inf


def test_irregular_values_are_refused():
    with pytest.raises(InputError):
        BMUMDInstance(((0,), (1,)), (BETA, Beta(a=0.5, b=0.5)), (UniformMatroid(1, 2),))


def test_beta_bidders_get_finite_prices():
    mechanism = PostedPriceMechanism(BMUMDInstance(((0,), (1,)), (BETA, BETA), (UniformMatroid(1, 2),)), seed=0)
    price = mechanism.price(frozenset(), 0)
    assert 0.0 < price < 1.0
    assert mechanism.price(frozenset({0}), 1) == math.inf
    assert run_mechanism_m(mechanism, [0.999, 0.5]).allocation == frozenset({0})


def test_two_by_two_instance():
    instance = two_by_two_uniform()
    assert instance.n_items == 4
    assert len(instance.matroids) == 1
    assert instance.bidder_of == {0: 0, 1: 0, 2: 1, 3: 1}


def test_unit_demand_constraint_is_added():
    instance = BMUMDInstance(((0, 1), (2, 3)), (UNIFORM,) * 4, (UniformMatroid(2, 4),))
    assert len(instance.matroids) == 2
    assert not any(M.is_independent({0, 1}) for M in instance.matroids[1:])
    mechanism = PostedPriceMechanism(instance, seed=0)
    assert mechanism.policy.kind == PolicyKind.INTERSECTION_BALANCED
    assert mechanism.price(frozenset({0}), 1) == math.inf
    assert mechanism.price(frozenset({0}), 2) < math.inf


def test_bad_instances_are_rejected():
    with pytest.raises(InputError):
        BMUMDInstance(((0, 1), (1, 2)), (UNIFORM,) * 3, (UniformMatroid(1, 3),))
    with pytest.raises(InputError):
        parse_bmumd({"bidders": [[0]], "distributions": [{"kind": "pointMass", "value": 1}], "matroids": [{"family": "uniform", "k": 1, "n": 1}]})
    instance = parse_bmumd(
        {
            "name": "one",
            "bidders": [[0], [1]],
            "distributions": [{"kind": "uniformInterval", "a": 0, "b": 1}, {"kind": "exponential", "rate": 1}],
            "matroids": [{"family": "uniform", "k": 1, "n": 2}],
        }
    )
    assert instance.name == "one"


def test_threshold_and_price_on_two_by_two(mechanism):
    # half of E[max of four clipped virtual values] = 49/160
    assert float(mechanism.policy.threshold(frozenset(), 0)) == pytest.approx(49 / 160, abs=0.02)
    assert mechanism.price(frozenset(), 0) == pytest.approx(209 / 320, abs=0.01)
    assert mechanism.price(frozenset({0}), 3) == math.inf


def test_mechanism_m_sells_first_affordable(mechanism):
    p = mechanism.price(frozenset(), 0)
    outcome = run_mechanism_m(mechanism, [0.9, 0.2, 0.1, 0.95])
    assert outcome.allocation == frozenset({0})
    assert outcome.payments == (p, 0.0)
    assert outcome.virtual_surplus == pytest.approx(0.8)
    nothing = run_mechanism_m(mechanism, [0.1, 0.1, 0.1, 0.1])
    assert nothing.allocation == frozenset()
    assert nothing.revenue == 0.0


def test_mechanism_m_picks_highest_utility(mechanism):
    outcome = run_mechanism_m(mechanism, [0.8, 0.99, 0.0, 0.0])
    assert outcome.allocation == frozenset({1})


def test_bids_outside_support_are_rejected(mechanism):
    with pytest.raises(InputError):
        run_mechanism_m(mechanism, [1.5, 0.0, 0.0, 0.0])
    with pytest.raises(InputError):
        run_mechanism_m(mechanism, [0.5, 0.5])


def test_adversary_table(mechanism):
    table = build_adversary_dp(mechanism)
    p = mechanism.price(frozenset(), 0)
    later = p * (1 - p) * (1 + p)
    assert table.value(frozenset(), 1) == pytest.approx(later)
    assert table.value(frozenset(), 0) == pytest.approx(later * (1 + p**2))
    assert table.ordering(frozenset(), 0) == (0, 1)
    assert table.value(frozenset({1}), 1) == 0.0


def test_adversary_table_cap(mechanism, monkeypatch):
    monkeypatch.setattr(Config, "DP_TABLE_CAP", 2)
    with pytest.raises(RefusalError):
        build_adversary_dp(mechanism)


UNIT_DEMAND = BMUMDInstance(((0, 1), (2, 3)), (UNIFORM,) * 4, (UniformMatroid(2, 4),), "unit-demand-2x2")


def test_copies_mechanism_matches_prophet_selection(mechanism):
    table = build_adversary_dp(mechanism)
    values = [0.2, 0.9, 0.95, 0.1]
    outcome = run_mechanism_copies(mechanism, values, table)
    assert outcome.allocation == frozenset({1})
    assert outcome.order[:2] == (0, 1)
    assert copies_prophet_selection(mechanism, values, table).accepted == outcome.allocation


@pytest.mark.parametrize("instance", [two_by_two_uniform(), UNIT_DEMAND], ids=lambda instance: instance.name)
def test_copies_allocation_is_the_prophet_selection_on_random_bids(instance):
    mechanism = PostedPriceMechanism(instance, seed=0)
    table = build_adversary_dp(mechanism)
    draws = mechanism.profile.sample_values(np.random.default_rng(11), 200)
    for values in draws:
        outcome = run_mechanism_copies(mechanism, values, table)
        assert copies_prophet_selection(mechanism, values, table).accepted == outcome.allocation
        assert all(M.is_independent(outcome.allocation) for M in instance.matroids)


def test_adversary_table_entries_match_copies_revenue(mechanism):
    table = build_adversary_dp(mechanism)
    n = len(mechanism.instance.bidders)
    draws = mechanism.profile.sample_values(np.random.default_rng(5), 20_000)
    entries = [(frozenset(A), i) for A, i in table.values if i < n]
    assert len(entries) >= 3
    for A, i in entries:
        revenue = np.array([run_mechanism_copies(mechanism, values, table, sold=A, start=i).revenue for values in draws])
        stderr = revenue.std(ddof=1) / math.sqrt(len(revenue))
        assert abs(revenue.mean() - table.value(A, i)) <= 3 * stderr + 1e-9, f"V({sorted(A)}, {i})"


def test_posted_prices_ignore_own_bids(mechanism):
    table = build_adversary_dp(mechanism)
    rng = np.random.default_rng(9)
    draws = mechanism.profile.sample_values(rng, 100)
    redraws = mechanism.profile.sample_values(rng, 100)
    for values, other in zip(draws, redraws):
        m, copies = run_mechanism_m(mechanism, values), run_mechanism_copies(mechanism, values, table)
        for i, J in enumerate(mechanism.instance.bidders):
            moved = values.copy()
            moved[list(J)] = other[list(J)]
            assert run_mechanism_m(mechanism, moved).prices[i] == m.prices[i]
            assert run_mechanism_copies(mechanism, moved, table).prices[i] == copies.prices[i]


def test_revenue_stats():
    report = revenue_stats(two_by_two_uniform(), trials=100_000, seed=0)
    assert list(report.row()) == REVENUE_COLUMNS
    assert report.Phi_optCopies >= report.Phi_copies
    assert report.R_M >= report.R_copies - 3 * math.hypot(report.R_M_stderr, report.R_copies_stderr)
    surplus_gap = math.hypot(report.Phi_copies_stderr, report.guarantee * report.Phi_optCopies_stderr)
    assert report.Phi_copies >= report.guarantee * report.Phi_optCopies - 3 * surplus_gap
    assert abs(report.R_copies - report.dp_value) <= 3 * report.R_copies_stderr


def test_revenue_stats_on_intersection():
    report = revenue_stats(UNIT_DEMAND, trials=5000, seed=0)
    assert report.guarantee == pytest.approx(1 / 6)
    surplus_gap = math.hypot(report.Phi_copies_stderr, report.Phi_optCopies_stderr / 6)
    assert report.Phi_copies >= report.Phi_optCopies / 6 - 3 * surplus_gap
    assert abs(report.R_copies - report.dp_value) <= 3 * report.R_copies_stderr + 1e-9


def test_revenue_stats_is_deterministic():
    report = revenue_stats(two_by_two_uniform(), trials=2000, seed=0)
    assert revenue_stats(two_by_two_uniform(), trials=2000, seed=0).row() == report.row()
    with pytest.raises(InputError):
        revenue_stats(two_by_two_uniform(), trials=0)


if __name__ == "__main__":
    pytest.main([__file__])
