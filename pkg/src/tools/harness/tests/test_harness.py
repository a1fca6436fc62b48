import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from pydantic import ValidationError

from src.errors import ConfigError, InputError, RefusalError
from src.tools.harness.tool.adversary import Adversary, AdversaryKind, AdversarySpec, GameTree, worst_case_adaptive_value
from src.tools.harness.tool.instances import (
    Instance,
    builtin_corpus,
    compare_row_family,
    dump_instance,
    gen_intersection_tight,
    gen_random_partition_pair,
    gen_random_rank_one,
    gen_rank_one_tight,
    parse_instance,
)
from src.tools.harness.tool.properties import property_suite
from src.tools.harness.tool.simulate import prophet_value, run_trial, simulate
from src.tools.matroid.tool.matroid import PartitionMatroid
from src.tools.policy.tool.policy import PolicyKind, PolicySpec, ThresholdPolicy, run_policy
from src.tools.remainder.tool.remainder import feasible_family
from src.tools.weights.tool.weights import Estimator, WeightProfile

CORPUS = {instance.name: instance for instance in builtin_corpus()}


def policy_for(instance, kind=None, **spec):
    if kind is None:
        kind = PolicyKind.MATROID_BALANCED if instance.p == 1 else PolicyKind.INTERSECTION_BALANCED
    return ThresholdPolicy(PolicySpec(kind=kind, **spec), instance.matroids, instance.profile)


REPLAY_POLICIES = {name: policy_for(instance) for name, instance in CORPUS.items()}


@pytest.mark.parametrize("name", sorted(CORPUS))
@settings(max_examples=250, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(data=st.data())
def test_perturbed_replays_keep_each_decision(name, data):
    instance, policy = CORPUS[name], REPLAY_POLICIES[name]
    order = data.draw(st.permutations(range(instance.n)))
    weights = data.draw(st.lists(st.integers(0, 5), min_size=instance.n, max_size=instance.n))
    sequence = [(x, Fraction(weights[x])) for x in order]
    trace = run_policy(policy, sequence)
    for i, step in enumerate(trace.steps):
        delta = data.draw(st.fractions(min_value=Fraction(1, 100), max_value=5))
        moved = step.weight + delta if step.accepted else step.weight - delta
        replay = run_policy(policy, sequence[:i] + [(step.element, moved)] + sequence[i + 1 :])
        assert replay.steps[i].threshold == step.threshold
        assert replay.steps[i].accepted == step.accepted


def test_rank_one_tight_instance():
    instance = gen_rank_one_tight(10)
    assert instance.n == 2
    assert instance.matroids[0].ground_set.label(1) == "elem2"
    assert prophet_value(instance).value == Fraction(19, 10)
    with pytest.raises(InputError):
        gen_rank_one_tight(1)


def test_intersection_tight_instance():
    instance = gen_intersection_tight(2)
    assert (instance.n, instance.p) == (8, 3)
    assert instance.matroids[0].ground_set.label(5) == "(2,1)"
    # four rows of two fair coins: 1 - (1/4)**4 plus 1 - (3/4)**4
    assert prophet_value(instance).value == Fraction(215, 128)
    assert gen_intersection_tight(2, rows=2).p == 2
    assert gen_intersection_tight(3).p == 7
    with pytest.raises(InputError):
        gen_intersection_tight(4)
    with pytest.raises(InputError):
        gen_intersection_tight(5)


@pytest.mark.parametrize("q, rows", [(2, None), (2, 2), (2, 3), (3, 3), (3, None)])
def test_intersection_family_is_the_row_family(q, rows):
    instance = gen_intersection_tight(q, rows)
    comparison = compare_row_family(instance, q)
    assert comparison.contains_rows and comparison.equal
    assert comparison.witness is None
    assert len(feasible_family(instance.matroids)) == (instance.n // q) * (2**q - 1) + 1


def test_row_family_comparison_reports_a_witness():
    columns = PartitionMatroid([[0, 2], [1, 3]], [1, 1])
    instance = Instance((columns,), WeightProfile.point_masses([1, 1, 1, 1]), "columns-only")
    comparison = compare_row_family(instance, 2)
    assert comparison.contains_rows and not comparison.equal
    assert comparison.witness == frozenset({0, 3})


def test_instance_file_round_trip():
    instance = CORPUS["partition-5"]
    again = parse_instance(dump_instance(instance))
    assert again.name == instance.name
    assert again.profile == instance.profile
    assert again.matroids[0].blocks == instance.matroids[0].blocks
    with pytest.raises(InputError):
        parse_instance({"matroids": [{"family": "uniform", "k": 1, "n": 2}], "profile": {"distributions": []}})


def test_profile_size_must_match_ground_set():
    with pytest.raises(InputError):
        parse_instance({"matroids": [{"family": "uniform", "k": 1, "n": 3}], "profile": WeightProfile.point_masses([1, 2]).model_dump()})


def test_adversary_spec_validation():
    with pytest.raises(ValidationError):
        AdversarySpec(kind=AdversaryKind.WEIGHT_ADAPTIVE, permutation=[0, 1])
    policy = policy_for(CORPUS["uniform-2-3-points"])
    with pytest.raises(ConfigError):
        Adversary(AdversarySpec(permutation=[0, 0, 1]), policy)
    with pytest.raises(ConfigError):
        Adversary(AdversarySpec(kind=AdversaryKind.UNIFORM_RANDOM_ORDER), policy).begin()


def test_worst_case_refuses_continuous_profile():
    instance = gen_rank_one_tight(2)
    continuous = WeightProfile.of("uniform:0,1", "uniform:0,1")
    policy = ThresholdPolicy(PolicySpec(kind=PolicyKind.MATROID_BALANCED), instance.matroids, continuous)
    with pytest.raises(RefusalError):
        Adversary(AdversarySpec(kind=AdversaryKind.BRUTE_FORCE_WORST_CASE), policy)
    with pytest.raises(RefusalError):
        GameTree(policy)


def test_fixed_order_trial():
    instance = CORPUS["uniform-2-3-points"]
    policy = policy_for(instance)
    trace = run_trial(policy, Adversary(AdversarySpec(permutation=[2, 1, 0]), policy), (3, 2, 1))
    assert trace.order == [2, 1, 0]
    # element 0 arrives after the basis {1, 2} is full
    assert trace.accepted == frozenset({1, 2})
    assert trace.payoff == 3


def test_worst_case_value_on_point_masses():
    instance = CORPUS["uniform-2-3-points"]
    # revealing the lightest element first costs the gambler the heaviest one
    assert worst_case_adaptive_value(instance, policy_for(instance)) == 3
    with pytest.raises(InputError):
        worst_case_adaptive_value(CORPUS["k3"], policy_for(instance))


def test_worst_case_is_no_better_than_any_order():
    instance = CORPUS["k3"]
    policy = policy_for(instance)
    ground = frozenset(instance.matroids[0].ground)
    worst = worst_case_adaptive_value(instance, policy)
    for kind in AdversaryKind:
        value = Adversary(AdversarySpec(kind=kind), policy).game_tree().value(ground)
        assert worst <= value
    assert worst >= Fraction(1, 2) * prophet_value(instance).value


def test_exact_simulation_of_rank_one_tight():
    instance = gen_rank_one_tight(10)
    policy = policy_for(instance, PolicyKind.RANK_ONE_HALF_MAX)
    report = simulate(instance, policy, AdversarySpec(), mode="exact")
    assert report.gambler_exact == 1
    assert report.prophet_exact == Fraction(19, 10)
    assert report.prophet_mean == pytest.approx(1.9)
    assert report.gambler_mean == 1.0
    assert report.trials == 2
    assert report.meets_guarantee()


def test_exact_simulation_of_intersection_tight():
    instance = gen_intersection_tight(2)
    report = simulate(instance, policy_for(instance), AdversarySpec(), mode="exact")
    assert report.gambler_mean < 2
    assert report.prophet_exact == Fraction(215, 128)
    assert report.gambler_exact <= report.prophet_exact
    assert report.meets_guarantee()


def test_gambler_stays_below_two_on_three_by_three_instance():
    instance = gen_intersection_tight(3)
    policy = policy_for(instance, estimator=Estimator.monte_carlo(trials=2000, seed=0))
    report = simulate(instance, policy, AdversarySpec(), trials=300, seed=3)
    assert report.gambler_mean + 2.33 * report.gambler_stderr < 2
    assert report.prophet_mean >= 3 * (1 - math.exp(-1)) - 3 * report.prophet_stderr


@pytest.mark.parametrize("kind", [AdversaryKind.FIXED_ORDER, AdversaryKind.BRUTE_FORCE_WORST_CASE])
def test_random_rank_one_instances_get_half_the_prophet(kind):
    for seed in range(50):
        instance = gen_random_rank_one(np.random.default_rng(seed))
        report = simulate(instance, policy_for(instance, PolicyKind.RANK_ONE_HALF_MAX), AdversarySpec(kind=kind), mode="exact")
        assert report.gambler_exact >= Fraction(1, 2) * report.prophet_exact, instance.name


@pytest.mark.parametrize("kind", [AdversaryKind.FIXED_ORDER, AdversaryKind.BRUTE_FORCE_WORST_CASE])
def test_random_partition_pairs_meet_the_intersection_guarantee(kind):
    for seed in range(10):
        instance = gen_random_partition_pair(np.random.default_rng(seed))
        report = simulate(instance, policy_for(instance), AdversarySpec(kind=kind), mode="exact")
        assert report.guarantee_exact == Fraction(1, 6)
        assert report.meets_guarantee(), instance.name


def test_monte_carlo_simulation_is_reproducible():
    instance = gen_rank_one_tight(5)
    policy = policy_for(instance)
    first = simulate(instance, policy, AdversarySpec(), trials=4000, seed=9)
    second = simulate(instance, policy, AdversarySpec(), trials=4000, seed=9, workers=2)
    assert first.row() == second.row()
    assert first.gambler_mean == 1.0
    assert first.ratio >= 0.5
    assert first.prophet_mean == pytest.approx(1.8, abs=5 * first.prophet_stderr)
    assert first.meets_guarantee(sigma=3.0)


def test_simulation_keeps_traces_on_request():
    instance = CORPUS["uniform-2-3-points"]
    report = simulate(instance, policy_for(instance), AdversarySpec(), trials=3, seed=1, keep_traces=True)
    assert len(report.traces) == 3
    assert report.traces[0].count("\n") == 3
    with pytest.raises(InputError):
        simulate(instance, policy_for(instance), AdversarySpec(), trials=0)


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_property_suite_passes_on_builtin_corpus(name):
    instance = CORPUS[name]
    report = property_suite(instance, policy_for(instance))
    assert report.passed, [f"{r.name}: {r.witness}" for r in report.failures()]


def test_property_suite_catches_scaled_thresholds():
    instance = CORPUS["uniform-2-3-points"]
    report = property_suite(instance, policy_for(instance, threshold_scale=0.5))
    failed = {r.name for r in report.failures()}
    assert {"policy_thresholds", "telescoping", "balanced_alpha"} <= failed
    assert all(r.witness for r in report.failures())


def test_property_suite_needs_exact_thresholds():
    instance = CORPUS["k3"]
    with pytest.raises(ConfigError):
        property_suite(instance, policy_for(instance, estimator=Estimator.monte_carlo(trials=10, seed=0)))


if __name__ == "__main__":
    pytest.main([__file__])
