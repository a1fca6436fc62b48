from fractions import Fraction
from itertools import combinations, permutations
from typing import Callable, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field

from src.config import Config
from src.errors import ConfigError
from src.logger import logger
from src.tools.harness.tool.adversary import Adversary, AdversaryKind, AdversarySpec, GameTree
from src.tools.harness.tool.instances import Instance
from src.tools.harness.tool.simulate import prophet_value, run_trial
from src.tools.matroid.tool.matroid import all_subsets, as_explicit, axiom_check, exchange_bijection, set_weight
from src.tools.policy.tool.policy import (
    INFINITY,
    PolicyKind,
    SelectionTrace,
    ThresholdPolicy,
    check_balanced,
    reciprocal,
    run_policy,
    threshold_intersection,
    threshold_single,
    threshold_single_via_cost,
)
from src.tools.remainder.tool.remainder import RemainderEstimator, feasible_family, remainder
from src.tools.weights.tool.weights import Estimator, weight_sample


class PropertyResult(BaseModel):
    name: str
    passed: bool
    checked: int = Field(..., description="Number of individual cases evaluated.")
    witness: Optional[str] = Field(None, description="First failing case.")


class PropertyReport(BaseModel):
    instance: str
    policy: str
    results: List[PropertyResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[PropertyResult]:
        return [r for r in self.results if not r.passed]


class _Check:
    def __init__(self, name: str):
        self.name = name
        self.checked = 0
        self.witness: Optional[str] = None

    def record(self, ok: bool, witness: Union[str, Callable[[], str]]) -> None:
        self.checked += 1
        if not ok and self.witness is None:
            self.witness = witness() if callable(witness) else witness

    def result(self) -> PropertyResult:
        return PropertyResult(name=self.name, passed=self.witness is None, checked=self.checked, witness=self.witness)


def _fmt(S) -> str:
    return "{" + ",".join(map(str, sorted(S))) + "}"


class _Suite:
    """Shared state for one property run: the exact outcome table, feasible family and traces."""

    def __init__(self, instance: Instance, policy: ThresholdPolicy, depth: int):
        self.instance = instance
        self.policy = policy
        self.depth = depth
        self.matroids = instance.matroids
        self.exact = Estimator(mode="exact", rational=True)
        self.oracle = RemainderEstimator(self.matroids, instance.profile, self.exact)
        self.draws = weight_sample(instance.profile, self.exact)
        self.family = [frozenset(S) for S in feasible_family(self.matroids)]
        self.family_set = set(self.family)
        self.ground = frozenset(self.matroids[0].ground)
        self.traces = self._collect_traces()

    def feasible(self, S) -> bool:
        return frozenset(S) in self.family_set

    def small_feasible(self) -> List[frozenset]:
        return [S for S in self.family if len(S) <= self.depth]

    def _adversaries(self) -> List[AdversarySpec]:
        ground = sorted(self.ground)
        specs = [
            AdversarySpec(kind=AdversaryKind.FIXED_ORDER),
            AdversarySpec(kind=AdversaryKind.FIXED_ORDER, permutation=ground[::-1]),
            AdversarySpec(kind=AdversaryKind.WEIGHT_ADAPTIVE),
        ]
        if self.instance.profile.outcome_count() <= Config.ADVERSARY_OUTCOME_LIMIT:
            specs.append(AdversarySpec(kind=AdversaryKind.BRUTE_FORCE_WORST_CASE))
        return specs

    def _collect_traces(self) -> Dict[str, List[Tuple[SelectionTrace, Fraction, tuple]]]:
        traces = {}
        for spec in self._adversaries():
            adversary = Adversary(spec, self.policy)
            traces[spec.name] = [(run_trial(self.policy, adversary, row), prob, row) for row, prob in zip(self.draws.rows, self.draws.probs)]
        return traces

    def distinct_traces(self) -> List[Tuple[SelectionTrace, tuple]]:
        seen, unique = set(), []
        for runs in self.traces.values():
            for trace, _, row in runs:
                key = tuple((s.element, s.accepted, s.threshold) for s in trace.steps)
                if key not in seen:
                    seen.add(key)
                    unique.append((trace, row))
        return unique

    def remainder_bound(self, A) -> Fraction:
        """Right-hand side of the rejected-set inequality for accepted set A."""
        inv = reciprocal(self.policy.alpha)
        rem = self.oracle.expected_remainder(A).value
        return (1 - inv) * rem if self.policy.p == 1 else inv * rem

    def excess_over_remainder(self, trace: SelectionTrace) -> Fraction:
        """E over a fresh draw w' of the sum over R(A) of (w'(x) - T_x)^+."""
        A = trace.accepted
        thresholds = trace.thresholds
        values = []
        for R, row in zip(self.oracle.remainder_sets(A), self.oracle.prepared(A).draws.rows):
            values.append(sum((max(row[x] - thresholds[x], 0) for x in R if thresholds[x] != INFINITY), 0))
        return self.oracle.prepared(A).draws.expectation(values).value


##############
# PROPERTIES #
##############
def _matroid_axioms(suite: _Suite) -> PropertyResult:
    check = _Check("matroid_axioms")
    for j, M in enumerate(suite.matroids):
        if len(M.ground) <= Config.EXPLICIT_AXIOM_LIMIT:
            check.record(axiom_check(as_explicit(M)), f"matroid {j} violates the independence axioms")
        for S in all_subsets(M.ground):
            if len(S) > suite.depth:
                continue
            rest = sorted(M.ground - S)
            for x, y in combinations(rest, 2):
                lhs = M.rank(S | {x}) + M.rank(S | {y})
                rhs = M.rank(S | {x, y}) + M.rank(S)
                check.record(lhs >= rhs, lambda: f"rank of matroid {j} not submodular at S={_fmt(S)}, x={x}, y={y}")
    return check.result()


def _exchange(suite: _Suite) -> PropertyResult:
    check = _Check("exchange_bijection")
    if suite.policy.p != 1:
        return check.result()
    M = suite.matroids[0]
    for row in suite.draws.rows:
        R = remainder(M, row, frozenset()).R
        for V in M.independent_sets(len(R)):
            if len(V) != len(R):
                continue
            phi = exchange_bijection(M, V, R)
            ok = phi.holds(M, V, R) and all(row[r] >= row[v] for v, r in phi.pairs.items() if v not in R)
            check.record(ok, lambda: f"exchange bijection fails for V={_fmt(V)}, R={_fmt(R)}")
    return check.result()


def _threshold_identity(suite: _Suite) -> PropertyResult:
    check = _Check("threshold_identity")
    if suite.policy.p != 1:
        return check.result()
    M = suite.matroids[0]
    for A in suite.small_feasible():
        for x in sorted(suite.ground - A):
            via_r = threshold_single(M, suite.instance.profile, A, x, suite.exact)
            via_c = threshold_single_via_cost(M, suite.instance.profile, A, x, suite.exact)
            check.record(via_r == via_c, lambda: f"A={_fmt(A)}, x={x}: remainder form {via_r} != cost form {via_c}")
    return check.result()


def _policy_thresholds(suite: _Suite) -> PropertyResult:
    check = _Check("policy_thresholds")
    policy = suite.policy
    if not policy.balanced:
        return check.result()
    for A in suite.small_feasible():
        for x in sorted(suite.ground - A):
            if policy.p == 1:
                expected = threshold_single(suite.matroids[0], suite.instance.profile, A, x, suite.exact)
            else:
                expected = threshold_intersection(suite.matroids, suite.instance.profile, A, x, policy.alpha, suite.exact)
            got = policy.threshold(A, x)
            check.record(got == expected, lambda: f"A={_fmt(A)}, x={x}: policy threshold {got} != {expected}")
    return check.result()


def _remainder_submodularity(suite: _Suite) -> PropertyResult:
    check = _Check("remainder_submodularity")
    for j in range(len(suite.matroids)):
        for S in suite.small_feasible():
            rest = sorted(suite.ground - S)
            for x, y in combinations(rest, 2):
                if not suite.feasible(S | {x, y}):
                    continue
                f = [suite.oracle.remainder_values(T, j) for T in (S, S | {x}, S | {y}, S | {x, y})]
                for k, (fs, fx, fy, fxy) in enumerate(zip(*f)):
                    check.record(fs - fx <= fy - fxy, lambda: f"matroid {j}, outcome {k}: S={_fmt(S)}, x={x}, y={y}")
    return check.result()


def _rejected_set_bound(suite: _Suite) -> PropertyResult:
    check = _Check("rejected_set_bound")
    for j in range(len(suite.matroids)):
        for J in suite.small_feasible():
            for A in all_subsets(J):
                V = J - A
                if not V:
                    continue
                bound = suite.oracle.remainder_values(A, j)
                for order in permutations(sorted(J)):
                    before, drops = set(), []
                    for x in order:
                        if x in V:
                            prefix = frozenset(before)
                            a, b = suite.oracle.remainder_values(prefix, j), suite.oracle.remainder_values(prefix | {x}, j)
                            drops.append([u - v for u, v in zip(a, b)])
                        else:
                            before.add(x)
                    for k, total in enumerate(map(sum, zip(*drops))):
                        check.record(total <= bound[k], lambda: f"matroid {j}, outcome {k}: A={_fmt(A)}, V={_fmt(V)}, order={order}")
    return check.result()


def _prefix_feasibility(suite: _Suite) -> PropertyResult:
    check = _Check("prefix_feasibility")
    for trace, _ in suite.distinct_traces():
        accepted = []
        for step in trace.steps:
            if step.accepted:
                accepted.append(step.element)
                check.record(suite.feasible(accepted), lambda: f"accepted prefix {accepted} is infeasible")
            check.record(step.accepted == (step.threshold != INFINITY and step.weight >= step.threshold), f"decision at {step.element}")
    return check.result()


def _monotonicity(suite: _Suite) -> PropertyResult:
    check = _Check("monotonicity")
    for trace, _ in suite.distinct_traces():
        sequence = [(s.element, s.weight) for s in trace.steps]
        for i, step in enumerate(trace.steps):
            # accepted weights go up, rejected ones go down
            moved = step.weight + 1 if step.accepted else step.weight - 1
            replay = run_policy(suite.policy, sequence[:i] + [(step.element, moved)] + sequence[i + 1 :])
            check.record(replay.steps[i].accepted == step.accepted, lambda: f"moving w({step.element}) to {moved} flipped its decision in order {trace.order}")
    return check.result()


def _telescoping(suite: _Suite) -> PropertyResult:
    check = _Check("telescoping")
    policy = suite.policy
    if not policy.balanced:
        return check.result()
    inv = reciprocal(policy.alpha)
    for trace, _ in suite.distinct_traces():
        A = trace.accepted
        total = sum((trace.thresholds[x] for x in A), 0)
        target = inv * suite.oracle.expected_cost(A).value
        check.record(total == target, lambda: f"order {trace.order}: sum of accepted thresholds {total} != {target}")
    return check.result()


def _balanced(suite: _Suite) -> Tuple[PropertyResult, PropertyResult]:
    alpha, beta = _Check("balanced_alpha"), _Check("balanced_beta")
    policy = suite.policy
    if not policy.balanced:
        return alpha.result(), beta.result()
    for trace, _ in suite.distinct_traces():
        A = trace.accepted
        for S in suite.family:
            if not A <= S:
                continue
            V = S - A
            verdict = check_balanced(policy, trace, V)
            alpha.record(verdict.eq_alpha_holds, lambda: f"order {trace.order}, A={_fmt(A)}: slack {verdict.alpha_slack}")
            beta.record(verdict.eq_beta_holds, lambda: f"order {trace.order}, A={_fmt(A)}, V={_fmt(V)}: slack {verdict.beta_slack}")
    return alpha.result(), beta.result()


def _guarantee_steps(suite: _Suite) -> PropertyResult:
    check = _Check("guarantee_steps")
    policy = suite.policy
    if not policy.balanced:
        return check.result()
    inv = reciprocal(policy.alpha)
    excess: Dict[tuple, Fraction] = {}
    for trace, _ in suite.distinct_traces():
        A = trace.accepted
        key = tuple((s.element, s.accepted) for s in trace.steps)
        excess[key] = suite.excess_over_remainder(trace)
        step1 = sum((trace.thresholds[x] for x in A), 0) - inv * suite.oracle.expected_cost(A).value
        rem = suite.oracle.prepared(A).draws.expectation([set_weight(R, row) for R, row in zip(suite.oracle.remainder_sets(A), suite.oracle.prepared(A).draws.rows)]).value
        step3 = excess[key] - (rem - suite.remainder_bound(A))
        check.record(step1 >= 0, lambda: f"order {trace.order}: accepted thresholds fall short of the cost bound by {-step1}")
        check.record(step3 >= 0, lambda: f"order {trace.order}: remainder excess falls short by {-step3}")
    for name, runs in suite.traces.items():
        gained, owed = 0, 0
        for trace, prob, _ in runs:
            gained += prob * sum((max(s.weight - s.threshold, 0) for s in trace.steps if s.accepted), 0)
            owed += prob * excess[tuple((s.element, s.accepted) for s in trace.steps)]
        check.record(gained >= owed, lambda: f"{name}: accepted excess {gained} < remainder excess {owed}")
    return check.result()


def _ratio(suite: _Suite) -> PropertyResult:
    check = _Check("ratio")
    policy = suite.policy
    rank_one = policy.p == 1 and suite.matroids[0].full_rank() == 1
    if not (policy.balanced or (policy.kind == PolicyKind.RANK_ONE_HALF_MAX and rank_one)):
        return check.result()
    prophet = prophet_value(suite.instance, suite.exact).value
    target = Fraction(policy.guarantee) * prophet
    ground = frozenset(suite.ground)
    for name, spec in [
        ("fixed", AdversarySpec(kind=AdversaryKind.FIXED_ORDER)),
        ("random", AdversarySpec(kind=AdversaryKind.UNIFORM_RANDOM_ORDER)),
        ("greedy", AdversarySpec(kind=AdversaryKind.WEIGHT_ADAPTIVE)),
    ]:
        gambler = Adversary(spec, policy).game_tree().value(ground)
        check.record(gambler >= target, lambda: f"{name} order: gambler {gambler} < {policy.guarantee} * prophet {prophet}")
    if suite.instance.profile.outcome_count() <= Config.ADVERSARY_OUTCOME_LIMIT:
        worst = GameTree(policy, "min").value(ground)
        check.record(worst >= target, lambda: f"worst case: gambler {worst} < {policy.guarantee} * prophet {prophet}")
    return check.result()


def property_suite(instance: Instance, policy: ThresholdPolicy, depth: int = 3) -> PropertyReport:
    """
    Run every registered invariant exhaustively in exact mode up to `depth` (largest set size
    enumerated for submodularity and the rejected-set bound). Failures are report content.

    Raises:
        ConfigError: If the policy estimates thresholds by Monte Carlo.
        RefusalError: If the instance is too large for exhaustive enumeration.
    """
    if policy.spec.estimator.mode != "exact":
        raise ConfigError("property_suite needs a policy with an exact estimator")
    suite = _Suite(instance, policy, depth)
    results = [
        _matroid_axioms(suite),
        _exchange(suite),
        _threshold_identity(suite),
        _policy_thresholds(suite),
        _remainder_submodularity(suite),
        _rejected_set_bound(suite),
        _prefix_feasibility(suite),
        _monotonicity(suite),
        _telescoping(suite),
        *_balanced(suite),
        _guarantee_steps(suite),
        _ratio(suite),
    ]
    report = PropertyReport(instance=instance.name, policy=policy.name, results=results)
    for failure in report.failures():
        logger.warning(f"{instance.name}: {failure.name} failed: {failure.witness}")
    logger.info(f"Property suite on {instance.name}: {sum(r.passed for r in results)}/{len(results)} passed")
    return report
