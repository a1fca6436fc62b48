import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq

from src.config import Config
from src.errors import ConfigError, InputError
from src.logger import logger
from src.tools.matroid.tool.matroid import ElementSet, set_weight
from src.tools.remainder.tool.remainder import (
    Matroids,
    RemainderEstimator,
    as_tuple,
    is_feasible,
    max_weight_feasible_intersection,
    remainder,
    remainder_j,
)
from src.tools.weights.tool.weights import (
    Estimate,
    Estimator,
    Number,
    WeightProfile,
    WeightSource,
    expect_max,
    weight_sample,
)

INFINITY = math.inf


def reciprocal(alpha: Number) -> Number:
    return Fraction(1) / alpha if isinstance(alpha, (int, Fraction)) else 1.0 / alpha


def optimal_alpha(p: int) -> float:
    return p + math.sqrt(p * (p - 1))


def guarantee(alpha: Number, p: int) -> Number:
    """(alpha - p) / (alpha (alpha - 1)): 1/2 for one matroid at alpha = 2, 1/(4p - 2) at alpha = 2p."""
    return (alpha - p) * reciprocal(alpha * (alpha - 1))


def _scaled(value: Number, scale: float) -> Number:
    if scale == 1.0:
        return value
    return value * (Fraction(scale) if isinstance(value, Fraction) else scale)


#################
# POLICY CONFIG #
#################
class PolicyKind(str, Enum):
    RANK_ONE_HALF_MAX = "rankOneHalfMax"
    SAMUEL_CAHN_MEDIAN = "samuelCahnMedian"
    MATROID_BALANCED = "matroidBalanced"
    INTERSECTION_BALANCED = "intersectionBalanced"


class PolicySpec(BaseModel):
    """Which threshold rule to run and how its expectations are estimated."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PolicyKind = Field(..., description="Threshold rule.")
    alpha: Optional[Union[int, float]] = Field(None, description="Balance parameter; defaults to 2p.")
    alpha_rule: Literal["2p", "optimal"] = Field("2p", description="Default alpha: 2p, or p + sqrt(p(p-1)).")
    estimator: Estimator = Field(default_factory=Estimator, description="Estimator for threshold expectations.")
    threshold_scale: float = Field(1.0, gt=0, description="Multiplies every finite threshold; 1 leaves the rule intact.")


##########
# TRACES #
##########
@dataclass(frozen=True)
class Step:
    element: int
    weight: Number
    threshold: Number
    accepted: bool


@dataclass
class SelectionTrace:
    steps: List[Step] = field(default_factory=list)

    @property
    def accepted(self) -> ElementSet:
        return frozenset(s.element for s in self.steps if s.accepted)

    @property
    def order(self) -> List[int]:
        return [s.element for s in self.steps]

    @property
    def payoff(self) -> Number:
        return sum((s.weight for s in self.steps if s.accepted), 0)

    @property
    def thresholds(self) -> Dict[int, Number]:
        return {s.element: s.threshold for s in self.steps}

    def accepted_in_order(self) -> List[int]:
        return [s.element for s in self.steps if s.accepted]

    def to_jsonl(self) -> str:
        lines = []
        for s in self.steps:
            threshold = "inf" if s.threshold == INFINITY else float(s.threshold)
            lines.append(json.dumps({"element": s.element, "weight": float(s.weight), "threshold": threshold, "decision": int(s.accepted)}))
        return "\n".join(lines) + ("\n" if lines else "")


############
# POLICIES #
############
class ThresholdPolicy:
    """
    A monotone online selection rule whose threshold for element x depends only on the set A
    accepted so far and on x. Infeasible additions get an infinite threshold.

    Attributes:
        spec (PolicySpec): The rule and its estimator.
        matroids (Tuple[Matroid, ...]): The constraint; one matroid or an intersection.
        profile (WeightSource): Weight distributions the thresholds are computed from.
    """

    def __init__(self, spec: PolicySpec, matroids: Matroids, profile: WeightSource):
        self.spec = spec
        self.matroids = as_tuple(matroids)
        self.profile = profile
        if profile.n != self.matroids[0].ground_set.size:
            raise InputError(f"Profile has {profile.n} distributions for {self.matroids[0].ground_set.size} elements")
        if spec.kind == PolicyKind.MATROID_BALANCED and self.p != 1:
            raise ConfigError(f"matroidBalanced needs a single matroid, got {self.p}; use intersectionBalanced")
        self.alpha = self._resolve_alpha()
        self._oracle: Optional[RemainderEstimator] = None
        self._constant: Optional[Number] = None
        self._cache: Dict[Tuple[ElementSet, int], Estimate] = {}

    @property
    def p(self) -> int:
        return len(self.matroids)

    @property
    def kind(self) -> PolicyKind:
        return self.spec.kind

    @property
    def balanced(self) -> bool:
        return self.kind in (PolicyKind.MATROID_BALANCED, PolicyKind.INTERSECTION_BALANCED)

    @property
    def name(self) -> str:
        suffix = f"(alpha={self.alpha})" if self.kind == PolicyKind.INTERSECTION_BALANCED else ""
        return self.kind.value + suffix

    @property
    def guarantee(self) -> Number:
        return guarantee(self.alpha, self.p)

    def _resolve_alpha(self) -> Number:
        if self.kind == PolicyKind.MATROID_BALANCED:
            if self.spec.alpha not in (None, 2):
                raise ConfigError("matroidBalanced uses alpha = 2")
            return 2
        if self.kind != PolicyKind.INTERSECTION_BALANCED:
            return 2
        alpha = self.spec.alpha
        if alpha is None:
            alpha = 2 * self.p if self.spec.alpha_rule == "2p" else optimal_alpha(self.p)
        if alpha <= 1:
            raise ConfigError(f"alpha must exceed 1, got {alpha}")
        if alpha < 2:
            logger.warning(f"alpha={alpha} < 2: thresholds are balanced but the approximation guarantee is void")
        return alpha

    @property
    def oracle(self) -> RemainderEstimator:
        if self._oracle is None:
            self._oracle = RemainderEstimator(self.matroids, self.profile, self.spec.estimator)
        return self._oracle

    def _constant_threshold(self) -> Number:
        if self._constant is None:
            if self.kind == PolicyKind.RANK_ONE_HALF_MAX:
                self._constant = rank_one_threshold(self.profile, self.spec.estimator)
            else:
                self._constant = samuel_cahn_threshold(self.profile)
            logger.info(f"{self.kind.value} threshold fixed at {float(self._constant):.6g}")
        return self._constant

    def threshold_estimate(self, accepted: Iterable[int], x: int) -> Estimate:
        A = frozenset(accepted)
        if x in A:
            raise InputError(f"Element {x} was already accepted")
        if not is_feasible(self.matroids, A | {x}):
            return Estimate(INFINITY)
        key = (A, x)
        if key not in self._cache:
            if self.balanced:
                diff = self.oracle.expected_difference(A, A | {x})
                inv = reciprocal(self.alpha)
                value = max(diff.value * inv, 0)
                estimate = Estimate(_scaled(value, self.spec.threshold_scale), diff.stderr * float(inv) * self.spec.threshold_scale, diff.trials)
            else:
                estimate = Estimate(_scaled(self._constant_threshold(), self.spec.threshold_scale))
            self._cache[key] = estimate
        return self._cache[key]

    def threshold(self, accepted: Iterable[int], x: int) -> Number:
        return self.threshold_estimate(accepted, x).value

    def step(self, accepted: ElementSet, x: int, w: Number) -> Step:
        T = self.threshold(accepted, x)
        return Step(element=x, weight=w, threshold=T, accepted=bool(T != INFINITY and w >= T))


def run_policy(policy: ThresholdPolicy, sequence: Sequence[Tuple[int, Number]]) -> SelectionTrace:
    """
    Run the policy online over (element, weight) pairs. The threshold for each element is fixed
    from the accepted prefix before its weight is looked at.

    Raises:
        InputError: On a repeated or unknown element.
    """
    ground = policy.matroids[0].ground
    seen = set()
    trace = SelectionTrace()
    accepted: ElementSet = frozenset()
    for x, w in sequence:
        if x in seen:
            raise InputError(f"Element {x} appears twice in the input sequence")
        if x not in ground:
            raise InputError(f"Unknown element {x}")
        seen.add(x)
        step = policy.step(accepted, x, w)
        trace.steps.append(step)
        if step.accepted:
            accepted = accepted | {x}
    return trace


#########################
# STANDALONE THRESHOLDS #
#########################
def _threshold_inputs(matroids: Matroids, A: Iterable[int], x: int) -> Tuple[tuple, ElementSet, ElementSet]:
    matroids = as_tuple(matroids)
    A = frozenset(A)
    if not is_feasible(matroids, A):
        raise InputError(f"Accepted set {sorted(A)} is infeasible")
    return matroids, A, A | {x}


def _paired_expectation(profile: WeightSource, estimator: Estimator, per_row) -> Estimate:
    """E[f(A) - f(A + x)] with f evaluated per draw; independent draws per term without CRN."""
    if estimator.mode == "exact" or estimator.common_random_numbers:
        draws = weight_sample(profile, estimator)
        return draws.expectation([per_row(row, 0) - per_row(row, 1) for row in draws.rows])
    first = weight_sample(profile, estimator, (1,))
    second = weight_sample(profile, estimator, (2,))
    a = first.expectation([per_row(row, 0) for row in first.rows])
    b = second.expectation([per_row(row, 1) for row in second.rows])
    return Estimate(a.value - b.value, math.hypot(a.stderr, b.stderr), a.trials)


def threshold_single(M, profile: WeightSource, A: Iterable[int], x: int, estimator: Estimator = Estimator()) -> Number:
    """Half the expected drop in w'(R(.)) when x joins A, with R computed through contraction."""
    (M,), A, Ax = _threshold_inputs(M, A, x)
    if not M.is_independent(Ax):
        return INFINITY
    sets = (A, Ax)
    diff = _paired_expectation(profile, estimator, lambda row, k: set_weight(remainder(M, row, sets[k]).R, row))
    return max(diff.value * Fraction(1, 2), 0)


def threshold_single_via_cost(M, profile: WeightSource, A: Iterable[int], x: int, estimator: Estimator = Estimator()) -> Number:
    """Half the expected growth of w'(C(.)) when x joins A."""
    (M,), A, Ax = _threshold_inputs(M, A, x)
    if not M.is_independent(Ax):
        return INFINITY
    sets = (Ax, A)
    diff = _paired_expectation(profile, estimator, lambda row, k: set_weight(remainder(M, row, sets[k]).C, row))
    return max(diff.value * Fraction(1, 2), 0)


def threshold_intersection(
    matroids: Matroids, profile: WeightSource, A: Iterable[int], x: int, alpha: Optional[Number] = None, estimator: Estimator = Estimator()
) -> Number:
    """Sum over matroids j of (1/alpha) E[w'(R_j(A)) - w'(R_j(A + x))]; alpha defaults to 2p."""
    matroids, A, Ax = _threshold_inputs(matroids, A, x)
    alpha = 2 * len(matroids) if alpha is None else alpha
    if alpha <= 1:
        raise ConfigError(f"alpha must exceed 1, got {alpha}")
    if not is_feasible(matroids, Ax):
        return INFINITY
    sets = (A, Ax)

    def per_row(row, k):
        B = max_weight_feasible_intersection(matroids, row)
        return sum(set_weight(remainder_j(matroids, row, sets[k], j, B)[0], row) for j in range(len(matroids)))

    diff = _paired_expectation(profile, estimator, per_row)
    return max(diff.value * reciprocal(alpha), 0)


def rank_one_threshold(profile: WeightSource, estimator: Estimator = Estimator()) -> Number:
    """Half the expected maximum weight."""
    best = expect_max(profile, estimator).value
    return best * Fraction(1, 2) if isinstance(best, (int, Fraction)) else best / 2


def samuel_cahn_threshold(profile: WeightProfile) -> Number:
    """
    Smallest t with Pr(max > t) <= 1/2. Exact over the merged support for finite profiles,
    root finding on the product of cdfs otherwise.
    """
    if profile.is_finite:
        outcomes = [d.outcomes(rational=True) for d in profile.distributions]
        for t in sorted({v for pairs in outcomes for v, _ in pairs}):
            below = Fraction(1)
            for pairs in outcomes:
                below *= sum((p for v, p in pairs if v <= t), Fraction(0))
            if 1 - below <= Fraction(1, 2):
                return t
        raise InputError("Profile has no support point with Pr(max > t) <= 1/2")

    def exceed(t: float) -> float:
        return 1.0 - math.prod(d.cdf(t) for d in profile.distributions) - 0.5

    if exceed(0.0) <= 0:
        return 0.0
    upper = max(d.support()[1] if math.isfinite(d.support()[1]) else d.quantile(1 - 1e-12) for d in profile.distributions)
    return brentq(exceed, 0.0, upper, xtol=1e-12)


#####################
# BALANCE CHECKING #
#####################
class BalanceVerdict(BaseModel):
    eq_alpha_holds: bool
    eq_beta_holds: bool
    alpha_slack: float = Field(..., description="sum of accepted thresholds minus the cost bound")
    beta_slack: float = Field(..., description="remainder bound minus the sum of thresholds over V")
    alpha_stderr: float = 0.0
    beta_stderr: float = 0.0
    exact_alpha_slack: Optional[Fraction] = Field(None, exclude=True)
    exact_beta_slack: Optional[Fraction] = Field(None, exclude=True)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def check_balanced(
    policy: ThresholdPolicy,
    trace: SelectionTrace,
    V: Iterable[int],
    alpha: Optional[Number] = None,
    estimator: Optional[Estimator] = None,
) -> BalanceVerdict:
    """
    Evaluate both balanced-threshold inequalities on a completed trace and a set V of rejected elements.

    One matroid: sum_A T >= (1/alpha) E[w'(C(A))] and sum_V T <= (1 - 1/alpha) E[w'(R(A))].
    Intersections: sum_A T >= (1/alpha) E[sum_j w'(C_j(A))] and sum_V T <= (1/alpha) E[sum_j w'(R_j(A))].
    In Monte Carlo mode an inequality fails only when its slack is below -Config.MC_SIGMA standard errors.

    Raises:
        InputError: If V meets A, A + V is infeasible, or V has elements the trace never saw.
    """
    A = trace.accepted
    V = frozenset(V)
    thresholds = trace.thresholds
    if V & A:
        raise InputError(f"V must be disjoint from the accepted set, shared {sorted(V & A)}")
    if not V <= set(thresholds):
        raise InputError(f"V has elements the trace never revealed: {sorted(V - set(thresholds))}")
    if not is_feasible(policy.matroids, A | V):
        raise InputError("A + V must be feasible")

    alpha = policy.alpha if alpha is None else alpha
    inv = reciprocal(alpha)
    if estimator is None and policy.balanced:
        oracle = policy.oracle
    else:
        oracle = RemainderEstimator(policy.matroids, policy.profile, estimator or policy.spec.estimator)

    cost = oracle.expected_cost(A)
    rem = oracle.expected_remainder(A)
    sum_accepted = sum((thresholds[x] for x in A), 0)
    sum_rejected = sum((thresholds[x] for x in V), 0)
    beta_factor = (1 - inv) if policy.p == 1 else inv

    alpha_slack = sum_accepted - inv * cost.value
    beta_slack = beta_factor * rem.value - sum_rejected
    t_err = lambda S: math.sqrt(sum(policy.threshold_estimate(trace_prefix(trace, x), x).stderr ** 2 for x in S))
    alpha_err = math.hypot(t_err(A), float(inv) * cost.stderr)
    beta_err = math.hypot(t_err(V), float(beta_factor) * rem.stderr)
    cut = Config.MC_SIGMA
    exact = cost.exact and all(policy.threshold_estimate(trace_prefix(trace, x), x).exact for x in A | V)

    return BalanceVerdict(
        eq_alpha_holds=alpha_slack >= 0 if exact else alpha_slack >= -cut * alpha_err,
        eq_beta_holds=beta_slack >= 0 if exact else beta_slack >= -cut * beta_err,
        alpha_slack=float(alpha_slack),
        beta_slack=float(beta_slack),
        alpha_stderr=alpha_err,
        beta_stderr=beta_err,
        exact_alpha_slack=alpha_slack if isinstance(alpha_slack, Fraction) else None,
        exact_beta_slack=beta_slack if isinstance(beta_slack, Fraction) else None,
    )


def trace_prefix(trace: SelectionTrace, x: int) -> ElementSet:
    """The accepted set just before x was revealed."""
    prefix = set()
    for s in trace.steps:
        if s.element == x:
            return frozenset(prefix)
        if s.accepted:
            prefix.add(s.element)
    raise InputError(f"Element {x} is not in the trace")
