import math
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.config import Config
from src.errors import ConfigError, InputError, RefusalError
from src.logger import logger
from src.tools.matroid.tool.matroid import ElementSet
from src.tools.harness.tool.instances import Instance
from src.tools.policy.tool.policy import INFINITY, ThresholdPolicy
from src.tools.weights.tool.weights import Number, WeightProfile


class AdversaryKind(str, Enum):
    FIXED_ORDER = "fixedOrder"
    UNIFORM_RANDOM_ORDER = "uniformRandomOrder"
    WEIGHT_ADAPTIVE = "weightAdaptive"
    BRUTE_FORCE_WORST_CASE = "bruteForceWorstCase"


class AdversarySpec(BaseModel):
    """How the next element to reveal is picked. Only revealed weights are ever visible."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: AdversaryKind = Field(AdversaryKind.FIXED_ORDER, description="Ordering rule.")
    permutation: Optional[List[int]] = Field(None, description="fixedOrder: the reveal order; identity when omitted.")
    strategy: Literal["greedyOneStep", "bruteForce"] = Field("greedyOneStep", description="weightAdaptive: selection rule.")

    @model_validator(mode="after")
    def _check_permutation(self):
        if self.permutation is not None and self.kind != AdversaryKind.FIXED_ORDER:
            raise ValueError("permutation only applies to fixedOrder")
        return self

    @property
    def name(self) -> str:
        if self.kind == AdversaryKind.FIXED_ORDER and self.permutation:
            return f"fixedOrder({','.join(map(str, self.permutation))})"
        if self.kind == AdversaryKind.WEIGHT_ADAPTIVE:
            return f"weightAdaptive({self.strategy})"
        return self.kind.value

    @property
    def worst_case(self) -> bool:
        return self.kind == AdversaryKind.BRUTE_FORCE_WORST_CASE or (
            self.kind == AdversaryKind.WEIGHT_ADAPTIVE and self.strategy == "bruteForce"
        )


def partial_expectation(distribution, threshold: Number) -> Number:
    """E[w 1{w >= threshold}] for a single element."""
    if threshold == INFINITY:
        return 0
    if distribution.is_finite:
        return sum((v * p for v, p in distribution.outcomes(rational=True) if v >= threshold), Fraction(0))
    low = max(float(threshold), distribution.support()[0])
    return float(distribution.frozen.expect(lambda v: v, lb=low))


#############
# GAME TREE #
#############
Chooser = Callable[[ElementSet, ElementSet], int]


class GameTree:
    """
    Backward induction over states (unrevealed elements, accepted set). Policies see history only
    through the accepted set and weights are independent, so that pair is a sufficient state.

    rule "min" is the weight-adaptive worst case, "mean" a uniformly random order, "max" the best
    order; a chooser callable fixes the order rule of a deterministic adversary instead.
    """

    def __init__(self, policy: ThresholdPolicy, rule: Literal["min", "mean", "max"] = "min", chooser: Optional[Chooser] = None):
        self.policy = policy
        self.rule = rule
        self.chooser = chooser
        profile = policy.profile
        if not isinstance(profile, WeightProfile) or not profile.is_finite:
            raise RefusalError("Game tree values need a finite-discrete weight profile")
        self.outcomes = [d.outcomes(rational=True) for d in profile.distributions]
        self._memo: Dict[Tuple[ElementSet, ElementSet], Number] = {}
        self._gains: Dict[Tuple[ElementSet, ElementSet], Dict[int, Number]] = {}

    @property
    def states(self) -> int:
        return len(self._memo)

    def _gain(self, remaining: ElementSet, accepted: ElementSet, x: int) -> Number:
        T = self.policy.threshold(accepted, x)
        rest = remaining - {x}
        skip = self.value(rest, accepted)
        if T == INFINITY:
            return skip
        taken = accepted | {x}
        total = 0
        for v, p in self.outcomes[x]:
            total += p * ((v + self.value(rest, taken)) if v >= T else skip)
        return total

    def gains(self, remaining: ElementSet, accepted: ElementSet) -> Dict[int, Number]:
        key = (remaining, accepted)
        if key not in self._gains:
            self._gains[key] = {x: self._gain(remaining, accepted, x) for x in sorted(remaining)}
        return self._gains[key]

    def value(self, remaining: ElementSet, accepted: ElementSet = frozenset()) -> Number:
        key = (remaining, accepted)
        if key in self._memo:
            return self._memo[key]
        if len(self._memo) >= Config.GAME_TREE_LIMIT:
            raise RefusalError(f"Game tree exceeds {Config.GAME_TREE_LIMIT} states")
        if not remaining:
            result = 0
        elif self.chooser is not None:
            result = self._gain(remaining, accepted, self.chooser(remaining, accepted))
        else:
            gains = self.gains(remaining, accepted)
            if self.rule == "min":
                result = min(gains.values())
            elif self.rule == "max":
                result = max(gains.values())
            else:
                total = sum(gains.values(), 0)
                result = total / len(gains) if isinstance(total, float) else Fraction(total) / len(gains)
        self._memo[key] = result
        return result

    def best_move(self, remaining: ElementSet, accepted: ElementSet) -> int:
        """The element the worst-case adversary reveals next; lowest identifier on ties."""
        gains = self.gains(remaining, accepted)
        target = min(gains.values()) if self.rule != "max" else max(gains.values())
        return min(x for x, g in gains.items() if g == target)


##############
# ADVERSARIES #
##############
class Adversary:
    """
    Runtime side of an AdversarySpec for one policy. `choose` sees the unrevealed elements and the
    accepted set, never the weight of the element it is about to reveal.
    """

    def __init__(self, spec: AdversarySpec, policy: ThresholdPolicy):
        self.spec = spec
        self.policy = policy
        ground = sorted(policy.matroids[0].ground)
        self.permutation = list(spec.permutation) if spec.permutation is not None else ground
        if spec.kind == AdversaryKind.FIXED_ORDER and sorted(self.permutation) != ground:
            raise ConfigError(f"fixedOrder permutation {self.permutation} is not a permutation of {ground}")
        self._order: List[int] = []
        self._tree: Optional[GameTree] = None
        if spec.worst_case:
            profile = policy.profile
            if not profile.is_finite or profile.outcome_count() > Config.ADVERSARY_OUTCOME_LIMIT:
                raise RefusalError(f"Worst-case adversary needs a finite outcome space of at most {Config.ADVERSARY_OUTCOME_LIMIT}")
            self._tree = GameTree(policy, "min")

    @property
    def name(self) -> str:
        return self.spec.name

    def begin(self, rng: Optional[np.random.Generator] = None) -> None:
        if self.spec.kind == AdversaryKind.UNIFORM_RANDOM_ORDER:
            if rng is None:
                raise ConfigError("uniformRandomOrder needs a random generator")
            self._order = [int(x) for x in rng.permutation(self.permutation)]

    def one_step_gain(self, accepted: ElementSet, x: int) -> Number:
        return partial_expectation(self.policy.profile.distributions[x], self.policy.threshold(accepted, x))

    def _greedy(self, remaining: ElementSet, accepted: ElementSet) -> int:
        return min(sorted(remaining), key=lambda x: self.one_step_gain(accepted, x))

    def _first(self, remaining: ElementSet, order: List[int]) -> int:
        return next(x for x in order if x in remaining)

    def choose(self, remaining: ElementSet, accepted: ElementSet) -> int:
        if self._tree is not None:
            return self._tree.best_move(remaining, accepted)
        if self.spec.kind == AdversaryKind.WEIGHT_ADAPTIVE:
            return self._greedy(remaining, accepted)
        if self.spec.kind == AdversaryKind.UNIFORM_RANDOM_ORDER:
            return self._first(remaining, self._order)
        return self._first(remaining, self.permutation)

    def game_tree(self) -> GameTree:
        """Exact expected gambler payoff against this adversary, as a game tree."""
        if self._tree is not None:
            return self._tree
        if self.spec.kind == AdversaryKind.UNIFORM_RANDOM_ORDER:
            return GameTree(self.policy, "mean")
        if self.spec.kind == AdversaryKind.WEIGHT_ADAPTIVE:
            return GameTree(self.policy, chooser=self._greedy)
        return GameTree(self.policy, chooser=lambda remaining, _: self._first(remaining, self.permutation))


def worst_case_adaptive_value(instance: Instance, policy: ThresholdPolicy) -> Number:
    """
    Exact minimax value of the gambler's expected payoff when an adversary adaptively picks which
    element to reveal next.

    Raises:
        RefusalError: If the profile is not finite-discrete or the game tree is too large.
    """
    if policy.matroids != instance.matroids:
        raise InputError(f"Policy was built for a different instance than {instance.name}")
    tree = GameTree(policy, "min")
    value = tree.value(frozenset(instance.matroids[0].ground))
    logger.info(f"Worst-case adaptive value {float(value):.6g} over {tree.states} states")
    return value
