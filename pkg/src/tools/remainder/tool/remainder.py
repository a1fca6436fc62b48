from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import Config
from src.errors import InputError, OracleError, RefusalError
from src.logger import logger
from src.tools.matroid.tool.matroid import (
    ElementSet,
    Matroid,
    WeightAssignment,
    greedy_order,
    max_weight_basis,
    set_weight,
)
from src.tools.weights.tool.weights import Estimate, Estimator, WeightSample, WeightSource, weight_sample

Matroids = Union[Matroid, Sequence[Matroid]]


def as_tuple(matroids: Matroids) -> Tuple[Matroid, ...]:
    if isinstance(matroids, Matroid):
        return (matroids,)
    matroids = tuple(matroids)
    if not matroids:
        raise InputError("Need at least one matroid")
    ground = matroids[0].ground
    if any(M.ground != ground for M in matroids[1:]):
        raise InputError("All matroids of an intersection must share the ground set")
    return matroids


def is_feasible(matroids: Matroids, S: Iterable[int]) -> bool:
    S = frozenset(S)
    return all(M.is_independent(S) for M in as_tuple(matroids))


################
# RESULT TYPES #
################
@dataclass(frozen=True)
class RemainderResult:
    R: ElementSet
    C: ElementSet
    base_basis: ElementSet


@dataclass(frozen=True)
class IntersectionRemainder:
    per_matroid: Tuple[Tuple[ElementSet, ElementSet], ...]
    base_set: ElementSet

    @property
    def R(self) -> ElementSet:
        return frozenset.intersection(*(R for R, _ in self.per_matroid))

    @property
    def C(self) -> ElementSet:
        return frozenset.union(*(C for _, C in self.per_matroid))


############################
# MAXIMUM-WEIGHT FEASIBLES #
############################
@lru_cache(maxsize=64)
def feasible_family(matroids: Tuple[Matroid, ...]) -> Tuple[Tuple[int, ...], ...]:
    """
    Every set independent in all matroids, as sorted tuples in lexicographic order.

    Raises:
        RefusalError: If the family exceeds Config.FEASIBLE_FAMILY_LIMIT.
    """
    elements = sorted(matroids[0].ground)
    family: List[Tuple[int, ...]] = []

    def extend(current: Tuple[int, ...], start: int):
        family.append(current)
        if len(family) > Config.FEASIBLE_FAMILY_LIMIT:
            raise RefusalError(f"Feasible family exceeds {Config.FEASIBLE_FAMILY_LIMIT} sets; too large for brute force")
        for pos in range(start, len(elements)):
            candidate = current + (elements[pos],)
            if all(M._independent(frozenset(candidate)) for M in matroids):
                extend(candidate, pos + 1)

    extend((), 0)
    family.sort()
    logger.debug(f"Feasible family of {len(matroids)} matroids has {len(family)} sets")
    return tuple(family)


@lru_cache(maxsize=64)
def _family_matrix(matroids: Tuple[Matroid, ...]) -> np.ndarray:
    family = feasible_family(matroids)
    size = matroids[0].ground_set.size
    incidence = np.zeros((len(family), size))
    for row, members in enumerate(family):
        incidence[row, list(members)] = 1.0
    return incidence


def max_weight_feasible_intersection(matroids: Matroids, w: WeightAssignment) -> ElementSet:
    """
    A maximum-weight set independent in every matroid.

    One matroid uses the greedy basis. Several matroids search the feasible family exhaustively;
    ties go to the lexicographically smallest sorted identifier list.
    """
    matroids = as_tuple(matroids)
    if len(matroids) == 1:
        return max_weight_basis(matroids[0], w)
    best, best_weight = (), None
    for members in feasible_family(matroids):
        total = set_weight(members, w)
        if best_weight is None or total > best_weight:
            best, best_weight = members, total
    return frozenset(best)


def max_weight_feasible_bulk(matroids: Matroids, W: np.ndarray) -> List[ElementSet]:
    """Row-wise maximum-weight feasible sets for a float matrix of draws (same tie rule)."""
    matroids = as_tuple(matroids)
    if len(matroids) == 1:
        return [max_weight_basis(matroids[0], row) for row in W]
    family = feasible_family(matroids)
    best = np.argmax(W @ _family_matrix(matroids).T, axis=1)
    return [frozenset(family[i]) for i in best]


##############
# REMAINDERS #
##############
def _greedy_remainder(M: Matroid, order: Sequence[int], A: ElementSet) -> ElementSet:
    chosen = set()
    for x in order:
        if x in A:
            continue
        if M._independent(A | chosen | {x}):
            chosen.add(x)
    return frozenset(chosen)


def remainder(M: Matroid, w_prime: WeightAssignment, A: Iterable[int]) -> RemainderResult:
    """
    R(A) as the maximum-weight basis of M / A, and C(A) = B - R(A) for the greedy basis B.

    Raises:
        InputError: If A is dependent.
        OracleError: If R(A) escapes B.
    """
    A = M._check(A)
    if not M._independent(A):
        raise InputError(f"Remainder needs an independent set, got {sorted(A)}")
    B = max_weight_basis(M, w_prime)
    R = max_weight_basis(M.contract(A), w_prime)
    if not R <= B:
        raise OracleError(f"R(A)={sorted(R)} is not contained in B={sorted(B)}")
    return RemainderResult(R=R, C=B - R, base_basis=B)


def remainder_j(
    matroids: Matroids, w_prime: WeightAssignment, A: Iterable[int], j: int, B: Optional[ElementSet] = None
) -> Tuple[ElementSet, ElementSet]:
    """
    (R_j, C_j): walk B in greedy order and keep x whenever A + R_j + x stays independent in matroid j.

    Raises:
        InputError: If A is infeasible or j is out of range.
    """
    matroids = as_tuple(matroids)
    A = frozenset(A)
    if not 0 <= j < len(matroids):
        raise InputError(f"Matroid index {j} out of range for {len(matroids)} matroids")
    if not is_feasible(matroids, A):
        raise InputError(f"Remainder needs a feasible set, got {sorted(A)}")
    if B is None:
        B = max_weight_feasible_intersection(matroids, w_prime)
    R_j = _greedy_remainder(matroids[j], greedy_order(B, w_prime), A)
    return R_j, B - R_j


def intersection_remainder(matroids: Matroids, w_prime: WeightAssignment, A: Iterable[int]) -> IntersectionRemainder:
    matroids = as_tuple(matroids)
    A = frozenset(A)
    B = max_weight_feasible_intersection(matroids, w_prime)
    per_matroid = []
    for j, M in enumerate(matroids):
        R_j, C_j = remainder_j(matroids, w_prime, A, j, B)
        spanned = A | R_j
        if any(b not in spanned and M._independent(spanned | {b}) for b in B):
            raise OracleError(f"B is not spanned by A + R_{j} for A={sorted(A)}")
        per_matroid.append((R_j, C_j))
    return IntersectionRemainder(per_matroid=tuple(per_matroid), base_set=B)


##############
# ESTIMATORS #
##############
@dataclass
class _PreparedSample:
    draws: WeightSample
    orders: List[List[int]]
    base_weights: List


class RemainderEstimator:
    """
    Expectations of w'(R_j(S)) and w'(C_j(S)) over a fresh weight draw w'.

    With common random numbers (and always in exact mode) every set S is evaluated on the same
    draws, so differences between two sets carry no independent sampling noise. Per-row values
    are cached per (S, j); the draws and their maximum-weight sets B are computed once.
    """

    def __init__(self, matroids: Matroids, source: WeightSource, estimator: Estimator = Estimator()):
        self.matroids = as_tuple(matroids)
        self.source = source
        self.estimator = estimator
        self._samples: Dict[Tuple[int, ...], _PreparedSample] = {}
        self._values: Dict[Tuple[ElementSet, int, Tuple[int, ...]], List] = {}
        self._sets: Dict[Tuple[ElementSet, Tuple[int, ...]], List[ElementSet]] = {}

    @property
    def p(self) -> int:
        return len(self.matroids)

    @property
    def shared(self) -> bool:
        return self.estimator.mode == "exact" or self.estimator.common_random_numbers

    def _key(self, S: ElementSet) -> Tuple[int, ...]:
        return () if self.shared else (1 + len(S), *sorted(S))

    def prepared(self, S: ElementSet = frozenset()) -> _PreparedSample:
        key = self._key(S)
        if key not in self._samples:
            draws = weight_sample(self.source, self.estimator, key)
            if isinstance(draws.rows, np.ndarray) and self.p > 1:
                bases = max_weight_feasible_bulk(self.matroids, draws.rows)
            else:
                bases = [max_weight_feasible_intersection(self.matroids, row) for row in draws.rows]
            orders = [greedy_order(B, row) for B, row in zip(bases, draws.rows)]
            base_weights = [set_weight(B, row) for B, row in zip(bases, draws.rows)]
            self._samples[key] = _PreparedSample(draws, orders, base_weights)
            logger.debug(f"Prepared {len(draws)} weight draws for key {key}")
        return self._samples[key]

    def remainder_values(self, S: Iterable[int], j: int) -> List:
        S = frozenset(S)
        key = self._key(S)
        cache_key = (S, j, key)
        if cache_key not in self._values:
            prepared = self.prepared(S)
            M = self.matroids[j]
            self._values[cache_key] = [
                set_weight(_greedy_remainder(M, order, S), row) for order, row in zip(prepared.orders, prepared.draws.rows)
            ]
        return self._values[cache_key]

    def remainder_sets(self, S: Iterable[int]) -> List[ElementSet]:
        """R(S) per draw, the intersection over matroids of R_j(S)."""
        S = frozenset(S)
        cache_key = (S, self._key(S))
        if cache_key not in self._sets:
            prepared = self.prepared(S)
            self._sets[cache_key] = [
                frozenset.intersection(*(_greedy_remainder(M, order, S) for M in self.matroids)) for order in prepared.orders
            ]
        return self._sets[cache_key]

    def cost_values(self, S: Iterable[int], j: int) -> List:
        prepared = self.prepared(frozenset(S))
        return [wB - r for wB, r in zip(prepared.base_weights, self.remainder_values(S, j))]

    def _summed(self, S: Iterable[int], j: Optional[int], cost: bool) -> List:
        values = self.cost_values if cost else self.remainder_values
        indices = range(self.p) if j is None else [j]
        columns = [values(S, i) for i in indices]
        return [sum(parts) for parts in zip(*columns)]

    def expected_remainder(self, S: Iterable[int], j: Optional[int] = None) -> Estimate:
        """E[w'(R_j(S))], summed over all matroids when j is None."""
        S = frozenset(S)
        return self.prepared(S).draws.expectation(self._summed(S, j, cost=False))

    def expected_cost(self, S: Iterable[int], j: Optional[int] = None) -> Estimate:
        S = frozenset(S)
        return self.prepared(S).draws.expectation(self._summed(S, j, cost=True))

    def expected_difference(self, S: Iterable[int], T: Iterable[int], j: Optional[int] = None, cost: bool = False) -> Estimate:
        """E[f(S) - f(T)] for f = w'(R) (or w'(C) when cost), paired row by row when draws are shared."""
        S, T = frozenset(S), frozenset(T)
        if self.shared:
            diff = [a - b for a, b in zip(self._summed(S, j, cost), self._summed(T, j, cost))]
            return self.prepared(S).draws.expectation(diff)
        first = (self.expected_cost if cost else self.expected_remainder)(S, j)
        second = (self.expected_cost if cost else self.expected_remainder)(T, j)
        return Estimate(first.value - second.value, float(np.hypot(first.stderr, second.stderr)), first.trials)


def expected_remainder_weight(
    matroids: Matroids, profile: WeightSource, A: Iterable[int], estimator: Estimator = Estimator(), j: Optional[int] = None
) -> Estimate:
    """
    E[w'(R(A))] for one matroid, or E[w'(R_j(A))] (summed over j when j is None) for an intersection.

    Raises:
        InputError: If A is infeasible.
        RefusalError: If exact mode is requested on a continuous profile.
    """
    matroids = as_tuple(matroids)
    A = frozenset(A)
    if not is_feasible(matroids, A):
        raise InputError(f"Expected remainder needs a feasible set, got {sorted(A)}")
    return RemainderEstimator(matroids, profile, estimator).expected_remainder(A, j)
