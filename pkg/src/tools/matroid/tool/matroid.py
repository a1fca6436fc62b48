from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from itertools import combinations
from numbers import Real
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
from networkx.algorithms import bipartite
from networkx.utils import UnionFind

from src.config import Config
from src.errors import InputError, OracleError, RefusalError

ElementSet = FrozenSet[int]
WeightAssignment = Union[Sequence[Real], Mapping[int, Real]]


################
# GROUND SETS  #
################
@dataclass(frozen=True)
class GroundSet:
    """Dense element identifiers 0..n-1 with optional human-readable labels."""

    size: int
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 0:
            raise InputError(f"Ground set size must be non-negative, got {self.size}")
        if self.labels is not None:
            if len(self.labels) != self.size:
                raise InputError(f"Expected {self.size} labels, got {len(self.labels)}")
            if len(set(self.labels)) != self.size:
                raise InputError("Element labels must be unique")

    @property
    def elements(self) -> Tuple[int, ...]:
        return tuple(range(self.size))

    def label(self, x: int) -> str:
        return self.labels[x] if self.labels else str(x)


def greedy_order(elements: Iterable[int], w: WeightAssignment) -> List[int]:
    """Descending weight, ascending identifier on ties."""
    return sorted(elements, key=lambda x: (-w[x], x))


############
# MATROIDS #
############
class Matroid(ABC):
    """
    A finite matroid given by an independence oracle.

    Subclasses implement `_independent` on already validated frozensets; every public query
    validates its argument against `ground` first. Instances are immutable after construction.
    """

    family: str = "abstract"

    def __init__(self, ground_set: GroundSet, elements: Optional[Iterable[int]] = None):
        self.ground_set = ground_set
        self.ground: ElementSet = frozenset(ground_set.elements if elements is None else elements)

    @abstractmethod
    def _independent(self, S: ElementSet) -> bool:
        ...

    def _check(self, S: Iterable[int]) -> ElementSet:
        S = frozenset(S)
        unknown = S - self.ground
        if unknown:
            raise InputError(f"Unknown element identifier(s) {sorted(unknown)} for {self.family} matroid")
        return S

    def is_independent(self, S: Iterable[int]) -> bool:
        return self._independent(self._check(S))

    def _greedy_independent(self, order: Iterable[int], start: ElementSet = frozenset()) -> List[int]:
        chosen: List[int] = []
        current = set(start)
        for x in order:
            if self._independent(frozenset(current | {x})):
                chosen.append(x)
                current.add(x)
        return chosen

    def rank(self, S: Iterable[int]) -> int:
        S = self._check(S)
        return len(self._greedy_independent(sorted(S)))

    def closure(self, S: Iterable[int]) -> ElementSet:
        S = self._check(S)
        r = self.rank(S)
        return frozenset(x for x in self.ground if self.rank(S | {x}) == r)

    def full_rank(self) -> int:
        return self.rank(self.ground)

    def contract(self, S: Iterable[int]) -> "ContractedMatroid":
        return ContractedMatroid(self, self._check(S))

    def delete(self, S: Iterable[int]) -> "DeletedMatroid":
        return DeletedMatroid(self, self._check(S))

    def independent_sets(self, max_size: Optional[int] = None) -> Iterator[ElementSet]:
        """Depth-first enumeration; downward closure lets us extend by larger identifiers only."""
        elements = sorted(self.ground)

        def extend(current: Tuple[int, ...], start: int) -> Iterator[ElementSet]:
            yield frozenset(current)
            if max_size is not None and len(current) >= max_size:
                return
            for pos in range(start, len(elements)):
                candidate = frozenset(current + (elements[pos],))
                if self._independent(candidate):
                    yield from extend(current + (elements[pos],), pos + 1)

        yield from extend((), 0)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={len(self.ground)})"


class UniformMatroid(Matroid):
    family = "uniform"

    def __init__(self, k: int, n: int, labels: Optional[Sequence[str]] = None):
        if k < 0:
            raise InputError(f"Uniform matroid rank must be non-negative, got {k}")
        super().__init__(GroundSet(n, tuple(labels) if labels else None))
        self.k = k

    def _independent(self, S: ElementSet) -> bool:
        return len(S) <= self.k


class PartitionMatroid(Matroid):
    family = "partition"

    def __init__(self, blocks: Sequence[Sequence[int]], capacities: Sequence[int], labels: Optional[Sequence[str]] = None):
        if len(blocks) != len(capacities):
            raise InputError(f"Got {len(blocks)} blocks but {len(capacities)} capacities")
        if any(c < 0 for c in capacities):
            raise InputError("Partition capacities must be non-negative")
        members = [x for block in blocks for x in block]
        n = len(members)
        if sorted(members) != list(range(n)):
            raise InputError("Partition blocks must cover identifiers 0..n-1 exactly once")
        super().__init__(GroundSet(n, tuple(labels) if labels else None))
        self.blocks: Tuple[Tuple[int, ...], ...] = tuple(tuple(sorted(b)) for b in blocks)
        self.capacities: Tuple[int, ...] = tuple(capacities)
        self.block_of: Dict[int, int] = {x: b for b, block in enumerate(self.blocks) for x in block}

    def _independent(self, S: ElementSet) -> bool:
        used = [0] * len(self.blocks)
        for x in S:
            b = self.block_of[x]
            used[b] += 1
            if used[b] > self.capacities[b]:
                return False
        return True


class GraphicMatroid(Matroid):
    """Cycle matroid of a multigraph; element i is edge `edges[i]`. Loops are never independent."""

    family = "graphic"

    def __init__(self, edges: Sequence[Tuple[int, int]], labels: Optional[Sequence[str]] = None):
        super().__init__(GroundSet(len(edges), tuple(labels) if labels else None))
        self.edges: Tuple[Tuple[int, int], ...] = tuple((int(u), int(v)) for u, v in edges)

    def _independent(self, S: ElementSet) -> bool:
        forest = UnionFind()
        for x in S:
            u, v = self.edges[x]
            if forest[u] == forest[v]:
                return False
            forest.union(u, v)
        return True


class ExplicitMatroid(Matroid):
    """Independent sets listed outright; meant for fixtures, validated with `axiom_check`."""

    family = "explicit"

    def __init__(self, n: int, independent_sets: Iterable[Iterable[int]], labels: Optional[Sequence[str]] = None):
        super().__init__(GroundSet(n, tuple(labels) if labels else None))
        self.family_sets: FrozenSet[ElementSet] = frozenset(frozenset(I) for I in independent_sets)
        for I in self.family_sets:
            self._check(I)

    def _independent(self, S: ElementSet) -> bool:
        return S in self.family_sets


class ContractedMatroid(Matroid):
    """Lazy view M / S: T is independent iff T + S0 is independent in the base, S0 fixed."""

    family = "contraction"

    def __init__(self, base: Matroid, S: ElementSet):
        super().__init__(base.ground_set, base.ground - S)
        self.base = base
        self.contracted = S
        self.s0: ElementSet = frozenset(base._greedy_independent(sorted(S)))

    def _independent(self, T: ElementSet) -> bool:
        return self.base._independent(T | self.s0)


class DeletedMatroid(Matroid):
    family = "deletion"

    def __init__(self, base: Matroid, S: ElementSet):
        super().__init__(base.ground_set, base.ground - S)
        self.base = base
        self.deleted = S

    def _independent(self, T: ElementSet) -> bool:
        return self.base._independent(T)


##################
# WEIGHTED BASIS #
##################
def max_weight_basis(M: Matroid, w: WeightAssignment) -> ElementSet:
    """
    Greedy maximum-weight basis of M.

    Args:
        M (Matroid): The matroid (or a contraction/deletion view).
        w (WeightAssignment): Non-negative weight per element identifier.

    Returns:
        ElementSet: A basis maximizing w; ties broken by ascending identifier.

    Raises:
        InputError: If any weight on the ground set is negative.
    """
    negative = [x for x in M.ground if w[x] < 0]
    if negative:
        raise InputError(f"Weights must be non-negative, got negative weight on {sorted(negative)}")
    return frozenset(M._greedy_independent(greedy_order(M.ground, w)))


def set_weight(S: Iterable[int], w: WeightAssignment):
    return sum((w[x] for x in S), 0)


#######################
# EXCHANGE BIJECTIONS #
#######################
@dataclass(frozen=True)
class ExchangeBijection:
    pairs: Mapping[int, int] = field(default_factory=dict)

    def holds(self, M: Matroid, V: ElementSet, R: ElementSet) -> bool:
        if set(self.pairs) != set(V) or set(self.pairs.values()) != set(R) or len(V) != len(R):
            return False
        return all(M.is_independent((R - {r}) | {v}) for v, r in self.pairs.items())


def exchange_bijection(M: Matroid, V: Iterable[int], R: Iterable[int]) -> ExchangeBijection:
    """
    Perfect matching in the exchange graph {(v, r) : (R - r) + v independent}.

    Raises:
        InputError: If V or R is dependent or their sizes differ.
        OracleError: If no perfect matching exists, which a matroid never allows.
    """
    V, R = M._check(V), M._check(R)
    if not (M._independent(V) and M._independent(R)):
        raise InputError("Exchange bijection needs independent V and R")
    if len(V) != len(R):
        raise InputError(f"Exchange bijection needs |V| = |R|, got {len(V)} and {len(R)}")
    if not V:
        return ExchangeBijection({})

    graph = nx.Graph()
    left = [("v", v) for v in sorted(V)]
    graph.add_nodes_from(left)
    graph.add_nodes_from(("r", r) for r in sorted(R))
    for v in sorted(V):
        for r in sorted(R):
            if M._independent((R - {r}) | {v}):
                graph.add_edge(("v", v), ("r", r))

    matching = bipartite.maximum_matching(graph, top_nodes=left)
    pairs = {node[1]: matching[node][1] for node in left if node in matching}
    if len(pairs) != len(V):
        raise OracleError(f"Exchange graph for V={sorted(V)}, R={sorted(R)} has no perfect matching")
    return ExchangeBijection(pairs)


################
# AXIOM CHECKS #
################
def axiom_check(M: ExplicitMatroid) -> bool:
    """Exhaustive check that an explicit family is non-empty, downward-closed and satisfies exchange."""
    if not isinstance(M, ExplicitMatroid):
        raise InputError(f"axiom_check needs an explicit matroid, got {M.family}")
    if len(M.ground) > Config.EXPLICIT_AXIOM_LIMIT:
        raise RefusalError(f"Refusing exhaustive axiom check on {len(M.ground)} > {Config.EXPLICIT_AXIOM_LIMIT} elements")

    family = M.family_sets
    if not family:
        return False
    for I in family:
        if any(I - {x} not in family for x in I):
            return False
    for I in family:
        for J in family:
            if len(I) < len(J) and not any(I | {y} in family for y in J - I):
                return False
    return True


def as_explicit(M: Matroid) -> ExplicitMatroid:
    """Materialize any matroid (views included) as an explicit family over the same identifiers."""
    explicit = ExplicitMatroid(M.ground_set.size, [], M.ground_set.labels)
    explicit.ground = M.ground
    explicit.family_sets = frozenset(M.independent_sets())
    return explicit


def all_subsets(S: Iterable[int]) -> Iterator[ElementSet]:
    items = sorted(S)
    for size in range(len(items) + 1):
        for combo in combinations(items, size):
            yield frozenset(combo)
