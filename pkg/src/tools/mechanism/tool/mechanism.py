import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from src.config import Config
from src.errors import InputError, RefusalError
from src.logger import logger
from src.tools.matroid.tool.matroid import ElementSet, Matroid, PartitionMatroid, UniformMatroid, set_weight
from src.tools.matroid.tool.schemas import MatroidSpec, build_matroid
from src.tools.mechanism.tool.virtual import ValueDistribution, inverse_virtual, require_regular, virtual_value
from src.tools.policy.tool.policy import INFINITY, PolicyKind, PolicySpec, SelectionTrace, ThresholdPolicy
from src.tools.remainder.tool.remainder import as_tuple, is_feasible, max_weight_feasible_intersection
from src.tools.weights.tool.weights import Estimator, UniformInterval, stream


#############
# INSTANCES #
#############
@dataclass(frozen=True)
class BMUMDInstance:
    """
    Unit-demand bidders over disjoint item sets J_1..J_n with one regular value distribution per item.
    A partition matroid capping each bidder at one item is added when the given constraint allows more.
    """

    bidders: Tuple[Tuple[int, ...], ...]
    distributions: Tuple[ValueDistribution, ...]
    matroids: Tuple[Matroid, ...]
    name: str = "bmumd"

    def __post_init__(self):
        matroids = as_tuple(self.matroids)
        n = matroids[0].ground_set.size
        items = sorted(x for J in self.bidders for x in J)
        if items != list(range(n)):
            raise InputError(f"{self.name}: bidder item sets must partition the {n} items")
        if len(self.distributions) != n:
            raise InputError(f"{self.name}: got {len(self.distributions)} distributions for {n} items")
        for d in self.distributions:
            require_regular(d)
        if any(is_feasible(matroids, pair) for J in self.bidders for pair in combinations(J, 2)):
            unit_demand = PartitionMatroid([list(J) for J in self.bidders], [1] * len(self.bidders), matroids[0].ground_set.labels)
            matroids = matroids + (unit_demand,)
            logger.info(f"{self.name}: added the one-item-per-bidder partition constraint")
        object.__setattr__(self, "matroids", matroids)
        object.__setattr__(self, "bidders", tuple(tuple(J) for J in self.bidders))
        object.__setattr__(self, "distributions", tuple(self.distributions))

    @property
    def n_items(self) -> int:
        return len(self.distributions)

    @property
    def bidder_of(self) -> Dict[int, int]:
        return {x: i for i, J in enumerate(self.bidders) for x in J}


class BMUMDFile(BaseModel):
    """JSON description of a unit-demand instance."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field("bmumd", description="Label used in result tables.")
    bidders: List[List[int]] = Field(..., min_length=1, description="Item identifiers of each bidder.")
    distributions: List[ValueDistribution] = Field(..., min_length=1, description="Value distribution per item.")
    matroids: List[MatroidSpec] = Field(..., min_length=1, description="Feasibility constraint over items.")


def parse_bmumd(data: Union[dict, str]) -> BMUMDInstance:
    try:
        spec = BMUMDFile.model_validate_json(data) if isinstance(data, str) else BMUMDFile.model_validate(data)
    except ValidationError as err:
        raise InputError(f"Invalid BMUMD description: {err}") from err
    return BMUMDInstance(
        tuple(tuple(J) for J in spec.bidders), tuple(spec.distributions), tuple(build_matroid(m) for m in spec.matroids), spec.name
    )


def load_bmumd(path: Union[str, Path]) -> BMUMDInstance:
    return parse_bmumd(Path(path).read_text())


def two_by_two_uniform() -> BMUMDInstance:
    """Two bidders with two uniform(0,1) items each; a single item may be sold."""
    return BMUMDInstance(((0, 1), (2, 3)), tuple(UniformInterval(a=0.0, b=1.0) for _ in range(4)), (UniformMatroid(1, 4),), "2x2-uniform")


class VirtualWeightProfile:
    """Weight source of clipped virtual values phi_x(v_x)^+ for v_x drawn from each item's distribution."""

    is_finite = False

    def __init__(self, distributions: Sequence[ValueDistribution]):
        self.distributions = tuple(distributions)

    @property
    def n(self) -> int:
        return len(self.distributions)

    def sample_values(self, rng: np.random.Generator, trials: int) -> np.ndarray:
        return np.column_stack([d.sample(rng, trials) for d in self.distributions])

    def virtual(self, values: np.ndarray) -> np.ndarray:
        return np.column_stack([virtual_value(d, values[:, x]) for x, d in enumerate(self.distributions)])

    def sample_matrix(self, rng: np.random.Generator, trials: int) -> np.ndarray:
        return np.maximum(self.virtual(self.sample_values(rng, trials)), 0.0)


############
# OUTCOMES #
############
@dataclass(frozen=True)
class MechanismOutcome:
    allocation: ElementSet
    payments: Tuple[float, ...]
    virtual_surplus: float
    order: Tuple[int, ...] = ()
    prices: Tuple[Tuple[float, ...], ...] = ()

    @property
    def revenue(self) -> float:
        return float(sum(self.payments))


@dataclass
class DPTable:
    """V(A, i): expected revenue from bidders i.. given A was sold to bidders before i (0-based)."""

    values: Dict[Tuple[Tuple[int, ...], int], float] = field(default_factory=dict)
    orderings: Dict[Tuple[Tuple[int, ...], int], Tuple[int, ...]] = field(default_factory=dict)

    @staticmethod
    def key(A: ElementSet, i: int) -> Tuple[Tuple[int, ...], int]:
        return tuple(sorted(A)), i

    def value(self, A: ElementSet, i: int) -> float:
        return self.values[self.key(A, i)]

    def ordering(self, A: ElementSet, i: int) -> Tuple[int, ...]:
        return self.orderings[self.key(A, i)]

    def __len__(self) -> int:
        return len(self.values)


##############
# MECHANISMS #
##############
class PostedPriceMechanism:
    """
    Prices p_x = phi_x^-1(T(A, x)) from a balanced threshold policy run on virtual values, infinite
    when A + x is infeasible. Thresholds are Monte Carlo estimates on one shared sample, so prices
    are a deterministic function of (A, x) for a given seed.
    """

    def __init__(self, instance: BMUMDInstance, estimator: Optional[Estimator] = None, seed: int = 0):
        self.instance = instance
        estimator = estimator or Estimator.monte_carlo(Config.MC_INNER_TRIALS, seed)
        kind = PolicyKind.MATROID_BALANCED if len(instance.matroids) == 1 else PolicyKind.INTERSECTION_BALANCED
        self.profile = VirtualWeightProfile(instance.distributions)
        self.policy = ThresholdPolicy(PolicySpec(kind=kind, estimator=estimator), instance.matroids, self.profile)
        self._prices: Dict[Tuple[ElementSet, int], float] = {}

    @property
    def alpha(self):
        return self.policy.alpha

    def price(self, A: ElementSet, x: int) -> float:
        key = (frozenset(A), x)
        if key not in self._prices:
            T = self.policy.threshold(key[0], x)
            self._prices[key] = math.inf if T == INFINITY else float(inverse_virtual(self.instance.distributions[x], float(T)))
        return self._prices[key]

    def prices(self, A: ElementSet, items: Sequence[int]) -> Dict[int, float]:
        return {x: self.price(A, x) for x in items}

    def virtual(self, x: int, v: float) -> float:
        return float(virtual_value(self.instance.distributions[x], v))

    def check_values(self, values: Sequence[float]) -> None:
        if len(values) != self.instance.n_items:
            raise InputError(f"Expected {self.instance.n_items} bids, got {len(values)}")
        for x, (v, d) in enumerate(zip(values, self.instance.distributions)):
            lo, hi = d.support()
            if not lo <= v <= hi:
                raise InputError(f"Bid {v} for item {x} lies outside the support [{lo}, {hi}]")


def run_mechanism_m(mechanism: PostedPriceMechanism, values: Sequence[float]) -> MechanismOutcome:
    """
    Post prices to bidders in order. Each bidder takes the affordable item of highest utility
    v_x - p_x (lowest identifier on ties) and abstains when every utility is negative.
    """
    mechanism.check_values(values)
    A: ElementSet = frozenset()
    payments, posted = [], []
    for J in mechanism.instance.bidders:
        prices = mechanism.prices(A, J)
        posted.append(tuple(prices[x] for x in J))
        affordable = [x for x in J if prices[x] != math.inf and values[x] - prices[x] >= 0]
        if not affordable:
            payments.append(0.0)
            continue
        chosen = max(affordable, key=lambda x: (values[x] - prices[x], -x))
        A = A | {chosen}
        payments.append(prices[chosen])
    surplus = sum(mechanism.virtual(x, values[x]) for x in A)
    return MechanismOutcome(A, tuple(payments), surplus, prices=tuple(posted))


def build_adversary_dp(mechanism: PostedPriceMechanism) -> DPTable:
    """
    Backward induction for the revenue-minimizing order of each bidder's items: items of bidder i
    are sorted by p_x + V(A + x, i + 1) (identifier on ties) and bidder i buys the first one whose
    value reaches its price.

    Raises:
        RefusalError: If the table would exceed Config.DP_TABLE_CAP entries.
    """
    instance = mechanism.instance
    n = len(instance.bidders)
    table = DPTable()

    def solve(A: ElementSet, i: int) -> float:
        key = table.key(A, i)
        if key in table.values:
            return table.values[key]
        if len(table.values) >= Config.DP_TABLE_CAP:
            raise RefusalError(f"Adversary table exceeds {Config.DP_TABLE_CAP} entries")
        if i == n:
            table.values[key] = 0.0
            return 0.0
        J = instance.bidders[i]
        prices = mechanism.prices(A, J)
        cont = {x: (prices[x] + solve(A | {x}, i + 1)) if prices[x] != math.inf else math.inf for x in J}
        order = tuple(sorted(J, key=lambda x: (cont[x], x)))
        stay = solve(A, i + 1)
        value, reach = 0.0, 1.0
        for x in order:
            if prices[x] == math.inf:
                continue
            below = instance.distributions[x].cdf(prices[x])
            value += reach * (1.0 - below) * cont[x]
            reach *= below
        value += reach * stay
        table.values[key] = value
        table.orderings[key] = order
        return value

    solve(frozenset(), 0)
    logger.info(f"Adversary table for {instance.name}: {len(table)} entries, V(empty, 0) = {table.value(frozenset(), 0):.6g}")
    return table


def run_mechanism_copies(
    mechanism: PostedPriceMechanism,
    values: Sequence[float],
    table: Optional[DPTable] = None,
    sold: ElementSet = frozenset(),
    start: int = 0,
) -> MechanismOutcome:
    """
    Each item is its own bidder; within a bidder's items the first in the adversary order whose bid
    reaches its price wins. `sold` and `start` resume from table state (A, i): only bidders from
    `start` on take part and the allocation includes `sold`.
    """
    mechanism.check_values(values)
    table = table if table is not None else build_adversary_dp(mechanism)
    A: ElementSet = frozenset(sold)
    payments, order, posted = [], [], []
    for i, J in enumerate(mechanism.instance.bidders[start:], start):
        ordering = table.ordering(A, i)
        prices = mechanism.prices(A, J)
        order.extend(ordering)
        posted.append(tuple(prices[x] for x in J))
        winner = next((x for x in ordering if prices[x] != math.inf and values[x] >= prices[x]), None)
        if winner is None:
            payments.append(0.0)
            continue
        A = A | {winner}
        payments.append(prices[winner])
    surplus = sum(mechanism.virtual(x, values[x]) for x in A - frozenset(sold))
    return MechanismOutcome(A, tuple(payments), surplus, tuple(order), tuple(posted))


def copies_prophet_selection(mechanism: PostedPriceMechanism, values: Sequence[float], table: DPTable) -> SelectionTrace:
    """The threshold policy run on (x, phi_x(b_x)) in the adversary order."""
    policy = mechanism.policy
    trace = SelectionTrace()
    A: ElementSet = frozenset()
    for i, _ in enumerate(mechanism.instance.bidders):
        for x in table.ordering(A, i):
            step = policy.step(A, x, mechanism.virtual(x, values[x]))
            trace.steps.append(step)
            if step.accepted:
                A = A | {x}
    return trace


############
# REVENUES #
############
REVENUE_COLUMNS = [
    "R_M",
    "R_copies",
    "Phi_copies",
    "Phi_optCopies",
    "R_M_stderr",
    "R_copies_stderr",
    "Phi_copies_stderr",
    "Phi_optCopies_stderr",
    "trials",
    "seed",
]


class RevenueReport(BaseModel):
    instance: str
    trials: int
    seed: int
    alpha: float
    guarantee: float = Field(..., description="Proven lower bound on Phi_copies / Phi_optCopies.")
    R_M: float
    R_copies: float
    Phi_copies: float
    Phi_optCopies: float
    R_M_stderr: float
    R_copies_stderr: float
    Phi_copies_stderr: float
    Phi_optCopies_stderr: float
    dp_value: float = Field(..., description="V(empty, 0) from the adversary table.")

    def row(self) -> dict:
        return {column: getattr(self, column) for column in REVENUE_COLUMNS}


def _revenue_block(args) -> np.ndarray:
    mechanism, table, seed, block, size = args
    values = mechanism.profile.sample_values(stream(seed, 1, block), size)
    virtual = np.maximum(mechanism.profile.virtual(values), 0.0)
    rows = []
    for v, phi in zip(values, virtual):
        m = run_mechanism_m(mechanism, v)
        copies = run_mechanism_copies(mechanism, v, table)
        best = max_weight_feasible_intersection(mechanism.instance.matroids, phi)
        rows.append((m.revenue, copies.revenue, copies.virtual_surplus, float(set_weight(best, phi))))
    return np.asarray(rows, dtype=float).reshape(-1, 4)


def revenue_stats(
    instance: BMUMDInstance,
    trials: int,
    seed: int = 0,
    estimator: Optional[Estimator] = None,
    workers: int = 1,
    progress: bool = False,
) -> RevenueReport:
    """
    Monte Carlo estimates of the revenue of both mechanisms, the virtual surplus of the copies
    mechanism, and the optimal virtual surplus (best feasible set under clipped virtual values).
    Thresholds use substream (seed,), value draws substreams (seed, 1, block).
    """
    if trials < 1:
        raise InputError(f"Need at least one trial, got {trials}")
    mechanism = PostedPriceMechanism(instance, estimator, seed)
    table = build_adversary_dp(mechanism)
    size = Config.TRIAL_BLOCK_SIZE
    jobs = [(mechanism, table, seed, b, min(size, trials - b * size)) for b in range(math.ceil(trials / size))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(tqdm(pool.map(_revenue_block, jobs), total=len(jobs), disable=not progress, desc=instance.name))
    else:
        blocks = [_revenue_block(job) for job in tqdm(jobs, disable=not progress, desc=instance.name)]
    data = np.vstack(blocks)
    means = data.mean(axis=0)
    errs = data.std(axis=0, ddof=1) / math.sqrt(len(data)) if len(data) > 1 else np.zeros(4)
    logger.info(f"Revenue on {instance.name} over {trials} trials: R_M={means[0]:.6g}, R_copies={means[1]:.6g}")
    return RevenueReport(
        instance=instance.name,
        trials=trials,
        seed=seed,
        alpha=float(mechanism.alpha),
        guarantee=float(mechanism.policy.guarantee),
        R_M=means[0],
        R_copies=means[1],
        Phi_copies=means[2],
        Phi_optCopies=means[3],
        R_M_stderr=errs[0],
        R_copies_stderr=errs[1],
        Phi_copies_stderr=errs[2],
        Phi_optCopies_stderr=errs[3],
        dp_value=table.value(frozenset(), 0),
    )
