import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import InputError
from src.logger import logger
from src.tools.matroid.tool.matroid import (
    ElementSet,
    GraphicMatroid,
    Matroid,
    PartitionMatroid,
    UniformMatroid,
    all_subsets,
)
from src.tools.matroid.tool.schemas import MatroidSpec, build_matroid, describe_matroid
from src.tools.remainder.tool.remainder import as_tuple, feasible_family
from src.tools.weights.tool.weights import FiniteDiscrete, PointMass, WeightProfile


@dataclass(frozen=True)
class Instance:
    """One or more matroids over a shared ground set together with a weight profile."""

    matroids: Tuple[Matroid, ...]
    profile: WeightProfile
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "matroids", as_tuple(self.matroids))
        if self.profile.n != self.matroids[0].ground_set.size:
            raise InputError(f"{self.name}: profile has {self.profile.n} distributions for {self.n} elements")

    @property
    def n(self) -> int:
        return self.matroids[0].ground_set.size

    @property
    def p(self) -> int:
        return len(self.matroids)


##################
# INSTANCE FILES #
##################
class InstanceFile(BaseModel):
    """JSON instance description: the matroid(s) and one distribution per element."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field("instance", description="Label used in result tables.")
    matroids: List[MatroidSpec] = Field(..., min_length=1, description="One matroid, or several for an intersection.")
    profile: WeightProfile = Field(..., description="Weight distribution per element.")


def parse_instance(data: Union[dict, str]) -> Instance:
    try:
        spec = InstanceFile.model_validate_json(data) if isinstance(data, str) else InstanceFile.model_validate(data)
    except ValidationError as err:
        raise InputError(f"Invalid instance description: {err}") from err
    return Instance(tuple(build_matroid(m) for m in spec.matroids), spec.profile, spec.name)


def load_instance(path: Union[str, Path]) -> Instance:
    return parse_instance(Path(path).read_text())


def dump_instance(instance: Instance) -> str:
    payload = {
        "name": instance.name,
        "matroids": [describe_matroid(M) for M in instance.matroids],
        "profile": json.loads(instance.profile.model_dump_json()),
    }
    return json.dumps(payload, indent=2)


##############
# GENERATORS #
##############
def bernoulli(value: float, p: float) -> FiniteDiscrete:
    return FiniteDiscrete(values=[0.0, value], probs=[1.0 - p, p])


def gen_rank_one_tight(n: int) -> Instance:
    """
    Two elements, pick one: the first is always worth 1, the second is worth n with
    probability 1/n and 0 otherwise. The prophet gets 2 - 1/n, any gambler at most 1.
    """
    if n < 2:
        raise InputError(f"Rank-one tight instance needs n >= 2, got {n}")
    profile = WeightProfile(distributions=[PointMass(value=1.0), bernoulli(float(n), 1.0 / n)])
    return Instance((UniformMatroid(1, 2, labels=["elem1", "elem2"]),), profile, f"rank1-tight-{n}")


def _is_prime(q: int) -> bool:
    return q >= 2 and all(q % d for d in range(2, int(q**0.5) + 1))


def _digit_count(q: int, rows: int) -> int:
    digits = 1
    while q**digits < rows:
        digits += 1
    return digits


def gen_intersection_tight(q: int, rows: Optional[int] = None) -> Instance:
    """
    Elements (i, j) for i < rows and j < q get identifier i * q + j, and every weight is 1 with
    probability 1/q and 0 otherwise. Rows default to q**q. The feasible sets are exactly the
    subsets of a single row.

    Row indices are written in base q with d digits. Matroid 0 has the columns as blocks. For each
    digit k and multiplier x in 1..q-1 there is a partition matroid placing (i, j) in block
    (j + x * digit_k(i)) mod q. With q prime, elements of two different rows share a block in
    some matroid. That is 1 + d * (q - 1) matroids, q of them when rows <= q.

    Raises:
        InputError: If q is not a prime at most 3.
    """
    if not _is_prime(q) or q > 3:
        raise InputError(f"Intersection tight instance needs a prime q <= 3, got {q}")
    rows = q**q if rows is None else rows
    if rows < 1:
        raise InputError(f"Need at least one row, got {rows}")
    labels = [f"({i},{j})" for i in range(rows) for j in range(q)]
    shifts = [[0] * rows]
    for k in range(_digit_count(q, rows)):
        for x in range(1, q):
            shifts.append([x * (i // q**k % q) for i in range(rows)])
    matroids = [PartitionMatroid([[i * q + (c - shift[i]) % q for i in range(rows)] for c in range(q)], [1] * q, labels) for shift in shifts]
    profile = WeightProfile(distributions=[bernoulli(1.0, 1.0 / q)] * (rows * q))
    logger.info(f"Built intersection tight instance q={q} with {rows * q} elements and {len(matroids)} matroids")
    return Instance(tuple(matroids), profile, f"intersection-tight-{q}" + ("" if rows == q**q else f"-rows{rows}"))


@dataclass(frozen=True)
class FamilyComparison:
    contains_rows: bool
    equal: bool
    witness: Optional[ElementSet] = None


def compare_row_family(instance: Instance, q: int) -> FamilyComparison:
    """
    Compare the feasible family of an intersection tight instance with the family of sets whose
    elements share a first coordinate. The witness is a feasible set spanning two rows.
    """
    rows = instance.n // q
    row_family = set()
    for i in range(rows):
        row_family.update(all_subsets(range(i * q, (i + 1) * q)))
    feasible = {frozenset(S) for S in feasible_family(instance.matroids)}
    witness = next((S for S in sorted(feasible - row_family, key=lambda s: (len(s), sorted(s)))), None)
    return FamilyComparison(contains_rows=row_family <= feasible, equal=feasible == row_family, witness=witness)


def gen_random_rank_one(rng: np.random.Generator, max_n: int = 6, max_support: int = 3, max_value: int = 10) -> Instance:
    """Pick-one instance with 2..max_n elements, each finite-discrete with small integer support."""
    n = int(rng.integers(2, max_n + 1))
    distributions = []
    for _ in range(n):
        size = int(rng.integers(1, max_support + 1))
        values = rng.choice(max_value + 1, size=size, replace=False)
        counts = rng.integers(1, 5, size=size)
        distributions.append(FiniteDiscrete(values=[float(v) for v in values], probs=[float(c) / counts.sum() for c in counts]))
    return Instance((UniformMatroid(1, n),), WeightProfile(distributions=distributions), f"random-rank1-n{n}")


def gen_random_partition_pair(rng: np.random.Generator, n: int = 6, blocks: int = 3) -> Instance:
    """Intersection of two random partition matroids with bernoulli weights."""
    matroids = []
    for _ in range(2):
        assignment = rng.integers(0, blocks, size=n)
        parts = [[x for x in range(n) if assignment[x] == b] for b in range(blocks)]
        parts = [part for part in parts if part]
        matroids.append(PartitionMatroid(parts, [1] * len(parts)))
    distributions = [bernoulli(float(rng.integers(1, 5)), 0.5) for _ in range(n)]
    return Instance(tuple(matroids), WeightProfile(distributions=distributions), f"random-partition-pair-n{n}")


##########
# CORPUS #
##########
def builtin_corpus() -> List[Instance]:
    """Small exact-mode instances covering the uniform, partition and graphic families plus intersections."""
    triangle = [(0, 1), (1, 2), (0, 2)]
    k4 = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    return [
        Instance((UniformMatroid(2, 3),), WeightProfile.point_masses([3, 2, 1]), "uniform-2-3-points"),
        Instance((GraphicMatroid(triangle),), WeightProfile.of("bernoulli:2,0.5", "bernoulli:3,0.5", "bernoulli:1,0.5"), "k3"),
        Instance(
            (PartitionMatroid([[0, 1], [2, 3, 4]], [1, 2]),),
            WeightProfile.of("bernoulli:4,0.5", "point:1", "bernoulli:2,0.5", "bernoulli:3,0.25", "point:1"),
            "partition-5",
        ),
        Instance((UniformMatroid(2, 4),), WeightProfile.of("bernoulli:1,0.5", "bernoulli:2,0.5", "bernoulli:3,0.5", "bernoulli:4,0.5"), "uniform-2-4"),
        Instance((GraphicMatroid(k4),), WeightProfile.of(*["bernoulli:1,0.5", "bernoulli:2,0.5"] * 3), "k4"),
        gen_rank_one_tight(5),
        gen_intersection_tight(2),
    ]
