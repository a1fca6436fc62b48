import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Annotated, Callable, ClassVar, List, Literal, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from src.config import Config
from src.errors import InputError, RefusalError
from src.logger import logger

Number = Union[int, float, Fraction]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based substream: the same (seed, key) always yields the same generator."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def rationalize(x: float) -> Fraction:
    return Fraction(x).limit_denominator(Config.RATIONAL_DENOMINATOR)


#################
# DISTRIBUTIONS #
#################
class _Distribution(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    is_finite: ClassVar[bool] = False

    def outcomes(self, rational: bool = True) -> List[Tuple[Number, Number]]:
        raise RefusalError(f"{self.kind} weights have no finite outcome space")


class PointMass(_Distribution):
    """Degenerate distribution at a single non-negative value."""

    kind: Literal["pointMass"] = "pointMass"
    value: float = Field(..., ge=0, description="The only value in the support.")
    is_finite: ClassVar[bool] = True

    def support(self) -> Tuple[float, float]:
        return self.value, self.value

    def cdf(self, t: float) -> float:
        return 1.0 if t >= self.value else 0.0

    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value, dtype=float)

    def outcomes(self, rational: bool = True) -> List[Tuple[Number, Number]]:
        return [(rationalize(self.value) if rational else self.value, Fraction(1) if rational else 1.0)]


class FiniteDiscrete(_Distribution):
    """Finitely supported distribution; values are kept sorted ascending with duplicates merged."""

    kind: Literal["finiteDiscrete"] = "finiteDiscrete"
    values: List[float] = Field(..., min_length=1, description="Support points, all non-negative.")
    probs: List[float] = Field(..., min_length=1, description="Probabilities, one per value, summing to 1.")
    is_finite: ClassVar[bool] = True

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data):
        if not isinstance(data, dict):
            return data
        values, probs = data.get("values"), data.get("probs")
        if values is None or probs is None:
            return data
        if len(values) != len(probs):
            raise ValueError(f"Got {len(values)} values but {len(probs)} probabilities")
        if any(v < 0 for v in values):
            raise ValueError("Weight values must be non-negative")
        if any(p < 0 for p in probs):
            raise ValueError("Probabilities must be non-negative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"Probabilities sum to {math.fsum(probs)}, expected 1")
        merged = {}
        for v, p in zip(values, probs):
            merged[float(v)] = merged.get(float(v), 0.0) + float(p)
        ordered = sorted(merged)
        return {**data, "values": ordered, "probs": [merged[v] for v in ordered]}

    def support(self) -> Tuple[float, float]:
        return self.values[0], self.values[-1]

    def cdf(self, t: float) -> float:
        return math.fsum(p for v, p in zip(self.values, self.probs) if v <= t)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))

    def outcomes(self, rational: bool = True) -> List[Tuple[Number, Number]]:
        if not rational:
            return list(zip(self.values, self.probs))
        probs = [rationalize(p) for p in self.probs]
        total = sum(probs)
        return [(rationalize(v), p / total) for v, p in zip(self.values, probs)]


class UniformInterval(_Distribution):
    kind: Literal["uniformInterval"] = "uniformInterval"
    a: float = Field(..., ge=0, description="Lower end of the support.")
    b: float = Field(..., description="Upper end of the support, strictly above a.")

    @model_validator(mode="after")
    def _check_interval(self):
        if self.b <= self.a:
            raise ValueError(f"Uniform interval needs b > a, got a={self.a}, b={self.b}")
        return self

    @property
    def frozen(self):
        return stats.uniform(loc=self.a, scale=self.b - self.a)

    def support(self) -> Tuple[float, float]:
        return self.a, self.b

    def cdf(self, t: float) -> float:
        return float(self.frozen.cdf(t))

    def pdf(self, t: float) -> float:
        return float(self.frozen.pdf(t))

    def quantile(self, u: float) -> float:
        return float(self.frozen.ppf(u))

    def mean(self) -> float:
        return (self.a + self.b) / 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.frozen.rvs(size=size, random_state=rng)


class Exponential(_Distribution):
    kind: Literal["exponential"] = "exponential"
    rate: float = Field(..., gt=0, description="Rate parameter; the mean is 1/rate.")

    @property
    def frozen(self):
        return stats.expon(scale=1.0 / self.rate)

    def support(self) -> Tuple[float, float]:
        return 0.0, math.inf

    def cdf(self, t: float) -> float:
        return float(self.frozen.cdf(t))

    def pdf(self, t: float) -> float:
        return float(self.frozen.pdf(t))

    def quantile(self, u: float) -> float:
        return float(self.frozen.ppf(u))

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.frozen.rvs(size=size, random_state=rng)


class Beta(_Distribution):
    """Beta(a, b) stretched to [0, scale]. Shapes below one put unbounded density at an endpoint."""

    kind: Literal["beta"] = "beta"
    a: float = Field(..., gt=0, description="First shape parameter.")
    b: float = Field(..., gt=0, description="Second shape parameter.")
    scale: float = Field(1.0, gt=0, description="Upper end of the support.")

    @property
    def frozen(self):
        return stats.beta(self.a, self.b, scale=self.scale)

    def support(self) -> Tuple[float, float]:
        return 0.0, self.scale

    def cdf(self, t: float) -> float:
        return float(self.frozen.cdf(t))

    def pdf(self, t: float) -> float:
        return float(self.frozen.pdf(t))

    def quantile(self, u: float) -> float:
        return float(self.frozen.ppf(u))

    def mean(self) -> float:
        return self.scale * self.a / (self.a + self.b)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.frozen.rvs(size=size, random_state=rng)


WeightDistribution = Annotated[Union[PointMass, FiniteDiscrete, UniformInterval, Exponential, Beta], Field(discriminator="kind")]


def parse_shorthand(text: str) -> WeightDistribution:
    """
    Inline distribution syntax accepted by the CLI.

    `bernoulli:v,p` is finiteDiscrete({0: 1-p, v: p}); `point:c` is a point mass;
    `uniform:a,b`, `exp:rate` and `beta:a,b[,scale]` are the continuous kinds.
    """
    name, _, params = text.partition(":")
    try:
        args = [float(x) for x in params.split(",")] if params else []
        if name == "bernoulli" and len(args) == 2:
            v, p = args
            return FiniteDiscrete(values=[0.0, v], probs=[1.0 - p, p])
        if name == "point" and len(args) == 1:
            return PointMass(value=args[0])
        if name == "uniform" and len(args) == 2:
            return UniformInterval(a=args[0], b=args[1])
        if name == "exp" and len(args) == 1:
            return Exponential(rate=args[0])
        if name == "beta" and len(args) in (2, 3):
            return Beta(a=args[0], b=args[1], scale=args[2] if len(args) == 3 else 1.0)
    except ValueError as err:
        raise InputError(f"Bad distribution shorthand '{text}': {err}") from err
    raise InputError(f"Unknown distribution shorthand '{text}'")


############
# PROFILES #
############
class WeightSource(Protocol):
    """Anything that can produce weight draws for a ground set of `n` elements."""

    @property
    def n(self) -> int: ...

    @property
    def is_finite(self) -> bool: ...

    def sample_matrix(self, rng: np.random.Generator, trials: int) -> np.ndarray: ...


class WeightProfile(BaseModel):
    """One independent weight distribution per ground element."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    distributions: List[WeightDistribution] = Field(..., min_length=1, description="Distribution of w(x) for x = 0..n-1.")

    @classmethod
    def of(cls, *distributions) -> "WeightProfile":
        return cls(distributions=[parse_shorthand(d) if isinstance(d, str) else d for d in distributions])

    @classmethod
    def point_masses(cls, values: Sequence[float]) -> "WeightProfile":
        return cls(distributions=[PointMass(value=v) for v in values])

    @property
    def n(self) -> int:
        return len(self.distributions)

    @property
    def is_finite(self) -> bool:
        return all(d.is_finite for d in self.distributions)

    def outcome_count(self) -> int:
        count = 1
        for d in self.distributions:
            count *= len(d.values) if isinstance(d, FiniteDiscrete) else 1 if isinstance(d, PointMass) else 0
        return count

    def sample_matrix(self, rng: np.random.Generator, trials: int) -> np.ndarray:
        if trials < 1:
            raise InputError(f"Need at least one trial, got {trials}")
        return np.column_stack([d.sample(rng, trials) for d in self.distributions])


def sample(profile: WeightSource, rng: np.random.Generator) -> Tuple[float, ...]:
    """One weight assignment, each element drawn from its own distribution."""
    return tuple(float(v) for v in profile.sample_matrix(rng, 1)[0])


##################
# OUTCOME TABLES #
##################
@dataclass(frozen=True)
class OutcomeTable:
    """The full product space of a finite profile: (weight assignment, probability) pairs."""

    rows: Tuple[Tuple[Number, ...], ...]
    probs: Tuple[Number, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def expectation(self, f: Callable[[Tuple[Number, ...]], Number]) -> Number:
        return sum((p * f(row) for row, p in zip(self.rows, self.probs)), 0)


def enumerate_outcomes(profile: WeightProfile, rational: bool = True, limit: Optional[int] = None) -> OutcomeTable:
    """
    Exhaustive outcome table of a finite profile.

    Args:
        profile (WeightProfile): Profile made of pointMass / finiteDiscrete kinds only.
        rational (bool): Use exact Fractions for values and probabilities.
        limit (Optional[int]): Largest product size accepted; defaults to Config.ENUMERATION_LIMIT.

    Raises:
        RefusalError: If a continuous kind is present or the product space is too large.
    """
    limit = Config.ENUMERATION_LIMIT if limit is None else limit
    if not profile.is_finite:
        raise RefusalError("Cannot enumerate outcomes of a profile with continuous weights")
    size = profile.outcome_count()
    if size > limit:
        raise RefusalError(f"Outcome space has {size} > {limit} outcomes")

    per_element = [d.outcomes(rational) for d in profile.distributions]
    rows, probs = [], []
    for combo in product(*per_element):
        rows.append(tuple(v for v, _ in combo))
        p = Fraction(1) if rational else 1.0
        for _, q in combo:
            p *= q
        probs.append(p)
    logger.debug(f"Enumerated {len(rows)} outcomes over {profile.n} elements")
    return OutcomeTable(tuple(rows), tuple(probs))


##############
# ESTIMATORS #
##############
class Estimator(BaseModel):
    """How expectations over a fresh weight draw are computed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["exact", "monteCarlo"] = Field("exact", description="Exact enumeration or Monte Carlo averaging.")
    trials: int = Field(default_factory=lambda: Config.MC_INNER_TRIALS, ge=1, description="Monte Carlo draws per expectation.")
    seed: int = Field(0, description="Seed of the Monte Carlo draws.")
    common_random_numbers: bool = Field(True, description="Reuse one set of draws for every expectation.")
    rational: bool = Field(True, description="Exact mode: Fraction arithmetic instead of floats.")

    @classmethod
    def monte_carlo(cls, trials: int, seed: int, common_random_numbers: bool = True) -> "Estimator":
        return cls(mode="monteCarlo", trials=trials, seed=seed, common_random_numbers=common_random_numbers)


@dataclass(frozen=True)
class Estimate:
    value: Number
    stderr: float = 0.0
    trials: int = 0

    def __float__(self) -> float:
        return float(self.value)

    @property
    def exact(self) -> bool:
        return self.trials == 0


@dataclass
class WeightSample:
    """
    A weighted set of weight assignments: the outcome table in exact mode, i.i.d. draws otherwise.
    Expectations of any per-row quantity are taken against it.
    """

    rows: Sequence[Sequence[Number]]
    probs: Optional[Sequence[Number]] = None

    def __len__(self) -> int:
        return len(self.rows)

    def expectation(self, values: Sequence[Number]) -> Estimate:
        if self.probs is not None:
            return Estimate(sum((p * v for p, v in zip(self.probs, values)), 0))
        data = np.asarray(values, dtype=float)
        stderr = float(data.std(ddof=1) / math.sqrt(len(data))) if len(data) > 1 else 0.0
        return Estimate(float(data.mean()), stderr, len(data))


def weight_sample(source: WeightSource, estimator: Estimator, key: Tuple[int, ...] = ()) -> WeightSample:
    if estimator.mode == "exact":
        if not isinstance(source, WeightProfile):
            raise RefusalError("Exact expectations need an enumerable weight profile")
        table = enumerate_outcomes(source, rational=estimator.rational)
        return WeightSample(table.rows, table.probs)
    return WeightSample(source.sample_matrix(stream(estimator.seed, *key), estimator.trials))


def expect_max(profile: WeightSource, estimator: Estimator = Estimator()) -> Estimate:
    """E[max_x w(x)], exactly from the outcome table or as a Monte Carlo estimate with its standard error."""
    draws = weight_sample(profile, estimator)
    return draws.expectation([max(row) for row in draws.rows])
