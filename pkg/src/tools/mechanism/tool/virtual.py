import math
from typing import Annotated, Tuple, Union

import numpy as np
from pydantic import Field
from scipy.optimize import brentq

from src.config import Config
from src.errors import InputError
from src.tools.weights.tool.weights import Beta, Exponential, UniformInterval

ValueDistribution = Annotated[Union[UniformInterval, Exponential, Beta], Field(discriminator="kind")]

_TAIL = 1e-12


def virtual_value(distribution: ValueDistribution, v):
    """
    phi(v) = v - (1 - F(v)) / f(v). Closed forms for the uniform and exponential kinds, scipy otherwise.
    Accepts scalars or numpy arrays.
    """
    if isinstance(distribution, UniformInterval):
        return 2 * v - distribution.b
    if isinstance(distribution, Exponential):
        return v - 1.0 / distribution.rate
    frozen = distribution.frozen
    with np.errstate(divide="ignore", invalid="ignore"):
        return v - frozen.sf(v) / frozen.pdf(v)


def _interior(distribution: ValueDistribution) -> Tuple[float, float]:
    """Quantiles just inside the support, where the density is finite and positive."""
    return distribution.quantile(_TAIL), distribution.quantile(1 - _TAIL)


def inverse_virtual(distribution: ValueDistribution, t: float) -> float:
    """
    The value v with phi(v) = t. Thresholds below phi(support min) give the support minimum,
    thresholds above phi(support max) give an infinite (unaffordable) price.
    """
    if t == math.inf:
        return math.inf
    lo, hi = distribution.support()
    if isinstance(distribution, (UniformInterval, Exponential)):
        if t <= virtual_value(distribution, lo):
            return lo
        if math.isfinite(hi) and t > virtual_value(distribution, hi):
            return math.inf
        if isinstance(distribution, UniformInterval):
            return min((t + distribution.b) / 2, hi)
        return t + 1.0 / distribution.rate
    left, right = _interior(distribution)
    if t <= float(virtual_value(distribution, left)):
        return lo
    if t >= float(virtual_value(distribution, right)):
        return math.inf
    return brentq(lambda v: float(virtual_value(distribution, v)) - t, left, right, xtol=1e-12)


def regularity_check(distribution: ValueDistribution, grid_size: int = 64) -> bool:
    """phi non-decreasing (within 1e-12) on an evenly spaced interior grid of at least Config.REGULARITY_GRID_MIN points."""
    size = max(grid_size, Config.REGULARITY_GRID_MIN)
    grid = np.linspace(*_interior(distribution), size)
    phi = np.array([float(virtual_value(distribution, float(v))) for v in grid])
    return bool(np.all(np.diff(phi) > -1e-12))


def require_regular(distribution: ValueDistribution, grid_size: int = 64) -> None:
    if not regularity_check(distribution, grid_size):
        raise InputError(f"{distribution.kind} value distribution is not regular; ironing is not supported")
