import math
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from src.config import Config
from src.errors import InputError
from src.logger import logger
from src.tools.harness.tool.adversary import Adversary, AdversarySpec
from src.tools.harness.tool.instances import Instance
from src.tools.matroid.tool.matroid import set_weight
from src.tools.policy.tool.policy import SelectionTrace, ThresholdPolicy
from src.tools.remainder.tool.remainder import max_weight_feasible_intersection
from src.tools.weights.tool.weights import Estimate, Estimator, Number, stream, weight_sample

CSV_COLUMNS = ["instance", "policy", "adversary", "trials", "gambler_mean", "gambler_stderr", "prophet_mean", "prophet_stderr", "ratio"]


class SimulationReport(BaseModel):
    """Gambler against prophet on one instance, policy and adversary."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    instance: str
    policy: str
    adversary: str
    mode: Literal["exact", "monteCarlo"]
    seed: int
    trials: int = Field(..., description="Monte Carlo trials, or the number of enumerated outcomes in exact mode.")
    gambler_mean: float
    gambler_stderr: float = 0.0
    prophet_mean: float
    prophet_stderr: float = 0.0
    ratio: Optional[float] = Field(None, description="gambler_mean / prophet_mean when the prophet gets anything.")
    guarantee: float = Field(..., description="Proven lower bound on the ratio for this policy.")
    guarantee_exact: Optional[Fraction] = Field(None, exclude=True)
    gambler_exact: Optional[Fraction] = Field(None, exclude=True)
    prophet_exact: Optional[Fraction] = Field(None, exclude=True)
    traces: Optional[List[str]] = Field(None, description="Per-trial traces as JSON lines, when requested.")

    def row(self) -> dict:
        return {column: getattr(self, column) for column in CSV_COLUMNS}

    def meets_guarantee(self, sigma: float = 0.0) -> bool:
        """Exact reports compare the exact values; otherwise allow `sigma` combined standard errors."""
        if self.gambler_exact is not None and self.prophet_exact is not None and self.guarantee_exact is not None:
            return self.gambler_exact >= self.guarantee_exact * self.prophet_exact
        slack = self.gambler_mean - self.guarantee * self.prophet_mean
        return slack >= -sigma * math.hypot(self.gambler_stderr, self.guarantee * self.prophet_stderr)


##################
# PROPHET VALUES #
##################
def prophet_value(instance: Instance, estimator: Estimator = Estimator()) -> Estimate:
    """E[w(MAX(w))], the expected weight of the best feasible set."""
    draws = weight_sample(instance.profile, estimator)
    return draws.expectation([set_weight(max_weight_feasible_intersection(instance.matroids, row), row) for row in draws.rows])


##########
# TRIALS #
##########
def run_trial(policy: ThresholdPolicy, adversary: Adversary, w, rng: Optional[np.random.Generator] = None) -> SelectionTrace:
    """One online run: the adversary reveals elements one at a time and the policy decides on each."""
    trace = SelectionTrace()
    remaining = frozenset(policy.matroids[0].ground)
    accepted = frozenset()
    adversary.begin(rng)
    while remaining:
        x = adversary.choose(remaining, accepted)
        step = policy.step(accepted, x, w[x])
        trace.steps.append(step)
        remaining = remaining - {x}
        if step.accepted:
            accepted = accepted | {x}
    return trace


def _simulate_block(args) -> Tuple[List[float], List[float], List[str]]:
    instance, policy, adversary_spec, seed, block, size, keep_traces = args
    rng = stream(seed, block)
    adversary = Adversary(adversary_spec, policy)
    W = instance.profile.sample_matrix(rng, size)
    gambler, prophet, traces = [], [], []
    for row in W:
        trace = run_trial(policy, adversary, row, rng)
        gambler.append(float(trace.payoff))
        prophet.append(float(set_weight(max_weight_feasible_intersection(instance.matroids, row), row)))
        if keep_traces:
            traces.append(trace.to_jsonl())
    return gambler, prophet, traces


def _mean_stderr(values: np.ndarray) -> Tuple[float, float]:
    stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), stderr


def simulate(
    instance: Instance,
    policy: ThresholdPolicy,
    adversary: AdversarySpec,
    trials: int = 1,
    seed: int = 0,
    mode: Literal["exact", "monteCarlo"] = "monteCarlo",
    workers: int = 1,
    keep_traces: bool = False,
    progress: bool = False,
) -> SimulationReport:
    """
    Gambler versus prophet on paired weight draws.

    Monte Carlo trials run in blocks of Config.TRIAL_BLOCK_SIZE; block b draws from the substream
    (seed, b), so results do not depend on `workers`. Exact mode enumerates every outcome through
    a game tree over (unrevealed, accepted) states and ignores `trials`.

    Raises:
        RefusalError: If exact mode or the worst-case adversary needs an enumeration that is too large.
    """
    if policy.matroids != instance.matroids:
        raise InputError(f"Policy was built for a different instance than {instance.name}")
    runner = Adversary(adversary, policy)
    common = dict(instance=instance.name, policy=policy.name, adversary=runner.name, mode=mode, seed=seed, guarantee=float(policy.guarantee), guarantee_exact=Fraction(policy.guarantee))

    if mode == "exact":
        tree = runner.game_tree()
        gambler = tree.value(frozenset(instance.matroids[0].ground))
        prophet = prophet_value(instance, Estimator(rational=True)).value
        ratio = float(Fraction(gambler) / Fraction(prophet)) if prophet > 0 else None
        logger.info(f"Exact simulation of {instance.name}: gambler {float(gambler):.6g}, prophet {float(prophet):.6g}, {tree.states} states")
        return SimulationReport(
            **common,
            trials=instance.profile.outcome_count(),
            gambler_mean=float(gambler),
            prophet_mean=float(prophet),
            ratio=ratio,
            gambler_exact=Fraction(gambler),
            prophet_exact=Fraction(prophet),
        )

    if trials < 1:
        raise InputError(f"Need at least one trial, got {trials}")
    size = Config.TRIAL_BLOCK_SIZE
    jobs = [(instance, policy, adversary, seed, b, min(size, trials - b * size), keep_traces) for b in range(math.ceil(trials / size))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(_simulate_block, jobs), total=len(jobs), disable=not progress, desc=instance.name))
    else:
        results = [_simulate_block(job) for job in tqdm(jobs, disable=not progress, desc=instance.name)]

    gambler = np.concatenate([np.asarray(r[0]) for r in results])
    prophet = np.concatenate([np.asarray(r[1]) for r in results])
    g_mean, g_err = _mean_stderr(gambler)
    p_mean, p_err = _mean_stderr(prophet)
    logger.info(f"Simulated {trials} trials of {instance.name}: gambler {g_mean:.6g} ± {g_err:.3g}, prophet {p_mean:.6g} ± {p_err:.3g}")
    return SimulationReport(
        **common,
        trials=trials,
        gambler_mean=g_mean,
        gambler_stderr=g_err,
        prophet_mean=p_mean,
        prophet_stderr=p_err,
        ratio=g_mean / p_mean if p_mean > 0 else None,
        traces=[t for r in results for t in r[2]] if keep_traces else None,
    )
