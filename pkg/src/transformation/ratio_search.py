"""
Ratio objectives solved by reward transformation and bisection.

The adversary maximizes numerator / (numerator + denominator) over long-run
reward sums. For a fixed rho the transformed reward
(1 - rho) * numerator - rho * denominator gives a standard average-reward MDP
whose optimal value is decreasing in rho; its root is the optimal ratio.
"""
import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from mdp.core import LinearWeight, Policy, build_mdp, enumerate_states, relative_value_iteration
from models.protocols import MAX_ALPHA, ModelParams
from models.tables import ProtocolModel, get_model, honest_policy

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_VALUE_TOL = 1e-9
DEFAULT_MAX_ITER = 100000
# Value iteration settings for the attack-pays checks of the threshold search.
PAYOFF_VALUE_TOL = 1e-11
PAYOFF_MARGIN = 1e-10
# Thresholds are reported to three decimals.
THRESHOLD_RESOLUTION = 1e-3


class BracketError(RuntimeError):
    """The transformed value does not change sign over [0, 1]."""

    def __init__(self, message, value_at_zero, value_at_one):
        super().__init__(message)
        self.value_at_zero = value_at_zero
        self.value_at_one = value_at_one


class ObjectiveKind(Enum):
    CHAIN_QUALITY = "quality"
    CENSORSHIP_RESILIENCE = "censorship"


@dataclass(frozen=True)
class RatioObjective:
    kind: ObjectiveKind
    numerator: str
    denominator: str = "b_h"

    @property
    def name(self):
        return self.kind.value

    def weight(self, rho):
        coefficients = {"b_h": 0.0, "b_a": 0.0, "o_h": 0.0}
        coefficients[self.numerator] += 1.0 - rho
        coefficients[self.denominator] -= rho
        return LinearWeight(c_h=coefficients["b_h"], c_a=coefficients["b_a"], c_o=coefficients["o_h"])

    def ratio(self, rates):
        """Adversarial ratio of a RewardRates triple; 0 when nothing flows."""
        top = getattr(rates, self.numerator)
        total = top + getattr(rates, self.denominator)
        return top / total if total > 0 else 0.0

    def metric(self, rates):
        return 1.0 - self.ratio(rates)

    @classmethod
    def from_name(cls, name):
        try:
            kind = ObjectiveKind(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown metric '{name}'. Expected 'quality' or 'censorship'") from None
        return CHAIN_QUALITY if kind is ObjectiveKind.CHAIN_QUALITY else CENSORSHIP_RESILIENCE


CHAIN_QUALITY = RatioObjective(ObjectiveKind.CHAIN_QUALITY, numerator="b_a")
CENSORSHIP_RESILIENCE = RatioObjective(ObjectiveKind.CENSORSHIP_RESILIENCE, numerator="o_h")
OBJECTIVES = (CHAIN_QUALITY, CENSORSHIP_RESILIENCE)


@dataclass
class SolveOutcome:
    rho_bar: float
    metric: float
    policy: Policy
    bisection_steps: int
    final_bracket_width: float
    value_at_zero: Optional[float] = None
    value_at_one: Optional[float] = None
    table: object = field(default=None, repr=False)


@dataclass
class SweepPoint:
    alpha: float
    metric: float
    rho_bar: float
    bisection_steps: int
    policy_digest: str
    error: Optional[str] = None


@dataclass
class ThresholdOutcome:
    """Smallest alpha at which attacking pays; attackable is False when none up to 1/3."""
    threshold: float
    attackable: bool
    checks: int

    def describe(self):
        return f"{self.threshold:.4f}" if self.attackable else "none up to 1/3"


def _resolve_model(model):
    return model if isinstance(model, ProtocolModel) else get_model(model)


def solve_ratio(model, params, objective, tol=DEFAULT_TOL, value_tol=DEFAULT_VALUE_TOL, max_iter=DEFAULT_MAX_ITER):
    """
    Optimal adversarial ratio rho_bar and the resulting metric 1 - rho_bar.

    The returned policy is the one solved at the last bisection point with a
    positive value, so its own ratio lies inside the final bracket.
    """
    model = _resolve_model(model)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    try:
        start_time = time.time()
        table = enumerate_states(model, params)
        if params.alpha == 0:
            logger.info(f"{model} {objective.name} at alpha=0: no adversary, metric 1")
            return SolveOutcome(0.0, 1.0, honest_policy(model, table, params), 0, 0.0, table=table)

        mdp = build_mdp(model, params, table=table)
        at_zero = relative_value_iteration(mdp.with_weight(objective.weight(0.0)), value_tol, max_iter)
        if at_zero.value <= value_tol:
            logger.info(f"{model} {objective.name} alpha={params.alpha}: no policy lets the "
                        f"{objective.numerator} reward flow, metric 1")
            return SolveOutcome(0.0, 1.0, at_zero.policy, 0, 0.0, at_zero.value, None, table)

        at_one = relative_value_iteration(mdp.with_weight(objective.weight(1.0)), value_tol, max_iter,
                                          initial_values=at_zero.state_values)
        if at_one.value >= 0:
            raise BracketError(
                f"{model} {objective.name} alpha={params.alpha}: no sign change on [0, 1] "
                f"(v0={at_zero.value:.3e}, v1={at_one.value:.3e})",
                at_zero.value, at_one.value,
            )

        lo, hi = 0.0, 1.0
        policy = at_zero.policy
        values = at_zero.state_values
        steps = 0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            result = relative_value_iteration(mdp.with_weight(objective.weight(mid)), value_tol, max_iter,
                                              initial_values=values)
            values = result.state_values
            steps += 1
            if result.value > 0:
                lo, policy = mid, result.policy
            else:
                hi = mid
            logger.debug(f"bisection step {steps}: rho={mid:.6f} value={result.value:.3e}")

        rho_bar = 0.5 * (lo + hi)
        logger.info(f"Solved {model} {objective.name} alpha={params.alpha:.6f}: metric={1.0 - rho_bar:.6f} "
                    f"in {steps} steps ({time.time() - start_time:.2f}s)")
        return SolveOutcome(rho_bar, 1.0 - rho_bar, policy, steps, hi - lo, at_zero.value, at_one.value, table)
    except Exception as e:
        logger.error(f"Error solving {model} {objective.name} at alpha={params.alpha}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def alpha_grid(alpha_start, alpha_end, alpha_step):
    """Grid points start, start + step, ... not beyond end."""
    if not 0.0 <= alpha_start <= alpha_end <= MAX_ALPHA + 1e-12:
        raise ValueError(f"Expected 0 <= alpha_start <= alpha_end <= 1/3, got [{alpha_start}, {alpha_end}]")
    if alpha_step <= 0:
        raise ValueError(f"alpha_step must be positive, got {alpha_step}")
    count = int(math.floor((alpha_end - alpha_start) / alpha_step + 1e-9)) + 1
    return [round(alpha_start + i * alpha_step, 10) for i in range(count)]


def sweep(model, objective, alpha_start, alpha_end, alpha_step, tol=DEFAULT_TOL, gamma=0.5, l_max=20,
          threads=1, value_tol=DEFAULT_VALUE_TOL, max_iter=DEFAULT_MAX_ITER):
    """
    One solve per grid point, in grid order. A failing point is recorded with
    its error and the sweep continues.
    """
    model = _resolve_model(model)
    alphas = alpha_grid(alpha_start, alpha_end, alpha_step)
    logger.info(f"Sweeping {model} {objective.name} over {len(alphas)} points (threads={threads})")

    def solve_point(alpha):
        try:
            outcome = solve_ratio(model, ModelParams(alpha, gamma, l_max), objective, tol, value_tol, max_iter)
            return SweepPoint(alpha, outcome.metric, outcome.rho_bar, outcome.bisection_steps,
                              outcome.policy.digest())
        except Exception as e:
            logger.error(f"Sweep point {model} {objective.name} alpha={alpha} failed: {str(e)}")
            return SweepPoint(alpha, math.nan, math.nan, 0, "", error=str(e))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        points = list(executor.map(solve_point, alphas))

    previous = None
    for point in points:
        if point.error is not None:
            continue
        if previous is not None and point.metric > previous.metric + tol:
            logger.warning(f"{model} {objective.name}: metric rises from {previous.metric:.6f} at "
                           f"alpha={previous.alpha} to {point.metric:.6f} at alpha={point.alpha}")
        previous = point
    return points


def attack_pays(model, alpha, tol=0.0, gamma=0.5, l_max=20, max_iter=DEFAULT_MAX_ITER):
    """
    True when some policy commits an adversarial share above alpha + tol,
    i.e. pushes chain quality below 1 - alpha - tol.
    """
    if alpha <= 0:
        return False
    model = _resolve_model(model)
    params = ModelParams(alpha, gamma, l_max)
    mdp = build_mdp(model, params, weight=CHAIN_QUALITY.weight(alpha + tol))
    result = relative_value_iteration(mdp, PAYOFF_VALUE_TOL, max_iter)
    logger.debug(f"attack check {model} alpha={alpha:.6f} tol={tol}: value={result.value:.3e}")
    return result.value > PAYOFF_MARGIN


def attack_threshold(model, tol=DEFAULT_TOL, gamma=0.5, l_max=20, max_iter=DEFAULT_MAX_ITER,
                     resolution=THRESHOLD_RESOLUTION):
    """
    Smallest alpha on the resolution grid at which the optimal adversary
    pushes chain quality below 1 - alpha - tol.

    Threshold 0 when any gain at all is possible at alpha = tol; such
    protocols lose quality for every alpha > 0.
    """
    model = _resolve_model(model)
    if tol <= 0 or resolution <= 0:
        raise ValueError(f"tol and resolution must be positive, got {tol} and {resolution}")
    try:
        logger.info(f"Searching attack threshold of {model} (tol={tol}, resolution={resolution})")
        checks = 1
        if not attack_pays(model, MAX_ALPHA, tol, gamma, l_max, max_iter):
            logger.info(f"{model}: attacking never pays up to alpha=1/3")
            return ThresholdOutcome(MAX_ALPHA, False, checks)
        checks += 1
        if attack_pays(model, tol, 0.0, gamma, l_max, max_iter):
            logger.info(f"{model}: attacking pays at alpha={tol}, threshold 0")
            return ThresholdOutcome(0.0, True, checks)

        def grid_alpha(k):
            return min(round(k * resolution, 10), MAX_ALPHA)

        # attacking pays at index hi and not at lo
        lo, hi = 0, int(math.ceil(MAX_ALPHA / resolution))
        while hi - lo > 1:
            mid = (lo + hi) // 2
            checks += 1
            if attack_pays(model, grid_alpha(mid), tol, gamma, l_max, max_iter):
                hi = mid
            else:
                lo = mid
        threshold = grid_alpha(hi)
        logger.info(f"{model}: attack threshold {threshold:.4f} after {checks} checks")
        return ThresholdOutcome(threshold, True, checks)
    except Exception as e:
        logger.error(f"Error searching attack threshold of {model}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def improvement_factor(original, countermeasure):
    """How many times larger the countermeasure's metric is."""
    if original <= 0:
        raise ValueError(f"original metric must be positive, got {original}")
    return countermeasure / original
