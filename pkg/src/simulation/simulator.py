"""
Seeded Monte-Carlo execution of a protocol model under a fixed policy.

Each run owns a Philox stream derived from SeedSequence(seed).spawn(runs);
run i always uses the i-th child, so results do not depend on how many
worker threads execute the runs.
"""
import bisect
import logging
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from mdp.core import Policy, build_mdp, evaluate_policy_exact
from models.protocols import Leader, ModelParams
from models.tables import ProtocolModel, get_model, honest_policy
from transformation.ratio_search import RatioObjective, solve_ratio

logger = logging.getLogger(__name__)

DEFAULT_ERROR_BOUND = 0.06


class PolicyMismatchError(ValueError):
    """Policy does not cover the model's state space."""


@dataclass
class SimConfig:
    protocol: str
    params: ModelParams
    policy: Union[Policy, str] = "honest"
    views_per_run: int = 4000
    runs: int = 6
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.views_per_run < 1:
            raise ValueError(f"views_per_run must be >= 1, got {self.views_per_run}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass
class RunTotals:
    b_h: int
    b_a: int
    o_h: int
    honest_views: int
    adversarial_views: int

    @property
    def quality(self):
        return _quality(self.b_h, self.b_a)

    @property
    def censorship(self):
        return _quality(self.b_h, self.o_h)


def _quality(b_h, other):
    total = b_h + other
    return b_h / total if total > 0 else 1.0


@dataclass
class ComparisonReport:
    metric: str
    theoretical: float
    pooled_value: float
    pooled_error: float
    per_run_errors: List[float]
    bound: float
    passed: bool


@dataclass
class SimResult:
    quality_mean: float
    quality_stddev: float
    censorship_mean: float
    censorship_stddev: float
    per_run: List[RunTotals]
    relative_error_vs: Optional[ComparisonReport] = None

    def value(self, metric):
        return self.quality_mean if metric == "quality" else self.censorship_mean

    def run_values(self, metric):
        return [run.quality if metric == "quality" else run.censorship for run in self.per_run]


@dataclass
class _CompiledPolicy:
    """Per state: cumulative outcome probabilities, next ids and reward triples of the chosen row."""
    cumulative: List[List[float]]
    next_ids: List[List[int]]
    rewards: List[List[tuple]]
    adversarial: List[bool]
    initial_cumulative: List[float]
    initial_ids: List[int]


def _compile_policy(mdp, policy):
    if len(policy) != mdp.n_states:
        raise PolicyMismatchError(f"Policy covers {len(policy)} states, model has {mdp.n_states}")
    cumulative, next_ids, rewards, adversarial = [], [], [], []
    for s in range(mdp.n_states):
        action = policy[s]
        if action not in mdp.actions[s]:
            raise PolicyMismatchError(f"Action {getattr(action, 'label', action)} is not feasible at "
                                      f"{mdp.states.state_of(s)}")
        entries = [e for e in mdp.transitions[s][list(mdp.actions[s]).index(action)] if e.prob > 0]
        cumulative.append(np.cumsum([e.prob for e in entries]).tolist())
        next_ids.append([e.next for e in entries])
        rewards.append([(e.reward.b_h, e.reward.b_a, e.reward.o_h) for e in entries])
        adversarial.append(mdp.states.state_of(s).leader is Leader.A)
    initial_cumulative = np.cumsum([prob for _, prob in mdp.initial]).tolist()
    return _CompiledPolicy(cumulative, next_ids, rewards, adversarial, initial_cumulative,
                           [state_id for state_id, _ in mdp.initial])


def _pick(cumulative, u):
    k = bisect.bisect_right(cumulative, u * cumulative[-1])
    return min(k, len(cumulative) - 1)


def _run(compiled, views, seed_sequence):
    rng = np.random.Generator(np.random.Philox(seed_sequence))
    draws = rng.random(views + 1).tolist()
    state = compiled.initial_ids[_pick(compiled.initial_cumulative, draws[0])]
    b_h = b_a = o_h = honest_views = adversarial_views = 0
    for u in draws[1:]:
        if compiled.adversarial[state]:
            adversarial_views += 1
        else:
            honest_views += 1
        k = _pick(compiled.cumulative[state], u)
        r_h, r_a, r_o = compiled.rewards[state][k]
        b_h += r_h
        b_a += r_a
        o_h += r_o
        state = compiled.next_ids[state][k]
    return RunTotals(b_h, b_a, o_h, honest_views, adversarial_views)


def _stddev(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def resolve_policy(model, mdp, params, policy):
    if isinstance(policy, str):
        if policy != "honest":
            raise PolicyMismatchError(f"Unknown policy source '{policy}'")
        return honest_policy(model, mdp.states, params)
    return policy


def simulate(config):
    """Run config.runs independent runs and pool their reward totals."""
    try:
        start_time = time.time()
        model = config.protocol if isinstance(config.protocol, ProtocolModel) else get_model(config.protocol)
        mdp = build_mdp(model, config.params)
        policy = resolve_policy(model, mdp, config.params, config.policy)
        compiled = _compile_policy(mdp, policy)
        children = np.random.SeedSequence(int(config.seed)).spawn(config.runs)
        logger.info(f"Simulating {model} alpha={config.params.alpha:.4f}: {config.runs} runs x "
                    f"{config.views_per_run} views, seed={config.seed}, threads={config.threads}")

        with ThreadPoolExecutor(max_workers=max(1, config.threads)) as executor:
            per_run = list(executor.map(lambda child: _run(compiled, config.views_per_run, child), children))

        b_h = sum(run.b_h for run in per_run)
        b_a = sum(run.b_a for run in per_run)
        o_h = sum(run.o_h for run in per_run)
        result = SimResult(
            quality_mean=_quality(b_h, b_a),
            quality_stddev=_stddev([run.quality for run in per_run]),
            censorship_mean=_quality(b_h, o_h),
            censorship_stddev=_stddev([run.censorship for run in per_run]),
            per_run=per_run,
        )
        logger.info(f"Simulation done in {time.time() - start_time:.2f}s: quality={result.quality_mean:.6f} "
                    f"censorship={result.censorship_mean:.6f}")
        return result
    except Exception as e:
        logger.error(f"Error simulating {config.protocol}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def relative_error(empirical, theoretical):
    return abs(empirical - theoretical) / theoretical


def compare(sim, theoretical, metric, bound=DEFAULT_ERROR_BOUND):
    """Relative error of the pooled and per-run estimates against a theoretical value."""
    if not 0 < theoretical <= 1:
        raise ValueError(f"theoretical must lie in (0, 1], got {theoretical}")
    if metric not in ("quality", "censorship"):
        raise ValueError(f"Unknown metric '{metric}'")
    pooled = sim.value(metric)
    report = ComparisonReport(
        metric=metric,
        theoretical=theoretical,
        pooled_value=pooled,
        pooled_error=relative_error(pooled, theoretical),
        per_run_errors=[relative_error(v, theoretical) for v in sim.run_values(metric)],
        bound=bound,
        passed=relative_error(pooled, theoretical) <= bound,
    )
    if not report.passed:
        logger.warning(f"Relative error {report.pooled_error:.4f} of {metric} exceeds bound {bound}")
    sim.relative_error_vs = report
    return report


def exact_metric(protocol, params, policy, objective):
    """Metric a policy achieves in the long run, from its stationary distribution."""
    model = protocol if isinstance(protocol, ProtocolModel) else get_model(protocol)
    mdp = build_mdp(model, params)
    policy = resolve_policy(model, mdp, params, policy)
    return objective.metric(evaluate_policy_exact(mdp, policy))


def validate_sweep(protocol, objective, alphas, views_per_run=4000, runs=6, seed=0, gamma=0.5, l_max=20,
                   tol=1e-4, threads=1, bound=DEFAULT_ERROR_BOUND):
    """
    Solve, simulate the optimal policy and compare, at every alpha.
    Returns one row per alpha with theory, empirical mean, stddev and error.
    """
    if isinstance(objective, str):
        objective = RatioObjective.from_name(objective)
    rows = []
    for alpha in alphas:
        params = ModelParams(alpha, gamma, l_max)
        outcome = solve_ratio(protocol, params, objective, tol)
        sim = simulate(SimConfig(protocol, params, outcome.policy, views_per_run, runs, seed, threads))
        report = compare(sim, outcome.metric, objective.name, bound)
        rows.append({
            "protocol": str(protocol),
            "alpha": alpha,
            "metric": objective.name,
            "theory": outcome.metric,
            "empirical": report.pooled_value,
            "stddev": sim.quality_stddev if objective.name == "quality" else sim.censorship_stddev,
            "relative_error": report.pooled_error,
            "passed": report.passed,
        })
    df = pd.DataFrame(rows)
    if len(df) and not df["passed"].all():
        logger.warning(f"{int((~df['passed']).sum())} of {len(df)} points exceed the {bound:.0%} bound")
    return df

