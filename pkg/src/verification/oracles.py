"""
Independent checks of the ratio solver: closed-form steady states of the
always-attack strategies and exhaustive enumeration of deterministic policies.
"""
import itertools
import logging
import math
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from mdp.core import MultichainError, Policy, RewardRates, build_mdp, evaluate_policy_exact
from models.protocols import BASE_KINDS, ModelParams, ProtocolKind, fhs_c_metrics
from models.tables import ProtocolModel, get_model
from transformation.ratio_search import CHAIN_QUALITY, OBJECTIVES, alpha_grid, solve_ratio

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 16
MAX_POLICIES = 65536
BATCH_SIZE = 4096
AGREEMENT_TOL = 2e-3


class StateSpaceTooLarge(ValueError):
    """Too many states or policies to enumerate."""


class UnsupportedProtocolError(ValueError):
    """No closed form exists for this protocol."""


@dataclass(frozen=True)
class ClosedForm:
    protocol: ProtocolKind
    quality_formula: Callable[[float], float]
    censorship_formula: Callable[[float], float]


def _two_chain_quality(alpha):
    beta = 1.0 - alpha
    return beta ** 2 / (beta ** 2 + alpha)


def _three_chain_quality(alpha):
    beta = 1.0 - alpha
    return beta ** 3 / (beta ** 3 + alpha)


def _three_chain_censorship(alpha):
    beta = 1.0 - alpha
    return beta ** 2 / (beta ** 2 + alpha * (1.0 + beta))


CLOSED_FORMS = {
    ProtocolKind.TWO_CHS: ClosedForm(ProtocolKind.TWO_CHS, _two_chain_quality, lambda alpha: 1.0 - alpha),
    ProtocolKind.FHS: ClosedForm(ProtocolKind.FHS, _two_chain_quality, lambda alpha: 1.0 - alpha),
    ProtocolKind.STREAMLET: ClosedForm(ProtocolKind.STREAMLET, _two_chain_quality, lambda alpha: 1.0 - alpha),
    ProtocolKind.CHS: ClosedForm(ProtocolKind.CHS, _three_chain_quality, _three_chain_censorship),
    ProtocolKind.FHS_C: ClosedForm(ProtocolKind.FHS_C,
                                   lambda alpha: fhs_c_metrics(alpha)[0],
                                   lambda alpha: fhs_c_metrics(alpha)[1]),
}


def closed_form(protocol, alpha):
    """(quality, censorship) of the optimal attack, for protocols with a closed form."""
    kind = ProtocolKind.from_name(protocol)
    if kind not in CLOSED_FORMS:
        raise UnsupportedProtocolError(f"No closed form for {kind.display_name}")
    ModelParams(alpha)
    form = CLOSED_FORMS[kind]
    return form.quality_formula(alpha), form.censorship_formula(alpha)


@dataclass
class BruteForceResult:
    metric: float
    policy: Policy
    rates: RewardRates
    policies_evaluated: int


def _policy_rates(mdp, choices):
    """Batched stationary solve for a block of policies given as pair indices."""
    compiled = mdp.compiled
    dense = compiled.transition.toarray()
    n = mdp.n_states
    chains = dense[choices]
    system = np.transpose(chains, (0, 2, 1)) - np.eye(n)
    system[:, n - 1, :] = 1.0
    rhs = np.zeros((len(choices), n, 1))
    rhs[:, n - 1, 0] = 1.0
    pi = np.linalg.solve(system, rhs)[..., 0]
    return np.einsum("pn,pnk->pk", pi, compiled.components[choices])


def _ratios(rates, objective):
    columns = {"b_h": 0, "b_a": 1, "o_h": 2}
    top = rates[:, columns[objective.numerator]]
    total = top + rates[:, columns[objective.denominator]]
    return np.divide(top, total, out=np.zeros_like(top), where=total > 0)


def brute_force_optimum(kind, params, objective, max_states=DEFAULT_MAX_STATES):
    """
    Evaluate every deterministic stationary policy and return the one with the
    largest adversarial ratio. Refuses state spaces above max_states.
    """
    model = kind if isinstance(kind, ProtocolModel) else get_model(kind)
    mdp = build_mdp(model, params)
    if mdp.n_states > max_states:
        raise StateSpaceTooLarge(f"{model} has {mdp.n_states} states, limit is {max_states}")
    sizes = [len(actions) for actions in mdp.actions]
    total = math.prod(sizes)
    if total > MAX_POLICIES:
        raise StateSpaceTooLarge(f"{model} has {total} deterministic policies, limit is {MAX_POLICIES}")

    try:
        starts = mdp.compiled.starts
        best_ratio, best_choice = -1.0, None
        product = itertools.product(*(range(size) for size in sizes))
        while True:
            block = np.array(list(itertools.islice(product, BATCH_SIZE)), dtype=np.int64)
            if len(block) == 0:
                break
            choices = block + starts
            try:
                ratios = _ratios(_policy_rates(mdp, choices), objective)
            except np.linalg.LinAlgError:
                ratios = np.array([_single_ratio(mdp, row, objective) for row in block])
            k = int(np.argmax(ratios))
            if ratios[k] > best_ratio + 1e-12:
                best_ratio, best_choice = float(ratios[k]), block[k]

        policy = Policy(tuple(mdp.actions[s][a] for s, a in enumerate(best_choice)))
        rates = evaluate_policy_exact(mdp, policy)
        metric = objective.metric(rates)
        logger.info(f"Brute force {model} {objective.name} alpha={params.alpha:.4f}: "
                    f"metric={metric:.6f} over {total} policies")
        return BruteForceResult(metric, policy, rates, total)
    except Exception as e:
        logger.error(f"Error in brute force search for {model}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def _single_ratio(mdp, row, objective):
    policy = Policy(tuple(mdp.actions[s][a] for s, a in enumerate(row)))
    try:
        return objective.ratio(evaluate_policy_exact(mdp, policy))
    except MultichainError:
        return -1.0


def check_agreement(protocols, alphas, tol, agreement, models):
    """Closed form, brute force and solver values per (protocol, alpha, metric)."""
    rows = []
    for name in protocols:
        model = models.get(name) or get_model(name)
        for alpha in alphas:
            params = ModelParams(alpha)
            quality, censorship = closed_form(name, alpha)
            expected = {"quality": quality, "censorship": censorship}
            for objective in OBJECTIVES:
                row = {"protocol": name, "alpha": alpha, "metric": objective.name,
                       "closed_form": expected[objective.name], "brute_force": math.nan,
                       "solver": math.nan, "error": ""}
                try:
                    row["solver"] = solve_ratio(model, params, objective, tol).metric
                    try:
                        row["brute_force"] = brute_force_optimum(model, params, objective).metric
                    except StateSpaceTooLarge:
                        pass
                except Exception as e:
                    row["error"] = str(e)
                values = [v for v in (row["closed_form"], row["brute_force"], row["solver"]) if not math.isnan(v)]
                row["passed"] = not row["error"] and max(values) - min(values) <= agreement
                if not row["passed"]:
                    logger.warning(f"Oracle disagreement for {name} alpha={alpha} {objective.name}: "
                                   f"closed={row['closed_form']:.6f} brute={row['brute_force']:.6f} "
                                   f"solver={row['solver']:.6f} {row['error']}")
                rows.append(row)
    return pd.DataFrame(rows)


def check_overlap(agreement_df, reference="2chs", others=("fhs", "streamlet"), limit=1e-3):
    """Protocols whose solver curve should coincide with the reference."""
    issues = []
    solver = agreement_df.set_index(["protocol", "metric", "alpha"])["solver"]
    for other in others:
        for (protocol, metric, alpha), value in solver.items():
            if protocol != reference or (other, metric, alpha) not in solver.index:
                continue
            gap = abs(value - solver[(other, metric, alpha)])
            if not gap < limit:
                issues.append({"protocol": other, "metric": metric, "alpha": alpha, "gap": gap})
    return issues


def check_dominance(agreement_df, weaker="chs", stronger="2chs"):
    """The weaker protocol must score strictly below the stronger one for alpha > 0."""
    issues = []
    solver = agreement_df.set_index(["protocol", "metric", "alpha"])["solver"]
    for (protocol, metric, alpha), value in solver.items():
        if protocol != weaker or alpha <= 0 or (stronger, metric, alpha) not in solver.index:
            continue
        if not value < solver[(stronger, metric, alpha)]:
            issues.append({"protocol": weaker, "metric": metric, "alpha": alpha, "value": value})
    return issues


def run_oracle_checks(grid_step=0.03, tol=1e-4, agreement=AGREEMENT_TOL, protocols=None, models=None,
                      alpha_end=0.33):
    """
    Run every oracle check over the alpha grid.

    `models` maps protocol names to model objects to check instead of the
    catalogue ones.
    """
    try:
        protocols = list(protocols or [kind.value for kind in BASE_KINDS])
        models = models or {}
        alphas = alpha_grid(0.0, alpha_end, grid_step)
        logger.info(f"Running oracle checks for {', '.join(protocols)} over {len(alphas)} alpha points")

        results = {"agreement": check_agreement(protocols, alphas, tol, agreement, models)}
        results["overlap"] = check_overlap(results["agreement"],
                                           others=[p for p in ("fhs", "streamlet") if p in protocols])
        results["dominance"] = check_dominance(results["agreement"]) if {"chs", "2chs"} <= set(protocols) else []

        failed = int((~results["agreement"]["passed"]).sum())
        total_issues = failed + len(results["overlap"]) + len(results["dominance"])
        if total_issues > 0:
            logger.warning(f"Found a total of {total_issues} oracle check failures")
        else:
            logger.info("All oracle checks passed")
        results["passed"] = total_issues == 0
        return results
    except Exception as e:
        logger.error(f"Error running oracle checks: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def failed_checks(results):
    """(protocol, alpha, metric) triples of every failed agreement row."""
    df = results["agreement"]
    failed = df[~df["passed"]]
    return [(row.protocol, row.alpha, row.metric) for row in failed.itertuples()]


def is_always_attack_optimal(kind, alpha):
    """Brute force reproduces the closed form, which is what earns it oracle status."""
    params = ModelParams(alpha)
    quality, _ = closed_form(kind, alpha)
    return abs(brute_force_optimum(kind, params, CHAIN_QUALITY).metric - quality) <= AGREEMENT_TOL
