import pytest

from mdp.core import Policy
from models.protocols import AdversaryAction, ModelParams
from simulation.simulator import (
    PolicyMismatchError,
    SimConfig,
    compare,
    exact_metric,
    relative_error,
    simulate,
    validate_sweep,
)
from transformation.ratio_search import CENSORSHIP_RESILIENCE, CHAIN_QUALITY, alpha_grid, solve_ratio


def test_same_seed_same_runs():
    config = SimConfig("chs", ModelParams(0.25), views_per_run=500, runs=3, seed=7)
    assert simulate(config).per_run == simulate(config).per_run


def test_thread_count_does_not_change_results():
    params = ModelParams(0.3)
    policy = solve_ratio("2chs", params, CHAIN_QUALITY).policy
    one = simulate(SimConfig("2chs", params, policy, 800, 4, seed=11, threads=1))
    four = simulate(SimConfig("2chs", params, policy, 800, 4, seed=11, threads=4))
    assert one.per_run == four.per_run
    assert one.quality_mean == four.quality_mean


def test_different_seeds_differ():
    params = ModelParams(0.3)
    a = simulate(SimConfig("2chs", params, views_per_run=500, runs=2, seed=1))
    b = simulate(SimConfig("2chs", params, views_per_run=500, runs=2, seed=2))
    assert a.per_run != b.per_run


def test_no_adversary():
    result = simulate(SimConfig("2chs", ModelParams(0.0), views_per_run=300, runs=2, seed=0))
    assert result.quality_mean == 1.0
    assert result.censorship_mean == 1.0
    assert all(run.adversarial_views == 0 for run in result.per_run)


def test_view_accounting():
    result = simulate(SimConfig("streamlet", ModelParams(0.2), views_per_run=1000, runs=2, seed=3))
    for run in result.per_run:
        assert run.honest_views + run.adversarial_views == 1000


def test_optimal_policy_within_bound():
    params = ModelParams(0.3)
    outcome = solve_ratio("2chs", params, CHAIN_QUALITY)
    sim = simulate(SimConfig("2chs", params, outcome.policy, 4000, 6, seed=42))
    report = compare(sim, outcome.metric, "quality")
    assert outcome.metric == pytest.approx(0.620, abs=1.5e-3)
    assert report.passed
    assert len(report.per_run_errors) == 6
    assert sim.relative_error_vs is report


def test_honest_policy_matches_ideal():
    params = ModelParams(0.25)
    sim = simulate(SimConfig("chs", params, "honest", 4000, 6, seed=5))
    assert compare(sim, exact_metric("chs", params, "honest", CHAIN_QUALITY), "quality").passed
    assert exact_metric("chs", params, "honest", CHAIN_QUALITY) == pytest.approx(0.75)
    assert exact_metric("chs", params, "honest", CENSORSHIP_RESILIENCE) == pytest.approx(1.0)


def test_relative_error_arithmetic():
    assert relative_error(0.59, 0.62) == pytest.approx(0.0484, abs=1e-4)
    assert relative_error(0.50, 0.62) == pytest.approx(0.1935, abs=1e-4)


def test_compare_pass_and_fail():
    sim = simulate(SimConfig("2chs", ModelParams(0.3), views_per_run=200, runs=2, seed=0))
    pooled = sim.quality_mean
    assert compare(sim, pooled / (1 - 0.0484), "quality").passed
    assert not compare(sim, pooled / (1 - 0.1935), "quality").passed


def test_compare_rejects_bad_theory():
    sim = simulate(SimConfig("2chs", ModelParams(0.3), views_per_run=50, runs=1))
    with pytest.raises(ValueError):
        compare(sim, 0.0, "quality")
    with pytest.raises(ValueError):
        compare(sim, 0.5, "liveness")


def test_policy_must_cover_model():
    params = ModelParams(0.2)
    with pytest.raises(PolicyMismatchError):
        simulate(SimConfig("2chs", params, Policy((AdversaryAction.ADOPT,) * 3), 10, 1))
    with pytest.raises(PolicyMismatchError):
        simulate(SimConfig("2chs", params, "greedy", 10, 1))


def test_infeasible_policy_action():
    params = ModelParams(0.2)
    with pytest.raises(PolicyMismatchError):
        simulate(SimConfig("2chs", params, Policy((AdversaryAction.RELEASE,) * 8), 10, 1))


@pytest.mark.parametrize("kwargs", [{"views_per_run": 0}, {"runs": 0}, {"seed": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig("2chs", ModelParams(0.2), **kwargs)


def test_validate_sweep_rows():
    df = validate_sweep("2chs", "quality", [0.1, 0.3], views_per_run=2000, runs=4, seed=9)
    assert list(df.columns) == ["protocol", "alpha", "metric", "theory", "empirical", "stddev",
                                "relative_error", "passed"]
    assert df["passed"].all()
    assert df["theory"].iloc[1] == pytest.approx(0.620, abs=1.5e-3)


@pytest.mark.slow
@pytest.mark.parametrize("protocol", ["2chs", "chs", "streamlet", "2chs-c", "chs-c"])
@pytest.mark.parametrize("metric", ["quality", "censorship"])
def test_simulation_tracks_solver_on_grid(protocol, metric):
    alphas = alpha_grid(0.0, 0.33, 0.03)
    df = validate_sweep(protocol, metric, alphas)
    assert list(df["alpha"]) == alphas
    assert df["passed"].all(), df[~df["passed"]]
    assert (df["relative_error"] <= 0.06).all()


@pytest.mark.slow
def test_long_run_of_chs_c():
    params = ModelParams(1 / 3)
    outcome = solve_ratio("chs-c", params, CHAIN_QUALITY)
    sim = simulate(SimConfig("chs-c", params, outcome.policy, 1_000_000, 1, seed=42))
    assert compare(sim, 0.640, "quality", bound=0.01).passed
