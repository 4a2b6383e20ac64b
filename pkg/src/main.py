"""
Command-line front end for the chained BFT attack analyzer.

Exit codes: 0 success, 1 computational failure, 2 usage error.
"""
import argparse
import json
import logging
import sys
import time
import traceback
from dataclasses import asdict
from datetime import datetime
from fractions import Fraction

import numpy as np
import pandas as pd

from config import Config
from loading.plots import render_sweep
from loading.writer import (
    RunManifest,
    export_results_to_csv,
    json_text,
    write_json,
    write_sweep_csv,
    write_sweep_json,
    write_table_csv,
)
from mdp.core import ModelError, Policy, enumerate_states
from models.protocols import (
    CATALOGUE,
    MAX_ALPHA,
    AdversaryAction,
    InfeasibleActionError,
    InvalidStateError,
    ModelParams,
    ideal_metrics,
)
from models.tables import get_model
from simulation.simulator import PolicyMismatchError, SimConfig, compare, exact_metric, simulate, validate_sweep
from transformation.ratio_search import (
    RatioObjective,
    alpha_grid,
    attack_threshold,
    improvement_factor,
    solve_ratio,
    sweep,
)
from verification.oracles import StateSpaceTooLarge, UnsupportedProtocolError, failed_checks, run_oracle_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
METRICS = ('quality', 'censorship')
# ValueError subclasses raised by the models and solvers, not by user input
MODEL_ERRORS = (ModelError, InvalidStateError, InfeasibleActionError, StateSpaceTooLarge, UnsupportedProtocolError)


def parse_alpha(text):
    """Decimal or fraction in [0, 1/3]; '1/3' is exact."""
    try:
        value = float(Fraction(str(text).strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid alpha '{text}'") from None
    if not 0.0 <= value <= MAX_ALPHA + 1e-12:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1/3], got {text}")
    return min(value, MAX_ALPHA)


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{text}'")
    return value


def _format(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _emit(report, as_json):
    if as_json:
        sys.stdout.write(json_text(report))
        return
    for key, value in report.items():
        print(f"{key}: {_format(value)}")


def _params(args, settings):
    return ModelParams(args.alpha, settings['gamma'], settings['l_max'])


def _solve(protocol, params, objective, settings):
    return solve_ratio(protocol, params, objective, settings['tol'], settings['value_tol'], settings['max_iter'])


def cmd_analyze(args, config):
    """Solve one (protocol, metric, alpha) point."""
    settings = config.get_solver_settings()
    params = _params(args, settings)
    objective = RatioObjective.from_name(args.metric)
    outcome = _solve(args.protocol, params, objective, settings)
    quality, censorship = ideal_metrics(args.alpha)
    report = {
        'protocol': args.protocol,
        'metric': args.metric,
        'alpha': args.alpha,
        'value': outcome.metric,
        'rho_bar': outcome.rho_bar,
        'bisection_steps': outcome.bisection_steps,
        'ideal': quality if args.metric == 'quality' else censorship,
    }
    if args.compare_with:
        other = _solve(args.compare_with, params, objective, settings)
        report['compare_with'] = args.compare_with
        report['compare_value'] = other.metric
        report['improvement_factor'] = improvement_factor(other.metric, outcome.metric)
    _emit(report, args.json)
    return EXIT_OK


def cmd_sweep(args, config):
    """Sweep alpha for one or all protocols and write a CSV or JSON table."""
    settings = config.get_solver_settings()
    protocols = CATALOGUE if args.protocol == 'all' else (args.protocol,)
    metrics = METRICS if args.metric == 'both' else (args.metric,)
    alpha_grid(args.alpha_start, args.alpha_end, args.alpha_step)

    rows, failures = [], []
    for protocol in protocols:
        for metric in metrics:
            points = sweep(protocol, RatioObjective.from_name(metric), args.alpha_start, args.alpha_end,
                           args.alpha_step, settings['tol'], settings['gamma'], settings['l_max'],
                           config.get_threads(), settings['value_tol'], settings['max_iter'])
            for point in points:
                rows.append({'protocol': protocol, 'alpha': point.alpha, 'metric': metric, 'value': point.metric,
                             'rho_bar': point.rho_bar, 'bisection_steps': point.bisection_steps})
                if point.error:
                    failures.append(f"{protocol} alpha={point.alpha} {metric}: {point.error}")

    path = config.get_output_path(args.out)
    manifest = RunManifest('sweep', args.protocol, {
        'metric': args.metric, 'alpha_start': args.alpha_start, 'alpha_end': args.alpha_end,
        'alpha_step': args.alpha_step, 'format': args.format, **settings,
    })
    if args.format == 'json':
        write_sweep_json(rows, path, manifest)
    else:
        write_sweep_csv(rows, path, manifest)
    print(f"Wrote {len(rows)} rows to {path}")
    for failure in failures:
        print(f"FAILED: {failure}", file=sys.stderr)
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_threshold(args, config):
    """Locate the smallest alpha at which attacking lowers chain quality."""
    settings = config.get_solver_settings()
    outcome = attack_threshold(args.protocol, settings['tol'], settings['gamma'], settings['l_max'],
                               settings['max_iter'])
    report = {'protocol': args.protocol, 'threshold': outcome.describe(), 'attackable': outcome.attackable}
    _emit(report, args.json)
    return EXIT_OK


def cmd_policy(args, config):
    """Dump the optimal adversarial policy as JSON."""
    settings = config.get_solver_settings()
    params = _params(args, settings)
    objective = RatioObjective.from_name(args.metric)
    outcome = _solve(args.protocol, params, objective, settings)
    payload = {
        'protocol': args.protocol,
        'metric': args.metric,
        'alpha': args.alpha,
        'value': outcome.metric,
        'rho_bar': outcome.rho_bar,
        'policy': outcome.policy.as_dict(outcome.table),
    }
    if args.out:
        path = config.get_output_path(args.out)
        manifest = RunManifest('policy', args.protocol, {'metric': args.metric, 'alpha': args.alpha, **settings})
        write_json(payload, path, manifest)
        print(f"Wrote policy for {len(payload['policy'])} states to {path}")
    else:
        sys.stdout.write(json_text(payload))
    return EXIT_OK


def load_policy_file(path, protocol, params):
    """Read a policy dump written by the policy command."""
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise PolicyMismatchError(f"Cannot read policy file {path}: {e}") from e
    mapping = document.get('policy', document)
    table = enumerate_states(get_model(protocol), params)
    choice = []
    for state in table:
        label = mapping.get(str(state))
        if label is None:
            raise PolicyMismatchError(f"Policy file {path} has no action for state {state}")
        choice.append(AdversaryAction.from_label(label))
    return Policy(tuple(choice))


def cmd_simulate(args, config):
    """Simulate a policy and optionally compare with its theoretical value."""
    settings = config.get_solver_settings()
    simulation = config.get_simulation_settings()
    params = _params(args, settings)
    objective = RatioObjective.from_name(args.metric)

    theory = None
    if args.policy == 'optimal':
        outcome = _solve(args.protocol, params, objective, settings)
        policy, theory = outcome.policy, outcome.metric
    elif args.policy == 'honest':
        policy = 'honest'
    else:
        policy = load_policy_file(args.policy, args.protocol, params)

    sim = simulate(SimConfig(args.protocol, params, policy, simulation['views'], simulation['runs'],
                             simulation['seed'], config.get_threads()))
    report = {
        'protocol': args.protocol,
        'alpha': args.alpha,
        'policy': args.policy,
        'views': simulation['views'],
        'runs': simulation['runs'],
        'seed': simulation['seed'],
        'quality_mean': sim.quality_mean,
        'quality_stddev': sim.quality_stddev,
        'censorship_mean': sim.censorship_mean,
        'censorship_stddev': sim.censorship_stddev,
    }

    comparison = None
    if args.compare_theory:
        if theory is None:
            theory = exact_metric(args.protocol, params, policy, objective)
        comparison = compare(sim, theory, objective.name, simulation['error_bound'])

    if args.json:
        payload = dict(report, per_run=[asdict(run) for run in sim.per_run])
        if comparison is not None:
            payload['comparison'] = asdict(comparison)
        sys.stdout.write(json_text(payload))
    else:
        for i, run in enumerate(sim.per_run, start=1):
            print(f"run {i}: b_h={run.b_h} b_a={run.b_a} o_h={run.o_h} "
                  f"quality={run.quality:.6f} censorship={run.censorship:.6f}")
        _emit(report, False)
        if comparison is not None:
            print(f"theory: {comparison.theoretical:.6f}")
            print(f"relative_error: {comparison.pooled_error:.6f}")
            print(f"per_run_errors: {' '.join(f'{e:.6f}' for e in comparison.per_run_errors)}")
            print(f"within_bound: {comparison.passed}")

    if args.out:
        path = config.get_output_path(args.out)
        payload = dict(report, per_run=[asdict(run) for run in sim.per_run])
        if comparison is not None:
            payload['comparison'] = asdict(comparison)
        write_json(payload, path, RunManifest('simulate', args.protocol, {
            'alpha': args.alpha, 'policy': args.policy, 'metric': args.metric, **simulation, **settings,
        }, seed=simulation['seed']))

    if comparison is not None and not comparison.passed and args.fail_on_bound:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(args, config):
    """Closed form, brute force and solver agreement over the alpha grid."""
    settings = config.get_solver_settings()
    results = run_oracle_checks(args.grid_step, settings['tol'], alpha_end=args.alpha_end)
    df = results['agreement']
    status = df.assign(status=np.where(df['passed'], 'pass', 'FAIL'),
                       alpha=df['alpha'].map(lambda a: f"{a:.2f}"))
    matrix = status.pivot(index=['protocol', 'metric'], columns='alpha', values='status')
    print(matrix.to_string())

    if args.out:
        export_results_to_csv({'verify': df}, config.get_output_path(args.out))

    offenders = failed_checks(results)
    for protocol, alpha, metric in offenders:
        print(f"FAIL: {protocol} alpha={alpha:.2f} {metric}")
    for issue in results['overlap']:
        print(f"FAIL overlap: {issue['protocol']} alpha={issue['alpha']:.2f} {issue['metric']} "
              f"gap={issue['gap']:.2e}")
    for issue in results['dominance']:
        print(f"FAIL dominance: {issue['protocol']} alpha={issue['alpha']:.2f} {issue['metric']}")
    print("verify: all checks passed" if results['passed'] else "verify: FAILED")
    return EXIT_OK if results['passed'] else EXIT_FAILURE


def cmd_validate(args, config):
    """Simulate the optimal policy along an alpha grid against the solver."""
    settings = config.get_solver_settings()
    simulation = config.get_simulation_settings()
    alphas = alpha_grid(args.alpha_start, args.alpha_end, args.alpha_step)
    df = validate_sweep(args.protocol, args.metric, alphas, simulation['views'], simulation['runs'],
                        simulation['seed'], settings['gamma'], settings['l_max'], settings['tol'],
                        config.get_threads(), simulation['error_bound'])
    print(df.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
    if args.out:
        path = config.get_output_path(args.out)
        write_table_csv(df, path, RunManifest('validate', args.protocol, {
            'metric': args.metric, 'alpha_start': args.alpha_start, 'alpha_end': args.alpha_end,
            'alpha_step': args.alpha_step, **simulation, **settings,
        }, seed=simulation['seed']))
    if args.fail_on_bound and not df['passed'].all():
        return EXIT_FAILURE
    return EXIT_OK


def cmd_plot(args, config):
    """Render a sweep table to an image."""
    try:
        df = pd.read_csv(args.input)
    except (OSError, pd.errors.ParserError) as e:
        raise ValueError(f"Cannot read sweep table {args.input}: {e}") from e
    path = config.get_output_path(args.out)
    render_sweep(df, path)
    print(f"Wrote figure to {path}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='config.ini', help='Path to configuration file')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')
    common.add_argument('--threads', type=positive_int, help='Worker threads for sweeps and simulation runs')
    common.add_argument('--tol', type=float, help='Bisection resolution (default 1e-4)')
    common.add_argument('--gamma', type=float, help='Honest-branch pick probability (2chs-c, chs-c)')
    common.add_argument('--l-max', type=positive_int, help='Truncation cap (streamlet, 2chs-c, chs-c)')

    parser = argparse.ArgumentParser(description='Optimal adversaries against chained BFT protocols')
    commands = parser.add_subparsers(dest='command', required=True)

    analyze = commands.add_parser('analyze', parents=[common], help='Solve a single point')
    analyze.add_argument('--protocol', required=True, choices=CATALOGUE)
    analyze.add_argument('--metric', default='quality', choices=METRICS)
    analyze.add_argument('--alpha', required=True, type=parse_alpha)
    analyze.add_argument('--compare-with', choices=CATALOGUE, help='Report the improvement over this protocol')
    analyze.add_argument('--json', action='store_true', help='Machine-readable output')
    analyze.set_defaults(handler=cmd_analyze)

    sweep_cmd = commands.add_parser('sweep', parents=[common], help='Sweep an alpha grid')
    sweep_cmd.add_argument('--protocol', default='all', choices=CATALOGUE + ('all',))
    sweep_cmd.add_argument('--metric', default='both', choices=METRICS + ('both',))
    sweep_cmd.add_argument('--alpha-start', type=parse_alpha, default=0.0)
    sweep_cmd.add_argument('--alpha-end', type=parse_alpha, default=0.33)
    sweep_cmd.add_argument('--alpha-step', type=float, default=0.03)
    sweep_cmd.add_argument('--out', required=True, help='Output file')
    sweep_cmd.add_argument('--format', default='csv', choices=['csv', 'json'])
    sweep_cmd.set_defaults(handler=cmd_sweep)

    threshold = commands.add_parser('threshold', parents=[common], help='Locate the attack threshold')
    threshold.add_argument('--protocol', required=True, choices=CATALOGUE)
    threshold.add_argument('--json', action='store_true')
    threshold.set_defaults(handler=cmd_threshold)

    policy = commands.add_parser('policy', parents=[common], help='Dump the optimal policy')
    policy.add_argument('--protocol', required=True, choices=CATALOGUE)
    policy.add_argument('--metric', default='quality', choices=METRICS)
    policy.add_argument('--alpha', required=True, type=parse_alpha)
    policy.add_argument('--format', default='json', choices=['json'])
    policy.add_argument('--out', help='Output file (stdout when omitted)')
    policy.set_defaults(handler=cmd_policy)

    simulate_cmd = commands.add_parser('simulate', parents=[common], help='Simulate a policy')
    simulate_cmd.add_argument('--protocol', required=True, choices=CATALOGUE)
    simulate_cmd.add_argument('--alpha', required=True, type=parse_alpha)
    simulate_cmd.add_argument('--metric', default='quality', choices=METRICS,
                              help='Objective of the optimal policy and of the comparison')
    simulate_cmd.add_argument('--policy', default='optimal', help="'optimal', 'honest' or a policy JSON file")
    simulate_cmd.add_argument('--views', type=positive_int)
    simulate_cmd.add_argument('--runs', type=positive_int)
    simulate_cmd.add_argument('--seed', type=int)
    simulate_cmd.add_argument('--bound', type=float, help='Relative error bound (default 0.06)')
    simulate_cmd.add_argument('--compare-theory', action='store_true')
    simulate_cmd.add_argument('--fail-on-bound', action='store_true', help='Exit 1 when the bound is exceeded')
    simulate_cmd.add_argument('--json', action='store_true')
    simulate_cmd.add_argument('--out', help='Also write the JSON report here')
    simulate_cmd.set_defaults(handler=cmd_simulate)

    verify = commands.add_parser('verify', parents=[common], help='Run the oracle agreement suite')
    verify.add_argument('--grid-step', type=float, default=0.03)
    verify.add_argument('--alpha-end', type=parse_alpha, default=0.33)
    verify.add_argument('--out', help='Directory for verify.csv')
    verify.set_defaults(handler=cmd_verify)

    validate = commands.add_parser('validate', parents=[common], help='Simulation against solver over a grid')
    validate.add_argument('--protocol', required=True, choices=CATALOGUE)
    validate.add_argument('--metric', default='quality', choices=METRICS)
    validate.add_argument('--alpha-start', type=parse_alpha, default=0.0)
    validate.add_argument('--alpha-end', type=parse_alpha, default=0.33)
    validate.add_argument('--alpha-step', type=float, default=0.03)
    validate.add_argument('--views', type=positive_int)
    validate.add_argument('--runs', type=positive_int)
    validate.add_argument('--seed', type=int)
    validate.add_argument('--bound', type=float)
    validate.add_argument('--fail-on-bound', action='store_true')
    validate.add_argument('--out', help='Output CSV')
    validate.set_defaults(handler=cmd_validate)

    plot = commands.add_parser('plot', parents=[common], help='Render a sweep table')
    plot.add_argument('--input', required=True, help='Sweep CSV')
    plot.add_argument('--out', required=True, help='Image file')
    plot.set_defaults(handler=cmd_plot)

    return parser


def _apply_overrides(config, args):
    config.override('RUNTIME', 'threads', args.threads)
    config.override('SOLVER', 'tol', args.tol)
    config.override('SOLVER', 'gamma', args.gamma)
    config.override('SOLVER', 'l_max', args.l_max)
    config.override('SIMULATION', 'views', getattr(args, 'views', None))
    config.override('SIMULATION', 'runs', getattr(args, 'runs', None))
    config.override('SIMULATION', 'seed', getattr(args, 'seed', None))
    config.override('SIMULATION', 'error_bound', getattr(args, 'bound', None))


def _record_failure(args, statistics, error):
    logger.error(f"{args.command} failed: {str(error)}")
    logger.error(traceback.format_exc())
    print(f"Error: {error}", file=sys.stderr)
    statistics['error'] = str(error)
    return EXIT_FAILURE


def run_command(args):
    """
    Run one subcommand and return its exit code.
    """
    start_time = time.time()
    statistics = {
        'start_time': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
        'command': args.command,
        'status': 'failed',
    }
    try:
        config = Config(args.config)
        _apply_overrides(config, args)
        config.setup_logging(args.log_level)
        logger.info(f"Starting {args.command}")
        code = args.handler(args, config)
        statistics['status'] = 'success' if code == EXIT_OK else 'failed'
    except MODEL_ERRORS as e:
        code = _record_failure(args, statistics, e)
    except ValueError as e:
        logger.error(f"Invalid input for {args.command}: {str(e)}")
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_USAGE
        statistics['error'] = str(e)
    except Exception as e:
        code = _record_failure(args, statistics, e)

    statistics['duration'] = time.time() - start_time
    logger.info(f"Execution summary: {statistics}")
    return code


def main(argv=None):
    """Command line entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
