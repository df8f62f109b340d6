""" Command-line front end.

    sqrtscore score [--method sqrt|conventional|both] ...
    sqrtscore simulate ...
    sqrtscore experiment {example1-sweep,table1,perf-profile} ...

Settings come from dataclass defaults, then `SQRTSCORE_*` environment
variables (a `.env` file is honored), then `--config`, then explicit flags.
"""
from __future__ import annotations
from contextlib import contextmanager
from typing import Any, Callable, Iterator
import csv
import logging
import sys

import click
from click.core import ParameterSource
from dotenv import load_dotenv
from exceptiongroup import ExceptionGroup

from .config import PROFILE_DELTAS, RunConfig
from .errors import ConfigError, DomainError, InvalidArgumentError, OutputError, SqrtScoreError
from .experiments import wide_delta_grid, run_example1_sweep, run_performance_profile, run_table1
from .kalman import kf_score
from .model import simulate
from .reports import emit_reports, render_number
from .score import ScoreResult, run


LOGGER = logging.getLogger(__name__)


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
ENV_PREFIX = 'SQRTSCORE'


def _float_list(ctx: click.Context, param: click.Parameter, value: str | None) -> tuple[float, ...] | None:
    if value is None:
        return None
    if param.name == 'delta_list' and value.strip() == 'wide':
        return wide_delta_grid()
    try:
        return tuple(float(v) for v in value.split(',') if v.strip())
    except ValueError:
        raise click.BadParameter(f'expected comma-separated numbers, got {value!r}')


def _str_list(ctx: click.Context, param: click.Parameter, value: str | None) -> tuple[str, ...] | None:
    return None if value is None else tuple(v.strip() for v in value.split(',') if v.strip())


def _option(*decls: str, **attrs: Any) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """ `click.option` defaulting to None and bound to SQRTSCORE_<NAME>. """
    name = [d for d in decls if d.startswith('--')][0][2:].replace('-', '_')
    attrs.setdefault('default', None)
    attrs.setdefault('envvar', f'{ENV_PREFIX}_{name.upper()}')
    attrs.setdefault('show_envvar', True)
    return click.option(*decls, **attrs)


_MODEL_OPTIONS = [
        _option('--model', help='example1, example3 or a custom model JSON file.'),
        _option('--theta', callback=_float_list, help='Comma-separated parameter vector.'),
        _option('--delta-t', type=float, help='Sampling interval of Example 1.'),
        _option('--tau-true', type=float, help='Correlation time the Example 1 data is simulated at.'),
        _option('--delta', type=float, help='Ill-conditioning parameter of Example 3.'),
        _option('-N', '--N', 'N', type=int, envvar=f'{ENV_PREFIX}_N', help='Number of simulated steps.'),
        _option('--seed', type=int, help='Seed of the data generator.'),
        _option('--generator', help='numpy bit generator, e.g. PCG64.'),
        _option('--z1', callback=_float_list, help='Example 3 measurement.'),
        _option('--data', type=click.Path(dir_okay=False), help='CSV file of measurements (z* columns).'),
        ]

_RUN_OPTIONS = [
        _option('--config', 'config_path', type=click.Path(dir_okay=False, exists=True), envvar=f'{ENV_PREFIX}_CONFIG', help='JSON configuration file.'),
        _option('-o', '--out', type=click.Path(file_okay=False), help='Output directory.'),
        _option('--format', type=click.Choice(['csv', 'md'])),
        _option('-l', '--loglevel', type=click.Choice(['debug', 'info', 'warning', 'error'])),
        ]

_EXPERIMENT_OPTIONS = [
        _option('--delta-list', callback=_float_list, help='Comma-separated δ values, or "wide" for 19 log-spaced values around eps^(2/3).'),
        _option('--tau-grid', callback=_float_list, help='Comma-separated τ values.'),
        _option('--mu-max', type=float),
        _option('--measure', type=click.Choice(['loglg', 'loglf', 'p1', 'dp1'])),
        _option('--algorithms', callback=_str_list, help='Comma-separated subset of sqrt,conventional.'),
        _option('--dps', type=int, help='Significant digits of the reference engine.'),
        _option('--check-precision/--no-check-precision', 'check_precision', envvar=f'{ENV_PREFIX}_CHECK_PRECISION'),
        _option('-t', '--exec-type', type=click.Choice(['process', 'thread', 'local'])),
        _option('-n', '--num-workers', type=int),
        _option('-e', '--error-handling', type=click.Choice(['eager', 'lazy'])),
        _option('--cache-dir', type=click.Path(file_okay=False)),
        _option('--progress/--no-progress', 'show_progress', envvar=f'{ENV_PREFIX}_SHOW_PROGRESS'),
        ]


def _with_options(options: list[Callable[[Callable[..., Any]], Callable[..., Any]]]) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    def decorator(f: Callable[..., Any]) -> Callable[..., Any]:
        for option in reversed(options):
            f = option(f)
        return f
    return decorator


def resolve_config(ctx: click.Context, config_path: str | None, **flags: Any) -> RunConfig:
    """ defaults < environment < config file < command line """
    env, explicit = {}, {}
    for name, value in flags.items():
        if value is None:
            continue
        source = ctx.get_parameter_source(name)
        if source == ParameterSource.ENVIRONMENT:
            env[name] = value
        elif source == ParameterSource.COMMANDLINE:
            explicit[name] = value
    config = RunConfig().merge(env)
    if config_path is not None:
        config = config.merge_file(config_path)
    config = config.merge(explicit).validate()
    logging.basicConfig(level=getattr(logging, config.loglevel.upper()))
    LOGGER.info(f'Effective configuration: {config}')
    return config


def _diagnostic(token: str, msg: Any) -> None:
    click.echo(f'{token}: {" ".join(str(msg).split())}', err=True)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """ Map failures to one-line diagnostics and exit statuses. """
    try:
        yield
    except (ConfigError, DomainError, InvalidArgumentError, OutputError) as e:
        _diagnostic(e.token, e)
        sys.exit(EXIT_CONFIG)
    except SqrtScoreError as e:
        _diagnostic(e.token, e)
        sys.exit(EXIT_NUMERICAL)
    except ExceptionGroup as e:
        _diagnostic('job-failure', e)
        sys.exit(1)


class _DiagnosticGroup(click.Group):
    """ Report usage errors of subcommands as one-line `config` diagnostics. """

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            _diagnostic('config', e.format_message())
            ctx.exit(EXIT_CONFIG)


@click.group(cls=_DiagnosticGroup)
def cli() -> None:
    """ Log-likelihood and score evaluation with square-root covariance filters. """


def _print_result(result: ScoreResult) -> None:
    click.echo(f'method: {result.method}')
    click.echo(f'loglik: {render_number(result.loglik)}')
    click.echo('gradient: ' + ','.join(render_number(g) for g in result.gradient))


@cli.command()
@_with_options(_MODEL_OPTIONS + _RUN_OPTIONS)
@_option('--method', type=click.Choice(['sqrt', 'conventional', 'both']))
@click.pass_context
def score(ctx: click.Context, config_path: str | None, **flags: Any) -> None:
    """ Print the negative log-likelihood and its gradient. """
    with _exit_codes():
        config = resolve_config(ctx, config_path, **flags)
        spec = config.build_model()
        theta = config.theta_for(spec)
        data = config.build_data(spec)
        methods = ['sqrt', 'conventional'] if config.method == 'both' else [config.method]
        failures = []
        for method in methods:
            result = run(spec, theta, data) if method == 'sqrt' else kf_score(spec, theta, data)
            if result.failed:
                failures.append(result.failure)
            else:
                _print_result(result)
        if failures:
            for failure in failures:
                click.echo(' '.join(str(failure).split()), err=True)
            sys.exit(EXIT_NUMERICAL)


@cli.command('simulate')
@_with_options(_MODEL_OPTIONS + _RUN_OPTIONS)
@click.option('--zero-noise', is_flag=True, help='Propagate the mean without noise.')
@click.pass_context
def simulate_cmd(ctx: click.Context, config_path: str | None, zero_noise: bool, **flags: Any) -> None:
    """ Simulate a trajectory and write it as CSV. """
    with _exit_codes():
        config = resolve_config(ctx, config_path, **flags)
        spec = config.build_model()
        theta = config.theta_for(spec)
        traj = simulate(spec, theta, config.N, config.seed, zero_noise=zero_noise, generator=config.generator)
        assert traj.x is not None
        path = config.out_dir / 'trajectory.csv'
        try:
            config.out_dir.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(['k'] + [f'z{j + 1}' for j in range(traj.z.shape[1])] + [f'x{j + 1}' for j in range(traj.x.shape[1])])
                for k in range(traj.N):
                    writer.writerow([k + 1] + [render_number(v) for v in traj.z[k]] + [render_number(v) for v in traj.x[k]])
            config.echo(config.out_dir)
        except OSError as e:
            raise OutputError(f'cannot write {path}: {e}') from e
        click.echo(f'simulate: {traj.N} steps of {spec.name} written to {path}')


@cli.command()
@click.argument('which', type=click.Choice(['example1-sweep', 'table1', 'perf-profile']))
@_with_options(_MODEL_OPTIONS + _RUN_OPTIONS + _EXPERIMENT_OPTIONS)
@click.pass_context
def experiment(ctx: click.Context, which: str, config_path: str | None, **flags: Any) -> None:
    """ Run one of the stability experiments and write its reports. """
    with _exit_codes():
        config = resolve_config(ctx, config_path, **flags)
        out_dir = config.out_dir
        theta = 2.0 if config.theta is None else config.theta[0]

        if which == 'example1-sweep':
            curve = run_example1_sweep(config.tau_grid, config)
            paths = emit_reports(curve, config.format, out_dir)
            summary = ', '.join(f'{m} LF minimizer {curve.minimizer(m):.6g}' for m in curve.methods)
            line = f'example1-sweep: {len(curve.grid)} points, {summary}'
        elif which == 'table1':
            rows = run_table1(config.delta_list, theta, config)
            paths = emit_reports(rows, config.format, out_dir)
            failed = [f'{r.delta:g}' for r in rows if r.conventional.failed]
            line = f'table1: {len(rows)} rows, conventional failed at delta={",".join(failed) or "none"}'
        else:
            deltas = PROFILE_DELTAS if config.delta_list is None else config.delta_list
            profile = run_performance_profile(deltas, theta, config.mu_max, config)
            paths = emit_reports(profile, config.format, out_dir)
            summary = ', '.join(f'{a} phi(1)={profile.phi(a, 1.0):.3g}' for a in profile.algorithms)
            line = f'perf-profile: {len(profile.problems)} problems, {summary}'

        try:
            config.echo(out_dir)
        except OSError as e:
            raise OutputError(f'cannot write {out_dir / "config.json"}: {e}') from e
        LOGGER.info(f'Wrote {[str(p) for p in paths]}')
        click.echo(line)


def main() -> None:
    load_dotenv()
    cli(prog_name='sqrtscore')


if __name__ == '__main__':
    main()
