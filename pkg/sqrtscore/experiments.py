""" Numerical-stability experiments: the Example 1 sweep, the δ table and performance profiles.

Every experiment is expressed as a graph of `Job`s consumed by
`run_job_graph`, so rows and grid points run concurrently and can be reused
from the result cache. Assembly always follows input order.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence
import logging
import math

import numpy as np

from .cache import ResultCache
from .config import PROFILE_DELTAS, TABLE1_DELTAS, RunConfig
from .errors import InvalidArgumentError, SingularInnovationError, SqrtScoreError
from .esrcf import esrcf_loglik
from .executors import get_executor
from .graph import Job, JobGraph, run_job_graph
from .kalman import factor_innovation_covariance, kf_loglik, kf_score
from .linalg import EPS, condition_number, symmetrize
from .model import Trajectory, evaluate, example1_spec, example3_spec, simulate
from .oracle import ErrorReport, error_report, precision_escalation_check
from .score import run
from .types import ProfileMeasure


LOGGER = logging.getLogger(__name__)


METHOD_LABELS = {'conventional': 'Conventional KF technique', 'sqrt': 'Square-root method'}


def wide_delta_grid(count: int = 19) -> tuple[float, ...]:
    """ `count` log-spaced δ values spanning [1e-9, 1e9]·eps^{2/3}. """
    if count < 2:
        raise InvalidArgumentError(f'count must be at least 2, got {count}')
    center = math.log10(EPS ** (2 / 3))
    return tuple(float(10 ** e) for e in np.linspace(center - 9, center + 9, count))


# ---------------------------------------------------------------------------
# Table 1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Table1Row:
    delta: float
    cond_Re1: float
    conventional: ErrorReport
    square_root: ErrorReport
    precision_change: float | None = None

    def report(self, method: str) -> ErrorReport:
        return self.square_root if method == 'sqrt' else self.conventional


def first_innovation_condition(delta: float, theta: float) -> float:
    """ Condition number of the working-precision R_{e,1} = H Π₀ Hᵀ + R.

    `inf` when the matrix is numerically singular, including whenever the
    conventional filter rejects it as a singular innovation covariance.
    """
    model = evaluate(example3_spec(delta), [theta])
    Re = symmetrize(model.H @ model.Pi0 @ model.H.T + model.R)
    try:
        factor_innovation_covariance(Re)
    except SingularInnovationError:
        return math.inf
    return condition_number(Re)


def table1_row(delta: float, theta: float, z1: Sequence[float], dps: int, check_precision: bool) -> Table1Row:
    spec = example3_spec(delta)
    data = Trajectory.from_measurements([list(z1)])
    reports = error_report(spec, [theta], data, methods=('conventional', 'sqrt'), dps=dps)
    change = precision_escalation_check(spec, [theta], data, dps) if check_precision else None
    LOGGER.info(f'{delta=}: conventional failed={reports["conventional"].failed}, sqrt dP1 error={reports["sqrt"].dp1:.3e}')
    return Table1Row(
            delta=delta,
            cond_Re1=first_innovation_condition(delta, theta),
            conventional=reports['conventional'],
            square_root=reports['sqrt'],
            precision_change=change,
            )


def _table1_job(delta: float, theta: float, z1: Sequence[float], dps: int, check_precision: bool) -> Job:
    return Job(
            kind='table1-row',
            args={'delta': delta, 'theta': theta, 'z1': list(z1), 'dps': dps, 'check_precision': check_precision},
            fn=table1_row,
            )


def _execute(jobs: Sequence[Job], config: RunConfig) -> dict[Any, Any]:
    cache = None if config.cache_dir is None else ResultCache(Path(config.cache_dir))
    graph = JobGraph.build_from(jobs, cache=cache)
    return run_job_graph(
            graph,
            executor=get_executor(config.exec_type, max_workers=config.num_workers),
            error_handling=config.error_handling,
            show_progress=config.show_progress,
            cache=cache,
            )


def run_table1(delta_list: Sequence[float] | None, theta: float, config: RunConfig) -> list[Table1Row]:
    deltas = TABLE1_DELTAS if delta_list is None else tuple(delta_list)
    if not all(d > 0 for d in deltas):
        raise InvalidArgumentError(f'delta values must be positive: {deltas}')
    jobs = [_table1_job(float(d), float(theta), config.z1, config.dps, config.check_precision) for d in deltas]
    results = _execute(jobs, config)
    return [results[job.to_tuple()] for job in jobs]


# ---------------------------------------------------------------------------
# Performance profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileSummary:
    phi_at_one: float
    mu_reaching_one: float
    phi_at_mu_max: float


@dataclass(frozen=True)
class PerformanceProfile:
    """ Performance ratios r_{p,a} = t_a(p) / min_a t_a(p) and their distribution functions.

    A failed run has t = r = +inf, so it never counts as solved.
    """
    algorithms: tuple[str, ...]
    problems: tuple[float, ...]
    measures: dict[str, tuple[float, ...]]
    ratios: dict[str, tuple[float, ...]]
    mu_max: float
    measure: ProfileMeasure = 'loglg'

    def phi(self, algorithm: str, mu: float) -> float:
        r = self.ratios[algorithm]
        return sum(1 for v in r if v <= mu) / len(r) if r else 0.0

    def breakpoints(self, algorithm: str) -> list[tuple[float, float]]:
        """ (μ, φ(μ)) at μ = 1, at every ratio inside (1, μ_max] and at μ_max. """
        mus = sorted({1.0, self.mu_max} | {v for v in self.ratios[algorithm] if 1.0 < v <= self.mu_max})
        return [(mu, self.phi(algorithm, mu)) for mu in mus]

    def summary(self, algorithm: str) -> ProfileSummary:
        finite = [v for v in self.ratios[algorithm] if math.isfinite(v)]
        reaching = max(finite) if len(finite) == len(self.ratios[algorithm]) and finite else math.inf
        return ProfileSummary(
                phi_at_one=self.phi(algorithm, 1.0),
                mu_reaching_one=max(reaching, 1.0),
                phi_at_mu_max=self.phi(algorithm, self.mu_max),
                )


def performance_profile(
        measures: Mapping[str, Sequence[float]],
        problems: Sequence[float],
        mu_max: float,
        measure: ProfileMeasure = 'loglg',
        ) -> PerformanceProfile:
    """ Build profiles from per-problem measures t_a(p); NaN or inf marks a failure. """
    algorithms = tuple(measures)
    if not algorithms:
        raise InvalidArgumentError('at least one algorithm is required')
    if any(len(t) != len(problems) for t in measures.values()):
        raise InvalidArgumentError('every algorithm needs one measure per problem')
    if not mu_max >= 1:
        raise InvalidArgumentError(f'mu_max must be at least 1, got {mu_max}')

    cleaned = {a: tuple(float(v) if math.isfinite(v) else math.inf for v in t) for a, t in measures.items()}
    ratios: dict[str, list[float]] = {a: [] for a in algorithms}
    for p in range(len(problems)):
        best = min(cleaned[a][p] for a in algorithms)
        for a in algorithms:
            t = cleaned[a][p]
            if t == best and math.isfinite(t):
                ratio = 1.0
            elif math.isinf(t) or best == 0:
                ratio = math.inf
            else:
                ratio = t / best
            ratios[a].append(ratio)
    return PerformanceProfile(
            algorithms=algorithms,
            problems=tuple(problems),
            measures=cleaned,
            ratios={a: tuple(r) for a, r in ratios.items()},
            mu_max=float(mu_max),
            measure=measure,
            )


def run_performance_profile(
        delta_list: Sequence[float] | None,
        theta: float,
        mu_max: float,
        config: RunConfig,
        ) -> PerformanceProfile:
    deltas = PROFILE_DELTAS if delta_list is None else tuple(delta_list)
    rows = run_table1(deltas, theta, config)
    measures = {a: [row.report(a).measure(config.measure) for row in rows] for a in config.algorithms}
    profile = performance_profile(measures, deltas, mu_max, config.measure)
    for a in profile.algorithms:
        LOGGER.info(f'{a}: {profile.summary(a)}')
    return profile


# ---------------------------------------------------------------------------
# Example 1 sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    tau: float
    loglik: dict[str, float]
    gradient: dict[str, float]


@dataclass(frozen=True)
class SweepCurve:
    """ Log-likelihood and score of each method over a common τ grid; NaN marks a failure. """
    grid: tuple[float, ...]
    loglik: dict[str, tuple[float, ...]]
    gradient: dict[str, tuple[float, ...]]
    methods: tuple[str, ...] = field(default=('sqrt', 'conventional'))

    def minimizer(self, method: str) -> float:
        values = np.array(self.loglik[method])
        if np.all(np.isnan(values)):
            return math.nan
        return self.grid[int(np.nanargmin(values))]

    def sign_changes(self, method: str) -> list[tuple[float, float]]:
        """ Grid intervals on which the gradient changes sign. """
        g = self.gradient[method]
        return [
                (self.grid[j], self.grid[j + 1])
                for j in range(len(self.grid) - 1)
                if g[j] * g[j + 1] <= 0 and not (g[j] == 0 and g[j + 1] == 0)
                ]


def simulate_example1(delta_t: float, tau_true: float, N: int, seed: int, generator: str) -> Trajectory:
    spec = example1_spec(delta_t=delta_t, tau_true=tau_true)
    return simulate(spec, [tau_true], N, seed, generator=generator)


def sweep_point(tau: float, delta_t: float, dataset: Mapping[str, Any], data: Trajectory) -> SweepPoint:
    spec = example1_spec(delta_t=delta_t)
    loglik: dict[str, float] = {}
    gradient: dict[str, float] = {}
    for method, loglik_fn in [('sqrt', esrcf_loglik), ('conventional', kf_loglik)]:
        try:
            loglik[method] = loglik_fn(spec, [tau], data)
        except SqrtScoreError as e:
            LOGGER.warning(f'{method} log-likelihood failed at {tau=}: {e}')
            loglik[method] = math.nan
    for method, score_fn in [('sqrt', run), ('conventional', kf_score)]:
        result = score_fn(spec, [tau], data)
        if result.failed:
            LOGGER.warning(f'{method} score failed at {tau=}: {result.failure}')
        gradient[method] = float(result.gradient[0])
    return SweepPoint(tau=tau, loglik=loglik, gradient=gradient)


def run_example1_sweep(tau_grid: Sequence[float], config: RunConfig) -> SweepCurve:
    grid = tuple(float(t) for t in tau_grid)
    if not all(t > 0 for t in grid):
        raise InvalidArgumentError(f'tau grid must be positive: {grid}')
    dataset = {
            'delta_t': config.delta_t, 'tau_true': config.tau_true, 'N': config.N,
            'seed': config.seed, 'generator': config.generator,
            }
    data_job = Job(kind='simulate', args=dataset, fn=simulate_example1)
    jobs = [
            Job(
                kind='sweep-point',
                args={'tau': tau, 'delta_t': config.delta_t, 'dataset': dataset},
                fn=sweep_point,
                upstream={'data': data_job},
                )
            for tau in grid
            ]
    results = _execute(jobs, config)
    points: list[SweepPoint] = [results[job.to_tuple()] for job in jobs]
    methods = ('sqrt', 'conventional')
    return SweepCurve(
            grid=grid,
            loglik={m: tuple(p.loglik[m] for p in points) for m in methods},
            gradient={m: tuple(p.gradient[m] for p in points) for m in methods},
            methods=methods,
            )
