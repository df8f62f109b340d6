""" Run configuration shared by every subcommand. """
from __future__ import annotations
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Literal, Mapping, Sequence
from typing_extensions import Self
import csv
import json
import logging

import numpy as np

from .errors import ConfigError
from .model import ModelSpec, Trajectory, example1_spec, example3_spec, load_model_file, simulate
from .types import Array, ErrorHandlingPolicy, ExecType, ProfileMeasure, ReportFormat


LOGGER = logging.getLogger(__name__)


TABLE1_DELTAS = (1e-2, 1e-4, 1e-6, 1e-8, 1e-9, 1e-10)
PROFILE_DELTAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
TAU_GRID = tuple(float(t) for t in np.linspace(2.0, 10.0, 20))
ALGORITHMS = ('sqrt', 'conventional')

MethodChoice = Literal['sqrt', 'conventional', 'both']


@dataclass(frozen=True)
class RunConfig:
    # model and data
    model: str = 'example1'
    theta: tuple[float, ...] | None = None
    delta_t: float = 0.1
    tau_true: float = 5.0
    delta: float = 1e-2
    N: int = 100
    seed: int = 0
    generator: str = 'PCG64'
    z1: tuple[float, ...] = (1.0, 1.0)
    data: str | None = None

    # experiments
    delta_list: tuple[float, ...] | None = None
    tau_grid: tuple[float, ...] = TAU_GRID
    mu_max: float = 10.0
    measure: ProfileMeasure = 'loglg'
    algorithms: tuple[str, ...] = ALGORITHMS
    dps: int = 50
    check_precision: bool = False

    # output
    out: str = 'out'
    format: ReportFormat = 'csv'
    method: MethodChoice = 'both'

    # execution
    loglevel: Literal['debug', 'info', 'warning', 'error'] = 'warning'
    exec_type: ExecType = 'process'
    num_workers: int | None = None
    error_handling: ErrorHandlingPolicy = 'lazy'
    cache_dir: str | None = None
    show_progress: bool = True

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def merge(self, overrides: Mapping[str, Any]) -> Self:
        unknown = set(overrides) - self.field_names()
        if unknown:
            raise ConfigError(f'Unrecognized configuration keys: {sorted(unknown)}')
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
        return replace(self, **values)

    def merge_file(self, path: Path | str) -> Self:
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'cannot read config file {path}: {e}') from e
        if not isinstance(d, dict):
            raise ConfigError(f'config file {path} must hold a JSON object')
        return self.merge(d)

    def validate(self) -> Self:
        def positive(name: str, values: Sequence[float]) -> None:
            if not all(np.isfinite(v) and v > 0 for v in values):
                raise ConfigError(f'{name} must be positive, got {values}')

        positive('delta_t', [self.delta_t])
        positive('tau_true', [self.tau_true])
        positive('delta', [self.delta])
        positive('tau_grid', self.tau_grid)
        if self.delta_list is not None:
            positive('delta_list', self.delta_list)
        if self.theta is not None and not all(np.isfinite(self.theta)):
            raise ConfigError(f'theta must be finite, got {self.theta}')
        if self.N < 1:
            raise ConfigError(f'N must be at least 1, got {self.N}')
        if self.seed < 0:
            raise ConfigError(f'seed must be nonnegative, got {self.seed}')
        if not self.mu_max >= 1:
            raise ConfigError(f'mu_max must be at least 1, got {self.mu_max}')
        if self.dps < 16:
            raise ConfigError(f'dps must be at least 16, got {self.dps}')
        if self.num_workers is not None and self.num_workers < 1:
            raise ConfigError(f'num_workers must be positive, got {self.num_workers}')
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f'algorithms must be drawn from {ALGORITHMS}, got {self.algorithms}')
        if not hasattr(np.random, self.generator):
            raise ConfigError(f'Unrecognized bit generator: {self.generator}')
        choices: dict[str, tuple[str, ...]] = {
                'format': ('csv', 'md'),
                'method': ('sqrt', 'conventional', 'both'),
                'measure': ('loglg', 'loglf', 'p1', 'dp1'),
                'loglevel': ('debug', 'info', 'warning', 'error'),
                'exec_type': ('process', 'thread', 'local'),
                'error_handling': ('eager', 'lazy'),
                }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f'{name} must be one of {allowed}, got {getattr(self, name)!r}')
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def echo(self, out_dir: Path) -> Path:
        """ Write the effective configuration next to the results. """
        path = out_dir / 'config.json'
        path.write_text(self.to_json() + '\n')
        return path

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def build_model(self) -> ModelSpec:
        if self.model == 'example1':
            return example1_spec(delta_t=self.delta_t, tau_true=self.tau_true)
        elif self.model == 'example3':
            return example3_spec(delta=self.delta)
        elif Path(self.model).suffix == '.json':
            return load_model_file(self.model)
        else:
            raise ConfigError(f'Unrecognized model: {self.model!r}')

    def theta_for(self, spec: ModelSpec) -> Array:
        if self.theta is None:
            return spec.default_theta()
        return spec.check_domain(np.array(self.theta, dtype=np.float64))

    def build_data(self, spec: ModelSpec) -> Trajectory:
        """ Measurements to evaluate on.

        A `data` file wins; Example 3 uses the single measurement `z1`;
        anything else is simulated at the model's reference parameter.
        """
        if self.data is not None:
            return load_measurements(self.data)
        if spec.name == 'example3':
            return Trajectory.from_measurements([self.z1])
        return simulate(spec, spec.default_theta(), self.N, self.seed, generator=self.generator)


def load_measurements(path: Path | str) -> Trajectory:
    """ Read the `z*` columns of a CSV file such as the one `simulate` writes. """
    try:
        with open(path, newline='') as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise ConfigError(f'cannot read data file {path}: {e}') from e
    if not rows:
        raise ConfigError(f'data file {path} has no rows')
    columns = [c for c in rows[0] if c.startswith('z')]
    if not columns:
        raise ConfigError(f'data file {path} has no z columns')
    try:
        return Trajectory.from_measurements([[float(row[c]) for c in columns] for row in rows])
    except ValueError as e:
        raise ConfigError(f'data file {path}: {e}') from e
