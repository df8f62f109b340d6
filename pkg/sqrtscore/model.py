""" Parameterized linear Gaussian state-space models.

    x_k = F x_{k-1} + G w_k,   w_k ~ N(0, Q)
    z_k = H x_k + v_k,         v_k ~ N(0, R),   x_0 ~ N(x0, Pi0)

A `ModelSpec` maps a parameter vector θ and a step index to a `ModelAtTheta`
holding the system matrices and their analytic θ-derivatives (stacked along
a leading parameter axis).
"""
from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence
import json
import logging
import math

import numpy as np

from .errors import ConfigError, DomainError, InvalidArgumentError
from .linalg import cholesky_upper
from .types import Array


LOGGER = logging.getLogger(__name__)


LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Dimensions:
    n: int
    m: int
    q: int
    p: int

    def __post_init__(self) -> None:
        if min(self.n, self.m, self.q, self.p) < 1:
            raise InvalidArgumentError(f'all dimensions must be positive: {self}')


@dataclass(frozen=True)
class ModelAtTheta:
    F: Array
    G: Array
    H: Array
    Q: Array
    R: Array
    Pi0: Array
    x0: Array
    dF: Array
    dG: Array
    dH: Array
    dQ: Array
    dR: Array
    dPi0: Array
    dx0: Array
    dPi0_sqrt: Array | None = None  # optional override of the factor derivative

    @property
    def dims(self) -> Dimensions:
        return Dimensions(n=self.F.shape[0], m=self.H.shape[0], q=self.G.shape[1], p=self.dF.shape[0])

    def validate(self) -> None:
        n, m, q, p = self.F.shape[0], self.H.shape[0], self.G.shape[1], self.dF.shape[0]
        expected = {
                'F': (n, n), 'G': (n, q), 'H': (m, n), 'Q': (q, q), 'R': (m, m), 'Pi0': (n, n), 'x0': (n,),
                'dF': (p, n, n), 'dG': (p, n, q), 'dH': (p, m, n), 'dQ': (p, q, q), 'dR': (p, m, m),
                'dPi0': (p, n, n), 'dx0': (p, n),
                }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise InvalidArgumentError(f'{name} has shape {actual}, expected {shape}')
        for name in ['Q', 'R', 'Pi0']:
            a = getattr(self, name)
            da = getattr(self, 'd' + name)
            if not np.array_equal(a, a.T) or not np.array_equal(da, np.swapaxes(da, -1, -2)):
                raise InvalidArgumentError(f'{name} and its derivatives must be exactly symmetric')


@dataclass(frozen=True)
class Trajectory:
    z: Array                  # (N, m)
    x: Array | None = None    # (N, n) true states, when simulated

    def __post_init__(self) -> None:
        if self.z.ndim != 2 or len(self.z) < 1:
            raise InvalidArgumentError(f'measurements must be a non-empty (N, m) array, got {self.z.shape}')
        if not np.all(np.isfinite(self.z)):
            raise InvalidArgumentError('measurements must be finite')

    @property
    def N(self) -> int:
        return len(self.z)

    def check_dims(self, dims: Dimensions) -> None:
        if self.z.shape[1] != dims.m:
            raise InvalidArgumentError(f'measurements have {self.z.shape[1]} component(s), the model expects {dims.m}')

    @classmethod
    def from_measurements(cls, z: Sequence[Sequence[float]]) -> Trajectory:
        return cls(z=np.array(z, dtype=np.float64, ndmin=2))


class ModelSpec(ABC):
    """ Deterministic evaluator θ, k ↦ ModelAtTheta. """
    name: str
    dims: Dimensions
    time_invariant: bool = True

    @abstractmethod
    def evaluate(self, theta: Array, k: int) -> ModelAtTheta:
        ...

    def check_domain(self, theta: Array) -> Array:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.dims.p,):
            raise DomainError(f'{self.name} expects {self.dims.p} parameter(s), got {theta.shape}')
        if not np.all(np.isfinite(theta)):
            raise DomainError(f'non-finite parameter for {self.name}: {theta}')
        return theta

    def default_theta(self) -> Array:
        raise ConfigError(f'{self.name} has no default parameter, pass theta explicitly')


def evaluate(spec: ModelSpec, theta: Array | Sequence[float] | float, k: int = 1) -> ModelAtTheta:
    return spec.evaluate(spec.check_domain(np.asarray(theta, dtype=np.float64)), k)


def _zeros_like_stack(p: int, a: Array) -> Array:
    return np.zeros((p,) + a.shape)


class Example1Spec(ModelSpec):
    """ Two-state drift/decay model with the correlation time τ as parameter. """

    def __init__(self, delta_t: float = 0.1, tau_true: float = 5.0):
        if not delta_t > 0:
            raise DomainError(f'delta_t must be positive, got {delta_t}')
        self.delta_t = float(delta_t)
        self.tau_true = float(tau_true)
        self.name = 'example1'
        self.dims = Dimensions(n=2, m=1, q=1, p=1)

    def check_domain(self, theta: Array) -> Array:
        theta = super().check_domain(theta)
        if not theta[0] > 0:
            raise DomainError(f'tau must be positive, got {theta[0]}')
        return theta

    def default_theta(self) -> Array:
        return np.array([self.tau_true])

    def evaluate(self, theta: Array, k: int) -> ModelAtTheta:
        (tau,) = theta
        dt = self.delta_t
        decay = math.exp(-dt / tau)
        F = np.array([[1.0, dt], [0.0, decay]])
        dF = np.zeros((1, 2, 2))
        dF[0, 1, 1] = dt / tau ** 2 * decay
        G = np.array([[0.0], [1.0]])
        H = np.array([[1.0, 0.0]])
        Q = np.eye(1)
        R = np.eye(1)
        Pi0 = np.eye(2)
        x0 = np.zeros(2)
        return ModelAtTheta(
                F=F, G=G, H=H, Q=Q, R=R, Pi0=Pi0, x0=x0,
                dF=dF, dG=_zeros_like_stack(1, G), dH=_zeros_like_stack(1, H),
                dQ=_zeros_like_stack(1, Q), dR=_zeros_like_stack(1, R),
                dPi0=_zeros_like_stack(1, Pi0), dx0=np.zeros((1, 2)),
                )


class Example3Spec(ModelSpec):
    """ Ill-conditioned measurement model; δ → 0 makes the two sensor rows collinear. """

    def __init__(self, delta: float = 1e-2):
        if not delta > 0:
            raise DomainError(f'delta must be positive, got {delta}')
        self.delta = float(delta)
        self.name = 'example3'
        self.dims = Dimensions(n=3, m=2, q=1, p=1)

    def check_domain(self, theta: Array) -> Array:
        theta = super().check_domain(theta)
        if not theta[0] > 0:
            raise DomainError(f'theta must be positive, got {theta[0]}')
        return theta

    def default_theta(self) -> Array:
        return np.array([2.0])

    def evaluate(self, theta: Array, k: int) -> ModelAtTheta:
        (th,) = theta
        d2 = self.delta ** 2
        H = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + self.delta]])
        F = np.eye(3)
        G = np.zeros((3, 1))
        Q = np.eye(1)
        R = d2 * th * np.eye(2)
        Pi0 = th * np.eye(3)
        return ModelAtTheta(
                F=F, G=G, H=H, Q=Q, R=R, Pi0=Pi0, x0=np.zeros(3),
                dF=_zeros_like_stack(1, F), dG=_zeros_like_stack(1, G), dH=_zeros_like_stack(1, H),
                dQ=_zeros_like_stack(1, Q), dR=d2 * np.eye(2)[None], dPi0=np.eye(3)[None],
                dx0=np.zeros((1, 3)),
                )


_MATRIX_NAMES = ('F', 'G', 'H', 'Q', 'R', 'Pi0', 'x0')


@dataclass(eq=False)
class LiteralModelSpec(ModelSpec):
    """ Custom model given by literal matrices at a reference point θ⁰.

    The model is affine in θ: A(θ) = A + Σᵢ (θᵢ − θ⁰ᵢ)·dAᵢ, so the supplied
    derivative matrices are exact everywhere.
    """
    name: str
    matrices: dict[str, Array]
    derivatives: dict[str, Array]
    theta_ref: Array
    dPi0_sqrt: Array | None = None
    dims: Dimensions = field(init=False)

    def __post_init__(self) -> None:
        F, G, H = self.matrices['F'], self.matrices['G'], self.matrices['H']
        self.dims = Dimensions(n=F.shape[0], m=H.shape[0], q=G.shape[1], p=len(self.theta_ref))
        self.evaluate(self.theta_ref, 1).validate()

    def default_theta(self) -> Array:
        return self.theta_ref.copy()

    def evaluate(self, theta: Array, k: int) -> ModelAtTheta:
        shift = np.asarray(theta, dtype=np.float64) - self.theta_ref
        values = {
                name: self.matrices[name] + np.tensordot(shift, self.derivatives[name], axes=1)
                for name in _MATRIX_NAMES
                }
        return ModelAtTheta(
                **values,
                **{'d' + name: self.derivatives[name].copy() for name in _MATRIX_NAMES},
                dPi0_sqrt=self.dPi0_sqrt,
                )


def example1_spec(delta_t: float = 0.1, tau_true: float = 5.0) -> Example1Spec:
    return Example1Spec(delta_t=delta_t, tau_true=tau_true)


def example3_spec(delta: float = 1e-2) -> Example3Spec:
    return Example3Spec(delta=delta)


def literal_spec(
        name: str,
        matrices: Mapping[str, Any],
        derivatives: Sequence[Mapping[str, Any]] = (),
        theta: Sequence[float] | None = None,
        dPi0_sqrt: Sequence[Any] | None = None,
        ) -> LiteralModelSpec:
    try:
        values = {k: np.array(matrices[k], dtype=np.float64, ndmin=2) for k in _MATRIX_NAMES if k != 'x0'}
    except KeyError as e:
        raise ConfigError(f'custom model {name!r} is missing matrix {e}') from e
    values['x0'] = np.array(matrices.get('x0', np.zeros(len(values['F']))), dtype=np.float64, ndmin=1)
    theta_ref = np.atleast_1d(np.array(theta if theta is not None else [0.0] * max(len(derivatives), 1), dtype=np.float64))
    p = len(theta_ref)
    if derivatives and len(derivatives) != p:
        raise ConfigError(f'custom model {name!r} has {len(derivatives)} derivative entries for {p} parameter(s)')
    stacks = {}
    for k, v in values.items():
        layers = [np.array(d[k], dtype=np.float64).reshape(v.shape) if k in d else np.zeros_like(v) for d in derivatives]
        stacks[k] = np.stack(layers) if layers else np.zeros((p,) + v.shape)
    factor = None if dPi0_sqrt is None else np.array(dPi0_sqrt, dtype=np.float64).reshape(p, *values['Pi0'].shape)
    return LiteralModelSpec(name=name, matrices=values, derivatives=stacks, theta_ref=theta_ref, dPi0_sqrt=factor)


def model_from_dict(d: Mapping[str, Any], tau_true: float = 5.0) -> ModelSpec:
    name = d.get('name')
    if name == 'example1':
        return example1_spec(delta_t=float(d.get('delta_t', 0.1)), tau_true=float(d.get('tau_true', tau_true)))
    elif name == 'example3':
        return example3_spec(delta=float(d.get('delta', 1e-2)))
    elif isinstance(name, str) and 'F' in d:
        return literal_spec(name, d, d.get('derivatives', ()), d.get('theta'), d.get('dPi0_sqrt'))
    else:
        raise ConfigError(f'Unrecognized model description: {name=}')


def load_model_file(path: Path | str) -> ModelSpec:
    path = Path(path)
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f'cannot read model file {path}: {e}') from e
    LOGGER.info(f'Loaded model {d.get("name")!r} from {path}')
    return model_from_dict(d)


def simulate(
        spec: ModelSpec,
        theta: Array | Sequence[float] | float,
        N: int,
        seed: int,
        zero_noise: bool = False,
        generator: str = 'PCG64',
        ) -> Trajectory:
    """ Draw a measurement history from the model at θ.

    Draws happen in a fixed order (x_0, then w_k, v_k per step) from a
    `numpy.random.Generator` over the named bit generator, so equal
    arguments give bitwise-identical trajectories.
    """
    if N < 1:
        raise InvalidArgumentError(f'N must be at least 1, got {N}')
    theta = spec.check_domain(np.asarray(theta, dtype=np.float64))
    try:
        bitgen = getattr(np.random, generator)
    except AttributeError as e:
        raise ConfigError(f'Unrecognized bit generator: {generator}') from e
    rng = np.random.Generator(bitgen(seed))

    model = spec.evaluate(theta, 1)
    dims = model.dims
    if zero_noise:
        x = model.x0.copy()
    else:
        x = model.x0 + cholesky_upper(model.Pi0).T @ rng.standard_normal(dims.n)

    zs = np.empty((N, dims.m))
    xs = np.empty((N, dims.n))
    for k in range(1, N + 1):
        if k > 1 and not spec.time_invariant:
            model = spec.evaluate(theta, k)
        if zero_noise:
            x = model.F @ x
            z = model.H @ x
        else:
            w = cholesky_upper(model.Q).T @ rng.standard_normal(dims.q)
            x = model.F @ x + model.G @ w
            z = model.H @ x + cholesky_upper(model.R).T @ rng.standard_normal(dims.m)
        xs[k - 1] = x
        zs[k - 1] = z
    LOGGER.debug(f'Simulated {N} steps of {spec.name} at {theta=} with {seed=}')
    return Trajectory(z=zs, x=xs)


def model_sequence(spec: ModelSpec, theta: Array | Sequence[float] | float, N: int) -> Iterator[tuple[int, ModelAtTheta]]:
    """ Yield (k, model) for k = 1..N, evaluating time-invariant specs once. """
    theta = spec.check_domain(np.asarray(theta, dtype=np.float64))
    model = spec.evaluate(theta, 1)
    for k in range(1, N + 1):
        if k > 1 and not spec.time_invariant:
            model = spec.evaluate(theta, k)
        yield k, model
