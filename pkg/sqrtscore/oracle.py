""" Extended-precision reference values and error metrics.

The reference engine runs the conventional filter and its sensitivity
recursions in `mpmath` on the exact binary values of the working-precision
model, so every difference it reports is roundoff of the method under test.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence
import logging
import math

import mpmath
from mpmath.ctx_mp import MPContext
import numpy as np

from .errors import InvalidArgumentError, NonFiniteError, OracleFailure
from .kalman import kf_score
from .model import ModelAtTheta, ModelSpec, Trajectory, model_sequence
from .score import ScoreResult, run
from .types import Array, ProfileMeasure


LOGGER = logging.getLogger(__name__)


DEFAULT_DPS = 50


@dataclass(frozen=True)
class OracleResult:
    """ Reference quantities as object arrays of `mpmath.mpf`. """
    P1: np.ndarray        # (n, n)
    dP1: np.ndarray       # (p, n, n)
    loglik: mpmath.mpf
    gradient: np.ndarray  # (p,)
    dps: int

    def downcast(self) -> ScoreResult:
        """ The reference values rounded to working precision. """
        return ScoreResult(
                loglik=float(self.loglik),
                gradient=self.gradient.astype(np.float64),
                method='sqrt',
                P1=self.P1.astype(np.float64),
                dP1=self.dP1.astype(np.float64),
                )


class _Engine:
    """ Matrix helpers bound to one private `mpmath` context. """

    def __init__(self, dps: int):
        self.ctx = MPContext()
        self.ctx.dps = dps

    def mat(self, a: Array) -> mpmath.matrix:
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        return self.ctx.matrix([[self.ctx.mpf(float(v)) for v in row] for row in a])

    def to_array(self, a: mpmath.matrix) -> np.ndarray:
        return np.array([[a[i, j] for j in range(a.cols)] for i in range(a.rows)], dtype=object)

    def sym(self, a: mpmath.matrix) -> mpmath.matrix:
        return (a + a.T) * self.ctx.mpf(0.5)

    def trace(self, a: mpmath.matrix) -> mpmath.mpf:
        return self.ctx.fsum(a[j, j] for j in range(a.rows))

    def scalar(self, a: mpmath.matrix) -> mpmath.mpf:
        assert a.rows == a.cols == 1
        return a[0, 0]


@dataclass(frozen=True)
class _MpModel:
    F: mpmath.matrix
    G: mpmath.matrix
    H: mpmath.matrix
    Q: mpmath.matrix
    R: mpmath.matrix
    Pi0: mpmath.matrix
    x0: mpmath.matrix
    dF: list[mpmath.matrix]
    dG: list[mpmath.matrix]
    dH: list[mpmath.matrix]
    dQ: list[mpmath.matrix]
    dR: list[mpmath.matrix]
    dPi0: list[mpmath.matrix]
    dx0: list[mpmath.matrix]

    @classmethod
    def convert(cls, eng: _Engine, model: ModelAtTheta) -> _MpModel:
        names = ['F', 'G', 'H', 'Q', 'R', 'Pi0', 'x0']
        return cls(
                **{name: eng.mat(getattr(model, name)) for name in names},
                **{'d' + name: [eng.mat(a) for a in getattr(model, 'd' + name)] for name in names},
                )


def oracle_filter_and_score(
        spec: ModelSpec,
        theta: Array | Sequence[float] | float,
        data: Trajectory,
        dps: int = DEFAULT_DPS,
        ) -> OracleResult:
    """ Conventional filter and sensitivity recursions at `dps` significant digits.

    Returns P₁ and ∂θP₁ after the first step together with the full-horizon
    negative log-likelihood and gradient.
    """
    if dps < 16:
        raise InvalidArgumentError(f'oracle precision must be at least 16 digits, got {dps}')
    data.check_dims(spec.dims)
    eng = _Engine(dps)
    ctx = eng.ctx
    p = spec.dims.p
    half_log_2pi_term = ctx.mpf(spec.dims.m) / 2 * ctx.log(2 * ctx.pi)

    loglik = ctx.mpf(0)
    gradient = [ctx.mpf(0)] * p
    P1 = dP1 = None
    current: ModelAtTheta | None = None
    x = P = None
    dx: list[mpmath.matrix] = []
    dP: list[mpmath.matrix] = []
    for k, model in model_sequence(spec, theta, data.N):
        if model is not current:
            current, mm = model, _MpModel.convert(eng, model)
        if x is None:
            x, P = mm.x0, mm.Pi0
            dx, dP = list(mm.dx0), list(mm.dPi0)
        z = eng.mat(data.z[k - 1])

        e = z - mm.H * x
        Re = eng.sym(mm.H * P * mm.H.T + mm.R)
        try:
            L = ctx.cholesky(Re)
        except ValueError as exc:
            raise OracleFailure(f'step {k}: innovation covariance is singular at {dps} digits') from exc
        Re_inv = ctx.inverse(Re)
        Kp = mm.F * P * mm.H.T * Re_inv
        a = Re_inv * e
        logdet = 2 * ctx.fsum(ctx.log(L[j, j]) for j in range(L.rows))
        loglik += (half_log_2pi_term + logdet + eng.scalar(e.T * a)) / 2

        next_dx, next_dP = [], []
        for i in range(p):
            de = -mm.dH[i] * x - mm.H * dx[i]
            dRe = eng.sym(mm.dH[i] * P * mm.H.T + mm.H * dP[i] * mm.H.T + mm.H * P * mm.dH[i].T + mm.dR[i])
            dFPHt = mm.dF[i] * P * mm.H.T + mm.F * dP[i] * mm.H.T + mm.F * P * mm.dH[i].T
            dKp = (dFPHt - Kp * dRe) * Re_inv
            next_dx.append(mm.dF[i] * x + mm.F * dx[i] + dKp * e + Kp * de)
            next_dP.append(eng.sym(
                mm.dF[i] * P * mm.F.T + mm.F * dP[i] * mm.F.T + mm.F * P * mm.dF[i].T
                + mm.dG[i] * mm.Q * mm.G.T + mm.G * mm.dQ[i] * mm.G.T + mm.G * mm.Q * mm.dG[i].T
                - dKp * Re * Kp.T - Kp * dRe * Kp.T - Kp * Re * dKp.T
                ))
            gradient[i] += eng.trace(Re_inv * dRe) / 2 + eng.scalar(a.T * de) - eng.scalar(a.T * dRe * a) / 2

        x = mm.F * x + Kp * e
        P = eng.sym(mm.F * P * mm.F.T + mm.G * mm.Q * mm.G.T - Kp * Re * Kp.T)
        dx, dP = next_dx, next_dP
        if k == 1:
            P1 = eng.to_array(P)
            dP1 = np.stack([eng.to_array(d) for d in dP])

    assert P1 is not None and dP1 is not None
    LOGGER.debug(f'oracle at {dps} digits for {spec.name}: loglik={mpmath.nstr(loglik, 20)}')
    return OracleResult(P1=P1, dP1=dP1, loglik=loglik, gradient=np.array(gradient, dtype=object), dps=dps)


def _relative_change(ctx: MPContext, a: np.ndarray, b: np.ndarray) -> float:
    a = [ctx.mpf(v) for v in np.ravel(a)]
    b = [ctx.mpf(v) for v in np.ravel(b)]
    scale = max((abs(v) for v in b), default=0)
    diff = max((abs(u - v) for u, v in zip(a, b)), default=0)
    return float(diff / scale) if scale else float(diff)


def precision_escalation_check(
        spec: ModelSpec,
        theta: Array | Sequence[float] | float,
        data: Trajectory,
        dps: int = DEFAULT_DPS,
        ) -> float:
    """ Largest relative change of the reference values when the precision is doubled. """
    base = oracle_filter_and_score(spec, theta, data, dps)
    fine = oracle_filter_and_score(spec, theta, data, 2 * dps)
    ctx = _Engine(2 * dps).ctx
    change = max(
            _relative_change(ctx, base.P1, fine.P1),
            _relative_change(ctx, base.dP1, fine.dP1),
            _relative_change(ctx, np.array([base.loglik], dtype=object), np.array([fine.loglik], dtype=object)),
            _relative_change(ctx, base.gradient, fine.gradient),
            )
    LOGGER.info(f'precision escalation {dps} -> {2 * dps} digits changed references by {change:.3e}')
    return change


def finite_difference_gradient(
        loglik_fn: Callable[[Array], float],
        theta: Array | Sequence[float] | float,
        rel_step: float = 1e-5,
        ) -> Array:
    """ Central differences with step rel_step·max(|θᵢ|, 1) per coordinate. """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    grad = np.empty(len(theta))
    for i in range(len(theta)):
        h = rel_step * max(abs(theta[i]), 1.0)
        shift = np.zeros_like(theta)
        shift[i] = h
        upper, lower = loglik_fn(theta + shift), loglik_fn(theta - shift)
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise NonFiniteError(i, f'log-likelihood is not finite around coordinate {i}')
        grad[i] = (upper - lower) / (2 * h)
    return grad


@dataclass(frozen=True)
class ErrorReport:
    """ Max-absolute errors of one method against the reference; NaN when the method failed. """
    method: str
    p1: float
    dp1: float
    loglf: float
    loglg: float
    failed: bool = False
    failure: str | None = None

    def measure(self, name: ProfileMeasure) -> float:
        return float(getattr(self, name))

    @classmethod
    def failure_marker(cls, method: str, failure: str | None) -> ErrorReport:
        nan = float('nan')
        return cls(method=method, p1=nan, dp1=nan, loglf=nan, loglg=nan, failed=True, failure=failure)


def _max_abs_error(value: Array | float, reference: np.ndarray | mpmath.mpf) -> float:
    diff = np.asarray(value, dtype=np.float64) - np.asarray(reference, dtype=object)
    return float(max((abs(v) for v in np.ravel(diff)), default=0))


def compare(result: ScoreResult, reference: OracleResult, method: str) -> ErrorReport:
    if result.failed:
        return ErrorReport.failure_marker(method, result.failure)
    assert result.P1 is not None and result.dP1 is not None
    return ErrorReport(
            method=method,
            p1=_max_abs_error(result.P1, reference.P1),
            dp1=_max_abs_error(result.dP1, reference.dP1),
            loglf=_max_abs_error(result.loglik, reference.loglik),
            loglg=_max_abs_error(result.gradient, reference.gradient),
            )


def error_report(
        spec: ModelSpec,
        theta: Array | Sequence[float] | float,
        data: Trajectory,
        methods: Iterable[str] = ('sqrt', 'conventional'),
        dps: int = DEFAULT_DPS,
        ) -> dict[str, ErrorReport]:
    """ Error of each method against the reference engine, keyed by method name. """
    reference = oracle_filter_and_score(spec, theta, data, dps)
    reports = {}
    for method in methods:
        if method == 'sqrt':
            result = run(spec, theta, data)
        elif method == 'conventional':
            result = kf_score(spec, theta, data)
        elif method == 'oracle':
            result = reference.downcast()
        else:
            raise InvalidArgumentError(f'Unrecognized method: {method}')
        reports[method] = compare(result, reference, method)
    return reports
