""" Conventional covariance Kalman filter and its sensitivity recursions.

The filter runs in predicted (condensed) form:

    e   = z − H x̂
    Re  = H P Hᵀ + R
    Kp  = F P Hᵀ Re⁻¹
    x̂'  = F x̂ + Kp e
    P'  = F P Fᵀ + G Q Gᵀ − Kp Re Kpᵀ

The score comes from differentiating every line of the recursion with
respect to each parameter. Re is only ever used through its Cholesky factor.
"""
from __future__ import annotations
from dataclasses import dataclass, replace
from typing import Sequence
import logging

import numpy as np
import scipy.linalg

from .errors import NonFiniteError, NotPositiveDefiniteError, SingularFactorError, SingularInnovationError
from .linalg import EPS, cholesky_upper, condition_number, symmetrize
from .model import LOG_2PI, ModelAtTheta, ModelSpec, Trajectory, model_sequence
from .score import ScoreResult, StepDiagnostics
from .types import Array


LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class KfState:
    xhat: Array
    P: Array


@dataclass(frozen=True)
class KfSensitivity:
    dxhat: Array  # (p, n)
    dP: Array     # (p, n, n)


@dataclass(frozen=True)
class KfStepOutput:
    next_state: KfState
    e: Array
    Re: Array
    cond_Re: float
    Re_sqrt: Array
    Kp: Array

    def solve_Re(self, b: Array) -> Array:
        return scipy.linalg.cho_solve((self.Re_sqrt, False), b)

    @property
    def loglik_term(self) -> float:
        m = len(self.e)
        logdet = 2 * float(np.sum(np.log(np.diag(self.Re_sqrt))))
        return 0.5 * (m / 2 * LOG_2PI + logdet + float(self.e @ self.solve_Re(self.e)))


def kf_init(model: ModelAtTheta) -> KfState:
    return KfState(xhat=model.x0.copy(), P=model.Pi0.copy())


def factor_innovation_covariance(Re: Array) -> Array:
    """ Cholesky factor of Re, rejecting matrices that are singular to working precision.

    A squared pivot u_jj² at or below eps·max(diag Re) means Re has lost definiteness
    in floating point.
    """
    try:
        u = cholesky_upper(Re)
    except NotPositiveDefiniteError as e:
        raise SingularInnovationError(e.index, f'innovation covariance is not positive definite at pivot {e.index}') from e
    pivots = np.diag(u) ** 2
    threshold = EPS * float(np.max(np.diag(Re)))
    bad = np.flatnonzero(~(pivots > threshold))
    if bad.size:
        index = int(bad[0])
        raise SingularInnovationError(index, f'innovation covariance pivot {pivots[index]:.3e} at index {index} is below {threshold:.3e}')
    return u


def kf_step(state: KfState, model: ModelAtTheta, z: Array) -> KfStepOutput:
    F, G, H = model.F, model.G, model.H
    P = state.P
    e = z - H @ state.xhat
    Re = symmetrize(H @ P @ H.T + model.R)
    Re_sqrt = factor_innovation_covariance(Re)
    Kp = scipy.linalg.cho_solve((Re_sqrt, False), (F @ P @ H.T).T).T
    xhat = F @ state.xhat + Kp @ e
    P_next = symmetrize(F @ P @ F.T + G @ model.Q @ G.T - Kp @ Re @ Kp.T)
    if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(P_next))):
        raise NonFiniteError(0, 'filter state became non-finite')
    return KfStepOutput(
            next_state=KfState(xhat=xhat, P=P_next),
            e=e,
            Re=Re,
            cond_Re=condition_number(Re),
            Re_sqrt=Re_sqrt,
            Kp=Kp,
            )


def kf_sensitivity_init(model: ModelAtTheta) -> KfSensitivity:
    return KfSensitivity(dxhat=model.dx0.copy(), dP=model.dPi0.copy())


def kf_sensitivity_step(
        state: KfState,
        sens: KfSensitivity,
        model: ModelAtTheta,
        out: KfStepOutput,
        ) -> tuple[KfSensitivity, Array]:
    """ Propagate the filter and Riccati sensitivities through one step.

    Returns the next sensitivities and this step's gradient increment
    ½tr(Re⁻¹dRe) + eᵀRe⁻¹de − ½eᵀRe⁻¹dRe Re⁻¹e for every parameter.
    """
    F, G, H, Q = model.F, model.G, model.H, model.Q
    P, x = state.P, state.xhat
    e, Re, Kp = out.e, out.Re, out.Kp
    a = out.solve_Re(e)
    p = len(sens.dxhat)

    dxhat = np.empty_like(sens.dxhat)
    dP = np.empty_like(sens.dP)
    increment = np.empty(p)
    for i in range(p):
        dF, dG, dH = model.dF[i], model.dG[i], model.dH[i]
        dx, dPi = sens.dxhat[i], sens.dP[i]

        de = -dH @ x - H @ dx
        dRe = symmetrize(dH @ P @ H.T + H @ dPi @ H.T + H @ P @ dH.T + model.dR[i])
        dFPHt = dF @ P @ H.T + F @ dPi @ H.T + F @ P @ dH.T
        dKp = out.solve_Re((dFPHt - Kp @ dRe).T).T

        dxhat[i] = dF @ x + F @ dx + dKp @ e + Kp @ de
        dP[i] = symmetrize(
                dF @ P @ F.T + F @ dPi @ F.T + F @ P @ dF.T
                + dG @ Q @ G.T + G @ model.dQ[i] @ G.T + G @ Q @ dG.T
                - dKp @ Re @ Kp.T - Kp @ dRe @ Kp.T - Kp @ Re @ dKp.T
                )
        increment[i] = 0.5 * float(np.trace(out.solve_Re(dRe))) + float(a @ de) - 0.5 * float(a @ dRe @ a)

    return KfSensitivity(dxhat=dxhat, dP=dP), increment


def kf_loglik(spec: ModelSpec, theta: Array | Sequence[float] | float, data: Trajectory) -> float:
    data.check_dims(spec.dims)
    total = 0.0
    state: KfState | None = None
    for k, model in model_sequence(spec, theta, data.N):
        if state is None:
            state = kf_init(model)
        try:
            out = kf_step(state, model, data.z[k - 1])
        except SingularInnovationError as e:
            raise e.at_step(k)
        except NonFiniteError as e:
            raise NonFiniteError(e.index, f'step {k}: {e}') from e
        total += out.loglik_term
        state = out.next_state
    return total


def kf_score(spec: ModelSpec, theta: Array | Sequence[float] | float, data: Trajectory) -> ScoreResult:
    dims = spec.dims
    data.check_dims(dims)
    acc = ScoreResult.start('conventional', dims.p)
    diagnostics: list[StepDiagnostics] = []
    loglik = 0.0
    gradient = np.zeros(dims.p)
    P1 = dP1 = None
    state: KfState | None = None
    sens: KfSensitivity | None = None
    k = 0
    try:
        for k, model in model_sequence(spec, theta, data.N):
            if state is None:
                state, sens = kf_init(model), kf_sensitivity_init(model)
            assert sens is not None
            out = kf_step(state, model, data.z[k - 1])
            sens, increment = kf_sensitivity_step(state, sens, model, out)
            if not np.all(np.isfinite(sens.dP)) or not np.all(np.isfinite(increment)):
                raise NonFiniteError(0, 'sensitivities became non-finite')
            loglik += out.loglik_term
            gradient += increment
            diagnostics.append(StepDiagnostics(step=k, cond_Re=out.cond_Re))
            state = out.next_state
            if k == 1:
                P1, dP1 = state.P, sens.dP
    except (SingularFactorError, NonFiniteError) as e:
        return replace(acc, diagnostics=tuple(diagnostics), P1=P1, dP1=dP1).fail(k, e)

    assert state is not None
    LOGGER.debug(f'conventional score of {spec.name} at {theta=}: {loglik=} {gradient=}')
    return replace(
            acc,
            loglik=loglik,
            gradient=gradient,
            diagnostics=tuple(diagnostics),
            final_xhat=state.xhat,
            final_P=state.P,
            P1=P1,
            dP1=dP1,
            )
