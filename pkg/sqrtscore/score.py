""" Log-likelihood score in square-root covariance variables.

The eSRCF pre-array is widened by one block of derivative columns per
parameter. A single rotation triangularizes the leading columns, and the
derivative blocks of the post-array

    [ X  Y  M ]
    [ N  V  W ]
    [ B  K  T ]

give the derivatives of the filter quantities through the strict LDU split of
[[X, Y], [N, V]]·T⁻¹, where T = [[Re^{1/2}, K̄ᵀ], [0, S']] is the leading
upper-triangular part of the post-array.
"""
from __future__ import annotations
from dataclasses import dataclass, replace
from typing import Sequence
import logging

import numpy as np

from .errors import FactorDerivativeError, InvalidArgumentError, NonFiniteError, SingularFactorError, SingularInnovationError
from .esrcf import NoiseFactors, SqrtFilterState, build_prearray, esrcf_init, loglik_term, rotate_prearray
from .linalg import LduSplit, cholesky_upper_derivative, condition_number, solve_upper, strict_ldu_split
from .model import Dimensions, ModelAtTheta, ModelSpec, Trajectory, model_sequence
from .types import Array, Method


LOGGER = logging.getLogger(__name__)


ZERO_BLOCK_RTOL = 1e-10


@dataclass(frozen=True)
class DerivativeState:
    dS: Array  # (p, n, n), upper triangular per parameter
    db: Array  # (p, n)


@dataclass(frozen=True)
class PostArrayBlocks:
    Re_sqrt: Array
    Kbar_T: Array
    ebar: Array
    gamma: Array
    S_next: Array
    b_next: Array
    X: Array  # (p, m, m)
    Y: Array  # (p, m, n)
    M: Array  # (p, m)
    N: Array  # (p, n, m)
    V: Array  # (p, n, n)
    W: Array  # (p, n)
    B: Array  # (p, q, m)
    K: Array  # (p, q, n)
    T: Array  # (p, q)

    @property
    def factor(self) -> Array:
        """ The upper-triangular leading block [[Re^{1/2}, K̄ᵀ], [0, S']]. """
        m, n = len(self.ebar), len(self.b_next)
        out = np.zeros((m + n, m + n))
        out[:m, :m] = self.Re_sqrt
        out[:m, m:] = self.Kbar_T
        out[m:, m:] = self.S_next
        return out

    def derivative_block(self, i: int) -> Array:
        """ [[X, Y], [N, V]] for parameter i. """
        return np.block([[self.X[i], self.Y[i]], [self.N[i], self.V[i]]])


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    cond_Re: float
    zero_block_residual: float = 0.0


@dataclass(frozen=True)
class ScoreResult:
    """ Negative log-likelihood, its gradient, and what the filter carried along. """
    loglik: float
    gradient: Array
    method: Method
    diagnostics: tuple[StepDiagnostics, ...] = ()
    failed: bool = False
    failed_step: int | None = None
    failure: str | None = None
    final_xhat: Array | None = None
    final_P: Array | None = None
    P1: Array | None = None
    dP1: Array | None = None  # (p, n, n)

    @classmethod
    def start(cls, method: Method, p: int) -> ScoreResult:
        return cls(loglik=0.0, gradient=np.zeros(p), method=method)

    def fail(self, step: int, error: Exception) -> ScoreResult:
        if isinstance(error, SingularInnovationError) and error.step is None:
            error.at_step(step)
        LOGGER.info(f'{self.method} filter failed at step {step}: {error}')
        return replace(
                self,
                loglik=float('nan'),
                gradient=np.full_like(self.gradient, np.nan),
                failed=True,
                failed_step=step,
                failure=f'{getattr(error, "token", "error")}: {error}',
                )


def init_derivatives(model: ModelAtTheta, state: SqrtFilterState | None = None) -> DerivativeState:
    if state is None:
        state = esrcf_init(model)
    dims = model.dims
    if model.dPi0_sqrt is not None:
        dS = np.triu(np.asarray(model.dPi0_sqrt, dtype=np.float64))
    else:
        dS = np.stack([cholesky_upper_derivative(model.Pi0, model.dPi0[i], state.S) for i in range(dims.p)])
    # Sᵀb = x0  ⇒  Sᵀ db = dx0 − dSᵀ b
    db = np.stack([
        solve_upper(state.S, model.dx0[i] - dS[i].T @ state.b, 'transposed-left')
        for i in range(dims.p)
        ])
    return DerivativeState(dS=dS, db=db)


@dataclass(frozen=True)
class NoiseFactorDerivatives:
    dR_sqrt: Array  # (p, m, m)
    dQ_sqrt: Array  # (p, q, q)

    @classmethod
    def of(cls, model: ModelAtTheta, factors: NoiseFactors) -> NoiseFactorDerivatives:
        p = model.dims.p
        return cls(
                dR_sqrt=np.stack([cholesky_upper_derivative(model.R, model.dR[i], factors.R_sqrt) for i in range(p)]),
                dQ_sqrt=np.stack([cholesky_upper_derivative(model.Q, model.dQ[i], factors.Q_sqrt) for i in range(p)]),
                )


def build_augmented_prearray(
        state: SqrtFilterState,
        deriv: DerivativeState,
        model: ModelAtTheta,
        z: Array,
        factors: NoiseFactors | None = None,
        dfactors: NoiseFactorDerivatives | None = None,
        ) -> Array:
    if factors is None:
        factors = NoiseFactors.of(model)
    if dfactors is None:
        dfactors = NoiseFactorDerivatives.of(model, factors)
    dims = model.dims
    n, m, p = dims.n, dims.m, dims.p
    width = m + n + 1

    pre = build_prearray(state, model, z, factors)
    y = -pre[:m, -1]  # R^{-T/2} z
    out = np.zeros((pre.shape[0], width * (1 + p)))
    out[:, :width] = pre
    for i in range(p):
        blk = out[:, width * (1 + i):width * (2 + i)]
        dRs = dfactors.dR_sqrt[i]
        blk[:m, :m] = dRs
        blk[:m, -1] = solve_upper(factors.R_sqrt, dRs.T @ y, 'transposed-left')
        blk[m:m + n, :m] = deriv.dS[i] @ model.H.T + state.S @ model.dH[i].T
        blk[m:m + n, m:m + n] = deriv.dS[i] @ model.F.T + state.S @ model.dF[i].T
        blk[m:m + n, -1] = deriv.db[i]
        blk[m + n:, m:m + n] = dfactors.dQ_sqrt[i] @ model.G.T + factors.Q_sqrt @ model.dG[i].T
    return out


def triangularize_augmented(prearray: Array, dims: Dimensions) -> PostArrayBlocks:
    n, m, p = dims.n, dims.m, dims.p
    width = m + n + 1
    if prearray.shape != (m + n + dims.q, width * (1 + p)):
        raise InvalidArgumentError(f'augmented pre-array has shape {prearray.shape} for {dims}')
    post = rotate_prearray(prearray, dims)
    blocks = np.stack([post[:, width * (1 + i):width * (2 + i)] for i in range(p)])
    top, mid, bottom = slice(0, m), slice(m, m + n), slice(m + n, None)
    first, second = slice(0, m), slice(m, m + n)
    return PostArrayBlocks(
            Re_sqrt=post[top, first],
            Kbar_T=post[top, second],
            ebar=-post[top, m + n],
            gamma=post[bottom, m + n],
            S_next=post[mid, second],
            b_next=post[mid, m + n],
            X=blocks[:, top, first], Y=blocks[:, top, second], M=blocks[:, top, m + n],
            N=blocks[:, mid, first], V=blocks[:, mid, second], W=blocks[:, mid, m + n],
            B=blocks[:, bottom, first], K=blocks[:, bottom, second], T=blocks[:, bottom, m + n],
            )


def ldu_of_product(blocks: PostArrayBlocks, i: int) -> LduSplit:
    return strict_ldu_split(solve_upper(blocks.factor, blocks.derivative_block(i), 'right'))


def zero_block_residual(blocks: PostArrayBlocks, split: LduSplit, i: int) -> float:
    """ Relative size of the lower-left block of [[X, Y], [N, V]] − (L̄ − L̄ᵀ)·T.

    The skew-symmetric part (L̄ − L̄ᵀ) has to account for the whole lower-left
    block N, otherwise the factor derivative would not be upper triangular.
    """
    m = len(blocks.ebar)
    factor = blocks.factor
    skew = split.strict_lower - split.strict_lower.T
    lhs = blocks.derivative_block(i) - skew @ factor
    scale = max(
            float(np.max(np.abs(blocks.derivative_block(i)))),
            float(np.max(np.abs(skew) @ np.abs(factor))),
            float(np.finfo(np.float64).tiny),
            )
    return float(np.max(np.abs(lhs[m:, :m]))) / scale


def update_factor_derivatives(
        blocks: PostArrayBlocks,
        split: LduSplit,
        i: int,
        residual: float | None = None,
        ) -> tuple[Array, Array, Array]:
    """ Return (dRe^{1/2}, dK̄ᵀ, dS') from (L̄ᵀ + D + Ū)·T.

    Raises `FactorDerivativeError` when the zero-block residual (computed here
    unless given) exceeds `ZERO_BLOCK_RTOL`.
    """
    if residual is None:
        residual = zero_block_residual(blocks, split, i)
    if not residual <= ZERO_BLOCK_RTOL:
        raise FactorDerivativeError(residual)
    m = len(blocks.ebar)
    prod = (split.strict_lower.T + split.diagonal + split.strict_upper) @ blocks.factor
    return np.triu(prod[:m, :m]), prod[:m, m:], np.triu(prod[m:, m:])


def update_state_derivatives(blocks: PostArrayBlocks, split: LduSplit, i: int) -> tuple[Array, Array]:
    """ Return (dē, db') from

        [−dē; db'] = (L̄ᵀ − L̄)·[−ē; b'] + T^{-T}·[B K]ᵀ·γ + [M; W].
    """
    m = len(blocks.ebar)
    L = split.strict_lower
    carried = np.concatenate([-blocks.ebar, blocks.b_next])
    noise = np.hstack([blocks.B[i], blocks.K[i]])
    rhs = (
            (L.T - L) @ carried
            + solve_upper(blocks.factor, noise.T @ blocks.gamma, 'transposed-left')
            + np.concatenate([blocks.M[i], blocks.W[i]])
            )
    return -rhs[:m], rhs[m:]


def score_step_accumulate(blocks: PostArrayBlocks, dRe_sqrt: Array, debar: Array, i: int, acc: ScoreResult) -> ScoreResult:
    gradient = acc.gradient.copy()
    gradient[i] += float(np.sum(np.diag(dRe_sqrt) / np.diag(blocks.Re_sqrt))) + float(blocks.ebar @ debar)
    return replace(acc, gradient=gradient)


def run(spec: ModelSpec, theta: Array | Sequence[float] | float, data: Trajectory) -> ScoreResult:
    """ Evaluate the negative log-likelihood and its gradient in one filter pass.

    Numerical breakdowns (a singular innovation or carried factor, or a factor
    derivative that fails the zero-block check) are returned as a failed result
    carrying the step index.
    """
    dims = spec.dims
    data.check_dims(dims)
    acc = ScoreResult.start('sqrt', dims.p)
    diagnostics: list[StepDiagnostics] = []
    loglik = 0.0
    P1 = dP1 = None
    state: SqrtFilterState | None = None
    deriv: DerivativeState | None = None
    current: ModelAtTheta | None = None
    k = 0
    try:
        for k, model in model_sequence(spec, theta, data.N):
            if model is not current:
                current = model
                factors = NoiseFactors.of(model)
                dfactors = NoiseFactorDerivatives.of(model, factors)
            if state is None:
                state = esrcf_init(model)
                deriv = init_derivatives(model, state)
            assert deriv is not None

            pre = build_augmented_prearray(state, deriv, model, data.z[k - 1], factors, dfactors)
            blocks = triangularize_augmented(pre, dims)
            dS_next = np.empty_like(deriv.dS)
            db_next = np.empty_like(deriv.db)
            residual = 0.0
            for i in range(dims.p):
                split = ldu_of_product(blocks, i)
                residual_i = zero_block_residual(blocks, split, i)
                residual = max(residual, residual_i)
                dRe_sqrt, _, dS_next[i] = update_factor_derivatives(blocks, split, i, residual_i)
                debar, db_next[i] = update_state_derivatives(blocks, split, i)
                acc = score_step_accumulate(blocks, dRe_sqrt, debar, i, acc)
            loglik += loglik_term(blocks.Re_sqrt, blocks.ebar)
            diagnostics.append(StepDiagnostics(step=k, cond_Re=condition_number(blocks.Re_sqrt) ** 2, zero_block_residual=residual))
            LOGGER.debug(f'step {k}: {loglik=} gradient={acc.gradient}')

            state = SqrtFilterState(S=blocks.S_next, b=blocks.b_next)
            deriv = DerivativeState(dS=dS_next, db=db_next)
            if k == 1:
                P1 = state.covariance()
                dP1 = np.stack([dS.T @ state.S + state.S.T @ dS for dS in dS_next])
    except (SingularFactorError, FactorDerivativeError) as e:
        return replace(acc, diagnostics=tuple(diagnostics), P1=P1, dP1=dP1).fail(k, e)

    assert state is not None
    if not (np.isfinite(loglik) and np.all(np.isfinite(acc.gradient))):
        return replace(acc, diagnostics=tuple(diagnostics)).fail(k, NonFiniteError(0, 'non-finite log-likelihood or gradient'))
    return replace(
            acc,
            loglik=loglik,
            diagnostics=tuple(diagnostics),
            final_xhat=state.estimate(),
            final_P=state.covariance(),
            P1=P1,
            dP1=dP1,
            )
