""" Extended square-root covariance filter in condensed form.

Each step rotates the pre-array

    [ R^{1/2}    0          -R^{-T/2} z ]
    [ S Hᵀ       S Fᵀ        b          ]
    [ 0          Q^{1/2}Gᵀ   0          ]

into the post-array

    [ Re^{1/2}   K̄ᵀ          -ē         ]
    [ 0          S'          b'         ]
    [ 0          0           γ          ]

where S = P^{1/2} and b = P^{-T/2} x̂ are the carried quantities.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Iterator, Sequence
import logging

import numpy as np

from .errors import SingularInnovationError
from .linalg import check_innovation_factor, cholesky_upper, householder_block_triangularize, solve_upper
from .model import LOG_2PI, Dimensions, ModelAtTheta, ModelSpec, Trajectory, model_sequence
from .types import Array


LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class SqrtFilterState:
    S: Array  # P^{1/2}, upper triangular
    b: Array  # P^{-T/2} x̂

    def covariance(self) -> Array:
        return self.S.T @ self.S

    def estimate(self) -> Array:
        return self.S.T @ self.b


@dataclass(frozen=True)
class NoiseFactors:
    R_sqrt: Array
    Q_sqrt: Array

    @classmethod
    def of(cls, model: ModelAtTheta) -> NoiseFactors:
        return cls(R_sqrt=cholesky_upper(model.R), Q_sqrt=cholesky_upper(model.Q))


@dataclass(frozen=True)
class EsrcfStepOutput:
    Re_sqrt: Array
    Kbar_T: Array
    ebar: Array
    gamma: Array
    next_state: SqrtFilterState

    @property
    def loglik_term(self) -> float:
        return loglik_term(self.Re_sqrt, self.ebar)


def loglik_term(re_sqrt: Array, ebar: Array) -> float:
    """ One step's contribution ½[(m/2)ln 2π + 2 Σ ln r_jj + ēᵀē]. """
    m = len(ebar)
    return 0.5 * (m / 2 * LOG_2PI + 2 * float(np.sum(np.log(np.diag(re_sqrt)))) + float(ebar @ ebar))


def esrcf_init(model: ModelAtTheta) -> SqrtFilterState:
    S = cholesky_upper(model.Pi0)
    return SqrtFilterState(S=S, b=solve_upper(S, model.x0, 'transposed-left'))


def build_prearray(state: SqrtFilterState, model: ModelAtTheta, z: Array, factors: NoiseFactors | None = None) -> Array:
    if factors is None:
        factors = NoiseFactors.of(model)
    dims = model.dims
    n, m, q = dims.n, dims.m, dims.q
    pre = np.zeros((m + n + q, m + n + 1))
    pre[:m, :m] = factors.R_sqrt
    pre[:m, -1] = -solve_upper(factors.R_sqrt, z, 'transposed-left')
    pre[m:m + n, :m] = state.S @ model.H.T
    pre[m:m + n, m:m + n] = state.S @ model.F.T
    pre[m:m + n, -1] = state.b
    pre[m + n:, m:m + n] = factors.Q_sqrt @ model.G.T
    return pre


def leading_block_scale(prearray: Array, lead_cols: int) -> float:
    """ Largest column norm of the leading block, the reference for singularity checks. """
    return float(np.max(np.linalg.norm(prearray[:, :lead_cols], axis=0)))


def rotate_prearray(prearray: Array, dims: Dimensions) -> Array:
    lead = dims.m + dims.n
    post = householder_block_triangularize(prearray, lead)
    check_innovation_factor(post[:dims.m, :dims.m], leading_block_scale(prearray, lead))
    return post


def read_post_array(post: Array, dims: Dimensions) -> EsrcfStepOutput:
    n, m = dims.n, dims.m
    return EsrcfStepOutput(
            Re_sqrt=post[:m, :m],
            Kbar_T=post[:m, m:m + n],
            ebar=-post[:m, m + n],
            gamma=post[m + n:, m + n],
            next_state=SqrtFilterState(S=post[m:m + n, m:m + n], b=post[m:m + n, m + n]),
            )


def esrcf_step(state: SqrtFilterState, model: ModelAtTheta, z: Array, factors: NoiseFactors | None = None) -> EsrcfStepOutput:
    dims = model.dims
    post = rotate_prearray(build_prearray(state, model, z, factors), dims)
    return read_post_array(post, dims)


def iterate_esrcf(
        spec: ModelSpec,
        theta: Array | Sequence[float] | float,
        data: Trajectory,
        ) -> Iterator[tuple[int, EsrcfStepOutput]]:
    """ Run the filter over `data`, yielding (k, step output) for k = 1..N.

    A singular innovation factor is raised with the failing step attached.
    """
    data.check_dims(spec.dims)
    state: SqrtFilterState | None = None
    current: ModelAtTheta | None = None
    factors: NoiseFactors | None = None
    for k, model in model_sequence(spec, theta, data.N):
        if model is not current:
            current, factors = model, NoiseFactors.of(model)
        if state is None:
            state = esrcf_init(model)
        try:
            out = esrcf_step(state, model, data.z[k - 1], factors)
        except SingularInnovationError as e:
            raise e.at_step(k)
        yield k, out
        state = out.next_state


def esrcf_loglik(spec: ModelSpec, theta: Array | Sequence[float] | float, data: Trajectory) -> float:
    total = 0.0
    for _, out in iterate_esrcf(spec, theta, data):
        total += out.loglik_term
    LOGGER.debug(f'esrcf loglik of {spec.name} at {theta=}: {total}')
    return total
