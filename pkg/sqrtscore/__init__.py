""" Log-likelihood gradients of linear Gaussian state-space models in square-root covariance form.

Key features:
    - One Householder rotation per step yields the filter update and the exact score.
    - Conventional Kalman filter with sensitivity recursions as a baseline.
    - Extended-precision reference values for measuring roundoff.
    - Stability experiments run as a cached, concurrent job graph.

Limitations:
    - No parameter optimization; only the log-likelihood and its gradient are evaluated.
"""
from .errors import SqrtScoreError, SingularInnovationError, DomainError, ConfigError
from .model import ModelSpec, ModelAtTheta, Trajectory, example1_spec, example3_spec, literal_spec, simulate
from .esrcf import esrcf_loglik
from .kalman import kf_loglik, kf_score
from .score import ScoreResult, run
from .oracle import oracle_filter_and_score, error_report, finite_difference_gradient
from .config import RunConfig


__EXPORT__ = [
        SqrtScoreError, SingularInnovationError, DomainError, ConfigError,
        ModelSpec, ModelAtTheta, Trajectory, example1_spec, example3_spec, literal_spec, simulate,
        esrcf_loglik, kf_loglik, kf_score, ScoreResult, run,
        oracle_filter_and_score, error_report, finite_difference_gradient,
        RunConfig,
        ]
