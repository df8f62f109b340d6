""" Exception hierarchy.

Kernels raise; filter folds catch the arithmetic failures and record them on
their result objects. Every class carries a short `token` used as the first
word of the CLI's one-line diagnostics.
"""
from __future__ import annotations


class SqrtScoreError(Exception):
    token: str = 'error'


class InvalidArgumentError(SqrtScoreError, ValueError):
    token = 'invalid-argument'


class DomainError(SqrtScoreError, ValueError):
    token = 'domain'


class ConfigError(SqrtScoreError, ValueError):
    token = 'config'


class NotPositiveDefiniteError(SqrtScoreError, ArithmeticError):
    token = 'not-positive-definite'

    def __init__(self, index: int, msg: str | None = None):
        super().__init__(msg or f'non-positive pivot at index {index}')
        self.index = index


class SingularFactorError(SqrtScoreError, ArithmeticError):
    token = 'singular-factor'

    def __init__(self, index: int, msg: str | None = None):
        super().__init__(msg or f'singular triangular factor at diagonal index {index}')
        self.index = index


class SingularInnovationError(SingularFactorError):
    token = 'singular-innovation'

    def __init__(self, index: int, msg: str | None = None, step: int | None = None):
        super().__init__(index, msg or f'innovation factor is singular at diagonal index {index}')
        self.step = step

    def at_step(self, step: int) -> SingularInnovationError:
        self.step = step
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        return msg if self.step is None else f'step {self.step}: {msg}'


class NonFiniteError(SqrtScoreError, ArithmeticError):
    token = 'non-finite'

    def __init__(self, index: int, msg: str | None = None):
        super().__init__(msg or f'non-finite evaluation at coordinate {index}')
        self.index = index


class OracleFailure(SqrtScoreError):
    token = 'oracle-failure'


class OutputError(SqrtScoreError, OSError):
    token = 'output'


class FactorDerivativeError(SqrtScoreError, ArithmeticError):
    token = 'factor-derivative'

    def __init__(self, residual: float, msg: str | None = None):
        super().__init__(msg or f'factor derivative is not block upper triangular: residual {residual:.3e}')
        self.residual = residual
