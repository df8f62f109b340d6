import math

import numpy as np
import pytest

from sqrtscore.errors import InvalidArgumentError, NonFiniteError, OracleFailure
from sqrtscore.kalman import kf_score
from sqrtscore.model import Trajectory, example1_spec, example3_spec, literal_spec, simulate
from sqrtscore.oracle import (
        compare, error_report, finite_difference_gradient,
        oracle_filter_and_score, precision_escalation_check,
        )
from sqrtscore.score import ScoreResult


Z1 = Trajectory.from_measurements([[1.0, 1.0]])


def test_oracle_agrees_with_working_precision():
    spec = example1_spec()
    data = simulate(spec, [5.0], 5, seed=0)
    ref = oracle_filter_and_score(spec, [3.0], data, dps=30)
    result = kf_score(spec, [3.0], data)
    assert ref.dps == 30
    assert float(ref.loglik) == pytest.approx(result.loglik, rel=1e-13)
    np.testing.assert_allclose(ref.gradient.astype(float), result.gradient, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(ref.P1.astype(float), result.P1, atol=1e-14)
    np.testing.assert_allclose(ref.dP1.astype(float), result.dP1, atol=1e-13)


def test_error_report_well_conditioned():
    spec = example3_spec(delta=1e-2)
    ref = oracle_filter_and_score(spec, [2.0], Z1)
    reports = error_report(spec, [2.0], Z1, methods=('sqrt', 'conventional', 'oracle'))
    assert set(reports) == {'sqrt', 'conventional', 'oracle'}

    loglik_scale = max(1.0, abs(float(ref.loglik)))
    gradient_scale = max(1.0, float(np.max(np.abs(ref.gradient.astype(float)))))
    sqrt = reports['sqrt']
    assert not sqrt.failed
    assert sqrt.p1 < 1e-12 and sqrt.dp1 < 1e-12
    assert sqrt.loglf < 1e-10 * loglik_scale
    assert sqrt.loglg < 1e-10 * gradient_scale

    conventional = reports['conventional']
    assert not conventional.failed
    assert conventional.p1 < 1e-8 and conventional.dp1 < 1e-6

    oracle = reports['oracle']
    assert oracle.loglf <= 1e-15 * loglik_scale
    assert oracle.p1 <= 1e-15


def test_error_report_ill_conditioned():
    spec = example3_spec(delta=1e-10)
    reports = error_report(spec, [2.0], Z1)
    sqrt, conventional = reports['sqrt'], reports['conventional']
    assert not sqrt.failed
    assert sqrt.p1 < 1e-4
    assert conventional.failed or conventional.p1 > 1e3 * sqrt.p1
    if conventional.failed:
        assert math.isnan(conventional.measure('loglg'))
        assert conventional.failure is not None


def test_unknown_method():
    with pytest.raises(InvalidArgumentError):
        error_report(example3_spec(), [2.0], Z1, methods=('newton',))


def test_compare_failed_result():
    spec = example3_spec()
    ref = oracle_filter_and_score(spec, [2.0], Z1, dps=20)
    failed = ScoreResult.start('conventional', 1).fail(1, NonFiniteError(0))
    report = compare(failed, ref, 'conventional')
    assert report.failed and report.failure == failed.failure
    assert all(math.isnan(report.measure(name)) for name in ('p1', 'dp1', 'loglf', 'loglg'))


def test_precision_escalation():
    change = precision_escalation_check(example3_spec(delta=1e-2), [2.0], Z1, dps=30)
    assert 0 <= change < 1e-18


def test_oracle_failure():
    spec = literal_spec(
            'noiseless',
            {'F': [[1.0]], 'G': [[1.0]], 'H': [[1.0], [1.0]], 'Q': [[1.0]], 'R': [[0.0, 0.0], [0.0, 0.0]], 'Pi0': [[1.0]]},
            )
    with pytest.raises(OracleFailure):
        oracle_filter_and_score(spec, [0.0], Z1, dps=30)
    with pytest.raises(InvalidArgumentError):
        oracle_filter_and_score(spec, [0.0], Z1, dps=10)


def test_finite_difference_gradient():
    grad = finite_difference_gradient(lambda t: (t[0] - 1.0) ** 2 + 3.0 * t[1], [2.0, 0.0])
    np.testing.assert_allclose(grad, [2.0, 3.0], rtol=1e-8)
    with pytest.raises(NonFiniteError) as e:
        finite_difference_gradient(lambda t: float('nan'), [1.0])
    assert e.value.index == 0
