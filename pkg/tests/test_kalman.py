import numpy as np
import pytest

from sqrtscore.errors import SingularInnovationError
from sqrtscore.kalman import (
        factor_innovation_covariance, kf_init, kf_loglik, kf_score, kf_sensitivity_init,
        kf_sensitivity_step, kf_step,
        )
from sqrtscore.model import Trajectory, evaluate, example1_spec, literal_spec, simulate
from sqrtscore.oracle import finite_difference_gradient


def scalar_spec():
    return literal_spec(
            'scalar',
            {'F': [[0.9]], 'G': [[1.0]], 'H': [[1.0]], 'Q': [[0.5]], 'R': [[1.0]], 'Pi0': [[2.0]]},
            [{'R': [[1.0]]}],
            [1.0],
            )


def collinear_spec():
    """ Two identical sensors with negligible noise; Re is exactly singular in floating point. """
    return literal_spec(
            'collinear',
            {'F': [[1.0]], 'G': [[1.0]], 'H': [[1.0], [1.0]], 'Q': [[1.0]], 'R': [[1e-40, 0.0], [0.0, 1e-40]], 'Pi0': [[1.0]]},
            )


def test_kf_step():
    model = evaluate(scalar_spec(), [1.0])
    out = kf_step(kf_init(model), model, np.array([2.0]))
    assert out.Re[0, 0] == pytest.approx(3.0)
    assert out.Kp[0, 0] == pytest.approx(0.6)
    assert out.next_state.xhat[0] == pytest.approx(1.2)
    assert out.next_state.P[0, 0] == pytest.approx(1.04)
    assert out.loglik_term == pytest.approx(0.5 * (0.5 * np.log(2 * np.pi) + np.log(3.0) + 4.0 / 3.0))


def test_factor_innovation_covariance():
    u = factor_innovation_covariance(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(u.T @ u, [[4.0, 2.0], [2.0, 5.0]])
    with pytest.raises(SingularInnovationError):
        factor_innovation_covariance(np.ones((2, 2)))
    with pytest.raises(SingularInnovationError):
        factor_innovation_covariance(np.diag([1.0, -1.0]))
    with pytest.raises(SingularInnovationError) as e:
        factor_innovation_covariance(np.diag([1.0, 1e-17]))
    assert e.value.index == 1


def test_sensitivity_step_matches_finite_differences():
    spec = scalar_spec()
    z = np.array([2.0])
    h = 1e-6

    def next_state(theta):
        model = evaluate(spec, [theta])
        return kf_step(kf_init(model), model, z).next_state

    model = evaluate(spec, [1.0])
    state = kf_init(model)
    out = kf_step(state, model, z)
    sens, increment = kf_sensitivity_step(state, kf_sensitivity_init(model), model, out)

    upper, lower = next_state(1.0 + h), next_state(1.0 - h)
    np.testing.assert_allclose(sens.dP[0], (upper.P - lower.P) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(sens.dxhat[0], (upper.xhat - lower.xhat) / (2 * h), atol=1e-8)

    def term(theta):
        m = evaluate(spec, [theta])
        return kf_step(kf_init(m), m, z).loglik_term

    assert increment[0] == pytest.approx((term(1.0 + h) - term(1.0 - h)) / (2 * h), abs=1e-8)


def test_kf_score_matches_finite_differences():
    spec = example1_spec()
    data = simulate(spec, [5.0], 40, seed=0)
    result = kf_score(spec, [3.0], data)
    assert not result.failed
    assert result.loglik == pytest.approx(kf_loglik(spec, [3.0], data), rel=1e-14)
    fd = finite_difference_gradient(lambda t: kf_loglik(spec, t, data), [3.0])
    np.testing.assert_allclose(result.gradient, fd, rtol=1e-6, atol=1e-8)
    assert len(result.diagnostics) == 40
    assert result.P1 is not None and result.dP1 is not None
    assert result.dP1.shape == (1, 2, 2)


def test_singular_innovation_is_reported():
    spec = collinear_spec()
    data = Trajectory.from_measurements([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularInnovationError) as e:
        kf_loglik(spec, [0.0], data)
    assert e.value.step == 1

    result = kf_score(spec, [0.0], data)
    assert result.failed
    assert result.failed_step == 1
    assert result.failure is not None and result.failure.startswith('singular-innovation: step 1')
    assert np.isnan(result.loglik)
    assert np.all(np.isnan(result.gradient))


def test_innovations_are_white_at_true_parameter():
    spec = example1_spec()
    N = 1000
    data = simulate(spec, [5.0], N, seed=11)
    model = evaluate(spec, [5.0])
    state = kf_init(model)
    normalized = np.empty((N, 1))
    for k in range(N):
        out = kf_step(state, model, data.z[k])
        # Re = UᵀU, so U⁻ᵀe has identity covariance
        normalized[k] = np.linalg.solve(out.Re_sqrt.T, out.e)
        state = out.next_state
    assert np.all(np.abs(normalized.mean(axis=0)) <= 4 / np.sqrt(N))
    np.testing.assert_allclose(normalized.var(axis=0), 1.0, atol=0.2)
