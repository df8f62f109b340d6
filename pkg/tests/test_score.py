import numpy as np
import pytest

from sqrtscore.errors import FactorDerivativeError, InvalidArgumentError, SingularInnovationError
from sqrtscore.esrcf import esrcf_init, esrcf_loglik
from sqrtscore.kalman import kf_score
from sqrtscore.linalg import LduSplit
from sqrtscore.model import Trajectory, evaluate, example1_spec, example3_spec, literal_spec, simulate
from sqrtscore.oracle import finite_difference_gradient
from sqrtscore.score import (
        ScoreResult, build_augmented_prearray, init_derivatives, ldu_of_product, run,
        triangularize_augmented, update_factor_derivatives, zero_block_residual,
        )


def two_parameter_spec(dPi0_sqrt=None):
    """ θ₁ moves F₂₂, Q, Π₀ and x₀; θ₂ moves H and R. """
    return literal_spec(
            'two-parameter',
            {
                'F': [[0.9, 0.1], [0.0, 0.8]], 'G': [[0.0], [1.0]], 'H': [[1.0, 0.5]],
                'Q': [[0.3]], 'R': [[0.5]], 'Pi0': [[1.0, 0.0], [0.0, 1.0]], 'x0': [1.0, -1.0],
                },
            [
                {'F': [[0.0, 0.0], [0.0, 1.0]], 'Q': [[1.0]], 'Pi0': [[2.0, 0.0], [0.0, 0.0]], 'x0': [0.5, 0.0]},
                {'H': [[0.0, 1.0]], 'R': [[1.0]]},
                ],
            [0.0, 0.0],
            dPi0_sqrt,
            )


def test_matches_conventional_score_example1():
    spec = example1_spec()
    data = simulate(spec, [5.0], 50, seed=0)
    for tau in [2.0, 5.0, 9.0]:
        result = run(spec, [tau], data)
        ref = kf_score(spec, [tau], data)
        assert not result.failed
        assert result.method == 'sqrt'
        assert result.loglik == pytest.approx(ref.loglik, rel=1e-11)
        np.testing.assert_allclose(result.gradient, ref.gradient, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(result.final_P, ref.final_P, atol=1e-10)
        np.testing.assert_allclose(result.final_xhat, ref.final_xhat, atol=1e-9)


def test_matches_finite_differences():
    spec = two_parameter_spec()
    theta = [0.05, 0.1]
    data = simulate(spec, theta, 30, seed=1)
    result = run(spec, theta, data)
    assert not result.failed
    assert result.loglik == pytest.approx(esrcf_loglik(spec, theta, data), rel=1e-12)
    fd = finite_difference_gradient(lambda t: esrcf_loglik(spec, t, data), theta)
    np.testing.assert_allclose(result.gradient, fd, rtol=1e-6, atol=1e-7)

    ref = kf_score(spec, theta, data)
    np.testing.assert_allclose(result.gradient, ref.gradient, rtol=1e-9, atol=1e-10)
    assert result.P1 is not None and ref.P1 is not None
    np.testing.assert_allclose(result.P1, ref.P1, atol=1e-12)
    np.testing.assert_allclose(result.dP1, ref.dP1, atol=1e-11)


def test_diagnostics():
    spec = two_parameter_spec()
    data = simulate(spec, [0.0, 0.0], 10, seed=2)
    result = run(spec, [0.0, 0.0], data)
    assert [d.step for d in result.diagnostics] == list(range(1, 11))
    assert all(d.cond_Re >= 1.0 for d in result.diagnostics)
    assert all(d.zero_block_residual <= 1e-12 for d in result.diagnostics)


def test_factor_derivative_override():
    # Π₀ = I and ∂Π₀ = diag(2, 0) give ∂Π₀^{1/2} = diag(1, 0) at the reference point
    override = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
    spec = two_parameter_spec(dPi0_sqrt=override)
    model = evaluate(spec, [0.0, 0.0])
    np.testing.assert_allclose(init_derivatives(model).dS, np.array(override))

    data = simulate(spec, [0.0, 0.0], 10, seed=3)
    plain = run(two_parameter_spec(), [0.0, 0.0], data)
    overridden = run(spec, [0.0, 0.0], data)
    np.testing.assert_allclose(overridden.gradient, plain.gradient, rtol=1e-12)


def test_initial_derivatives():
    model = evaluate(two_parameter_spec(), [0.0, 0.0])
    state = esrcf_init(model)
    deriv = init_derivatives(model, state)
    for i in range(2):
        np.testing.assert_allclose(deriv.dS[i].T @ state.S + state.S.T @ deriv.dS[i], model.dPi0[i], atol=1e-14)
        # ∂(Sᵀb) = ∂x₀
        np.testing.assert_allclose(deriv.dS[i].T @ state.b + state.S.T @ deriv.db[i], model.dx0[i], atol=1e-14)


def test_post_array_structure():
    spec = example3_spec(delta=1e-4)
    model = evaluate(spec, [2.0])
    state = esrcf_init(model)
    deriv = init_derivatives(model, state)
    pre = build_augmented_prearray(state, deriv, model, np.array([1.0, 1.0]))
    assert pre.shape == (2 + 3 + 1, (2 + 3 + 1) * 2)
    blocks = triangularize_augmented(pre, model.dims)
    split = ldu_of_product(blocks, 0)
    assert zero_block_residual(blocks, split, 0) <= 1e-12
    dRe_sqrt, _, dS_next = update_factor_derivatives(blocks, split, 0)
    assert np.all(np.tril(dRe_sqrt, -1) == 0)
    assert np.all(np.tril(dS_next, -1) == 0)

    with pytest.raises(InvalidArgumentError):
        triangularize_augmented(pre[:, :-1], model.dims)


def test_ill_conditioned_problem():
    data = Trajectory.from_measurements([[1.0, 1.0]])
    result = run(example3_spec(delta=1e-10), [2.0], data)
    assert not result.failed
    assert np.isfinite(result.loglik)
    assert np.all(np.isfinite(result.gradient))


def test_failure_is_returned():
    spec = literal_spec(
            'blind',
            {'F': [[1.0]], 'G': [[1.0]], 'H': [[0.0]], 'Q': [[1.0]], 'R': [[1e-40]], 'Pi0': [[1.0]]},
            )
    result = run(spec, [0.0], Trajectory.from_measurements([[1.0], [1.0]]))
    assert result.failed
    assert result.failed_step == 1
    assert result.failure is not None and result.failure.startswith('singular-innovation: step 1')
    assert np.isnan(result.loglik) and np.all(np.isnan(result.gradient))


def test_score_result_fail():
    result = ScoreResult.start('conventional', 2).fail(4, SingularInnovationError(1))
    assert result.failed and result.failed_step == 4
    assert result.failure == 'singular-innovation: step 4: innovation factor is singular at diagonal index 1'
    assert result.gradient.shape == (2,)


def random_spec(rng: np.random.Generator, name: str):
    """ Stable, well-conditioned model with n, m, q ≤ 4 and p ≤ 3 parameters at θ = 1. """
    n, m, q = (int(v) for v in rng.integers(1, 5, size=3))
    p = int(rng.integers(1, 4))

    def spd(k):
        a = rng.standard_normal((k, k))
        s = a @ a.T / k + np.eye(k)
        return (s + s.T) / 2

    def sym(k):
        a = 0.1 * rng.standard_normal((k, k))
        return (a + a.T) / 2

    F = rng.standard_normal((n, n))
    F *= 0.9 / max(1.0, float(np.max(np.abs(np.linalg.eigvals(F)))))
    matrices = {
            'F': F, 'G': rng.standard_normal((n, q)), 'H': rng.standard_normal((m, n)),
            'Q': spd(q), 'R': spd(m), 'Pi0': spd(n), 'x0': rng.standard_normal(n),
            }
    derivatives = [
            {
                'F': 0.1 * rng.standard_normal((n, n)), 'G': 0.1 * rng.standard_normal((n, q)),
                'H': 0.1 * rng.standard_normal((m, n)), 'Q': sym(q), 'R': sym(m), 'Pi0': sym(n),
                'x0': 0.1 * rng.standard_normal(n),
                }
            for _ in range(p)
            ]
    return literal_spec(name, matrices, derivatives, [1.0] * p)


def test_random_models_match_finite_differences():
    rng = np.random.default_rng(2024)
    for j in range(10):
        spec = random_spec(rng, f'random-{j}')
        theta = np.ones(spec.dims.p)
        data = simulate(spec, theta, 20, seed=j)
        result = run(spec, theta, data)
        assert not result.failed, result.failure

        fd = finite_difference_gradient(lambda t: esrcf_loglik(spec, t, data), theta)
        scale = max(1.0, float(np.max(np.abs(fd))))
        np.testing.assert_allclose(result.gradient, fd, rtol=1e-5, atol=1e-5 * scale)

        ref = kf_score(spec, theta, data)
        assert result.loglik == pytest.approx(ref.loglik, rel=1e-10)
        np.testing.assert_allclose(result.gradient, ref.gradient, rtol=1e-8, atol=1e-8 * scale)
        # dSᵀS + SᵀdS agrees with the Riccati sensitivity
        np.testing.assert_allclose(result.dP1, ref.dP1, rtol=1e-8, atol=1e-10)


def test_theta_independent_model_has_exactly_zero_score():
    base = two_parameter_spec()
    spec = literal_spec('fixed', base.matrices, [{}, {}], [0.0, 0.0])
    data = simulate(spec, [0.0, 0.0], 10, seed=4)
    for result in (run(spec, [0.0, 0.0], data), kf_score(spec, [0.0, 0.0], data)):
        assert not result.failed
        assert np.all(result.gradient == 0.0)
        assert result.dP1 is not None and np.all(result.dP1 == 0.0)


def test_zero_block_check():
    model = evaluate(example3_spec(delta=1e-4), [2.0])
    state = esrcf_init(model)
    pre = build_augmented_prearray(state, init_derivatives(model, state), model, np.array([1.0, 1.0]))
    blocks = triangularize_augmented(pre, model.dims)
    split = ldu_of_product(blocks, 0)
    broken = LduSplit(
            strict_lower=split.strict_lower + np.tril(np.ones_like(split.strict_lower), -1),
            diagonal=split.diagonal,
            strict_upper=split.strict_upper,
            )
    assert zero_block_residual(blocks, broken, 0) > 1e-3
    with pytest.raises(FactorDerivativeError) as e:
        update_factor_derivatives(blocks, broken, 0)
    assert e.value.token == 'factor-derivative'


def test_zero_block_failure_is_returned(monkeypatch):
    monkeypatch.setattr('sqrtscore.score.ZERO_BLOCK_RTOL', -1.0)
    spec = two_parameter_spec()
    data = simulate(spec, [0.0, 0.0], 5, seed=5)
    result = run(spec, [0.0, 0.0], data)
    assert result.failed and result.failed_step == 1
    assert result.failure is not None and result.failure.startswith('factor-derivative: ')
    assert np.all(np.isnan(result.gradient))
