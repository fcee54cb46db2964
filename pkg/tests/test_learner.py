"""Parameter learning step: gradients, ascent, regularization, strategies."""

import numpy as np
import pytest

from cesysid.exceptions import ConfigurationError
from cesysid.learner import (
    LearnerOptions,
    StateBatch,
    learn,
    objective_and_gradient,
)
from cesysid.models import GaussianNoise, LtiModel, make_model
from cesysid.simulate import generate_trajectory

from conftest import random_stable_lti


def lorenz_batches(rng, T=48, sigma_w=0.05, sigma_v=0.1, seed=0):
    model = make_model("lorenz", seed=seed)
    noise = GaussianNoise(np.full(3, sigma_w), np.full(2, sigma_v))
    tr = generate_trajectory(model, [-6, -6, 24], T=T, noise=noise, seed=seed)
    return model, noise, [StateBatch(weight=1.0, x=tr.x, y=tr.y, u=None)]


class TestGradient:
    def test_matches_finite_differences(self, rng):
        model, noise, batches = lorenz_batches(rng)
        opts = LearnerOptions(strategy="quasi-second-order", rho_theta=0.7)
        th0 = model.theta * 1.03
        val, grad = objective_and_gradient(model, noise, batches, th0,
                                           model.theta, opts)
        eps = 1e-6
        for j in range(th0.size):
            d = np.zeros_like(th0)
            d[j] = eps
            vp, _ = objective_and_gradient(model, noise, batches, th0 + d,
                                           model.theta, opts)
            vm, _ = objective_and_gradient(model, noise, batches, th0 - d,
                                           model.theta, opts)
            assert grad[j] == pytest.approx((vp - vm) / (2 * eps), rel=1e-5, abs=1e-6)


class TestLinearRegressionOracle:
    def test_recovers_least_squares_solution(self, rng):
        """With states fixed and a scalar linear model, the learned dynamics
        coefficient must equal the closed-form weighted least-squares fit."""
        a_true = 0.8
        model = LtiModel(np.array([[a_true]]), C=np.array([[1.0]]))
        noise = GaussianNoise([0.3], [0.2])
        T = 200
        x = np.zeros((T, 1))
        w = 0.3 * rng.standard_normal(T - 1)
        for t in range(T - 1):
            x[t + 1, 0] = a_true * x[t, 0] + w[t] + 0.5 * rng.standard_normal()
        y = x + 0.2 * rng.standard_normal((T, 1))
        batches = [StateBatch(weight=1.0, x=x, y=y, u=None)]
        opts = LearnerOptions(strategy="quasi-second-order", rho_theta=0.0,
                              max_iterations=200)
        res = learn(model, noise, batches, model.theta, opts)
        a_ls = float(x[:-1, 0] @ x[1:, 0] / (x[:-1, 0] @ x[:-1, 0]))
        assert res.theta[0] == pytest.approx(a_ls, abs=1e-6)


class TestAscent:
    @pytest.mark.parametrize("strategy",
                             ["nelder-mead", "first-order", "quasi-second-order"])
    def test_objective_never_decreases(self, strategy, rng):
        model, noise, batches = lorenz_batches(rng)
        th_prev = model.theta * rng.uniform(0.8, 1.2, 3)
        opts = LearnerOptions(strategy=strategy, rho_theta=0.5, max_iterations=30)
        before, _ = objective_and_gradient(model, noise, batches, th_prev,
                                           th_prev, opts)
        res = learn(model.with_theta(th_prev), noise, batches, th_prev, opts)
        after, _ = objective_and_gradient(model, noise, batches, res.theta,
                                          th_prev, opts)
        assert after >= before - 1e-9

    def test_strategies_agree_on_smooth_problem(self, rng):
        model, noise, batches = lorenz_batches(rng)
        th_prev = model.theta * 1.05
        sols = {}
        for strategy in ("quasi-second-order", "nelder-mead"):
            opts = LearnerOptions(strategy=strategy, rho_theta=0.0,
                                  max_iterations=400)
            sols[strategy] = learn(model.with_theta(th_prev), noise, batches,
                                   th_prev, opts).theta
        np.testing.assert_allclose(sols["quasi-second-order"],
                                   sols["nelder-mead"], rtol=1e-3)


class TestRegularizer:
    def test_large_rho_theta_pins_parameters(self, rng):
        model, noise, batches = lorenz_batches(rng)
        th_prev = model.theta * 1.05
        tight = learn(model.with_theta(th_prev), noise, batches, th_prev,
                      LearnerOptions(strategy="quasi-second-order",
                                     rho_theta=1e9, max_iterations=100)).theta
        free = learn(model.with_theta(th_prev), noise, batches, th_prev,
                     LearnerOptions(strategy="quasi-second-order",
                                    rho_theta=0.0, max_iterations=100)).theta
        assert np.linalg.norm(tight - th_prev) < np.linalg.norm(free - th_prev)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigurationError):
            LearnerOptions(strategy="newton")
