"""Evaluation metrics and the Kalman/RTS/EKF oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cesysid.evaluation import (
    EkfSettings,
    dynamics_error,
    ekf_evaluate,
    kalman_filter,
    rmse,
    rts_smoother,
)
from cesysid.exceptions import DimensionError
from cesysid.models import GaussianNoise, make_model
from cesysid.simulate import generate_trajectory

from conftest import random_stable_lti


def joint_gaussian_posterior(A, C, Q, R, m0, P0, y):
    """Exact posterior state means by dense joint-Gaussian conditioning.

    Builds the full covariance of the stacked states and observations and
    conditions on the observations; an independent check of the recursive
    filter and smoother.
    """
    T = y.shape[0]
    n = A.shape[0]
    m = C.shape[0]
    mu_x = np.empty((T, n))
    mu_x[0] = m0
    for t in range(1, T):
        mu_x[t] = A @ mu_x[t - 1]
    # state covariance blocks S[s, t] = Cov(x_s, x_t)
    S = np.empty((T, T, n, n))
    S[0, 0] = P0
    for t in range(1, T):
        S[t, t] = A @ S[t - 1, t - 1] @ A.T + Q
    for s in range(T):
        for t in range(s + 1, T):
            S[s, t] = S[s, t - 1] @ A.T
            S[t, s] = S[s, t].T
    Sxx = S.transpose(0, 2, 1, 3).reshape(T * n, T * n)
    Cbig = np.kron(np.eye(T), C)
    Syy = Cbig @ Sxx @ Cbig.T + np.kron(np.eye(T), R)
    Sxy = Sxx @ Cbig.T
    mu_y = (mu_x @ C.T).ravel()
    post = mu_x.ravel() + Sxy @ np.linalg.solve(Syy, y.ravel() - mu_y)
    return post.reshape(T, n)


def simulate_lti(model, Q, R, m0, P0, T, rng):
    n = model.A.shape[0]
    m = model.C.shape[0]
    Lq = np.linalg.cholesky(Q)
    Lr = np.linalg.cholesky(R)
    L0 = np.linalg.cholesky(P0)
    x = m0 + L0 @ rng.standard_normal(n)
    xs, ys = [], []
    for _ in range(T):
        ys.append(model.C @ x + Lr @ rng.standard_normal(m))
        xs.append(x)
        x = model.A @ x + Lq @ rng.standard_normal(n)
    return np.array(xs), np.array(ys)


class TestRmse:
    def test_hand_value(self):
        pred = np.array([[1.0, 0.0], [0.0, 0.0]])
        meas = np.array([[0.0, 0.0], [0.0, 2.0]])
        # step errors: ||(1,0)|| = 1, ||(0,-2)|| = 2 -> sqrt((1+4)/2)
        assert rmse(pred, meas) == pytest.approx(np.sqrt(2.5))

    def test_drop_first(self):
        pred = np.array([[10.0], [1.0], [1.0]])
        meas = np.zeros((3, 1))
        assert rmse(pred, meas, drop_first=1) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmse(np.zeros((3, 2)), np.zeros((3, 1)))


class TestDynamicsError:
    def test_zero_at_true_parameters(self):
        model = make_model("lorenz", seed=0)
        from cesysid.simulate import lorenz_initial_condition
        est, se = dynamics_error(model, model.theta, model.theta,
                                 lorenz_initial_condition(1))
        assert est == 0.0

    def test_positive_and_reproducible(self):
        model = make_model("lorenz", seed=0)
        from cesysid.simulate import lorenz_initial_condition
        ic = lorenz_initial_condition(1)
        rng = np.random.default_rng(5)
        e1, _ = dynamics_error(model, model.theta * 1.01, model.theta, ic,
                               rng=np.random.default_rng(5))
        e2, _ = dynamics_error(model, model.theta * 1.01, model.theta, ic,
                               rng=np.random.default_rng(5))
        assert e1 == e2 > 0


class TestKalmanOracle:
    def test_filter_and_smoother_match_dense_conditioning(self, rng):
        for _ in range(5):
            model = random_stable_lti(rng, n=2, m=2)
            n, m = 2, 2
            Q = np.diag(rng.uniform(0.1, 0.5, n))
            R = np.diag(rng.uniform(0.1, 0.5, m))
            m0 = rng.standard_normal(n)
            P0 = np.eye(n)
            _, y = simulate_lti(model, Q, R, m0, P0, 12, rng)
            dense = joint_gaussian_posterior(model.A, model.C, Q, R, m0, P0, y)
            sm = rts_smoother(model.A, model.C, Q, R, y, m0, P0)
            np.testing.assert_allclose(sm.means, dense, rtol=0, atol=1e-8)
            kf = kalman_filter(model.A, model.C, Q, R, y, m0, P0)
            # filtered mean at the final step equals the smoothed mean there
            np.testing.assert_allclose(kf.means[-1], dense[-1], rtol=0, atol=1e-8)

    def test_smoother_final_step_equals_filter(self, rng):
        model = random_stable_lti(rng, n=3, m=2)
        Q = np.eye(3) * 0.2
        R = np.eye(2) * 0.3
        m0 = np.zeros(3)
        P0 = np.eye(3)
        _, y = simulate_lti(model, Q, R, m0, P0, 20, rng)
        kf = kalman_filter(model.A, model.C, Q, R, y, m0, P0)
        sm = rts_smoother(model.A, model.C, Q, R, y, m0, P0)
        np.testing.assert_allclose(sm.means[-1], kf.means[-1], atol=1e-12)


class TestEkf:
    def test_defaults(self):
        s = EkfSettings()
        Q, R, P, m = s.resolved(3, 2)
        np.testing.assert_array_equal(Q, np.eye(3))
        np.testing.assert_array_equal(R, np.eye(2))
        np.testing.assert_array_equal(P, np.eye(3))
        np.testing.assert_array_equal(m, np.zeros(3))
        assert s.drop_first == 25

    def test_matches_exact_kalman_on_linear_model(self, rng):
        model = random_stable_lti(rng, n=3, m=2)
        noise = GaussianNoise(np.full(3, 0.3), np.full(2, 0.4))
        tr = generate_trajectory(model, rng.standard_normal(3), T=60,
                                 noise=noise, seed=11)
        preds, report = ekf_evaluate(model, tr.y, None)
        kf = kalman_filter(model.A, model.C, np.eye(3), np.eye(2), tr.y,
                           np.zeros(3), np.eye(3))
        # prediction at t uses the filtered state from t-1 propagated once
        want = np.empty_like(preds)
        want[0] = model.C @ np.zeros(3)
        for t in range(1, 60):
            want[t] = model.C @ (model.A @ kf.means[t - 1])
        np.testing.assert_allclose(preds, want, rtol=0, atol=1e-10)
        assert report.mean_rmse == pytest.approx(rmse(preds, tr.y, drop_first=25))

    def test_runs_on_lorenz(self):
        model = make_model("lorenz", seed=0)
        noise = GaussianNoise(np.full(3, 0.05), np.full(2, 0.1))
        tr = generate_trajectory(model, [-6, -6, 24], T=64, noise=noise, seed=2)
        preds, report = ekf_evaluate(model, tr.y, None)
        assert preds.shape == tr.y.shape
        assert np.isfinite(report.mean_rmse)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rmse_nonnegative_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 2))
    assert rmse(a, a) == 0.0
    b = a + rng.standard_normal((5, 2))
    assert rmse(a, b) >= 0.0
