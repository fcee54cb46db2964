"""Integration, trajectory generation, dataset serialization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from cesysid.exceptions import DimensionError
from cesysid.models import GaussianNoise, make_model
from cesysid.simulate import (
    InitialConditionSpec,
    Trajectory,
    TrajectoryDataset,
    generate_dataset,
    generate_trajectory,
    lorenz_initial_condition,
    model_from_manifest,
    read_dataset,
    rk4_step,
    sample_initial_condition,
    write_dataset,
)


class TestRk4:
    def test_matches_high_accuracy_ode_solver(self):
        model = make_model("lorenz", seed=0)
        f = model.cont.drift
        x0 = np.array([-6.0, -6.0, 24.0])
        got = rk4_step(f, x0, dt=0.01)
        ref = solve_ivp(lambda t, x: f(x), (0, 0.01), x0, rtol=1e-12, atol=1e-12).y[:, -1]
        # one RK4 step carries O(dt^5) local truncation error
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-6)

    def test_fourth_order_convergence(self):
        """Halving the step size should cut global error by about 2^4."""
        model = make_model("lorenz", seed=0)
        f = model.cont.drift
        x0 = np.array([-6.0, -6.0, 24.0])
        horizon = 0.4

        def integrate(h):
            x = x0.copy()
            for _ in range(int(round(horizon / h))):
                x = rk4_step(f, x, dt=h)
            return x

        ref = solve_ivp(lambda t, x: f(x), (0, horizon), x0,
                        rtol=1e-13, atol=1e-13).y[:, -1]
        e1 = np.linalg.norm(integrate(0.004) - ref)
        e2 = np.linalg.norm(integrate(0.002) - ref)
        assert 12.0 <= e1 / e2 <= 20.0

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x: x, np.zeros(2), dt=0.0)


class TestInitialConditions:
    def test_benchmark_distribution(self):
        spec = lorenz_initial_condition(2)
        np.testing.assert_allclose(spec.mean, [-6, -6, 24, -6, -6, 24])
        np.testing.assert_allclose(spec.std, 2.5)

    def test_sampling_moments(self):
        spec = lorenz_initial_condition(1)
        rng = np.random.default_rng(0)
        draws = np.array([sample_initial_condition(spec, rng) for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), spec.mean, atol=0.15)
        np.testing.assert_allclose(draws.std(axis=0), 2.5, atol=0.15)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(DimensionError):
            InitialConditionSpec([0.0, 1.0], [1.0])


class TestGenerateTrajectory:
    def test_noise_free_rollout_matches_dynamics(self):
        model = make_model("lorenz", seed=1)
        x0 = np.array([-6.0, -6.0, 24.0])
        tr = generate_trajectory(model, x0, T=30, seed=7)
        x = x0.copy()
        for t in range(29):
            x = model.dynamics(x)
            np.testing.assert_allclose(tr.x[t + 1], x, rtol=1e-12)
        np.testing.assert_allclose(tr.y, tr.x @ model.observation_matrix.T, rtol=1e-12)

    def test_deterministic_given_seed(self):
        model = make_model("lorenz", seed=1)
        noise = GaussianNoise(np.full(3, 0.1), np.full(2, 0.5))
        a = generate_trajectory(model, [-6, -6, 24], T=20, noise=noise, seed=3)
        b = generate_trajectory(model, [-6, -6, 24], T=20, noise=noise, seed=3)
        np.testing.assert_array_equal(a.y, b.y)
        c = generate_trajectory(model, [-6, -6, 24], T=20, noise=noise, seed=4)
        assert not np.array_equal(a.y, c.y)

    def test_noise_statistics(self):
        model = make_model("lorenz", seed=1)
        noise = GaussianNoise(np.full(3, 1e-12), np.full(2, 0.5))
        tr = generate_trajectory(model, [-6, -6, 24], T=400, noise=noise, seed=3)
        v = tr.y - tr.x @ model.observation_matrix.T
        assert abs(v.std() - 0.5) < 0.05
        assert abs(v.mean()) < 0.05

    def test_too_short_rejected(self):
        model = make_model("lorenz", seed=1)
        with pytest.raises(DimensionError):
            generate_trajectory(model, [-6, -6, 24], T=1)


class TestDatasetRoundTrip:
    def test_write_read_bit_exact(self, tmp_path):
        model = make_model("lorenz", seed=2)
        noise = GaussianNoise(np.full(3, 0.01), np.full(2, 0.1))
        ds = generate_dataset(model, noise, lorenz_initial_condition(1), 3, 16,
                              seed=9, model_params={"K": 1, "model_seed": 2},
                              theta_true=model.theta)
        write_dataset(ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert len(back) == 3
        for a, b in zip(ds.trajectories, back.trajectories):
            np.testing.assert_array_equal(a.y, b.y)
            np.testing.assert_array_equal(a.x, b.x)
        assert back.manifest["model_params"]["model_seed"] == 2

    def test_model_from_manifest(self, tmp_path):
        model = make_model("lorenz", seed=2)
        noise = GaussianNoise(np.full(3, 0.01), np.full(2, 0.1))
        ds = generate_dataset(model, noise, lorenz_initial_condition(1), 1, 8,
                              seed=9, model_params={"K": 1, "obs_dim": 2,
                                                    "h_scale": 0.1, "model_seed": 2})
        write_dataset(ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        rebuilt = model_from_manifest(back.manifest)
        np.testing.assert_allclose(rebuilt.observation_matrix,
                                   model.observation_matrix)

    def test_inconsistent_obs_dim_rejected(self):
        t1 = Trajectory(y=np.zeros((4, 2)))
        t2 = Trajectory(y=np.zeros((4, 3)))
        with pytest.raises(DimensionError):
            TrajectoryDataset(trajectories=[t1, t2], manifest={})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30))
def test_trajectory_shapes_property(seed, T):
    model = make_model("lorenz", seed=0)
    noise = GaussianNoise(np.full(3, 0.05), np.full(2, 0.05))
    tr = generate_trajectory(model, [-6, -6, 24], T=T, noise=noise, seed=seed)
    assert tr.y.shape == (T, 2)
    assert tr.x.shape == (T, 3)
    assert np.all(np.isfinite(tr.y))
