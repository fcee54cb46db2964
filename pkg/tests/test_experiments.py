"""Unit tests for the benchmark-protocol helpers (no heavy multi-seed runs)."""

import numpy as np

from cesysid.experiments import (
    TRUE_LORENZ,
    Fig2Result,
    Table1Row,
    lorenz_setup,
    perturb_theta,
)


class TestPerturbTheta:
    def test_within_bounds_and_deterministic(self):
        theta = np.array([10.0, 28.0, 8.0 / 3.0])
        rng = np.random.default_rng(0)
        out = perturb_theta(theta, rng, spread=0.1)
        ratio = out / theta
        assert np.all(ratio >= 0.9) and np.all(ratio <= 1.1)
        out2 = perturb_theta(theta, np.random.default_rng(0), spread=0.1)
        np.testing.assert_array_equal(out, out2)

    def test_spread_scales(self):
        theta = np.ones(3)
        rng = np.random.default_rng(1)
        samples = np.array([perturb_theta(theta, rng, spread=0.5) for _ in range(200)])
        assert samples.min() < 0.6 and samples.max() > 1.4


class TestLorenzSetup:
    def test_fixed_model_seed_shares_system(self):
        _, _, m_a, *_ = lorenz_setup(0.1, 0.01, seed=3, model_seed=0)
        _, _, m_b, *_ = lorenz_setup(0.1, 0.01, seed=4, model_seed=0)
        np.testing.assert_array_equal(m_a.C, m_b.C)

    def test_default_model_seed_follows_seed(self):
        _, _, m_a, *_ = lorenz_setup(0.1, 0.01, seed=3)
        _, _, m_b, *_ = lorenz_setup(0.1, 0.01, seed=4)
        assert not np.array_equal(m_a.C, m_b.C)

    def test_data_varies_with_seed_under_fixed_system(self):
        ds_a, *_ = lorenz_setup(0.1, 0.01, seed=3, model_seed=0)
        ds_b, *_ = lorenz_setup(0.1, 0.01, seed=4, model_seed=0)
        assert not np.array_equal(ds_a.trajectories[0].y, ds_b.trajectories[0].y)

    def test_init_within_ten_percent(self):
        _, m_init, _, _, _, th_true = lorenz_setup(0.1, 0.01, seed=5, model_seed=0)
        ratio = m_init.theta / th_true
        assert np.all(ratio >= 0.9) and np.all(ratio <= 1.1)


class TestReportAggregates:
    def test_table1_row_mean_stderr(self):
        est = np.array([[10.0, 28.0, 2.6], [10.2, 28.2, 2.8]])
        row = Table1Row(0.1, 0.01, est, [0, 1])
        np.testing.assert_allclose(row.mean, [10.1, 28.1, 2.7])
        np.testing.assert_allclose(row.stderr,
                                   est.std(axis=0, ddof=1) / np.sqrt(2))

    def test_epochs_to_tolerance(self):
        hit = np.vstack([TRUE_LORENZ * 1.5,
                         TRUE_LORENZ * 1.015,
                         TRUE_LORENZ * 1.001])
        never = np.vstack([TRUE_LORENZ * 1.5] * 3)
        res = Fig2Result(seeds=[0, 1], ceem_traces=[hit, never], pem_traces=[],
                         ceem_epoch_seconds=np.array([]),
                         pem_epoch_seconds=np.array([]))
        out = res.epochs_to_tolerance(res.ceem_traces)
        assert out[0] == 2
        assert np.isinf(out[1])
