"""Block-coordinate driver: monotonicity, termination, persistence."""

import numpy as np
import pytest

from cesysid.driver import (
    CeemConfig,
    ceem_fit,
    read_params,
    write_history,
    write_params,
)
from cesysid.learner import LearnerOptions
from cesysid.models import GaussianNoise, make_model
from cesysid.simulate import generate_dataset, lorenz_initial_condition


def small_problem(sigma_w=0.01, sigma_v=0.05, T=48, seed=0):
    model = make_model("lorenz", seed=0)
    noise = GaussianNoise(np.full(3, sigma_w), np.full(2, sigma_v))
    ds = generate_dataset(model, noise, lorenz_initial_condition(1), 2, T,
                          seed=seed)
    init = model.with_theta(model.theta * 1.08)
    return ds, init, model, noise


def quick_config(**kw):
    kw.setdefault("max_epochs", 8)
    kw.setdefault("learner",
                  LearnerOptions(strategy="quasi-second-order",
                                 max_iterations=100))
    return CeemConfig(**kw)


class TestCeemFit:
    def test_objective_monotone_nondecreasing(self):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise, quick_config())
        J = report.objectives
        assert len(J) >= 1
        assert np.all(np.diff(J) >= -1e-6)

    def test_improves_parameters(self):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise, quick_config(max_epochs=20))
        err0 = np.linalg.norm(init.theta - model.theta)
        err1 = np.linalg.norm(report.theta - model.theta)
        assert err1 < 0.5 * err0

    def test_termination_on_tolerance(self):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise,
                          quick_config(max_epochs=500, tol=1.0))
        assert report.termination == "tol"
        assert len(report.records) < 500

    def test_termination_on_epoch_budget(self):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise,
                          quick_config(max_epochs=2, tol=1e-30))
        assert report.termination == "max_epochs"
        assert len(report.records) == 2

    def test_states_shape_matches_dataset(self):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise, quick_config(max_epochs=2))
        assert len(report.states) == len(ds)
        for x, tr in zip(report.states, ds.trajectories):
            assert x.shape == (tr.T, model.n)

    def test_explicit_state_init_respected(self):
        ds, init, model, noise = small_problem()
        x_init = [tr.x.copy() for tr in ds.trajectories]
        report = ceem_fit(ds, init, noise, quick_config(max_epochs=3),
                          x_init=x_init)
        # warm-started from the truth, the fit should stay near it
        for x, tr in zip(report.states, ds.trajectories):
            assert np.sqrt(np.mean((x - tr.x) ** 2)) < 1.0

    def test_eval_fn_recorded(self):
        ds, init, model, noise = small_problem()
        calls = []

        def eval_fn(theta):
            calls.append(np.array(theta))
            return float(np.linalg.norm(theta - model.theta))

        report = ceem_fit(ds, init, noise, quick_config(max_epochs=3),
                          eval_fn=eval_fn)
        assert len(calls) >= 3
        assert np.isfinite([r.dyn_error for r in report.records]).all()


class TestConfigValidation:
    def test_negative_rho_rejected(self):
        with pytest.raises(ValueError):
            CeemConfig(rho_x=-1.0)

    def test_nonpositive_tol_rejected(self):
        with pytest.raises(ValueError):
            CeemConfig(tol=0.0)


class TestPersistence:
    def test_history_csv(self, tmp_path):
        ds, init, model, noise = small_problem()
        report = ceem_fit(ds, init, noise, quick_config(max_epochs=3))
        path = tmp_path / "history.csv"
        write_history(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("epoch,J,")
        assert len(lines) == 1 + len(report.records)

    def test_params_round_trip(self, tmp_path):
        theta = np.array([10.0, 28.0, 8.0 / 3.0])
        path = tmp_path / "params.json"
        write_params(theta, path, termination="tol")
        back = read_params(path)
        np.testing.assert_allclose(back, theta, rtol=1e-15)
