"""Desk-scale benchmark experiments on (coupled) Lorenz systems.

These routines drive the multi-seed protocols behind the summary tables and
learning curves: single-attractor bias study, CE-EM versus particle EM, and
the trajectory-count scaling study at reduced dimension.  They are used both
by the command-line `reproduce` command and by the acceptance test suite.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .driver import CeemConfig, FitReport, ceem_fit
from .evaluation import dynamics_error
from .learner import LearnerOptions
from .models import GaussianNoise, make_model
from .particle import PemConfig, pem_fit, pf_state_init
from .simulate import generate_dataset, lorenz_initial_condition

__all__ = [
    "perturb_theta",
    "lorenz_setup",
    "run_ceem_lorenz",
    "Table1Row",
    "run_table1",
    "Fig2Result",
    "run_fig2",
    "ScalingRun",
    "run_fig3",
]

TRUE_LORENZ = np.array([10.0, 28.0, 8.0 / 3.0])

# The single-attractor benchmarks treat the observation matrix as known and
# fixed: one sampled system is shared by all seeds, and the per-seed
# randomness covers only the noise realizations, initial conditions, and
# parameter initialization.
BENCHMARK_MODEL_SEED = 0

# Data seeds for the bias-study table.
BENCHMARK_SEEDS = tuple(range(25, 35))


def perturb_theta(theta, rng, spread=0.1):
    """Independent per-coordinate multiplicative Uniform(1-spread, 1+spread)."""
    theta = np.asarray(theta, dtype=float)
    return theta * rng.uniform(1.0 - spread, 1.0 + spread, size=theta.shape)


def lorenz_setup(sigma_w, sigma_v, seed, *, K=1, T=128, dt=0.04, n_traj=1,
                 h_scale=0.1, init_spread=0.1, model_seed=None):
    """Simulate a (coupled) Lorenz dataset and a perturbed starting model.

    Returns (dataset, model_init, model_true, noise, ic_spec, theta_true).
    ``model_seed`` controls the sampled system (observation matrix and, for
    K > 1, the coupling); when None it defaults to ``seed`` so every seed
    gets its own system.  The single-attractor benchmarks hold the system
    fixed across seeds (the observation matrix is treated as known) and vary
    only the data and initialisation.
    """
    if model_seed is None:
        model_seed = seed
    model_id = "lorenz" if K == 1 else "coupled_lorenz"
    model_true = make_model(model_id, dt=dt, K=K, seed=model_seed, h_scale=h_scale)
    theta_true = model_true.theta
    noise = GaussianNoise(np.full(model_true.n, float(sigma_w)),
                          np.full(model_true.m, float(sigma_v)))
    ic = lorenz_initial_condition(K)
    dataset = generate_dataset(
        model_true, noise, ic, n_traj, T, seed=seed,
        model_params={"K": K, "obs_dim": model_true.m, "h_scale": h_scale,
                      "model_seed": model_seed},
        theta_true=theta_true,
    )
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(11,)))
    model_init = model_true.with_theta(perturb_theta(theta_true, init_rng, init_spread))
    return dataset, model_init, model_true, noise, ic, theta_true


def _eps_fn(model, theta_true, ic, n_mc=1024):
    def fn(theta):
        rng = np.random.default_rng(1234)
        est, _ = dynamics_error(model, theta, theta_true, ic, n_mc, rng)
        return est

    return fn


def run_ceem_lorenz(dataset, model_init, noise, ic, theta_true, *,
                    max_epochs=1000, rho_x=0.5, rho_theta=0.0, tol=None,
                    learner=None) -> FitReport:
    if learner is None:
        # The Lorenz parameter gradient is analytic and cheap, so the
        # quasi-second-order learner is much faster here than the default
        # derivative-free choice for small parameter counts.
        learner = LearnerOptions(strategy="quasi-second-order", max_iterations=200)
    cfg = CeemConfig(rho_x=rho_x, rho_theta=rho_theta, tol=tol,
                     max_epochs=max_epochs, learner=learner)
    eval_fn = _eps_fn(model_init, theta_true, ic)
    # Chaotic attractors have multiple dynamics-consistent state branches, and
    # cold-started smoothing can lock onto the wrong one; a particle-filter
    # pass under the initial parameters reliably lands in the right basin.
    x_init = [pf_state_init(model_init, noise, tr.y, ic, u=tr.u,
                            seed=0 if tr.seed is None else tr.seed)
              for tr in dataset.trajectories]
    return ceem_fit(dataset, model_init, noise, cfg, eval_fn=eval_fn, x_init=x_init)


@dataclasses.dataclass
class Table1Row:
    sigma_w: float
    sigma_v: float
    estimates: np.ndarray        # (n_seeds, 3)
    seeds_used: list
    objectives: list = dataclasses.field(default_factory=list)  # per seed

    @property
    def mean(self):
        return self.estimates.mean(axis=0)

    @property
    def stderr(self):
        k = self.estimates.shape[0]
        return self.estimates.std(axis=0, ddof=1) / np.sqrt(k)


def run_table1(noise_rows=((0.001, 0.01), (0.1, 0.01)), seeds=BENCHMARK_SEEDS, *,
               T=128, max_epochs=1000, workers=1, model_seed=BENCHMARK_MODEL_SEED):
    """Single-Lorenz bias study: one trajectory per seed, CE-EM fit,
    mean and standard error of (sigma, rho, beta) estimates per noise row."""
    rows = []
    for sigma_w, sigma_v in noise_rows:
        def one(seed):
            ds, m_init, _, noise, ic, th_true = lorenz_setup(
                sigma_w, sigma_v, seed, T=T, model_seed=model_seed)
            rep = run_ceem_lorenz(ds, m_init, noise, ic, th_true, max_epochs=max_epochs)
            return rep.theta, np.array(rep.objectives)
        seed_list = list(seeds)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, seed_list))
        else:
            results = [one(s) for s in seed_list]
        rows.append(Table1Row(sigma_w, sigma_v,
                              np.array([r[0] for r in results]), seed_list,
                              objectives=[r[1] for r in results]))
    return rows


@dataclasses.dataclass
class Fig2Result:
    seeds: list
    ceem_traces: list            # per seed: (epochs, 3) theta history
    pem_traces: list
    ceem_epoch_seconds: np.ndarray
    pem_epoch_seconds: np.ndarray
    ceem_objectives: list = dataclasses.field(default_factory=list)  # per seed

    def epochs_to_tolerance(self, traces, rel_tol=0.02):
        """First epoch at which every parameter is within rel_tol of truth
        (np.inf if never)."""
        out = []
        for tr in traces:
            ok = np.all(np.abs(tr - TRUE_LORENZ) <= rel_tol * np.abs(TRUE_LORENZ), axis=1)
            hits = np.nonzero(ok)[0]
            out.append(np.inf if hits.size == 0 else int(hits[0]) + 1)
        return np.array(out)


def run_fig2(seeds=range(10), *, sigma_w=0.1, sigma_v=0.5, n_traj=4, T=128,
             ceem_epochs=10, pem_epochs=21, n_particles=100, n_samples=10,
             workers=1, model_seed=BENCHMARK_MODEL_SEED):
    """CE-EM versus particle EM on the noisy single Lorenz system."""
    def one(seed):
        ds, m_init, _, noise, ic, th_true = lorenz_setup(
            sigma_w, sigma_v, seed, n_traj=n_traj, T=T, model_seed=model_seed)
        ceem_rep = run_ceem_lorenz(ds, m_init, noise, ic, th_true,
                                   max_epochs=ceem_epochs, tol=1e-12)
        pem_cfg = PemConfig(n_particles=n_particles, n_samples=n_samples,
                            max_epochs=pem_epochs)
        pem_rep = pem_fit(ds, m_init, noise, pem_cfg, ic, seed=seed,
                          eval_fn=_eps_fn(m_init, th_true, ic))
        return (np.array([r.theta for r in ceem_rep.records]),
                np.array([r.theta for r in pem_rep.records]),
                np.array([r.wall_seconds for r in ceem_rep.records]),
                np.array([r.wall_seconds for r in pem_rep.records]),
                np.array([r.objective for r in ceem_rep.records]))

    seed_list = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seed_list))
    else:
        results = [one(s) for s in seed_list]
    return Fig2Result(
        seeds=seed_list,
        ceem_traces=[r[0] for r in results],
        pem_traces=[r[1] for r in results],
        ceem_epoch_seconds=np.concatenate([r[2] for r in results]),
        pem_epoch_seconds=np.concatenate([r[3] for r in results]),
        ceem_objectives=[r[4] for r in results],
    )


@dataclasses.dataclass
class ScalingRun:
    n_traj: int
    seed: int
    eps_initial: float
    eps_final: float
    eps_trace: np.ndarray


def run_fig3(K=3, batches=(2, 4, 8), seeds=range(2), *, sigma_v=0.01,
             fit_sigma_w=0.01, T=128, max_epochs=20, workers=1):
    """Trajectory-count scaling study on K coupled Lorenz attractors.

    Data are generated with deterministic dynamics (sigma_w = 0); the fit
    treats the process noise level as a hyperparameter (``fit_sigma_w``).
    """
    jobs = [(b, s) for b in batches for s in seeds]

    def one(job):
        n_traj, seed = job
        ds, m_init, _, _, ic, th_true = lorenz_setup(
            0.0, sigma_v, seed, K=K, n_traj=n_traj, T=T)
        fit_noise = GaussianNoise(np.full(m_init.n, float(fit_sigma_w)),
                                  np.full(m_init.m, float(sigma_v)))
        eval_fn = _eps_fn(m_init, th_true, ic)
        eps0 = eval_fn(m_init.theta)
        rep = run_ceem_lorenz(ds, m_init, fit_noise, ic, th_true,
                              max_epochs=max_epochs,
                              learner=LearnerOptions(strategy="quasi-second-order",
                                                     max_iterations=200))
        trace = np.array([r.dyn_error for r in rep.records])
        return ScalingRun(n_traj, seed, eps0, float(trace[-1]), trace)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]
