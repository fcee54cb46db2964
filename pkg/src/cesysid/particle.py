"""Particle EM baseline: adapted particle filter, FFBSi backward simulation, SAEM.

The forward pass uses the locally optimal proposal whenever the observation
map is linear in the state (y = Cx + v with diagonal Gaussian noise), and a
bootstrap proposal otherwise.  Systematic resampling triggers adaptively on
effective sample size.  Smoothed trajectories are drawn i.i.d. with FFBSi
(rejection fast path, categorical fallback) and feed a stochastic
approximation EM parameter update.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .driver import EpochRecord, FitReport
from .exceptions import ConfigurationError, DimensionError, FilterDegeneracyError
from .learner import LearnerOptions, StateBatch, learn
from .models import GaussianNoise, SystemModel
from .simulate import InitialConditionSpec, TrajectoryDataset
from .smoother import joint_objective

__all__ = [
    "ParticleEnsemble",
    "PemConfig",
    "SaemState",
    "systematic_resample",
    "particle_filter",
    "ffbsi_sample",
    "saem_update",
    "pf_state_init",
    "pem_fit",
]

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class ParticleEnsemble:
    """Forward-filter output: particles (T, Np, n), normalized weights
    (T, Np), ancestor indices (T, Np), and per-step effective sample size."""

    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray
    ess: np.ndarray

    @property
    def T(self):
        return self.particles.shape[0]

    @property
    def n_particles(self):
        return self.particles.shape[1]


@dataclasses.dataclass
class PemConfig:
    n_particles: int = 100
    n_samples: int = 10
    max_epochs: int = 50
    saem_burnin: int = 5              # gamma_k = 1 for k <= burnin
    saem_decay: float = 0.7           # then (k - burnin)^-decay
    buffer_min_weight: float = 1e-3
    ess_threshold: float = 0.5
    learner: LearnerOptions | None = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigurationError("n_particles must be >= 2")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")
        if self.learner is None:
            self.learner = LearnerOptions(rho_theta=0.0)


@dataclasses.dataclass
class SaemState:
    """Retained weighted sample buffers for the blended Monte-Carlo objective."""

    buffers: list = dataclasses.field(default_factory=list)  # (weight, [StateBatch])
    iteration: int = 0
    min_weight: float = 1e-3


def systematic_resample(weights, N, rng):
    """Low-variance systematic resampling with a single uniform draw.

    Returns N indices; the expected count of index i is N * w_i.
    """
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-8 or np.any(w < 0):
        raise ValueError("weights must be normalized and nonnegative")
    positions = (rng.random() + np.arange(N)) / N
    return np.searchsorted(np.cumsum(w), positions).clip(max=w.size - 1)


def _ess(w):
    return 1.0 / float(np.sum(w * w))


def _gauss_logpdf_diag(r, sigma):
    z = r / sigma
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) \
        - 0.5 * sigma.size * np.log(2 * np.pi)


def particle_filter(model: SystemModel, noise: GaussianNoise, y, u, n_particles,
                    rng, init: InitialConditionSpec, ess_threshold=0.5) -> ParticleEnsemble:
    """Forward particle filter with adaptive systematic resampling.

    Fully adapted (locally optimal proposal and predictive weighting) when
    the observation map is linear-Gaussian in the state; bootstrap otherwise.
    """
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    Np = int(n_particles)
    n = model.n
    C = model.observation_matrix
    adapted = C is not None and np.all(noise.sigma_w > 0) and np.all(noise.sigma_v > 0)
    if C is None:
        logger.info("nonlinear observation map: falling back to bootstrap proposal")

    particles = np.empty((T, Np, n))
    weights = np.empty((T, Np))
    ancestors = np.empty((T, Np), dtype=int)
    ess = np.empty(T)

    sw, sv = noise.sigma_w, noise.sigma_v
    if adapted:
        # posterior precision of x' given x and y: Q^-1 + C^T R^-1 C
        prec = np.diag(1.0 / sw**2) + C.T @ np.diag(1.0 / sv**2) @ C
        cov = np.linalg.inv(prec)
        cov_chol = np.linalg.cholesky(cov)
        # predictive covariance of y' given x: C Q C^T + R
        pred_cov = C @ np.diag(sw**2) @ C.T + np.diag(sv**2)
        pred_chol = np.linalg.cholesky(pred_cov)
        pred_logdet = 2.0 * np.sum(np.log(np.diag(pred_chol)))

    def predictive_logpdf(mean_y):
        d = y_t - mean_y
        sol = np.linalg.solve(pred_chol, d.T).T
        return -0.5 * np.sum(sol * sol, axis=-1) - 0.5 * pred_logdet \
            - 0.5 * C.shape[0] * np.log(2 * np.pi)

    # initialization at t = 0 from the initial-condition Gaussian
    y_t = y[0]
    x0 = init.mean + init.std * rng.standard_normal((Np, n))
    if adapted and np.all(init.std > 0):
        prec0 = np.diag(1.0 / init.std**2) + C.T @ np.diag(1.0 / sv**2) @ C
        cov0 = np.linalg.inv(prec0)
        mean0 = (np.diag(1.0 / init.std**2) @ init.mean
                 + C.T @ (y_t / sv**2)) @ cov0.T
        x0 = mean0 + rng.standard_normal((Np, n)) @ np.linalg.cholesky(cov0).T
        logw = np.zeros(Np)
    elif np.all(sv > 0):
        logw = _gauss_logpdf_diag(y_t - x0 @ C.T if C is not None
                                  else y_t - model.observe(x0), sv)
    else:
        logw = np.zeros(Np)
    w = _normalize_logw(logw, 0)
    particles[0], weights[0], ancestors[0], ess[0] = x0, w, np.arange(Np), _ess(w)

    for t in range(1, T):
        y_t = y[t]
        ut = None if u is None else u[t - 1]
        x_prev = particles[t - 1]
        w_prev = weights[t - 1]
        f = model.dynamics(x_prev, ut)
        if adapted:
            logw = np.log(np.maximum(w_prev, 1e-300)) + predictive_logpdf(f @ C.T)
            w = _normalize_logw(logw, t)
            if _ess(w) < ess_threshold * Np:
                idx = systematic_resample(w, Np, rng)
                w = np.full(Np, 1.0 / Np)
            else:
                idx = np.arange(Np)
            mean = (f[idx] / sw**2 + y_t @ np.diag(1.0 / sv**2) @ C) @ cov.T
            x_t = mean + rng.standard_normal((Np, n)) @ cov_chol.T
        else:
            # bootstrap: propagate, then weight by the observation likelihood
            x_t = f + sw * rng.standard_normal((Np, n)) if np.any(sw > 0) else f.copy()
            g = model.observe(x_t, ut)
            if np.all(sv > 0):
                logw = np.log(np.maximum(w_prev, 1e-300)) + _gauss_logpdf_diag(y_t - g, sv)
            else:
                logw = np.log(np.maximum(w_prev, 1e-300))
            w = _normalize_logw(logw, t)
            if _ess(w) < ess_threshold * Np:
                idx = systematic_resample(w, Np, rng)
                x_t = x_t[idx]
                w = np.full(Np, 1.0 / Np)
            else:
                idx = np.arange(Np)
        particles[t], weights[t], ancestors[t], ess[t] = x_t, w, idx, _ess(w)
    return ParticleEnsemble(particles, weights, ancestors, ess)


def _normalize_logw(logw, t):
    mx = np.max(logw)
    if not np.isfinite(mx):
        raise FilterDegeneracyError(f"all particle weights underflowed at step {t}", t=t)
    w = np.exp(logw - mx)
    s = w.sum()
    if s <= 0 or not np.isfinite(s):
        raise FilterDegeneracyError(f"all particle weights underflowed at step {t}", t=t)
    return w / s


def ffbsi_sample(ensemble: ParticleEnsemble, model: SystemModel, noise: GaussianNoise,
                 n_samples, rng, u=None, max_rejects=None):
    """Draw i.i.d. smoothed state trajectories by backward simulation.

    Backward ancestors at time t are drawn with probability proportional to
    w_t^i * p_w(x_{t+1} - f(x_t^i)) using rejection sampling against the
    bounded Gaussian transition density, with an exact categorical fallback.
    """
    if np.any(noise.sigma_w <= 0):
        raise ConfigurationError("FFBSi requires strictly positive process noise")
    T, Np, n = ensemble.particles.shape
    Ns = int(n_samples)
    if max_rejects is None:
        max_rejects = max(10, Np // 4)
    sw = noise.sigma_w
    log_pmax = float(-np.sum(np.log(sw)) - 0.5 * n * np.log(2 * np.pi))

    out = np.empty((Ns, T, n))
    idx_T = _categorical(ensemble.weights[-1], Ns, rng)
    out[:, T - 1] = ensemble.particles[T - 1, idx_T]

    for t in range(T - 2, -1, -1):
        ut = None if u is None else u[t]
        x_t = ensemble.particles[t]
        w_t = ensemble.weights[t]
        f_t = model.dynamics(x_t, ut)          # (Np, n)
        x_next = out[:, t + 1]                 # (Ns, n)
        chosen = np.full(Ns, -1, dtype=int)
        pending = np.arange(Ns)
        for _ in range(max_rejects):
            if pending.size == 0:
                break
            cand = _categorical(w_t, pending.size, rng)
            logp = _gauss_logpdf_diag(x_next[pending] - f_t[cand], sw)
            accept = np.log(rng.random(pending.size) + 1e-300) < (logp - log_pmax)
            chosen[pending[accept]] = cand[accept]
            pending = pending[~accept]
        if pending.size:
            # exact categorical over w_t^i * p_w(x_next - f(x_t^i))
            logp = _gauss_logpdf_diag(
                x_next[pending][:, None, :] - f_t[None, :, :], sw
            ) + np.log(np.maximum(w_t, 1e-300))[None, :]
            logp -= logp.max(axis=1, keepdims=True)
            probs = np.exp(logp)
            probs /= probs.sum(axis=1, keepdims=True)
            for j, s in enumerate(pending):
                chosen[s] = _categorical(probs[j], 1, rng)[0]
        out[:, t] = x_t[chosen]
    return out


def _categorical(w, size, rng):
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(size)).clip(max=w.size - 1)


def saem_update(state: SaemState, new_batches, gamma, model, noise,
                learner_options, theta_prev):
    """Blend new smoothed samples into the running Monte-Carlo objective and
    maximize it over theta. New samples receive weight gamma, retained
    buffers are scaled by (1 - gamma); buffers whose weight decays below the
    configured floor are dropped."""
    if not (0 < gamma <= 1):
        raise ValueError("gamma must be in (0, 1]")
    scaled = []
    if gamma < 1:
        for w, batches in state.buffers:
            w_new = w * (1.0 - gamma)
            if w_new >= state.min_weight:
                scaled.append((w_new, batches))
    scaled.append((gamma, list(new_batches)))
    flat = []
    for w, batches in scaled:
        for b in batches:
            flat.append(StateBatch(w * b.weight, b.x, b.y, b.u))
    result = learn(model, noise, flat, theta_prev, learner_options)
    new_state = SaemState(buffers=scaled, iteration=state.iteration + 1,
                          min_weight=state.min_weight)
    return result.theta, new_state


def pf_state_init(model, noise, y, ic, u=None, n_particles=500, seed=0,
                  min_sigma_w=0.5):
    """Filtered-mean state trajectory from a particle filter pass.

    Used as a robust smoother initialization on chaotic systems, where
    linearized filtering can lock onto a wrong branch of the attractor.  The
    process noise is floored at ``min_sigma_w`` so the filter stays responsive
    when the model is near-deterministic or its parameters are off.
    """
    pf_noise = GaussianNoise(np.maximum(noise.sigma_w, min_sigma_w), noise.sigma_v)
    rng = np.random.default_rng(int(seed))
    ens = particle_filter(model, pf_noise, y, u, n_particles, rng, ic)
    return np.einsum("tpn,tp->tn", ens.particles, ens.weights)


def pem_fit(dataset: TrajectoryDataset, model: SystemModel, noise: GaussianNoise,
            config: PemConfig, init: InitialConditionSpec, seed=0,
            eval_fn=None) -> FitReport:
    """Particle EM: per epoch, filter + FFBSi per trajectory, then an SAEM
    parameter update. Shares the FitReport schema with the CE-EM driver."""
    import time

    if not dataset.trajectories:
        raise ValueError("dataset is empty")
    theta = model.theta
    state = SaemState(min_weight=config.buffer_min_weight)
    records = []
    ss = np.random.SeedSequence(int(seed))
    epoch_seeds = ss.spawn(config.max_epochs)
    sample_w = 1.0 / config.n_samples
    final_samples = []
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        cur = model.with_theta(theta)
        new_batches = []
        mc_obj = 0.0
        traj_seeds = epoch_seeds[epoch - 1].spawn(len(dataset.trajectories))
        for tr, tseed in zip(dataset.trajectories, traj_seeds):
            rng = np.random.default_rng(tseed)
            ens = particle_filter(cur, noise, tr.y, tr.u, config.n_particles,
                                  rng, init, config.ess_threshold)
            samples = ffbsi_sample(ens, cur, noise, config.n_samples, rng, u=tr.u)
            for s in samples:
                new_batches.append(StateBatch(sample_w, s, tr.y, tr.u))
                mc_obj += sample_w * joint_objective(cur, noise, tr.y, tr.u, s).total
        k = epoch
        gamma = 1.0 if k <= config.saem_burnin else float((k - config.saem_burnin) ** -config.saem_decay)
        theta, state = saem_update(state, new_batches, gamma, model, noise,
                                   config.learner, theta)
        wall = time.perf_counter() - t0
        eps = float(eval_fn(theta)) if eval_fn is not None else float("nan")
        records.append(EpochRecord(epoch, mc_obj, theta.copy(), eps, wall))
        final_samples = new_batches
    states = [b.x for b in final_samples]
    return FitReport(records, theta.copy(), states, termination="max_epochs")
