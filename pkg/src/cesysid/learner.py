"""Parameter-update step: maximize the joint objective over theta with states fixed.

Supports Nelder-Mead (small parameter spaces), adaptive-moment gradient
ascent, and limited-memory quasi-Newton strategies behind one `learn` entry
point.  The objective accepts a batch of weighted fixed-state trajectories so
the same machinery serves both CE-EM (unit weights) and the stochastic
approximation M-step of particle EM.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.optimize

from .exceptions import ConfigurationError
from .models import GaussianNoise, SystemModel

__all__ = [
    "LearnerOptions",
    "LearnResult",
    "StateBatch",
    "learn",
    "objective_and_gradient",
]

STRATEGIES = ("auto", "nelder-mead", "first-order", "quasi-second-order")


@dataclasses.dataclass
class LearnerOptions:
    rho_theta: float = 0.0
    strategy: str = "auto"
    max_iterations: int = 100
    step_size: float = 1e-3          # first-order strategy
    nm_max_iterations: int = 600
    simplex_scale: float = 0.05
    lbfgs_history: int = 10
    prior_mean: np.ndarray | None = None
    prior_std: np.ndarray | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("iteration budget must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; known: {STRATEGIES}")
        if self.rho_theta < 0:
            raise ConfigurationError("rho_theta must be >= 0")


@dataclasses.dataclass
class LearnResult:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool


@dataclasses.dataclass
class StateBatch:
    """A fixed state trajectory with observations and a scalar weight."""

    weight: float
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray | None = None


def _group_batches(batches):
    """Group batches by array shape so same-shape trajectories evaluate stacked."""
    groups = {}
    for b in batches:
        key = (b.x.shape, b.y.shape, None if b.u is None else b.u.shape)
        groups.setdefault(key, []).append(b)
    out = []
    for bs in groups.values():
        w = np.array([b.weight for b in bs])
        x = np.stack([b.x for b in bs])
        y = np.stack([b.y for b in bs])
        u = None if bs[0].u is None else np.stack([b.u for b in bs])
        out.append((w, x, y, u))
    return out


def _data_loglik_terms(model, noise, grouped, theta, want_grad):
    """Weighted sum of data log-likelihoods (and gradient) at theta."""
    m = model.with_theta(theta)
    wv2 = 1.0 / noise.sigma_v**2
    ww2 = 1.0 / noise.sigma_w**2
    value = 0.0
    grad = np.zeros(theta.size) if want_grad else None
    for w, x, y, u in grouped:
        up = None if u is None else u[:, :-1]
        r_obs = y - m.observe(x, u)                      # (B, T, m)
        r_dyn = x[:, 1:] - m.dynamics(x[:, :-1], up)     # (B, T-1, n)
        value += float(np.sum(w * np.sum(noise.log_prob(r_obs, "observation"), axis=-1)))
        value += float(np.sum(w * np.sum(noise.log_prob(r_dyn, "process"), axis=-1)))
        if want_grad:
            Gt = m.obs_jac_theta(x, u)                   # (B, T, m, q)
            Ft = m.dynamics_jac_theta(x[:, :-1], up)     # (B, T-1, n, q)
            grad += np.einsum("b,btiq,bti->q", w, Gt, r_obs * wv2)
            grad += np.einsum("b,btiq,bti->q", w, Ft, r_dyn * ww2)
    return value, grad


def _regularizer(theta, theta_prev, options, want_grad):
    value = -options.rho_theta * float(np.sum((theta - theta_prev) ** 2))
    grad = -2.0 * options.rho_theta * (theta - theta_prev) if want_grad else None
    if options.prior_mean is not None:
        mean = np.asarray(options.prior_mean, dtype=float)
        std = np.asarray(options.prior_std, dtype=float)
        z = (theta - mean) / std
        value += float(-0.5 * np.sum(z * z) - np.sum(np.log(std))
                       - 0.5 * theta.size * np.log(2 * np.pi))
        if want_grad:
            grad = grad - z / std
    return value, grad


def objective_and_gradient(model, noise, batches, theta, theta_prev, options):
    """Value and exact gradient of the regularized learning objective.

    Gradient flows through the model's parameter Jacobians; models without
    analytic Jacobians fall through to their finite-difference versions.
    """
    theta = np.asarray(theta, dtype=float)
    grouped = _group_batches(list(batches))
    value, grad = _data_loglik_terms(model, noise, grouped, theta, want_grad=True)
    rv, rg = _regularizer(theta, np.asarray(theta_prev, dtype=float), options, want_grad=True)
    return value + rv, grad + rg


def _objective_only(model, noise, grouped, theta, theta_prev, options):
    value, _ = _data_loglik_terms(model, noise, grouped, theta, want_grad=False)
    rv, _ = _regularizer(theta, theta_prev, options, want_grad=False)
    return value + rv


def _initial_simplex(theta, scale=0.05):
    q = theta.size
    simplex = np.tile(theta, (q + 1, 1))
    for i in range(q):
        simplex[i + 1, i] += max(scale * abs(theta[i]), 1e-4)
    return simplex


def learn(model: SystemModel, noise: GaussianNoise, batches, theta_prev,
          options: LearnerOptions) -> LearnResult:
    """Maximize J(x_fixed, theta) - rho_theta ||theta - theta_prev||^2 + log p(theta).

    The returned objective value is never below the value at ``theta_prev``;
    if no strategy step improves it, ``theta_prev`` is returned flagged
    unconverged.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    if not np.all(np.isfinite(theta_prev)):
        raise ValueError("theta_prev must be finite")
    grouped = _group_batches(list(batches))
    q = theta_prev.size

    strategy = options.strategy
    if strategy == "auto":
        strategy = "nelder-mead" if q <= 8 else "quasi-second-order"

    def neg_obj(th):
        val = _objective_only(model, noise, grouped, th, theta_prev, options)
        return np.inf if not np.isfinite(val) else -val

    def neg_obj_grad(th):
        val, g0 = _data_loglik_terms(model, noise, grouped, np.asarray(th, dtype=float), True)
        rv, rg = _regularizer(np.asarray(th, dtype=float), theta_prev, options, True)
        val, grad = val + rv, g0 + rg
        if not np.isfinite(val):
            return np.inf, np.zeros_like(grad)
        return -val, -grad

    iterations = 0
    if strategy == "nelder-mead":
        res = scipy.optimize.minimize(
            neg_obj, theta_prev, method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(theta_prev, options.simplex_scale),
                "maxiter": options.nm_max_iterations,
                "xatol": 1e-10, "fatol": 1e-12,
            },
        )
        theta, iterations = res.x, res.nit
    elif strategy == "first-order":
        theta = theta_prev.copy()
        m1 = np.zeros(q)
        m2 = np.zeros(q)
        b1, b2, eps = 0.9, 0.999, 1e-8
        best = (neg_obj(theta_prev), theta_prev.copy())
        for k in range(1, options.max_iterations + 1):
            _, g = neg_obj_grad(theta)
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            mh = m1 / (1 - b1**k)
            vh = m2 / (1 - b2**k)
            theta = theta - options.step_size * mh / (np.sqrt(vh) + eps)
            val = neg_obj(theta)
            if val < best[0]:
                best = (val, theta.copy())
        theta, iterations = best[1], options.max_iterations
    else:  # quasi-second-order
        res = scipy.optimize.minimize(
            neg_obj_grad, theta_prev, method="L-BFGS-B", jac=True,
            options={"maxiter": options.max_iterations, "maxcor": options.lbfgs_history},
        )
        theta, iterations = res.x, res.nit

    obj_prev = _objective_only(model, noise, grouped, theta_prev, theta_prev, options)
    obj_new = _objective_only(model, noise, grouped, theta, theta_prev, options)
    if not np.isfinite(obj_new) or obj_new < obj_prev:
        return LearnResult(theta_prev.copy(), obj_prev, iterations, converged=False)
    return LearnResult(np.asarray(theta, dtype=float), obj_new, iterations, converged=True)
