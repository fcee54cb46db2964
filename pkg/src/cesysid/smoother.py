"""Batch maximum-likelihood state smoothing via damped Gauss-Newton.

The smoothing step maximizes the joint log-density J(x_{1:T}, theta) minus a
soft trust-region penalty rho_x * ||x - x_ref||^2, holding theta fixed.  With
Gaussian noise this is a nonlinear least-squares problem whose Jacobian is
block bidiagonal in time, so each iteration factorizes a symmetric banded
normal matrix (cost linear in T).
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg
import scipy.sparse

from .exceptions import EvaluationError
from .models import GaussianNoise, SystemModel

__all__ = [
    "JointObjectiveTerms",
    "SmootherOptions",
    "SmoothResult",
    "joint_objective",
    "residual_stack",
    "smooth",
    "default_state_init",
]


@dataclasses.dataclass(frozen=True)
class JointObjectiveTerms:
    obs_loglik: float
    dyn_loglik: float
    prior_loglik: float

    @property
    def total(self):
        return self.obs_loglik + self.dyn_loglik + self.prior_loglik


@dataclasses.dataclass
class SmootherOptions:
    rho_x: float = 0.0
    max_iterations: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-8
    lam_init: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 10.0
    lam_max: float = 1e12

    def __post_init__(self):
        if self.rho_x < 0:
            raise ValueError("rho_x must be >= 0")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.lam_up <= 1 or self.lam_down <= 1:
            raise ValueError("damping factors must exceed 1")


@dataclasses.dataclass
class SmoothResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool


def joint_objective(model: SystemModel, noise: GaussianNoise, y, u, x,
                    x1_prior=None) -> JointObjectiveTerms:
    """Joint log-density J of states and observations under the model.

    ``x1_prior`` is an optional (mean, std) Gaussian prior on the initial
    state; by default the prior is improper uniform and contributes zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = model.observe(x, u)
    if not np.all(np.isfinite(g)):
        bad = int(np.argwhere(~np.isfinite(g).all(axis=-1))[0][0])
        raise EvaluationError(f"nonfinite observation model output at step {bad}", t=bad)
    f = model.dynamics(x[:-1], None if u is None else u[:-1])
    if not np.all(np.isfinite(f)):
        bad = int(np.argwhere(~np.isfinite(f).all(axis=-1))[0][0])
        raise EvaluationError(f"nonfinite dynamics model output at step {bad}", t=bad)
    obs_ll = float(np.sum(noise.log_prob(y - g, "observation")))
    dyn_ll = float(np.sum(noise.log_prob(x[1:] - f, "process")))
    prior_ll = 0.0
    if x1_prior is not None:
        mean, std = x1_prior
        z = (x[0] - np.asarray(mean, dtype=float)) / np.asarray(std, dtype=float)
        prior_ll = float(
            -0.5 * np.sum(z * z)
            - np.sum(np.log(std))
            - 0.5 * x.shape[1] * np.log(2 * np.pi)
        )
    return JointObjectiveTerms(obs_ll, dyn_ll, prior_ll)


def residual_stack(model, noise, y, u, x, x_prev=None, rho_x=0.0, x1_prior=None):
    """Weighted residual vector and its sparse Jacobian w.r.t. the stacked states.

    Residual blocks (in order): observation residuals (y_t - g(x_t)) / sigma_v,
    dynamics residuals (x_{t+1} - f(x_t)) / sigma_w, when rho_x > 0
    trust-region residuals sqrt(2 rho_x) (x_t - x_prev_t), and, when
    ``x1_prior=(mean, std)`` is given, the initial-state prior residual
    (x_1 - mean) / std.  Up to an additive constant independent of x,
    -0.5 ||r||^2 equals J(x) - rho_x ||x - x_prev||^2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    T, n = x.shape
    m = y.shape[1]
    wv = 1.0 / noise.sigma_v
    ww = 1.0 / noise.sigma_w

    r_obs = (y - model.observe(x, u)) * wv
    up = None if u is None else u[:-1]
    r_dyn = (x[1:] - model.dynamics(x[:-1], up)) * ww
    parts = [r_obs.ravel(), r_dyn.ravel()]

    G = model.obs_jac_x(x, u)                      # (T, m, n)
    F = model.dynamics_jac_x(x[:-1], up)           # (T-1, n, n)

    rows, cols, vals = [], [], []

    def add_blocks(row0, row_stride, blocks, col_ts):
        # blocks: (count, a, b) dense blocks; col_ts: state index per block
        count, a, b = blocks.shape
        ri = row0 + row_stride * np.arange(count)[:, None, None] + np.arange(a)[None, :, None]
        ci = (np.asarray(col_ts)[:, None, None] * n) + np.arange(b)[None, None, :]
        rows.append(np.broadcast_to(ri, blocks.shape).ravel())
        cols.append(np.broadcast_to(ci, blocks.shape).ravel())
        vals.append(blocks.ravel())

    add_blocks(0, m, -wv[:, None] * G, np.arange(T))
    off = T * m
    add_blocks(off, n, -ww[:, None] * F, np.arange(T - 1))
    eye_w = np.broadcast_to(np.diag(ww), (T - 1, n, n))
    add_blocks(off, n, np.ascontiguousarray(eye_w), np.arange(1, T))
    nrows = T * m + (T - 1) * n
    if rho_x > 0:
        if x_prev is None:
            raise ValueError("rho_x > 0 requires x_prev")
        s = np.sqrt(2.0 * rho_x)
        r_tr = s * (x - np.asarray(x_prev, dtype=float))
        parts.append(r_tr.ravel())
        tr_blocks = np.broadcast_to(s * np.eye(n), (T, n, n))
        add_blocks(nrows, n, np.ascontiguousarray(tr_blocks), np.arange(T))
        nrows += T * n
    if x1_prior is not None:
        mean, std = x1_prior
        w0 = 1.0 / np.asarray(std, dtype=float)
        parts.append((x[0] - np.asarray(mean, dtype=float)) * w0)
        add_blocks(nrows, n, np.diag(w0)[None, :, :], np.array([0]))
        nrows += n
    r = np.concatenate(parts)
    jac = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nrows, T * n),
    ).tocsr()
    return r, jac


def _normal_banded(model, noise, y, u, x, rho_x, x1_prior=None):
    """Gradient of the penalized objective residuals and banded J^T J.

    Returns (grad, diag_blocks (T,n,n), cross_blocks (T-1,n,n)) where grad is
    J^T r for the residual stack and cross blocks sit at (t, t+1).
    """
    x = np.asarray(x, dtype=float)
    T, n = x.shape
    wv = 1.0 / noise.sigma_v
    ww = 1.0 / noise.sigma_w
    up = None if u is None else u[:-1]

    r_obs = (y - model.observe(x, u)) * wv                       # (T, m)
    r_dyn = (x[1:] - model.dynamics(x[:-1], up)) * ww            # (T-1, n)
    A = wv[:, None] * model.obs_jac_x(x, u)                      # (T, m, n)
    Fw = ww[:, None] * model.dynamics_jac_x(x[:-1], up)          # (T-1, n, n)

    diag = np.einsum("tia,tib->tab", A, A)
    diag[:-1] += np.einsum("tia,tib->tab", Fw, Fw)
    diag[1:] += np.diag(ww * ww)
    grad = -np.einsum("tia,ti->ta", A, r_obs)
    grad[:-1] += -np.einsum("tia,ti->ta", Fw, r_dyn)
    grad[1:] += ww * r_dyn
    # cross block (t, t+1) of J^T J: (-Fw_t)^T diag(ww)
    cross = -np.swapaxes(Fw, 1, 2) * ww[None, None, :]
    if rho_x > 0:
        diag += 2.0 * rho_x * np.eye(n)
    if x1_prior is not None:
        mean, std = x1_prior
        w0sq = 1.0 / np.asarray(std, dtype=float) ** 2
        diag[0] += np.diag(w0sq)
        grad[0] += (x[0] - np.asarray(mean, dtype=float)) * w0sq
    return grad.ravel(), diag, cross


def _solve_banded_system(diag, cross, lam, rhs):
    """Solve (H + lam * diag(H)) dx = rhs for block-tridiagonal H."""
    T, n, _ = diag.shape
    N = T * n
    bw = 2 * n - 1
    d = diag.copy()
    dd = np.einsum("tii->ti", d)
    dd += lam * np.maximum(dd, 1e-300)
    ab = np.zeros((bw + 1, N))
    # lower-banded storage: ab[i, j] = M[j + i, j]
    for a in range(n):
        for b in range(a + 1):
            ab[a - b, b::n][: T] = d[:, a, b]
    for a in range(n):
        for b in range(n):
            # lower cross block (t+1, t) = cross[t].T
            ab[n + a - b, b : (T - 1) * n : n] = cross[:, b, a]
    return scipy.linalg.solveh_banded(ab, rhs, lower=True)


def default_state_init(model, y, mode="obs_lift", noise=None, u=None):
    """Epoch-1 smoother initialization.

    ``obs_lift`` uses the least-squares observation lift x_t = pinv(C) y_t
    when the observation map is linear, and zeros otherwise.  ``ekf`` runs an
    extended Kalman filter under the current parameters and returns the
    filtered means; unlike the static lift it propagates the unobserved state
    directions through the dynamics, which keeps the subsequent smoothing in
    the basin of the data-generating trajectory.
    """
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    if mode == "zeros":
        return np.zeros((T, model.n))
    C = model.observation_matrix
    if mode == "ekf":
        if noise is None:
            raise ValueError("ekf initialization requires the noise spec")
        return _ekf_state_init(model, noise, y, u)
    if mode != "obs_lift":
        raise ValueError(f"unknown state initialization mode {mode!r}")
    if C is None:
        return np.zeros((T, model.n))
    return y @ np.linalg.pinv(C).T


def _ekf_state_init(model, noise, y, u=None):
    """Filtered state means from an extended Kalman forward pass.

    Starts from the observation lift of the first measurement with a diffuse
    covariance; noise covariances are floored to keep the filter responsive
    even for near-deterministic models.
    """
    T = y.shape[0]
    n = model.n
    Q = np.diag(np.maximum(noise.sigma_w, 1e-2) ** 2)
    R = np.diag(np.maximum(noise.sigma_v, 1e-3) ** 2)
    C = model.observation_matrix
    m = y[0] @ np.linalg.pinv(C).T if C is not None else np.zeros(n)
    P = 100.0 * np.eye(n)
    eye = np.eye(n)
    out = np.empty((T, n))
    for t in range(T):
        ut = None if u is None else u[t]
        G = model.obs_jac_x(m, ut, t)
        S = G @ P @ G.T + R
        K = np.linalg.solve(S.T, (P @ G.T).T).T
        m = m + K @ (y[t] - model.observe(m, ut, t))
        IKG = eye - K @ G
        P = IKG @ P @ IKG.T + K @ R @ K.T
        out[t] = m
        if t + 1 < T:
            F = model.dynamics_jac_x(m, ut, t)
            m = model.dynamics(m, ut, t)
            P = F @ P @ F.T + Q
    return out


def smooth(model, noise, y, u, x_init, options: SmootherOptions,
           x1_prior=None) -> SmoothResult:
    """Maximize J(x, theta) - rho_x ||x - x_init||^2 over x by damped Gauss-Newton.

    The penalized objective at the result is never below its value at
    ``x_init`` (ascent guarantee); failure to meet tolerances within the
    iteration budget flags the result unconverged rather than raising.
    """
    x = np.array(x_init, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x_init must be finite")
    y = np.asarray(y, dtype=float)
    T, n = x.shape
    rho = options.rho_x
    x_ref = np.array(x_init, dtype=float)

    def penalized(xx):
        val = joint_objective(model, noise, y, u, xx, x1_prior=x1_prior).total
        return val - rho * float(np.sum((xx - x_ref) ** 2))

    obj = penalized(x)
    lam = options.lam_init
    converged = False
    it = 0
    for it in range(1, options.max_iterations + 1):
        grad, diag, cross = _normal_banded(model, noise, y, u, x, rho, x1_prior=x1_prior)
        if rho > 0:
            grad += 2.0 * rho * (x - x_ref).ravel()
        if np.max(np.abs(grad)) < options.grad_tol:
            converged = True
            break
        accepted = False
        while lam <= options.lam_max:
            try:
                step = _solve_banded_system(diag, cross, lam, -grad)
            except np.linalg.LinAlgError:
                lam *= options.lam_up
                continue
            x_new = x + step.reshape(T, n)
            try:
                obj_new = penalized(x_new)
            except EvaluationError:
                obj_new = -np.inf
            if np.isfinite(obj_new) and obj_new >= obj:
                accepted = True
                break
            lam *= options.lam_up
        if not accepted:
            raise EvaluationError(
                f"smoother damping exceeded cap {options.lam_max:g} without an acceptable step"
            )
        step_norm = float(np.max(np.abs(step)))
        x, obj = x_new, obj_new
        lam = max(lam / options.lam_down, 1e-15)
        if step_norm < options.step_tol:
            converged = True
            break
    return SmoothResult(x=x, objective=obj, iterations=it, converged=converged)
