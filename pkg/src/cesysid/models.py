"""Parametric state-space models: dynamics, observations, Jacobians, and the model zoo.

All evaluators are vectorized over leading batch dimensions: a state argument
of shape ``(..., n)`` yields outputs of shape ``(..., n)`` / ``(..., m)`` and
Jacobians of shape ``(..., n, n)`` etc.  Evaluation is pure (no shared mutable
state), so models are safe to use from multiple threads.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DimensionError

__all__ = [
    "GaussianNoise",
    "SystemModel",
    "LtiModel",
    "LorenzParams",
    "lorenz_drift",
    "CoupledLorenzDynamics",
    "Rk4Model",
    "jacobians",
    "make_model",
    "MODEL_IDS",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_vector(v, length, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise DimensionError(f"{name} must have length {length}, got shape {arr.shape}")
    return arr


class GaussianNoise:
    """Diagonal-covariance Gaussian process and observation noise.

    Parameters
    ----------
    sigma_w : array_like, shape (n,) or scalar
        Per-dimension process noise standard deviations.
    sigma_v : array_like, shape (m,) or scalar
        Per-dimension observation noise standard deviations.

    Zero entries are allowed for simulation (they disable the corresponding
    noise), but log-density evaluation requires strictly positive entries.
    """

    def __init__(self, sigma_w, sigma_v, n=None, m=None):
        sigma_w = np.atleast_1d(np.asarray(sigma_w, dtype=float))
        sigma_v = np.atleast_1d(np.asarray(sigma_v, dtype=float))
        if n is not None:
            sigma_w = _as_vector(sigma_w if sigma_w.size > 1 else sigma_w[0], n, "sigma_w")
        if m is not None:
            sigma_v = _as_vector(sigma_v if sigma_v.size > 1 else sigma_v[0], m, "sigma_v")
        if np.any(sigma_w < 0) or np.any(sigma_v < 0):
            raise ConfigurationError("noise standard deviations must be nonnegative")
        self.sigma_w = sigma_w
        self.sigma_v = sigma_v

    def _sigma(self, which):
        if which == "process":
            return self.sigma_w
        if which == "observation":
            return self.sigma_v
        raise ValueError(f"unknown noise kind {which!r}")

    def log_prob(self, residual, which):
        """Diagonal Gaussian log-density of a residual vector.

        ``residual`` may carry leading batch dimensions; the density is
        summed over the trailing (vector) axis only.
        """
        sigma = self._sigma(which)
        if np.any(sigma <= 0):
            raise ConfigurationError(f"{which} noise has nonpositive sigma; log-density undefined")
        r = np.asarray(residual, dtype=float)
        if r.shape[-1] != sigma.shape[0]:
            raise DimensionError(
                f"residual length {r.shape[-1]} does not match {which} dimension {sigma.shape[0]}"
            )
        z = r / sigma
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) - 0.5 * sigma.size * _LOG_2PI


def log_prob_noise(spec: GaussianNoise, residual, which):
    """Functional alias for :meth:`GaussianNoise.log_prob`."""
    return spec.log_prob(residual, which)


def _finite_diff_jac(fn, z, eps=1e-6):
    """Central finite-difference Jacobian of ``fn`` at vector ``z``."""
    z = np.asarray(z, dtype=float)
    f0 = np.asarray(fn(z))
    jac = np.empty(f0.shape + (z.size,))
    for i in range(z.size):
        dz = np.zeros_like(z)
        dz[i] = eps
        jac[..., i] = (np.asarray(fn(z + dz)) - np.asarray(fn(z - dz))) / (2 * eps)
    return jac


class SystemModel:
    """Discrete-time parametric model x' = f_theta(x, u, t), y = g_theta(x, u, t).

    Subclasses set dimensions ``n, m, p``, the flat parameter vector
    ``theta`` with its named-slice ``theta_layout``, and override the
    evaluators.  Jacobian methods default to central finite differences
    (``jacobians_analytic`` is then False).
    """

    n: int
    m: int
    p: int
    dt: float = 1.0
    jacobians_analytic = False

    @property
    def q(self):
        return self.theta.size

    @property
    def theta(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def theta_layout(self) -> dict:
        raise NotImplementedError

    @property
    def observation_matrix(self):
        """Matrix C when the observation map is y = Cx, else None."""
        return None

    def with_theta(self, theta) -> "SystemModel":
        raise NotImplementedError

    def dynamics(self, x, u=None, t=None):
        raise NotImplementedError

    def observe(self, x, u=None, t=None):
        raise NotImplementedError

    def _check_state(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"state has trailing dimension {x.shape[-1]}, expected {self.n}")
        return x

    # Finite-difference fallbacks; subclasses with analytic forms override.
    def dynamics_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        if x.ndim == 1:
            return _finite_diff_jac(lambda z: self.dynamics(z, u, t), x)
        return np.stack([self.dynamics_jac_x(xi, u, t) for xi in x])

    def dynamics_jac_theta(self, x, u=None, t=None):
        x = self._check_state(x)
        if x.ndim == 1:
            return _finite_diff_jac(lambda th: self.with_theta(th).dynamics(x, u, t), self.theta)
        return np.stack([self.dynamics_jac_theta(xi, u, t) for xi in x])

    def obs_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        if x.ndim == 1:
            return _finite_diff_jac(lambda z: self.observe(z, u, t), x)
        return np.stack([self.obs_jac_x(xi, u, t) for xi in x])

    def obs_jac_theta(self, x, u=None, t=None):
        x = self._check_state(x)
        if x.ndim == 1:
            return _finite_diff_jac(lambda th: self.with_theta(th).observe(x, u, t), self.theta)
        return np.stack([self.obs_jac_theta(xi, u, t) for xi in x])


def dynamics_step(model: SystemModel, x, u=None, t=None):
    """Noiseless next state f_theta(x, u, t)."""
    return model.dynamics(x, u, t)


def observe(model: SystemModel, x, u=None, t=None):
    """Noiseless observation g_theta(x, u, t)."""
    return model.observe(x, u, t)


def jacobians(model: SystemModel, x, u=None, t=None):
    """All four model Jacobians at (x, u, t): (df/dx, df/dtheta, dg/dx, dg/dtheta)."""
    return (
        model.dynamics_jac_x(x, u, t),
        model.dynamics_jac_theta(x, u, t),
        model.obs_jac_x(x, u, t),
        model.obs_jac_theta(x, u, t),
    )


class LtiModel(SystemModel):
    """Linear time-invariant model x' = Ax + Bu, y = Cx.

    The learnable parameters are the entries of A (row-major); B and C are
    treated as known.
    """

    jacobians_analytic = True

    def __init__(self, A, B=None, C=None, dt=1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if C is None:
            C = np.eye(n)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        if B is None:
            B = np.zeros((n, 0))
        B = np.asarray(B, dtype=float).reshape(n, -1)
        self.A = A
        self.B = B
        self.C = C
        self.n = n
        self.m = C.shape[0]
        self.p = B.shape[1]
        self.dt = float(dt)
        self.model_id = "lti"

    @property
    def theta(self):
        return self.A.ravel().copy()

    @property
    def theta_layout(self):
        return {"A": slice(0, self.n * self.n)}

    @property
    def observation_matrix(self):
        return self.C

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n * self.n,):
            raise DimensionError(f"theta must have length {self.n * self.n}")
        return LtiModel(theta.reshape(self.n, self.n), self.B, self.C, self.dt)

    def dynamics(self, x, u=None, t=None):
        x = self._check_state(x)
        out = x @ self.A.T
        if self.p and u is not None:
            out = out + np.asarray(u, dtype=float) @ self.B.T
        return out

    def observe(self, x, u=None, t=None):
        return self._check_state(x) @ self.C.T

    def dynamics_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        return np.broadcast_to(self.A, x.shape[:-1] + (self.n, self.n)).copy()

    def dynamics_jac_theta(self, x, u=None, t=None):
        # d(Ax)_i / dA_jk = delta_ij * x_k
        x = self._check_state(x)
        eye = np.eye(self.n)
        jac = eye[..., :, :, None] * x[..., None, None, :]
        return jac.reshape(x.shape[:-1] + (self.n, self.n * self.n))

    def obs_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        return np.broadcast_to(self.C, x.shape[:-1] + (self.m, self.n)).copy()

    def obs_jac_theta(self, x, u=None, t=None):
        x = self._check_state(x)
        return np.zeros(x.shape[:-1] + (self.m, self.n * self.n))


class LorenzParams:
    """Parameters of K coupled Lorenz attractors.

    Per-attractor coefficients ``sigma, rho, beta`` (each length K), a
    coupling matrix ``H`` (3K x 3K) whose 3x3 diagonal blocks must vanish
    (no self-coupling), and a known full-row-rank observation matrix ``C``.
    """

    def __init__(self, sigma, rho, beta, H=None, C=None, validate=True):
        self.sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        self.rho = np.atleast_1d(np.asarray(rho, dtype=float))
        self.beta = np.atleast_1d(np.asarray(beta, dtype=float))
        K = self.sigma.size
        if not (self.rho.size == K and self.beta.size == K):
            raise DimensionError("sigma, rho, beta must have equal length K")
        self.K = K
        d = 3 * K
        if H is None:
            H = np.zeros((d, d))
        H = np.asarray(H, dtype=float)
        if H.shape != (d, d):
            raise DimensionError(f"H must be {d}x{d}, got {H.shape}")
        if C is None:
            C = np.eye(max(d - 2, 1), d)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] != d:
            raise DimensionError(f"C must have {d} columns, got {C.shape}")
        if validate:
            for k in range(K):
                blk = H[3 * k : 3 * k + 3, 3 * k : 3 * k + 3]
                if np.any(blk != 0):
                    raise ConfigurationError(f"H has a nonzero diagonal block for attractor {k}")
            if np.linalg.matrix_rank(C) < C.shape[0]:
                raise ConfigurationError("observation matrix C is row-rank deficient")
        self.H = H
        self.C = C


def lorenz_drift(params: LorenzParams, x):
    """Continuous-time drift of the coupled Lorenz system.

    Per attractor k the uncoupled drift stacks
    ``(sigma_k (x2 - x1), x1 (rho_k - x3) - x2, x1 x2 - beta_k x3)``;
    the coupling adds ``H x``.
    """
    x = np.asarray(x, dtype=float)
    d = 3 * params.K
    if x.shape[-1] != d:
        raise DimensionError(f"state must have length {d}, got {x.shape[-1]}")
    xr = x.reshape(x.shape[:-1] + (params.K, 3))
    x1, x2, x3 = xr[..., 0], xr[..., 1], xr[..., 2]
    drift = np.empty_like(xr)
    drift[..., 0] = params.sigma * (x2 - x1)
    drift[..., 1] = x1 * (params.rho - x3) - x2
    drift[..., 2] = x1 * x2 - params.beta * x3
    return drift.reshape(x.shape) + x @ params.H.T


class CoupledLorenzDynamics:
    """Continuous dynamics of K coupled Lorenz attractors with analytic Jacobians.

    The flat parameter vector is ``[sigma_1:K, rho_1:K, beta_1:K]`` followed,
    when ``learn_coupling`` is set, by the off-diagonal 3x3 blocks of H in
    row-major block order.  C is known and never part of theta.
    """

    def __init__(self, params: LorenzParams, learn_coupling=None):
        self.params = params
        self.K = params.K
        self.n = 3 * params.K
        if learn_coupling is None:
            learn_coupling = params.K > 1
        self.learn_coupling = bool(learn_coupling)
        # index pairs (k, l), k != l, of learnable off-diagonal blocks
        self._block_pairs = [
            (k, l) for k in range(self.K) for l in range(self.K) if k != l
        ]

    @property
    def theta(self):
        parts = [self.params.sigma, self.params.rho, self.params.beta]
        if self.learn_coupling:
            parts += [
                self.params.H[3 * k : 3 * k + 3, 3 * l : 3 * l + 3].ravel()
                for (k, l) in self._block_pairs
            ]
        return np.concatenate(parts)

    @property
    def theta_layout(self):
        K = self.K
        layout = {
            "sigma": slice(0, K),
            "rho": slice(K, 2 * K),
            "beta": slice(2 * K, 3 * K),
        }
        if self.learn_coupling:
            layout["H"] = slice(3 * K, 3 * K + 9 * K * (K - 1))
        return layout

    @property
    def q(self):
        return 3 * self.K + (9 * self.K * (self.K - 1) if self.learn_coupling else 0)

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise DimensionError(f"theta must have length {self.q}")
        K = self.K
        H = self.params.H.copy()
        if self.learn_coupling:
            blocks = theta[3 * K :].reshape(-1, 3, 3)
            for (k, l), blk in zip(self._block_pairs, blocks):
                H[3 * k : 3 * k + 3, 3 * l : 3 * l + 3] = blk
        params = LorenzParams(
            theta[:K], theta[K : 2 * K], theta[2 * K : 3 * K], H, self.params.C, validate=False
        )
        return CoupledLorenzDynamics(params, self.learn_coupling)

    def drift(self, x):
        return lorenz_drift(self.params, x)

    def drift_jac_x(self, x):
        x = np.asarray(x, dtype=float)
        K, n = self.K, self.n
        xr = x.reshape(x.shape[:-1] + (K, 3))
        x1, x2, x3 = xr[..., 0], xr[..., 1], xr[..., 2]
        jac = np.zeros(x.shape[:-1] + (n, n))
        jac[...] = self.params.H
        for k in range(K):
            i = 3 * k
            jac[..., i, i] += -self.params.sigma[k]
            jac[..., i, i + 1] += self.params.sigma[k]
            jac[..., i + 1, i] += self.params.rho[k] - x3[..., k]
            jac[..., i + 1, i + 1] += -1.0
            jac[..., i + 1, i + 2] += -x1[..., k]
            jac[..., i + 2, i] += x2[..., k]
            jac[..., i + 2, i + 1] += x1[..., k]
            jac[..., i + 2, i + 2] += -self.params.beta[k]
        return jac

    def drift_jac_theta(self, x):
        x = np.asarray(x, dtype=float)
        K, n = self.K, self.n
        xr = x.reshape(x.shape[:-1] + (K, 3))
        x1, x2, x3 = xr[..., 0], xr[..., 1], xr[..., 2]
        jac = np.zeros(x.shape[:-1] + (n, self.q))
        for k in range(K):
            i = 3 * k
            jac[..., i, k] = x2[..., k] - x1[..., k]
            jac[..., i + 1, K + k] = x1[..., k]
            jac[..., i + 2, 2 * K + k] = -x3[..., k]
        if self.learn_coupling:
            col = 3 * K
            for (k, l) in self._block_pairs:
                for a in range(3):
                    for b in range(3):
                        # drift row 3k+a gains H[3k+a, 3l+b] * x[3l+b]
                        jac[..., 3 * k + a, col] = x[..., 3 * l + b]
                        col += 1
        return jac


class Rk4Model(SystemModel):
    """Discrete model obtained by one classical RK4 step of a continuous drift.

    The observation map is linear, y = Cx, with C known.  Jacobians of the
    discrete map are propagated analytically through the four RK4 stages.
    """

    jacobians_analytic = True

    def __init__(self, cont, C, dt, model_id="custom"):
        self.cont = cont
        C = np.atleast_2d(np.asarray(C, dtype=float))
        self.C = C
        self.n = cont.n
        self.m = C.shape[0]
        self.p = 0
        self.dt = float(dt)
        self.model_id = model_id

    @property
    def theta(self):
        return self.cont.theta

    @property
    def theta_layout(self):
        return self.cont.theta_layout

    @property
    def observation_matrix(self):
        return self.C

    def with_theta(self, theta):
        return Rk4Model(self.cont.with_theta(theta), self.C, self.dt, self.model_id)

    def dynamics(self, x, u=None, t=None):
        x = self._check_state(x)
        h, f = self.dt, self.cont.drift
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def observe(self, x, u=None, t=None):
        return self._check_state(x) @ self.C.T

    def _stage_points(self, x):
        h, f = self.dt, self.cont.drift
        k1 = f(x)
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        x3 = x + 0.5 * h * k2
        k3 = f(x3)
        x4 = x + h * k3
        return x2, x3, x4

    def dynamics_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        h = self.dt
        x2, x3, x4 = self._stage_points(x)
        jx = self.cont.drift_jac_x
        eye = np.eye(self.n)
        A1 = jx(x)
        A2 = jx(x2) @ (eye + 0.5 * h * A1)
        A3 = jx(x3) @ (eye + 0.5 * h * A2)
        A4 = jx(x4) @ (eye + h * A3)
        return eye + (h / 6.0) * (A1 + 2 * A2 + 2 * A3 + A4)

    def dynamics_jac_theta(self, x, u=None, t=None):
        x = self._check_state(x)
        h = self.dt
        x2, x3, x4 = self._stage_points(x)
        jx, jth = self.cont.drift_jac_x, self.cont.drift_jac_theta
        A1 = jx(x)
        A2 = jx(x2) @ (np.eye(self.n) + 0.5 * h * A1)
        A3 = jx(x3) @ (np.eye(self.n) + 0.5 * h * A2)
        B1 = jth(x)
        B2 = jth(x2) + 0.5 * h * (jx(x2) @ B1)
        B3 = jth(x3) + 0.5 * h * (jx(x3) @ B2)
        B4 = jth(x4) + h * (jx(x4) @ B3)
        return (h / 6.0) * (B1 + 2 * B2 + 2 * B3 + B4)

    def obs_jac_x(self, x, u=None, t=None):
        x = self._check_state(x)
        return np.broadcast_to(self.C, x.shape[:-1] + (self.m, self.n)).copy()

    def obs_jac_theta(self, x, u=None, t=None):
        x = self._check_state(x)
        return np.zeros(x.shape[:-1] + (self.m, self.q))


MODEL_IDS = ("lorenz", "coupled_lorenz", "lti")

NOMINAL_LORENZ = (10.0, 28.0, 8.0 / 3.0)


def make_model(model_id, *, dt=0.04, K=1, obs_dim=None, seed=0, h_scale=0.1,
               theta=None, A=None, B=None, C=None):
    """Build a zoo model by string id.

    ``lorenz``: single attractor (K forced to 1, no coupling parameters),
    observation matrix C sampled i.i.d. standard normal (2 x 3 by default)
    from ``seed`` unless given.  ``coupled_lorenz``: K attractors, coupling
    entries N(0, h_scale^2), C standard normal of shape (3K-2, 3K).
    ``lti``: linear model from explicit A (and optional B, C).  ``theta``
    overrides the nominal parameter vector after construction.
    """
    if model_id == "lorenz":
        K = 1
    if model_id in ("lorenz", "coupled_lorenz"):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(7,)))
        d = 3 * K
        sig = np.full(K, NOMINAL_LORENZ[0])
        rho = np.full(K, NOMINAL_LORENZ[1])
        beta = np.full(K, NOMINAL_LORENZ[2])
        H = np.zeros((d, d))
        if K > 1:
            H = rng.normal(scale=h_scale, size=(d, d))
            for k in range(K):
                H[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = 0.0
        if C is None:
            rows = obs_dim if obs_dim is not None else (2 if K == 1 else d - 2)
            C = rng.normal(size=(rows, d))
        params = LorenzParams(sig, rho, beta, H, C)
        cont = CoupledLorenzDynamics(params, learn_coupling=K > 1)
        model = Rk4Model(cont, params.C, dt, model_id=model_id)
    elif model_id == "lti":
        if A is None:
            raise ConfigurationError("lti model requires matrix A")
        model = LtiModel(A, B, C, dt=dt)
        model.model_id = "lti"
    else:
        raise ConfigurationError(f"unknown model id {model_id!r}; known: {MODEL_IDS}")
    if theta is not None:
        model = model.with_theta(np.asarray(theta, dtype=float))
    return model
