"""Metrics and exact filtering/smoothing oracles.

Contains the Monte-Carlo dynamics-discrepancy metric, prediction RMSE, an
extended Kalman filter in Joseph-stabilized covariance form for prediction
evaluation, and exact Kalman filter / Rauch-Tung-Striebel smoother recursions
for linear-Gaussian systems (the oracles used by the test suite).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .exceptions import DimensionError, EvaluationError
from .models import SystemModel

__all__ = [
    "EkfSettings",
    "MetricReport",
    "dynamics_error",
    "rmse",
    "ekf_evaluate",
    "KalmanResult",
    "kalman_filter",
    "RtsResult",
    "rts_smoother",
    "write_metric_report",
]


@dataclasses.dataclass
class EkfSettings:
    """EKF evaluation protocol parameters.

    Defaults: identity process/observation/initial covariances, zero initial
    state, and the first 25 predictions dropped from RMSE as transient.
    """

    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    sigma0: np.ndarray | None = None
    x0: np.ndarray | None = None
    drop_first: int = 25

    def resolved(self, n, m):
        Q = np.eye(n) if self.Q is None else np.asarray(self.Q, dtype=float)
        R = np.eye(m) if self.R is None else np.asarray(self.R, dtype=float)
        S0 = np.eye(n) if self.sigma0 is None else np.asarray(self.sigma0, dtype=float)
        x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float)
        for name, M in (("Q", Q), ("R", R), ("sigma0", S0)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        return Q, R, S0, x0


@dataclasses.dataclass
class MetricReport:
    per_trajectory_rmse: np.ndarray
    mean_rmse: float
    std_rmse: float
    dyn_error: float = float("nan")


def rmse(predicted, measured, drop_first=0):
    """Root mean squared prediction error over the kept steps.

    sqrt of the mean over steps (after dropping the first ``drop_first``)
    of the squared Euclidean norm of the per-step error vector.
    """
    pred = np.atleast_2d(np.asarray(predicted, dtype=float))
    meas = np.atleast_2d(np.asarray(measured, dtype=float))
    if pred.shape != meas.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {meas.shape}")
    if pred.shape[0] <= drop_first:
        raise DimensionError("sequence length must exceed drop_first")
    err = pred[drop_first:] - meas[drop_first:]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=-1))))


def dynamics_error(model: SystemModel, theta, theta_true, ic_spec, n_mc=1024, rng=None):
    """Monte-Carlo estimate of E_{x ~ p(x0)} || f_theta(x) - f_theta_true(x) ||_2.

    Returns (estimate, standard error).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    x = ic_spec.mean + ic_spec.std * rng.standard_normal((int(n_mc), ic_spec.mean.size))
    fa = model.with_theta(np.asarray(theta, dtype=float)).dynamics(x)
    fb = model.with_theta(np.asarray(theta_true, dtype=float)).dynamics(x)
    norms = np.linalg.norm(fa - fb, axis=-1)
    return float(norms.mean()), float(norms.std(ddof=1) / np.sqrt(n_mc))


def ekf_evaluate(model: SystemModel, y, u, settings: EkfSettings | None = None):
    """Recursive predict/correct evaluation of a model against observations.

    At every step the observation is predicted from the current state
    estimate (these predictions feed the RMSE), then the state is corrected
    with the measurement and propagated through the dynamics.
    """
    if settings is None:
        settings = EkfSettings()
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    Q, R, P, m = settings.resolved(model.n, model.m)
    m = m.copy()
    preds = np.empty((T, model.m))
    eye = np.eye(model.n)
    for t in range(T):
        ut = None if u is None else u[t]
        preds[t] = model.observe(m, ut, t)
        G = model.obs_jac_x(m, ut, t)
        S = G @ P @ G.T + R
        try:
            K = np.linalg.solve(S.T, (P @ G.T).T).T
        except np.linalg.LinAlgError as exc:
            raise EvaluationError(f"innovation covariance factorization failed at step {t}",
                                  t=t) from exc
        m = m + K @ (y[t] - preds[t])
        IKG = eye - K @ G
        P = IKG @ P @ IKG.T + K @ R @ K.T  # Joseph form
        if t + 1 < T:
            F = model.dynamics_jac_x(m, ut, t)
            m = model.dynamics(m, ut, t)
            P = F @ P @ F.T + Q
    score = rmse(preds, y, settings.drop_first)
    report = MetricReport(np.array([score]), score, 0.0)
    return preds, report


@dataclasses.dataclass
class KalmanResult:
    means: np.ndarray            # filtered means m_{t|t}
    covs: np.ndarray             # filtered covariances P_{t|t}
    pred_means: np.ndarray       # one-step predicted means m_{t|t-1}
    pred_covs: np.ndarray
    pred_obs: np.ndarray         # predicted observations C m_{t|t-1}
    loglik: float


def _sym(M):
    return 0.5 * (M + M.T)


def kalman_filter(A, C, Q, R, y, m0, P0, B=None, u=None) -> KalmanResult:
    """Standard forward Kalman filter for x' = Ax (+ Bu) + w, y = Cx + v."""
    A, C, Q, R = (np.asarray(M, dtype=float) for M in (A, C, Q, R))
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    n = A.shape[0]
    mo = y.shape[1]
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    pred_means = np.empty((T, n))
    pred_covs = np.empty((T, n, n))
    pred_obs = np.empty((T, mo))
    m = np.asarray(m0, dtype=float).copy()
    P = np.asarray(P0, dtype=float).copy()
    loglik = 0.0
    eye = np.eye(n)
    for t in range(T):
        pred_means[t], pred_covs[t] = m, P
        pred_obs[t] = C @ m
        S = _sym(C @ P @ C.T + R)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise EvaluationError(f"innovation covariance not SPD at step {t}", t=t) from exc
        innov = y[t] - pred_obs[t]
        sol = np.linalg.solve(L, innov)
        loglik += float(-0.5 * sol @ sol - np.log(np.diag(L)).sum()
                        - 0.5 * mo * np.log(2 * np.pi))
        K = np.linalg.solve(S.T, (P @ C.T).T).T
        m = m + K @ innov
        IKC = eye - K @ C
        P = _sym(IKC @ P @ IKC.T + K @ R @ K.T)
        means[t], covs[t] = m, P
        if t + 1 < T:
            m = A @ m
            if B is not None and u is not None:
                m = m + np.asarray(B) @ np.asarray(u[t], dtype=float)
            P = _sym(A @ P @ A.T + Q)
    return KalmanResult(means, covs, pred_means, pred_covs, pred_obs, loglik)


@dataclasses.dataclass
class RtsResult:
    means: np.ndarray
    covs: np.ndarray
    gains: np.ndarray            # smoother gains G_t, t = 0..T-2
    cross_covs: np.ndarray       # Cov(x_t, x_{t+1} | y_{1:T}), t = 0..T-2


def rts_smoother(A, C, Q, R, y, m0, P0, B=None, u=None) -> RtsResult:
    """Rauch-Tung-Striebel fixed-interval smoother on top of the Kalman filter."""
    A = np.asarray(A, dtype=float)
    kf = kalman_filter(A, C, Q, R, y, m0, P0, B=B, u=u)
    T, n = kf.means.shape
    means = kf.means.copy()
    covs = kf.covs.copy()
    gains = np.empty((max(T - 1, 0), n, n))
    cross = np.empty((max(T - 1, 0), n, n))
    for t in range(T - 2, -1, -1):
        P = kf.covs[t]
        m_pred = A @ kf.means[t]
        if B is not None and u is not None:
            m_pred = m_pred + np.asarray(B) @ np.asarray(u[t], dtype=float)
        P_pred = _sym(A @ P @ A.T + Q)
        G = np.linalg.solve(P_pred.T, (P @ A.T).T).T
        means[t] = kf.means[t] + G @ (means[t + 1] - m_pred)
        covs[t] = _sym(P + G @ (covs[t + 1] - P_pred) @ G.T)
        gains[t] = G
        cross[t] = G @ covs[t + 1]
    return RtsResult(means, covs, gains, cross)


def write_metric_report(report: MetricReport, path, header_extra=None):
    """Comma-separated per-trajectory RMSE rows plus an aggregate summary line."""
    with open(path, "w") as fh:
        if header_extra:
            fh.write(f"# {header_extra}\n")
        fh.write("trajectory_id,rmse\n")
        for i, v in enumerate(report.per_trajectory_rmse):
            fh.write(f"{i},{v:.17g}\n")
        fh.write(f"aggregate,{report.mean_rmse:.17g},{report.std_rmse:.17g}")
        if np.isfinite(report.dyn_error):
            fh.write(f",{report.dyn_error:.17g}")
        fh.write("\n")
