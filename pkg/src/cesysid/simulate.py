"""Trajectory simulation and dataset serialization.

Continuous drifts are integrated with classical RK4; process and observation
noise are injected in discrete time after each integration step.  Every
trajectory draws from its own counter-based (Philox) RNG stream, so datasets
are reproducible regardless of generation order or parallelism.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .exceptions import DatasetError, DimensionError, DivergenceError, IntegrationError
from .models import GaussianNoise, SystemModel, make_model

__all__ = [
    "rk4_step",
    "InitialConditionSpec",
    "lorenz_initial_condition",
    "sample_initial_condition",
    "Trajectory",
    "TrajectoryDataset",
    "generate_trajectory",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
]

MANIFEST_NAME = "manifest.json"


def rk4_step(drift, x, u=None, t=0.0, dt=None):
    """One classical 4th-order Runge-Kutta step with u held constant.

    ``drift(x, u, t)`` may also be a single-argument callable of x.
    """
    if dt is None or dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)

    def f(xx, tt):
        try:
            return np.asarray(drift(xx, u, tt), dtype=float)
        except TypeError:
            return np.asarray(drift(xx), dtype=float)

    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    out = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"nonfinite drift output at t={t}", t=t)
    return out


@dataclasses.dataclass(frozen=True)
class InitialConditionSpec:
    """Independent Gaussian sampling spec per state dimension."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "std", np.atleast_1d(np.asarray(self.std, dtype=float)))
        if self.mean.shape != self.std.shape:
            raise DimensionError("mean and std must have the same length")
        if np.any(self.std < 0):
            raise ValueError("std entries must be nonnegative")


def lorenz_initial_condition(K=1, std=2.5):
    """Benchmark initial-condition distribution: per attractor
    x1 ~ N(-6, std^2), x2 ~ N(-6, std^2), x3 ~ N(24, std^2)."""
    mean = np.tile([-6.0, -6.0, 24.0], K)
    return InitialConditionSpec(mean, np.full(3 * K, float(std)))


def sample_initial_condition(spec: InitialConditionSpec, rng):
    return spec.mean + spec.std * rng.standard_normal(spec.mean.size)


@dataclasses.dataclass
class Trajectory:
    """One rollout: observations y (T, m), inputs u (T, p) or None,
    optional true states x (T, n), and the RNG seed used."""

    y: np.ndarray
    u: np.ndarray | None = None
    x: np.ndarray | None = None
    seed: int | None = None

    @property
    def T(self):
        return self.y.shape[0]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.u is not None:
            self.u = np.asarray(self.u, dtype=float)
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
        if self.y.shape[0] < 2:
            raise DimensionError("trajectory length must be >= 2")
        for name, arr in (("u", self.u), ("x", self.x)):
            if arr is not None and arr.shape[0] != self.y.shape[0]:
                raise DimensionError(f"{name} length {arr.shape[0]} != T={self.y.shape[0]}")


@dataclasses.dataclass
class TrajectoryDataset:
    trajectories: list
    manifest: dict

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __post_init__(self):
        if self.trajectories:
            m = self.trajectories[0].y.shape[1]
            for tr in self.trajectories:
                if tr.y.shape[1] != m:
                    raise DimensionError("trajectories have inconsistent observation dimension")


def _rng_for(seed):
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def generate_trajectory(model: SystemModel, x0, u_seq=None, T=2, noise=None, seed=0):
    """Roll out x_{t+1} = f(x_t, u_t) + w_t, y_t = g(x_t, u_t) + v_t.

    Deterministic given all arguments; noise comes from a per-trajectory
    Philox stream keyed on ``seed``.
    """
    if T < 2:
        raise DimensionError("T must be >= 2")
    if noise is None:
        noise = GaussianNoise(np.zeros(model.n), np.zeros(model.m))
    rng = _rng_for(seed)
    x = np.empty((T, model.n))
    y = np.empty((T, model.m))
    x[0] = np.asarray(x0, dtype=float)
    w = noise.sigma_w * rng.standard_normal((T - 1, model.n))
    v = noise.sigma_v * rng.standard_normal((T, model.m))
    for t in range(T):
        ut = None if u_seq is None else u_seq[t]
        y[t] = model.observe(x[t], ut, t) + v[t]
        if t + 1 < T:
            x[t + 1] = model.dynamics(x[t], ut, t) + w[t]
            if not np.all(np.isfinite(x[t + 1])):
                raise DivergenceError(f"state diverged at step {t + 1}", t=t + 1)
    u = None if u_seq is None else np.asarray(u_seq, dtype=float)
    return Trajectory(y=y, u=u, x=x, seed=seed)


def generate_dataset(model, noise, ic_spec, num_trajectories, T, seed=0,
                     model_params=None, theta_true=None):
    """Simulate a batch of trajectories with independent seeded streams."""
    ss = np.random.SeedSequence(int(seed))
    trajs = []
    for i, child in enumerate(ss.spawn(num_trajectories)):
        traj_seed = int(child.generate_state(1, np.uint64)[0])
        ic_rng = _rng_for(traj_seed ^ 0x9E3779B97F4A7C15)
        x0 = sample_initial_condition(ic_spec, ic_rng)
        trajs.append(generate_trajectory(model, x0, None, T, noise, seed=traj_seed))
    manifest = {
        "model_id": getattr(model, "model_id", "custom"),
        "n": model.n,
        "m": model.m,
        "p": model.p,
        "T": int(T),
        "dt": model.dt,
        "num_trajectories": int(num_trajectories),
        "seed": int(seed),
        "sigma_w": noise.sigma_w.tolist(),
        "sigma_v": noise.sigma_v.tolist(),
        "ic_mean": ic_spec.mean.tolist(),
        "ic_std": ic_spec.std.tolist(),
    }
    if theta_true is not None:
        manifest["theta_true"] = np.asarray(theta_true, dtype=float).tolist()
    if model_params:
        manifest["model_params"] = dict(model_params)
    return TrajectoryDataset(trajs, manifest)


def _traj_path(directory, i):
    return os.path.join(directory, f"trajectory_{i:04d}.csv")


def write_dataset(dataset: TrajectoryDataset, directory):
    """Write one CSV per trajectory plus a JSON manifest.

    CSV columns: t, u_0.., y_0.., and x_0.. when true states are present.
    Values use 17 significant digits so the round trip is lossless.
    """
    os.makedirs(directory, exist_ok=True)
    man = dict(dataset.manifest)
    man["num_trajectories"] = len(dataset.trajectories)
    man["trajectory_seeds"] = [tr.seed for tr in dataset.trajectories]
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        json.dump(man, fh, indent=1)
    for i, tr in enumerate(dataset.trajectories):
        p = 0 if tr.u is None else tr.u.shape[1]
        m = tr.y.shape[1]
        cols = ["t"] + [f"u_{j}" for j in range(p)] + [f"y_{j}" for j in range(m)]
        blocks = [np.arange(tr.T)[:, None]]
        if tr.u is not None:
            blocks.append(tr.u)
        blocks.append(tr.y)
        if tr.x is not None:
            cols += [f"x_{j}" for j in range(tr.x.shape[1])]
            blocks.append(tr.x)
        data = np.hstack(blocks)
        with open(_traj_path(directory, i), "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_dataset(directory) -> TrajectoryDataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    man_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(man_path):
        raise DatasetError(f"missing manifest file {man_path}")
    try:
        with open(man_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {man_path}: {exc}") from exc
    for key in ("model_id", "n", "m", "p", "T", "dt", "num_trajectories"):
        if key not in manifest:
            raise DatasetError(f"manifest missing required key {key!r}")
    n, m, p, T = (manifest[k] for k in ("n", "m", "p", "T"))
    seeds = manifest.get("trajectory_seeds") or [None] * manifest["num_trajectories"]
    trajs = []
    for i in range(manifest["num_trajectories"]):
        path = _traj_path(directory, i)
        if not os.path.exists(path):
            raise DatasetError(f"missing trajectory file {path}")
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        expected = ["t"] + [f"u_{j}" for j in range(p)] + [f"y_{j}" for j in range(m)]
        for col in expected:
            if col not in header:
                raise DatasetError(f"{path}: missing column {col!r}")
        if len(rows) != T:
            raise DatasetError(f"{path}: manifest T={T} but file has {len(rows)} rows")
        data = np.array(rows, dtype=float)
        idx = {c: j for j, c in enumerate(header)}
        u = None
        if p:
            u = data[:, [idx[f"u_{j}"] for j in range(p)]]
        y = data[:, [idx[f"y_{j}"] for j in range(m)]]
        x = None
        if f"x_0" in idx:
            x = data[:, [idx[f"x_{j}"] for j in range(n)]]
        trajs.append(Trajectory(y=y, u=u, x=x, seed=seeds[i]))
    return TrajectoryDataset(trajs, manifest)


def model_from_manifest(manifest):
    """Rebuild the generating model (at theta_true) from a dataset manifest."""
    params = dict(manifest.get("model_params", {}))
    model = make_model(
        manifest["model_id"],
        dt=manifest["dt"],
        K=params.get("K", 1),
        obs_dim=params.get("obs_dim"),
        seed=params.get("model_seed", manifest.get("seed", 0)),
        h_scale=params.get("h_scale", 0.1),
        A=np.array(params["A"]) if "A" in params else None,
        B=np.array(params["B"]) if "B" in params else None,
        C=np.array(params["C"]) if "C" in params else None,
    )
    if "theta_true" in manifest:
        model = model.with_theta(np.array(manifest["theta_true"], dtype=float))
    return model
