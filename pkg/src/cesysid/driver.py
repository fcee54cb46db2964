"""Block coordinate-ascent driver: alternate state smoothing and parameter learning.

One epoch smooths every trajectory against the current parameters (soft
trust region around the previous state iterate), then updates the parameters
with states fixed.  The joint objective never decreases across epochs; the
loop stops once the epoch-over-epoch improvement falls to the tolerance.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from .learner import LearnerOptions, StateBatch, learn
from .models import GaussianNoise, SystemModel
from .simulate import TrajectoryDataset
from .smoother import SmootherOptions, default_state_init, joint_objective, smooth

__all__ = ["CeemConfig", "EpochRecord", "FitReport", "ceem_fit",
           "write_history", "write_params", "read_params"]


@dataclasses.dataclass
class CeemConfig:
    rho_x: float = 0.5
    rho_theta: float = 0.5
    tol: float | None = None          # default: 1e-6 * total observation count
    max_epochs: int = 50
    smoother: SmootherOptions | None = None
    learner: LearnerOptions | None = None
    init_mode: str = "obs_lift"       # or "zeros"

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.smoother is None:
            self.smoother = SmootherOptions(rho_x=self.rho_x)
        else:
            self.smoother.rho_x = self.rho_x
        if self.learner is None:
            self.learner = LearnerOptions(rho_theta=self.rho_theta)
        else:
            self.learner.rho_theta = self.rho_theta


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    objective: float
    theta: np.ndarray
    dyn_error: float = float("nan")
    wall_seconds: float = 0.0


@dataclasses.dataclass
class FitReport:
    records: list
    theta: np.ndarray
    states: list
    termination: str

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])


def _batch_objective(model, noise, dataset, states):
    total = 0.0
    for tr, x in zip(dataset.trajectories, states):
        total += joint_objective(model, noise, tr.y, tr.u, x).total
    return total


def ceem_fit(dataset: TrajectoryDataset, model: SystemModel, noise: GaussianNoise,
             config: CeemConfig, eval_fn=None, x_init=None) -> FitReport:
    """Fit model parameters to a trajectory batch by certainty-equivalent EM.

    ``eval_fn(theta)``, when given, is logged per epoch (used for the
    dynamics-error metric when the true parameters are known).  ``x_init``
    optionally overrides the epoch-1 state initialization.
    """
    if not dataset.trajectories:
        raise ValueError("dataset is empty")
    theta = model.theta
    if not np.all(np.isfinite(theta)):
        raise ValueError("initial theta must be finite")
    tol = config.tol
    if tol is None:
        tol = 1e-6 * sum(tr.y.size for tr in dataset.trajectories)
    if x_init is None:
        states = [default_state_init(model, tr.y, config.init_mode, noise=noise, u=tr.u)
                  for tr in dataset.trajectories]
    else:
        states = [np.array(x, dtype=float) for x in x_init]

    records = []
    termination = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        cur = model.with_theta(theta)
        j_before = _batch_objective(cur, noise, dataset, states)
        new_states = []
        for tr, x_prev in zip(dataset.trajectories, states):
            res = smooth(cur, noise, tr.y, tr.u, x_prev, config.smoother)
            new_states.append(res.x)
        states = new_states
        batches = [StateBatch(1.0, x, tr.y, tr.u)
                   for tr, x in zip(dataset.trajectories, states)]
        lres = learn(cur, noise, batches, theta, config.learner)
        theta = lres.theta
        j_after = _batch_objective(model.with_theta(theta), noise, dataset, states)
        wall = time.perf_counter() - t0
        eps = float(eval_fn(theta)) if eval_fn is not None else float("nan")
        records.append(EpochRecord(epoch, j_after, theta.copy(), eps, wall))
        if j_after - j_before <= tol:
            termination = "tol"
            break
    return FitReport(records, theta.copy(), states, termination)


HISTORY_HEADER = "epoch,J,eps,wall_s"


def write_history(report: FitReport, path):
    """Persist the per-epoch history as CSV: epoch, J, eps, wall_s, theta_*."""
    q = report.theta.size
    header = HISTORY_HEADER + "".join(f",theta_{i}" for i in range(q))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in report.records:
            row = [str(r.epoch), f"{r.objective:.17g}", f"{r.dyn_error:.17g}",
                   f"{r.wall_seconds:.6f}"]
            row += [f"{v:.17g}" for v in r.theta]
            fh.write(",".join(row) + "\n")


def write_params(theta, path, layout=None, termination=None):
    """Final parameters as a small structured-text (JSON) file."""
    import json

    doc = {"theta": np.asarray(theta, dtype=float).tolist()}
    if layout:
        doc["layout"] = {k: [s.start, s.stop] for k, s in layout.items()}
    if termination:
        doc["termination"] = termination
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def read_params(path):
    import json

    with open(path) as fh:
        doc = json.load(fh)
    return np.array(doc["theta"], dtype=float)
