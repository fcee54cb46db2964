"""Gray-box identification of partially observed nonlinear systems.

Certainty-equivalent EM as block coordinate ascent (batch nonlinear
least-squares smoothing + trust-region parameter learning), a particle EM
baseline (adapted particle filter, FFBSi, SAEM), a coupled-Lorenz benchmark
harness, and exact linear-Gaussian oracles for evaluation.
"""

from .driver import CeemConfig, FitReport, ceem_fit
from .learner import LearnerOptions, LearnResult, StateBatch, learn
from .models import (GaussianNoise, LorenzParams, LtiModel, Rk4Model, SystemModel,
                     lorenz_drift, make_model)
from .particle import ParticleEnsemble, PemConfig, pem_fit
from .simulate import (InitialConditionSpec, Trajectory, TrajectoryDataset,
                       generate_dataset, generate_trajectory, lorenz_initial_condition,
                       read_dataset, rk4_step, write_dataset)
from .smoother import SmootherOptions, SmoothResult, joint_objective, residual_stack, smooth

__version__ = "0.1.0"
