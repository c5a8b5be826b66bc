"""Physics-informed diffusion reconstruction of chaotic trajectories.

Reconstructs chaotic ODE trajectories and their parameters from sparse,
noisy observations by steering a trained denoising diffusion sampler
with a differentiable one-step Dormand-Prince residual, alongside an
ensemble Kalman filter baseline and a Rosenstein Lyapunov validator.
"""
from .backend import kernel_backend
from .dataset import (
    ObservationSet,
    TrajectorySet,
    generate_corpus,
    load_observations,
    load_trajectories,
    make_observations,
    save_observations,
    save_trajectories,
)
from .enkf import EnkfConfig, run_filter
from .errors import PidmError
from .experiment import ExperimentConfig, ablation_sweep, run_experiment
from .guidance import GuidanceConfig, SampleOutcome, sample
from .integrator import DP45, dp45_rollout, dp45_step
from .lyapunov import EmbeddingConfig, LyapunovEstimate, rosenstein_mle
from .metrics import mape, rmse, wilcoxon_signed_rank
from .presets import PRESETS, get_preset
from .systems import SYSTEMS, get_system
from .training import DenoiserModel, TrainConfig, train_denoiser

__version__ = "0.1.0"

__all__ = [
    "DP45",
    "DenoiserModel",
    "EmbeddingConfig",
    "EnkfConfig",
    "ExperimentConfig",
    "GuidanceConfig",
    "LyapunovEstimate",
    "ObservationSet",
    "PRESETS",
    "PidmError",
    "SYSTEMS",
    "SampleOutcome",
    "TrainConfig",
    "TrajectorySet",
    "__version__",
    "ablation_sweep",
    "dp45_rollout",
    "dp45_step",
    "generate_corpus",
    "get_preset",
    "get_system",
    "kernel_backend",
    "load_observations",
    "load_trajectories",
    "make_observations",
    "mape",
    "rmse",
    "rosenstein_mle",
    "run_experiment",
    "run_filter",
    "sample",
    "save_observations",
    "save_trajectories",
    "train_denoiser",
    "wilcoxon_signed_rank",
]
