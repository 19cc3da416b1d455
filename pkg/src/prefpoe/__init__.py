"""Advantage-guided preference learning fused with PPO by a product of experts."""

__version__ = "0.1.0"

from .config import TrainConfig
from .distributions import Categorical, DiagGaussian, categorical_poe_fuse, gaussian_poe_fuse, poe_fuse
from .envs import make_env
from .losses import LossWeights
from .networks import ActionSpace, AgentNet, load_checkpoint, save_checkpoint
from .trainer import EvalStats, TrainResult, evaluate, train

__all__ = [
    "__version__",
    "ActionSpace",
    "AgentNet",
    "Categorical",
    "DiagGaussian",
    "EvalStats",
    "LossWeights",
    "PrefPoEAgent",
    "TrainConfig",
    "TrainResult",
    "categorical_poe_fuse",
    "evaluate",
    "gaussian_poe_fuse",
    "load_checkpoint",
    "make_env",
    "poe_fuse",
    "save_checkpoint",
    "train",
]


def __getattr__(name):
    # keeps scikit-learn off the import path of the CLI and trainer
    if name == "PrefPoEAgent":
        from .estimator import PrefPoEAgent

        return PrefPoEAgent
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
