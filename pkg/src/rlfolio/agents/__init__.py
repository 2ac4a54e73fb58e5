from .distributions import (
    dirichlet_log_density,
    dirichlet_sample,
    hierarchical_action,
    hierarchical_log_density,
)
from .encoders import EncoderSpec, build_encoder
from .policies import PolicySpec, build_policy
from .replay import ReplayBuffer, Transition
from .sac import SACAgent, SACConfig, TrainingTrace, evaluate, soft_update, train_epochs

__all__ = [
    "EncoderSpec", "PolicySpec", "ReplayBuffer", "SACAgent", "SACConfig",
    "TrainingTrace", "Transition", "build_encoder", "build_policy",
    "dirichlet_log_density", "dirichlet_sample", "evaluate",
    "hierarchical_action", "hierarchical_log_density", "soft_update",
    "train_epochs",
]
