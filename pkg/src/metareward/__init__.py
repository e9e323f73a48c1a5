"""Meta-learned intrinsic rewards for gridworld agent lifetimes.

The package meta-trains a recurrent intrinsic reward function by
backpropagating the lifetime extrinsic return through truncated inner
policy-gradient updates, and evaluates the learned reward by training
fresh agents from scratch.
"""

from .config import ExperimentConfig, load_config
from .envs import Action, Domain, TaskSpec
from .meta import train

__all__ = ["Action", "Domain", "ExperimentConfig", "TaskSpec", "load_config", "train"]

__version__ = "0.1.0"
