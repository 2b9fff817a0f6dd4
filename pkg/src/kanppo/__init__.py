"""PPO with KAN and MLP actor-critics, implemented on numpy."""

from .arch import ARCHITECTURES, build_actor_critic
from .nets import Network, count_params, kan, mlp
from .numcore import Rng
from .ppo import PpoConfig, evaluate, train
from .spline import SplineConfig

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "Network",
    "PpoConfig",
    "Rng",
    "SplineConfig",
    "build_actor_critic",
    "count_params",
    "evaluate",
    "kan",
    "mlp",
    "train",
]
