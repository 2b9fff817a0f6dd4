from .base import Env, EnvSpec, EpisodeOver, StepResult
from .bridge import BridgeEnv, BridgeError, BridgeProtocolError, BridgeTimeout, bridge_env
from .control import (
    CartPole,
    LinearQuadratic,
    Pendulum,
    finite_horizon_cost_matrix,
    linear_policy_cost_matrix,
    riccati_gain,
    wrap_angle,
)

# (obs_dim, act_dim) of the Gymnasium MuJoCo v4 tasks; used for parameter audits only
REFERENCE_ENV_DIMS = {
    "HalfCheetah-v4": (17, 6),
    "Walker2d-v4": (17, 6),
    "Hopper-v4": (11, 3),
    "InvertedPendulum-v4": (4, 1),
    "Swimmer-v4": (8, 2),
    "Pusher-v4": (23, 7),
}

BUILTIN_ENVS = {"pendulum": Pendulum, "cartpole": CartPole, "lqr": LinearQuadratic}


def reference_env_dims(name: str) -> tuple[int, int]:
    try:
        return REFERENCE_ENV_DIMS[name]
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; known: {', '.join(REFERENCE_ENV_DIMS)}") from None


def make_env(name: str, **kwargs) -> Env:
    try:
        cls = BUILTIN_ENVS[name]
    except KeyError:
        raise KeyError(f"unknown built-in environment {name!r}; known: {', '.join(BUILTIN_ENVS)}") from None
    return cls(**kwargs)


__all__ = [
    "Env",
    "EnvSpec",
    "EpisodeOver",
    "StepResult",
    "BridgeEnv",
    "BridgeError",
    "BridgeProtocolError",
    "BridgeTimeout",
    "bridge_env",
    "CartPole",
    "LinearQuadratic",
    "Pendulum",
    "REFERENCE_ENV_DIMS",
    "BUILTIN_ENVS",
    "reference_env_dims",
    "make_env",
    "riccati_gain",
    "finite_horizon_cost_matrix",
    "linear_policy_cost_matrix",
    "wrap_angle",
]
