"""The four actor/critic configurations compared in the experiments."""

from __future__ import annotations

from .nets import InitScheme, Network, init_params, kan, mlp
from .numcore import Rng
from .policy import ActorCritic, RunningNorm
from .spline import SplineConfig

HIDDEN = 64

# arch name -> (actor hidden layers or "kan", critic hidden layers or "kan")
ARCHITECTURES = {
    "mlp_a2_c2": ((HIDDEN, HIDDEN), (HIDDEN, HIDDEN)),
    "mlp_a1_c2": ((HIDDEN,), (HIDDEN, HIDDEN)),
    "kan_actor_mlp_critic": ("kan", (HIDDEN, HIDDEN)),
    "full_kan": ("kan", "kan"),
}

LABELS = {
    "mlp_a2_c2": "MLP (a=2, c=2)",
    "mlp_a1_c2": "MLP (a=1, c=2)",
    "kan_actor_mlp_critic": "KAN (k=2, g=3)",
    "full_kan": "Full KAN (k=2, g=3)",
}


def _check_arch(arch: str):
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {', '.join(ARCHITECTURES)}")


def _build(spec, n_in: int, n_out: int, spline: SplineConfig) -> Network:
    if spec == "kan":
        return kan(n_in, (), n_out, spline)
    return mlp(n_in, spec, n_out)


def build_actor(arch: str, obs_dim: int, act_dim: int, spline: SplineConfig | None = None) -> Network:
    _check_arch(arch)
    return _build(ARCHITECTURES[arch][0], obs_dim, act_dim, spline or SplineConfig())


def build_critic(arch: str, obs_dim: int, spline: SplineConfig | None = None) -> Network:
    _check_arch(arch)
    return _build(ARCHITECTURES[arch][1], obs_dim, 1, spline or SplineConfig())


def build_actor_critic(
    arch: str,
    obs_dim: int,
    act_dim: int,
    spline: SplineConfig | None = None,
    rng: Rng | None = None,
    normalize_obs: bool = True,
    kan_sigma: float = 0.1,
    log_std_init: float = 0.0,
) -> ActorCritic:
    """Build and initialise an actor-critic pair.

    Dense layers use fan-in Gaussian init; the actor's output layer is scaled
    by 0.01 so the initial policy mean is near zero.
    """
    spline = spline or SplineConfig()
    rng = rng if rng is not None else Rng(0)
    actor = build_actor(arch, obs_dim, act_dim, spline)
    critic = build_critic(arch, obs_dim, spline)
    init_params(actor, rng.split("actor-init"), InitScheme(output_gain=0.01, kan_sigma=kan_sigma))
    init_params(critic, rng.split("critic-init"), InitScheme(output_gain=1.0, kan_sigma=kan_sigma))
    norm = RunningNorm(obs_dim) if normalize_obs else None
    return ActorCritic(actor, critic, log_std_init=log_std_init, obs_norm=norm)
