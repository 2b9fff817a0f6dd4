"""Diagonal-Gaussian actor-critic over :mod:`kanppo.nets` trunks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nets import Network
from .numcore import Rng

__all__ = [
    "ActorCritic",
    "ActionSample",
    "RunningNorm",
    "NonFiniteOutput",
    "act_stochastic",
    "act_deterministic",
    "evaluate_actions",
    "gaussian_log_prob",
    "gaussian_entropy",
]

LOG_2PI = math.log(2.0 * math.pi)
ENTROPY_CONST = 0.5 * (LOG_2PI + 1.0)


class NonFiniteOutput(RuntimeError):
    """A network produced NaN or inf; training cannot continue."""


class RunningNorm:
    """Online mean/variance of observations (Chan et al. parallel update).

    ``normalize`` maps to ``clip((x - mean) / sqrt(var + eps), -clip, clip)``.
    Statistics only change through :meth:`update`.
    """

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip
        self.eps = eps

    def update(self, x: np.ndarray):
        x = np.atleast_2d(x)
        n = x.shape[0]
        bmean = x.mean(axis=0)
        bvar = x.var(axis=0)
        total = self.count + n
        delta = bmean - self.mean
        m2 = self.var * self.count + bvar * n + delta**2 * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + self.eps)
        return np.clip(z, -self.clip, self.clip)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "count": self.count,
            "clip": self.clip,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunningNorm":
        rn = cls(len(d["mean"]), clip=d["clip"], eps=d["eps"])
        rn.mean = np.array(d["mean"], dtype=np.float64)
        rn.var = np.array(d["var"], dtype=np.float64)
        rn.count = float(d["count"])
        return rn


class ActorCritic:
    """Gaussian policy head plus scalar value head.

    ``params`` is one flat vector laid out as ``[actor | critic | log_std]``;
    both networks and ``log_std`` are views into it, and ``grads`` mirrors it.
    ``obs_norm`` (optional) is applied by :meth:`preprocess` only; the act and
    evaluate functions take network-ready inputs.
    """

    def __init__(self, actor: Network, critic: Network, log_std_init: float = 0.0, obs_norm=None):
        if critic.n_out != 1:
            raise ValueError(f"critic must have one output, has {critic.n_out}")
        if actor.n_in != critic.n_in:
            raise ValueError(f"actor takes {actor.n_in} inputs but critic takes {critic.n_in}")
        self.actor = actor
        self.critic = critic
        na, nc = actor.param_count, critic.param_count
        params = np.concatenate([actor.params, critic.params, np.full(actor.n_out, float(log_std_init))])
        self._split = (na, na + nc)
        self.params = params
        actor.bind(params[:na])
        critic.bind(params[na : na + nc])
        self.log_std = params[na + nc :]
        self.grads = np.zeros_like(params)
        self.obs_norm = obs_norm

    @property
    def obs_dim(self) -> int:
        return self.actor.n_in

    @property
    def act_dim(self) -> int:
        return self.actor.n_out

    def grad_views(self):
        a, c = self._split
        return self.grads[:a], self.grads[a:c], self.grads[c:]

    def preprocess(self, obs, update: bool = False) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if self.obs_norm is None:
            return obs
        if update:
            self.obs_norm.update(obs)
        return self.obs_norm.normalize(obs)

    def value(self, x) -> float:
        return float(self.critic(x)[0])

    def backward(self, cache, grad_log_prob, grad_entropy, grad_value):
        """Accumulate gradients of a loss given its sensitivities to the
        per-sample log-probabilities, entropies and values from
        :func:`evaluate_actions`."""
        acache, ccache, z, std = cache
        ga, gc, gs = self.grad_views()
        glp = np.asarray(grad_log_prob, dtype=np.float64)
        # d logp / d mean = z / std ; d logp / d log_std = z^2 - 1 ; d ent / d log_std = 1
        self.actor.backward(acache, glp[:, None] * z / std, ga, need_input_grad=False)
        gs += glp @ (z * z - 1.0) + np.sum(grad_entropy)
        self.critic.backward(ccache, np.asarray(grad_value, dtype=np.float64)[:, None], gc, need_input_grad=False)

    def to_dict(self) -> dict:
        return {
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "log_std": self.log_std.tolist(),
            "obs_norm": None if self.obs_norm is None else self.obs_norm.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorCritic":
        norm = None if d.get("obs_norm") is None else RunningNorm.from_dict(d["obs_norm"])
        ac = cls(Network.from_dict(d["actor"]), Network.from_dict(d["critic"]), obs_norm=norm)
        ac.log_std[:] = np.array(d["log_std"], dtype=np.float64)
        return ac


@dataclass
class ActionSample:
    action: np.ndarray
    log_prob: float
    value: float


def gaussian_log_prob(mean, log_std, action):
    z = (np.asarray(action) - mean) / np.exp(log_std)
    return np.sum(-0.5 * LOG_2PI - log_std - 0.5 * z * z, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(ENTROPY_CONST + np.asarray(log_std)))


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteOutput(f"{name} produced non-finite output: {np.asarray(arr).tolist()}")


def _check_obs(ac: ActorCritic, obs):
    if obs.shape[-1] != ac.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} entries, policy expects {ac.obs_dim}")


def act_stochastic(ac: ActorCritic, obs, rng: Rng) -> ActionSample:
    obs = np.asarray(obs, dtype=np.float64)
    _check_obs(ac, obs)
    mean = ac.actor(obs)
    value = ac.value(obs)
    _check("actor", mean)
    _check("critic", value)
    action = mean + np.exp(ac.log_std) * rng.normal(ac.act_dim)
    return ActionSample(action, float(gaussian_log_prob(mean, ac.log_std, action)), value)


def act_deterministic(ac: ActorCritic, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    _check_obs(ac, obs)
    mean = ac.actor(obs)
    _check("actor", mean)
    return mean


def evaluate_actions(ac: ActorCritic, obs, actions, return_cache: bool = False):
    """Per-sample log-densities, entropies and critic values for a batch.

    With ``return_cache`` a fourth element is returned for
    :meth:`ActorCritic.backward`.
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs.ndim != 2 or actions.ndim != 2 or len(obs) != len(actions):
        raise ValueError(f"batch shapes disagree: obs {obs.shape}, actions {actions.shape}")
    _check_obs(ac, obs)
    if actions.shape[1] != ac.act_dim:
        raise ValueError(f"actions have {actions.shape[1]} entries, policy emits {ac.act_dim}")
    mean, acache = ac.actor.forward(obs)
    values, ccache = ac.critic.forward(obs)
    std = np.exp(ac.log_std)
    z = (actions - mean) / std
    log_probs = np.sum(-0.5 * LOG_2PI - ac.log_std - 0.5 * z * z, axis=1)
    entropies = np.full(len(obs), gaussian_entropy(ac.log_std))
    values = values[:, 0]
    if return_cache:
        return log_probs, entropies, values, (acache, ccache, z, std)
    return log_probs, entropies, values
