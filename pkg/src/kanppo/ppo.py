"""Clipped-surrogate PPO with GAE, Adam and noise-free evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .numcore import Rng
from .policy import ActorCritic, NonFiniteOutput, act_deterministic, act_stochastic, evaluate_actions

__all__ = [
    "PpoConfig",
    "RolloutBuffer",
    "AdamState",
    "RunRecord",
    "EvalResult",
    "TrainingAborted",
    "compute_gae",
    "gae_direct_sum",
    "normalize_advantages",
    "clipped_surrogate",
    "combined_loss",
    "ppo_loss_and_grad",
    "clip_grad_norm",
    "adam_step",
    "train",
    "evaluate",
]


@dataclass
class PpoConfig:
    lr: float = 3e-4
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    gamma: float = 0.99
    lam: float = 0.95
    rollout_T: int = 2048
    c1: float = 0.5
    c2: float = 0.0
    # None disables gradient clipping
    max_grad_norm: float | None = 0.5
    normalize_advantages: bool = True
    normalize_obs: bool = True
    total_steps: int = 1_000_000
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        problems = []
        if not 0 < self.gamma <= 1:
            problems.append(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.lam <= 1:
            problems.append(f"lam must be in [0, 1], got {self.lam}")
        if not 0 < self.clip_eps < 1 and self.clip_eps != math.inf:
            problems.append(f"clip_eps must be in (0, 1) (or inf to disable), got {self.clip_eps}")
        if self.rollout_T < 1:
            problems.append(f"rollout_T must be >= 1, got {self.rollout_T}")
        if not 1 <= self.minibatch <= self.rollout_T:
            problems.append(f"minibatch must be in [1, rollout_T={self.rollout_T}], got {self.minibatch}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if self.total_steps < self.rollout_T:
            problems.append(f"total_steps ({self.total_steps}) must be >= rollout_T ({self.rollout_T})")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            problems.append(f"max_grad_norm must be positive or null, got {self.max_grad_norm}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def updates(self) -> int:
        return self.total_steps // self.rollout_T


class RolloutBuffer:
    """Fixed-capacity on-policy storage.

    ``dones[t]`` cuts the advantage recursion after step ``t``.  For a
    time-limit truncation the caller folds ``gamma * V(s_final)`` into the
    stored reward and marks the step done, so bootstrapping survives the cut.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.log_probs = np.zeros(capacity)
        self.bootstrap_value: float | None = None
        self.size = 0

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(self, obs, action, reward, done, value, log_prob):
        if self.full:
            raise IndexError(f"rollout buffer is full ({self.capacity} steps)")
        t = self.size
        self.obs[t] = obs
        self.actions[t] = action
        self.rewards[t] = reward
        self.dones[t] = float(done)
        self.values[t] = value
        self.log_probs[t] = log_prob
        self.size += 1

    def clear(self):
        self.size = 0
        self.bootstrap_value = None


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """Backward recursion ``A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}``.

    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    n = buffer.size
    if n == 0:
        raise ValueError("cannot compute advantages of an empty buffer")
    if buffer.bootstrap_value is None:
        raise ValueError("buffer has no bootstrap value for the state after its last step")
    r, v, d = buffer.rewards[:n], buffer.values[:n], buffer.dones[:n]
    next_v = np.append(v[1:], buffer.bootstrap_value)
    nonterminal = 1.0 - d
    delta = r + gamma * next_v * nonterminal - v
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = delta[t] + gamma * lam * nonterminal[t] * running
        adv[t] = running
    return adv, adv + v


def gae_direct_sum(rewards, values, dones, bootstrap_value, gamma, lam):
    """Advantages as the explicit truncated sum ``sum_l (gamma*lam)^l delta_{t+l}``.

    The sum for step ``t`` stops after the first done at or after ``t``.
    Quadratic time; kept as an independent reference for :func:`compute_gae`.
    """
    n = len(rewards)
    vals = list(values) + [bootstrap_value]
    out = np.zeros(n)
    for t in range(n):
        total, weight = 0.0, 1.0
        for s in range(t, n):
            nxt = 0.0 if dones[s] else vals[s + 1]
            total += weight * (rewards[s] + gamma * nxt - vals[s])
            if dones[s]:
                break
            weight *= gamma * lam
        out[t] = total
    return out


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_surrogate(ratio, adv, eps: float) -> float:
    """Negated mean of ``min(r*A, clip(r, 1-eps, 1+eps)*A)``, for minimisation."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if ratio.shape != adv.shape:
        raise ValueError(f"ratio has shape {ratio.shape} but advantages have shape {adv.shape}")
    obj = np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    return -float(obj.mean())


def combined_loss(policy_loss: float, value_loss: float, entropy: float, c1: float, c2: float) -> float:
    """``policy_loss + c1*value_loss - c2*entropy``, where ``policy_loss`` is already negated."""
    return policy_loss + c1 * value_loss - c2 * entropy


def ppo_loss_and_grad(ac: ActorCritic, batch: dict, cfg: PpoConfig, accumulate: bool = True):
    """Combined loss on one minibatch; gradients are added to ``ac.grads``.

    ``batch`` holds ``obs``, ``actions``, ``log_probs`` (behaviour policy),
    ``advantages`` and ``returns``.  Returns ``(loss, stats)``.
    """
    adv = batch["advantages"]
    n = len(adv)
    log_probs, entropies, values, cache = evaluate_actions(ac, batch["obs"], batch["actions"], return_cache=True)
    ratio = np.exp(log_probs - batch["log_probs"])
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    policy_loss = clipped_surrogate(ratio, adv, cfg.clip_eps)
    err = values - batch["returns"]
    value_loss = float(np.mean(err * err))
    entropy = float(np.mean(entropies))
    loss = combined_loss(policy_loss, value_loss, entropy, cfg.c1, cfg.c2)
    if accumulate:
        # the min picks the unclipped term whenever it is not larger
        active = unclipped <= clipped
        g_logp = -np.where(active, unclipped, 0.0) / n
        g_ent = np.full(n, -cfg.c2 / n)
        g_val = cfg.c1 * 2.0 * err / n
        ac.backward(cache, g_logp, g_ent, g_val)
    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
    }
    return loss, stats


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> float:
    """Scale ``grads`` in place so its 2-norm is at most ``max_norm``; returns the norm before scaling."""
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        grads *= max_norm / (norm + 1e-12)
    return norm


@dataclass
class AdamState:
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"layout mismatch: params {params.shape}, grads {grads.shape}, optimizer state {state.m.shape}"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class RunRecord:
    """One log row per rollout/update cycle."""

    seed: int
    steps: int
    update: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    wall_ms: float = 0.0

    # wall-clock time is written to a separate timing file so logs stay reproducible
    CSV_COLUMNS = ("seed", "steps", "update", "mean_return", "policy_loss", "value_loss", "entropy")

    def csv_row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, c) for c in self.CSV_COLUMNS)]


class TrainingAborted(RuntimeError):
    """Training hit a non-finite value.  ``ac`` has been restored to ``last_good``."""

    def __init__(self, message: str, update: int, last_good: np.ndarray):
        super().__init__(message)
        self.update = update
        self.last_good = last_good


def train(
    ac: ActorCritic,
    env,
    cfg: PpoConfig,
    rng: Rng,
    log=None,
    seed: int = 0,
    on_update=None,
    checkpoint=None,
) -> ActorCritic:
    """Run ``cfg.updates`` collect/optimise cycles of PPO.

    ``log(record)`` receives a :class:`RunRecord` after each update;
    ``checkpoint(ac, update)`` runs every ``cfg.checkpoint_every`` updates;
    ``on_update(ac, record)`` may return True to stop early.
    """
    if env.spec.obs_dim != ac.obs_dim or env.spec.act_dim != ac.act_dim:
        raise ValueError(
            f"environment has obs_dim={env.spec.obs_dim}, act_dim={env.spec.act_dim} but policy has "
            f"obs_dim={ac.obs_dim}, act_dim={ac.act_dim}"
        )
    env_rng = rng.split("env")
    act_rng = rng.split("action")
    batch_rng = rng.split("minibatch")
    buffer = RolloutBuffer(cfg.rollout_T, ac.obs_dim, ac.act_dim)
    adam = AdamState(ac.params.size)
    update_obs = cfg.normalize_obs and ac.obs_norm is not None

    obs = env.reset(env_rng)
    ep_return = 0.0
    steps = 0
    last_good = ac.params.copy()
    for update in range(cfg.updates):
        t0 = time.perf_counter()
        finished = []
        buffer.clear()
        try:
            for _ in range(cfg.rollout_T):
                x = ac.preprocess(obs, update=update_obs)
                sample = act_stochastic(ac, x, act_rng)
                res = env.step(sample.action)
                steps += 1
                ep_return += res.reward
                reward = res.reward
                if res.truncated and not res.terminated:
                    reward += cfg.gamma * ac.value(ac.preprocess(res.obs))
                buffer.add(x, sample.action, reward, res.done, sample.value, sample.log_prob)
                if res.done:
                    finished.append(ep_return)
                    ep_return = 0.0
                    obs = env.reset(env_rng)
                else:
                    obs = res.obs
            buffer.bootstrap_value = ac.value(ac.preprocess(obs))
        except NonFiniteOutput as exc:
            ac.params[:] = last_good
            raise TrainingAborted(f"update {update}: {exc}", update, last_good) from exc

        adv, returns = compute_gae(buffer, cfg.gamma, cfg.lam)
        if cfg.normalize_advantages:
            adv = normalize_advantages(adv)
        totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        n_batches = 0
        for _ in range(cfg.epochs):
            perm = batch_rng.permutation(cfg.rollout_T)
            for start in range(0, cfg.rollout_T, cfg.minibatch):
                idx = perm[start : start + cfg.minibatch]
                batch = {
                    "obs": buffer.obs[idx],
                    "actions": buffer.actions[idx],
                    "log_probs": buffer.log_probs[idx],
                    "advantages": adv[idx],
                    "returns": returns[idx],
                }
                ac.grads[:] = 0.0
                loss, stats = ppo_loss_and_grad(ac, batch, cfg)
                if not (math.isfinite(loss) and np.all(np.isfinite(ac.grads))):
                    ac.params[:] = last_good
                    raise TrainingAborted(f"update {update}: non-finite loss {loss}", update, last_good)
                if cfg.max_grad_norm is not None:
                    clip_grad_norm(ac.grads, cfg.max_grad_norm)
                adam_step(ac.params, ac.grads, adam, cfg.lr)
                for key in totals:
                    totals[key] += stats[key]
                n_batches += 1
        if not np.all(np.isfinite(ac.params)):
            ac.params[:] = last_good
            raise TrainingAborted(f"update {update}: non-finite parameters", update, last_good)
        last_good = ac.params.copy()

        record = RunRecord(
            seed=seed,
            steps=steps,
            update=update + 1,
            mean_return=float(np.mean(finished)) if finished else math.nan,
            policy_loss=totals["policy_loss"] / n_batches,
            value_loss=totals["value_loss"] / n_batches,
            entropy=totals["entropy"] / n_batches,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        )
        if log is not None:
            log(record)
        if checkpoint is not None and cfg.checkpoint_every and (update + 1) % cfg.checkpoint_every == 0:
            checkpoint(ac, update + 1)
        if on_update is not None and on_update(ac, record):
            break
    return ac


@dataclass
class EvalResult:
    returns: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        return float(np.std(self.returns))

    @property
    def min(self) -> float:
        return float(np.min(self.returns))

    @property
    def max(self) -> float:
        return float(np.max(self.returns))

    @property
    def episodes(self) -> int:
        return len(self.returns)

    def summary(self) -> dict:
        return {"episodes": self.episodes, "mean": self.mean, "std": self.std, "min": self.min, "max": self.max}


def evaluate(ac: ActorCritic, env, episodes: int = 100, rng: Rng | None = None) -> EvalResult:
    """Mean-action rollouts; observation statistics stay frozen."""
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    rng = rng if rng is not None else Rng(0)
    returns = np.zeros(episodes)
    for ep in range(episodes):
        obs = env.reset(rng)
        total = 0.0
        while True:
            res = env.step(act_deterministic(ac, ac.preprocess(obs)))
            total += res.reward
            if res.done:
                break
            obs = res.obs
        returns[ep] = total
    return EvalResult(returns)
