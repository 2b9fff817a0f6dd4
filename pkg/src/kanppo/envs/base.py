from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import Rng


class EpisodeOver(RuntimeError):
    """``step`` was called without an active episode."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: tuple
    action_high: tuple
    max_episode_steps: int

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ValueError(f"{self.name}: dimensions must be >= 1, got obs {self.obs_dim}, act {self.act_dim}")
        if len(self.action_low) != self.act_dim or len(self.action_high) != self.act_dim:
            raise ValueError(f"{self.name}: action bounds must have {self.act_dim} entries")
        lo, hi = np.asarray(self.action_low, float), np.asarray(self.action_high, float)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo <= hi)):
            raise ValueError(f"{self.name}: action bounds must be finite with low <= high")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


class Env:
    """Episode bookkeeping shared by the built-in tasks.

    Subclasses set ``spec`` and implement ``_reset_state(rng)``,
    ``_advance(u) -> (reward, terminated)`` and ``_observe()``.  Actions are
    clipped to the spec bounds before ``_advance`` sees them; reaching
    ``max_episode_steps`` without termination reports ``truncated``.
    """

    spec: EnvSpec

    def __init__(self):
        self._active = False
        self._t = 0
        self._low = np.asarray(self.spec.action_low, dtype=np.float64)
        self._high = np.asarray(self.spec.action_high, dtype=np.float64)

    def reset(self, rng: Rng) -> np.ndarray:
        self._reset_state(rng)
        self._t = 0
        self._active = True
        return self._observe()

    def step(self, action) -> StepResult:
        if not self._active:
            raise EpisodeOver(f"{self.spec.name}: step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.spec.act_dim,):
            raise ValueError(f"{self.spec.name}: action must have {self.spec.act_dim} entries, got {a.shape[0]}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{self.spec.name}: non-finite action {a.tolist()}")
        u = np.clip(a, self._low, self._high)
        reward, terminated = self._advance(u)
        self._t += 1
        truncated = (not terminated) and self._t >= self.spec.max_episode_steps
        if terminated or truncated:
            self._active = False
        return StepResult(self._observe(), float(reward), bool(terminated), bool(truncated))

    def close(self):
        pass

    def _reset_state(self, rng: Rng):
        raise NotImplementedError

    def _advance(self, u: np.ndarray):
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError
