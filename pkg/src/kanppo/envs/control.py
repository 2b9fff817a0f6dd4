"""Closed-form control tasks with verifiable behaviour."""

from __future__ import annotations

import math

import numpy as np

from ..numcore import Rng
from .base import Env, EnvSpec


def wrap_angle(theta: float) -> float:
    """Map an angle to ``[-pi, pi)``."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


class Pendulum(Env):
    """Torque-driven pendulum, ``m l^2 theta'' = -m g l sin(theta) + u``.

    The angle is measured from the downward rest position, so the reward
    ``-(wrap(theta)^2 + 0.1 theta'^2 + 0.001 u^2)`` asks the controller to
    bring a randomly swinging pendulum to rest.  Semi-implicit Euler with
    ``dt = 0.05``; speed is clipped to ``max_speed``; torque to ``max_torque``.
    Observation ``(cos theta, sin theta, theta')``; 200-step episodes.
    Initial state: ``theta ~ U[-pi, pi]``, ``theta' ~ U[-1, 1]``.
    """

    def __init__(self, dt=0.05, g=10.0, m=1.0, l=1.0, max_torque=2.0, max_speed=8.0, horizon=200):
        self.dt, self.g, self.m, self.l = dt, g, m, l
        self.max_speed = max_speed
        self.spec = EnvSpec("pendulum", 3, 1, (-max_torque,), (max_torque,), horizon)
        self.theta = 0.0
        self.theta_dot = 0.0
        super().__init__()

    def set_state(self, theta: float, theta_dot: float):
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        self._t = 0
        self._active = True

    def energy(self) -> float:
        ml2 = self.m * self.l**2
        return 0.5 * ml2 * self.theta_dot**2 + self.m * self.g * self.l * (1.0 - math.cos(self.theta))

    def _reset_state(self, rng: Rng):
        self.theta = rng.uniform(low=-math.pi, high=math.pi)
        self.theta_dot = rng.uniform(low=-1.0, high=1.0)

    def _advance(self, u):
        torque = float(u[0])
        th, thd = self.theta, self.theta_dot
        reward = -(wrap_angle(th) ** 2 + 0.1 * thd**2 + 0.001 * torque**2)
        acc = (-self.m * self.g * self.l * math.sin(th) + torque) / (self.m * self.l**2)
        thd = min(max(thd + self.dt * acc, -self.max_speed), self.max_speed)
        self.theta = th + self.dt * thd
        self.theta_dot = thd
        return reward, False

    def _observe(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


class CartPole(Env):
    """Cart-pole with a continuous force, using the classic Barto/Sutton/Anderson equations.

    Action in ``[-1, 1]`` scales ``force_mag = 10 N``.  Semi-implicit Euler
    with ``dt = 0.02``.  +1 reward per step; terminates when
    ``|theta| > 12 deg`` or ``|x| > 2.4``; 500-step episodes.  State and
    observation ``(x, x', theta, theta')``, initialised ``U[-0.05, 0.05]``.
    """

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    half_length = 0.5
    force_mag = 10.0
    theta_limit = 12.0 * math.pi / 180.0
    x_limit = 2.4

    def __init__(self, dt=0.02, horizon=500):
        self.dt = dt
        self.spec = EnvSpec("cartpole", 4, 1, (-1.0,), (1.0,), horizon)
        self.state = np.zeros(4)
        super().__init__()

    def set_state(self, state):
        self.state = np.array(state, dtype=np.float64)
        self._t = 0
        self._active = True

    def accelerations(self, state, force: float):
        _, _, th, thd = state
        total = self.masscart + self.masspole
        pml = self.masspole * self.half_length
        cos, sin = math.cos(th), math.sin(th)
        temp = (force + pml * thd**2 * sin) / total
        th_acc = (self.gravity * sin - cos * temp) / (
            self.half_length * (4.0 / 3.0 - self.masspole * cos**2 / total)
        )
        x_acc = temp - pml * th_acc * cos / total
        return x_acc, th_acc

    def _reset_state(self, rng: Rng):
        self.state = rng.uniform(4, low=-0.05, high=0.05)

    def _advance(self, u):
        x, xd, th, thd = self.state
        x_acc, th_acc = self.accelerations(self.state, self.force_mag * float(u[0]))
        xd = xd + self.dt * x_acc
        x = x + self.dt * xd
        thd = thd + self.dt * th_acc
        th = th + self.dt * thd
        self.state = np.array([x, xd, th, thd])
        terminated = abs(x) > self.x_limit or abs(th) > self.theta_limit
        return 1.0, terminated

    def _observe(self):
        return self.state.copy()


# double integrator sampled at 0.1 s
LQR_A = np.array([[1.0, 0.1], [0.0, 1.0]])
LQR_B = np.array([[0.005], [0.1]])
LQR_Q = np.eye(2)
LQR_R = np.array([[0.1]])


class LinearQuadratic(Env):
    """Discrete-time linear system ``x' = A x + B u`` with reward ``-(x'Qx + u'Ru)``.

    Defaults to a sampled double integrator; 100-step episodes, initial state
    ``U[-1, 1]^n``, actions bounded to ``[-action_bound, action_bound]``.
    Observation is the state.
    """

    def __init__(self, A=LQR_A, B=LQR_B, Q=LQR_Q, R=LQR_R, horizon=100, action_bound=10.0):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        self.Q = np.asarray(Q, dtype=np.float64)
        self.R = np.asarray(R, dtype=np.float64)
        n, m = self.B.shape
        self.spec = EnvSpec("lqr", n, m, (-action_bound,) * m, (action_bound,) * m, horizon)
        self.x = np.zeros(n)
        super().__init__()

    def set_state(self, x):
        self.x = np.array(x, dtype=np.float64)
        self._t = 0
        self._active = True

    def _reset_state(self, rng: Rng):
        self.x = rng.uniform(self.spec.obs_dim, low=-1.0, high=1.0)

    def _advance(self, u):
        x = self.x
        reward = -(x @ self.Q @ x + u @ self.R @ u)
        self.x = self.A @ x + self.B @ u
        return reward, False

    def _observe(self):
        return self.x.copy()


def riccati_gain(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000):
    """Infinite-horizon discrete Riccati fixed point by value iteration.

    Returns ``(K, P)`` with the optimal feedback ``u = -K x``.
    """
    P = np.array(Q, dtype=np.float64)
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError("Riccati iteration did not converge")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, P


def finite_horizon_cost_matrix(A, B, Q, R, horizon: int) -> np.ndarray:
    """``P_0`` of the backward Riccati recursion: the optimal ``horizon``-step cost is ``x0' P_0 x0``."""
    P = np.zeros_like(Q)
    for _ in range(horizon):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ K
    return P


def linear_policy_cost_matrix(A, B, Q, R, K, horizon: int) -> np.ndarray:
    """``M`` such that ``horizon`` steps of ``u = -K x`` cost ``x0' M x0``."""
    Acl = A - B @ K
    W = Q + K.T @ R @ K
    M = np.zeros_like(Q)
    T = np.eye(A.shape[0])
    for _ in range(horizon):
        M += T.T @ W @ T
        T = Acl @ T
    return M
