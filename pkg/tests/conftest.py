import numpy as np
import pytest

from kanppo.envs import Env, EnvSpec


class ConstantEnv(Env):
    """Fixed observation and reward; truncates after ``horizon`` steps."""

    def __init__(self, obs_dim=3, act_dim=1, horizon=10, reward=1.0):
        self.spec = EnvSpec("constant", obs_dim, act_dim, (-1.0,) * act_dim, (1.0,) * act_dim, horizon)
        self.reward = reward
        super().__init__()

    def _reset_state(self, rng):
        pass

    def _advance(self, u):
        return self.reward, False

    def _observe(self):
        return np.full(self.spec.obs_dim, 0.5)


@pytest.fixture
def constant_env():
    return ConstantEnv()


# (criterion number, passed, detail) appended by test_acceptance
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {detail}")
