import math

import numpy as np
import pytest

from conftest import ConstantEnv
from gradcheck import numeric_grad, relative_error
from kanppo import ppo
from kanppo.arch import ARCHITECTURES, build_actor_critic
from kanppo.envs import make_env
from kanppo.numcore import Rng
from kanppo.policy import act_stochastic
from kanppo.ppo import (
    AdamState,
    PpoConfig,
    RolloutBuffer,
    TrainingAborted,
    adam_step,
    clip_grad_norm,
    clipped_surrogate,
    combined_loss,
    compute_gae,
    evaluate,
    gae_direct_sum,
    normalize_advantages,
    ppo_loss_and_grad,
    train,
)


def filled_buffer(rewards, values, dones, bootstrap):
    buf = RolloutBuffer(len(rewards), 1, 1)
    for r, v, d in zip(rewards, values, dones):
        buf.add([0.0], [0.0], r, d, v, 0.0)
    buf.bootstrap_value = bootstrap
    return buf


def frozen_minibatch(ac, rng, n=64):
    obs = rng.uniform((n, ac.obs_dim), low=-1.1, high=1.1)
    samples = [act_stochastic(ac, o, rng) for o in obs]
    # perturb behaviour log-probs so ratios fall on both sides of the clip range
    return {
        "obs": obs,
        "actions": np.array([s.action for s in samples]),
        "log_probs": np.array([s.log_prob for s in samples]) + rng.uniform(n, low=-0.4, high=0.4),
        "advantages": rng.normal(n),
        "returns": rng.normal(n),
    }


class TestGae:
    def test_lambda_zero_is_td_error(self):
        r, v, d = [1.0, -0.5, 2.0, 0.3], [0.2, 0.1, -0.3, 0.4], [0, 0, 1, 0]
        adv, _ = compute_gae(filled_buffer(r, v, d, 0.7), 0.9, 0.0)
        nxt = [0.1, -0.3, 0.0, 0.7]
        np.testing.assert_allclose(adv, [r[t] + 0.9 * nxt[t] - v[t] for t in range(4)], rtol=1e-15)

    def test_three_step_direct_sum(self):
        gamma, lam = 0.99, 0.95
        adv, returns = compute_gae(filled_buffer([1, 1, 1], [0, 0, 0], [0, 0, 0], 0.0), gamma, lam)
        # every delta is 1, so A_t = sum_{l < 3-t} (gamma*lam)^l
        expected = [sum((gamma * lam) ** l for l in range(3 - t)) for t in range(3)]
        np.testing.assert_allclose(adv, expected, rtol=1e-15)
        np.testing.assert_allclose(returns, adv)

    def test_done_truncates(self):
        adv, _ = compute_gae(filled_buffer([1.0, 3.0, 5.0], [0.5, 0.25, 9.0], [0, 1, 0], 4.0), 0.99, 0.95)
        assert adv[1] == 3.0 - 0.25

    def test_empty_and_missing_bootstrap(self):
        with pytest.raises(ValueError, match="empty"):
            compute_gae(RolloutBuffer(4, 1, 1), 0.99, 0.95)
        buf = filled_buffer([1.0], [0.0], [0], 0.0)
        buf.bootstrap_value = None
        with pytest.raises(ValueError, match="bootstrap"):
            compute_gae(buf, 0.99, 0.95)

    def test_random_buffers_match_direct_sum(self):
        rng = Rng(2024)
        for _ in range(200):
            n = int(rng.uniform(low=1, high=65))
            r, v = rng.normal(n), rng.normal(n)
            d = rng.uniform(n) < rng.uniform()
            boot = rng.normal()
            gamma, lam = rng.uniform(low=0.5, high=1.0), rng.uniform()
            adv, _ = compute_gae(filled_buffer(r, v, d, boot), gamma, lam)
            ref = gae_direct_sum(r, v, d, boot, gamma, lam)
            assert np.max(np.abs(adv - ref)) <= 1e-10

    def test_buffer_capacity(self):
        buf = filled_buffer([1.0], [0.0], [0], 0.0)
        assert buf.full
        with pytest.raises(IndexError):
            buf.add([0.0], [0.0], 0, 0, 0, 0)
        buf.clear()
        assert buf.size == 0 and buf.bootstrap_value is None

    def test_normalized_advantages(self):
        adv = normalize_advantages(Rng(3).normal(2048) * 7 + 3)
        assert abs(adv.mean()) < 1e-10
        assert abs(adv.std() - 1) < 1e-6


class TestClippedSurrogate:
    def test_ratio_one_gives_mean_advantage(self):
        adv = np.array([0.3, -1.2, 2.0])
        assert clipped_surrogate(np.ones(3), adv, 0.2) == pytest.approx(-adv.mean(), abs=1e-15)

    @pytest.mark.parametrize(
        "ratio, adv, objective",
        [
            (1.5, 2.0, 2.4),    # positive advantage, ratio above 1+eps: clipped to 1.2*A
            (0.5, -1.0, -0.8),  # negative advantage, ratio below 1-eps: min picks 0.8*A
            (0.5, 2.0, 1.0),    # positive advantage, ratio below 1-eps: unclipped r*A is smaller
            (1.5, -1.0, -1.5),  # negative advantage, ratio above 1+eps: unclipped r*A is smaller
        ],
    )
    def test_clip_cases(self, ratio, adv, objective):
        assert clipped_surrogate(np.array([ratio]), np.array([adv]), 0.2) == -objective

    def test_no_clip_with_infinite_eps(self):
        rng = Rng(4)
        ratio, adv = np.exp(rng.normal(50)), rng.normal(50)
        assert clipped_surrogate(ratio, adv, math.inf) == -float(np.mean(ratio * adv))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            clipped_surrogate(np.ones(3), np.ones(2), 0.2)


class TestCombinedLoss:
    def test_policy_only(self):
        assert combined_loss(0.7, 12.0, 3.0, 0.0, 0.0) == 0.7

    def test_weights(self):
        assert combined_loss(0.5, 2.0, 1.5, 0.5, 0.1) == pytest.approx(0.5 + 1.0 - 0.15)

    def test_perfect_critic(self):
        ac = build_actor_critic("mlp_a1_c2", 3, 1, rng=Rng(0), normalize_obs=False)
        batch = frozen_minibatch(ac, Rng(1), n=16)
        batch["returns"] = ac.critic(batch["obs"])[:, 0]
        _, stats = ppo_loss_and_grad(ac, batch, PpoConfig(), accumulate=False)
        assert stats["value_loss"] == 0.0

    @pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
    def test_gradient_matches_finite_differences(self, arch):
        cfg = PpoConfig(c1=0.5, c2=0.01)
        ac = build_actor_critic(arch, 4, 2, rng=Rng(5), normalize_obs=False)
        ac.params[:] += Rng(6).normal(ac.params.size, std=0.05)
        batch = frozen_minibatch(ac, Rng(7), n=32)
        ac.grads[:] = 0
        ppo_loss_and_grad(ac, batch, cfg)
        numeric = numeric_grad(lambda: ppo_loss_and_grad(ac, batch, cfg, accumulate=False)[0], ac.params)
        assert relative_error(ac.grads, numeric).max() < 1e-5


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0, 3.0])
        before = p.copy()
        adam_step(p, np.zeros(3), AdamState(3), 0.1)
        np.testing.assert_array_equal(p, before)

    def test_first_step_is_signed_lr(self):
        p = np.zeros(4)
        g = np.array([3.0, -0.02, 1e-3, -50.0])
        adam_step(p, g, AdamState(4), 1e-3)
        np.testing.assert_allclose(p, -1e-3 * np.sign(g), atol=1e-6)

    def test_scalar_quadratic_convergence(self):
        x = np.array([1.0])
        state = AdamState(1)
        for _ in range(100):
            adam_step(x, 2 * x, state, 0.1)
        assert abs(x[0]) < 0.05

    def test_layout_mismatch(self):
        with pytest.raises(ValueError, match="layout"):
            adam_step(np.zeros(3), np.zeros(2), AdamState(3), 0.1)

    def test_grad_norm_clip(self):
        g = np.array([3.0, 4.0])
        assert clip_grad_norm(g, 1.0) == 5.0
        assert np.linalg.norm(g) == pytest.approx(1.0)
        g2 = np.array([0.3, 0.4])
        clip_grad_norm(g2, 1.0)
        np.testing.assert_array_equal(g2, [0.3, 0.4])


class TestConfig:
    def test_defaults_follow_training_setup(self):
        cfg = PpoConfig()
        assert (cfg.lr, cfg.clip_eps, cfg.epochs, cfg.minibatch, cfg.gamma, cfg.lam) == (3e-4, 0.2, 10, 64, 0.99, 0.95)

    @pytest.mark.parametrize(
        "kwargs", [dict(gamma=0.0), dict(lam=1.5), dict(clip_eps=1.0), dict(minibatch=4096), dict(total_steps=10)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PpoConfig(**kwargs)


class TestTrain:
    def small_cfg(self, **kw):
        base = dict(rollout_T=128, minibatch=32, epochs=3, total_steps=256)
        base.update(kw)
        return PpoConfig(**base)

    def test_single_update_accounting(self, monkeypatch):
        calls = []
        real = ppo.adam_step
        monkeypatch.setattr(ppo, "adam_step", lambda *a: calls.append(1) or real(*a))
        records = []
        cfg = self.small_cfg(rollout_T=100, minibatch=32, epochs=4, total_steps=100)
        env = make_env("lqr")
        ac = build_actor_critic("full_kan", 2, 1, rng=Rng(0))
        train(ac, env, cfg, Rng(1), log=records.append)
        assert len(records) == 1 and records[0].steps == 100
        assert len(calls) == 4 * math.ceil(100 / 32)

    def test_first_pass_ratios_are_one(self, monkeypatch):
        seen = []
        real = ppo.ppo_loss_and_grad

        def spy(ac, batch, cfg, accumulate=True):
            from kanppo.policy import evaluate_actions
            lp, _, _ = evaluate_actions(ac, batch["obs"], batch["actions"])
            seen.append(np.max(np.abs(np.exp(lp - batch["log_probs"]) - 1.0)))
            return real(ac, batch, cfg, accumulate)

        monkeypatch.setattr(ppo, "ppo_loss_and_grad", spy)
        cfg = self.small_cfg()
        train(build_actor_critic("mlp_a2_c2", 3, 1, rng=Rng(2)), make_env("pendulum"), cfg, Rng(3))
        per_update = cfg.epochs * (cfg.rollout_T // cfg.minibatch)
        firsts = seen[::per_update]
        assert len(firsts) == cfg.updates
        assert max(firsts) <= 1e-12
        assert max(seen) > 1e-6  # later passes do move the policy

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            recs = []
            ac = build_actor_critic("kan_actor_mlp_critic", 3, 1, rng=Rng(4))
            train(ac, make_env("pendulum"), self.small_cfg(), Rng(5), log=recs.append)
            runs.append((ac.params.tobytes(), [r.csv_row() for r in recs]))
        assert runs[0] == runs[1]

    def test_dimension_check(self):
        with pytest.raises(ValueError, match="obs_dim"):
            train(build_actor_critic("full_kan", 4, 1), make_env("lqr"), self.small_cfg(), Rng(0))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts_with_last_good(self):
        env = ConstantEnv(reward=1e308)
        ac = build_actor_critic("full_kan", 3, 1, rng=Rng(6), normalize_obs=False)
        start = ac.params.copy()
        with pytest.raises(TrainingAborted) as info:
            train(ac, env, self.small_cfg(), Rng(7))
        assert info.value.update == 0
        np.testing.assert_array_equal(ac.params, start)
        np.testing.assert_array_equal(info.value.last_good, start)

    def test_truncation_bootstraps(self):
        # constant reward 1, horizon 10: value targets exceed the 10-step sum only via bootstrapping
        env = ConstantEnv(horizon=10, reward=1.0)
        recs = []
        ac = build_actor_critic("mlp_a1_c2", 3, 1, rng=Rng(8))
        train(ac, env, self.small_cfg(rollout_T=200, minibatch=50, total_steps=1000), Rng(9), log=recs.append)
        assert all(r.mean_return == 10.0 for r in recs)

    def test_early_stop_hook(self):
        recs = []
        train(
            build_actor_critic("full_kan", 2, 1),
            make_env("lqr"),
            self.small_cfg(total_steps=1280),
            Rng(0),
            log=recs.append,
            on_update=lambda ac, rec: rec.update == 3,
        )
        assert [r.update for r in recs] == [1, 2, 3]


class TestEvaluate:
    def test_constant_reward(self):
        ac = build_actor_critic("mlp_a2_c2", 3, 1, rng=Rng(1))
        result = evaluate(ac, ConstantEnv(horizon=10), episodes=7)
        assert result.episodes == 7
        assert result.mean == 10.0 and result.std == 0.0

    def test_default_episode_count(self):
        result = evaluate(build_actor_critic("full_kan", 3, 1), ConstantEnv(horizon=3))
        assert result.episodes == 100

    def test_deterministic_env_zero_variance(self):
        ac = build_actor_critic("full_kan", 3, 1, rng=Rng(2))

        class FixedStart(ConstantEnv):
            pass

        result = evaluate(ac, FixedStart(horizon=5, reward=-0.5), episodes=5)
        assert result.std == 0.0

    def test_episodes_positive(self):
        with pytest.raises(ValueError):
            evaluate(build_actor_critic("full_kan", 3, 1), ConstantEnv(), episodes=0)
