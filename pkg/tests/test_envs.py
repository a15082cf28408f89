import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgprofiler import envs, oracle, policies
from pgprofiler.errors import DomainError
from tests.conftest import right_walker


class TestReset:
    def test_chain_starts_at_zero(self, chain):
        assert chain.reset(123) == 0

    def test_cartpole_reset_is_deterministic(self):
        env = envs.CartPole()
        a = env.reset((4, 5))
        b = env.reset((4, 5))
        assert np.array_equal(a, b)
        assert np.all(np.abs(a) <= 0.05)

    def test_reacher_reset_within_init_box(self):
        env = envs.PointMassReacher()
        for seed in range(10):
            s = env.reset(seed)
            assert np.all(np.abs(s[:2]) <= 1.0)
            assert np.all(s[2:] == 0.0)


class TestStep:
    def test_chain_transitions_follow_table(self, chain):
        chain.reset(0)
        state, reward, done = chain.step(1)
        assert (state, reward, done) == (1, 0.0, False)
        state, reward, done = chain.step(1)
        assert (state, reward) == (2, 0.0)
        state, reward, done = chain.step(1)  # rightmost self-loop pays
        assert (state, reward) == (2, 1.0)

    def test_step_rejects_bad_action(self, chain):
        chain.reset(0)
        with pytest.raises(DomainError):
            chain.step(5)

    def test_step_after_done_rejected(self):
        env = envs.ChainMdp(horizon=2)
        env.reset(0)
        env.step(1)
        env.step(1)
        assert env.done
        with pytest.raises(DomainError):
            env.step(0)

    def test_cartpole_terminates_past_angle_limit(self):
        env = envs.CartPole()
        env.reset(3)
        done = False
        steps = 0
        while not done:  # constant push topples the pole quickly
            state, _, done = env.step(1)
            steps += 1
        assert steps < env.spec.horizon
        assert abs(state[2]) > 12.0 * np.pi / 180.0 or abs(state[0]) > 2.4

    def test_continuous_bounds_reject_then_clip(self):
        env = envs.PointMassReacher()
        env.reset(0)
        with pytest.raises(DomainError):
            env.step(np.array([2.0, 0.0]))
        clipping = envs.PointMassReacher(clip_actions=True)
        clipping.reset(0)
        before = clipping._state.copy()
        clipping.step(np.array([2.0, 0.0]))
        moved = clipping._state
        assert moved[2] == pytest.approx(before[2] + 0.1 * 1.0)

    def test_three_step_return_matches_enumeration(self, chain, chain_family):
        walker = right_walker(chain_family)
        traj = envs.rollout(envs.ChainMdp(horizon=3), walker, 11)
        model = oracle.from_env(chain)
        pi = policies.policy_matrix(walker, 3)
        expected = oracle.enumerate_returns(model, np.round(pi), 3)
        assert envs.discounted_return(traj, 0.9) == pytest.approx(expected,
                                                                  abs=1e-12)


class TestRollout:
    def test_deterministic_on_repeat(self, chain, chain_family):
        walker = right_walker(chain_family)
        a = envs.rollout(chain, walker, (1, 2))
        b = envs.rollout(chain, walker, (1, 2))
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)

    def test_horizon_truncation(self, chain_family, uniform_chain_policy):
        env = envs.ChainMdp(horizon=5)
        traj = envs.rollout(env, uniform_chain_policy, 0)
        assert len(traj) == 5
        assert traj.truncated

    def test_distinct_seeds_distinct_trajectories(self, chain,
                                                  uniform_chain_policy):
        actions = {tuple(envs.rollout(chain, uniform_chain_policy, s).actions)
                   for s in range(8)}
        assert len(actions) > 1

    def test_max_steps_shortens_episode(self, chain, uniform_chain_policy):
        traj = envs.rollout(chain, uniform_chain_policy, 0, max_steps=7)
        assert len(traj) == 7

    def test_states_include_final(self, chain, uniform_chain_policy):
        traj = envs.rollout(chain, uniform_chain_policy, 0)
        assert traj.states.shape[0] == len(traj) + 1

    def test_policy_env_mismatch_rejected(self, chain):
        gauss = policies.init_params(policies.gaussian_family(
            policies.identity_features(4), 2))
        with pytest.raises(DomainError):
            envs.rollout(chain, gauss, 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_kernel_path_matches_stepwise_reference(self, seed):
        """The batch kernel must equal a hand-rolled reset/sample/step loop
        consuming the same stream."""
        env = envs.CartPole(horizon=80)
        family = policies.softmax_family(policies.identity_features(4), 2)
        params = policies.PolicyParams(
            0.7 * np.arange(family.param_count), family)
        fast = envs.rollout(env, params, (9, seed))

        from pgprofiler.rng import substream
        gen = substream(9, seed)
        state = env._draw_initial(gen)
        states, actions, rewards = [state], [], []
        terminal = False
        for _ in range(80):
            a = policies.sample_action(params, state, gen)
            state, r, terminal = env._transition(state, a, gen)
            states.append(state)
            actions.append(a)
            rewards.append(r)
            if terminal:
                break
        assert np.array_equal(fast.actions, np.array(actions))
        assert np.allclose(fast.states, np.array(states), atol=0, rtol=0)
        assert fast.truncated == (not terminal)

    def test_reacher_rollout_without_clip_rejects(self):
        env = envs.PointMassReacher()
        family = policies.deterministic_family(
            policies.identity_features(4), 2)
        big = policies.PolicyParams(np.full(8, 5.0), family)
        with pytest.raises(DomainError):
            envs.rollout(env, big, 0)


class TestReturnArithmetic:
    def test_geometric_example(self):
        traj = envs.Trajectory(np.zeros(4), np.zeros(3),
                               np.array([1.0, 1.0, 1.0]), True)
        assert envs.discounted_return(traj, 0.5) == pytest.approx(1.75)

    def test_empty_trajectory(self):
        traj = envs.Trajectory(np.zeros(1), np.zeros(0), np.zeros(0), True)
        assert envs.discounted_return(traj, 0.9) == 0.0

    def test_mixed_sign_rewards(self):
        traj = envs.Trajectory(np.zeros(4), np.zeros(3),
                               np.array([2.0, -1.0, 3.0]), True)
        assert envs.discounted_return(traj, 0.9) == pytest.approx(3.53)

    def test_return_bound_infinite_horizon_limit(self):
        spec = envs.MdpSpec(1, envs.DiscreteSpace(2), 0.99, 10_000, (0.0, 1.0))
        assert envs.return_bound(spec) == pytest.approx(100.0, rel=1e-12)

    def test_return_bound_short_horizon(self):
        spec = envs.MdpSpec(1, envs.DiscreteSpace(2), 0.5, 2, (0.0, 1.0))
        assert envs.return_bound(spec) == pytest.approx(1.5)

    def test_return_bound_reward_range(self):
        spec = envs.MdpSpec(1, envs.DiscreteSpace(2), 0.9, 3, (-1.0, 1.0))
        assert envs.return_bound(spec) == pytest.approx(5.42)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_returns_within_bound_envelope(self, seed):
        env = envs.PointMassReacher(clip_actions=True, horizon=40)
        family = policies.gaussian_family(policies.identity_features(4), 2,
                                          fixed_std=0.7, learn_log_std=False)
        params = policies.init_params(family)
        traj = envs.rollout(env, params, seed)
        g = envs.discounted_return(traj, env.spec.gamma)
        r_lo, r_hi = env.spec.reward_bounds
        factor = (1 - env.spec.gamma ** env.spec.horizon) / (1 - env.spec.gamma)
        assert r_lo * factor - 1e-12 <= g <= r_hi * factor + 1e-12
