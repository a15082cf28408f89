import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from pgprofiler import algos, envs, oracle, policies
from pgprofiler.errors import DomainError
from pgprofiler.rng import substream


def make_traj(rewards, states=None, actions=None):
    n = len(rewards)
    states = np.zeros(n + 1, dtype=np.int64) if states is None else states
    actions = np.zeros(n, dtype=np.int64) if actions is None else actions
    return envs.Trajectory(states, actions, np.asarray(rewards, float), True)


def bandit_trajectories(n, seed):
    """Two-armed bandit episodes: arm 0 pays 1, arm 1 pays 0."""
    gen = substream(seed)
    arms = (gen.random(n) < 0.5).astype(np.int64)  # uniform policy draws
    return [make_traj([1.0 if a == 0 else 0.0],
                      states=np.zeros(2, dtype=np.int64),
                      actions=np.array([a]))
            for a in arms]


class TestReturnsToGo:
    def test_matches_manual(self):
        rtg = algos.returns_to_go(np.array([1.0, 2.0, 3.0]), 0.5)
        assert rtg == pytest.approx([1 + 1 + 0.75, 2 + 1.5, 3.0])


class TestReinforce:
    def test_zero_rewards_leave_params_unchanged(self, chain_family):
        params = policies.init_params(chain_family)
        cfg = algos.AlgoConfig(kind="reinforce", learning_rate=0.5)
        trajs = [make_traj([0.0, 0.0, 0.0])]
        out = algos.reinforce_update(params, trajs, 0.9, cfg)
        assert np.array_equal(out.theta, params.theta)
        assert out is not params

    def test_empty_batch_rejected(self, chain_family):
        params = policies.init_params(chain_family)
        cfg = algos.AlgoConfig(kind="reinforce")
        with pytest.raises(DomainError):
            algos.reinforce_update(params, [], 0.9, cfg)

    def test_input_params_untouched(self, chain, uniform_chain_policy):
        before = uniform_chain_policy.theta.copy()
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(0, k) for k in range(3)])
        cfg = algos.AlgoConfig(kind="reinforce", learning_rate=0.5)
        algos.reinforce_update(uniform_chain_policy, trajs, 0.9, cfg)
        assert np.array_equal(uniform_chain_policy.theta, before)

    def test_bandit_estimator_mean(self):
        """Single-sample gradient estimates average to the closed-form
        pi_a (r_a - J) = (0.25, -0.25) for the uniform two-armed bandit."""
        family = policies.softmax_family(policies.one_hot_features(1), 2)
        params = policies.init_params(family)
        n = 100_000
        trajs = bandit_trajectories(n, seed=21)
        mean = algos.reinforce_gradient(params, trajs, 0.99)
        # per-sample gradients in closed form for the standard error:
        # sample a pays G=r(a); grad = G * (e_a - pi)
        arms = np.array([t.actions[0] for t in trajs])
        pays = np.array([t.rewards[0] for t in trajs])
        per_sample = pays[:, None] * (np.eye(2)[arms] - 0.5)
        se = per_sample.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.allclose(mean, per_sample.mean(axis=0), atol=1e-12)
        assert np.all(np.abs(mean - np.array([0.25, -0.25])) <= 3 * se)


class TestReinforceBaseline:
    def fit_exact_critic(self, chain, params):
        model = oracle.from_env(chain)
        v, _ = oracle.exact_policy_value(
            model, policies.policy_matrix(params, 3))
        return algos.CriticParams(v, policies.one_hot_features(3))

    def test_zero_critic_matches_plain_reinforce(self, chain,
                                                 uniform_chain_policy):
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(1, k) for k in range(4)])
        cfg = algos.AlgoConfig(kind="reinforce_baseline", learning_rate=0.3)
        critic = algos.zero_critic(policies.one_hot_features(3))
        with_baseline, _ = algos.reinforce_baseline_update(
            uniform_chain_policy, critic, trajs, 0.9, cfg)
        plain = algos.reinforce_update(uniform_chain_policy, trajs, 0.9, cfg)
        assert np.allclose(with_baseline.theta, plain.theta, atol=1e-12)

    def test_perfect_critic_centers_advantages(self, chain,
                                               uniform_chain_policy):
        critic = self.fit_exact_critic(chain, uniform_chain_policy)
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(2, k) for k in range(3000)])
        states = np.concatenate([t.states[:len(t)] for t in trajs])
        times = np.concatenate([np.arange(len(t)) for t in trajs])
        rtgs = np.concatenate([algos.returns_to_go(t.rewards, 0.9)
                               for t in trajs])
        adv = rtgs - algos.critic_values(critic, states)
        # keep steps with >= 50 remaining steps: a return-to-go there misses
        # at most gamma^50 * B of the infinite-horizon value
        early = times < chain.spec.horizon - 50
        slack = 0.9 ** 50 * envs.return_bound(chain.spec)
        for s in range(3):
            per_state = adv[early & (states == s)]
            se = per_state.std(ddof=1) / np.sqrt(per_state.size)
            assert abs(per_state.mean()) <= 4 * se + slack

    def test_baseline_reduces_gradient_variance(self, chain,
                                                uniform_chain_policy):
        critic = self.fit_exact_critic(chain, uniform_chain_policy)
        n = 10_000
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(3, k) for k in range(n)])
        gamma = chain.spec.gamma
        fmap = uniform_chain_policy.family.feature_map
        vanilla, centered = [], []
        for t in trajs:
            states = t.states[:len(t)]
            feats = algos.features_batch(fmap, states)
            disc = gamma ** np.arange(len(t))
            rtg = algos.returns_to_go(t.rewards, gamma)
            adv = rtg - algos.critic_values(critic, states)
            vanilla.append(algos._score_weights(
                uniform_chain_policy, feats, t.actions, disc * rtg))
            centered.append(algos._score_weights(
                uniform_chain_policy, feats, t.actions, disc * adv))
        var_vanilla = np.stack(vanilla).var(axis=0, ddof=1).sum()
        var_centered = np.stack(centered).var(axis=0, ddof=1).sum()
        assert var_centered <= var_vanilla

    def test_critic_refit_hits_targets_on_tabular(self, chain,
                                                  uniform_chain_policy):
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(4, k) for k in range(50)])
        cfg = algos.AlgoConfig(kind="reinforce_baseline", learning_rate=0.1)
        critic = algos.zero_critic(policies.one_hot_features(3))
        _, refit = algos.reinforce_baseline_update(
            uniform_chain_policy, critic, trajs, 0.9, cfg)
        states = np.concatenate([t.states[:len(t)] for t in trajs])
        rtgs = np.concatenate([algos.returns_to_go(t.rewards, 0.9)
                               for t in trajs])
        # one-hot least squares = per-state means
        for s in range(3):
            assert refit.w[s] == pytest.approx(rtgs[states == s].mean())


class TestPpoClip:
    def test_zero_advantages_leave_params_unchanged(self, chain,
                                                    uniform_chain_policy):
        trajs = [make_traj([0.0, 0.0])]
        cfg = algos.AlgoConfig(kind="ppo", learning_rate=0.1, epochs=3,
                               minibatch=2)
        critic = algos.zero_critic(policies.one_hot_features(3))
        out, _ = algos.ppo_clip_update(uniform_chain_policy, critic, trajs,
                                       0.9, cfg, (0,))
        assert np.array_equal(out.theta, uniform_chain_policy.theta)

    def test_tiny_unclipped_step_matches_baseline_direction(self, chain,
                                                            uniform_chain_policy):
        gamma = 0.999  # near-undiscounted so the gamma^t weights are ~1
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(5, k) for k in range(6)])
        critic = algos.zero_critic(policies.one_hot_features(3))
        n_samples = sum(len(t) for t in trajs)
        ppo_cfg = algos.AlgoConfig(kind="ppo", learning_rate=1e-6, epochs=1,
                                   minibatch=n_samples)
        ppo_out, _ = algos.ppo_clip_update(uniform_chain_policy, critic,
                                           trajs, gamma, ppo_cfg, (1,))
        rb_cfg = algos.AlgoConfig(kind="reinforce_baseline",
                                  learning_rate=1e-6)
        rb_out, _ = algos.reinforce_baseline_update(
            uniform_chain_policy, critic, trajs, gamma, rb_cfg)
        d1 = ppo_out.theta - uniform_chain_policy.theta
        d2 = rb_out.theta - uniform_chain_policy.theta
        cosine = d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2))
        assert cosine > 0.99

    def test_saturated_sample_contributes_nothing(self):
        adv = np.array([1.0, 1.0, -1.0, -1.0])
        ratios = np.array([1.5, 1.1, 0.5, 0.9])
        mask = algos.clip_gradient_mask(adv, ratios, 0.2)
        assert mask.tolist() == [False, True, False, True]

    def test_gradient_never_pushes_ratio_further_out(self, chain,
                                                     uniform_chain_policy):
        """With one positive-advantage sample and an aggressive rate, theta
        stops moving once the ratio saturates above 1 + c."""
        trajs = [make_traj([1.0], states=np.array([0, 1]),
                           actions=np.array([1]))]
        critic = algos.zero_critic(policies.one_hot_features(3))
        cfg = algos.AlgoConfig(kind="ppo", learning_rate=2.0, epochs=40,
                               minibatch=1, clip_ratio=0.2)
        out, _ = algos.ppo_clip_update(uniform_chain_policy, critic, trajs,
                                       0.9, cfg, (2,))
        feats = algos.features_batch(uniform_chain_policy.family.feature_map,
                                     np.array([0]))
        old_lp = algos.log_probs_batch(uniform_chain_policy, feats,
                                       np.array([1]))
        new_lp = algos.log_probs_batch(out, feats, np.array([1]))
        ratio = float(np.exp(new_lp - old_lp)[0])
        # one unclipped step can overshoot the boundary, but saturation must
        # stop any further growth well before 40 epochs compound
        assert ratio <= (1.2) * np.exp(2.0 * 2.0 * 1.0) + 1e-9
        again, _ = algos.ppo_clip_update(
            uniform_chain_policy, critic, trajs, 0.9,
            algos.AlgoConfig(kind="ppo", learning_rate=2.0, epochs=80,
                             minibatch=1, clip_ratio=0.2), (2,))
        assert np.array_equal(out.theta, again.theta)


class TestReplayBuffer:
    def test_fifo_overwrite(self):
        buf = algos.ReplayBuffer(5, 1, 1)
        for i in range(8):
            buf.add([float(i)], [0.0], float(i), [0.0], False)
        entries = buf.entries()
        assert len(buf) == 5
        assert [e[2] for e in entries] == [3.0, 4.0, 5.0, 6.0, 7.0]

    @settings(max_examples=25, deadline=None)
    @given(capacity=st.integers(1, 12), extra=st.integers(0, 20))
    def test_oldest_k_evicted(self, capacity, extra):
        buf = algos.ReplayBuffer(capacity, 1, 1)
        total = capacity + extra
        for i in range(total):
            buf.add([0.0], [0.0], float(i), [0.0], False)
        kept = [e[2] for e in buf.entries()]
        assert kept == [float(i) for i in range(max(0, total - capacity),
                                                total)]

    def test_sample_is_seeded(self):
        buf = algos.ReplayBuffer(10, 2, 1)
        for i in range(10):
            buf.add([i, i], [0.0], float(i), [0.0, 0.0], False)
        a = buf.sample(4, substream(3))
        b = buf.sample(4, substream(3))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestSoftUpdate:
    def test_paper_rate(self):
        out = algos.soft_update(np.ones(3), np.zeros(3), 0.005)
        assert out == pytest.approx([0.005] * 3)

    def test_boundaries(self):
        online, target = np.array([2.0]), np.array([7.0])
        assert algos.soft_update(online, target, 0.0) == pytest.approx([7.0])
        assert algos.soft_update(online, target, 1.0) == pytest.approx([2.0])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            algos.soft_update(np.ones(3), np.ones(4), 0.5)


def lqr_setup():
    dt = 0.1
    a_mat = np.array([[1.0, dt], [0.0, 1.0]])
    b_mat = np.array([[dt * dt], [dt]])
    gamma = 0.99
    q_cost = np.diag([1.0, 0.0])
    r_cost = np.array([[0.1]])
    a_s, b_s = np.sqrt(gamma) * a_mat, np.sqrt(gamma) * b_mat
    p = solve_discrete_are(a_s, b_s, q_cost, r_cost)
    gain = np.linalg.solve(r_cost + b_s.T @ p @ b_s, b_s.T @ p @ a_s)
    return dt, a_mat, b_mat, gamma, gain


class TestDdpg:
    def make_state(self):
        fam = policies.deterministic_family(
            policies.identity_features(2, normalize=False), 1)
        actor = policies.init_params(fam)
        critic = algos.zero_critic(policies.poly_features(3, 2,
                                                          normalize=False))
        return algos.init_ddpg_state(actor, critic)

    def filled_buffer(self, n=2000):
        _, a_mat, b_mat, _, _ = lqr_setup()
        gen = substream(42, 0)
        states = gen.uniform(-2, 2, size=(n, 2))
        acts = gen.uniform(-4, 4, size=(n, 1))
        nxt = states @ a_mat.T + acts @ b_mat.T
        rewards = -(states[:, 0]**2 + 0.1 * acts[:, 0]**2)
        buf = algos.ReplayBuffer(n, 2, 1)
        for i in range(n):
            buf.add(states[i], acts[i], rewards[i], nxt[i], False)
        return buf

    def test_underfull_buffer_skips(self):
        buf = algos.ReplayBuffer(100, 2, 1)
        buf.add([0, 0], [0], 0.0, [0, 0], False)
        cfg = algos.AlgoConfig(kind="ddpg", batch_size=10)
        out = algos.ddpg_update(self.make_state(), buf, 0.99, cfg,
                                (np.array([-1.0]), np.array([1.0])), (0,))
        assert out is None

    def test_update_is_pure(self):
        buf = self.filled_buffer(200)
        cfg = algos.AlgoConfig(kind="ddpg", batch_size=64)
        bounds = (np.array([-10.0]), np.array([10.0]))
        a = algos.ddpg_update(self.make_state(), buf, 0.99, cfg, bounds, (5,))
        b = algos.ddpg_update(self.make_state(), buf, 0.99, cfg, bounds, (5,))
        assert np.array_equal(a.actor.theta, b.actor.theta)
        assert np.array_equal(a.critic.w, b.critic.w)

    def test_target_boundaries(self):
        buf = self.filled_buffer(200)
        bounds = (np.array([-10.0]), np.array([10.0]))
        full = algos.ddpg_update(
            self.make_state(), buf, 0.99,
            algos.AlgoConfig(kind="ddpg", batch_size=64, tau=1.0), bounds,
            (6,))
        assert np.array_equal(full.target_actor, full.actor.theta)
        assert np.array_equal(full.target_critic, full.critic.w)
        frozen = algos.ddpg_update(
            self.make_state(), buf, 0.99,
            algos.AlgoConfig(kind="ddpg", batch_size=64, tau=0.0), bounds,
            (6,))
        assert np.array_equal(frozen.target_actor, np.zeros(2))
        assert np.array_equal(frozen.target_critic,
                              np.zeros(frozen.target_critic.shape))

    def test_actor_converges_to_lqr_gain(self):
        dt, a_mat, b_mat, gamma, gain = lqr_setup()
        buf = self.filled_buffer(4000)
        state = self.make_state()
        cfg = algos.AlgoConfig(kind="ddpg", learning_rate=0.02,
                               critic_lr=0.01, tau=0.01, batch_size=128)
        bounds = (np.array([-10.0]), np.array([10.0]))
        for k in range(5000):
            out = algos.ddpg_update(state, buf, gamma, cfg, bounds, (7, k))
            if out is not None:
                state = out
        learned = state.actor.weight_matrix()
        rel_err = np.linalg.norm(learned - (-gain)) / np.linalg.norm(gain)
        assert rel_err <= 0.10

    def test_critic_gradient_matches_finite_differences(self):
        """The analytic dQ/da used in the actor step agrees with numeric
        differentiation of the critic."""
        qmap = policies.poly_features(3, 2, normalize=False)
        gen = substream(9)
        w = gen.standard_normal(qmap.output_dim)
        x = gen.standard_normal(3)
        derivs = algos.poly_derivative_ops(qmap)
        phi = algos.features_batch(qmap, x[None, :])[0]
        analytic = np.array([float((derivs[j].T @ w) @ phi)
                             for j in range(3)])
        numeric = oracle.finite_difference_grad(
            lambda y: float(algos.features_batch(qmap, y[None, :])[0] @ w), x)
        assert analytic == pytest.approx(numeric, abs=1e-7)


class TestSecondMomentBound:
    def test_exact_on_chain(self, chain, uniform_chain_policy):
        """E ||G||^2 for the visitation-sampled score estimator stays below
        (Fisher operator norm) / (1-gamma)^4 on the chain, computed exactly."""
        model = oracle.from_env(chain)
        pi = policies.policy_matrix(uniform_chain_policy, 3)
        d = oracle.discounted_state_visitation(model, pi)
        q = oracle.exact_q_values(model, pi)
        gamma = model.gamma
        dim = uniform_chain_policy.theta.shape[0]
        fisher = np.zeros((dim, dim))
        second_moment = 0.0
        for s in range(3):
            for a in range(2):
                weight = d[s] * pi[s, a]
                score = policies.grad_log_prob(uniform_chain_policy, s, a)
                fisher += weight * np.outer(score, score)
                g = score * q[s, a] / (1.0 - gamma)
                second_moment += weight * float(g @ g)
        sigma_hat = float(np.linalg.norm(fisher, 2))
        assert second_moment <= sigma_hat / (1.0 - gamma) ** 4
