import os

import numpy as np
import pytest

from pgprofiler import algos, envs, oracle, policies, profiling
from pgprofiler.errors import DomainError
from tests.conftest import FIXTURES


def single_state_model(r0=1.0, r1=None, gamma=0.9):
    rewards = np.array([[r0]]) if r1 is None else np.array([[r0, r1]])
    n_actions = rewards.shape[1]
    trans = np.ones((1, n_actions, 1))
    return oracle.TabularModel(trans, rewards, gamma, np.array([1.0]),
                               (min(0.0, rewards.min()), rewards.max()))


class TestExactPolicyValue:
    def test_zero_rewards(self):
        model = single_state_model(r0=0.0)
        v, j = oracle.exact_policy_value(model, np.array([[1.0]]))
        assert v == pytest.approx([0.0])
        assert j == 0.0

    def test_geometric_self_loop(self):
        model = single_state_model(r0=1.0, gamma=0.9)
        v, j = oracle.exact_policy_value(model, np.array([[1.0]]))
        assert v == pytest.approx([10.0])
        assert j == pytest.approx(10.0)

    def test_matches_enumeration_with_truncation_slack(self, chain,
                                                       uniform_chain_policy):
        model = oracle.from_env(chain)
        pi = policies.policy_matrix(uniform_chain_policy, 3)
        _, j_inf = oracle.exact_policy_value(model, pi)
        horizon = 12
        j_enum = oracle.enumerate_returns(model, pi, horizon)
        slack = model.gamma**horizon * envs.return_bound(chain.spec)
        assert abs(j_inf - j_enum) <= slack + 1e-8

    def test_malformed_policy_rejected(self, chain):
        model = oracle.from_env(chain)
        with pytest.raises(DomainError):
            oracle.exact_policy_value(model, np.array([[0.5, 0.6]] * 3))


class TestValueIteration:
    def test_zero_rewards_tie_breaks_low(self):
        model = single_state_model(r0=0.0, r1=0.0)
        v, greedy = oracle.value_iteration(model)
        assert v == pytest.approx([0.0])
        assert greedy.tolist() == [0]

    def test_single_state_two_actions(self):
        model = single_state_model(r0=0.0, r1=1.0, gamma=0.9)
        v, greedy = oracle.value_iteration(model)
        assert v == pytest.approx([10.0], abs=1e-8)
        assert greedy.tolist() == [1]

    def test_chain_greedy_self_consistent(self, chain):
        model = oracle.from_env(chain)
        v_star, greedy = oracle.value_iteration(model)
        greedy_pi = np.eye(2)[greedy]
        v_eval, _ = oracle.exact_policy_value(model, greedy_pi)
        assert v_star == pytest.approx(v_eval, abs=1e-9)
        assert v_star == pytest.approx([8.1, 9.0, 10.0], abs=1e-9)
        assert greedy.tolist() == [1, 1, 1]


class TestFiniteDifferences:
    def test_quadratic(self):
        grad = oracle.finite_difference_grad(
            lambda th: float(th @ th), np.array([1.0, 2.0]), h=1e-5)
        assert grad == pytest.approx([2.0, 4.0], abs=1e-8)

    def test_constant(self):
        grad = oracle.finite_difference_grad(lambda th: 3.5, np.arange(4.0))
        assert grad == pytest.approx(np.zeros(4))

    def test_matches_reinforce_estimator_mean(self, chain, chain_family,
                                              uniform_chain_policy):
        """Monte Carlo score-function mean against the derivative of the
        exact truncated value (small-sample version of the full check in
        the acceptance suite)."""
        model = oracle.from_env(chain)

        def j_of(theta):
            pi = policies.policy_matrix(
                policies.PolicyParams(theta, chain_family), 3)
            return oracle.finite_horizon_value(model, pi, chain.spec.horizon)

        target = oracle.finite_difference_grad(
            j_of, uniform_chain_policy.theta, h=1e-5)
        n = 4000
        trajs = envs.rollout_batch(chain, uniform_chain_policy,
                                   [(31, k) for k in range(n)])
        grads = np.stack([
            algos.reinforce_gradient(uniform_chain_policy, [t],
                                     chain.spec.gamma) for t in trajs])
        se = grads.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(grads.mean(axis=0) - target) <= 3 * se + 1e-12)


class TestEnumeration:
    def test_deterministic_single_path(self, chain, chain_family):
        from tests.conftest import right_walker
        model = oracle.from_env(chain)
        pi = np.round(policies.policy_matrix(right_walker(chain_family), 3))
        # walking right: rewards arrive from t=2 onward
        expected = sum(0.9**t for t in range(2, 5))
        assert oracle.enumerate_returns(model, pi, 5) == pytest.approx(
            expected, abs=1e-12)

    def test_zero_horizon(self, chain, uniform_chain_policy):
        model = oracle.from_env(chain)
        pi = policies.policy_matrix(uniform_chain_policy, 3)
        assert oracle.enumerate_returns(model, pi, 0) == 0.0

    def test_agrees_with_backward_induction(self, chain,
                                            uniform_chain_policy):
        model = oracle.from_env(chain)
        pi = policies.policy_matrix(uniform_chain_policy, 3)
        assert oracle.enumerate_returns(model, pi, 6) == pytest.approx(
            oracle.finite_horizon_value(model, pi, 6), abs=1e-12)

    def test_path_guard(self):
        model = oracle.load_tabular_model(os.path.join(FIXTURES, "windy2.txt"))
        uniform = np.full((2, 2), 0.5)
        with pytest.raises(DomainError):
            oracle.enumerate_returns(model, uniform, 30)


class TestFixtureFormat:
    def test_chain_fixture_matches_env(self, chain):
        model = oracle.load_tabular_model(os.path.join(FIXTURES, "chain3.txt"))
        built = oracle.from_env(chain)
        assert np.array_equal(model.transitions, built.transitions)
        assert np.array_equal(model.rewards, built.rewards)
        assert np.array_equal(model.rho, built.rho)
        assert model.gamma == built.gamma

    def test_stochastic_fixture_loads(self):
        model = oracle.load_tabular_model(os.path.join(FIXTURES, "windy2.txt"))
        assert model.n_states == 2
        assert model.reward_bounds == (-1.0, 1.0)
        uniform = np.full((2, 2), 0.5)
        _, j = oracle.exact_policy_value(model, uniform)
        assert np.isfinite(j)

    def test_bad_fixture_rejected(self):
        with pytest.raises(DomainError):
            oracle.parse_tabular_model("states 2\nactions 2\ngamma 0.9\n")
        with pytest.raises(DomainError):
            oracle.parse_tabular_model("frobnicate 3\n")


class TestGradientDominanceRankConsistency:
    def test_smallest_gradient_has_smallest_gap(self, chain, chain_family):
        """Across logged checkpoints of an improving run, the parameters
        with the smallest exact-J gradient norm also sit closest to the
        optimum."""
        model = oracle.from_env(chain)
        v_star, _ = oracle.value_iteration(model)
        j_star = float(model.rho @ v_star)

        env = envs.ChainMdp()
        algo = algos.default_algo_config(algos.REINFORCE, steps_per_round=300,
                                         learning_rate=0.3)
        trainer = profiling.make_trainer(env, algo, 5)
        cur = policies.init_params(chain_family)
        checkpoints = [cur]
        for t in range(24):  # exact-comparison lookback loop
            new = trainer.propose(cur, t)
            _, j_new = oracle.exact_policy_value(
                model, policies.policy_matrix(new, 3))
            _, j_cur = oracle.exact_policy_value(
                model, policies.policy_matrix(cur, 3))
            cur = new if j_new > j_cur else cur
            if t % 6 == 5:
                checkpoints.append(cur)

        def exact_j(theta):
            pi = policies.policy_matrix(
                policies.PolicyParams(theta, chain_family), 3)
            return oracle.exact_policy_value(model, pi)[1]

        grad_norms = [np.linalg.norm(oracle.finite_difference_grad(
            exact_j, p.theta)) for p in checkpoints]
        gaps = [j_star - exact_j(p.theta) for p in checkpoints]
        assert int(np.argmin(grad_norms)) == int(np.argmin(gaps))
