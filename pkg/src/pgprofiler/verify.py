"""Lemma-level property checks behind ``pgprof verify``.

Quick, deterministic spot checks of the package's mathematical claims: the
evaluation-budget formula, the concentration bound's empirical coverage, the
score-function norm cap, gradient correctness against finite differences,
selection algebra, and exact-comparison monotonicity. The pytest suite runs
the full-size versions; this command is the fast console variant.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from . import algos, envs, estimation, oracle, policies, profiling
from .rng import substream


def _check_budget_formula() -> str | None:
    if estimation.required_rollouts(100, 10, 0.05, 100) != 415:
        return "required_rollouts(100,10,0.05,100) != 415"
    if estimation.required_rollouts(10, 1, 0.1, 1000) != 496:
        return "required_rollouts(10,1,0.1,1000) != 496"
    grid_b = [1.0, 10.0, 100.0]
    grid_eps = [0.5, 1.0, 5.0]
    grid_delta = [0.01, 0.1, 0.5]
    grid_t = [1, 10, 100]
    for b in grid_b:
        for eps in grid_eps:
            for delta in grid_delta:
                for t in grid_t:
                    e = estimation.required_rollouts(b, eps, delta, t)
                    if estimation.required_rollouts(b, 2 * eps, delta, t) > e:
                        return "not nonincreasing in epsilon"
                    if estimation.required_rollouts(b, eps, min(0.9, 2 * delta), t) > e:
                        return "not nonincreasing in delta"
                    if estimation.required_rollouts(2 * b, eps, delta, t) < e:
                        return "not nondecreasing in B"
                    if estimation.required_rollouts(b, eps, delta, 2 * t) < e:
                        return "not nondecreasing in T"
    return None


def _check_hoeffding_arithmetic() -> str | None:
    p = estimation.hoeffding_failure_prob(100, 10, 415)
    if abs(p - 2.0 * np.exp(-8.3)) > 1e-15:
        return f"failure prob {p} != 2 exp(-8.3)"
    if estimation.hoeffding_failure_prob(100, 0, 10) != 1.0:
        return "epsilon=0 not capped at 1"
    return None


def _check_softmax_bound() -> str | None:
    gen = substream(2024, 11)
    fmap = policies.identity_features(6)
    family = policies.softmax_family(fmap, 4)
    worst = 0.0
    for _ in range(1000):
        params = policies.PolicyParams(3.0 * gen.standard_normal(
            family.param_count), family)
        state = 4.0 * gen.standard_normal(6)
        action = int(gen.integers(0, 4))
        worst = max(worst, float(np.linalg.norm(
            policies.grad_log_prob(params, state, action))))
    if worst > 2.0 + 1e-9:
        return f"score norm {worst} exceeds 2"
    return None


def _check_gradients() -> str | None:
    gen = substream(2024, 12)
    fams = [
        policies.softmax_family(policies.identity_features(3), 3),
        policies.gaussian_family(policies.identity_features(3), 2),
    ]
    for family in fams:
        for _ in range(20):
            theta = gen.standard_normal(family.param_count)
            params = policies.PolicyParams(theta, family)
            state = gen.standard_normal(3)
            if family.kind == policies.SOFTMAX:
                action = int(gen.integers(0, family.n_actions))
            else:
                action = gen.standard_normal(family.action_dim)
            analytic = policies.grad_log_prob(params, state, action)
            numeric = oracle.finite_difference_grad(
                lambda th: policies.log_prob(
                    policies.PolicyParams(th, family), state, action),
                theta)
            err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
            if err.max() > 1e-4:
                return f"{family.kind} gradient error {err.max():.2e}"
    return None


def _check_selection_algebra() -> str | None:
    fam = policies.softmax_family(policies.one_hot_features(2), 2)
    old = policies.init_params(fam)
    new = policies.PolicyParams(np.ones(4), fam)

    def cand(tag, params, j):
        c = profiling.CandidateEval(tag, params)
        c.estimate = estimation.ReturnEstimate(j, 1, 0.0, 0.0, 1.0)
        return c

    if profiling.select([cand("old", old, 4.0), cand("new", new, 4.0)]).tag != "old":
        return "tie did not resolve to the incumbent"
    if profiling.select([cand("old", old, 3.0), cand("new", new, 5.0)]).tag != "new":
        return "argmax failed"
    picks = profiling.select([cand("old", old, 4.0), cand("new", new, 3.0),
                              cand("mix", new, 5.0)])
    if picks.tag != "mix":
        return "three-way argmax failed"
    rec = profiling.RoundRecord(0, {"old": 1.0, "new": 3.0, "mix": 2.0},
                                "new", 0, 0, "0")
    triples = profiling.variant_dominance_check([rec])
    if triples != [(3.0, 3.0, 2.0)]:
        return f"dominance triple {triples}"
    return None


def _check_exact_monotonicity() -> str | None:
    env = envs.ChainMdp()
    algo = algos.default_algo_config(algos.REINFORCE, steps_per_round=300)
    prof = profiling.ProfilingConfig(variant=profiling.LOOKBACK,
                                     eval_mode="oracle", total_rounds=15)
    records = profiling.profiled_train(env, algo, prof, seed=7,
                                       log_oracle=True)
    js = [r.oracle_j for r in records]
    drops = [b - a for a, b in zip(js, js[1:]) if b < a]
    if drops:
        return f"oracle-J sequence decreased: {min(drops)}"
    return None


def _check_coverage() -> str | None:
    env = envs.ChainMdp()
    fam = policies.softmax_family(policies.one_hot_features(3), 2)
    params = policies.init_params(fam)
    model = oracle.from_env(env)
    j_true = oracle.finite_horizon_value(
        model, policies.policy_matrix(params, 3), env.spec.horizon)
    b = envs.return_bound(env.spec)
    n_estimates, e_rollouts = 400, 20
    # pick epsilon so the predicted failure bound is a testable 0.2
    eps = b * np.sqrt(np.log(2.0 / 0.2) / (2.0 * e_rollouts))
    bound = estimation.hoeffding_failure_prob(b, eps, e_rollouts)
    fails = 0
    for k in range(n_estimates):
        est = estimation.estimate_return(params, env, e_rollouts, (90, k))
        if abs(est.j_hat - j_true) >= eps:
            fails += 1
    # one-sided binomial test at 99%: reject only if the observed failure
    # count would be this extreme with probability < 1% under the bound
    p_value = 1.0 - stats.binom.cdf(fails - 1, n_estimates, bound)
    if p_value < 0.01:
        return f"empirical failures {fails}/{n_estimates} exceed bound {bound:.3f}"
    return None


CHECKS = [
    ("budget-formula", _check_budget_formula),
    ("hoeffding-arithmetic", _check_hoeffding_arithmetic),
    ("softmax-score-bound", _check_softmax_bound),
    ("gradient-finite-differences", _check_gradients),
    ("selection-algebra", _check_selection_algebra),
    ("exact-comparison-monotonicity", _check_exact_monotonicity),
    ("hoeffding-coverage", _check_coverage),
]


def run_all(echo=print) -> bool:
    ok = True
    for name, check in CHECKS:
        detail = check()
        if detail is None:
            echo(f"PASS {name}")
        else:
            echo(f"FAIL {name}: {detail}")
            ok = False
    return ok
