"""Monte Carlo return estimation and Hoeffding evaluation budgets.

The estimator J_hat is the mean of E independent rollout returns. Because
every truncated return lies in an interval of width B (``return_bound``),
Hoeffding's inequality gives

    P(|J_hat - J| >= eps) <= 2 exp(-2 E eps^2 / B^2)

which inverts to the per-run evaluation budget

    E >= B^2 / (2 eps^2) * ln(2 T / delta)

for T comparison rounds at overall confidence 1 - delta. ``half_width`` on a
:class:`ReturnEstimate` is the Hoeffding radius at the configured per-test
delta; a normal-approximation radius is carried alongside purely for
diagnostics (the theory only licenses the Hoeffding one).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, exp, log, sqrt
from statistics import NormalDist

import numpy as np

from .envs import Env, Trajectory, discounted_return, return_bound, rollout_batch
from .errors import DomainError
from .policies import PolicyParams
from .rng import as_path


@dataclass
class ReturnEstimate:
    j_hat: float
    n_rollouts: int
    sample_variance: float
    half_width: float
    return_range: float
    clt_half_width: float = 0.0
    trajectories: list[Trajectory] | None = field(default=None, repr=False,
                                                  compare=False)

    def __post_init__(self) -> None:
        if self.n_rollouts < 1:
            raise DomainError("an estimate needs at least one rollout")
        if self.sample_variance < 0 or self.half_width < 0:
            raise DomainError("variance and half-width must be nonnegative")


@dataclass(frozen=True)
class EvalBudget:
    epsilon: float
    delta: float
    total_updates: int
    rollouts: int

    def __post_init__(self) -> None:
        if self.rollouts < 1:
            raise DomainError("rollouts must be >= 1")


def required_rollouts(b: float, epsilon: float, delta: float, t: int) -> int:
    """Smallest E with ceil(B^2/(2 eps^2) ln(2T/delta)), floored at 1."""
    if b <= 0 or epsilon <= 0:
        raise DomainError("B and epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    if t < 1:
        raise DomainError("T must be >= 1")
    return max(1, ceil(b * b / (2.0 * epsilon * epsilon)
                       * log(2.0 * t / delta)))


def hoeffding_failure_prob(b: float, epsilon: float, n_rollouts: int) -> float:
    """Two-sided tail bound 2 exp(-2 E eps^2 / B^2), capped at 1."""
    if b <= 0:
        raise DomainError("B must be positive")
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    if n_rollouts < 1:
        raise DomainError("E must be >= 1")
    if epsilon == 0.0:
        return 1.0
    return min(1.0, 2.0 * exp(-2.0 * n_rollouts * epsilon * epsilon / (b * b)))


def hoeffding_half_width(b: float, n_rollouts: int, delta: float) -> float:
    """Radius eps with 2 exp(-2 E eps^2 / B^2) = delta."""
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    if b <= 0 or n_rollouts < 1:
        raise DomainError("B must be positive and E >= 1")
    return b * sqrt(log(2.0 / delta) / (2.0 * n_rollouts))


def confidence_interval(est: ReturnEstimate) -> tuple[float, float]:
    return est.j_hat - est.half_width, est.j_hat + est.half_width


def estimate_from_returns(returns: np.ndarray, b: float,
                          delta_per_test: float = 0.05) -> ReturnEstimate:
    """Build an estimate from pre-computed rollout returns."""
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.shape[0]
    var = float(returns.var(ddof=1)) if n > 1 else 0.0
    z = NormalDist().inv_cdf(1.0 - delta_per_test / 2.0)
    clt = z * sqrt(var / n) if n > 1 else 0.0
    return ReturnEstimate(
        j_hat=float(returns.mean()),
        n_rollouts=n,
        sample_variance=var,
        half_width=hoeffding_half_width(b, n, delta_per_test),
        return_range=b,
        clt_half_width=clt,
    )


def estimate_return(params: PolicyParams, env: Env, n_rollouts: int,
                    seed_material: int | tuple[int, ...],
                    delta_per_test: float = 0.05,
                    keep_trajectories: bool = False) -> ReturnEstimate:
    """Mean discounted return over ``n_rollouts`` independent episodes.

    Rollout i runs on the stream ``(*seed_material, i)``, so estimates for
    different seed material are independent andrerun-identical. With
    ``keep_trajectories`` the episodes are retained on the estimate for reuse
    as training data.
    """
    if n_rollouts < 1:
        raise DomainError("n_rollouts must be >= 1")
    base = as_path(seed_material)
    trajs = rollout_batch(env, params, [base + (i,) for i in range(n_rollouts)])
    gamma = env.spec.gamma
    returns = np.array([discounted_return(t, gamma) for t in trajs])
    est = estimate_from_returns(returns, return_bound(env.spec), delta_per_test)
    if keep_trajectories:
        est.trajectories = trajs
    return est
