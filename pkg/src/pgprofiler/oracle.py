"""Ground-truth machinery for verification.

Exact policy evaluation and value iteration on tabular models, central-
difference gradients, and brute-force trajectory enumeration. Everything here
is an independent check on the sampled paths elsewhere in the package: the
oracles never call the rollout machinery.

Tabular models can be loaded from a plain-text fixture format::

    # comment lines and blank lines are ignored
    states 3
    actions 2
    gamma 0.9
    rho 1 0 0
    reward_bounds 0 1
    P 0          # transition matrix for action 0, one row per state
    1 0 0
    1 0 0
    0 1 0
    P 1
    0 1 0
    0 0 1
    0 0 1
    r            # reward table, one row per state, one column per action
    0 0
    0 0
    0 1
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import ChainMdp
from .errors import DomainError

_ENUMERATION_GUARD = 10**6


@dataclass
class TabularModel:
    """Exact MDP description: P[s, a, s'], r[s, a], discount, start dist."""

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    rho: np.ndarray
    reward_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        rho = np.asarray(self.rho, dtype=np.float64)
        s, a = r.shape
        if p.shape != (s, a, s):
            raise DomainError(f"transition tensor shape {p.shape} does not "
                              f"match reward table {r.shape}")
        if not np.allclose(p.sum(axis=2), 1.0, atol=1e-12) or (p < 0).any():
            raise DomainError("transition rows must be distributions")
        if not np.isclose(rho.sum(), 1.0, atol=1e-12) or (rho < 0).any():
            raise DomainError("rho must be a distribution")
        lo, hi = self.reward_bounds
        if (r < lo).any() or (r > hi).any():
            raise DomainError("rewards outside declared bounds")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma outside [0, 1)")
        self.transitions = p
        self.rewards = r
        self.rho = rho

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def from_env(env: ChainMdp) -> TabularModel:
    """Exact model of a built-in tabular environment."""
    if not isinstance(env, ChainMdp):
        raise DomainError("only tabular environments have exact models")
    return TabularModel(env.transitions.copy(), env.rewards.copy(),
                        env.spec.gamma, env.rho.copy(),
                        env.spec.reward_bounds)


def _policy_kernels(model: TabularModel, policy: np.ndarray):
    """State-to-state kernel and per-state reward under a policy table."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (model.n_states, model.n_actions):
        raise DomainError(f"policy table must be {model.n_states}x"
                          f"{model.n_actions}")
    if not np.allclose(policy.sum(axis=1), 1.0, atol=1e-9) or (policy < 0).any():
        raise DomainError("policy rows must be distributions")
    p_pi = np.einsum("sa,sat->st", policy, model.transitions)
    r_pi = np.einsum("sa,sa->s", policy, model.rewards)
    return p_pi, r_pi


def exact_policy_value(model: TabularModel,
                       policy: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve (I - gamma P_pi) V = r_pi exactly; J = rho . V."""
    p_pi, r_pi = _policy_kernels(model, policy)
    n = model.n_states
    v = np.linalg.solve(np.eye(n) - model.gamma * p_pi, r_pi)
    return v, float(model.rho @ v)


def finite_horizon_value(model: TabularModel, policy: np.ndarray,
                         horizon: int) -> float:
    """Exact expectation of the horizon-truncated discounted return.

    This is what an H-truncated rollout estimates, so oracle comparisons
    against sampled returns need no truncation slack when using it.
    """
    if horizon < 0:
        raise DomainError("horizon must be >= 0")
    p_pi, r_pi = _policy_kernels(model, policy)
    v = np.zeros(model.n_states)
    for _ in range(horizon):
        v = r_pi + model.gamma * (p_pi @ v)
    return float(model.rho @ v)


def value_iteration(model: TabularModel,
                    tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values to sup-norm ``tol`` plus the greedy policy
    (lowest-index tie-break)."""
    v = np.zeros(model.n_states)
    while True:
        q = model.rewards + model.gamma * np.einsum(
            "sat,t->sa", model.transitions, v)
        v_next = q.max(axis=1)
        if np.abs(v_next - v).max() < tol:
            v = v_next
            break
        v = v_next
    q = model.rewards + model.gamma * np.einsum("sat,t->sa",
                                                model.transitions, v)
    greedy = q.argmax(axis=1)
    return v, greedy


def finite_difference_grad(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a deterministic scalar function, per coordinate."""
    if h <= 0:
        raise DomainError("step size must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        hi = f(theta + e)
        lo = f(theta - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DomainError("non-finite function value in finite differences")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def enumerate_returns(model: TabularModel, policy: np.ndarray,
                      horizon: int) -> float:
    """Exact truncated expected return by full path enumeration.

    Walks every positive-probability (action, next-state) branch, weighting
    by path probability. Guarded at 1e6 enumerated paths.
    """
    policy = np.asarray(policy, dtype=np.float64)
    _policy_kernels(model, policy)  # validates shapes/distributions
    paths = 0

    def recurse(state: int, depth: int, disc: float) -> float:
        # E[sum_{k=depth..H-1} gamma^k r_k | s_depth = state], disc = gamma^depth
        nonlocal paths
        if depth == horizon:
            paths += 1
            if paths > _ENUMERATION_GUARD:
                raise DomainError("path enumeration guard exceeded")
            return 0.0
        total = 0.0
        for a in range(model.n_actions):
            pa = policy[state, a]
            if pa == 0.0:
                continue
            r = model.rewards[state, a]
            for s2 in range(model.n_states):
                pt = model.transitions[state, a, s2]
                if pt == 0.0:
                    continue
                total += pa * pt * (disc * r
                                    + recurse(s2, depth + 1,
                                              disc * model.gamma))
        return total

    if horizon == 0:
        return 0.0
    return float(sum(model.rho[s] * recurse(s, 0, 1.0)
                     for s in range(model.n_states) if model.rho[s] > 0.0))


def discounted_state_visitation(model: TabularModel,
                                policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state-visitation distribution
    (1 - gamma) sum_t gamma^t P(s_t = s)."""
    p_pi, _ = _policy_kernels(model, policy)
    d = np.linalg.solve(np.eye(model.n_states) - model.gamma * p_pi.T,
                        model.rho)
    return (1.0 - model.gamma) * d


def exact_q_values(model: TabularModel, policy: np.ndarray) -> np.ndarray:
    """Q[s, a] under the policy, from the exact V."""
    v, _ = exact_policy_value(model, policy)
    return model.rewards + model.gamma * np.einsum("sat,t->sa",
                                                   model.transitions, v)


def parse_tabular_model(text: str) -> TabularModel:
    """Parse the plain-text fixture format (module docstring has the grammar)."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    n_states = n_actions = None
    gamma = None
    rho = None
    bounds = (0.0, 1.0)
    trans: dict[int, list[list[float]]] = {}
    rewards: list[list[float]] = []
    i = 0

    def rows(count: int, start: int) -> tuple[list[list[float]], int]:
        block = [[float(x) for x in lines[start + j].split()]
                 for j in range(count)]
        return block, start + count

    while i < len(lines):
        head = lines[i].split()
        key = head[0]
        if key == "states":
            n_states = int(head[1])
            i += 1
        elif key == "actions":
            n_actions = int(head[1])
            i += 1
        elif key == "gamma":
            gamma = float(head[1])
            i += 1
        elif key == "rho":
            rho = [float(x) for x in head[1:]]
            i += 1
        elif key == "reward_bounds":
            bounds = (float(head[1]), float(head[2]))
            i += 1
        elif key == "P":
            if n_states is None:
                raise DomainError("states must come before P blocks")
            block, i = rows(n_states, i + 1)
            trans[int(head[1])] = block
        elif key == "r":
            if n_states is None:
                raise DomainError("states must come before the r block")
            rewards, i = rows(n_states, i + 1)
        else:
            raise DomainError(f"unknown fixture directive {key!r}")

    if None in (n_states, n_actions, gamma) or rho is None or not rewards:
        raise DomainError("fixture missing states/actions/gamma/rho/r")
    if sorted(trans) != list(range(n_actions)):
        raise DomainError("fixture must define P blocks for every action")
    p = np.stack([np.array(trans[a]) for a in range(n_actions)], axis=1)
    return TabularModel(p, np.array(rewards), gamma, np.array(rho), bounds)


def load_tabular_model(path) -> TabularModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tabular_model(fh.read())
