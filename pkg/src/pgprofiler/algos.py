"""Inner policy-gradient optimizers that the update gate wraps.

Four flavors, all pure transformations of their inputs (randomness enters
only through explicit seed material):

* REINFORCE with return-to-go weighting
* REINFORCE with a least-squares value baseline
* PPO's clipped-surrogate objective (first-order, minibatched)
* DDPG-lite: deterministic linear actor, linear-in-features critic, replay
  buffer, softly-updated targets

Function approximators are linear in explicit features throughout, so every
gradient here is analytic and is validated against finite differences in the
test suite. No autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policies
from .envs import Env, Trajectory
from .errors import DomainError, NumericError
from .policies import FeatureMap, PolicyParams
from .rng import as_path, substream

REINFORCE = "reinforce"
REINFORCE_BASELINE = "reinforce_baseline"
PPO = "ppo"
DDPG = "ddpg"

ALGO_KINDS = (REINFORCE, REINFORCE_BASELINE, PPO, DDPG)


@dataclass(frozen=True)
class AlgoConfig:
    """Inner-optimizer settings. Learning rate and round budget apply to all
    kinds; the remaining fields only matter for the kind that reads them.
    Defaults for PPO/DDPG follow the usual benchmark values (lr 3e-4 / 1e-3,
    clip 0.2, tau 0.005, exploration sigma 0.2)."""

    kind: str = REINFORCE
    learning_rate: float = 0.1
    steps_per_round: int = 1000
    # ppo
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    # ddpg
    buffer_size: int = 50_000
    batch_size: int = 100
    tau: float = 0.005
    noise_sigma: float = 0.2
    critic_lr: float = 1e-3
    noise_kind: str = "gaussian"  # or "ou"

    def __post_init__(self) -> None:
        if self.kind not in ALGO_KINDS:
            raise DomainError(f"unknown algorithm kind {self.kind!r}")
        if self.learning_rate < 0:
            raise DomainError("learning rate must be nonnegative")
        if self.steps_per_round < 1:
            raise DomainError("steps_per_round must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise DomainError("tau must lie in [0, 1]")


def default_algo_config(kind: str, **overrides) -> AlgoConfig:
    base = {
        REINFORCE: dict(learning_rate=0.1),
        REINFORCE_BASELINE: dict(learning_rate=0.1),
        PPO: dict(learning_rate=3e-4),
        DDPG: dict(learning_rate=1e-3, steps_per_round=500),
    }[kind]
    base.update(overrides)
    return AlgoConfig(kind=kind, **base)


# --- trajectory arithmetic --------------------------------------------------

def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum_{k>=t} gamma^(k-t) r_k."""
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _flatten(trajectories: list[Trajectory], gamma: float):
    """Per-step (features-input states, actions, gamma^t, returns-to-go)."""
    states, actions, discounts, rtgs = [], [], [], []
    for traj in trajectories:
        ln = len(traj)
        states.append(traj.states[:ln])
        actions.append(traj.actions)
        discounts.append(gamma ** np.arange(ln))
        rtgs.append(returns_to_go(traj.rewards, gamma))
    return (np.concatenate(states), np.concatenate(actions),
            np.concatenate(discounts), np.concatenate(rtgs))


_POLY_GATHER_CACHE: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]] = {}


def _poly_gather_plan(input_dim: int, degree: int):
    """Per-degree (column positions, variable-index matrix) pairs so each
    monomial block is a gather followed by a product, no exponentiation."""
    key = (input_dim, degree)
    if key not in _POLY_GATHER_CACHE:
        exps = policies._poly_exponents(input_dim, degree)
        plan = []
        for d in range(degree + 1):
            positions, indices = [], []
            for col, e in enumerate(exps):
                if sum(e) != d:
                    continue
                positions.append(col)
                idx = [j for j, p in enumerate(e) for _ in range(p)]
                indices.append(idx)
            plan.append((np.array(positions, dtype=np.int64),
                         np.array(indices, dtype=np.int64).reshape(len(positions), d)))
        _POLY_GATHER_CACHE[key] = plan
    return _POLY_GATHER_CACHE[key]


def features_batch(fmap: FeatureMap, states: np.ndarray) -> np.ndarray:
    """Row-per-state feature matrix, vectorized per feature kind."""
    if fmap.kind == policies.ONE_HOT:
        idx = np.asarray(states, dtype=np.int64).reshape(-1)
        return np.eye(fmap.input_dim)[idx]
    x = np.asarray(states, dtype=np.float64).reshape(len(states), -1)
    if fmap.kind == policies.IDENTITY:
        if not fmap.normalize:
            return x.copy()
        norms = np.sqrt((x * x).sum(axis=1))
        scale = np.where(norms > 1.0, norms, 1.0)
        return x / scale[:, None]
    feats = np.empty((x.shape[0], fmap.output_dim))
    for d, (positions, indices) in enumerate(
            _poly_gather_plan(fmap.input_dim, fmap.degree)):
        if d == 0:
            feats[:, positions] = 1.0
        elif d == 1:
            feats[:, positions] = x[:, indices[:, 0]]
        else:
            feats[:, positions] = np.prod(x[:, indices], axis=2)
    if fmap.normalize:
        norms = np.sqrt((feats * feats).sum(axis=1))
        scale = np.where(norms > 1.0, norms, 1.0)
        feats = feats / scale[:, None]
    return feats


def _softmax_probs(weights: np.ndarray, feats: np.ndarray) -> np.ndarray:
    logits = feats @ weights.T
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits: diverged parameters")
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _score_weights(params: PolicyParams, feats: np.ndarray,
                   actions: np.ndarray, sample_weights: np.ndarray) -> np.ndarray:
    """sum_n w_n * grad_theta log pi(a_n | s_n), flattened like theta."""
    family = params.family
    if family.kind == policies.SOFTMAX:
        probs = _softmax_probs(params.weight_matrix(), feats)
        coeff = -probs
        coeff[np.arange(len(actions)), actions.astype(np.int64)] += 1.0
        return np.einsum("n,na,nf->af", sample_weights, coeff, feats).reshape(-1)
    if family.kind == policies.GAUSSIAN:
        mean = feats @ params.weight_matrix().T
        std = params.stds()
        z = (np.asarray(actions, dtype=np.float64) - mean) / std
        grad_w = np.einsum("n,nd,nf->df", sample_weights, z / std, feats)
        if family.learn_log_std:
            grad_ls = sample_weights @ (z * z - 1.0)
            return np.concatenate([grad_w.reshape(-1), grad_ls])
        return grad_w.reshape(-1)
    raise DomainError("score function needs a stochastic policy family")


def log_probs_batch(params: PolicyParams, feats: np.ndarray,
                    actions: np.ndarray) -> np.ndarray:
    family = params.family
    if family.kind == policies.SOFTMAX:
        logits = feats @ params.weight_matrix().T
        if not np.isfinite(logits).all():
            raise NumericError("non-finite logits: diverged parameters")
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        return logits[np.arange(len(actions)), actions.astype(np.int64)] - lse
    if family.kind == policies.GAUSSIAN:
        mean = feats @ params.weight_matrix().T
        std = params.stds()
        z = (np.asarray(actions, dtype=np.float64) - mean) / std
        return (-0.5 * (z * z).sum(axis=1) - np.log(std).sum()
                - 0.5 * np.log(2.0 * np.pi) * family.action_dim)
    raise DomainError("log probabilities need a stochastic policy family")


def reinforce_gradient(params: PolicyParams, trajectories: list[Trajectory],
                       gamma: float) -> np.ndarray:
    """Mean over trajectories of sum_t gamma^t * score_t * return-to-go_t."""
    if not trajectories:
        raise DomainError("no trajectories to update from")
    states, actions, discounts, rtgs = _flatten(trajectories, gamma)
    feats = features_batch(params.family.feature_map, states)
    total = _score_weights(params, feats, actions, discounts * rtgs)
    return total / len(trajectories)


# --- REINFORCE ---------------------------------------------------------------

def reinforce_update(params: PolicyParams, trajectories: list[Trajectory],
                     gamma: float, cfg: AlgoConfig) -> PolicyParams:
    """One ascent step theta + eta * g_hat; the input is left untouched."""
    grad = reinforce_gradient(params, trajectories, gamma)
    return PolicyParams(params.theta + cfg.learning_rate * grad, params.family)


# --- linear critics ----------------------------------------------------------

@dataclass(frozen=True)
class CriticParams:
    """Linear-in-features value estimator (state or state-action)."""

    w: np.ndarray
    feature_map: FeatureMap

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if w.shape[0] != self.feature_map.output_dim:
            raise DomainError("critic weight length != feature dim")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "w", w)


def zero_critic(feature_map: FeatureMap) -> CriticParams:
    return CriticParams(np.zeros(feature_map.output_dim), feature_map)


def critic_values(critic: CriticParams, states: np.ndarray) -> np.ndarray:
    return features_batch(critic.feature_map, states) @ critic.w


def fit_critic(critic: CriticParams, states: np.ndarray,
               targets: np.ndarray) -> CriticParams:
    """Least-squares refit of the critic toward per-step targets."""
    feats = features_batch(critic.feature_map, states)
    w, *_ = np.linalg.lstsq(feats, targets, rcond=None)
    return CriticParams(w, critic.feature_map)


def v_feature_map(env: Env) -> FeatureMap:
    """Default state-value features: exact one-hot on tabular environments,
    quadratic monomials elsewhere."""
    from .envs import CHAIN
    if env.kind == CHAIN:
        return policies.one_hot_features(env.n_states)
    return policies.poly_features(env.spec.state_dim, 2, normalize=False)


def q_feature_map(env: Env) -> FeatureMap:
    """Default action-value features: quadratic monomials of (state, action)."""
    space = env.spec.action_space
    dim = env.spec.state_dim + space.dim
    return policies.poly_features(dim, 2, normalize=False)


# --- REINFORCE with baseline ---------------------------------------------------

def reinforce_baseline_update(
        params: PolicyParams, critic: CriticParams,
        trajectories: list[Trajectory], gamma: float,
        cfg: AlgoConfig) -> tuple[PolicyParams, CriticParams]:
    """Advantage-weighted score step with the pre-update critic as baseline,
    then a least-squares critic refit toward returns-to-go."""
    if not trajectories:
        raise DomainError("no trajectories to update from")
    states, actions, discounts, rtgs = _flatten(trajectories, gamma)
    feats = features_batch(params.family.feature_map, states)
    advantages = rtgs - critic_values(critic, states)
    grad = _score_weights(params, feats, actions, discounts * advantages) \
        / len(trajectories)
    new_params = PolicyParams(params.theta + cfg.learning_rate * grad,
                              params.family)
    new_critic = fit_critic(critic, states, rtgs)
    return new_params, new_critic


# --- PPO (clipped surrogate) ---------------------------------------------------

def clip_gradient_mask(advantages: np.ndarray, ratios: np.ndarray,
                       clip_ratio: float) -> np.ndarray:
    """Which samples still drive the clipped surrogate.

    min(r*A, clip(r)*A) has derivative A wrt r on the unclipped branch and 0
    once the clip is active on the improving side: a positive-advantage
    sample saturates above 1+c, a negative one below 1-c.
    """
    return np.where(advantages >= 0.0, ratios <= 1.0 + clip_ratio,
                    ratios >= 1.0 - clip_ratio)


def ppo_clip_update(params: PolicyParams, critic: CriticParams,
                    trajectories: list[Trajectory], gamma: float,
                    cfg: AlgoConfig,
                    seed_material: int | tuple[int, ...]
                    ) -> tuple[PolicyParams, CriticParams]:
    """Minibatch ascent on mean min(r*A, clip(r, 1-c, 1+c)*A).

    Old log-probs are taken under the incoming parameters (the data was
    collected on-policy). A clipped sample whose ratio sits outside the box
    on the wrong side contributes zero gradient. The critic is refit once,
    afterwards, toward returns-to-go.
    """
    if not trajectories:
        raise DomainError("no trajectories to update from")
    states, actions, _, rtgs = _flatten(trajectories, gamma)
    feats = features_batch(params.family.feature_map, states)
    advantages = rtgs - critic_values(critic, states)
    old_logp = log_probs_batch(params, feats, actions)
    n = feats.shape[0]
    c = cfg.clip_ratio
    gen = substream(*as_path(seed_material))
    theta = params.theta.copy()
    for _ in range(cfg.epochs):
        order = gen.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = order[start:start + cfg.minibatch]
            cur = PolicyParams(theta, params.family)
            logp = log_probs_batch(cur, feats[mb], actions[mb])
            ratio = np.exp(logp - old_logp[mb])
            if not np.isfinite(ratio).all():
                raise NumericError("non-finite likelihood ratio")
            adv = advantages[mb]
            alive = clip_gradient_mask(adv, ratio, c)
            weights = np.where(alive, ratio * adv, 0.0) / mb.shape[0]
            grad = _score_weights(cur, feats[mb], actions[mb], weights)
            theta = theta + cfg.learning_rate * grad
    new_critic = fit_critic(critic, states, rtgs)
    return PolicyParams(theta, params.family), new_critic


# --- replay buffer -------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity FIFO transition store (ring buffer)."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int) -> None:
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state, action, reward: float, next_state, done: bool) -> None:
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._dones[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Indices oldest-first."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return np.roll(np.arange(self.capacity), -self._cursor)

    def entries(self):
        """Transitions oldest-first (for inspection and tests)."""
        idx = self._order()
        return [(self._states[i].copy(), self._actions[i].copy(),
                 float(self._rewards[i]), self._next_states[i].copy(),
                 bool(self._dones[i])) for i in idx]

    def sample(self, batch_size: int, gen):
        idx = gen.integers(0, self._size, size=batch_size)
        return (self._states[idx], self._actions[idx], self._rewards[idx],
                self._next_states[idx], self._dones[idx])

    def snapshot(self) -> dict:
        return {
            "states": self._states.copy(), "actions": self._actions.copy(),
            "rewards": self._rewards.copy(),
            "next_states": self._next_states.copy(),
            "dones": self._dones.copy(), "cursor": self._cursor,
            "size": self._size,
        }

    def restore(self, snap: dict) -> None:
        self._states = snap["states"].copy()
        self._actions = snap["actions"].copy()
        self._rewards = snap["rewards"].copy()
        self._next_states = snap["next_states"].copy()
        self._dones = snap["dones"].copy()
        self._cursor = snap["cursor"]
        self._size = snap["size"]


# --- DDPG-lite -----------------------------------------------------------------

def soft_update(online: np.ndarray, target: np.ndarray, tau: float) -> np.ndarray:
    """tau * online + (1 - tau) * target."""
    online = np.asarray(online, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if online.shape != target.shape:
        raise DomainError("soft_update length mismatch")
    if not 0.0 <= tau <= 1.0:
        raise DomainError("tau must lie in [0, 1]")
    return tau * online + (1.0 - tau) * target


@dataclass(frozen=True)
class DdpgState:
    """Actor/critic pair plus their slowly-tracking target copies."""

    actor: PolicyParams
    critic: CriticParams
    target_actor: np.ndarray
    target_critic: np.ndarray


def init_ddpg_state(actor: PolicyParams, critic: CriticParams) -> DdpgState:
    return DdpgState(actor, critic, actor.theta.copy(), critic.w.copy())


_POLY_DERIV_CACHE: dict[tuple[int, int], list[np.ndarray]] = {}


def poly_derivative_ops(fmap: FeatureMap) -> list[np.ndarray]:
    """Matrices D_j with d phi / d x_j = D_j @ phi(x).

    Differentiating a monomial drops one exponent, which lands back inside
    the same degree-bounded basis, so each partial derivative is an exact
    linear map on the feature vector. Lets batched Q-gradients stay in
    matrix algebra.
    """
    if fmap.kind != policies.POLY or fmap.normalize:
        raise DomainError("derivative ops need unnormalized poly features")
    key = (fmap.input_dim, fmap.degree)
    if key not in _POLY_DERIV_CACHE:
        exps = policies._poly_exponents(fmap.input_dim, fmap.degree)
        index = {e: i for i, e in enumerate(exps)}
        ops = []
        for j in range(fmap.input_dim):
            d = np.zeros((len(exps), len(exps)))
            for i, e in enumerate(exps):
                if e[j] == 0:
                    continue
                reduced = list(e)
                reduced[j] -= 1
                d[i, index[tuple(reduced)]] = float(e[j])
            ops.append(d)
        _POLY_DERIV_CACHE[key] = ops
    return _POLY_DERIV_CACHE[key]


def ddpg_update(state: DdpgState, buffer: ReplayBuffer, gamma: float,
                cfg: AlgoConfig, action_bounds: tuple[np.ndarray, np.ndarray],
                seed_material: int | tuple[int, ...]) -> DdpgState | None:
    """One minibatch step of DDPG-lite; ``None`` when the buffer is underfull.

    Critic regresses toward r + gamma * Q_target(s', clip(mu_target(s')));
    the actor ascends grad_a Q(s, a) at the clipped actor action, chained
    through the linear actor map. Targets then take a tau-soft step.
    """
    if len(buffer) < cfg.batch_size:
        return None
    gen = substream(*as_path(seed_material))
    states, actions, rewards, next_states, dones = buffer.sample(
        cfg.batch_size, gen)
    lo, hi = action_bounds
    actor_fmap = state.actor.family.feature_map
    q_fmap = state.critic.feature_map

    # critic step
    next_feats = features_batch(actor_fmap, next_states)
    target_w_mat = state.target_actor.reshape(state.actor.weight_matrix().shape)
    next_actions = np.clip(next_feats @ target_w_mat.T, lo, hi)
    q_next_feats = features_batch(q_fmap, np.hstack([next_states, next_actions]))
    y = rewards + gamma * (1.0 - dones) * (q_next_feats @ state.target_critic)
    q_feats = features_batch(q_fmap, np.hstack([states, actions]))
    resid = q_feats @ state.critic.w - y
    critic_grad = (2.0 / cfg.batch_size) * (q_feats.T @ resid)
    new_critic_w = state.critic.w - cfg.critic_lr * critic_grad
    if not np.isfinite(new_critic_w).all():
        raise NumericError("critic diverged")

    # actor step through the new critic
    actor_feats = features_batch(actor_fmap, states)
    mu = np.clip(actor_feats @ state.actor.weight_matrix().T, lo, hi)
    phi_mu = features_batch(q_fmap, np.hstack([states, mu]))
    derivs = poly_derivative_ops(q_fmap)
    s_dim = states.shape[1]
    # dQ/da_j = (D_{s_dim+j}^T w) . phi(s, mu(s)), batched per column
    dq_da = np.stack([phi_mu @ (derivs[s_dim + j].T @ new_critic_w)
                      for j in range(mu.shape[1])], axis=1)
    actor_grad = dq_da.T @ actor_feats / cfg.batch_size
    new_actor_theta = state.actor.theta \
        + cfg.learning_rate * actor_grad.reshape(-1)
    if not np.isfinite(new_actor_theta).all():
        raise NumericError("actor diverged")

    new_actor = PolicyParams(new_actor_theta, state.actor.family)
    new_critic = CriticParams(new_critic_w, q_fmap)
    return DdpgState(
        actor=new_actor,
        critic=new_critic,
        target_actor=soft_update(new_actor_theta, state.target_actor, cfg.tau),
        target_critic=soft_update(new_critic_w, state.target_critic, cfg.tau),
    )


class OuNoise:
    """Ornstein-Uhlenbeck exploration noise (optional alternative to the
    default white Gaussian noise)."""

    def __init__(self, dim: int, sigma: float, theta: float = 0.15,
                 dt: float = 1.0) -> None:
        self.dim = dim
        self.sigma = sigma
        self.theta = theta
        self.dt = dt
        self.state = np.zeros(dim)

    def reset(self) -> None:
        self.state = np.zeros(self.dim)

    def sample(self, gen) -> np.ndarray:
        self.state = (self.state
                      - self.theta * self.state * self.dt
                      + self.sigma * np.sqrt(self.dt) * gen.standard_normal(self.dim))
        return self.state.copy()
