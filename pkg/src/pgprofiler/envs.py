"""Built-in environments, trajectory rollout, and return arithmetic.

Three desk-scale environments share one interface:

* ``ChainMdp``          -- tabular chain, 2 actions, reward only on the
                           rightmost self-loop; exact oracles exist for it.
* ``CartPole``          -- classic cart-pole balancing, Euler integration at
                           dt=0.02, +1 reward per step, 12 degree / 2.4 m
                           termination limits.
* ``PointMassReacher``  -- 2-D double integrator, acceleration actions in
                           [-1, 1]^2, reward -min(2, distance to target).

Environments are stateful, single-threaded objects: ``reset(seed_material)``
starts an episode on a fresh counter-based stream and ``step(action)``
advances it. ``rollout`` runs whole episodes through the batch kernels; the
stream layout is [reset draws][per-step draws] (see ``rng``), so a rollout is
a pure function of (environment kind and settings, policy, seed path).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import cos, sin, sqrt

import numpy as np

from . import _kernels as kernels
from . import policies
from ._kernels.pure import (CP_DT, CP_FORCE_MAG, CP_GRAVITY, CP_LENGTH,
                            CP_MASSPOLE, CP_POLEMASS_LENGTH, CP_RESET_SCALE,
                            CP_THETA_LIMIT, CP_TOTAL_MASS, CP_X_LIMIT)
from .errors import DomainError, NumericError
from .rng import as_path, substream

CHAIN = "chain"
CARTPOLE = "cartpole"
REACHER = "reacher"


@dataclass(frozen=True)
class DiscreteSpace:
    n: int


@dataclass(frozen=True)
class BoxSpace:
    dim: int
    low: tuple[float, ...]
    high: tuple[float, ...]


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_space: DiscreteSpace | BoxSpace
    gamma: float
    horizon: int
    reward_bounds: tuple[float, float]

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma {self.gamma} outside [0, 1)")
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if self.reward_bounds[0] > self.reward_bounds[1]:
            raise DomainError("reward bounds out of order")


@dataclass
class Trajectory:
    """One episode: states s_0..s_L (one more than executed steps), actions,
    rewards, and whether the episode was cut by the horizon rather than by a
    terminal state."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    truncated: bool

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def final_state(self):
        return self.states[-1]


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """Sum of gamma^t * r_t over the trajectory (Horner evaluation)."""
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma {gamma} outside [0, 1)")
    acc = 0.0
    for r in traj.rewards[::-1]:
        acc = float(r) + gamma * acc
    return acc


def return_bound(spec: MdpSpec) -> float:
    """Upper bound on the range of any horizon-truncated return:
    (r_max - r_min) * (1 - gamma^H) / (1 - gamma)."""
    r_lo, r_hi = spec.reward_bounds
    if spec.gamma == 0.0:
        return r_hi - r_lo
    return (r_hi - r_lo) * (1.0 - spec.gamma**spec.horizon) / (1.0 - spec.gamma)


class Env:
    """Common stepping machinery; subclasses define dynamics and reset."""

    kind: str
    spec: MdpSpec

    def __init__(self) -> None:
        self._rng = None
        self._state = None
        self._steps = 0
        self._done = True

    # -- public stepping API ------------------------------------------------
    def reset(self, seed_material: int | tuple[int, ...]):
        self._rng = substream(*as_path(seed_material))
        self._state = self._draw_initial(self._rng)
        self._steps = 0
        self._done = False
        return self._observe()

    def step(self, action):
        if self._rng is None:
            raise DomainError("step before reset")
        if self._done:
            raise DomainError("step on a finished episode")
        action = self._validate_action(action)
        next_state, reward, terminal = self._transition(self._state, action,
                                                        self._rng)
        lo, hi = self.spec.reward_bounds
        if not lo <= reward <= hi:
            raise NumericError(f"reward {reward} outside declared bounds")
        self._state = next_state
        self._steps += 1
        if terminal or self._steps >= self.spec.horizon:
            self._done = True
        return self._observe(), reward, self._done

    @property
    def done(self) -> bool:
        return self._done

    def _observe(self):
        if isinstance(self._state, np.ndarray):
            return self._state.copy()
        return self._state

    # -- hooks ---------------------------------------------------------------
    def _draw_initial(self, gen):
        raise NotImplementedError

    def _transition(self, state, action, gen):
        raise NotImplementedError

    def _validate_action(self, action):
        space = self.spec.action_space
        if isinstance(space, DiscreteSpace):
            a = int(action)
            if not 0 <= a < space.n:
                raise DomainError(f"action {a} outside discrete({space.n})")
            return a
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != space.dim:
            raise DomainError(f"action dim {a.shape[0]} != {space.dim}")
        lo = np.array(space.low)
        hi = np.array(space.high)
        if np.any(a < lo) or np.any(a > hi):
            if not getattr(self, "clip_actions", False):
                raise DomainError(f"action {a} outside bounds; set clip_actions "
                                  "to clip instead")
            a = np.clip(a, lo, hi)
        return a


class ChainMdp(Env):
    """Deterministic chain: action 1 moves right, action 0 moves left, both
    saturating at the ends. Reward 1.0 only for taking action 1 in the last
    state (a self-loop); the start distribution is a point mass on state 0."""

    kind = CHAIN

    def __init__(self, n_states: int = 3, gamma: float = 0.9,
                 horizon: int = 100) -> None:
        super().__init__()
        if not 2 <= n_states <= 8:
            raise DomainError("ChainMdp supports 2..8 states")
        self.n_states = n_states
        self.spec = MdpSpec(1, DiscreteSpace(2), gamma, horizon, (0.0, 1.0))
        n = n_states
        trans = np.zeros((n, 2, n))
        rew = np.zeros((n, 2))
        for s in range(n):
            trans[s, 0, max(s - 1, 0)] = 1.0
            trans[s, 1, min(s + 1, n - 1)] = 1.0
        rew[n - 1, 1] = 1.0
        self.transitions = trans
        self.rewards = rew
        self.rho = np.zeros(n)
        self.rho[0] = 1.0

    def _draw_initial(self, gen):
        u = gen.random()
        acc = 0.0
        for s in range(self.n_states - 1):
            acc += self.rho[s]
            if u < acc:
                return s
        return self.n_states - 1

    def _transition(self, state, action, gen):
        reward = float(self.rewards[state, action])
        u = gen.random()
        row = self.transitions[state, action]
        acc = 0.0
        nxt = self.n_states - 1
        for s in range(self.n_states - 1):
            acc += row[s]
            if u < acc:
                nxt = s
                break
        return nxt, reward, False


class CartPole(Env):
    """Classic cart-pole with the standard physical constants (see the
    kernels module); reset draws each state component uniformly from
    [-0.05, 0.05]."""

    kind = CARTPOLE

    def __init__(self, gamma: float = 0.99, horizon: int = 200) -> None:
        super().__init__()
        self.spec = MdpSpec(4, DiscreteSpace(2), gamma, horizon, (0.0, 1.0))

    def _draw_initial(self, gen):
        u = gen.random(4)
        return -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * u

    def _transition(self, state, action, gen):
        x, xdot, theta, thetadot = (float(state[0]), float(state[1]),
                                    float(state[2]), float(state[3]))
        force = CP_FORCE_MAG if action == 1 else -CP_FORCE_MAG
        costh = cos(theta)
        sinth = sin(theta)
        temp = (force + CP_POLEMASS_LENGTH * thetadot * thetadot * sinth) \
            / CP_TOTAL_MASS
        thetaacc = (CP_GRAVITY * sinth - costh * temp) / (
            CP_LENGTH * (4.0 / 3.0 - CP_MASSPOLE * costh * costh
                         / CP_TOTAL_MASS))
        xacc = temp - CP_POLEMASS_LENGTH * thetaacc * costh / CP_TOTAL_MASS
        x = x + CP_DT * xdot
        xdot = xdot + CP_DT * xacc
        theta = theta + CP_DT * thetadot
        thetadot = thetadot + CP_DT * thetaacc
        nxt = np.array([x, xdot, theta, thetadot])
        terminal = (x < -CP_X_LIMIT or x > CP_X_LIMIT
                    or theta < -CP_THETA_LIMIT or theta > CP_THETA_LIMIT)
        return nxt, 1.0, terminal


class PointMassReacher(Env):
    """2-D double integrator steered toward a fixed target; reward is the
    negative distance to the target, floored at -2. Actions outside the
    acceleration box are rejected unless ``clip_actions`` is set."""

    kind = REACHER

    def __init__(self, gamma: float = 0.99, horizon: int = 100,
                 clip_actions: bool = False, dt: float = 0.1,
                 target: tuple[float, float] = (0.0, 0.0),
                 init_range: float = 1.0) -> None:
        super().__init__()
        self.spec = MdpSpec(4, BoxSpace(2, (-1.0, -1.0), (1.0, 1.0)), gamma,
                            horizon, (-2.0, 0.0))
        self.clip_actions = clip_actions
        self.dt = dt
        self.target = (float(target[0]), float(target[1]))
        self.init_range = init_range

    def _draw_initial(self, gen):
        u = gen.random(2)
        pos = -self.init_range + 2.0 * self.init_range * u
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def _transition(self, state, action, gen):
        px, py, vx, vy = (float(state[0]), float(state[1]), float(state[2]),
                          float(state[3]))
        vx = vx + self.dt * float(action[0])
        vy = vy + self.dt * float(action[1])
        px = px + self.dt * vx
        py = py + self.dt * vy
        ddx = px - self.target[0]
        ddy = py - self.target[1]
        dist = sqrt(ddx * ddx + ddy * ddy)
        reward = -min(dist, 2.0)
        return np.array([px, py, vx, vy]), reward, False


def make_env(kind: str, **overrides) -> Env:
    if kind == CHAIN:
        return ChainMdp(**overrides)
    if kind == CARTPOLE:
        return CartPole(**overrides)
    if kind == REACHER:
        return PointMassReacher(**overrides)
    raise DomainError(f"unknown environment kind {kind!r}")


def _check_compat(env: Env, params: policies.PolicyParams) -> None:
    space = env.spec.action_space
    family = params.family
    if isinstance(space, DiscreteSpace):
        if family.kind != policies.SOFTMAX or family.n_actions != space.n:
            raise DomainError("discrete environments need a softmax policy "
                              "with matching action count")
    else:
        if family.kind == policies.SOFTMAX or family.action_dim != space.dim:
            raise DomainError("continuous environments need a continuous "
                              "policy with matching action dim")


def _is_identity_norm(fmap: policies.FeatureMap, dim: int) -> bool:
    return (fmap.kind == policies.IDENTITY and fmap.input_dim == dim
            and fmap.normalize)


def rollout_batch(env: Env, params: policies.PolicyParams,
                  seed_paths: list[tuple[int, ...]],
                  max_steps: int | None = None) -> list[Trajectory]:
    """Roll out one episode per seed path; batches share one kernel call.

    ``max_steps`` lowers the horizon for this batch (used by trainers to hit
    an exact step budget). Results are bit-identical to calling ``rollout``
    per path.
    """
    _check_compat(env, params)
    if not np.isfinite(params.theta).all():
        raise NumericError("non-finite policy parameters")
    horizon = env.spec.horizon if max_steps is None else min(
        env.spec.horizon, max_steps)
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    n = len(seed_paths)
    family = params.family
    fmap = family.feature_map

    if env.kind == CHAIN and family.kind == policies.SOFTMAX:
        probs = policies.policy_matrix(params, env.n_states)
        u = np.stack([substream(*p).random(1 + 2 * horizon) for p in seed_paths])
        states = np.zeros((n, horizon + 1), dtype=np.int64)
        actions = np.zeros((n, horizon), dtype=np.int64)
        rewards = np.zeros((n, horizon))
        lengths = np.zeros(n, dtype=np.int64)
        kernels.tabular_rollouts(probs, env.transitions, env.rewards, env.rho,
                                 u, states, actions, rewards, lengths)
        return [Trajectory(states[k].copy(), actions[k].copy(),
                           rewards[k].copy(), truncated=True)
                for k in range(n)]

    if (env.kind == CARTPOLE and family.kind == policies.SOFTMAX
            and family.n_actions == 2 and _is_identity_norm(fmap, 4)):
        u = np.stack([substream(*p).random(4 + horizon) for p in seed_paths])
        states = np.zeros((n, horizon + 1, 4))
        actions = np.zeros((n, horizon), dtype=np.int64)
        rewards = np.zeros((n, horizon))
        lengths = np.zeros(n, dtype=np.int64)
        terminal = np.zeros(n, dtype=np.int64)
        kernels.cartpole_rollouts(params.weight_matrix(), u, states, actions,
                                  rewards, lengths, terminal)
        out = []
        for k in range(n):
            ln = int(lengths[k])
            out.append(Trajectory(states[k, :ln + 1].copy(),
                                  actions[k, :ln].copy(),
                                  rewards[k, :ln].copy(),
                                  truncated=not bool(terminal[k])))
        return out

    if (env.kind == REACHER and family.kind in (policies.DETERMINISTIC,
                                                policies.GAUSSIAN)
            and family.action_dim == 2 and _is_identity_norm(fmap, 4)):
        gens = [substream(*p) for p in seed_paths]
        u_reset = np.stack([g.random(2) for g in gens])
        if family.kind == policies.GAUSSIAN:
            stds = params.stds()
            normals = np.stack([g.standard_normal((horizon, 2)) for g in gens])
        else:
            stds = np.zeros(0)
            normals = np.zeros((n, 0, 2))
        states = np.zeros((n, horizon + 1, 4))
        actions = np.zeros((n, horizon, 2))
        rewards = np.zeros((n, horizon))
        lengths = np.zeros(n, dtype=np.int64)
        bad = kernels.reacher_rollouts(
            params.weight_matrix(), stds, bool(env.clip_actions), u_reset,
            normals, env.dt, env.target[0], env.target[1], -env.init_range,
            env.init_range, states, actions, rewards, lengths)
        if bad >= 0:
            raise DomainError("action outside bounds during rollout; set "
                              "clip_actions to clip instead")
        return [Trajectory(states[k].copy(), actions[k].copy(),
                           rewards[k].copy(), truncated=True)
                for k in range(n)]

    # Generic step-by-step fallback for feature maps or families without a
    # kernel. Consumes the stream in the same [reset][action, transition]
    # order as the kernels; does not disturb the env's public episode state.
    lo, hi = env.spec.reward_bounds
    out = []
    for path in seed_paths:
        gen = substream(*path)
        state = env._draw_initial(gen)
        states = [state]
        acts: list = []
        rews: list[float] = []
        terminal = False
        for _ in range(horizon):
            a = env._validate_action(
                policies.sample_action(params, state, gen))
            state, r, terminal = env._transition(state, a, gen)
            if not lo <= r <= hi:
                raise NumericError(f"reward {r} outside declared bounds")
            states.append(state)
            acts.append(a)
            rews.append(r)
            if terminal:
                break
        out.append(Trajectory(np.array(states), np.array(acts),
                              np.array(rews, dtype=np.float64),
                              truncated=not terminal))
    return out


def rollout(env: Env, params: policies.PolicyParams,
            seed_material: int | tuple[int, ...],
            max_steps: int | None = None) -> Trajectory:
    """Run one episode of ``env`` under ``params`` on the stream for
    ``seed_material``."""
    return rollout_batch(env, params, [as_path(seed_material)], max_steps)[0]
