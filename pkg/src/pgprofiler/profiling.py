"""The update gate: propose a candidate, score candidates, keep the best.

Each round, an inner optimizer produces a candidate parameter vector from
exactly ``steps_per_round`` fresh environment steps. The gate then estimates
the return of a small candidate set and keeps the argmax:

* ``vanilla`` -- candidate always accepted (estimates logged only)
* ``lb``      -- lookback: best of {current, candidate}
* ``mu``      -- mixup: best of {current, lambda-blend}
* ``tp``      -- three-points: best of {current, candidate, blend}

Ties (and any candidate that fails numerically, which scores -inf) resolve
to the current parameters, so a round can never select something that
scored below the incumbent. Candidates are ordered (old, new, mix) and the
argmax keeps the earliest of equal scores.

Evaluation seeds are shared across candidates within a round (common random
numbers) unless ``independent_eval_seeds`` is set; training and evaluation
always live in disjoint stream subtrees, which is what makes the vanilla
wrapper bit-identical to the unwrapped inner algorithm.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import algos, oracle, policies
from .envs import CHAIN, BoxSpace, Env, Trajectory, return_bound, rollout
from .errors import DomainError, NumericError
from .estimation import ReturnEstimate, estimate_return
from .policies import PolicyParams, mix_params
from .rng import EVAL, RESET, TRAIN, substream

VANILLA = "vanilla"
LOOKBACK = "lb"
MIXUP = "mu"
THREE_POINTS = "tp"

VARIANTS = (VANILLA, LOOKBACK, MIXUP, THREE_POINTS)

# sub-tags under TRAIN / EVAL
_EPISODE = 1
_UPDATE = 2
_NOISE = 3
_LAMBDA = 4


@dataclass(frozen=True)
class ProfilingConfig:
    variant: str = LOOKBACK
    eval_rollouts: int = 5
    lambda_mode: str = "fixed"  # or "beta"
    mix_lambda: float = 0.5
    beta_a: float = 2.0
    beta_b: float = 2.0
    epsilon: float = 1.0
    delta: float = 0.1
    total_rounds: int = 20
    reuse_eval_samples: bool = False
    rollback_scope: str = "actor"  # or "full"
    independent_eval_seeds: bool = False
    eval_mode: str = "mc"  # or "oracle" (tabular-only test mode)
    cache_old_estimate: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")
        if self.eval_rollouts < 1:
            raise DomainError("eval_rollouts must be >= 1")
        if self.lambda_mode not in ("fixed", "beta"):
            raise DomainError("lambda_mode must be 'fixed' or 'beta'")
        if self.lambda_mode == "fixed" and not 0.0 <= self.mix_lambda <= 1.0:
            raise DomainError("fixed lambda must lie in [0, 1]")
        if self.total_rounds < 1:
            raise DomainError("total_rounds must be >= 1")
        if self.rollback_scope not in ("actor", "full"):
            raise DomainError("rollback_scope must be 'actor' or 'full'")
        if self.eval_mode not in ("mc", "oracle"):
            raise DomainError("eval_mode must be 'mc' or 'oracle'")
        if self.epsilon <= 0 or not 0.0 < self.delta < 1.0:
            raise DomainError("need epsilon > 0 and delta in (0, 1)")

    @property
    def candidate_count(self) -> int:
        return 3 if self.variant == THREE_POINTS else 2


@dataclass
class CandidateEval:
    tag: str  # "old" | "new" | "mix"
    params: PolicyParams
    estimate: ReturnEstimate | None = None
    failed: bool = False

    @property
    def score(self) -> float:
        if self.failed or self.estimate is None:
            return float("-inf")
        return self.estimate.j_hat


@dataclass
class RoundRecord:
    round_index: int
    j_hat: dict[str, float]
    selected: str
    env_steps: int
    eval_steps: int
    selected_checksum: str
    mix_lambda: float | None = None
    oracle_j: float | None = None
    wall_ms: float | None = None


def _checksum(params: PolicyParams) -> str:
    return f"{zlib.crc32(params.theta.tobytes()) & 0xFFFFFFFF:08x}"


def default_policy_family(env: Env, algo_kind: str) -> policies.PolicyFamily:
    """The policy family the harness trains on each environment."""
    space = env.spec.action_space
    if isinstance(space, BoxSpace):
        fmap = policies.identity_features(env.spec.state_dim)
        if algo_kind == algos.DDPG:
            return policies.deterministic_family(fmap, space.dim)
        return policies.gaussian_family(fmap, space.dim, learn_log_std=True,
                                        fixed_std=0.5)
    if env.kind == CHAIN:
        fmap = policies.one_hot_features(env.n_states)
    else:
        fmap = policies.identity_features(env.spec.state_dim)
    return policies.softmax_family(fmap, space.n)


# --- trainers ----------------------------------------------------------------


class OnPolicyTrainer:
    """Collects episodes worth exactly ``steps_per_round`` env steps, then
    applies one REINFORCE / baseline / PPO update."""

    def __init__(self, env: Env, cfg: algos.AlgoConfig, root_seed: int) -> None:
        if cfg.kind not in (algos.REINFORCE, algos.REINFORCE_BASELINE,
                            algos.PPO):
            raise DomainError(f"{cfg.kind} is not an on-policy trainer")
        self.env = env
        self.cfg = cfg
        self.root = root_seed
        self.episode_counter = 0
        self.update_counter = 0
        self.critic = None
        if cfg.kind in (algos.REINFORCE_BASELINE, algos.PPO):
            self.critic = algos.zero_critic(algos.v_feature_map(env))
        self._pending: list[Trajectory] = []

    def collect(self, params: PolicyParams) -> list[Trajectory]:
        budget = self.cfg.steps_per_round
        trajs = []
        while budget > 0:
            tr = rollout(self.env, params,
                         (self.root, TRAIN, _EPISODE, self.episode_counter),
                         max_steps=budget)
            self.episode_counter += 1
            budget -= len(tr)
            trajs.append(tr)
        return trajs

    def propose(self, params: PolicyParams, round_index: int) -> PolicyParams:
        data = self._pending + self.collect(params)
        self._pending = []
        gamma = self.env.spec.gamma
        if self.cfg.kind == algos.REINFORCE:
            return algos.reinforce_update(params, data, gamma, self.cfg)
        if self.cfg.kind == algos.REINFORCE_BASELINE:
            new_params, self.critic = algos.reinforce_baseline_update(
                params, self.critic, data, gamma, self.cfg)
            return new_params
        seed = (self.root, TRAIN, _UPDATE, self.update_counter)
        self.update_counter += 1
        new_params, self.critic = algos.ppo_clip_update(
            params, self.critic, data, gamma, self.cfg, seed)
        return new_params

    def feed_eval_trajectories(self, trajs: list[Trajectory]) -> None:
        self._pending = list(trajs)

    def snapshot(self) -> dict:
        return {"critic": self.critic, "pending": list(self._pending)}

    def restore(self, snap: dict) -> None:
        self.critic = snap["critic"]
        self._pending = list(snap["pending"])


class DdpgTrainer:
    """Off-policy trainer: a persistent exploration episode feeds a replay
    buffer; one minibatch update per environment step once the buffer can
    fill a batch. Critic, targets and buffer persist across rounds; only the
    actor follows the gate's accept/reject decisions."""

    def __init__(self, env: Env, cfg: algos.AlgoConfig, root_seed: int) -> None:
        if cfg.kind != algos.DDPG:
            raise DomainError("DdpgTrainer needs a ddpg config")
        space = env.spec.action_space
        if not isinstance(space, BoxSpace):
            raise DomainError("DDPG needs a continuous action space")
        self.env = env
        self.cfg = cfg
        self.root = root_seed
        self.bounds = (np.array(space.low), np.array(space.high))
        self.buffer = algos.ReplayBuffer(cfg.buffer_size, env.spec.state_dim,
                                         space.dim)
        self.critic = algos.zero_critic(algos.q_feature_map(env))
        self.target_actor: np.ndarray | None = None
        self.target_critic = self.critic.w.copy()
        self.update_counter = 0
        self.reset_counter = 0
        self._obs = None
        self._noise_stream = substream(root_seed, TRAIN, _NOISE)
        self._ou = (algos.OuNoise(space.dim, cfg.noise_sigma)
                    if cfg.noise_kind == "ou" else None)

    def _explore_noise(self) -> np.ndarray:
        if self._ou is not None:
            return self._ou.sample(self._noise_stream)
        return self.cfg.noise_sigma * self._noise_stream.standard_normal(
            self.bounds[0].shape[0])

    def propose(self, params: PolicyParams, round_index: int) -> PolicyParams:
        if self.target_actor is None:
            self.target_actor = params.theta.copy()
        state = algos.DdpgState(params, self.critic, self.target_actor,
                                self.target_critic)
        lo, hi = self.bounds
        horizon = self.env.spec.horizon
        for _ in range(self.cfg.steps_per_round):
            if self._obs is None or self.env.done:
                self._obs = self.env.reset(
                    (self.root, TRAIN, RESET, self.reset_counter))
                self.reset_counter += 1
                if self._ou is not None:
                    self._ou.reset()
            action = np.clip(
                policies.mean_action(state.actor, self._obs)
                + self._explore_noise(), lo, hi)
            obs2, reward, done = self.env.step(action)
            terminal = done and self.env._steps < horizon
            self.buffer.add(self._obs, action, reward, obs2, terminal)
            self._obs = obs2
            updated = algos.ddpg_update(
                state, self.buffer, self.env.spec.gamma, self.cfg,
                self.bounds, (self.root, TRAIN, _UPDATE, self.update_counter))
            self.update_counter += 1
            if updated is not None:
                state = updated
        self.critic = state.critic
        self.target_actor = state.target_actor
        self.target_critic = state.target_critic
        return state.actor

    def feed_eval_trajectories(self, trajs: list[Trajectory]) -> None:
        for tr in trajs:
            ln = len(tr)
            for t in range(ln):
                terminal = (t == ln - 1) and not tr.truncated
                self.buffer.add(tr.states[t], tr.actions[t],
                                float(tr.rewards[t]), tr.states[t + 1],
                                terminal)

    def snapshot(self) -> dict:
        return {
            "critic": self.critic,
            "target_actor": None if self.target_actor is None
            else self.target_actor.copy(),
            "target_critic": self.target_critic.copy(),
            "buffer": self.buffer.snapshot(),
            "ou": None if self._ou is None else self._ou.state.copy(),
        }

    def restore(self, snap: dict) -> None:
        self.critic = snap["critic"]
        self.target_actor = snap["target_actor"]
        self.target_critic = snap["target_critic"].copy()
        self.buffer.restore(snap["buffer"])
        if self._ou is not None and snap["ou"] is not None:
            self._ou.state = snap["ou"].copy()


def make_trainer(env: Env, cfg: algos.AlgoConfig, root_seed: int):
    if cfg.kind == algos.DDPG:
        return DdpgTrainer(env, cfg, root_seed)
    return OnPolicyTrainer(env, cfg, root_seed)


# --- candidate construction and selection -------------------------------------


def draw_lambda(cfg: ProfilingConfig, seed: int, round_index: int) -> float:
    """Round mix weight: the configured constant, or one Beta draw per round."""
    if cfg.lambda_mode == "fixed":
        return cfg.mix_lambda
    gen = substream(seed, EVAL, _LAMBDA, round_index)
    return float(gen.beta(cfg.beta_a, cfg.beta_b))


def build_candidates(old: PolicyParams, new: PolicyParams,
                     cfg: ProfilingConfig,
                     lam: float | None) -> list[CandidateEval]:
    """Candidate list per variant, ordered (old, new, mix). A blend that
    cannot be formed (non-finite candidate) is carried as failed."""
    if old.family != new.family:
        raise DomainError("candidates must share a policy family")
    entries = [CandidateEval("old", old)]
    if cfg.variant in (VANILLA, LOOKBACK, THREE_POINTS):
        entries.append(CandidateEval("new", new))
    if cfg.variant in (MIXUP, THREE_POINTS):
        if lam is None:
            raise DomainError("mix variants need a lambda")
        try:
            entries.append(CandidateEval("mix", mix_params(old, new, lam)))
        except NumericError:
            entries.append(CandidateEval("mix", new, failed=True))
    return entries


def select(candidates: list[CandidateEval]) -> CandidateEval:
    """Argmax of the estimates; equal scores keep the earliest entry, and the
    incumbent is first, so exact ties return the incumbent."""
    if not candidates:
        raise DomainError("empty candidate set")
    best = candidates[0]
    for cand in candidates[1:]:
        if cand.score > best.score:
            best = cand
    return best


# --- the training loop ---------------------------------------------------------


def _evaluate(env: Env, cand: CandidateEval, cfg: ProfilingConfig, seed: int,
              round_index: int, position: int, model) -> None:
    """Fill in the candidate's estimate; numeric failures score -inf."""
    if cand.failed:
        return
    if cfg.eval_mode == "oracle":
        pi = policies.policy_matrix(cand.params, env.n_states)
        _, j = oracle.exact_policy_value(model, pi)
        cand.estimate = ReturnEstimate(j, 1, 0.0, 0.0, return_bound(env.spec))
        return
    if cfg.independent_eval_seeds:
        base = (seed, EVAL, round_index, position)
    else:
        base = (seed, EVAL, round_index)
    delta_pt = cfg.delta / (cfg.candidate_count * cfg.total_rounds)
    try:
        cand.estimate = estimate_return(
            cand.params, env, cfg.eval_rollouts, base,
            delta_per_test=delta_pt, keep_trajectories=True)
    except NumericError:
        cand.failed = True


def profiled_train(env: Env, algo_cfg: algos.AlgoConfig,
                   prof_cfg: ProfilingConfig, seed: int,
                   initial_params: PolicyParams | None = None,
                   log_oracle: bool = False,
                   record_wall: bool = False,
                   trainer=None) -> list[RoundRecord]:
    """Run ``total_rounds`` of propose -> evaluate -> select -> continue.

    Returns one record per round. ``log_oracle`` adds the exact value of the
    selected parameters on tabular environments. Reruns with identical
    arguments produce identical records (modulo ``wall_ms``). A pre-built
    ``trainer`` may be injected for tests that inspect its side state.
    """
    if trainer is None:
        trainer = make_trainer(env, algo_cfg, seed)
    params = initial_params if initial_params is not None else \
        policies.init_params(default_policy_family(env, algo_cfg.kind))
    need_oracle = log_oracle or prof_cfg.eval_mode == "oracle"
    model = None
    if need_oracle:
        if env.kind != CHAIN:
            if prof_cfg.eval_mode == "oracle":
                raise DomainError("oracle evaluation needs a tabular env")
        else:
            model = oracle.from_env(env)
    if prof_cfg.eval_mode == "oracle" and model is None:
        raise DomainError("oracle evaluation needs a tabular env")

    records: list[RoundRecord] = []
    cached_old: ReturnEstimate | None = None
    for t in range(prof_cfg.total_rounds):
        t0 = time.perf_counter()
        snap = trainer.snapshot() if prof_cfg.rollback_scope == "full" else None
        theta_new = trainer.propose(params, t)
        lam = None
        if prof_cfg.variant in (MIXUP, THREE_POINTS):
            lam = draw_lambda(prof_cfg, seed, t)
        candidates = build_candidates(params, theta_new, prof_cfg, lam)
        for pos, cand in enumerate(candidates):
            if (cand.tag == "old" and cached_old is not None
                    and prof_cfg.cache_old_estimate
                    and prof_cfg.independent_eval_seeds):
                cand.estimate = cached_old
                continue
            _evaluate(env, cand, prof_cfg, seed, t, pos, model)
        if prof_cfg.variant == VANILLA:
            chosen = next(c for c in candidates if c.tag == "new")
        else:
            chosen = select(candidates)

        if chosen.tag == "old" and snap is not None:
            trainer.restore(snap)
        if (prof_cfg.reuse_eval_samples and prof_cfg.variant != VANILLA
                and chosen.estimate is not None
                and chosen.estimate.trajectories):
            trainer.feed_eval_trajectories(chosen.estimate.trajectories)

        eval_steps = sum(
            sum(len(tr) for tr in c.estimate.trajectories)
            for c in candidates
            if c.estimate is not None and c.estimate.trajectories)
        params = chosen.params
        cached_old = chosen.estimate

        oracle_j = None
        if log_oracle and model is not None:
            _, oracle_j = oracle.exact_policy_value(
                model, policies.policy_matrix(params, env.n_states))
        records.append(RoundRecord(
            round_index=t,
            j_hat={c.tag: c.score for c in candidates},
            selected=chosen.tag,
            env_steps=algo_cfg.steps_per_round + eval_steps,
            eval_steps=eval_steps,
            selected_checksum=_checksum(params),
            mix_lambda=lam,
            oracle_j=oracle_j,
            wall_ms=(time.perf_counter() - t0) * 1e3 if record_wall else None,
        ))
        # estimates are kept only for the round; drop retained trajectories
        for c in candidates:
            if c.estimate is not None and c is not chosen:
                c.estimate.trajectories = None
    return records


def train_unwrapped(env: Env, algo_cfg: algos.AlgoConfig, rounds: int,
                    seed: int,
                    initial_params: PolicyParams | None = None
                    ) -> list[PolicyParams]:
    """The inner algorithm alone: the per-round parameter trajectory the
    vanilla wrapper must reproduce bit-for-bit."""
    trainer = make_trainer(env, algo_cfg, seed)
    params = initial_params if initial_params is not None else \
        policies.init_params(default_policy_family(env, algo_cfg.kind))
    out = []
    for t in range(rounds):
        params = trainer.propose(params, t)
        out.append(params)
    return out


def variant_dominance_check(records: list[RoundRecord]) -> list[tuple[float, float, float]]:
    """From three-points records, the per-round selected estimates each
    variant would have produced on the same candidates and evaluation seeds.

    Returns (tp, lb, mu) triples and raises if three-points does not
    dominate; the candidate sets are nested, so its argmax can never lose.
    """
    triples = []
    for rec in records:
        if set(rec.j_hat) != {"old", "new", "mix"}:
            raise DomainError("dominance check needs three-points records")
        j_old, j_new, j_mix = (rec.j_hat["old"], rec.j_hat["new"],
                               rec.j_hat["mix"])
        lb = j_new if j_new > j_old else j_old
        mu = j_mix if j_mix > j_old else j_old
        tp = max(j_old, j_new, j_mix)
        if tp < lb or tp < mu:
            raise AssertionError(
                f"round {rec.round_index}: three-points selection "
                f"{tp} below lookback {lb} or mixup {mu}")
        triples.append((tp, lb, mu))
    return triples
