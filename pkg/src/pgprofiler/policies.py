"""Linear policy families: softmax, Gaussian, and deterministic heads.

A policy is a flat float64 parameter vector ``theta`` plus an immutable
family descriptor. All three families act on a feature vector ``phi(state)``:

* ``softmax_linear``       -- theta reshaped (n_actions, F); logits = W phi
* ``gaussian_linear``      -- mean = W phi with an optional learned log-std
                              tail appended to theta (so parameter mixing
                              blends the stds too)
* ``deterministic_linear`` -- action = W phi exactly

Feature maps that feed a softmax head keep ``||phi|| <= 1`` by dividing by
``max(1, ||phi||)``, which caps the score-function norm at 2 for any state
and action.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, log, pi

import numpy as np

from .errors import DomainError, NumericError, UnsupportedPolicyOperation
from .rng import as_path, substream

SOFTMAX = "softmax_linear"
GAUSSIAN = "gaussian_linear"
DETERMINISTIC = "deterministic_linear"

IDENTITY = "identity"
ONE_HOT = "one_hot"
POLY = "poly"

_LOG_2PI = log(2.0 * pi)


@lru_cache(maxsize=None)
def _poly_exponents(input_dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples for all monomials of total degree <= degree."""
    exps = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(input_dim), d):
            e = [0] * input_dim
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
    return tuple(exps)


@dataclass(frozen=True)
class FeatureMap:
    """State featurizer. ``normalize`` rescales outputs into the unit ball."""

    kind: str
    input_dim: int
    degree: int = 0
    normalize: bool = True

    @property
    def output_dim(self) -> int:
        if self.kind == IDENTITY:
            return self.input_dim
        if self.kind == ONE_HOT:
            return self.input_dim
        if self.kind == POLY:
            return comb(self.input_dim + self.degree, self.degree)
        raise DomainError(f"unknown feature map kind {self.kind!r}")

    def __call__(self, state) -> np.ndarray:
        if self.kind == ONE_HOT:
            phi = np.zeros(self.input_dim)
            phi[int(state)] = 1.0
            return phi
        x = np.asarray(state, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise DomainError(
                f"state dim {x.shape[0]} != feature input dim {self.input_dim}")
        if self.kind == IDENTITY:
            phi = x.copy()
        elif self.kind == POLY:
            phi = np.array([np.prod(x**np.array(e)) for e in
                            _poly_exponents(self.input_dim, self.degree)])
        else:
            raise DomainError(f"unknown feature map kind {self.kind!r}")
        if self.normalize:
            norm = float(np.sqrt(np.dot(phi, phi)))
            if norm > 1.0:
                phi = phi / norm
        return phi


def identity_features(input_dim: int, normalize: bool = True) -> FeatureMap:
    return FeatureMap(IDENTITY, input_dim, normalize=normalize)


def one_hot_features(n_states: int) -> FeatureMap:
    return FeatureMap(ONE_HOT, n_states)


def poly_features(input_dim: int, degree: int, normalize: bool = True) -> FeatureMap:
    return FeatureMap(POLY, input_dim, degree=degree, normalize=normalize)


@dataclass(frozen=True)
class PolicyFamily:
    kind: str
    feature_map: FeatureMap
    n_actions: int = 0
    action_dim: int = 0
    learn_log_std: bool = False
    fixed_std: float = 1.0

    @property
    def param_count(self) -> int:
        f = self.feature_map.output_dim
        if self.kind == SOFTMAX:
            return self.n_actions * f
        if self.kind == GAUSSIAN:
            return self.action_dim * f + (self.action_dim if self.learn_log_std else 0)
        if self.kind == DETERMINISTIC:
            return self.action_dim * f
        raise DomainError(f"unknown policy family kind {self.kind!r}")

    @property
    def stochastic(self) -> bool:
        return self.kind in (SOFTMAX, GAUSSIAN)


def softmax_family(feature_map: FeatureMap, n_actions: int) -> PolicyFamily:
    if not feature_map.normalize and feature_map.kind != ONE_HOT:
        raise DomainError("softmax families require normalized features")
    return PolicyFamily(SOFTMAX, feature_map, n_actions=n_actions)


def gaussian_family(feature_map: FeatureMap, action_dim: int,
                    learn_log_std: bool = True, fixed_std: float = 1.0) -> PolicyFamily:
    return PolicyFamily(GAUSSIAN, feature_map, action_dim=action_dim,
                        learn_log_std=learn_log_std, fixed_std=fixed_std)


def deterministic_family(feature_map: FeatureMap, action_dim: int) -> PolicyFamily:
    return PolicyFamily(DETERMINISTIC, feature_map, action_dim=action_dim)


@dataclass(frozen=True)
class PolicyParams:
    """Immutable parameter vector. Only the length is checked here; updates
    may transiently produce non-finite entries, which ``act``/``rollout``
    reject with :class:`NumericError` when such a policy is exercised."""

    theta: np.ndarray
    family: PolicyFamily

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape[0] != self.family.param_count:
            raise DomainError(
                f"theta length {theta.shape[0]} != param_count "
                f"{self.family.param_count}")
        theta = theta.copy()
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def weight_matrix(self) -> np.ndarray:
        """theta's linear-map block reshaped to (outputs, features)."""
        f = self.family.feature_map.output_dim
        rows = self.family.n_actions or self.family.action_dim
        return self.theta[: rows * f].reshape(rows, f)

    def stds(self) -> np.ndarray:
        if self.family.kind != GAUSSIAN:
            raise UnsupportedPolicyOperation("stds: not a Gaussian family")
        d = self.family.action_dim
        if self.family.learn_log_std:
            return np.exp(self.theta[-d:])
        return np.full(d, self.family.fixed_std)


def init_params(family: PolicyFamily, scale: float = 0.0,
                seed_material: int | tuple[int, ...] | None = None) -> PolicyParams:
    """Zero parameters by default; optionally Gaussian-perturbed with ``scale``."""
    theta = np.zeros(family.param_count)
    if scale != 0.0:
        if seed_material is None:
            raise DomainError("random init needs seed material")
        theta = scale * substream(*as_path(seed_material)).standard_normal(
            family.param_count)
    if family.kind == GAUSSIAN and family.learn_log_std:
        theta[-family.action_dim:] = log(family.fixed_std)
    return PolicyParams(theta, family)


def mix_params(old: PolicyParams, new: PolicyParams, lam: float) -> PolicyParams:
    """Elementwise convex combination lam*new + (1-lam)*old."""
    if old.family != new.family:
        raise DomainError("cannot mix parameters from different families")
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mix weight {lam} outside [0, 1]")
    if not (np.isfinite(old.theta).all() and np.isfinite(new.theta).all()):
        raise NumericError("cannot mix non-finite parameters")
    return PolicyParams(lam * new.theta + (1.0 - lam) * old.theta, old.family)


def _logits(params: PolicyParams, state) -> np.ndarray:
    phi = params.family.feature_map(state)
    logits = params.weight_matrix() @ phi
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits: diverged parameters")
    return logits


def action_probabilities(params: PolicyParams, state) -> np.ndarray:
    """Softmax action distribution at ``state``."""
    if params.family.kind != SOFTMAX:
        raise UnsupportedPolicyOperation("action_probabilities needs a softmax family")
    logits = _logits(params, state)
    z = np.exp(logits - logits.max())
    return z / z.sum()


def mean_action(params: PolicyParams, state) -> np.ndarray:
    if params.family.kind not in (GAUSSIAN, DETERMINISTIC):
        raise UnsupportedPolicyOperation("mean_action needs a continuous family")
    phi = params.family.feature_map(state)
    mean = params.weight_matrix() @ phi
    if not np.isfinite(mean).all():
        raise NumericError("non-finite action mean: diverged parameters")
    return mean


def sample_action(params: PolicyParams, state, gen) -> int | np.ndarray:
    """Draw one action from ``gen`` (internal; ``act`` is the public entry)."""
    family = params.family
    if family.kind == SOFTMAX:
        probs = action_probabilities(params, state)
        u = gen.random()
        acc = 0.0
        for a in range(probs.shape[0] - 1):
            acc += probs[a]
            if u < acc:
                return a
        return probs.shape[0] - 1
    if family.kind == GAUSSIAN:
        mean = mean_action(params, state)
        z = gen.standard_normal(family.action_dim)
        return mean + params.stds() * z
    return mean_action(params, state)


def act(params: PolicyParams, state,
        seed_material: int | tuple[int, ...]) -> int | np.ndarray:
    """Sample an action; deterministic given ``seed_material``."""
    return sample_action(params, state, substream(*as_path(seed_material)))


def log_prob(params: PolicyParams, state, action) -> float:
    """Log mass (softmax) or log density (Gaussian) of ``action`` at ``state``."""
    family = params.family
    if family.kind == SOFTMAX:
        logits = _logits(params, state)
        m = logits.max()
        return float(logits[int(action)] - m - np.log(np.exp(logits - m).sum()))
    if family.kind == GAUSSIAN:
        mean = mean_action(params, state)
        std = params.stds()
        z = (np.asarray(action, dtype=np.float64) - mean) / std
        return float(-0.5 * np.dot(z, z) - np.log(std).sum()
                     - 0.5 * _LOG_2PI * family.action_dim)
    raise UnsupportedPolicyOperation("log_prob undefined for deterministic policies")


def grad_log_prob(params: PolicyParams, state, action) -> np.ndarray:
    """Analytic score function d log pi / d theta, same length as theta.

    Softmax: block b gets phi * (1[b == a] - pi_b), so with ||phi|| <= 1 the
    norm is at most 2. Gaussian: the weight block gets the standardized
    residual outer phi; a learned log-std tail gets (z_d^2 - 1) per dim.
    """
    family = params.family
    f = family.feature_map.output_dim
    phi = family.feature_map(state)
    if family.kind == SOFTMAX:
        probs = action_probabilities(params, state)
        coeff = -probs
        coeff[int(action)] += 1.0
        return np.outer(coeff, phi).reshape(-1)
    if family.kind == GAUSSIAN:
        mean = mean_action(params, state)
        std = params.stds()
        z = (np.asarray(action, dtype=np.float64) - mean) / std
        grad_w = np.outer(z / std, phi).reshape(-1)
        if family.learn_log_std:
            return np.concatenate([grad_w, z * z - 1.0])
        return grad_w
    raise UnsupportedPolicyOperation(
        "grad_log_prob undefined for deterministic policies")


def policy_matrix(params: PolicyParams, n_states: int) -> np.ndarray:
    """(S, A) action-probability table for a softmax policy on a tabular MDP."""
    return np.stack([action_probabilities(params, s) for s in range(n_states)])


# --- checkpoint serialization --------------------------------------------
#
# Layout (little-endian), documented in the README:
#   magic "PGPF" | version u8 | family u8 | feature u8 | flags u8
#   | input_dim u32 | heads u32 | degree u32 | fixed_std f64 | count u64
#   | count raw float64 parameters
# flags: bit0 = feature normalize, bit1 = learned log-std.

_MAGIC = b"PGPF"
_HEADER = struct.Struct("<4sBBBBIIIdQ")
_FAMILY_CODES = {SOFTMAX: 1, GAUSSIAN: 2, DETERMINISTIC: 3}
_FEATURE_CODES = {IDENTITY: 1, ONE_HOT: 2, POLY: 3}


def params_to_bytes(params: PolicyParams) -> bytes:
    family = params.family
    if not np.isfinite(params.theta).all():
        raise NumericError("refusing to serialize non-finite parameters")
    flags = (1 if family.feature_map.normalize else 0) \
        | (2 if family.learn_log_std else 0)
    header = _HEADER.pack(
        _MAGIC, 1, _FAMILY_CODES[family.kind],
        _FEATURE_CODES[family.feature_map.kind], flags,
        family.feature_map.input_dim, family.n_actions or family.action_dim,
        family.feature_map.degree, family.fixed_std, params.theta.shape[0])
    return header + params.theta.astype("<f8").tobytes()


def params_from_bytes(buf: bytes) -> PolicyParams:
    if len(buf) < _HEADER.size or buf[:4] != _MAGIC:
        raise DomainError("not a policy checkpoint")
    (_, version, fam_code, feat_code, flags, input_dim, heads, degree,
     fixed_std, count) = _HEADER.unpack_from(buf)
    if version != 1:
        raise DomainError(f"unsupported checkpoint version {version}")
    fam_kind = {v: k for k, v in _FAMILY_CODES.items()}[fam_code]
    feat_kind = {v: k for k, v in _FEATURE_CODES.items()}[feat_code]
    fmap = FeatureMap(feat_kind, input_dim, degree=degree,
                      normalize=bool(flags & 1))
    if fam_kind == SOFTMAX:
        family = PolicyFamily(SOFTMAX, fmap, n_actions=heads)
    else:
        family = PolicyFamily(fam_kind, fmap, action_dim=heads,
                              learn_log_std=bool(flags & 2),
                              fixed_std=fixed_std)
    theta = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size)
    return PolicyParams(theta.astype(np.float64), family)


def save_params(params: PolicyParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> PolicyParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
