"""Pure-Python rollout kernels.

Reference implementation of the hot inner loops. The compiled backend in
``_core.pyx`` mirrors these functions operation-for-operation on C doubles,
so both backends produce bit-identical trajectories from the same random
draws; ``tests/test_kernels.py`` enforces that.

All kernels consume pre-drawn randomness (see ``rng`` for the draw-order
contract) and fill caller-allocated output arrays:

* ``out_states``  -- (E, H+1, ...) including the state after the final step
* ``out_actions`` -- (E, H, ...)
* ``out_rewards`` -- (E, H)
* ``out_lengths`` -- (E,) number of executed steps per rollout

Action sampling walks the cumulative distribution with a strict ``u < acc``
comparison; ties are measure zero and the last index is the fallback.
"""

from __future__ import annotations

from math import cos, exp, sin, sqrt

BACKEND = "pure"

# Cart-pole physical constants (classic benchmark values).
CP_GRAVITY = 9.8
CP_MASSCART = 1.0
CP_MASSPOLE = 0.1
CP_TOTAL_MASS = CP_MASSCART + CP_MASSPOLE
CP_LENGTH = 0.5  # half pole length
CP_POLEMASS_LENGTH = CP_MASSPOLE * CP_LENGTH
CP_FORCE_MAG = 10.0
CP_DT = 0.02
CP_X_LIMIT = 2.4
CP_THETA_LIMIT = 12.0 * 3.141592653589793 / 180.0
CP_RESET_SCALE = 0.05


def _pick(cdf_walk_probs, u):
    """Sample an index from a probability row via a cumulative walk."""
    acc = 0.0
    last = len(cdf_walk_probs) - 1
    for i in range(last):
        acc += cdf_walk_probs[i]
        if u < acc:
            return i
    return last


def tabular_rollouts(policy_probs, trans, rewards, rho, u, out_states,
                     out_actions, out_rewards, out_lengths):
    """Roll out a batch on a tabular MDP with per-state action probabilities.

    ``u`` has shape (E, 1 + 2H): one reset draw, then an (action, transition)
    pair of draws per step. Tabular environments have no terminal states, so
    every rollout runs the full horizon.
    """
    n_rollouts, width = u.shape
    horizon = (width - 1) // 2
    probs = policy_probs.tolist()
    p_next = trans.tolist()
    r_tab = rewards.tolist()
    rho_l = rho.tolist()
    for k in range(n_rollouts):
        row = u[k].tolist()
        states = out_states[k]
        actions = out_actions[k]
        rews = out_rewards[k]
        s = _pick(rho_l, row[0])
        states[0] = s
        for t in range(horizon):
            a = _pick(probs[s], row[1 + 2 * t])
            rews[t] = r_tab[s][a]
            s = _pick(p_next[s][a], row[2 + 2 * t])
            actions[t] = a
            states[t + 1] = s
        out_lengths[k] = horizon
    return 0


def cartpole_rollouts(weights, u, out_states, out_actions, out_rewards,
                      out_lengths, out_terminal):
    """Roll out a batch of cart-pole episodes under a linear softmax policy.

    ``weights`` is (n_actions, 4); logits are taken on the state scaled to
    unit norm (states inside the unit ball are left as-is). ``u`` has shape
    (E, 4 + H): four reset draws then one action draw per step. Episodes end
    early when the cart leaves the track or the pole passes 12 degrees;
    ``out_terminal`` records which rollouts ended that way.
    """
    n_rollouts, width = u.shape
    horizon = width - 4
    w = weights.tolist()
    n_actions = len(w)
    for k in range(n_rollouts):
        row = u[k].tolist()
        states = out_states[k]
        actions = out_actions[k]
        rews = out_rewards[k]
        x = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * row[0]
        xdot = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * row[1]
        theta = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * row[2]
        thetadot = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * row[3]
        states[0, 0] = x
        states[0, 1] = xdot
        states[0, 2] = theta
        states[0, 3] = thetadot
        length = horizon
        terminal = 0
        for t in range(horizon):
            # normalized features
            norm = sqrt(x * x + xdot * xdot + theta * theta
                        + thetadot * thetadot)
            if norm > 1.0:
                f0 = x / norm
                f1 = xdot / norm
                f2 = theta / norm
                f3 = thetadot / norm
            else:
                f0 = x
                f1 = xdot
                f2 = theta
                f3 = thetadot
            # softmax over linear logits
            best = -1e300
            zs = [0.0] * n_actions
            for a in range(n_actions):
                wa = w[a]
                logit = wa[0] * f0 + wa[1] * f1 + wa[2] * f2 + wa[3] * f3
                zs[a] = logit
                if logit > best:
                    best = logit
            total = 0.0
            for a in range(n_actions):
                zs[a] = exp(zs[a] - best)
                total += zs[a]
            ua = row[4 + t] * total
            acc = 0.0
            act = n_actions - 1
            for a in range(n_actions - 1):
                acc += zs[a]
                if ua < acc:
                    act = a
                    break
            # Euler physics step (position updated with the pre-step velocity)
            force = CP_FORCE_MAG if act == 1 else -CP_FORCE_MAG
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
            actions[t] = act
            rews[t] = 1.0
            states[t + 1, 0] = x
            states[t + 1, 1] = xdot
            states[t + 1, 2] = theta
            states[t + 1, 3] = thetadot
            if (x < -CP_X_LIMIT or x > CP_X_LIMIT or theta < -CP_THETA_LIMIT
                    or theta > CP_THETA_LIMIT):
                length = t + 1
                terminal = 1
                break
        out_lengths[k] = length
        out_terminal[k] = terminal
    return 0


def reacher_rollouts(weights, stds, clip, u_reset, normals, dt, target_x,
                     target_y, init_lo, init_hi, out_states, out_actions,
                     out_rewards, out_lengths):
    """Roll out a batch of point-mass reacher episodes under a linear actor.

    ``weights`` is (2, 4) acting on the unit-ball-normalized state
    (px, py, vx, vy). ``stds`` is a per-dimension stddev row for Gaussian
    policies (``normals`` then has shape (E, H, 2)) or an empty array for
    deterministic actors (``normals`` unused). ``u_reset`` is (E, 2) and
    places the initial position in the init box; velocity starts at zero.

    With ``clip`` false, an out-of-bounds action aborts the batch and the
    offending rollout index is returned (the caller raises); otherwise the
    action is clipped into [-1, 1]^2. Returns -1 on success.
    """
    n_rollouts = u_reset.shape[0]
    horizon = out_actions.shape[1]
    w = weights.tolist()
    stochastic = stds.shape[0] > 0
    s0 = stds[0] if stochastic else 0.0
    s1 = stds[1] if stochastic else 0.0
    for k in range(n_rollouts):
        states = out_states[k]
        actions = out_actions[k]
        rews = out_rewards[k]
        noise = normals[k].tolist() if stochastic else None
        px = init_lo + (init_hi - init_lo) * u_reset[k, 0]
        py = init_lo + (init_hi - init_lo) * u_reset[k, 1]
        vx = 0.0
        vy = 0.0
        states[0, 0] = px
        states[0, 1] = py
        states[0, 2] = vx
        states[0, 3] = vy
        for t in range(horizon):
            norm = sqrt(px * px + py * py + vx * vx + vy * vy)
            if norm > 1.0:
                f0 = px / norm
                f1 = py / norm
                f2 = vx / norm
                f3 = vy / norm
            else:
                f0 = px
                f1 = py
                f2 = vx
                f3 = vy
            ax = w[0][0] * f0 + w[0][1] * f1 + w[0][2] * f2 + w[0][3] * f3
            ay = w[1][0] * f0 + w[1][1] * f1 + w[1][2] * f2 + w[1][3] * f3
            if stochastic:
                ax = ax + s0 * noise[t][0]
                ay = ay + s1 * noise[t][1]
            if ax < -1.0 or ax > 1.0 or ay < -1.0 or ay > 1.0:
                if not clip:
                    return k
                if ax < -1.0:
                    ax = -1.0
                elif ax > 1.0:
                    ax = 1.0
                if ay < -1.0:
                    ay = -1.0
                elif ay > 1.0:
                    ay = 1.0
            # semi-implicit Euler: velocity first, then position
            vx = vx + dt * ax
            vy = vy + dt * ay
            px = px + dt * vx
            py = py + dt * vy
            ddx = px - target_x
            ddy = py - target_y
            dist = sqrt(ddx * ddx + ddy * ddy)
            if dist > 2.0:
                dist = 2.0
            actions[t, 0] = ax
            actions[t, 1] = ay
            rews[t] = -dist
            states[t + 1, 0] = px
            states[t + 1, 1] = py
            states[t + 1, 2] = vx
            states[t + 1, 3] = vy
        out_lengths[k] = horizon
    return -1
