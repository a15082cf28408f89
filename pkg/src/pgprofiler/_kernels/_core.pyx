# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rollout kernels.

Mirrors ``pure.py`` operation-for-operation on C doubles so both backends
produce bit-identical trajectories from the same random draws. Keep the two
files in lockstep; ``tests/test_kernels.py`` compares them exactly.
"""

from libc.math cimport cos, exp, sin, sqrt
from libc.stdint cimport int64_t

from . import pure as _pure

BACKEND = "cython"

cdef double CP_GRAVITY = _pure.CP_GRAVITY
cdef double CP_MASSPOLE = _pure.CP_MASSPOLE
cdef double CP_TOTAL_MASS = _pure.CP_TOTAL_MASS
cdef double CP_LENGTH = _pure.CP_LENGTH
cdef double CP_POLEMASS_LENGTH = _pure.CP_POLEMASS_LENGTH
cdef double CP_FORCE_MAG = _pure.CP_FORCE_MAG
cdef double CP_DT = _pure.CP_DT
cdef double CP_X_LIMIT = _pure.CP_X_LIMIT
cdef double CP_THETA_LIMIT = _pure.CP_THETA_LIMIT
cdef double CP_RESET_SCALE = _pure.CP_RESET_SCALE

cdef inline Py_ssize_t _pick(const double* probs, Py_ssize_t n, double u) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(n - 1):
        acc += probs[i]
        if u < acc:
            return i
    return n - 1


def tabular_rollouts(const double[:, ::1] policy_probs,
                     const double[:, :, ::1] trans,
                     const double[:, ::1] rewards, const double[::1] rho,
                     const double[:, ::1] u, int64_t[:, ::1] out_states,
                     int64_t[:, ::1] out_actions, double[:, ::1] out_rewards,
                     int64_t[::1] out_lengths):
    cdef Py_ssize_t n_rollouts = u.shape[0]
    cdef Py_ssize_t horizon = (u.shape[1] - 1) // 2
    cdef Py_ssize_t n_states = rho.shape[0]
    cdef Py_ssize_t n_actions = policy_probs.shape[1]
    cdef Py_ssize_t k, t, s, a
    with nogil:
        for k in range(n_rollouts):
            s = _pick(&rho[0], n_states, u[k, 0])
            out_states[k, 0] = s
            for t in range(horizon):
                a = _pick(&policy_probs[s, 0], n_actions, u[k, 1 + 2 * t])
                out_rewards[k, t] = rewards[s, a]
                s = _pick(&trans[s, a, 0], n_states, u[k, 2 + 2 * t])
                out_actions[k, t] = a
                out_states[k, t + 1] = s
            out_lengths[k] = horizon
    return 0


def cartpole_rollouts(const double[:, ::1] weights, const double[:, ::1] u,
                      double[:, :, ::1] out_states,
                      int64_t[:, ::1] out_actions, double[:, ::1] out_rewards,
                      int64_t[::1] out_lengths, int64_t[::1] out_terminal):
    cdef Py_ssize_t n_rollouts = u.shape[0]
    cdef Py_ssize_t horizon = u.shape[1] - 4
    cdef Py_ssize_t n_actions = weights.shape[0]
    if n_actions > 8:
        raise ValueError("cartpole kernel supports at most 8 actions")
    cdef Py_ssize_t k, t, a, act, length
    cdef int terminal
    cdef double x, xdot, theta, thetadot
    cdef double norm, f0, f1, f2, f3, logit, best, total, ua, acc
    cdef double force, costh, sinth, temp, thetaacc, xacc
    cdef double zs[8]
    with nogil:
        for k in range(n_rollouts):
            x = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * u[k, 0]
            xdot = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * u[k, 1]
            theta = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * u[k, 2]
            thetadot = -CP_RESET_SCALE + 2.0 * CP_RESET_SCALE * u[k, 3]
            out_states[k, 0, 0] = x
            out_states[k, 0, 1] = xdot
            out_states[k, 0, 2] = theta
            out_states[k, 0, 3] = thetadot
            length = horizon
            terminal = 0
            for t in range(horizon):
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
                best = -1e300
                for a in range(n_actions):
                    logit = (weights[a, 0] * f0 + weights[a, 1] * f1
                             + weights[a, 2] * f2 + weights[a, 3] * f3)
                    zs[a] = logit
                    if logit > best:
                        best = logit
                total = 0.0
                for a in range(n_actions):
                    zs[a] = exp(zs[a] - best)
                    total += zs[a]
                ua = u[k, 4 + t] * total
                acc = 0.0
                act = n_actions - 1
                for a in range(n_actions - 1):
                    acc += zs[a]
                    if ua < acc:
                        act = a
                        break
                force = CP_FORCE_MAG if act == 1 else -CP_FORCE_MAG
                costh = cos(theta)
                sinth = sin(theta)
                temp = (force + CP_POLEMASS_LENGTH * thetadot * thetadot
                        * sinth) / CP_TOTAL_MASS
                thetaacc = (CP_GRAVITY * sinth - costh * temp) / (
                    CP_LENGTH * (4.0 / 3.0 - CP_MASSPOLE * costh * costh
                                 / CP_TOTAL_MASS))
                xacc = temp - CP_POLEMASS_LENGTH * thetaacc * costh \
                    / CP_TOTAL_MASS
                x = x + CP_DT * xdot
                xdot = xdot + CP_DT * xacc
                theta = theta + CP_DT * thetadot
                thetadot = thetadot + CP_DT * thetaacc
                out_actions[k, t] = act
                out_rewards[k, t] = 1.0
                out_states[k, t + 1, 0] = x
                out_states[k, t + 1, 1] = xdot
                out_states[k, t + 1, 2] = theta
                out_states[k, t + 1, 3] = thetadot
                if (x < -CP_X_LIMIT or x > CP_X_LIMIT
                        or theta < -CP_THETA_LIMIT or theta > CP_THETA_LIMIT):
                    length = t + 1
                    terminal = 1
                    break
            out_lengths[k] = length
            out_terminal[k] = terminal
    return 0


def reacher_rollouts(const double[:, ::1] weights, const double[::1] stds,
                     bint clip, const double[:, ::1] u_reset,
                     const double[:, :, ::1] normals,
                     double dt, double target_x, double target_y,
                     double init_lo, double init_hi,
                     double[:, :, ::1] out_states,
                     double[:, :, ::1] out_actions, double[:, ::1] out_rewards,
                     int64_t[::1] out_lengths):
    cdef Py_ssize_t n_rollouts = u_reset.shape[0]
    cdef Py_ssize_t horizon = out_actions.shape[1]
    cdef bint stochastic = stds.shape[0] > 0
    cdef double s0 = stds[0] if stochastic else 0.0
    cdef double s1 = stds[1] if stochastic else 0.0
    cdef Py_ssize_t k, t
    cdef Py_ssize_t bad = -1
    cdef double px, py, vx, vy, norm, f0, f1, f2, f3, ax, ay, ddx, ddy, dist
    with nogil:
        for k in range(n_rollouts):
            if bad >= 0:
                break
            px = init_lo + (init_hi - init_lo) * u_reset[k, 0]
            py = init_lo + (init_hi - init_lo) * u_reset[k, 1]
            vx = 0.0
            vy = 0.0
            out_states[k, 0, 0] = px
            out_states[k, 0, 1] = py
            out_states[k, 0, 2] = vx
            out_states[k, 0, 3] = vy
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
                ax = (weights[0, 0] * f0 + weights[0, 1] * f1
                      + weights[0, 2] * f2 + weights[0, 3] * f3)
                ay = (weights[1, 0] * f0 + weights[1, 1] * f1
                      + weights[1, 2] * f2 + weights[1, 3] * f3)
                if stochastic:
                    ax = ax + s0 * normals[k, t, 0]
                    ay = ay + s1 * normals[k, t, 1]
                if ax < -1.0 or ax > 1.0 or ay < -1.0 or ay > 1.0:
                    if not clip:
                        bad = k
                        break
                    if ax < -1.0:
                        ax = -1.0
                    elif ax > 1.0:
                        ax = 1.0
                    if ay < -1.0:
                        ay = -1.0
                    elif ay > 1.0:
                        ay = 1.0
                vx = vx + dt * ax
                vy = vy + dt * ay
                px = px + dt * vx
                py = py + dt * vy
                ddx = px - target_x
                ddy = py - target_y
                dist = sqrt(ddx * ddx + ddy * ddy)
                if dist > 2.0:
                    dist = 2.0
                out_actions[k, t, 0] = ax
                out_actions[k, t, 1] = ay
                out_rewards[k, t] = -dist
                out_states[k, t + 1, 0] = px
                out_states[k, t + 1, 1] = py
                out_states[k, t + 1, 2] = vx
                out_states[k, t + 1, 3] = vy
            if bad < 0:
                out_lengths[k] = horizon
    return bad
