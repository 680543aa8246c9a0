"""Compiled inner loop for simultaneous Q-learning of two players.

Each period consumes exactly ``DRAWS_PER_PERIOD`` raw 64-bit words, three per
player: explore test, exploration action, argmax tie-break. Consuming a fixed
number keeps the stream aligned no matter which branch is taken.
"""

import math

import numpy as np
from numba import njit

DRAWS_PER_PERIOD = 6
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def raw_to_unit(x):
    return float(x >> np.uint64(11)) * _TO_UNIT


@njit(cache=True)
def argmax_lowest(row):
    best = 0
    for a in range(1, row.shape[0]):
        if row[a] > row[best]:
            best = a
    return best


@njit(cache=True)
def choose_action(q, o, eps, u_explore, u_action, u_tie):
    m = q.shape[1]
    if u_explore < eps:
        return min(int(u_action * m), m - 1)
    best = q[o, 0]
    count = 1
    for a in range(1, m):
        v = q[o, a]
        if v > best:
            best = v
            count = 1
        elif v == best:
            count += 1
    k = min(int(u_tie * count), count - 1)
    for a in range(m):
        if q[o, a] == best:
            if k == 0:
                return a
            k -= 1
    return m - 1


@njit(cache=True)
def learn_chunk(q1, q2, greedy1, greedy2, rewards, obs1, obs2, state, t0, stable,
                alpha, delta, beta, explore, window, raw, trace):
    """Run up to ``raw.size // 6`` periods; stop early once both policies were stable for ``window`` periods.

    Joint states reached in periods ``t < trace.size`` are written to ``trace``.
    Returns ``(periods_run, state, stable, converged)``.
    """
    m = q1.shape[1]
    n = raw.shape[0] // 6
    s = state
    for step in range(n):
        t = t0 + step
        eps = math.exp(-beta * t) if explore else 0.0
        o1 = obs1[s]
        o2 = obs2[s]
        k = 6 * step
        a1 = choose_action(q1, o1, eps, raw_to_unit(raw[k]), raw_to_unit(raw[k + 1]),
                           raw_to_unit(raw[k + 2]))
        a2 = choose_action(q2, o2, eps, raw_to_unit(raw[k + 3]), raw_to_unit(raw[k + 4]),
                           raw_to_unit(raw[k + 5]))
        s_next = a1 * m + a2
        if t < trace.shape[0]:
            trace[t] = s_next
        n1 = obs1[s_next]
        n2 = obs2[s_next]
        # both targets use pre-update values
        target1 = rewards[a1, a2, 0] + delta * q1[n1, argmax_lowest(q1[n1])]
        target2 = rewards[a1, a2, 1] + delta * q2[n2, argmax_lowest(q2[n2])]
        q1[o1, a1] = (1.0 - alpha) * q1[o1, a1] + alpha * target1
        q2[o2, a2] = (1.0 - alpha) * q2[o2, a2] + alpha * target2
        changed = False
        g = argmax_lowest(q1[o1])
        if g != greedy1[o1]:
            greedy1[o1] = g
            changed = True
        g = argmax_lowest(q2[o2])
        if g != greedy2[o2]:
            greedy2[o2] = g
            changed = True
        stable = 0 if changed else stable + 1
        s = s_next
        if stable >= window:
            return step + 1, s, stable, True
    return n, s, stable, False
