"""Numba kernels for the event loop.

The per-site exit rates live in a complete binary sum tree stored as a
flat array of length 2 * base (leaves at [base, 2 * base)), giving
O(log) weighted sampling and rate updates.  Randomness arrives as
pre-drawn uniform batches with explicit cursors, so the kernels stay
deterministic and the Python side controls the streams.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# run_events status codes
REACHED_STOP = 0
NEED_RNG = 1
HIT_EVENT_CAP = 2


@njit(inline="always")
def _tree_set(tree, base, leaf, val):
    i = base + leaf
    tree[i] = val
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(inline="always")
def _tree_pick(tree, base, r):
    i = 1
    while i < base:
        left = 2 * i
        if r < tree[left]:
            i = left
        else:
            r -= tree[left]
            i = left + 1
    return i - base


@njit(cache=True)
def build_tree(rates, base):
    tree = np.zeros(2 * base)
    tree[base:base + rates.shape[0]] = rates
    for i in range(base - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]
    return tree


@njit(inline="always")
def _neighbor(site, k, d, N, strides):
    axis = k >> 1
    sign = 1 if (k & 1) == 0 else -1
    st = strides[axis]
    c = (site // st) % N
    c2 = c + sign
    if c2 == N:
        c2 = 0
    elif c2 < 0:
        c2 = N - 1
    return site + (c2 - c) * st


@njit(cache=True)
def draw_event(tree, base, nsites, d, N, strides, t, rate_scale,
               uw, us, ud, cw, cs, cd):
    """Sample the next jump (time, source, target); consumes one uniform
    per stream unless the system is frozen."""
    total = tree[1]
    if total <= 0.0:
        return np.inf, -1, -1, cw, cs, cd
    dt = -np.log1p(-uw[cw])
    cw += 1
    r = us[cs] * total
    cs += 1
    src = _tree_pick(tree, base, r)
    if src >= nsites:
        src = nsites - 1
    while tree[base + src] <= 0.0:  # rounding guard: never pick a dead site
        src = (src + 1) % nsites
    k = int(ud[cd] * 2 * d)
    cd += 1
    if k >= 2 * d:
        k = 2 * d - 1
    tgt = _neighbor(src, k, d, N, strides)
    return t + dt / (rate_scale * total), src, tgt, cw, cs, cd


@njit(cache=True)
def run_events(eta, p, gtab, tree, base, d, N, strides, twod,
               t, t_stop, pend_t, pend_src, pend_tgt,
               uw, us, ud, cw, cs, cd, rate_scale, max_events,
               log_t, log_src, log_tgt, log_len):
    """Advance the chain until the macro clock reaches t_stop.

    The next jump is always pre-drawn ("pending"), so stopping at
    observer times never alters the event stream.  A pending jump at
    exactly t_stop is NOT applied: the state returned is the left limit.
    """
    nsites = eta.shape[0]
    nw = uw.shape[0]
    ns = us.shape[0]
    nd = ud.shape[0]
    cap = log_t.shape[0]
    ev = 0
    while True:
        if pend_t >= t_stop:
            return t_stop, pend_t, pend_src, pend_tgt, cw, cs, cd, ev, REACHED_STOP, log_len
        if ev >= max_events:
            return t, pend_t, pend_src, pend_tgt, cw, cs, cd, ev, HIT_EVENT_CAP, log_len
        if cw >= nw or cs >= ns or cd >= nd:
            return t, pend_t, pend_src, pend_tgt, cw, cs, cd, ev, NEED_RNG, log_len

        t = pend_t
        s = pend_src
        q = pend_tgt
        eta[s] -= 1
        eta[q] += 1
        _tree_set(tree, base, s, twod * gtab[eta[s]] * p[s])
        _tree_set(tree, base, q, twod * gtab[eta[q]] * p[q])
        if log_len < cap:
            log_t[log_len] = t
            log_src[log_len] = s
            log_tgt[log_len] = q
            log_len += 1
        ev += 1

        pend_t, pend_src, pend_tgt, cw, cs, cd = draw_event(
            tree, base, nsites, d, N, strides, t, rate_scale, uw, us, ud, cw, cs, cd)


@njit(cache=True)
def rsu_attempts(eta, p, gtab, d, N, strides, twod, dt_micro, u_site, u_fire, u_dir):
    """One sweep of random sequential updates: N^d single-site attempts."""
    nsites = eta.shape[0]
    moves = 0
    for a in range(u_site.shape[0]):
        s = int(u_site[a] * nsites)
        if s >= nsites:
            s = nsites - 1
        rate = twod * gtab[eta[s]] * p[s]
        if u_fire[a] < rate * dt_micro:
            k = int(u_dir[a] * 2 * d)
            if k >= 2 * d:
                k = 2 * d - 1
            tgt = _neighbor(s, k, d, N, strides)
            eta[s] -= 1
            eta[tgt] += 1
            moves += 1
    return moves
