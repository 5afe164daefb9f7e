"""Exact continuous-time simulation of the zero-range chain.

Each directed bond (x, y) fires at rate g(eta(x)) p(x), so a site's
total exit rate is 2d g(eta(x)) p(x).  The clock is reported in
macroscopic (diffusive) units: waiting times are exponential with
parameter N^2 times the total exit rate.  This is the rejection-free
direct method; the random-sequential-update sweep below is a first-order
cross-check of the same dynamics.
"""
from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels, rng
from .ensemble import RateFunction
from .environment import EnvironmentField
from .errors import Frozen, TimestepTooLarge
from .lattice import ParticleConfig

_HUGE_EVENTS = 1 << 62


class JumpRecord(NamedTuple):
    source: tuple
    target: tuple
    waiting: float  # macro time elapsed before the jump


class Simulator:
    """Mutable simulation state; strictly single-threaded.

    Distinct replicas (seed, replica pairs) share nothing and may run in
    parallel processes.  Observer insertion never perturbs trajectories:
    the next jump is pre-drawn and stops only read the current state.
    """

    def __init__(self, cfg: ParticleConfig, env: EnvironmentField, g: RateFunction,
                 seed: int, replica: int = 0, batch_size: int = 1 << 18,
                 event_log_cap: int = 0):
        if cfg.eta.shape != env.shape:
            raise ValueError("configuration and environment shapes differ")
        self.d = cfg.d
        self.N = cfg.N
        self.g = g
        self.seed = seed
        self.replica = replica
        self.eta = cfg.eta.ravel().copy()
        self.total = int(cfg.total)
        self.p = env.p.ravel().astype(np.float64).copy()
        self.gtab = np.ascontiguousarray(g.table(self.total + 1), dtype=np.float64)
        self.rate_scale = float(self.N) ** 2
        self.t = 0.0

        nsites = self.eta.shape[0]
        base = 1
        while base < nsites:
            base *= 2
        self.base = base
        self._strides = np.array([self.N ** (self.d - 1 - k) for k in range(self.d)],
                                 dtype=np.int64)
        self.tree = _kernels.build_tree(self._exact_rates(), base)

        self._batch_max = batch_size
        self._batch = min(4096, batch_size)  # grows on refill; tiny runs stay cheap
        self._streams = {
            tag: rng.stream(seed, tag, replica) for tag in (rng.WAIT, rng.SITE, rng.DIRECTION)
        }
        self._rsu_stream = rng.stream(seed, rng.RSU, replica)
        self._uw = np.empty(0)
        self._us = np.empty(0)
        self._ud = np.empty(0)
        self._cw = self._cs = self._cd = 0

        cap = int(event_log_cap)
        self._log_t = np.empty(cap)
        self._log_src = np.empty(cap, dtype=np.int64)
        self._log_tgt = np.empty(cap, dtype=np.int64)
        self._log_len = 0

        self._pend_t = math.inf
        self._pend_src = -1
        self._pend_tgt = -1
        self._draw_pending()

    # -- state access -------------------------------------------------------

    def config(self) -> ParticleConfig:
        return ParticleConfig(eta=self.eta.reshape((self.N,) * self.d), total=self.total)

    def total_exit_rate(self) -> float:
        """Sum over sites of 2d g(eta(x)) p(x), in microscopic units."""
        return float(self.tree[1])

    def pending_source(self) -> tuple:
        """Source site of the pre-drawn next jump (for distribution tests)."""
        if not math.isfinite(self._pend_t):
            raise Frozen("no pending jump: total exit rate is zero")
        return self._unravel(self._pend_src)

    def event_log(self):
        n = self._log_len
        return self._log_t[:n].copy(), self._log_src[:n].copy(), self._log_tgt[:n].copy()

    def _unravel(self, flat: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(flat, (self.N,) * self.d))

    def _exact_rates(self) -> np.ndarray:
        return 2.0 * self.d * self.gtab[self.eta] * self.p

    def audit_max_rel_error(self) -> float:
        """Relative deviation between the maintained tree and a rebuild."""
        exact = self._exact_rates()
        leaves = self.tree[self.base:self.base + exact.shape[0]]
        scale = max(float(exact.max(initial=0.0)), 1e-300)
        leaf_err = float(np.abs(leaves - exact).max()) / scale
        root_err = abs(float(self.tree[1]) - float(exact.sum())) / max(float(exact.sum()), 1e-300)
        return max(leaf_err, root_err)

    # -- randomness plumbing -------------------------------------------------

    def _refill(self) -> None:
        refilled = False
        if self._cw >= self._uw.shape[0]:
            self._uw = self._streams[rng.WAIT].random(self._batch)
            self._cw = 0
            refilled = True
        if self._cs >= self._us.shape[0]:
            self._us = self._streams[rng.SITE].random(self._batch)
            self._cs = 0
            refilled = True
        if self._cd >= self._ud.shape[0]:
            self._ud = self._streams[rng.DIRECTION].random(self._batch)
            self._cd = 0
            refilled = True
        if refilled:
            self._batch = min(self._batch * 4, self._batch_max)

    def _draw_pending(self) -> None:
        self._refill()
        (self._pend_t, self._pend_src, self._pend_tgt,
         self._cw, self._cs, self._cd) = _kernels.draw_event(
            self.tree, self.base, self.eta.shape[0], self.d, self.N, self._strides,
            self.t, self.rate_scale, self._uw, self._us, self._ud,
            self._cw, self._cs, self._cd)

    # -- dynamics ------------------------------------------------------------

    def _advance(self, t_stop: float, max_events: int = _HUGE_EVENTS) -> int:
        done = 0
        while True:
            res = _kernels.run_events(
                self.eta, self.p, self.gtab, self.tree, self.base, self.d, self.N,
                self._strides, 2.0 * self.d, self.t, t_stop,
                self._pend_t, self._pend_src, self._pend_tgt,
                self._uw, self._us, self._ud, self._cw, self._cs, self._cd,
                self.rate_scale, max_events - done,
                self._log_t, self._log_src, self._log_tgt, self._log_len)
            (self.t, self._pend_t, self._pend_src, self._pend_tgt,
             self._cw, self._cs, self._cd, ev, status, self._log_len) = res
            done += ev
            if status == _kernels.NEED_RNG:
                self._refill()
                continue
            return done

    def kmc_step(self) -> JumpRecord:
        """Apply the next jump; returns (source, target, waiting time)."""
        if not math.isfinite(self._pend_t):
            raise Frozen("total exit rate is zero")
        record = JumpRecord(self._unravel(self._pend_src), self._unravel(self._pend_tgt),
                            self._pend_t - self.t)
        self._advance(math.inf, max_events=1)
        return record

    def run_to_time(self, t_end: float,
                    observers: Sequence[tuple[float, Callable]] = ()) -> "Simulator":
        """Run until the macro clock reaches t_end.

        Observers are (time, callback) pairs; each callback receives
        (simulator, time) with the state holding its left limit at that
        time (the process is piecewise constant between jumps).
        """
        if t_end < self.t:
            raise ValueError("cannot run backwards")
        stops = sorted(((tm, cb) for tm, cb in observers if self.t <= tm <= t_end),
                       key=lambda pair: pair[0])
        for tm, cb in stops:
            self._advance(tm)
            cb(self, tm)
        self._advance(t_end)
        return self

    def rsu_sweep(self, dt_micro: float, n_sweeps: int = 1) -> int:
        """N^d random single-site update attempts per sweep of micro step dt.

        First-order approximation of the exact chain, used only as a
        cross-check.  Advances the macro clock by n_sweeps * dt / N^2.
        The step-size guard is checked against the rates at entry.
        """
        nsites = self.eta.shape[0]
        max_rate = float(self.tree[self.base:self.base + nsites].max())
        if dt_micro * max_rate > 0.1 * (1 + 1e-9):
            raise TimestepTooLarge(
                f"dt * max exit rate = {dt_micro * max_rate} exceeds the 0.1 guard")
        n_u = nsites * n_sweeps
        u_site = self._rsu_stream.random(n_u)
        u_fire = self._rsu_stream.random(n_u)
        u_dir = self._rsu_stream.random(n_u)
        moves = _kernels.rsu_attempts(self.eta, self.p, self.gtab, self.d, self.N,
                                      self._strides, 2.0 * self.d, dt_micro,
                                      u_site, u_fire, u_dir)
        self.t += n_sweeps * dt_micro / self.rate_scale
        self.tree = _kernels.build_tree(self._exact_rates(), self.base)
        self._draw_pending()
        return int(moves)
