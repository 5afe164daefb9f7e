"""Event-driven simulator: rates, sampling, clocks, invariance, RSU cross-check."""
import math

import numpy as np
import pytest

from zrplab import _kernels
from zrplab.ensemble import CanonicalSpec, RateFunction, canonical_pmf
from zrplab.environment import (ConstantProfile, PoissonMoleculeModel,
                                sample_molecule_field)
from zrplab.errors import Frozen, TimestepTooLarge
from zrplab.kmc import Simulator
from zrplab.lattice import ParticleConfig

from conftest import unit_rate_model

IDENTITY = RateFunction.identity()
CONST3 = RateFunction.constant(3.0)


def make_sim(eta, model, g=IDENTITY, seed=17, replica=0, d=None, **kw):
    eta = np.asarray(eta, dtype=np.int64)
    n = eta.shape[0]
    env = sample_molecule_field(model, eta.ndim, n, seed=seed)
    cfg = ParticleConfig(eta=eta.copy(), total=int(eta.sum()))
    return Simulator(cfg, env, g, seed=seed, replica=replica, **kw)


class TestExitRates:
    def test_empty_lattice_is_frozen(self):
        sim = make_sim(np.zeros(8, dtype=np.int64), unit_rate_model())
        assert sim.total_exit_rate() == 0.0
        with pytest.raises(Frozen):
            sim.kmc_step()

    def test_enumerated_total_d1(self):
        sim = make_sim(np.full(4, 4, dtype=np.int64), unit_rate_model())
        assert sim.total_exit_rate() == pytest.approx(32.0, rel=1e-14)

    def test_enumerated_total_d2(self, bump_model):
        eta = np.full((16, 16), 4, dtype=np.int64)
        sim = make_sim(eta, bump_model, seed=5)
        env = sample_molecule_field(bump_model, 2, 16, seed=5)
        expected = float((2 * 2 * 4.0 * env.p).sum())
        assert sim.total_exit_rate() == pytest.approx(expected, rel=1e-12)


class TestStepSampling:
    def test_single_particle_direction_symmetry(self):
        sim = make_sim(np.array([0, 0, 1, 0, 0, 0, 0, 0]), unit_rate_model())
        lefts = 0
        n = 20000
        for _ in range(n):
            rec = sim.kmc_step()
            lefts += (rec.target[0] - rec.source[0]) % 8 == 7
        frac = lefts / n
        assert abs(frac - 0.5) <= 4 / (2 * math.sqrt(n))

    def test_source_sampling_proportional_to_rates(self):
        # two sites with exit rates (3, 1): p = (1.5, 0.5), one particle each
        model = PoissonMoleculeModel(
            theta=ConstantProfile(0.0),
            rate_of_count=lambda z: np.where(
                np.arange(np.asarray(z).size).reshape(np.asarray(z).shape) == 0,
                1.5, 0.5),
            bound_lo=0.5, bound_hi=1.5)
        hits = 0
        n = 4000
        for rep in range(n):
            sim = make_sim(np.array([1, 1]), model, seed=23, replica=rep)
            hits += sim.pending_source() == (0,)
        frac = hits / n
        assert abs(frac - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / n)

    def test_waiting_time_mean(self):
        # eta = 4 everywhere, g(n) = n, p = 1: the micro rate stays at 32
        sim = make_sim(np.full(4, 4, dtype=np.int64), unit_rate_model())
        n = 100000
        waits = np.array([sim.kmc_step().waiting for _ in range(n)])
        expected = 1.0 / (4**2 * 32.0)
        assert abs(waits.mean() - expected) <= 4 * expected / math.sqrt(n)

    def test_step_moves_one_particle(self):
        sim = make_sim(np.array([2, 3, 0, 1]), unit_rate_model())
        before = sim.config().eta.copy()
        rec = sim.kmc_step()
        after = sim.config().eta
        assert after[rec.source[0]] == before[rec.source[0]] - 1
        assert after[rec.target[0]] == before[rec.target[0]] + 1
        assert after.sum() == before.sum()


class TestRunToTime:
    def test_no_time_no_steps(self):
        sim = make_sim(np.array([1, 2, 3, 4]), unit_rate_model())
        before = sim.config().eta.copy()
        sim.run_to_time(sim.t)
        assert np.array_equal(sim.config().eta, before)

    def test_mass_conserved_exactly(self, bump_model):
        eta = np.full((24, 24), 3, dtype=np.int64)
        sim = make_sim(eta, bump_model, seed=9)
        sim.run_to_time(0.002)
        assert sim.config().audit_total() == sim.total == 3 * 24 * 24

    def test_observers_never_perturb_trajectories(self, bump_model):
        eta = np.full((12, 12), 2, dtype=np.int64)
        plain = make_sim(eta, bump_model, seed=31)
        plain.run_to_time(0.01)
        seen = []
        watched = make_sim(eta, bump_model, seed=31)
        times = np.linspace(0.001, 0.009, 7)
        watched.run_to_time(0.01, [(float(tm), lambda s, t: seen.append(t))
                                   for tm in times])
        assert len(seen) == 7
        assert np.array_equal(plain.config().eta, watched.config().eta)
        assert plain.t == watched.t

    def test_observer_left_limit_state(self):
        # single particle: observe exactly at the first jump time; the
        # callback must see the pre-jump configuration (left limit)
        sim = make_sim(np.array([1, 0, 0, 0]), unit_rate_model(), seed=3)
        probe = make_sim(np.array([1, 0, 0, 0]), unit_rate_model(), seed=3)
        first_jump = probe.kmc_step()
        snap = {}
        sim.run_to_time(2 * first_jump.waiting,
                        [(first_jump.waiting, lambda s, t: snap.update(eta=s.config().eta.copy()))])
        assert snap["eta"][0] == 1  # still where it started

    def test_determinism_same_seed(self, bump_model):
        eta = np.full((16, 16), 3, dtype=np.int64)
        a = make_sim(eta, bump_model, seed=77)
        b = make_sim(eta, bump_model, seed=77)
        a.run_to_time(0.005)
        b.run_to_time(0.005)
        assert np.array_equal(a.config().eta, b.config().eta)
        c = make_sim(eta, bump_model, seed=78)
        c.run_to_time(0.005)
        assert not np.array_equal(a.config().eta, c.config().eta)

    def test_event_log(self):
        sim = make_sim(np.array([4, 4, 4, 4]), unit_rate_model(), event_log_cap=5)
        records = [sim.kmc_step() for _ in range(8)]
        log_t, log_src, log_tgt = sim.event_log()
        assert log_t.shape[0] == 5
        for i in range(5):
            assert (int(log_src[i]),) == records[i].source
            assert (int(log_tgt[i]),) == records[i].target


class TestRateTree:
    def test_audit_after_many_events(self, bump_model):
        eta = np.full((24, 24), 3, dtype=np.int64)
        sim = make_sim(eta, bump_model, seed=41)
        sim._advance(math.inf, max_events=1_000_000)
        assert sim.audit_max_rel_error() <= 1e-9

    def test_single_site_lattice_self_jumps(self):
        sim = make_sim(np.array([5]), unit_rate_model())
        rec = sim.kmc_step()
        assert rec.source == rec.target == (0,)
        assert sim.config().eta[0] == 5


class TestStationarity:
    @pytest.mark.parametrize("g", [IDENTITY, CONST3], ids=["identity", "const3"])
    def test_canonical_measure_is_left_null_vector(self, g):
        # two-site chain restricted to a fixed particle number: build the
        # exact generator and check the enumerated conditional measure
        K = 12
        p = (1.0, 2.5)
        gt = g.table(K)
        Q = np.zeros((K + 1, K + 1))
        for n in range(K + 1):
            if n > 0:
                Q[n, n - 1] = 2 * gt[n] * p[0]
            if K - n > 0:
                Q[n, n + 1] = 2 * gt[K - n] * p[1]
            Q[n, n] = -Q[n].sum()
        dist = canonical_pmf(g, CanonicalSpec(p, K))
        nu = np.zeros(K + 1)
        for cfg_vec, prob in zip(dist.configs, dist.probs):
            nu[cfg_vec[0]] = prob
        assert np.abs(nu @ Q).max() <= 1e-10

    def test_quenched_stationary_marginals(self, bump_model):
        # product measure with per-site fugacity phi/p(x) is invariant:
        # long-run per-site time averages must match phi/p(x), rescaled to
        # the realized (conserved) particle total of this trajectory
        n = 64
        env = sample_molecule_field(bump_model, 1, n, seed=13)
        phi = 2.0
        lam = phi / env.p
        eta0 = ParticleConfig.poisson_profile(
            1, n, lambda u: lam, seed=13)
        sim = Simulator(eta0, env, IDENTITY, seed=13)
        samples = []
        times = np.arange(0.2, 20.0, 0.01)
        sim.run_to_time(float(times[-1]), [(float(tm), lambda s, t: samples.append(
            s.config().eta.astype(float))) for tm in times])
        avg = np.mean(samples, axis=0)
        target = lam * (eta0.total / lam.sum())
        rel_l1 = float(np.abs(avg - target).sum() / target.sum())
        assert rel_l1 <= 0.03


class TestRsu:
    def test_empty_configuration_never_jumps(self):
        sim = make_sim(np.zeros(8, dtype=np.int64), unit_rate_model())
        assert sim.rsu_sweep(0.01, n_sweeps=50) == 0

    def test_timestep_guard(self):
        sim = make_sim(np.full(4, 4, dtype=np.int64), unit_rate_model())
        with pytest.raises(TimestepTooLarge):
            sim.rsu_sweep(0.1)  # max exit rate 8 -> dt * rate = 0.8 > 0.1

    def test_sweep_kernel_first_order_in_dt(self):
        # exact one-attempt kernel on a 2-site chain, squared for a sweep,
        # must match I + dt * Q with an O(dt^2) defect
        K, p = 3, (1.0, 2.0)
        gt = IDENTITY.table(K)

        def sweep_matrix(dt):
            a_mat = np.zeros((K + 1, K + 1))
            for n in range(K + 1):
                r0 = 2 * gt[n] * p[0] * dt
                r1 = 2 * gt[K - n] * p[1] * dt
                a_mat[n, n] += 0.5 * (1 - r0) + 0.5 * (1 - r1)
                if n > 0:
                    a_mat[n, n - 1] += 0.5 * r0
                else:
                    a_mat[n, n] += 0.5 * r0
                if K - n > 0:
                    a_mat[n, n + 1] += 0.5 * r1
                else:
                    a_mat[n, n] += 0.5 * r1
            return np.linalg.matrix_power(a_mat, 2)

        q_mat = np.zeros((K + 1, K + 1))
        for n in range(K + 1):
            if n > 0:
                q_mat[n, n - 1] = 2 * gt[n] * p[0]
            if K - n > 0:
                q_mat[n, n + 1] = 2 * gt[K - n] * p[1]
            q_mat[n, n] = -q_mat[n].sum()
        errs = []
        for dt in (0.01, 0.005, 0.0025):
            defect = sweep_matrix(dt) - (np.eye(K + 1) + dt * q_mat)
            errs.append(np.abs(defect).max() / dt**2)
        assert max(errs) / min(errs) <= 1.01  # constant ratio: exactly O(dt^2)

    def test_rsu_attempts_match_exact_sweep_kernel(self):
        # empirical one-sweep transition frequencies against the enumerated
        # attempt kernel, on the 2-site chain with 3 particles
        K, p_rates = 3, (1.0, 2.0)
        dt = 0.02
        gt = IDENTITY.table(K)
        a_mat = np.zeros((K + 1, K + 1))
        for n in range(K + 1):
            r0 = 2 * gt[n] * p_rates[0] * dt
            r1 = 2 * gt[K - n] * p_rates[1] * dt
            a_mat[n, n] += 0.5 * (1 - r0) + 0.5 * (1 - r1)
            if n > 0:
                a_mat[n, n - 1] += 0.5 * r0
            if K - n > 0:
                a_mat[n, n + 1] += 0.5 * r1
        a_mat[0, 0] += 0.5 * 0  # g(0) = 0: no mass to move
        sweep = np.linalg.matrix_power(a_mat, 2)

        rng = np.random.default_rng(8)
        start = 2
        counts = np.zeros(K + 1)
        n_rep = 20000
        p_arr = np.array(p_rates)
        strides = np.array([1], dtype=np.int64)
        for _ in range(n_rep):
            eta = np.array([start, K - start], dtype=np.int64)
            _kernels.rsu_attempts(eta, p_arr, gt, 1, 2, strides, 2.0, dt,
                                  rng.random(2), rng.random(2), rng.random(2))
            counts[eta[0]] += 1
        freq = counts / n_rep
        for n in range(K + 1):
            sd = math.sqrt(max(sweep[start, n] * (1 - sweep[start, n]), 1e-9) / n_rep)
            assert abs(freq[n] - sweep[start, n]) <= 5 * sd

    def test_rsu_vs_kmc_total_variation(self):
        # same dynamics, two schemes: site-0 occupation at a fixed time
        model = PoissonMoleculeModel(theta=ConstantProfile(2.0))
        env = sample_molecule_field(model, 1, 4, seed=55)
        t_target = 0.05
        n_rep = 10000
        k_max = 7
        counts_kmc = np.zeros(k_max)
        counts_rsu = np.zeros(k_max)
        eta0 = np.array([3, 1, 0, 2], dtype=np.int64)
        micro = t_target * 16
        for rep in range(n_rep):
            cfg = ParticleConfig(eta=eta0.copy(), total=6)
            s1 = Simulator(cfg, env, IDENTITY, seed=101, replica=rep)
            s1.run_to_time(t_target)
            counts_kmc[min(s1.config().eta[0], k_max - 1)] += 1
            cfg = ParticleConfig(eta=eta0.copy(), total=6)
            s2 = Simulator(cfg, env, IDENTITY, seed=202, replica=rep)
            s2.rsu_sweep(micro / 200, n_sweeps=200)
            counts_rsu[min(s2.config().eta[0], k_max - 1)] += 1
        tv = 0.5 * float(np.abs(counts_kmc - counts_rsu).sum()) / n_rep
        assert tv < 0.02

    def test_macro_clock_advance(self):
        sim = make_sim(np.array([1, 1, 1, 1]), unit_rate_model())
        sim.rsu_sweep(0.05, n_sweeps=10)
        assert sim.t == pytest.approx(10 * 0.05 / 16, rel=1e-12)
