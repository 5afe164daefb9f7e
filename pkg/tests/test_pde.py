"""Finite-difference solver: stationarity, spectra, conservation, errors."""
import math

import numpy as np
import pytest

from zrplab.ensemble import (EnsembleCalculator, RateFunction,
                             harmonic_mean_ftilde)
from zrplab.errors import CflViolation, GridMismatch
from zrplab.lattice import DensityField
from zrplab.pde import (PdeProblem, cell_centers, diffusivity_grid,
                        field_error, pde_run, pde_step, stationary_profile)


def spectral_heat_solution(rho0_fun, kappa, t, n_modes, eval_points):
    """Fourier reference for constant-diffusivity periodic heat flow (d=1)."""
    xs = np.arange(n_modes) / n_modes
    samples = rho0_fun(xs)
    coeffs = np.fft.rfft(samples) / n_modes
    ks = np.arange(coeffs.shape[0])
    decay = np.exp(-kappa * (2 * math.pi * ks) ** 2 * t)
    out = np.full(eval_points.shape, float(coeffs[0].real) * decay[0])
    for k in range(1, coeffs.shape[0]):
        out += 2 * decay[k] * (coeffs[k].real * np.cos(2 * math.pi * k * eval_points)
                               - coeffs[k].imag * np.sin(2 * math.pi * k * eval_points))
    return out


class TestDiffusivityGrid:
    def test_degenerate_counts_give_f_at_zero(self, flat_model):
        kappa = diffusivity_grid(flat_model, 16, 2)
        assert np.allclose(kappa, 2.5, atol=1e-13)

    def test_constant_rate_function(self):
        from zrplab.environment import ConstantProfile, PoissonMoleculeModel

        model = PoissonMoleculeModel(
            theta=ConstantProfile(4.0),
            rate_of_count=lambda z: np.full(np.asarray(z, dtype=float).shape, 1.3),
            bound_lo=1.3 - 1e-12, bound_hi=1.3 + 1e-12)
        kappa = diffusivity_grid(model, 16, 1)
        assert np.allclose(kappa, 1.3, atol=1e-12)

    def test_center_cell_matches_scalar_path(self, bump_model):
        m = 50
        kappa = diffusivity_grid(bump_model, m, 2)
        center_u = (m // 2 + 0.5) / m
        theta_c = float(bump_model.theta(np.array([center_u, center_u])))
        assert kappa[m // 2, m // 2] == pytest.approx(
            harmonic_mean_ftilde(bump_model, theta_c), abs=1e-12)

    def test_values_within_rate_bounds(self, bump_model):
        kappa = diffusivity_grid(bump_model, 32, 2)
        assert kappa.min() >= 0.5 - 1e-12 and kappa.max() <= 2.5 + 1e-12


class TestPdeStep:
    def test_constant_state_is_fixed(self):
        prob = PdeProblem.linear(np.full((16, 16), 1.7), np.full((16, 16), 3.0))
        before = prob.rho.copy()
        pde_step(prob)
        assert np.array_equal(prob.rho, before)

    def test_inverse_coefficient_profile_is_fixed_point(self, bump_model):
        kappa = diffusivity_grid(bump_model, 24, 2)
        stat = stationary_profile(kappa, 4.0)
        prob = PdeProblem.linear(kappa, stat.values)
        before = prob.rho.copy()
        for _ in range(20):
            pde_step(prob)
        assert float(np.abs(prob.rho - before).max()) <= 1e-12 * before.max()

    def test_single_mode_decay_factor(self):
        m = 32
        kappa_val = 0.8
        eps = 1e-3
        u1 = (np.arange(m) + 0.5) / m
        rho0 = 1.0 + eps * np.cos(2 * math.pi * u1)[:, None] * np.ones((1, m))
        prob = PdeProblem.linear(np.full((m, m), kappa_val), rho0)
        dt = prob.dt
        pde_step(prob)
        h = 1.0 / m
        factor = 1.0 - (dt / h**2) * kappa_val * 2.0 * (1.0 - math.cos(2 * math.pi * h))
        expected = 1.0 + eps * factor * np.cos(2 * math.pi * u1)[:, None] * np.ones((1, m))
        assert float(np.abs(prob.rho - expected).max()) <= 1e-12

    def test_cfl_violation_raises(self):
        prob = PdeProblem.linear(np.full((16,), 2.0), np.full((16,), 1.0))
        with pytest.raises(CflViolation):
            pde_step(prob, dt=prob.dt * 3)

    def test_maximum_principle_constant_coefficient(self):
        rng = np.random.default_rng(5)
        prob = PdeProblem.linear(np.full((16, 16), 1.4), 1.0 + rng.random((16, 16)))
        for _ in range(200):
            lo, hi = prob.rho.min(), prob.rho.max()
            pde_step(prob)
            assert prob.rho.min() >= lo - 1e-13
            assert prob.rho.max() <= hi + 1e-13

    def test_maximum_principle_in_flux_variable(self, bump_model):
        # with a space-dependent coefficient the monotone quantity is the
        # flux w = kappa * rho (each update is a convex combination in w)
        kappa = diffusivity_grid(bump_model, 16, 2)
        rng = np.random.default_rng(5)
        prob = PdeProblem.linear(kappa, 1.0 + rng.random((16, 16)))
        for _ in range(200):
            w = kappa * prob.rho
            lo, hi = w.min(), w.max()
            pde_step(prob)
            w = kappa * prob.rho
            assert w.min() >= lo - 1e-13
            assert w.max() <= hi + 1e-13


class TestMassConservation:
    def test_drift_over_many_steps(self, bump_model):
        kappa = diffusivity_grid(bump_model, 24, 2)
        rng = np.random.default_rng(11)
        prob = PdeProblem.linear(kappa, 2.0 + rng.random((24, 24)))
        m0 = prob.mass()
        for _ in range(10_000):
            pde_step(prob)
        assert abs(prob.mass() - m0) / m0 <= 1e-12


class TestPdeRun:
    def test_identity_when_t_end_equals_t(self):
        prob = PdeProblem.linear(np.full((16,), 1.0), np.linspace(1, 2, 16))
        before = prob.rho.copy()
        pde_run(prob, prob.t)
        assert np.array_equal(prob.rho, before)

    def test_lands_exactly_on_observer_times(self):
        prob = PdeProblem.linear(np.full((16,), 1.0), np.full(16, 1.0))
        seen = []
        times = (0.0001237, 0.0005, 0.00111)
        pde_run(prob, 0.002, observers=[(tm, lambda f, t: seen.append(t))
                                        for tm in times])
        assert seen == list(times)
        assert prob.t == 0.002

    def test_spectral_reference_constant_kappa(self):
        # smooth periodic bump against a 256-mode Fourier reference
        m, kappa, t_end = 2048, 0.1, 0.01
        rho0_fun = lambda x: 1.0 + np.exp(-60.0 * ((x % 1) - 0.5) ** 2)  # noqa: E731
        centers = (np.arange(m) + 0.5) / m
        prob = PdeProblem.linear(np.full(m, kappa), rho0_fun(centers))
        pde_run(prob, t_end)
        ref = spectral_heat_solution(rho0_fun, kappa, t_end, 256, centers)
        assert float(np.abs(prob.rho - ref).max()) <= 1e-6

    def test_long_run_reaches_zero_flux_profile(self, bump_model):
        m = 16
        kappa = diffusivity_grid(bump_model, m, 1)
        prob = PdeProblem.linear(kappa, np.full(m, 4.0))
        pde_run(prob, 2.0)
        stat = stationary_profile(kappa, prob.mass())
        assert field_error(prob.rho, stat.values, "L1") <= 1e-8


class TestGeneralFluxConsistency:
    def test_matches_linear_path_for_identity_rate(self, bump_model):
        # Phi(u, rho) = kappa(u) rho for non-interacting particles, so the
        # per-cell root-solving path must reproduce the linear solver
        m = 10
        calc = EnsembleCalculator(RateFunction.identity(), bump_model)
        centers = cell_centers(1, m).reshape(-1, 1)
        kappa = np.array([calc.Phi(u, 1.0) for u in centers])
        rng = np.random.default_rng(3)
        rho0 = 2.0 + rng.random(m)
        lin = PdeProblem.linear(kappa, rho0)
        gen = PdeProblem.general(calc, rho0)
        for _ in range(5):
            pde_step(lin, dt=min(lin.dt, gen.dt))
            pde_step(gen, dt=min(lin.dt, gen.dt))
        assert float(np.abs(lin.rho - gen.rho).max()) <= 1e-12


class TestStationaryProfile:
    def test_constant_coefficient(self):
        stat = stationary_profile(np.full((12, 12), 2.0), 4.0)
        assert np.allclose(stat.values, 4.0, atol=1e-13)

    def test_two_cell_normalization(self):
        stat = stationary_profile(np.array([1.0, 2.0]), 3.0)
        assert np.allclose(stat.values, [4.0, 2.0], atol=1e-12)

    def test_peak_at_coefficient_minimum(self, bump_model):
        kappa = diffusivity_grid(bump_model, 50, 2)
        stat = stationary_profile(kappa, 4.0)
        assert np.unravel_index(np.argmax(stat.values), stat.values.shape) == \
            np.unravel_index(np.argmin(kappa), kappa.shape)
        assert stat.mass() == pytest.approx(4.0, rel=1e-13)


class TestFieldError:
    def test_identical_fields(self):
        a = np.random.default_rng(0).random((8, 8))
        assert field_error(a, a.copy(), "L1") == 0.0

    def test_unit_difference(self):
        a = np.ones((8, 8))
        b = np.zeros((8, 8))
        assert field_error(a, b, "L1") == pytest.approx(1.0, rel=1e-14)
        assert field_error(a, b, "L2") == pytest.approx(1.0, rel=1e-14)
        assert field_error(a, b, "Linf") == 1.0

    def test_half_torus(self):
        a = np.zeros((16, 16))
        a[:8, :] = 1.0
        assert field_error(a, np.zeros((16, 16)), "L1") == pytest.approx(0.5, rel=1e-14)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            field_error(np.ones((8, 8)), np.ones((16, 16)))

    def test_nearest_resample(self):
        fine = np.repeat(np.repeat(np.arange(4.0).reshape(2, 2), 4, axis=0), 4, axis=1)
        coarse = np.arange(4.0).reshape(2, 2)
        assert field_error(coarse, fine, "Linf", resample=True) == 0.0

    def test_density_field_inputs(self):
        a = DensityField(values=np.ones((8, 8)))
        b = DensityField(values=np.zeros((8, 8)))
        assert field_error(a, b, "L1") == pytest.approx(1.0, rel=1e-14)
