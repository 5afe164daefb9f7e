"""Quenched environment construction: profiles, sampling, rate fields, export."""
import math

import numpy as np
import pytest

from zrplab.environment import (AdditiveModel, ConstantProfile,
                                EnvironmentField, GaussianBumpProfile,
                                PoissonMoleculeModel, build_rate_field,
                                eval_mean_theta, export_environment,
                                noise_half_width, sample_additive_field,
                                sample_molecule_field)
from zrplab.errors import RateOutOfBounds
from zrplab.gridio import read_grid


class TestThetaProfile:
    def test_peak_value(self, bump_model):
        assert eval_mean_theta(bump_model, (0.5, 0.5)) == 30.0

    def test_radial_symmetry(self, bump_model):
        for s in (0.02, 0.11, 0.3):
            left = eval_mean_theta(bump_model, (0.5 - s, 0.5))
            right = eval_mean_theta(bump_model, (0.5 + s, 0.5))
            assert left == pytest.approx(right, rel=1e-12)

    def test_corner_value(self, bump_model):
        assert eval_mean_theta(bump_model, (0.0, 0.0)) == pytest.approx(
            30.0 * math.exp(-30.0), rel=1e-12)

    def test_torus_wrap(self, bump_model):
        assert eval_mean_theta(bump_model, (1.25, 0.5)) == pytest.approx(
            eval_mean_theta(bump_model, (0.25, 0.5)), rel=1e-12)


class TestMoleculeSampling:
    def test_zero_mean_gives_empty_field(self, flat_model):
        env = sample_molecule_field(flat_model, 2, 32, seed=5)
        assert np.all(env.zeta == 0)
        assert np.all(env.p == 2.5)

    def test_law_of_large_numbers(self):
        model = PoissonMoleculeModel(theta=ConstantProfile(5.0))
        env = sample_molecule_field(model, 2, 1000, seed=12)
        assert abs(env.zeta.mean() - 5.0) <= 0.01

    def test_rejection_branch_moments(self):
        # theta = 35 exercises the large-mean sampler
        model = PoissonMoleculeModel(theta=ConstantProfile(35.0))
        env = sample_molecule_field(model, 2, 400, seed=3)
        n = env.zeta.size
        assert abs(env.zeta.mean() - 35.0) <= 5 * math.sqrt(35.0 / n)
        assert abs(env.zeta.var() / 35.0 - 1.0) <= 0.05

    def test_determinism(self, bump_model):
        a = sample_molecule_field(bump_model, 2, 64, seed=99)
        b = sample_molecule_field(bump_model, 2, 64, seed=99)
        assert np.array_equal(a.zeta, b.zeta)
        assert np.array_equal(a.p, b.p)
        c = sample_molecule_field(bump_model, 2, 64, seed=100)
        assert not np.array_equal(a.zeta, c.zeta)

    def test_fields_are_immutable(self, bump_model):
        env = sample_molecule_field(bump_model, 2, 16, seed=1)
        with pytest.raises(ValueError):
            env.p[0, 0] = 9.9
        with pytest.raises(ValueError):
            env.zeta[0, 0] = 3


class TestRateField:
    def test_reference_values(self, bump_model):
        env = sample_molecule_field(bump_model, 2, 48, seed=7)
        p = build_rate_field(env)
        assert np.all(p[env.zeta == 0] == 2.5)
        assert np.all(p[env.zeta == 3] == 1.0)

    def test_decreasing_in_count(self, bump_model):
        env = sample_molecule_field(bump_model, 2, 48, seed=8)
        z = env.zeta.ravel()
        p = env.p.ravel()
        order = np.argsort(z)
        assert np.all(np.diff(p[order]) <= 1e-15)

    def test_bounds_enforced(self):
        bad = PoissonMoleculeModel(
            theta=ConstantProfile(2.0),
            rate_of_count=lambda z: 3.0 + np.asarray(z, dtype=float),
            bound_lo=0.5, bound_hi=2.5)
        with pytest.raises(RateOutOfBounds):
            sample_molecule_field(bad, 2, 16, seed=4)


class TestAdditiveEnvironment:
    def test_mean_noise_vanishes(self):
        model = AdditiveModel(v=lambda u: np.full(np.asarray(u).shape[:-1], 1.5),
                              a=0.5, b=2.5, half_width=1.0)
        env = sample_additive_field(model, 2, 128, seed=6)
        q = env.p - 1.5
        sd = 1.0 / math.sqrt(3.0)  # uniform[-1, 1]
        assert abs(q.mean()) <= 4 * sd / math.sqrt(q.size)
        assert env.p.min() >= 0.5 and env.p.max() <= 2.5

    def test_determinism(self):
        model = AdditiveModel(v=lambda u: np.full(np.asarray(u).shape[:-1], 1.5),
                              a=0.5, b=2.5, half_width=0.7)
        a = sample_additive_field(model, 1, 256, seed=3)
        b = sample_additive_field(model, 1, 256, seed=3)
        assert np.array_equal(a.p, b.p)

    def test_out_of_bounds_mean(self):
        model = AdditiveModel(v=lambda u: np.full(np.asarray(u).shape[:-1], 0.6),
                              a=0.5, b=2.5, half_width=0.5)
        with pytest.raises(RateOutOfBounds):
            sample_additive_field(model, 1, 64, seed=1)

    def test_noise_half_width_helper(self):
        assert noise_half_width(1.2, 1.8, 0.5, 2.5) == pytest.approx(0.7)
        with pytest.raises(ValueError):
            noise_half_width(0.4, 1.0, 0.5, 2.5)


class TestExport:
    def test_binary_roundtrip(self, bump_model, tmp_path):
        env = sample_molecule_field(bump_model, 2, 24, seed=11)
        path = tmp_path / "env.grid"
        export_environment(env, grid_path=path)
        fields, meta = read_grid(path)
        assert meta == {"d": 2, "N": 24, "seed": 11, "fields": 2}
        assert np.array_equal(fields[0], env.zeta.astype(np.float64))
        assert np.array_equal(fields[1], env.p)

    def test_csv_layout(self, bump_model, tmp_path):
        env = sample_molecule_field(bump_model, 2, 8, seed=2)
        path = tmp_path / "env.csv"
        export_environment(env, csv_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x0,x1,zeta,p"
        assert len(lines) == 1 + 64
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
        assert int(first[2]) == env.zeta[0, 0]
        assert float(first[3]) == env.p[0, 0]
