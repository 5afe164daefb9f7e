"""Quenched environments: molecule fields, smooth means and site rates.

Two model variants are supported.  The molecule-count variant places an
independent Poisson(theta(x/N)) number of chemoattractant molecules on
each site and converts counts to jump-rate multipliers through a
decreasing function f; the additive variant perturbs a smooth mean
v(x/N) by bounded i.i.d. zero-mean noise.  Either way the realized rate
field is fixed once sampled and every value lies in [a, b].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln

from . import rng
from .errors import RateOutOfBounds
from .gridio import write_environment_csv, write_grid


def torus_wrap(u: np.ndarray) -> np.ndarray:
    return np.mod(u, 1.0)


@dataclass(frozen=True)
class GaussianBumpProfile:
    """theta(u) = amplitude * exp(-width * sum_i (u_i - center)^2)."""

    amplitude: float = 30.0
    width: float = 60.0
    center: float = 0.5

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        sq = np.sum((torus_wrap(u) - self.center) ** 2, axis=-1)
        return self.amplitude * np.exp(-self.width * sq)


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return np.full(u.shape[:-1], self.value)


@dataclass(frozen=True, eq=False)
class PoissonMoleculeModel:
    """Poisson(theta(u)) molecule counts with rate multiplier f(count).

    The default multiplier f(z) = nu + chi0 / (1 + z) decreases in the
    molecule count, so particles dwell longer where the chemoattractant
    is denser; its range gives the rate bounds a = nu, b = nu + chi0.
    A custom `rate_of_count` may be supplied together with explicit
    bounds (inclusive, and `bound_lo` must be the infimum over counts).
    """

    theta: Callable[[np.ndarray], np.ndarray]
    nu: float = 0.5
    chi0: float = 2.0
    rate_of_count: Callable[[np.ndarray], np.ndarray] | None = None
    bound_lo: float | None = None
    bound_hi: float | None = None
    poisson_tail: float = 1e-12
    min_poisson_terms: int = 20

    def __post_init__(self):
        if self.rate_of_count is None:
            if self.nu <= 0 or self.chi0 <= 0:
                raise ValueError("nu and chi0 must be positive")
            object.__setattr__(self, "bound_lo", self.nu)
            object.__setattr__(self, "bound_hi", self.nu + self.chi0)
        elif self.bound_lo is None or self.bound_hi is None:
            raise ValueError("custom rate_of_count requires explicit bounds")
        if not 0 < self.bound_lo < self.bound_hi:
            raise ValueError("need 0 < a < b")

    @property
    def a(self) -> float:
        return self.bound_lo

    @property
    def b(self) -> float:
        return self.bound_hi

    def f(self, zeta) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=np.float64)
        if self.rate_of_count is not None:
            return np.asarray(self.rate_of_count(zeta), dtype=np.float64)
        return self.nu + self.chi0 / (1.0 + zeta)

    def count_support(self, theta_value: float) -> tuple[np.ndarray, np.ndarray]:
        """Molecule counts 0..k_max and their Poisson(theta) weights.

        Truncated where the remaining mass is below `poisson_tail`, with
        at least `min_poisson_terms` terms; weights are left unnormalized
        (the discarded mass is the documented truncation error).
        """
        if theta_value < 0:
            raise ValueError("theta must be nonnegative")
        if theta_value == 0.0:
            return np.array([0]), np.array([1.0])
        k_hi = int(theta_value + 12.0 * math.sqrt(theta_value) + 30)
        while True:
            ks = np.arange(k_hi + 1)
            logw = -theta_value + ks * math.log(theta_value) - gammaln(ks + 1.0)
            w = np.exp(logw)
            if 1.0 - w.sum() <= self.poisson_tail:
                break
            k_hi *= 2
        cum = np.cumsum(w)
        k_cut = int(np.searchsorted(cum, 1.0 - self.poisson_tail))
        k_cut = max(k_cut, self.min_poisson_terms - 1)
        k_cut = min(k_cut, k_hi)
        keep = w[: k_cut + 1] > 0.0
        return ks[: k_cut + 1][keep], w[: k_cut + 1][keep]

    def rate_support(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ks, w = self.count_support(float(self.theta(np.asarray(u))))
        return self.f(ks), w

    def local_rate_inf(self, u: np.ndarray) -> float:
        # f decreases toward its infimum as the count grows without bound
        return self.a


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """Site rates v(u) + q with q uniform on [-half_width, half_width].

    The uniform law is the simplest bounded, zero-mean stationary ergodic
    choice.  Annealed expectations integrate over q with a fixed
    Gauss-Legendre rule, which is spectrally accurate for the smooth
    integrands that arise here.
    """

    v: Callable[[np.ndarray], np.ndarray]
    a: float
    b: float
    half_width: float
    n_quadrature: int = 64

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("need 0 < a < b")
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")

    def rate_support(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vu = float(np.asarray(self.v(np.asarray(u))))
        if self.half_width == 0.0:
            return np.array([vu]), np.array([1.0])
        nodes, weights = np.polynomial.legendre.leggauss(self.n_quadrature)
        return vu + self.half_width * nodes, weights / 2.0

    def local_rate_inf(self, u: np.ndarray) -> float:
        return float(np.asarray(self.v(np.asarray(u)))) - self.half_width


def noise_half_width(v_min: float, v_max: float, a: float, b: float) -> float:
    """Largest symmetric noise amplitude keeping v + q inside [a, b]."""
    c = min(v_min - a, b - v_max)
    if c < 0:
        raise ValueError("mean profile leaves no room inside [a, b]")
    return c


@dataclass(frozen=True, eq=False)
class EnvironmentField:
    """One realized environment on the periodic lattice; immutable."""

    d: int
    N: int
    zeta: np.ndarray | None
    p: np.ndarray
    seed: int
    model: object
    q: np.ndarray | None = None

    def __post_init__(self):
        if self.zeta is not None:
            self.zeta.setflags(write=False)
        if self.q is not None:
            self.q.setflags(write=False)
        self.p.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d


def lattice_points(d: int, N: int) -> np.ndarray:
    """Macroscopic coordinates x/N of all sites, shape (N,)*d + (d,)."""
    axes = np.indices((N,) * d).astype(np.float64) / N
    return np.moveaxis(axes, 0, -1)


def eval_mean_theta(model: PoissonMoleculeModel, u) -> float:
    """Smooth molecule-density mean at a macroscopic point."""
    return float(np.asarray(model.theta(torus_wrap(np.asarray(u, dtype=np.float64)))))


def sample_molecule_field(model: PoissonMoleculeModel, d: int, N: int,
                          seed: int, replica: int = 0) -> EnvironmentField:
    """Draw the quenched molecule field and its rate multipliers.

    Identical (model, d, N, seed, replica) always reproduces the same
    field bit for bit; the counts come from a dedicated counter-based
    stream.
    """
    thetas = model.theta(lattice_points(d, N))
    gen = rng.stream(seed, rng.ZETA, replica)
    zeta = rng.poisson_counts(gen, thetas)
    env = EnvironmentField(d=d, N=N, zeta=zeta, p=np.empty(0), seed=seed, model=model)
    p = build_rate_field(env)
    return EnvironmentField(d=d, N=N, zeta=zeta, p=p, seed=seed, model=model)


def sample_additive_field(model: AdditiveModel, d: int, N: int,
                          seed: int, replica: int = 0) -> EnvironmentField:
    """Draw the additive-noise environment v(x/N) + q."""
    gen = rng.stream(seed, rng.ADDITIVE_Q, replica)
    q = gen.uniform(-model.half_width, model.half_width, size=(N,) * d)
    env = EnvironmentField(d=d, N=N, zeta=None, p=np.empty(0), seed=seed,
                           model=model, q=q)
    p = build_rate_field(env)
    return EnvironmentField(d=d, N=N, zeta=None, p=p, seed=seed, model=model, q=q)


def build_rate_field(env: EnvironmentField) -> np.ndarray:
    """Per-site rate multipliers from the realized environment.

    Raises RateOutOfBounds if any value leaves [a, b] (possible only for
    misconfigured custom rate functions or additive noise laws).
    """
    model = env.model
    if isinstance(model, PoissonMoleculeModel) or env.zeta is not None:
        p = model.f(env.zeta)
        a, b = model.a, model.b
    else:
        vgrid = np.asarray(model.v(lattice_points(env.d, env.N)), dtype=np.float64)
        p = vgrid + env.q
        a, b = model.a, model.b
    tol = 1e-12 * max(1.0, b)
    if p.min() < a - tol or p.max() > b + tol:
        raise RateOutOfBounds(
            f"rates span [{p.min()}, {p.max()}], outside [{a}, {b}]")
    return p


def export_environment(env: EnvironmentField, csv_path=None, grid_path=None) -> None:
    """Write the environment as CSV and/or the shared binary grid format."""
    if csv_path is not None:
        write_environment_csv(csv_path, env.zeta, env.p)
    if grid_path is not None:
        fields = [env.p.astype(np.float64)]
        if env.zeta is not None:
            fields.insert(0, env.zeta.astype(np.float64))
        write_grid(grid_path, fields, seed=env.seed)
