"""Periodic-lattice configurations and coarse-graining observables."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import rng
from .errors import GridMismatch
from .gridio import write_field_csv, write_grid


@dataclass(eq=False)
class ParticleConfig:
    """Occupation numbers on the periodic lattice {0..N-1}^d.

    `total` is maintained by the simulator on every jump; `audit_total`
    recomputes it from scratch.
    """

    eta: np.ndarray
    total: int

    @staticmethod
    def uniform(d: int, N: int, value: int) -> "ParticleConfig":
        eta = np.full((N,) * d, value, dtype=np.int64)
        return ParticleConfig(eta=eta, total=int(eta.sum()))

    @staticmethod
    def point_mass(d: int, N: int, site: tuple, count: int) -> "ParticleConfig":
        eta = np.zeros((N,) * d, dtype=np.int64)
        eta[tuple(site)] = count
        return ParticleConfig(eta=eta, total=count)

    @staticmethod
    def poisson_profile(d: int, N: int, rho0, seed: int, replica: int = 0) -> "ParticleConfig":
        """Independent Poisson(rho0(x/N)) occupations (product initial law)."""
        from .environment import lattice_points

        lam = np.asarray(rho0(lattice_points(d, N)), dtype=np.float64)
        if lam.shape == ():
            lam = np.full((N,) * d, float(lam))
        gen = rng.stream(seed, rng.INIT, replica)
        eta = rng.poisson_counts(gen, lam)
        return ParticleConfig(eta=eta, total=int(eta.sum()))

    @property
    def d(self) -> int:
        return self.eta.ndim

    @property
    def N(self) -> int:
        return self.eta.shape[0]

    def audit_total(self) -> int:
        return int(self.eta.sum())


@dataclass(eq=False)
class DensityField:
    """Real-valued field on the M^d grid of torus cells, spacing h = 1/M."""

    values: np.ndarray

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.M

    def mass(self) -> float:
        return float(self.values.sum()) * self.h**self.d

    def cell_centers(self) -> np.ndarray:
        axes = (np.indices(self.values.shape).astype(np.float64) + 0.5) / self.M
        return np.moveaxis(axes, 0, -1)

    def export(self, csv_path=None, grid_path=None, seed: int = 0) -> None:
        if csv_path is not None:
            cols = [f"u{i}" for i in range(self.d)] + ["value"]
            write_field_csv(csv_path, self.values, cols)
        if grid_path is not None:
            write_grid(grid_path, [self.values.astype(np.float64)], seed=seed)


def export_config(cfg: ParticleConfig, csv_path=None, grid_path=None, seed: int = 0) -> None:
    """Snapshot a particle configuration in the shared formats."""
    if grid_path is not None:
        write_grid(grid_path, [cfg.eta], seed=seed)
    if csv_path is not None:
        cols = [f"x{i}" for i in range(cfg.d)] + ["eta"]
        write_field_csv(csv_path, cfg.eta.astype(np.float64), cols)


# ---------------------------------------------------------------------------
# Block averages (sup-norm boxes)
# ---------------------------------------------------------------------------

def block_average(cfg: ParticleConfig, x: tuple, l: int) -> float:
    """Mean occupation over the box |y - x|_inf <= l with periodic wrap."""
    if not 0 <= l < cfg.N / 2:
        raise ValueError("need 0 <= l < N/2")
    idx = [np.mod(np.arange(xi - l, xi + l + 1), cfg.N) for xi in x]
    grid = np.ix_(*idx)
    return float(cfg.eta[grid].sum()) / (2 * l + 1) ** cfg.d


def block_average_field(values: np.ndarray, l: int) -> np.ndarray:
    """Block averages at every site at once (periodic moving mean)."""
    if l == 0:
        return values.astype(np.float64)
    return uniform_filter(values.astype(np.float64), size=2 * l + 1, mode="wrap")


# ---------------------------------------------------------------------------
# Ball densities (empirical measure over metric balls)
# ---------------------------------------------------------------------------

class BallStencil:
    """Precomputed site lists for balls around a fixed set of centers.

    Euclidean balls are closed (distance <= radius) and normalized by the
    continuum ball volume; sup-norm "balls" are half-open boxes
    [-radius, radius) per axis, which makes a radius-1/(2M) cover an
    exact partition of the torus.
    """

    def __init__(self, d: int, N: int, radius: float, centers: np.ndarray,
                 norm: str = "euclidean"):
        if not 0 < radius < 0.5:
            raise ValueError("need 0 < radius < 0.5")
        if norm not in ("euclidean", "sup"):
            raise ValueError("norm must be 'euclidean' or 'sup'")
        self.d, self.N, self.radius, self.norm = d, N, radius, norm
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if self.volume <= 0:
            raise ValueError("degenerate ball")

        k = int(math.ceil(radius * N)) + 1
        offs = np.stack(np.meshgrid(*([np.arange(-k, k + 1)] * d), indexing="ij"),
                        axis=-1).reshape(-1, d)
        flat_idx = []
        indptr = [0]
        for c in self.centers:
            base = np.floor(c * N).astype(np.int64)
            sites = base[None, :] + offs
            delta = (sites.astype(np.float64) / N - c[None, :] + 0.5) % 1.0 - 0.5
            if norm == "euclidean":
                mask = (delta**2).sum(axis=1) <= radius**2
            else:
                mask = np.all((delta >= -radius) & (delta < radius), axis=1)
            chosen = np.mod(sites[mask], N)
            flat = np.ravel_multi_index(chosen.T, (N,) * d)
            flat_idx.append(flat)
            indptr.append(indptr[-1] + flat.shape[0])
        self._indices = np.concatenate(flat_idx) if flat_idx else np.empty(0, np.int64)
        self._indptr = np.array(indptr)

    @property
    def volume(self) -> float:
        if self.norm == "sup":
            return (2 * self.radius) ** self.d
        return math.pi ** (self.d / 2) / math.gamma(self.d / 2 + 1) * self.radius**self.d

    def site_count(self, i: int) -> int:
        return int(self._indptr[i + 1] - self._indptr[i])

    def densities(self, cfg: ParticleConfig) -> np.ndarray:
        """Ball-normalized particle density at every center."""
        flat = cfg.eta.ravel()
        sums = np.add.reduceat(flat[self._indices].astype(np.float64), self._indptr[:-1])
        sums[self._indptr[:-1] == self._indptr[1:]] = 0.0
        return sums / (self.volume * cfg.N**cfg.d)


def ball_density(cfg: ParticleConfig, center, radius: float,
                 norm: str = "euclidean") -> float:
    """Particle count in the ball around `center`, per unit continuum volume."""
    stencil = BallStencil(cfg.d, cfg.N, radius, np.asarray(center, dtype=np.float64),
                          norm=norm)
    return float(stencil.densities(cfg)[0])


def grid_ball_stencil(d: int, N: int, M: int, radius: float,
                      norm: str = "euclidean") -> BallStencil:
    """Stencil for balls centered at every cell center (j + 0.5)/M."""
    axes = (np.indices((M,) * d).astype(np.float64) + 0.5) / M
    centers = np.moveaxis(axes, 0, -1).reshape(-1, d)
    return BallStencil(d, N, radius, centers, norm=norm)


def ball_density_field(cfg: ParticleConfig, stencil: BallStencil, M: int) -> DensityField:
    return DensityField(values=stencil.densities(cfg).reshape((M,) * cfg.d))


# ---------------------------------------------------------------------------
# Empirical-measure pairings and the local-equilibrium discrepancy
# ---------------------------------------------------------------------------

def pair_with_test_function(cfg: ParticleConfig, G) -> float:
    """N^-d sum_x G(x/N) eta(x): the empirical measure applied to G."""
    from .environment import lattice_points

    gvals = np.asarray(G(lattice_points(cfg.d, cfg.N)), dtype=np.float64)
    return float(np.sum(gvals * cfg.eta)) / cfg.N**cfg.d


def replacement_observable(cfg: ParticleConfig, env, x: tuple, l: int, calc) -> float:
    """|block mean of p g(eta) - Phi(x/N, block mean of eta)| at one site.

    This is the quantity whose space-time average vanishes in the
    hydrodynamic limit; here it is evaluated exactly for diagnostics.
    """
    if not 0 <= l < cfg.N / 2:
        raise ValueError("need 0 <= l < N/2")
    idx = [np.mod(np.arange(xi - l, xi + l + 1), cfg.N) for xi in x]
    grid = np.ix_(*idx)
    block_eta = cfg.eta[grid]
    gtab = calc.g.table(int(block_eta.max(initial=0)))
    flux = float((env.p[grid] * gtab[block_eta]).sum()) / (2 * l + 1) ** cfg.d
    rho_block = float(block_eta.sum()) / (2 * l + 1) ** cfg.d
    u = np.asarray(x, dtype=np.float64) / cfg.N
    return abs(flux - calc.Phi(u, rho_block))


def replacement_field(cfg: ParticleConfig, env, l: int, kappa_lattice: np.ndarray,
                      gtab: np.ndarray) -> np.ndarray:
    """Replacement discrepancy at every site for linear-flux rate functions.

    `kappa_lattice` holds the macroscopic flux coefficient at each x/N,
    so Phi(x/N, rho) = kappa(x) rho and no per-site root solve is needed.
    """
    flux = block_average_field(env.p * gtab[cfg.eta], l)
    rho = block_average_field(cfg.eta, l)
    return np.abs(flux - kappa_lattice * rho)


def two_block_statistic(cfg: ParticleConfig, l: int, eps: float) -> float:
    """Mean over sites x and shifts |y|_inf <= eps N of
    |eta^l(x + y) - eta^(eps N)(x)|: the scale-comparison diagnostic."""
    big = int(eps * cfg.N)
    if big <= l:
        raise ValueError("eps N must exceed l")
    small_avg = block_average_field(cfg.eta, l)
    big_avg = block_average_field(cfg.eta, big)
    total = 0.0
    count = 0
    rng_off = range(-big, big + 1)
    offsets = np.stack(np.meshgrid(*([list(rng_off)] * cfg.d), indexing="ij"),
                       axis=-1).reshape(-1, cfg.d)
    for off in offsets:
        shifted = np.roll(small_avg, shift=tuple(-off), axis=tuple(range(cfg.d)))
        total += float(np.abs(shifted - big_avg).mean())
        count += 1
    return total / count
