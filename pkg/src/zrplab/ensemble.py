"""Exact ensemble mathematics of the zero-range lattice gas.

Single-site weights are phi^n / g(n)! with g(n)! = g(1) g(2) ... g(n).
This module evaluates the resulting partition function Z, the mean
occupation M(phi), the environment-averaged density R(u, phi), its
inverse Phi(u, rho), harmonic-mean effective diffusivities, and exact
canonical (fixed particle number) distributions on small boxes.

Everything here is a pure function of its inputs; instances cache only
immutable derived data and are safe to share across threads.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp

from .errors import DensityUnreachable, DivergentPartition, EnumerationTooLarge

MAX_SERIES_TERMS = 100_000
SERIES_RTOL = 1e-15          # per-sum truncation target (spec ceiling is 1e-13)
LOG_SPACE_THRESHOLD = 1e300  # switch g(n)! products to log accumulation
PHI_SOLVE_RTOL = 1e-10       # |R(u, phi) - rho| <= PHI_SOLVE_RTOL * max(1, rho)


# ---------------------------------------------------------------------------
# Jump-rate functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateFunction:
    """On-site interaction g: N -> [0, inf) with its regularity constants.

    Attributes
    ----------
    fn : callable
        g itself; must satisfy g(n) = 0 iff n = 0.
    kind : str
        "linear_growth", "constant_rate" or "custom".
    lipschitz_bound : float
        g* with |g(n+1) - g(n)| <= g*.
    linear_lower : float
        g0 with g(n)/n >= g0 > 0 (0 when no linear lower bound holds).
    constant_value : float
        The common value g(n) = g0 for n >= 1 in the constant-rate case.
    """

    fn: Callable[[int], float]
    kind: str
    lipschitz_bound: float
    linear_lower: float = 0.0
    constant_value: float = 0.0
    is_identity: bool = False
    _tables: dict = field(default_factory=dict, repr=False)

    @staticmethod
    def identity() -> "RateFunction":
        """g(n) = n: non-interacting particles."""
        return RateFunction(fn=float, kind="linear_growth", lipschitz_bound=1.0,
                            linear_lower=1.0, is_identity=True)

    @staticmethod
    def constant(g0: float) -> "RateFunction":
        """g(n) = g0 for n >= 1: the condensation-prone rate."""
        if g0 <= 0:
            raise ValueError("constant rate must be positive")
        return RateFunction(fn=lambda n: g0 if n > 0 else 0.0, kind="constant_rate",
                            lipschitz_bound=g0, constant_value=g0)

    @staticmethod
    def custom(fn: Callable[[int], float], lipschitz_bound: float,
               linear_lower: float = 0.0) -> "RateFunction":
        return RateFunction(fn=fn, kind="custom", lipschitz_bound=lipschitz_bound,
                            linear_lower=linear_lower)

    @property
    def convergence_radius(self) -> float:
        """Radius of convergence of the single-site partition sum."""
        if self.kind == "constant_rate":
            return self.constant_value
        return math.inf

    def table(self, n_max: int) -> np.ndarray:
        """g(0), ..., g(n_max) as a float array (cached, grow-only)."""
        tab = self._tables.get("g")
        if tab is None or tab.shape[0] <= n_max:
            size = max(n_max + 1, 64)
            if self.is_identity:
                tab = np.arange(size, dtype=np.float64)
            elif self.kind == "constant_rate":
                tab = np.full(size, self.constant_value)
                tab[0] = 0.0
            else:
                tab = np.array([float(self.fn(n)) for n in range(size)])
            tab.setflags(write=False)
            self._tables["g"] = tab
        return tab[: n_max + 1]

    def log_factorial_table(self, n_max: int) -> np.ndarray:
        """log g(n)! for n = 0..n_max; the n = 0 entry is 0 (empty product)."""
        tab = self._tables.get("lgf")
        if tab is None or tab.shape[0] <= n_max:
            g = self.table(max(n_max, 63))
            with np.errstate(divide="ignore"):
                logs = np.log(g)
            logs[0] = 0.0
            tab = np.concatenate(([0.0], np.cumsum(logs[1:])))
            tab.setflags(write=False)
            self._tables["lgf"] = tab
        return tab[: n_max + 1]

    def validate(self, n_max: int = 1000) -> None:
        """Check g(n) = 0 iff n = 0 and the declared regularity up to n_max."""
        g = self.table(n_max)
        if g[0] != 0.0:
            raise ValueError("g(0) must be 0")
        if np.any(g[1:] <= 0.0):
            raise ValueError("g(n) must be positive for n >= 1")
        steps = np.abs(np.diff(g))
        if steps.max() > self.lipschitz_bound * (1 + 1e-12):
            raise ValueError("|g(n+1) - g(n)| exceeds the declared Lipschitz bound")
        if self.linear_lower > 0:
            ratios = g[1:] / np.arange(1, n_max + 1)
            if ratios.min() < self.linear_lower * (1 - 1e-12):
                raise ValueError("g(n)/n falls below the declared linear lower bound")


def g_factorial(g: RateFunction, n: int) -> float:
    """g(1) g(2) ... g(n); 1 for n = 0.

    The running product switches to log accumulation once it exceeds
    LOG_SPACE_THRESHOLD, so huge occupation numbers do not overflow
    intermediate values (the final result may still be float inf).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    tab = g.table(n)
    prod = 1.0
    for k in range(1, n + 1):
        nxt = prod * tab[k]
        if nxt > LOG_SPACE_THRESHOLD:
            lgf = g.log_factorial_table(n)
            with np.errstate(over="ignore"):
                return float(np.exp(lgf[n]))
        prod = nxt
    return prod


def log_g_factorial(g: RateFunction, n: int) -> float:
    return float(g.log_factorial_table(n)[n])


# ---------------------------------------------------------------------------
# Single-site series: Z and the occupation mean
# ---------------------------------------------------------------------------

def _series_zm(g: RateFunction, psis: np.ndarray,
               rtol: float = SERIES_RTOL,
               max_terms: int = MAX_SERIES_TERMS) -> tuple[np.ndarray, np.ndarray]:
    """Z(psi) and M(psi) = E[occupation] for an array of fugacities.

    Terms are accumulated until both the current term and a geometric
    tail bound (ratio test) drop below `rtol` of the partial sums. A
    persistent ratio >= 1 or exhaustion of the term budget raises
    DivergentPartition.
    """
    psis = np.asarray(psis, dtype=np.float64)
    if np.any(psis < 0):
        raise ValueError("fugacity must be nonnegative")
    psi_max = float(psis.max(initial=0.0))
    if psi_max == 0.0:
        return np.ones_like(psis), np.zeros_like(psis)
    if g.kind == "constant_rate" and psi_max >= g.constant_value:
        raise DivergentPartition(
            f"fugacity {psi_max} at or above constant rate {g.constant_value}")

    z = np.ones_like(psis)
    s1 = np.zeros_like(psis)
    term = np.ones_like(psis)
    n = 0
    lookahead = 64
    while n < max_terms:
        n += 1
        gn = g.table(n)[n]
        term = term * (psis / gn)
        z = z + term
        s1 = s1 + n * term
        # geometric bound on everything beyond term n
        r = _future_ratio(g, n, psi_max, lookahead)
        if r < 1.0:
            tmax = float(term.max())
            tail_z = tmax * r / (1.0 - r)
            tail_s1 = tmax * (n * r / (1.0 - r) + r / (1.0 - r) ** 2)
            zmin = float(z.min())
            if tmax <= rtol * zmin and tail_z <= rtol * zmin and tail_s1 <= rtol * max(float(s1.min()), zmin):
                return z, s1 / z
    raise DivergentPartition(
        f"series did not converge within {max_terms} terms (max fugacity {psi_max})")


def _future_ratio(g: RateFunction, n: int, psi_max: float, lookahead: int) -> float:
    """Upper bound on term ratios psi/g(m) for all m > n."""
    if g.kind == "constant_rate":
        return psi_max / g.constant_value
    if g.linear_lower > 0:
        return psi_max / (g.linear_lower * (n + 1))
    # custom without a growth certificate: bound by the observed window
    gmin = float(g.table(n + lookahead)[n + 1: n + lookahead + 1].min())
    return psi_max / gmin if gmin > 0 else math.inf


def partition_Z(g: RateFunction, phi: float) -> float:
    """Normalization Z(phi) = sum_n phi^n / g(n)!."""
    z, _ = _series_zm(g, np.array([phi]))
    return float(z[0])


def density_M(g: RateFunction, phi: float) -> float:
    """Mean occupation of a single site at fugacity phi."""
    _, m = _series_zm(g, np.array([phi]))
    return float(m[0])


def site_pmf(g: RateFunction, phi: float, n: int) -> float:
    """Probability of occupation n at fugacity phi (no environment)."""
    if phi < 0:
        raise ValueError("fugacity must be nonnegative")
    if phi == 0.0:
        return 1.0 if n == 0 else 0.0
    z = partition_Z(g, phi)
    logp = n * math.log(phi) - log_g_factorial(g, n) - math.log(z)
    return math.exp(logp)


def _pmf_vector(g: RateFunction, psi: float, tail: float = 1e-13) -> np.ndarray:
    """Marginal probabilities 0..n_cut with upper tail mass below `tail`."""
    if psi == 0.0:
        return np.array([1.0])
    z, _ = _series_zm(g, np.array([psi]))
    terms = [1.0]
    t = 1.0
    n = 0
    while True:
        n += 1
        t = t * psi / g.table(n)[n]
        terms.append(t)
        r = _future_ratio(g, n, psi, 64)
        if r < 1.0 and t * r / (1.0 - r) <= tail * float(z[0]):
            break
        if n > MAX_SERIES_TERMS:
            raise DivergentPartition("pmf tail did not close")
    return np.array(terms) / float(z[0])


# ---------------------------------------------------------------------------
# Environment-averaged quantities
# ---------------------------------------------------------------------------

class EnsembleCalculator:
    """Grand-canonical quantities for a rate function in an environment model.

    The model provides the law of the site rate at a macroscopic point u
    through `rate_support(u)` (a finite list of values and weights, exact
    for discrete laws, quadrature otherwise) and `local_rate_inf(u)`, the
    infimum of that law's support.
    """

    def __init__(self, g: RateFunction, model):
        self.g = g
        self.model = model
        self._supports: dict = {}

    def support(self, u) -> tuple[np.ndarray, np.ndarray]:
        key = tuple(float(x) for x in np.atleast_1d(u))
        hit = self._supports.get(key)
        if hit is None:
            hit = self.model.rate_support(np.asarray(u, dtype=float))
            self._supports[key] = hit
        return hit

    def harmonic_rate_mean(self, u) -> float:
        """(E[1/p])^-1 over the rate law at u."""
        pvals, w = self.support(u)
        return 1.0 / float(np.dot(w, 1.0 / pvals))

    def R(self, u, phi: float) -> float:
        """Expected particle density at macroscopic point u and fugacity phi."""
        if phi < 0:
            raise ValueError("fugacity must be nonnegative")
        if phi == 0.0:
            return 0.0
        cap = self.phi_sup(u)
        if math.isfinite(cap) and phi > cap * (1 + 1e-12):
            raise DivergentPartition(
                f"fugacity {phi} beyond the convergence bound {cap} at u={u}")
        pvals, w = self.support(u)
        _, m = _series_zm(self.g, phi / pvals)
        return float(np.dot(w, m))

    def phi_sup(self, u) -> float:
        """Largest admissible fugacity at u (inf when Z is entire)."""
        radius = self.g.convergence_radius
        if math.isinf(radius):
            return math.inf
        return radius * float(self.model.local_rate_inf(np.asarray(u, dtype=float)))

    def critical_density(self, u) -> float:
        """Density ceiling sup_phi R(u, phi); inf when every density is reachable."""
        cap = self.phi_sup(u)
        if math.isinf(cap):
            return math.inf
        try:
            return self.R(u, cap)
        except DivergentPartition:
            # the support attains its infimum: R blows up at the boundary
            return math.inf

    def Phi(self, u, rho: float) -> float:
        """Fugacity with R(u, Phi) = rho: the macroscopic flux function."""
        if rho < 0:
            raise ValueError("density must be nonnegative")
        if rho == 0.0:
            return 0.0
        if self.g.is_identity:
            # R(u, phi) = phi * E[1/p] exactly, so the inverse is linear
            return rho * self.harmonic_rate_mean(u)
        cap = self.phi_sup(u)
        if math.isfinite(cap):
            rho_c = self.critical_density(u)
            if rho > rho_c:
                raise DensityUnreachable(
                    f"density {rho} above the critical density {rho_c} at u={u}")
            if rho == rho_c:
                return cap
            hi = cap
        else:
            hi = max(1.0, rho)
            for _ in range(200):
                if self.R(u, hi) >= rho:
                    break
                hi *= 2.0
            else:
                raise DensityUnreachable(f"could not bracket density {rho}")
        phi = brentq(lambda f: self.R(u, f) - rho, 0.0, hi,
                     rtol=4 * np.finfo(float).eps, maxiter=200)
        resid = abs(self.R(u, phi) - rho)
        if resid > PHI_SOLVE_RTOL * max(1.0, rho):
            raise RuntimeError(f"fugacity solve stalled: residual {resid}")
        return float(phi)


def annealed_R(g: RateFunction, model, u, phi: float) -> float:
    """Expected density E_env[M(phi / p)] at macroscopic point u."""
    return EnsembleCalculator(g, model).R(u, phi)


def fugacity_Phi(g: RateFunction, model, u, rho: float) -> float:
    """Inverse of annealed_R in its second argument."""
    return EnsembleCalculator(g, model).Phi(u, rho)


def harmonic_mean_ftilde(model, theta_value: float) -> float:
    """Effective rate (E[1/f(count)])^-1 under Poisson(theta) molecule counts."""
    ks, w = model.count_support(theta_value)
    fvals = model.f(ks)
    return 1.0 / float(np.dot(w, 1.0 / fvals))


def harmonic_mean_ftilde_many(model, theta_values: np.ndarray) -> np.ndarray:
    """Vectorized harmonic_mean_ftilde over an array of theta values."""
    thetas = np.asarray(theta_values, dtype=np.float64)
    flat = thetas.ravel()
    kmax = int(max(model.count_support(float(flat.max()))[0].max(), 1))
    ks = np.arange(kmax + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = -flat[:, None] + ks[None, :] * np.log(flat[:, None]) - gammaln(ks + 1.0)[None, :]
    w = np.exp(logw)
    w[flat == 0.0] = 0.0
    w[flat == 0.0, 0] = 1.0
    inv_f = 1.0 / model.f(np.arange(kmax + 1))
    out = 1.0 / (w @ inv_f)
    return out.reshape(thetas.shape)


# ---------------------------------------------------------------------------
# Canonical (fixed particle number) measures on small boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalSpec:
    """A finite box of site rates with a fixed total particle number."""

    box_rates: tuple[float, ...]
    total_particles: int

    def __post_init__(self):
        if len(self.box_rates) < 1:
            raise ValueError("box must contain at least one site")
        if self.total_particles < 0:
            raise ValueError("particle number must be nonnegative")
        if any(p <= 0 for p in self.box_rates):
            raise ValueError("site rates must be positive")


@dataclass(frozen=True, eq=False)
class CanonicalDistribution:
    """Exact distribution over box occupation vectors with fixed total."""

    configs: np.ndarray   # (n_configs, n_sites) int64, lexicographic
    probs: np.ndarray

    def expect(self, observable: Callable[[tuple], float],
               inner_sites: int | None = None) -> float:
        k = self.configs.shape[1] if inner_sites is None else inner_sites
        vals = np.array([observable(tuple(int(v) for v in cfg[:k])) for cfg in self.configs])
        return float(np.dot(self.probs, vals))

    def total_variation(self, other: "CanonicalDistribution") -> float:
        return 0.5 * float(np.abs(self.probs - other.probs).sum())


def _compositions(total: int, parts: int):
    """All occupation vectors with the given total, lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def canonical_pmf(g: RateFunction, spec: CanonicalSpec, phi_ref: float | None = None,
                  max_sites: int = 6, max_particles: int = 20) -> CanonicalDistribution:
    """Grand-canonical measure on the box conditioned on the particle total.

    The result is independent of the reference fugacity phi_ref (which
    cancels on the fixed-total shell); the default picks a safe value
    inside the convergence region.
    """
    m = len(spec.box_rates)
    k = spec.total_particles
    if m > max_sites or k > max_particles:
        raise EnumerationTooLarge(
            f"box of {m} sites with {k} particles exceeds caps ({max_sites}, {max_particles})")
    radius = g.convergence_radius
    if phi_ref is None:
        phi_ref = 1.0 if math.isinf(radius) else 0.5 * radius * min(spec.box_rates)
    if phi_ref <= 0 or phi_ref / min(spec.box_rates) >= radius:
        raise ValueError("reference fugacity outside the convergence region")

    p = np.asarray(spec.box_rates, dtype=np.float64)
    log_psi = np.log(phi_ref / p)
    log_z = np.log([partition_Z(g, float(psi)) for psi in phi_ref / p])
    lgf = g.log_factorial_table(k)

    configs = np.array(list(_compositions(k, m)), dtype=np.int64)
    logw = configs @ log_psi - lgf[configs].sum(axis=1) - log_z.sum()
    probs = np.exp(logw - logsumexp(logw))
    probs /= probs.sum()
    return CanonicalDistribution(configs=configs, probs=probs)


def box_fugacity(g: RateFunction, box_rates: Sequence[float], total_particles: int) -> float:
    """Fugacity whose product measure on the box has the given mean total."""
    if total_particles == 0:
        return 0.0
    p = np.asarray(box_rates, dtype=np.float64)
    target = float(total_particles)

    def mean_total(phi: float) -> float:
        _, m = _series_zm(g, phi / p)
        return float(m.sum())

    radius = g.convergence_radius
    if math.isinf(radius):
        hi = 1.0
        for _ in range(200):
            if mean_total(hi) >= target:
                break
            hi *= 2.0
    else:
        cap = radius * float(p.min())
        hi = 0.5 * cap
        while mean_total(hi) < target:
            hi = cap - 0.5 * (cap - hi)
    phi = brentq(lambda f: mean_total(f) - target, 0.0, hi,
                 rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(phi)


def equivalence_gap(g: RateFunction, spec: CanonicalSpec,
                    observable: Callable[[tuple], float], inner_sites: int = 1,
                    phi_ref: float | None = None) -> float:
    """|E_canonical[F] - E_grand-canonical[F]| for an observable on the
    first `inner_sites` coordinates of the box.

    The grand-canonical side is evaluated at the fugacity matching the
    canonical density, so the gap measures the equivalence-of-ensembles
    error at this box size.
    """
    if inner_sites < 1 or inner_sites > len(spec.box_rates):
        raise ValueError("inner_sites must address a prefix of the box")
    if inner_sites > 3:
        raise EnumerationTooLarge("product enumeration supports at most 3 inner sites")
    dist = canonical_pmf(g, spec, phi_ref=phi_ref)
    e_can = dist.expect(observable, inner_sites=inner_sites)

    phi_star = box_fugacity(g, spec.box_rates, spec.total_particles)
    marginals = [_pmf_vector(g, phi_star / spec.box_rates[i]) for i in range(inner_sites)]
    e_gc = 0.0
    grids = np.meshgrid(*[np.arange(mv.shape[0]) for mv in marginals], indexing="ij")
    stacked = np.stack([gr.ravel() for gr in grids], axis=1)
    for idx in stacked:
        prob = 1.0
        for i, n in enumerate(idx):
            prob *= marginals[i][n]
        e_gc += prob * observable(tuple(int(n) for n in idx))
    return abs(e_can - e_gc)
