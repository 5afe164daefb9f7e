"""Conservative explicit solver for d rho/dt = Laplacian of the flux.

The flux w(u) is kappa(u) * rho in the linear case and a general
monotone function of the local density otherwise.  The update applies
the discrete Laplacian directly to w, so any profile with constant flux
(in particular multiples of 1/kappa) is an exact fixed point, and the
cell update telescopes: discrete mass is conserved to rounding.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ensemble import EnsembleCalculator, harmonic_mean_ftilde_many
from .errors import CflViolation, GridMismatch, NegativeDensity
from .lattice import DensityField

CFL_SAFETY = 0.9


def cell_centers(d: int, M: int) -> np.ndarray:
    axes = (np.indices((M,) * d).astype(np.float64) + 0.5) / M
    return np.moveaxis(axes, 0, -1)


def diffusivity_grid(model, M: int, d: int = 2) -> np.ndarray:
    """Effective diffusivity kappa(u) = harmonic-mean rate at cell centers."""
    if M < 8:
        raise ValueError("need M >= 8")
    thetas = model.theta(cell_centers(d, M))
    return harmonic_mean_ftilde_many(model, thetas)


class LinearFlux:
    """w = kappa(u) * rho with a precomputed coefficient grid."""

    def __init__(self, kappa: np.ndarray):
        self.kappa = np.asarray(kappa, dtype=np.float64)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.kappa * rho

    def max_slope(self, rho_max: float) -> float:
        return float(self.kappa.max())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.kappa.tobytes()).hexdigest()[:16]


class GeneralFlux:
    """w(u_j) = Phi(u_j, rho_j) evaluated through the ensemble calculator.

    Each cell needs a root solve per step, so this path is meant for
    small grids and cross-checks; the slope bound for the timestep is
    estimated by sampling secants of Phi up to the current density peak.
    """

    def __init__(self, calc: EnsembleCalculator, d: int, M: int):
        self.calc = calc
        self.centers = cell_centers(d, M).reshape(-1, d)
        self.shape = (M,) * d

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        flat = rho.ravel()
        out = np.empty_like(flat)
        for i, u in enumerate(self.centers):
            out[i] = self.calc.Phi(u, float(flat[i]))
        return out.reshape(self.shape)

    def max_slope(self, rho_max: float) -> float:
        hi = max(rho_max, 1e-6) * 1.25
        samples = np.linspace(0.0, hi, 9)
        worst = 0.0
        for u in self.centers:
            vals = np.array([self.calc.Phi(u, float(r)) for r in samples])
            worst = max(worst, float(np.max(np.diff(vals) / np.diff(samples))))
        return worst

    def fingerprint(self) -> str:
        return "general-flux"


@dataclass(eq=False)
class PdeProblem:
    """Explicit finite-difference state on the periodic M^d grid."""

    rho: np.ndarray
    flux: Callable
    t: float = 0.0
    safety: float = CFL_SAFETY
    dt: float = field(default=0.0)
    _slope_cert: float = field(default=0.0, repr=False)
    _rho_cert: float = field(default=0.0, repr=False)
    steps_taken: int = field(default=0, repr=False)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64).copy()
        if np.any(self.rho < 0):
            raise NegativeDensity("initial density must be nonnegative")
        self._recompute_dt()

    @property
    def d(self) -> int:
        return self.rho.ndim

    @property
    def M(self) -> int:
        return self.rho.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.M

    def mass(self) -> float:
        return float(self.rho.sum()) * self.h**self.d

    def field(self) -> DensityField:
        return DensityField(values=self.rho.copy())

    def _recompute_dt(self) -> None:
        rho_max = float(self.rho.max(initial=0.0))
        self._rho_cert = max(rho_max * 1.25, 1e-6)
        self._slope_cert = self.flux.max_slope(rho_max)
        lam = max(self._slope_cert, 1e-300)
        self.dt = self.safety * self.h**2 / (2 * self.d * lam)

    @staticmethod
    def linear(kappa: np.ndarray, rho0: np.ndarray, safety: float = CFL_SAFETY) -> "PdeProblem":
        return PdeProblem(rho=rho0, flux=LinearFlux(kappa), safety=safety)

    @staticmethod
    def general(calc: EnsembleCalculator, rho0: np.ndarray,
                safety: float = CFL_SAFETY) -> "PdeProblem":
        rho0 = np.asarray(rho0, dtype=np.float64)
        m = rho0.shape[0]
        return PdeProblem(rho=rho0, flux=GeneralFlux(calc, rho0.ndim, m), safety=safety)


def _laplacian(w: np.ndarray) -> np.ndarray:
    out = -2.0 * w.ndim * w
    for ax in range(w.ndim):
        out += np.roll(w, 1, axis=ax) + np.roll(w, -1, axis=ax)
    return out


def pde_step(problem: PdeProblem, dt: float | None = None) -> PdeProblem:
    """One explicit Euler step (optionally with a shorter dt)."""
    if float(problem.rho.max(initial=0.0)) > problem._rho_cert:
        problem._recompute_dt()
    step = problem.dt if dt is None else dt
    bound = problem.safety * problem.h**2 / (2 * problem.d * max(problem._slope_cert, 1e-300))
    if step > bound * (1 + 1e-12):
        raise CflViolation(f"dt = {step} above stability bound {bound}")
    w = problem.flux(problem.rho)
    problem.rho += (step / problem.h**2) * _laplacian(w)
    if np.any(problem.rho < 0):
        raise NegativeDensity(f"negative density at t = {problem.t + step}")
    problem.t += step
    problem.steps_taken += 1
    return problem


def pde_run(problem: PdeProblem, t_end: float,
            observers: Sequence[tuple[float, Callable]] = ()) -> PdeProblem:
    """Step until t_end, landing exactly on observer times and t_end."""
    if t_end < problem.t:
        raise ValueError("cannot run backwards")
    stops = sorted(tm for tm, _ in observers if problem.t <= tm <= t_end) + [t_end]
    callbacks: dict[float, list[Callable]] = {}
    for tm, cb in observers:
        callbacks.setdefault(tm, []).append(cb)
    for stop in stops:
        while stop - problem.t > 1e-15 * max(1.0, stop):
            pde_step(problem, dt=min(problem.dt, stop - problem.t))
        problem.t = stop
        for cb in callbacks.get(stop, []):
            cb(problem.field(), stop)
    return problem


def stationary_profile(kappa: np.ndarray, mass: float) -> DensityField:
    """The zero-flux profile C / kappa(u) holding the given total mass."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    kappa = np.asarray(kappa, dtype=np.float64)
    h = 1.0 / kappa.shape[0]
    inv = 1.0 / kappa
    c = mass / (float(inv.sum()) * h**kappa.ndim)
    return DensityField(values=c * inv)


def field_error(a, b, norm: str = "L1", resample: bool = False) -> float:
    """Discrete norm of the difference of two fields.

    L1 and L2 carry the cell-volume weight h^d; Linf is the plain max.
    Mismatched grids raise GridMismatch unless `resample`, in which case
    b is resampled onto a's grid by nearest cell.
    """
    av = a.values if isinstance(a, DensityField) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, DensityField) else np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        if not resample:
            raise GridMismatch(f"shapes {av.shape} vs {bv.shape}")
        bv = _resample_nearest(bv, av.shape)
    diff = np.abs(av - bv)
    h_d = (1.0 / av.shape[0]) ** av.ndim
    if norm == "L1":
        return float(diff.sum()) * h_d
    if norm == "L2":
        return math.sqrt(float((diff**2).sum()) * h_d)
    if norm == "Linf":
        return float(diff.max())
    raise ValueError(f"unknown norm {norm!r}")


def _resample_nearest(values: np.ndarray, shape: tuple) -> np.ndarray:
    idx = []
    for ax, m_new in enumerate(shape):
        centers = (np.arange(m_new) + 0.5) / m_new
        idx.append(np.mod(np.floor(centers * values.shape[ax]).astype(np.int64),
                          values.shape[ax]))
    mesh = np.meshgrid(*idx, indexing="ij")
    return values[tuple(mesh)]
