"""Experiment configuration: a flat `key = value` text format.

An empty file (or no file) yields the reference setup: free particles
(g(n) = n) in the Poisson molecule environment with f(z) = 0.5 + 2/(1+z),
the Gaussian chemoattractant bump of amplitude 30 and width 60, uniform
initial occupation 4, measurement balls of radius 0.05, and checkpoint
times {0.0008, 0.004, 0.01, 0.04, 0.2}.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .ensemble import RateFunction
from .environment import (AdditiveModel, ConstantProfile, GaussianBumpProfile,
                          PoissonMoleculeModel, sample_additive_field,
                          sample_molecule_field)
from .errors import ParseError, ValidationError
from .lattice import ParticleConfig

EXPERIMENTS = ("ensemble_table", "simulate", "pde", "compare", "condense", "sweep")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "compare"
    d: int = 2
    N: int = 250
    M: int = 50
    replicas: int = 8
    base_seed: int = 20201
    workers: int = 1
    output_dir: str = "out"
    ball_radius: float = 0.05
    block_l: int = 2
    t_checkpoints: tuple = (0.0008, 0.004, 0.01, 0.04, 0.2)
    env_kind: str = "poisson"
    env_nu: float = 0.5
    env_chi0: float = 2.0
    env_policy: str = "shared"
    theta_kind: str = "gaussian_bump"
    theta_amplitude: float = 30.0
    theta_width: float = 60.0
    theta_center: float = 0.5
    theta_value: float = 0.0
    env_a: float = 0.5
    env_b: float = 2.5
    env_v: float = 1.5
    env_q_half_width: float = 0.5
    rate_kind: str = "identity"
    rate_g0: float = 3.0
    init_kind: str = "uniform"
    init_value: float = 4.0
    sweep_N: tuple = (48, 96, 192)
    event_log_cap: int = 0
    two_block_eps: float = 0.0


_KEYS = {
    "experiment": "experiment",
    "d": "d",
    "N": "N",
    "M": "M",
    "replicas": "replicas",
    "base_seed": "base_seed",
    "workers": "workers",
    "output_dir": "output_dir",
    "ball_radius": "ball_radius",
    "block_l": "block_l",
    "t_checkpoints": "t_checkpoints",
    "env.kind": "env_kind",
    "env.nu": "env_nu",
    "env.chi0": "env_chi0",
    "env.policy": "env_policy",
    "env.theta.kind": "theta_kind",
    "env.theta.amplitude": "theta_amplitude",
    "env.theta.width": "theta_width",
    "env.theta.center": "theta_center",
    "env.theta.value": "theta_value",
    "env.a": "env_a",
    "env.b": "env_b",
    "env.v": "env_v",
    "env.q_half_width": "env_q_half_width",
    "rate.kind": "rate_kind",
    "rate.g0": "rate_g0",
    "init.kind": "init_kind",
    "init.value": "init_value",
    "sweep.N": "sweep_N",
    "event_log_cap": "event_log_cap",
    "two_block_eps": "two_block_eps",
}
_ATTRS = {attr: key for key, attr in _KEYS.items()}
_DEFAULTS = ExperimentConfig()


def _parse_scalar(token: str, kind: type, where: str):
    token = token.strip()
    try:
        if kind is int:
            return int(token)
        if kind is float:
            return float(token)
    except ValueError:
        raise ParseError(f"{where}: expected {kind.__name__}, got {token!r}") from None
    return token


def _parse_value(attr: str, token: str, where: str):
    default = getattr(_DEFAULTS, attr)
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        token = token.strip()
        if not token:
            return ()
        return tuple(_parse_scalar(t, elem, where) for t in token.split(","))
    if isinstance(default, bool):
        return token.strip().lower() in ("1", "true", "yes")
    return _parse_scalar(token, type(default), where)


def loads_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown keys and invariant violations raise."""
    data = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, token = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ValidationError(f"line {lineno}: unknown field {key!r}")
        attr = _KEYS[key]
        data[attr] = _parse_value(attr, token, f"line {lineno}, field {key!r}")
    cfg = replace(ExperimentConfig(), **data)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: every field, keys sorted; round-trip stable."""
    lines = []
    for key in sorted(_KEYS):
        val = getattr(cfg, _KEYS[key])
        if isinstance(val, tuple):
            token = ", ".join(repr(float(v)) if isinstance(v, float) else str(int(v))
                              for v in val)
        elif isinstance(val, float):
            token = repr(float(val))
        elif isinstance(val, int):
            token = str(int(val))
        else:
            token = str(val)
        lines.append(f"{key} = {token}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def _fail(field: str, why: str):
    raise ValidationError(f"{_ATTRS.get(field, field)}: {why}")


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        _fail("experiment", f"must be one of {EXPERIMENTS}")
    if cfg.d not in (1, 2, 3):
        _fail("d", "dimension must be 1, 2 or 3")
    if cfg.N < 4:
        _fail("N", "lattice side must be at least 4")
    if cfg.M < 8:
        _fail("M", "macroscopic grid must have at least 8 cells per side")
    if cfg.replicas < 1:
        _fail("replicas", "need at least one replica")
    if cfg.workers < 0:
        _fail("workers", "must be >= 0 (0 selects the CPU count)")
    if not 0 < cfg.ball_radius < 0.5:
        _fail("ball_radius", "must lie in (0, 0.5)")
    if not 0 <= cfg.block_l < cfg.N / 2:
        _fail("block_l", "must satisfy 0 <= l < N/2")
    if len(cfg.t_checkpoints) < 1:
        _fail("t_checkpoints", "need at least one checkpoint")
    if any(t < 0 for t in cfg.t_checkpoints):
        _fail("t_checkpoints", "times must be nonnegative")
    if list(cfg.t_checkpoints) != sorted(cfg.t_checkpoints):
        _fail("t_checkpoints", "times must be sorted ascending")
    if cfg.env_kind not in ("poisson", "additive"):
        _fail("env.kind", "must be 'poisson' or 'additive'")
    if cfg.env_policy not in ("shared", "resampled"):
        _fail("env.policy", "must be 'shared' or 'resampled'")
    if cfg.theta_kind not in ("gaussian_bump", "constant"):
        _fail("env.theta.kind", "must be 'gaussian_bump' or 'constant'")
    if cfg.theta_amplitude < 0 or cfg.theta_value < 0:
        _fail("env.theta.amplitude", "molecule density mean must be nonnegative")
    if cfg.theta_width <= 0:
        _fail("env.theta.width", "must be positive")
    if cfg.env_kind == "poisson" and (cfg.env_nu <= 0 or cfg.env_chi0 <= 0):
        _fail("env.nu", "nu and chi0 must be positive")
    if not 0 < cfg.env_a < cfg.env_b:
        _fail("env.a", "need 0 < a < b")
    if cfg.env_q_half_width < 0:
        _fail("env.q_half_width", "must be nonnegative")
    if cfg.rate_kind not in ("identity", "constant"):
        _fail("rate.kind", "must be 'identity' or 'constant'")
    if cfg.rate_kind == "constant" and cfg.rate_g0 <= 0:
        _fail("rate.g0", "must be positive")
    if cfg.init_kind not in ("uniform", "point_mass", "poisson_profile"):
        _fail("init.kind", "must be 'uniform', 'point_mass' or 'poisson_profile'")
    if cfg.init_value < 0:
        _fail("init.value", "must be nonnegative")
    if cfg.init_kind in ("uniform", "point_mass") and cfg.init_value != int(cfg.init_value):
        _fail("init.value", "deterministic initial occupations must be integers")
    if len(cfg.sweep_N) < 2 and cfg.experiment == "sweep":
        _fail("sweep.N", "need at least two lattice sizes to sweep")
    if any(n < 4 for n in cfg.sweep_N):
        _fail("sweep.N", "lattice sides must be at least 4")
    if list(cfg.sweep_N) != sorted(cfg.sweep_N):
        _fail("sweep.N", "must be sorted ascending")
    if cfg.event_log_cap < 0:
        _fail("event_log_cap", "must be nonnegative")
    if not 0 <= cfg.two_block_eps < 0.5:
        _fail("two_block_eps", "must lie in [0, 0.5)")
    if cfg.experiment in ("compare", "sweep"):
        if cfg.rate_kind != "identity":
            _fail("rate.kind", "PDE comparison requires the identity rate (linear flux)")
        if cfg.init_kind == "point_mass":
            _fail("init.kind", "PDE comparison needs a density initial condition")
    if cfg.experiment == "condense" and cfg.rate_kind != "constant":
        _fail("rate.kind", "condensation runs use the constant rate")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def make_theta(cfg: ExperimentConfig):
    if cfg.theta_kind == "constant":
        return ConstantProfile(cfg.theta_value)
    return GaussianBumpProfile(amplitude=cfg.theta_amplitude, width=cfg.theta_width,
                               center=cfg.theta_center)


def make_model(cfg: ExperimentConfig):
    if cfg.env_kind == "poisson":
        return PoissonMoleculeModel(theta=make_theta(cfg), nu=cfg.env_nu, chi0=cfg.env_chi0)
    return AdditiveModel(v=lambda u: np.full(np.asarray(u).shape[:-1], cfg.env_v),
                         a=cfg.env_a, b=cfg.env_b, half_width=cfg.env_q_half_width)


def make_rate(cfg: ExperimentConfig) -> RateFunction:
    if cfg.rate_kind == "identity":
        return RateFunction.identity()
    return RateFunction.constant(cfg.rate_g0)


def sample_environment(cfg: ExperimentConfig, replica: int = 0):
    env_replica = replica if cfg.env_policy == "resampled" else 0
    model = make_model(cfg)
    if cfg.env_kind == "poisson":
        return sample_molecule_field(model, cfg.d, cfg.N, cfg.base_seed, replica=env_replica)
    return sample_additive_field(model, cfg.d, cfg.N, cfg.base_seed, replica=env_replica)


def make_initial(cfg: ExperimentConfig, replica: int = 0) -> ParticleConfig:
    if cfg.init_kind == "uniform":
        return ParticleConfig.uniform(cfg.d, cfg.N, int(cfg.init_value))
    if cfg.init_kind == "point_mass":
        origin = (0,) * cfg.d
        return ParticleConfig.point_mass(cfg.d, cfg.N, origin, int(cfg.init_value))
    value = cfg.init_value
    return ParticleConfig.poisson_profile(
        cfg.d, cfg.N, lambda u: np.full(np.asarray(u).shape[:-1], value),
        cfg.base_seed, replica=replica)


def initial_density_grid(cfg: ExperimentConfig) -> np.ndarray:
    """Macroscopic initial profile matching make_initial (density fields only)."""
    if cfg.init_kind == "point_mass":
        raise ValidationError("init.kind: point_mass has no macroscopic density profile")
    return np.full((cfg.M,) * cfg.d, float(cfg.init_value))


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    out = replace(cfg, **kwargs)
    validate_config(out)
    return out
