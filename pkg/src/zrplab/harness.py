"""Experiment orchestration: comparison runs, condensation runs, sweeps,
ensemble tables, and report files.

All outputs are plain CSV plus a JSON manifest; reruns with the same
config and seed are byte-identical.  Replicas run on a process pool when
`workers` allows and are reduced in replica order, so worker count never
changes results.
"""
from __future__ import annotations

import json
import math
import os
import traceback
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import (ExperimentConfig, config_hash, initial_density_grid,
                     loads_config, make_initial, make_model, make_rate,
                     sample_environment, serialize_config, with_overrides)
from .ensemble import EnsembleCalculator, harmonic_mean_ftilde_many
from .environment import export_environment, lattice_points
from .errors import NotCondensingWarning, ValidationError
from .kmc import Simulator
from .lattice import (DensityField, ball_density_field, export_config,
                      grid_ball_stencil, replacement_field, two_block_statistic)
from .pde import PdeProblem, diffusivity_grid, field_error, pde_run

_F = lambda x: repr(float(x))  # noqa: E731  deterministic CSV float format


# ---------------------------------------------------------------------------
# Comparison experiment
# ---------------------------------------------------------------------------

@dataclass
class CheckpointRow:
    t: float
    n: int
    rel_l1_mean: float
    rel_l1_sd: float
    l1_mean: float
    l1_sd: float
    l2_mean: float
    l2_sd: float
    linf_mean: float
    linf_sd: float
    mass_emp_mean: float
    mass_pde: float
    v_mean: float
    v_sd: float
    two_block_mean: float
    two_block_sd: float


@dataclass
class ComparisonReport:
    rows: list
    v_time_avg_mean: float
    v_time_avg_sd: float
    replicas_requested: int
    replicas_effective: int
    failures: list
    mass_conserved: bool
    pde_mass_drift: float
    config_hash: str
    version: str
    mean_fields: list = field(repr=False, default_factory=list)
    pde_fields: list = field(repr=False, default_factory=list)
    out_dir: str | None = None


def _mean_sd(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def _compare_replica(args):
    """One particle trajectory, coarse-grained at every checkpoint."""
    cfg_text, replica = args
    cfg = loads_config(cfg_text)
    try:
        g = make_rate(cfg)
        model = make_model(cfg)
        env = sample_environment(cfg, replica=replica)
        init = make_initial(cfg, replica=replica)
        sim = Simulator(init, env, g, seed=cfg.base_seed, replica=replica)
        stencil = grid_ball_stencil(cfg.d, cfg.N, cfg.M, cfg.ball_radius)

        kappa_lattice = None
        gtab = None
        if g.is_identity and cfg.env_kind == "poisson":
            thetas = model.theta(lattice_points(cfg.d, cfg.N))
            kappa_lattice = harmonic_mean_ftilde_many(model, thetas)
            gtab = g.table(init.total + 1)

        fields = []
        v_means = []
        two_blocks = []

        def capture(s, tm):
            c = s.config()
            fields.append(stencil.densities(c).reshape((cfg.M,) * cfg.d))
            if kappa_lattice is not None:
                v = replacement_field(c, env, cfg.block_l, kappa_lattice, gtab)
                v_means.append(float(v.mean()))
            if cfg.two_block_eps > 0:
                two_blocks.append(two_block_statistic(c, cfg.block_l, cfg.two_block_eps))

        observers = [(tm, capture) for tm in cfg.t_checkpoints]
        sim.run_to_time(cfg.t_checkpoints[-1], observers)
        return {
            "replica": replica,
            "fields": np.stack(fields),
            "v_means": v_means,
            "two_blocks": two_blocks,
            "total_before": init.total,
            "total_after": sim.config().audit_total(),
        }
    except Exception:
        return {"replica": replica, "error": traceback.format_exc()}


def _run_replicas(cfg: ExperimentConfig, worker, n: int) -> list:
    workers = cfg.workers if cfg.workers > 0 else min(n, os.cpu_count() or 1)
    args = [(serialize_config(cfg), r) for r in range(n)]
    if workers <= 1:
        return [worker(a) for a in args]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(min(workers, n)) as pool:
        return pool.map(worker, args)


def run_compare(cfg: ExperimentConfig, out_dir: str | None = None,
                write_outputs: bool = True) -> ComparisonReport:
    """Particle replicas against the limiting PDE at every checkpoint."""
    if cfg.experiment not in ("compare", "sweep"):
        cfg = with_overrides(cfg, experiment="compare")
    out_dir = out_dir or cfg.output_dir

    model = make_model(cfg)
    if cfg.env_kind == "poisson":
        kappa = diffusivity_grid(model, cfg.M, cfg.d)
    else:
        calc = EnsembleCalculator(make_rate(cfg), model)
        centers = (np.indices((cfg.M,) * cfg.d) + 0.5) / cfg.M
        centers = np.moveaxis(centers, 0, -1).reshape(-1, cfg.d)
        kappa = np.array([calc.harmonic_rate_mean(u) for u in centers]).reshape((cfg.M,) * cfg.d)

    problem = PdeProblem.linear(kappa, initial_density_grid(cfg))
    pde_fields = []
    pde_run(problem, cfg.t_checkpoints[-1],
            observers=[(tm, lambda f, t: pde_fields.append(f.values)) for tm in cfg.t_checkpoints])
    pde_mass0 = float(pde_fields[0].sum())
    pde_drift = abs(float(pde_fields[-1].sum()) - pde_mass0) / max(pde_mass0, 1e-300)

    results = _run_replicas(cfg, _compare_replica, cfg.replicas)
    good = [r for r in results if "error" not in r]
    failures = [r["error"] for r in results if "error" in r]
    mass_ok = all(r["total_before"] == r["total_after"] for r in good)

    h_d = (1.0 / cfg.M) ** cfg.d
    rows = []
    mean_fields = []
    for i, tm in enumerate(cfg.t_checkpoints):
        pde_vals = pde_fields[i]
        mass_pde = float(pde_vals.sum()) * h_d
        l1s, l2s, linfs, rels, masses = [], [], [], [], []
        for r in good:
            emp = r["fields"][i]
            l1 = field_error(emp, pde_vals, "L1")
            l1s.append(l1)
            l2s.append(field_error(emp, pde_vals, "L2"))
            linfs.append(field_error(emp, pde_vals, "Linf"))
            rels.append(l1 / mass_pde)
            masses.append(float(emp.sum()) * h_d)
        v_vals = [r["v_means"][i] for r in good if r["v_means"]]
        tb_vals = [r["two_blocks"][i] for r in good if r["two_blocks"]]
        rel_m, rel_s = _mean_sd(rels)
        l1_m, l1_s = _mean_sd(l1s)
        l2_m, l2_s = _mean_sd(l2s)
        li_m, li_s = _mean_sd(linfs)
        v_m, v_s = _mean_sd(v_vals) if v_vals else (math.nan, math.nan)
        tb_m, tb_s = _mean_sd(tb_vals) if tb_vals else (math.nan, math.nan)
        rows.append(CheckpointRow(tm, len(good), rel_m, rel_s, l1_m, l1_s, l2_m, l2_s,
                                  li_m, li_s, _mean_sd(masses)[0], mass_pde,
                                  v_m, v_s, tb_m, tb_s))
        mean_fields.append(np.mean([r["fields"][i] for r in good], axis=0)
                           if good else np.full((cfg.M,) * cfg.d, math.nan))

    v_time = [float(np.mean(r["v_means"])) for r in good if r["v_means"]]
    v_tm, v_ts = _mean_sd(v_time) if v_time else (math.nan, math.nan)
    report = ComparisonReport(
        rows=rows, v_time_avg_mean=v_tm, v_time_avg_sd=v_ts,
        replicas_requested=cfg.replicas, replicas_effective=len(good),
        failures=failures, mass_conserved=mass_ok, pde_mass_drift=pde_drift,
        config_hash=config_hash(cfg), version=__version__,
        mean_fields=mean_fields, pde_fields=[f for f in pde_fields], out_dir=out_dir)
    if write_outputs and out_dir is not None:
        _write_compare_outputs(cfg, report, out_dir, problem.dt)
    return report


def _write_compare_outputs(cfg, report: ComparisonReport, out_dir: str, dt: float) -> None:
    os.makedirs(os.path.join(out_dir, "fields"), exist_ok=True)
    cols = ["t", "n", "rel_l1_mean", "rel_l1_sd", "l1_mean", "l1_sd", "l2_mean",
            "l2_sd", "linf_mean", "linf_sd", "mass_emp_mean", "mass_pde",
            "v_block_mean", "v_block_sd", "two_block_mean", "two_block_sd"]
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.rows:
            fh.write(",".join([_F(row.t), str(row.n)] + [_F(v) for v in (
                row.rel_l1_mean, row.rel_l1_sd, row.l1_mean, row.l1_sd, row.l2_mean,
                row.l2_sd, row.linf_mean, row.linf_sd, row.mass_emp_mean, row.mass_pde,
                row.v_mean, row.v_sd, row.two_block_mean, row.two_block_sd)]) + "\n")
    for i, tm in enumerate(cfg.t_checkpoints):
        emp = DensityField(values=report.mean_fields[i])
        pde = DensityField(values=report.pde_fields[i])
        emp.export(csv_path=os.path.join(out_dir, "fields", f"emp_mean_cp{i}.csv"),
                   grid_path=os.path.join(out_dir, "fields", f"emp_mean_cp{i}.grid"),
                   seed=cfg.base_seed)
        pde.export(csv_path=os.path.join(out_dir, "fields", f"pde_cp{i}.csv"),
                   grid_path=os.path.join(out_dir, "fields", f"pde_cp{i}.grid"),
                   seed=cfg.base_seed)
    manifest = {
        "experiment": "compare",
        "config_hash": report.config_hash,
        "version": report.version,
        "base_seed": cfg.base_seed,
        "replicas": list(range(cfg.replicas)),
        "replicas_effective": report.replicas_effective,
        "failures": report.failures,
        "mass_conserved": report.mass_conserved,
        "pde_mass_drift": float(report.pde_mass_drift),
        "pde_dt": float(dt),
        "checkpoints": [float(t) for t in cfg.t_checkpoints],
        "N": cfg.N, "M": cfg.M, "d": cfg.d,
        "v_time_avg_mean": float(report.v_time_avg_mean),
        "v_time_avg_sd": float(report.v_time_avg_sd),
        "config": serialize_config(cfg),
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)


def _write_manifest(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Radial profile and the transient-ring detector
# ---------------------------------------------------------------------------

def radial_profile(values: np.ndarray, center=(0.5, 0.5), bin_width: float | None = None):
    """Mean of a 2-D field over annuli around `center` (torus metric)."""
    values = np.asarray(values, dtype=np.float64)
    m = values.shape[0]
    centers = (np.indices(values.shape).astype(np.float64) + 0.5) / m
    delta = np.moveaxis(centers, 0, -1) - np.asarray(center, dtype=np.float64)
    delta = (delta + 0.5) % 1.0 - 0.5
    r = np.sqrt((delta**2).sum(axis=-1)).ravel()
    if bin_width is None:
        bin_width = max(1.0 / m, 0.0125)
    edges = np.arange(0.0, r.max() + 2 * bin_width, bin_width)
    which = np.digitize(r, edges) - 1
    flat = values.ravel()
    radii, means = [], []
    for b in range(edges.shape[0] - 1):
        mask = which == b
        if mask.any():
            radii.append(0.5 * (edges[b] + edges[b + 1]))
            means.append(float(flat[mask].mean()))
    return np.array(radii), np.array(means)


def ring_transient_check(values: np.ndarray, center=(0.5, 0.5),
                         inner_radius: float = 0.05, far_radius: float = 0.35,
                         margin_rel: float = 0.02):
    """Detect a transient low-density ring around an aggregation center.

    Returns (flag, stats).  The flag is True when the radial profile has
    an intermediate-radius minimum at least `margin_rel` below the
    far-field level, i.e. the profile is non-monotone in the distance
    from the center.  Monotone profiles (uniform fields, stationary
    states) return False.
    """
    radii, prof = radial_profile(values, center=center)
    far_mask = radii >= far_radius
    mid_mask = (radii > inner_radius) & (radii < far_radius)
    if not far_mask.any() or not mid_mask.any():
        raise ValueError("field too coarse for a radial ring check")
    far = float(prof[far_mask].mean())
    mid = prof[mid_mask]
    mid_r = radii[mid_mask]
    i_min = int(np.argmin(mid))
    m_min = float(mid[i_min])
    center_val = float(prof[0])
    flag = (m_min < far * (1.0 - margin_rel)) and (center_val > far)
    stats = {
        "radii": radii, "profile": prof, "far_value": far, "min_value": m_min,
        "min_radius": float(mid_r[i_min]), "center_value": center_val,
        "depth_rel": (far - m_min) / far if far > 0 else math.nan,
    }
    return flag, stats


# ---------------------------------------------------------------------------
# Sweep over lattice sizes
# ---------------------------------------------------------------------------

def run_sweep(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """run_compare at each lattice size in sweep_N; collects trend tables."""
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    reports = {}
    for n_val in cfg.sweep_N:
        sub = with_overrides(cfg, N=n_val, experiment="compare",
                             output_dir=os.path.join(out_dir, f"N{n_val}"))
        reports[n_val] = run_compare(sub, out_dir=sub.output_dir)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        fh.write("N,t,n,rel_l1_mean,rel_l1_sd,v_block_mean,v_block_sd,"
                 "v_time_avg_mean,v_time_avg_sd,two_block_mean,two_block_sd\n")
        for n_val, rep in reports.items():
            for row in rep.rows:
                fh.write(",".join([str(n_val), _F(row.t), str(row.n),
                                   _F(row.rel_l1_mean), _F(row.rel_l1_sd),
                                   _F(row.v_mean), _F(row.v_sd),
                                   _F(rep.v_time_avg_mean), _F(rep.v_time_avg_sd),
                                   _F(row.two_block_mean), _F(row.two_block_sd)]) + "\n")
    _write_manifest(os.path.join(out_dir, "manifest.json"), {
        "experiment": "sweep", "config_hash": config_hash(cfg), "version": __version__,
        "sweep_N": list(cfg.sweep_N), "config": serialize_config(cfg)})
    return reports


# ---------------------------------------------------------------------------
# Condensation experiment
# ---------------------------------------------------------------------------

def _condense_replica(args):
    cfg_text, replica = args
    cfg = loads_config(cfg_text)
    try:
        g = make_rate(cfg)
        env = sample_environment(cfg, replica=replica)
        init = make_initial(cfg, replica=replica)
        sim = Simulator(init, env, g, seed=cfg.base_seed, replica=replica)
        p_flat = env.p.ravel()
        n_sites = p_flat.shape[0]
        cut = np.sort(p_flat)[max(1, math.ceil(0.01 * n_sites)) - 1]
        zeta_flat = None if env.zeta is None else env.zeta.ravel()
        rows = []

        def capture(s, tm):
            eta = s.eta
            amax = int(np.argmax(eta))
            frac = float(eta[amax]) / max(s.total, 1)
            rank = float((p_flat < p_flat[amax]).sum()) / n_sites
            rows.append({
                "t": tm,
                "max_fraction": frac,
                "argmax": s._unravel(amax),
                "p_argmax": float(p_flat[amax]),
                "p_rank_fraction": rank,
                "in_bottom_1pct": bool(p_flat[amax] <= cut),
                "zeta_argmax": int(zeta_flat[amax]) if zeta_flat is not None else -1,
                "zeta_max": int(zeta_flat.max()) if zeta_flat is not None else -1,
            })

        observers = [(tm, capture) for tm in cfg.t_checkpoints]
        sim.run_to_time(cfg.t_checkpoints[-1], observers)
        return {"replica": replica, "rows": rows,
                "total_before": init.total, "total_after": sim.config().audit_total()}
    except Exception:
        return {"replica": replica, "error": traceback.format_exc()}


def run_condense(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Track maximum-site occupancy and its environment rank over time."""
    if cfg.experiment != "condense":
        cfg = with_overrides(cfg, experiment="condense")
    out_dir = out_dir or cfg.output_dir
    g = make_rate(cfg)
    model = make_model(cfg)
    calc = EnsembleCalculator(g, model)
    probe = np.moveaxis((np.indices((16,) * cfg.d) + 0.5) / 16, 0, -1).reshape(-1, cfg.d)
    crit = np.array([calc.critical_density(u) for u in probe])
    mean_crit = float(crit.mean())
    density = float(cfg.init_value)
    subcritical = density <= mean_crit
    if subcritical:
        warnings.warn(
            f"density {density} at or below the mean critical density {mean_crit}; "
            "no macroscopic condensate is expected", NotCondensingWarning)

    results = _run_replicas(cfg, _condense_replica, cfg.replicas)
    good = [r for r in results if "error" not in r]
    failures = [r["error"] for r in results if "error" in r]

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "condense.csv"), "w", newline="") as fh:
        fh.write("replica,t,max_fraction,"
                 + ",".join(f"argmax_x{i}" for i in range(cfg.d))
                 + ",p_argmax,p_rank_fraction,in_bottom_1pct,zeta_argmax,zeta_max\n")
        for r in good:
            for row in r["rows"]:
                fh.write(",".join(
                    [str(r["replica"]), _F(row["t"]), _F(row["max_fraction"])]
                    + [str(c) for c in row["argmax"]]
                    + [_F(row["p_argmax"]), _F(row["p_rank_fraction"]),
                       str(int(row["in_bottom_1pct"])), str(row["zeta_argmax"]),
                       str(row["zeta_max"])]) + "\n")
    _write_manifest(os.path.join(out_dir, "manifest.json"), {
        "experiment": "condense", "config_hash": config_hash(cfg), "version": __version__,
        "mean_critical_density": mean_crit, "density": density,
        "subcritical": subcritical, "failures": failures,
        "mass_conserved": all(r["total_before"] == r["total_after"] for r in good),
        "config": serialize_config(cfg)})
    return {"results": good, "failures": failures, "mean_critical_density": mean_crit,
            "subcritical": subcritical, "out_dir": out_dir}


# ---------------------------------------------------------------------------
# Plain trajectory and plain PDE runs
# ---------------------------------------------------------------------------

def _simulate_replica(args):
    cfg_text, replica = args
    cfg = loads_config(cfg_text)
    try:
        g = make_rate(cfg)
        env = sample_environment(cfg, replica=replica)
        init = make_initial(cfg, replica=replica)
        sim = Simulator(init, env, g, seed=cfg.base_seed, replica=replica,
                        event_log_cap=cfg.event_log_cap)
        snaps = []

        def capture(s, tm):
            snaps.append(s.config().eta.copy())

        sim.run_to_time(cfg.t_checkpoints[-1],
                        [(tm, capture) for tm in cfg.t_checkpoints])
        log_t, log_src, log_tgt = sim.event_log()
        return {"replica": replica, "snaps": snaps, "env_p": env.p, "env_zeta": env.zeta,
                "log": (log_t, log_src, log_tgt),
                "total_before": init.total, "total_after": sim.config().audit_total()}
    except Exception:
        return {"replica": replica, "error": traceback.format_exc()}


def run_simulate(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    if cfg.experiment != "simulate":
        cfg = with_overrides(cfg, experiment="simulate")
    out_dir = out_dir or cfg.output_dir
    os.makedirs(os.path.join(out_dir, "snapshots"), exist_ok=True)
    results = _run_replicas(cfg, _simulate_replica, cfg.replicas)
    good = [r for r in results if "error" not in r]
    failures = [r["error"] for r in results if "error" in r]
    from .lattice import ParticleConfig

    for r in good:
        for i, eta in enumerate(r["snaps"]):
            c = ParticleConfig(eta=eta, total=int(eta.sum()))
            export_config(c, csv_path=os.path.join(out_dir, "snapshots",
                                                   f"replica{r['replica']}_cp{i}.csv"),
                          grid_path=os.path.join(out_dir, "snapshots",
                                                 f"replica{r['replica']}_cp{i}.grid"),
                          seed=cfg.base_seed)
        if cfg.event_log_cap > 0:
            log_t, log_src, log_tgt = r["log"]
            with open(os.path.join(out_dir, f"events_replica{r['replica']}.csv"),
                      "w", newline="") as fh:
                fh.write("macro_time,source,target\n")
                for tt, ss, gg in zip(log_t, log_src, log_tgt):
                    fh.write(f"{_F(tt)},{int(ss)},{int(gg)}\n")
    env0 = sample_environment(cfg, replica=0)
    export_environment(env0, csv_path=os.path.join(out_dir, "environment.csv"),
                       grid_path=os.path.join(out_dir, "environment.grid"))
    _write_manifest(os.path.join(out_dir, "manifest.json"), {
        "experiment": "simulate", "config_hash": config_hash(cfg), "version": __version__,
        "failures": failures,
        "mass_conserved": all(r["total_before"] == r["total_after"] for r in good),
        "config": serialize_config(cfg)})
    return {"results": good, "failures": failures, "out_dir": out_dir}


def run_pde(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    if cfg.experiment != "pde":
        cfg = with_overrides(cfg, experiment="pde")
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    model = make_model(cfg)
    kappa = diffusivity_grid(model, cfg.M, cfg.d)
    problem = PdeProblem.linear(kappa, initial_density_grid(cfg))
    fields = []
    pde_run(problem, cfg.t_checkpoints[-1],
            observers=[(tm, lambda f, t: fields.append((t, f))) for tm in cfg.t_checkpoints])
    for i, (tm, f) in enumerate(fields):
        f.export(csv_path=os.path.join(out_dir, f"pde_cp{i}.csv"),
                 grid_path=os.path.join(out_dir, f"pde_cp{i}.grid"), seed=cfg.base_seed)
    import hashlib

    _write_manifest(os.path.join(out_dir, "manifest.json"), {
        "experiment": "pde", "config_hash": config_hash(cfg), "version": __version__,
        "M": cfg.M, "d": cfg.d, "dt": float(problem.dt),
        "checkpoints": [float(t) for t in cfg.t_checkpoints],
        "coefficient_hash": hashlib.sha256(kappa.tobytes()).hexdigest()[:16],
        "mass_drift": abs(problem.mass() - float(initial_density_grid(cfg).mean())),
        "config": serialize_config(cfg)})
    return {"fields": fields, "problem": problem, "out_dir": out_dir}


# ---------------------------------------------------------------------------
# Ensemble table
# ---------------------------------------------------------------------------

def run_ensemble_table(cfg: ExperimentConfig, out_dir: str | None = None) -> list:
    """Tabulate Z, M, R, the density inverse and the effective diffusivity."""
    from .ensemble import density_M, harmonic_mean_ftilde, partition_Z
    from .errors import DivergentPartition

    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    g = make_rate(cfg)
    model = make_model(cfg)
    calc = EnsembleCalculator(g, model)
    phis = [round(0.1 * k, 10) for k in range(21)]
    u_points = [np.full(cfg.d, 0.5), np.full(cfg.d, 0.25), np.zeros(cfg.d)]
    rows = []
    for u in u_points:
        theta_u = float(model.theta(u)) if cfg.env_kind == "poisson" else math.nan
        ftl = (harmonic_mean_ftilde(model, theta_u) if cfg.env_kind == "poisson"
               else calc.harmonic_rate_mean(u))
        for phi in phis:
            row = {"u": tuple(float(x) for x in u), "theta": theta_u, "ftilde": ftl,
                   "phi": phi}
            try:
                row["Z"] = partition_Z(g, phi)
                row["M"] = density_M(g, phi)
            except DivergentPartition:
                row.update(Z=math.nan, M=math.nan, R=math.nan, Phi_of_R=math.nan,
                           status="divergent")
                rows.append(row)
                continue
            try:
                # the annealed density can diverge before Z does: its bound
                # is the convergence radius times the lowest admissible rate
                row["R"] = calc.R(u, phi)
                row["Phi_of_R"] = calc.Phi(u, row["R"])
                row["status"] = "ok"
            except DivergentPartition:
                row.update(R=math.nan, Phi_of_R=math.nan, status="R_divergent")
            rows.append(row)
    with open(os.path.join(out_dir, "ensemble.csv"), "w", newline="") as fh:
        ucols = ",".join(f"u{i}" for i in range(cfg.d))
        fh.write(f"{ucols},theta,ftilde,phi,Z,M,R,Phi_of_R,status\n")
        for row in rows:
            fh.write(",".join([_F(x) for x in row["u"]]
                              + [_F(row["theta"]), _F(row["ftilde"]), _F(row["phi"]),
                                 _F(row["Z"]), _F(row["M"]), _F(row["R"]),
                                 _F(row["Phi_of_R"]), row["status"]]) + "\n")
    _write_manifest(os.path.join(out_dir, "manifest.json"), {
        "experiment": "ensemble_table", "config_hash": config_hash(cfg),
        "version": __version__, "config": serialize_config(cfg)})
    return rows


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None):
    runner = {
        "compare": run_compare,
        "sweep": run_sweep,
        "condense": run_condense,
        "simulate": run_simulate,
        "pde": run_pde,
        "ensemble_table": run_ensemble_table,
    }.get(cfg.experiment)
    if runner is None:
        raise ValidationError(f"experiment: unknown kind {cfg.experiment!r}")
    return runner(cfg, out_dir=out_dir)
