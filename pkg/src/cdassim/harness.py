"""Twin-experiment orchestration.

Generates a synthetic truth path and noisy temperature measurements, runs
the four filters against them, reduces the results to benchmark metrics
(state MSE, parameter MSE, per-step wall-clock), compares each filter's
posterior spread against a large-particle reference run, sweeps Monte Carlo
sizes, and writes plot-ready CSV/JSON reports.

Noise-stream tags: truth and measurement noise get their own root streams,
each filter gets a fixed root stream of its own, and the reference particle
run gets another, so any subset of the work can be redone in isolation and
byte-identical results do not depend on scheduling.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cdassim.config import ExperimentConfig
from cdassim.cstr import cstr3_model, default_experiment_model
from cdassim.filters.beliefs import FilterOutput, GaussianBelief
from cdassim.filters.runner import FILTER_KINDS, FilterConfig, FilterRunError, run_filter
from cdassim.sde import NoiseStream, Trajectory, simulate_path

__all__ = [
    "STREAM_TRUTH",
    "STREAM_MEAS",
    "FILTER_STREAM",
    "STREAM_ORACLE",
    "TruthData",
    "FilterMetrics",
    "MetricsReport",
    "UncertaintyReport",
    "SweepRow",
    "generate_truth_and_measurements",
    "run_one_filter",
    "run_all_filters",
    "uncertainty_comparison",
    "ensemble_size_sweep",
    "write_report",
    "write_uncertainty_report",
    "write_sweep_report",
    "worker_count",
]

STREAM_TRUTH = 0
STREAM_MEAS = 1
FILTER_STREAM = {"ekf": 10, "ukf": 11, "enkf": 12, "pf": 13}
STREAM_ORACLE = 14

# Divergence heuristic: a healthy filter's NIS is chi^2(1)-ish (mean 1); a
# diverged one underestimates its spread so squared innovations dwarf the
# predicted innovation variance step after step.
NIS_COLLAPSE_THRESHOLD = 16.0
NIS_COLLAPSE_FRACTION = 0.2

# Spread-loss heuristic: collapse shows up as a posterior direction whose
# variance contracts to machine-level nothing relative to its initial value.
# Healthy runs on the default config keep every direction above ~1e-7 of the
# initial variance (the 4-member ensemble briefly grazes ~3e-10); a 3-member
# ensemble, rank-starved below the augmented dimension, spends ~17% of its
# steps under 1e-10.
SPREAD_COLLAPSE_RATIO = 1e-10
SPREAD_COLLAPSE_FRACTION = 0.05

TAIL_SECONDS = 300.0  # "final five minutes" window for parameter convergence

MSE_X_DEFINITION = (
    "time average over assimilation steps of the squared estimation error "
    "averaged across the three physical states, in native units "
    "(mol/L, mol/L, K); temperature dominates"
)


def worker_count(n_tasks: int, serial: bool = False) -> int:
    """Thread cap honoring the CDASSIM_THREADS environment variable."""
    if serial or n_tasks <= 1:
        return 1
    cap = os.environ.get("CDASSIM_THREADS", "")
    try:
        cap_n = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        cap_n = os.cpu_count() or 1
    return max(1, min(n_tasks, cap_n))


@dataclass(frozen=True)
class TruthData:
    """Synthetic ground truth plus the measurements derived from it."""

    times: np.ndarray        # assimilation instants t_1..t_n, seconds
    trajectory: Trajectory   # 3-state truth path at substep resolution
    truth_states: np.ndarray  # (n+1, 4) augmented truth at t_0..t_n
    measurements: np.ndarray  # (n,) noisy temperature observations

    @property
    def n_steps(self) -> int:
        return len(self.times)


def generate_truth_and_measurements(config: ExperimentConfig) -> TruthData:
    """Simulate one truth path and sample noisy temperature measurements.

    The truth integrates at the same substep resolution the filters use
    internally (no separate fine grid; documented choice). Measurement
    noise draws come from their own stream so regenerating measurements
    never perturbs the truth path.
    """
    params = config.cstr_params()
    flow = config.flow_profile()
    model = cstr3_model(params)
    dt_inner = config.dt_sample / config.substeps
    traj = simulate_path(
        model, config.truth_init()[:3], flow, 0.0, config.horizon_seconds, dt_inner,
        NoiseStream(config.seed, STREAM_TRUTH))
    idx = np.arange(0, len(traj), config.substeps)
    states3 = traj.states[idx]
    truth_states = np.column_stack([states3, np.full(len(idx), config.truth_beta)])
    meas_rng = NoiseStream(config.seed, STREAM_MEAS).generator()
    noise = np.sqrt(config.obs_variance) * meas_rng.standard_normal(config.n_samples)
    return TruthData(
        times=config.sample_times(),
        trajectory=traj,
        truth_states=truth_states,
        measurements=states3[1:, 2] + noise,
    )


@dataclass
class FilterMetrics:
    """One filter's benchmark numbers for one run."""

    kind: str
    status: str = "ok"
    mse_x: float = float("nan")
    mse_p: float = float("nan")
    t_cpu_s: float = float("nan")
    beta_final: float = float("nan")
    beta_tail_mean_abs_err: float = float("nan")
    collapsed: bool = False
    nis_exceed_fraction: float = float("nan")
    spread_collapse_fraction: float = float("nan")
    failed_step: int | None = None
    output: FilterOutput | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "mse_x": self.mse_x,
            "mse_p": self.mse_p,
            "t_cpu_s": self.t_cpu_s,
            "beta_final": self.beta_final,
            "beta_tail_mean_abs_err": self.beta_tail_mean_abs_err,
            "collapsed": self.collapsed,
            "nis_exceed_fraction": self.nis_exceed_fraction,
            "spread_collapse_fraction": self.spread_collapse_fraction,
            "failed_step": self.failed_step,
        }


@dataclass
class MetricsReport:
    """Per-filter metrics for one experiment run."""

    seed: int
    config_hash: str
    filters: dict[str, FilterMetrics]
    mse_x_definition: str = MSE_X_DEFINITION

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "mse_x_definition": self.mse_x_definition,
            "filters": {k: m.to_dict() for k, m in self.filters.items()},
        }


def _filter_config(config: ExperimentConfig, kind: str, *, size: int | None = None,
                   stream_tag: int | None = None) -> FilterConfig:
    tag = FILTER_STREAM[kind] if stream_tag is None else stream_tag
    kwargs = {}
    if size is not None:
        if kind == "enkf":
            kwargs["ensemble_size"] = size
        elif kind == "pf":
            kwargs["particle_count"] = size
    return FilterConfig(
        initial=GaussianBelief(config.filter_init_mean(), config.filter_init_cov(), time=0.0),
        obs_cov=np.array([[config.obs_variance]]),
        stream=NoiseStream(config.seed, tag),
        substeps=config.substeps,
        scaling=config.ukf_scaling(),
        ensemble_size=kwargs.pop("ensemble_size", config.ensemble_size),
        particle_count=kwargs.pop("particle_count", config.particle_count),
        resample=config.resample_policy(),
    )


def _spread_collapse_fraction(out: FilterOutput) -> float:
    """Fraction of steps with a posterior direction squeezed to nothing.

    Per-component posterior variance is compared against the initial belief;
    components that started with zero variance carry no spread to lose and
    are excluded.
    """
    d0 = np.diag(out.initial.cov)
    live = d0 > 0
    if not np.any(live) or len(out.post_cov) == 0:
        return 0.0
    post_var = np.diagonal(out.post_cov, axis1=1, axis2=2)
    rel_floor = (post_var[:, live] / d0[live]).min(axis=1)
    return float(np.mean(rel_floor < SPREAD_COLLAPSE_RATIO))


def _score(kind: str, out: FilterOutput, config: ExperimentConfig,
           truth: TruthData) -> FilterMetrics:
    err = out.post_mean - truth.truth_states[1:]
    tail = truth.times > config.horizon_seconds - TAIL_SECONDS
    nis_frac = float(np.mean(out.nis > NIS_COLLAPSE_THRESHOLD))
    spread_frac = _spread_collapse_fraction(out)
    return FilterMetrics(
        kind=kind,
        mse_x=float(np.mean(err[:, :3] ** 2)),
        mse_p=float(np.mean(err[:, 3] ** 2)),
        t_cpu_s=float(np.mean(out.step_seconds)),
        beta_final=float(out.post_mean[-1, 3]),
        beta_tail_mean_abs_err=float(np.mean(np.abs(err[tail, 3]))),
        collapsed=(spread_frac > SPREAD_COLLAPSE_FRACTION
                   or nis_frac > NIS_COLLAPSE_FRACTION),
        nis_exceed_fraction=nis_frac,
        spread_collapse_fraction=spread_frac,
        output=out,
    )


def run_one_filter(kind: str, config: ExperimentConfig, truth: TruthData, model=None,
                   flow=None, *, size: int | None = None,
                   stream_tag: int | None = None) -> FilterMetrics:
    """Run one filter and reduce it to metrics; failures become a record."""
    if model is None:
        model = default_experiment_model(
            config.cstr_params(), config.flow_profile(),
            param_diffusion=config.sigma_theta).model
    if flow is None:
        flow = config.flow_profile()
    fc = _filter_config(config, kind, size=size, stream_tag=stream_tag)
    try:
        out = run_filter(kind, model, fc, truth.times, truth.measurements, u=flow)
    except FilterRunError as exc:
        return FilterMetrics(kind=kind, status=f"failed: {exc}", collapsed=True,
                             failed_step=exc.step)
    return _score(kind, out, config, truth)


def run_all_filters(config: ExperimentConfig, truth: TruthData,
                    filters=None, serial: bool = False) -> MetricsReport:
    """Run the filter bank against one truth realization.

    Filters run on separate threads unless ``serial``; each owns fixed
    noise streams, so scheduling cannot change any numeric output. A
    failing filter is recorded and the rest continue.
    """
    kinds = list(filters) if filters else list(FILTER_KINDS)
    for kind in kinds:
        if kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {kind!r}")
    exp = default_experiment_model(config.cstr_params(), config.flow_profile(),
                                   param_diffusion=config.sigma_theta)
    workers = worker_count(len(kinds), serial)
    if workers == 1:
        results = [run_one_filter(k, config, truth, exp.model, exp.flow) for k in kinds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda k: run_one_filter(k, config, truth, exp.model, exp.flow), kinds))
    ordered = {k: m for k in FILTER_KINDS for m in results if m.kind == k}
    return MetricsReport(seed=config.seed, config_hash=config.config_hash(), filters=ordered)


@dataclass
class UncertaintyReport:
    """Per-filter posterior-spread comparison against the reference run."""

    seed: int
    config_hash: str
    oracle_status: str
    oracle_min_ess: float
    oracle_particles: int
    times: np.ndarray
    oracle_mean: np.ndarray | None
    oracle_cov: np.ndarray | None
    # per filter: dict of series, each shape (n_steps,) or (n_steps, 4)
    series: dict[str, dict[str, np.ndarray]]
    summary: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "oracle_status": self.oracle_status,
            "oracle_min_ess": self.oracle_min_ess,
            "oracle_particles": self.oracle_particles,
            "filters": self.summary,
        }


def uncertainty_comparison(config: ExperimentConfig, truth: TruthData, filters=None,
                           serial: bool = False,
                           report: MetricsReport | None = None) -> UncertaintyReport:
    """Compare each filter's posterior spread against a big-particle reference.

    The reference is the particle filter itself at ``oracle_particle_count``
    samples, which must be at least 10x the largest configured Monte Carlo
    filter size. Degeneracy of the reference (failure or flagged collapse)
    is reported, not raised.
    """
    largest = max(config.ensemble_size, config.particle_count)
    if config.oracle_particle_count < 10 * largest:
        raise ValueError(
            f"oracle_particle_count={config.oracle_particle_count} must be >= 10x the "
            f"largest filter size ({largest})")
    if report is None:
        report = run_all_filters(config, truth, filters=filters, serial=serial)

    oracle = run_one_filter("pf", config, truth, size=config.oracle_particle_count,
                            stream_tag=STREAM_ORACLE)
    status = oracle.status
    if oracle.ok and oracle.collapsed:
        status = "degenerate: sustained innovation inconsistency"
    out_o = oracle.output
    min_ess = float(np.min(out_o.ess)) if oracle.ok else float("nan")

    series: dict[str, dict[str, np.ndarray]] = {}
    summary: dict[str, dict] = {}
    for kind, m in report.filters.items():
        if not (oracle.ok and m.ok):
            summary[kind] = {"status": m.status if not m.ok else status}
            continue
        out_f = m.output
        dmean = out_f.post_mean - out_o.post_mean
        dcov = out_f.post_cov - out_o.post_cov
        var_f = np.diagonal(out_f.post_cov, axis1=1, axis2=2)
        var_o = np.diagonal(out_o.post_cov, axis1=1, axis2=2)
        var_ratio = var_f / var_o
        t_std_ratio = np.sqrt(np.maximum(var_ratio[:, 2], 0.0))
        within3 = (t_std_ratio >= 1.0 / 3.0) & (t_std_ratio <= 3.0)
        series[kind] = {
            "mean_err": np.linalg.norm(dmean, axis=1),
            "cov_frobenius": np.linalg.norm(dcov, axis=(1, 2)),
            "var_ratio": var_ratio,
            "t_std_ratio": t_std_ratio,
        }
        summary[kind] = {
            "status": "ok",
            "t_std_ratio_within_factor3_fraction": float(np.mean(within3)),
            "t_std_ratio_min": float(t_std_ratio.min()),
            "t_std_ratio_max": float(t_std_ratio.max()),
            "mean_err_max": float(series[kind]["mean_err"].max()),
            "cov_frobenius_max": float(series[kind]["cov_frobenius"].max()),
        }
    return UncertaintyReport(
        seed=config.seed,
        config_hash=config.config_hash(),
        oracle_status=status,
        oracle_min_ess=min_ess,
        oracle_particles=config.oracle_particle_count,
        times=truth.times,
        oracle_mean=out_o.post_mean if oracle.ok else None,
        oracle_cov=out_o.post_cov if oracle.ok else None,
        series=series,
        summary=summary,
    )


@dataclass
class SweepRow:
    kind: str
    size: int
    status: str
    mse_x: float
    mse_p: float
    t_cpu_s: float
    collapsed: bool

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "size": self.size, "status": self.status,
            "mse_x": self.mse_x, "mse_p": self.mse_p, "t_cpu_s": self.t_cpu_s,
            "collapsed": self.collapsed,
        }


def ensemble_size_sweep(config: ExperimentConfig, sizes, truth: TruthData | None = None,
                        filters=("enkf", "pf"), serial: bool = False) -> list[SweepRow]:
    """Rerun the Monte Carlo filters across sizes on one shared realization.

    Collapsed or failed runs are flagged in their row, never fatal.
    """
    sizes = [int(s) for s in sizes]
    if any(s < 2 for s in sizes):
        raise ValueError("every sweep size must be at least 2")
    for kind in filters:
        if kind not in ("enkf", "pf"):
            raise ValueError(f"sweep supports enkf/pf, got {kind!r}")
    if truth is None:
        truth = generate_truth_and_measurements(config)
    exp = default_experiment_model(config.cstr_params(), config.flow_profile(),
                                   param_diffusion=config.sigma_theta)
    tasks = [(kind, size) for kind in filters for size in sizes]

    def one(task):
        kind, size = task
        m = run_one_filter(kind, config, truth, exp.model, exp.flow, size=size)
        return SweepRow(kind=kind, size=size, status=m.status, mse_x=m.mse_x,
                        mse_p=m.mse_p, t_cpu_s=m.t_cpu_s, collapsed=m.collapsed)

    workers = worker_count(len(tasks), serial)
    if workers == 1:
        rows = [one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, tasks))
    return rows


# -- report files -----------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc
    return path


def write_report(report: MetricsReport, config: ExperimentConfig, truth: TruthData,
                 out_dir) -> list[Path]:
    """Write config echo, metrics.csv/json, and per-filter trajectory CSVs.

    Every float is printed with 17 significant digits so equal runs give
    byte-identical files apart from the timing columns.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    config.write(out / "config.json")
    paths.append(out / "config.json")

    lines = ["filter,mse_x,mse_p,t_cpu_s"]
    for kind, m in report.filters.items():
        lines.append(f"{kind},{_fmt(m.mse_x)},{_fmt(m.mse_p)},{_fmt(m.t_cpu_s)}")
    paths.append(_write_text(out / "metrics.csv", "\n".join(lines) + "\n"))

    paths.append(_write_text(out / "metrics.json",
                             json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"))

    header = ("t,truth_ca,truth_cb,truth_t,truth_beta,"
              "est_ca,est_cb,est_t,est_beta,std_ca,std_cb,std_t,std_beta,measurement")
    for kind, m in report.filters.items():
        if not m.ok:
            continue
        o = m.output
        est = np.vstack([o.initial.mean, o.post_mean])
        std = np.vstack([o.initial.marginal_std(), o.marginal_std()])
        times = np.concatenate([[0.0], o.times])
        rows = [header]
        for k in range(len(times)):
            meas = "" if k == 0 else _fmt(truth.measurements[k - 1])
            cells = [_fmt(times[k]), *map(_fmt, truth.truth_states[k]),
                     *map(_fmt, est[k]), *map(_fmt, std[k]), meas]
            rows.append(",".join(cells))
        paths.append(_write_text(out / f"trajectory_{kind}.csv", "\n".join(rows) + "\n"))
    return paths


def write_uncertainty_report(unc: UncertaintyReport, config: ExperimentConfig,
                             out_dir) -> list[Path]:
    """Write uncertainty.json plus one per-filter divergence CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    config.write(out / "config.json")
    paths.append(out / "config.json")
    paths.append(_write_text(out / "uncertainty.json",
                             json.dumps(unc.to_dict(), indent=2, sort_keys=True) + "\n"))
    header = ("t,mean_err,cov_frobenius,var_ratio_ca,var_ratio_cb,var_ratio_t,"
              "var_ratio_beta,t_std_ratio")
    for kind, s in unc.series.items():
        rows = [header]
        for k in range(len(unc.times)):
            cells = [_fmt(unc.times[k]), _fmt(s["mean_err"][k]), _fmt(s["cov_frobenius"][k]),
                     *map(_fmt, s["var_ratio"][k]), _fmt(s["t_std_ratio"][k])]
            rows.append(",".join(cells))
        paths.append(_write_text(out / f"uncertainty_{kind}.csv", "\n".join(rows) + "\n"))
    return paths


def write_sweep_report(rows: list[SweepRow], config: ExperimentConfig, out_dir) -> list[Path]:
    """Write sweep.csv and sweep.json for a size sweep."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "config.json")
    lines = ["filter,size,mse_x,mse_p,t_cpu_s,collapsed,status"]
    for r in rows:
        lines.append(f"{r.kind},{r.size},{_fmt(r.mse_x)},{_fmt(r.mse_p)},"
                     f"{_fmt(r.t_cpu_s)},{int(r.collapsed)},{r.status}")
    p1 = _write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    p2 = _write_text(out / "sweep.json",
                     json.dumps([r.to_dict() for r in rows], indent=2) + "\n")
    return [out / "config.json", p1, p2]
