"""Measurement-sequence driver shared by the four filter kinds.

One call runs a whole assimilation pass: predict to each measurement time,
update, and record per-step diagnostics (moments, innovations, NIS, timing)
in a :class:`FilterOutput`. Reproducibility comes from fixed child-stream
roles under the configured noise stream: sample-based filters derive their
initial draw, per-member propagation substreams, per-member observation
perturbations, and the resampling stream from the tags below, so two runs
with the same stream are bitwise identical no matter how work is scheduled.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from cdassim.filters.beliefs import (
    Ensemble,
    FilterOutput,
    GaussianBelief,
    ParticleSet,
    posterior_summary,
)
from cdassim.filters.enkf import enkf_predict, enkf_update
from cdassim.filters.kalman import (
    DivergenceError,
    ekf_predict,
    innovation_stats,
    kalman_update,
)
from cdassim.filters.linalg import FactorizationError, SingularInnovationError, chol_psd
from cdassim.filters.montecarlo import member_generators
from cdassim.filters.pf import DegenerateWeightsError, ResamplePolicy, pf_step
from cdassim.filters.unscented import UkfScaling, ukf_predict, ukf_update
from cdassim.sde import NoiseSpec, NoiseStream, SdeModel

__all__ = [
    "FILTER_KINDS",
    "STREAM_INIT",
    "STREAM_PROPAGATE",
    "STREAM_PERTURB",
    "STREAM_RESAMPLE",
    "FilterConfig",
    "FilterRunError",
    "run_filter",
]

FILTER_KINDS = ("ekf", "ukf", "enkf", "pf")

# Child-stream roles under a filter's root stream.
STREAM_INIT = 0
STREAM_PROPAGATE = 1
STREAM_PERTURB = 2
STREAM_RESAMPLE = 3


class FilterRunError(RuntimeError):
    """A filter failed mid-run; carries the filter kind, step index and time."""

    def __init__(self, kind: str, step: int, at: float, cause: Exception):
        super().__init__(f"{kind} failed at step {step} (t={at:g}): {cause}")
        self.kind = kind
        self.step = step
        self.time = at


@dataclass(frozen=True)
class FilterConfig:
    """Everything a filter run needs besides the model and the data.

    ``stream`` seeds the sample-based filters and may be omitted for the
    Gaussian ones. ``ensemble_size`` and ``particle_count`` apply to their
    respective filters only; ``pf_resampled_summary`` switches the reported
    particle posterior from the importance-weighted summary to the summary
    of the equally weighted resampled set.
    """

    initial: GaussianBelief
    obs_cov: np.ndarray | NoiseSpec
    stream: NoiseStream | None = None
    substeps: int = 10
    scaling: UkfScaling = UkfScaling()
    ensemble_size: int = 100
    particle_count: int = 1000
    resample: ResamplePolicy = ResamplePolicy()
    pf_resampled_summary: bool = False

    def __post_init__(self):
        spec = self.obs_cov if isinstance(self.obs_cov, NoiseSpec) else NoiseSpec(self.obs_cov)
        object.__setattr__(self, "obs_cov", spec.obs_cov)
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.particle_count < 1:
            raise ValueError("particle_count must be at least 1")


def _empty_output(kind: str, config: FilterConfig, n: int, ny: int) -> FilterOutput:
    out = FilterOutput(
        kind=kind,
        initial=config.initial,
        times=np.zeros(0),
        prior_mean=np.zeros((0, n)),
        prior_cov=np.zeros((0, n, n)),
        post_mean=np.zeros((0, n)),
        post_cov=np.zeros((0, n, n)),
        innovation=np.zeros((0, ny)),
        innovation_cov=np.zeros((0, ny, ny)),
        nis=np.zeros(0),
        gain_condition=np.zeros(0),
        step_seconds=np.zeros(0),
    )
    if kind == "pf":
        out.ess = np.zeros(0)
        out.resampled = np.zeros(0, dtype=bool)
    return out


def _initial_members(config: FilterConfig, model: SdeModel, size: int) -> np.ndarray:
    rng = config.stream.child(STREAM_INIT).generator()
    L0 = chol_psd(config.initial.cov)
    X = config.initial.mean[:, None] + L0 @ rng.standard_normal((config.initial.dim, size))
    if model.constrain is not None:
        X = model.constrain(X)
    return X


def run_filter(kind: str, model: SdeModel, config: FilterConfig, times, measurements,
               u=None) -> FilterOutput:
    """Assimilate a measurement sequence with the requested filter.

    ``times`` are strictly increasing measurement times at or after the
    initial belief's time; ``measurements`` holds one observation row per
    time. ``u`` is a constant input vector, a callable ``t -> u``, or None
    for zero input. Failures raise :class:`FilterRunError` with the
    offending step attached.
    """
    kind = kind.lower()
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter kind {kind!r}; expected one of {FILTER_KINDS}")
    R = config.obs_cov
    ny = R.shape[0]
    n = config.initial.dim

    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        return _empty_output(kind, config, n, ny)
    Y = np.asarray(measurements, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if ny == 1 else np.atleast_2d(Y)
    if Y.shape != (times.size, ny):
        raise ValueError(f"measurements shape {Y.shape}, expected {(times.size, ny)}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("measurement times must be strictly increasing")
    if times[0] < config.initial.time:
        raise ValueError("first measurement precedes the initial belief")

    n_steps = times.size
    out = FilterOutput(
        kind=kind,
        initial=config.initial,
        times=times.copy(),
        prior_mean=np.empty((n_steps, n)),
        prior_cov=np.empty((n_steps, n, n)),
        post_mean=np.empty((n_steps, n)),
        post_cov=np.empty((n_steps, n, n)),
        innovation=np.empty((n_steps, ny)),
        innovation_cov=np.empty((n_steps, ny, ny)),
        nis=np.empty(n_steps),
        gain_condition=np.empty(n_steps),
        step_seconds=np.empty(n_steps),
    )

    belief = config.initial
    if kind in ("enkf", "pf"):
        if config.stream is None:
            raise ValueError(f"{kind} requires a noise stream in the config")
        size = config.ensemble_size if kind == "enkf" else config.particle_count
        X0 = _initial_members(config, model, size)
        prop_rngs = member_generators(config.stream.child(STREAM_PROPAGATE), size)
        if kind == "enkf":
            ensemble = Ensemble(X0, config.initial.time)
            perturb_rngs = member_generators(config.stream.child(STREAM_PERTURB), size)
        else:
            particles = ParticleSet(X0, np.full(size, 1.0 / size), config.initial.time)
            resample_rng = config.stream.child(STREAM_RESAMPLE).generator()
            out.ess = np.empty(n_steps)
            out.resampled = np.zeros(n_steps, dtype=bool)

    for k in range(n_steps):
        t1 = float(times[k])
        y = Y[k]
        tic = time.perf_counter()
        try:
            if kind == "ekf":
                prior = ekf_predict(model, belief, u, t1, config.substeps)
                belief, e, Re = kalman_update(prior, model, y, R)
                post = belief
            elif kind == "ukf":
                prior = ukf_predict(model, belief, u, t1, config.scaling, config.substeps)
                belief, e, Re = ukf_update(prior, model, y, R, config.scaling)
                post = belief
            elif kind == "enkf":
                ensemble = enkf_predict(model, ensemble, u, t1, prop_rngs, config.substeps)
                prior = posterior_summary(ensemble)
                ensemble, post, e, Re = enkf_update(ensemble, model, y, R, perturb_rngs)
            else:
                particles, info = pf_step(
                    model, particles, u, t1, y, R, (prop_rngs, resample_rng),
                    config.resample, config.substeps)
                prior = info.prior
                post = (posterior_summary(particles) if config.pf_resampled_summary
                        else info.posterior)
                e, Re = info.innovation, info.innovation_cov
                out.ess[k] = info.ess
                out.resampled[k] = info.resampled
            out.step_seconds[k] = time.perf_counter() - tic
            out.nis[k], out.gain_condition[k] = innovation_stats(e, Re)
        except (DivergenceError, DegenerateWeightsError, SingularInnovationError,
                FactorizationError) as exc:
            raise FilterRunError(kind, k, t1, exc) from exc
        out.prior_mean[k] = prior.mean
        out.prior_cov[k] = prior.cov
        out.post_mean[k] = post.mean
        out.post_cov[k] = post.cov
        out.innovation[k] = e
        out.innovation_cov[k] = Re
    return out
