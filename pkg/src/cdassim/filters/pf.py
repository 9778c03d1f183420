"""Bootstrap particle filter (sequential importance resampling).

Weights are accumulated in log space and normalized with a log-sum-exp,
so small Gaussian likelihoods far from the measurement underflow the
weights only when every particle is incompatible with the data, which is
reported as an error rather than silently uniformized. Resampling is
systematic (one uniform offset, n_p strata) and triggered by an effective
sample size below half the particle count unless configured otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from cdassim.filters.beliefs import GaussianBelief, ParticleSet, posterior_summary
from cdassim.filters.linalg import chol_psd
from cdassim.filters.montecarlo import propagate_members, resolve_member_rngs
from cdassim.sde import NoiseStream, SdeModel

__all__ = [
    "DegenerateWeightsError",
    "ResamplePolicy",
    "PfStepInfo",
    "effective_sample_size",
    "systematic_resample",
    "pf_step",
]


class DegenerateWeightsError(RuntimeError):
    """Every particle weight underflowed to zero (likelihood degenerate)."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class ResamplePolicy:
    """When to resample: 'always', 'never', or 'ess' below threshold * n_p."""

    kind: str = "ess"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("always", "never", "ess"):
            raise ValueError(f"unknown resample policy {self.kind!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")

    def should_resample(self, ess: float, n: int) -> bool:
        if self.kind == "always":
            return True
        if self.kind == "never":
            return False
        return ess < self.threshold * n


@dataclass(frozen=True)
class PfStepInfo:
    """Diagnostics of one assimilation step."""

    posterior: GaussianBelief          # weighted summary before resampling
    prior: GaussianBelief              # propagated summary with pre-update weights
    innovation: np.ndarray             # y - weighted predicted observation
    innovation_cov: np.ndarray         # weighted obs spread + R
    ess: float                         # after reweighting, before resampling
    resampled: bool


def effective_sample_size(weights: np.ndarray) -> float:
    """Kish effective sample size 1 / sum(w_i^2) of normalized weights."""
    w = np.asarray(weights, dtype=float)
    s = float((w * w).sum())
    if s <= 0.0 or not np.isfinite(s):
        raise ValueError("weights must be normalized and finite")
    return 1.0 / s


def systematic_resample(particles: ParticleSet, noise) -> ParticleSet:
    """Systematic (single-offset stratified) resampling to uniform weights.

    Uses one uniform draw u ~ U[0,1): stratum k picks the particle whose
    cumulative weight first reaches (k + u) / n_p. Uniform input weights
    therefore reproduce every particle exactly once.
    """
    rng = noise.generator() if isinstance(noise, NoiseStream) else noise
    n = particles.size
    u0 = rng.uniform() / n
    positions = u0 + np.arange(n) / n
    cumw = np.cumsum(particles.weights)
    cumw[-1] = 1.0  # guard the last stratum against roundoff in the sum
    idx = np.searchsorted(cumw, positions)
    return ParticleSet(particles.particles[:, idx], np.full(n, 1.0 / n), particles.time)


def _log_gaussian(e: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Log N(e; 0, R) per column of e, up to the weight-invariant constant."""
    LR = chol_psd(R)
    z = scipy.linalg.solve_triangular(LR, e, lower=True)
    return -0.5 * np.einsum("ij,ij->j", z, z)


def pf_step(model: SdeModel, particles: ParticleSet, u, t1: float, y: np.ndarray,
            R: np.ndarray, noise, resample: ResamplePolicy = ResamplePolicy(),
            substeps: int = 10) -> tuple[ParticleSet, PfStepInfo]:
    """One propagate/reweight/resample cycle; returns (particles, diagnostics).

    ``noise`` is a parent stream (children 0..n_p-1 propagate the particles
    and child n_p drives resampling) or a tuple ``(member_rngs, resample_rng)``
    of pre-built generators.
    """
    n_p = particles.size
    if isinstance(noise, NoiseStream):
        prop_noise = noise
        resample_rng = noise.child(n_p).generator()
    else:
        prop_noise, resample_rng = noise
    rngs = resolve_member_rngs(prop_noise, n_p)

    y = np.atleast_1d(np.asarray(y, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    X = propagate_members(model, particles.particles, u, particles.time, t1, rngs, substeps)
    propagated = ParticleSet(X, particles.weights, t1)
    prior = posterior_summary(propagated)

    Yp = np.atleast_2d(np.asarray(model.measure(t1, X), dtype=float))
    E = y[:, None] - Yp
    with np.errstate(divide="ignore"):
        logw = np.log(particles.weights) + _log_gaussian(E, R)
    peak = logw.max()
    if not np.isfinite(peak):
        raise DegenerateWeightsError(
            f"all particle weights underflowed at t={t1}", time=t1)
    w = np.exp(logw - peak)
    w /= w.sum()

    weighted = ParticleSet(X, w, t1)
    posterior = posterior_summary(weighted)
    yhat = Yp @ w
    dY = Yp - yhat[:, None]
    Re = (dY * w) @ dY.T + R
    ess = effective_sample_size(w)
    do_resample = resample.should_resample(ess, n_p)
    out = systematic_resample(weighted, resample_rng) if do_resample else weighted
    info = PfStepInfo(
        posterior=posterior,
        prior=prior,
        innovation=y - yhat,
        innovation_cov=Re,
        ess=ess,
        resampled=do_resample,
    )
    return out, info
