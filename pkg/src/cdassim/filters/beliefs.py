"""Posterior representations shared by the filters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cdassim.filters.linalg import symmetrize

__all__ = [
    "GaussianBelief",
    "Ensemble",
    "ParticleSet",
    "SigmaPointSet",
    "FilterOutput",
    "posterior_summary",
]


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian state estimate (mean, covariance) pinned to a time."""

    mean: np.ndarray
    cov: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        P = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if P.shape != (m.size, m.size):
            raise ValueError(f"cov shape {P.shape} does not match mean size {m.size}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal_std(self) -> np.ndarray:
        """Per-component standard deviations (negative variances clipped to 0)."""
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def validate(self, sym_tol: float = 1e-10, eig_tol: float = 1e-10) -> None:
        """Check symmetry and near-PSD-ness; raises ValueError on violation."""
        P = self.cov
        scale = max(float(np.abs(P).max()), 1e-300)
        if float(np.abs(P - P.T).max()) > sym_tol * scale:
            raise ValueError("covariance is not symmetric")
        lo = float(np.linalg.eigvalsh(symmetrize(P)).min())
        if lo < -eig_tol * max(float(np.trace(P)), 1e-300):
            raise ValueError(f"covariance has eigenvalue {lo:.3e} below tolerance")


@dataclass(frozen=True)
class Ensemble:
    """Equally weighted sample representation; members are columns."""

    members: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.members, dtype=float))
        if X.shape[1] < 1:
            raise ValueError("ensemble needs at least one member")
        object.__setattr__(self, "members", X)

    @property
    def dim(self) -> int:
        return self.members.shape[0]

    @property
    def size(self) -> int:
        return self.members.shape[1]


@dataclass(frozen=True)
class ParticleSet:
    """Weighted sample representation; particles are columns.

    Weights are non-negative and sum to one (within roundoff).
    """

    particles: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.particles, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.size != X.shape[1]:
            raise ValueError("one weight per particle required")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        s = float(w.sum())
        if not np.isfinite(s) or abs(s - 1.0) > 1e-8:
            raise ValueError(f"weights must sum to one (got {s!r})")
        object.__setattr__(self, "particles", X)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.particles.shape[0]

    @property
    def size(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class SigmaPointSet:
    """Deterministic sigma points (columns) with their UT weights.

    ``noise_points`` holds the Wiener-increment coordinates assigned to each
    point by augmented generation; None for purely state-space sets.
    """

    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    noise_points: np.ndarray | None = None
    time: float = 0.0

    def __post_init__(self):
        if self.points.shape[1] != self.mean_weights.size:
            raise ValueError("one mean weight per point required")
        if self.cov_weights.size != self.mean_weights.size:
            raise ValueError("one covariance weight per point required")

    @property
    def count(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.points @ self.mean_weights

    def covariance(self) -> np.ndarray:
        dev = self.points - self.mean()[:, None]
        return symmetrize((dev * self.cov_weights) @ dev.T)


def posterior_summary(sample) -> GaussianBelief:
    """Gaussian summary of an :class:`Ensemble` or :class:`ParticleSet`.

    Uses the sample mean and the ``1/(n-1)``-normalized sample covariance;
    particle sets use their weighted analogue ``n/(n-1) * sum w_i d_i d_i^T``,
    which reduces to the unweighted formula for uniform weights. A single
    support point yields zero covariance.
    """
    if isinstance(sample, Ensemble):
        X, t = sample.members, sample.time
        n = X.shape[1]
        m = X.mean(axis=1)
        if n == 1:
            return GaussianBelief(m, np.zeros((X.shape[0], X.shape[0])), t)
        dev = X - m[:, None]
        P = (dev @ dev.T) / (n - 1)
        return GaussianBelief(m, symmetrize(P), t)
    if isinstance(sample, ParticleSet):
        X, w, t = sample.particles, sample.weights, sample.time
        n = X.shape[1]
        m = X @ w
        if n == 1:
            return GaussianBelief(m, np.zeros((X.shape[0], X.shape[0])), t)
        dev = X - m[:, None]
        P = (dev * w) @ dev.T * (n / (n - 1))
        return GaussianBelief(m, symmetrize(P), t)
    raise TypeError(f"cannot summarize {type(sample).__name__}")


@dataclass
class FilterOutput:
    """Per-assimilation-step record of one filter run."""

    kind: str
    initial: GaussianBelief
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prior_mean: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    prior_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    post_mean: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    post_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    innovation: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    innovation_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    nis: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gain_condition: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ess: np.ndarray | None = None
    resampled: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def final_belief(self) -> GaussianBelief:
        """Posterior after the last processed measurement (initial if none)."""
        if self.n_steps == 0:
            return self.initial
        return GaussianBelief(self.post_mean[-1], self.post_cov[-1], float(self.times[-1]))

    def marginal_std(self) -> np.ndarray:
        """Per-step posterior standard deviations, shape (n_steps, dim)."""
        return np.sqrt(np.maximum(np.diagonal(self.post_cov, axis1=1, axis2=2), 0.0))
