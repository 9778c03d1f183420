"""Unscented Kalman filtering for SDE dynamics with discrete updates.

The time update draws sigma points from the state augmented with the
Wiener increment over the whole sampling interval: with n state dimensions
and q noise dimensions, 2(n+q)+1 points are generated from

    blockdiag(P, dt * I_q),

and the noise coordinates of each point become its increment, applied in
equal parts across the integrator substeps while the drift advances with
a classical Runge-Kutta step. The measurement update regenerates sigma
points from the predicted belief without noise augmentation and adds the
measurement-noise covariance to the predicted innovation covariance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cdassim.filters.beliefs import GaussianBelief, SigmaPointSet
from cdassim.filters.kalman import DivergenceError
from cdassim.filters.linalg import chol_psd, solve_spd, symmetrize
from cdassim.sde import SdeModel, _as_input

__all__ = ["UkfScaling", "ukf_sigma_points", "ukf_predict", "ukf_update"]


@dataclass(frozen=True)
class UkfScaling:
    """Unscented-transform spread parameters (alpha, beta, kappa)."""

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.kappa < 0.0:
            raise ValueError("kappa must be non-negative")


def _weights(n: int, scaling: UkfScaling) -> tuple[np.ndarray, np.ndarray, float]:
    c = scaling.alpha**2 * (n + scaling.kappa)
    lam = c - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * c))
    wm[0] = lam / c
    wc = wm.copy()
    wc[0] += 1.0 - scaling.alpha**2 + scaling.beta
    return wm, wc, c


def ukf_sigma_points(belief: GaussianBelief, scaling: UkfScaling,
                     noise_dim: int = 0, dt_total: float = 0.0) -> SigmaPointSet:
    """Generate 2(n+q)+1 sigma points, q the augmented noise dimension.

    With ``noise_dim`` zero this is the plain state-space set used by the
    measurement update. Otherwise the augmented covariance appends a
    ``dt_total * I`` block whose coordinates are returned as per-point
    Wiener increments in ``noise_points``.
    """
    n = belief.dim
    q = noise_dim
    if q < 0:
        raise ValueError("noise_dim must be non-negative")
    if q > 0 and dt_total <= 0.0:
        raise ValueError("dt_total must be positive when noise is augmented")
    nbar = n + q
    wm, wc, c = _weights(nbar, scaling)

    if q == 0:
        P_aug = belief.cov
    else:
        P_aug = np.zeros((nbar, nbar))
        P_aug[:n, :n] = belief.cov
        P_aug[n:, n:] = dt_total * np.eye(q)
    L = chol_psd(P_aug)
    spread = np.sqrt(c) * L
    pts = np.zeros((nbar, 2 * nbar + 1))
    pts[:n, :] = belief.mean[:, None]
    pts[:, 1:nbar + 1] += spread
    pts[:, nbar + 1:] -= spread
    return SigmaPointSet(
        points=pts[:n],
        noise_points=pts[n:] if q > 0 else None,
        mean_weights=wm,
        cov_weights=wc,
        time=belief.time,
    )


def _noise_push(model: SdeModel, t: float, pts: np.ndarray, u, dW: np.ndarray) -> np.ndarray:
    """Per-point diffusion increment ``g dW`` for a column batch of points."""
    g = np.asarray(model.diffusion(t, pts, u), dtype=float)
    if g.ndim == 3:  # state-dependent diffusion returning one matrix per column
        return np.einsum("nqm,qm->nm", g, dW)
    return g @ dW


def ukf_predict(model: SdeModel, belief: GaussianBelief, u, t1: float,
                scaling: UkfScaling, substeps: int = 10) -> GaussianBelief:
    """Propagate via noise-augmented sigma points to ``t1``.

    Each point's total increment is split evenly across substeps, applied
    half before and half after the drift advance of the substep (the
    trapezoidal placement keeps the induced covariance second-order
    accurate in the substep size). The whole point set advances as one
    column batch and is recombined with the unscented weights.
    """
    t0 = belief.time
    if t1 < t0:
        raise ValueError("cannot predict backwards in time")
    if t1 == t0:
        return belief
    u_of = _as_input(u)
    sp = ukf_sigma_points(belief, scaling, model.dim_noise, t1 - t0)
    h = (t1 - t0) / substeps
    pts = sp.points.copy()
    dW = sp.noise_points / (2.0 * substeps)  # half-increment per substep
    for j in range(substeps):
        t = t0 + j * h
        tm = t + 0.5 * h
        te = t + h
        u0, um, u1 = u_of(t), u_of(tm), u_of(te)
        pts = pts + _noise_push(model, t, pts, u0, dW)
        k1 = np.asarray(model.drift(t, pts, u0), dtype=float)
        k2 = np.asarray(model.drift(tm, pts + 0.5 * h * k1, um), dtype=float)
        k3 = np.asarray(model.drift(tm, pts + 0.5 * h * k2, um), dtype=float)
        k4 = np.asarray(model.drift(te, pts + h * k3, u1), dtype=float)
        pts = pts + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pts = pts + _noise_push(model, te, pts, u1, dW)
        if model.constrain is not None:
            pts = model.constrain(pts)
    if not np.all(np.isfinite(pts)):
        raise DivergenceError(f"UKF sigma points diverged by t={t1}", time=t1)
    m = pts @ sp.mean_weights
    dev = pts - m[:, None]
    P = symmetrize((dev * sp.cov_weights) @ dev.T)
    return GaussianBelief(m, P, t1)


def ukf_update(belief: GaussianBelief, model: SdeModel, y: np.ndarray, R: np.ndarray,
               scaling: UkfScaling) -> tuple[GaussianBelief, np.ndarray, np.ndarray]:
    """Unscented measurement update.

    Returns (posterior, innovation, innovation covariance). Sigma points
    are regenerated from the predicted belief without noise augmentation;
    the additive measurement noise enters through
    ``R_yy = sum W_c dy dy^T + R`` and the posterior covariance is
    ``P - K R_yy K^T``.
    """
    t, m, P = belief.time, belief.mean, belief.cov
    y = np.atleast_1d(np.asarray(y, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    sp = ukf_sigma_points(belief, scaling)
    Y = np.atleast_2d(np.asarray(model.measure(t, sp.points), dtype=float))
    yhat = Y @ sp.mean_weights
    dy = Y - yhat[:, None]
    dx = sp.points - m[:, None]
    Ryy = symmetrize((dy * sp.cov_weights) @ dy.T + R)
    Rxy = (dx * sp.cov_weights) @ dy.T
    K = solve_spd(Ryy, Rxy.T).T
    e = y - yhat
    m_post = m + K @ e
    P_post = symmetrize(P - K @ Ryy @ K.T)
    if not np.all(np.isfinite(m_post)):
        raise DivergenceError(f"UKF update diverged at t={t}", time=t)
    return GaussianBelief(m_post, P_post, t), e, Ryy
