"""Extended Kalman filtering for SDE dynamics with discrete updates.

Prediction integrates the joint moment ODEs

    dm/dt = f(t, m, u)
    dP/dt = A P + P A^T + sigma sigma^T,    A = df/dx(t, m, u)

with a fixed-step classical Runge-Kutta scheme between measurements. The
measurement update is the Joseph-form update

    P+ = (I - K C) P (I - K C)^T + K R K^T,

whose additive term uses the measurement-noise covariance R (not the
innovation covariance), keeping the posterior consistent for any gain.
"""
from __future__ import annotations

import numpy as np

from cdassim.filters.beliefs import GaussianBelief
from cdassim.filters.linalg import solve_spd, symmetrize, condition_number
from cdassim.sde import SdeModel, _as_input

__all__ = ["DivergenceError", "ekf_predict", "kalman_update"]


class DivergenceError(RuntimeError):
    """Filter state became non-finite."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


def _moment_rhs(model: SdeModel, t: float, m: np.ndarray, P: np.ndarray, u) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(model.drift(t, m, u), dtype=float)
    A = model.drift_jac(t, m, u)
    g = np.asarray(model.diffusion(t, m, u), dtype=float)
    AP = A @ P
    return f, AP + AP.T + g @ g.T


def ekf_predict(model: SdeModel, belief: GaussianBelief, u, t1: float,
                substeps: int = 10) -> GaussianBelief:
    """Propagate a Gaussian belief to time ``t1`` through the moment ODEs.

    ``u`` may be a constant input vector or a callable ``t -> u``; it is
    evaluated at every Runge-Kutta stage time. The model's ``constrain``
    hook is applied to the mean after each substep, and the covariance is
    re-symmetrized.
    """
    t0 = belief.time
    if t1 < t0:
        raise ValueError("cannot predict backwards in time")
    if t1 == t0:
        return belief
    u_of = _as_input(u)
    h = (t1 - t0) / substeps
    m = belief.mean.copy()
    P = belief.cov.copy()
    for j in range(substeps):
        t = t0 + j * h
        tm = t + 0.5 * h
        te = t + h
        u0, um, u1 = u_of(t), u_of(tm), u_of(te)
        k1m, k1P = _moment_rhs(model, t, m, P, u0)
        k2m, k2P = _moment_rhs(model, tm, m + 0.5 * h * k1m, P + 0.5 * h * k1P, um)
        k3m, k3P = _moment_rhs(model, tm, m + 0.5 * h * k2m, P + 0.5 * h * k2P, um)
        k4m, k4P = _moment_rhs(model, te, m + h * k3m, P + h * k3P, u1)
        m = m + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        P = symmetrize(P + (h / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P))
        if model.constrain is not None:
            m = model.constrain(m)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(P))):
        raise DivergenceError(f"EKF moments diverged by t={t1}", time=t1)
    return GaussianBelief(m, P, t1)


def kalman_update(belief: GaussianBelief, model: SdeModel, y: np.ndarray,
                  R: np.ndarray) -> tuple[GaussianBelief, np.ndarray, np.ndarray]:
    """Joseph-form linearized measurement update.

    Returns (posterior, innovation, innovation covariance).
    """
    t, m, P = belief.time, belief.mean, belief.cov
    y = np.atleast_1d(np.asarray(y, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    C = np.atleast_2d(model.measure_jac(t, m))
    yhat = np.atleast_1d(np.asarray(model.measure(t, m), dtype=float))
    e = y - yhat
    Re = C @ P @ C.T + R
    # K = P C^T Re^{-1}, via the Cholesky solve of the innovation covariance
    K = solve_spd(Re, C @ P).T
    m_post = m + K @ e
    J = np.eye(belief.dim) - K @ C
    P_post = symmetrize(J @ P @ J.T + K @ R @ K.T)
    if not np.all(np.isfinite(m_post)):
        raise DivergenceError(f"Kalman update diverged at t={t}", time=t)
    return GaussianBelief(m_post, P_post, t), e, Re


def innovation_stats(e: np.ndarray, Re: np.ndarray) -> tuple[float, float]:
    """Normalized innovation squared and innovation-covariance condition."""
    q = solve_spd(Re, e)
    return float(e @ q), condition_number(Re)
