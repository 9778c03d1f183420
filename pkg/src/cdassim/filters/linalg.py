"""Shared linear algebra for the filter updates.

All innovation-covariance solves go through a Cholesky factorization;
explicit matrix inversion is deliberately absent. Factorization failures on
nominally-PSD matrices are repaired by a two-stage diagonal jitter tied to
the matrix trace, after which they are an error.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "FactorizationError",
    "SingularInnovationError",
    "symmetrize",
    "chol_psd",
    "solve_spd",
    "condition_number",
]

# Relative jitter levels applied as delta * trace(P)/n on the diagonal.
_JITTER_LEVELS = (1e-10, 1e-6)

_COND_LIMIT = 1e12


class FactorizationError(np.linalg.LinAlgError):
    """Covariance factorization failed even after diagonal jitter."""


class SingularInnovationError(np.linalg.LinAlgError):
    """Innovation covariance numerically singular (cond > 1e12)."""


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def chol_psd(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a nominally-PSD matrix, with jitter repair.

    On factorization failure retries with ``1e-10 * trace(P)/n`` added to
    the diagonal, then ``1e-6 * trace(P)/n``, then raises
    :class:`FactorizationError`.
    """
    P = np.asarray(P, dtype=float)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    n = P.shape[0]
    base = float(np.trace(P)) / n
    for level in _JITTER_LEVELS:
        try:
            return np.linalg.cholesky(P + (level * base) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance not factorizable after jitter (trace/n={base:.3e})")


def solve_spd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``S X = B`` for symmetric positive definite S via Cholesky.

    Raises :class:`SingularInnovationError` when S is non-finite, fails to
    factor, or its condition number exceeds 1e12.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise SingularInnovationError("innovation covariance is non-finite")
    if condition_number(S) > _COND_LIMIT:
        raise SingularInnovationError(
            f"innovation covariance condition {condition_number(S):.3e} > {_COND_LIMIT:.0e}")
    try:
        cf = scipy.linalg.cho_factor(S, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularInnovationError(f"innovation covariance not PD: {exc}") from exc
    return scipy.linalg.cho_solve(cf, B)


def condition_number(S: np.ndarray) -> float:
    """2-norm condition estimate from the symmetric eigenvalues."""
    S = np.atleast_2d(S)
    if S.shape == (1, 1):
        v = abs(float(S[0, 0]))
        return np.inf if v == 0.0 else 1.0
    w = np.abs(np.linalg.eigvalsh(symmetrize(S)))
    lo = w.min()
    return np.inf if lo == 0.0 else float(w.max() / lo)
