"""Ito SDE models with discrete-time observations, and their integration.

A model couples continuous dynamics

    dx = f(t, x, u) dt + sigma(t, x, u) dw,

driven by a standard Wiener process w (unit spectral density, so all noise
scaling lives inside ``sigma``), with measurements taken at discrete instants

    y_k = h(t_k, x(t_k)) + v_k,    v_k ~ N(0, R).

The module provides the model container, a counter-based noise-stream
abstraction that makes every random draw a pure function of
``(seed, stream_id, call sequence)``, an Euler-Maruyama integrator, and
state augmentation for joint state/parameter estimation (parameters become
extra state components with zero drift).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "NoiseStream",
    "NoiseSpec",
    "SdeModel",
    "AugmentedModel",
    "Trajectory",
    "PiecewiseConstant",
    "euler_maruyama_step",
    "simulate_path",
    "draw_increments",
    "augment",
    "fd_jacobian",
]

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment

ZERO_INPUT = np.zeros(0)


class IntegrationError(RuntimeError):
    """Non-finite drift/diffusion output or otherwise failed integration step."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


def _splitmix64(z: int) -> int:
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class NoiseStream:
    """Handle for one reproducible stream of Wiener increments.

    Streams are counter-based (Philox keyed by ``(seed, stream_id)``):
    the same handle always replays the identical sequence, regardless of
    what other streams were consumed, in which order, or on which worker.
    Hierarchies of independent substreams (one per ensemble member,
    particle, or harness role) are derived with :meth:`child`.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = ((self.seed & _MASK64) << 64) | (self.stream_id & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "NoiseStream":
        """Derive the ``index``-th independent substream of this stream."""
        mixed = _splitmix64((self.stream_id ^ _splitmix64(index & _MASK64)) & _MASK64)
        return NoiseStream(self.seed, mixed)


def draw_increments(noise: NoiseStream, n: int, dt: float, dim: int | None = None) -> np.ndarray:
    """Draw ``n`` i.i.d. Wiener increments N(0, dt) from ``noise``.

    Replaying the same stream yields the identical values. ``dim`` selects
    vector increments of shape ``(n, dim)``; the default is a scalar
    sequence of shape ``(n,)``.
    """
    if n < 0:
        raise ValueError("increment count must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = noise.generator()
    shape = (n,) if dim is None else (n, dim)
    return rng.standard_normal(shape) * np.sqrt(dt)


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement-noise covariance plus the Wiener-process convention.

    The driving Wiener process has identity spectral density by convention;
    any diffusion scaling belongs to the model's ``sigma``. ``obs_cov``
    must be symmetric positive definite.
    """

    obs_cov: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.obs_cov, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise ValueError("obs_cov must be square")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(R).max()))):
            raise ValueError("obs_cov must be symmetric")
        if np.any(np.linalg.eigvalsh(R) <= 0):
            raise ValueError("obs_cov must be positive definite")
        object.__setattr__(self, "obs_cov", R)

    @property
    def dim(self) -> int:
        return self.obs_cov.shape[0]


@dataclass(frozen=True, kw_only=True)
class SdeModel:
    """Continuous-discrete model container.

    ``drift`` and ``diffusion`` have signature ``(t, x, u)``, ``measure``
    has ``(t, x)``. All three must accept column-batched states ``(n, m)``
    by broadcasting; ``diffusion`` is expected to be state-independent
    (returning a single ``(dim_state, dim_noise)`` matrix) for the filter
    contracts to hold, although the integrator tolerates state dependence.
    Jacobians are optional; finite differences fill in when absent.
    ``constrain`` (optional) projects a state back into the admissible
    region after each integrator substep; it may modify its argument in
    place and must return it.
    """

    dim_state: int
    dim_noise: int
    dim_obs: int
    drift: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    measure: Callable[[float, np.ndarray], np.ndarray]
    drift_jacobian: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    measure_jacobian: Callable[[float, np.ndarray], np.ndarray] | None = None
    constrain: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        for name in ("dim_state", "dim_noise", "dim_obs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.dim_state == 0:
            raise ValueError("dim_state must be positive")

    def drift_jac(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Drift Jacobian d f / d x, analytic when supplied, else central FD."""
        if self.drift_jacobian is not None:
            return np.asarray(self.drift_jacobian(t, x, u), dtype=float)
        return fd_jacobian(lambda z: self.drift(t, z, u), x)

    def measure_jac(self, t: float, x: np.ndarray) -> np.ndarray:
        """Measurement Jacobian d h / d x, analytic when supplied, else central FD."""
        if self.measure_jacobian is not None:
            return np.asarray(self.measure_jacobian(t, x), dtype=float)
        return fd_jacobian(lambda z: self.measure(t, z), x)


@dataclass(frozen=True, kw_only=True)
class AugmentedModel(SdeModel):
    """State/parameter-augmented model; see :func:`augment`."""

    base: SdeModel
    dim_param: int
    param_diffusion: np.ndarray
    theta0: np.ndarray

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split an augmented state into (physical state, parameters)."""
        n = self.base.dim_state
        return z[:n], z[n:]


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-component step ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)) / (2 * h)
    return J


def _as_input(profile) -> Callable[[float], np.ndarray]:
    """Normalize an input specification to a callable t -> u."""
    if profile is None:
        return lambda t: ZERO_INPUT
    if callable(profile):
        return profile
    u = np.atleast_1d(np.asarray(profile, dtype=float))
    return lambda t: u


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous piecewise-constant input profile u(t).

    ``times`` are strictly increasing breakpoints; ``values[i]`` holds on
    ``[times[i], times[i+1])`` and the last value extends to infinity.
    Queries before ``times[0]`` return the first value.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or len(t) != len(v):
            raise ValueError("times and values must have matching leading length")
        if len(t) == 0:
            raise ValueError("profile needs at least one breakpoint")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(idx, 0)]


@dataclass(frozen=True)
class Trajectory:
    """Simulated path sampled on a uniform grid: one state row per time."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.inputs):
            raise ValueError("times, states and inputs must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


def euler_maruyama_step(model: SdeModel, t: float, x: np.ndarray, u: np.ndarray,
                        dt: float, dw: np.ndarray) -> np.ndarray:
    """One explicit Euler-Maruyama step: ``x + f dt + sigma dw``.

    Pure function of its inputs; raises :class:`IntegrationError` when the
    drift or diffusion evaluates non-finite. ``x`` may be a single state
    ``(n,)`` or a column batch ``(n, m)`` sharing the increment layout.
    """
    f = np.asarray(model.drift(t, x, u), dtype=float)
    g = np.asarray(model.diffusion(t, x, u), dtype=float)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise IntegrationError(f"non-finite drift/diffusion at t={t}", time=t)
    return x + f * dt + g @ dw


def simulate_path(model: SdeModel, x0: np.ndarray, input_profile, t0: float, t1: float,
                  dt: float, noise: NoiseStream) -> Trajectory:
    """Integrate one sample path on the uniform grid ``t0, t0+dt, ..., t1``.

    ``dt`` must divide the horizon. All increments are drawn from ``noise``
    up front in a single batch, so identical streams give bitwise-identical
    trajectories. The model's ``constrain`` hook, when present, is applied
    after every substep.
    """
    span = t1 - t0
    if span <= 0:
        raise ValueError("t1 must exceed t0")
    n_steps = int(round(span / dt))
    if n_steps == 0 or abs(n_steps * dt - span) > 1e-9 * max(abs(span), 1.0):
        raise ValueError(f"dt={dt} does not divide horizon {span}")

    u_of = _as_input(input_profile)
    rng = noise.generator()
    dws = rng.standard_normal((n_steps, model.dim_noise)) * np.sqrt(dt)

    x = np.array(x0, dtype=float)
    if x.shape != (model.dim_state,):
        raise ValueError(f"x0 must have shape ({model.dim_state},)")
    u0 = np.atleast_1d(np.asarray(u_of(t0), dtype=float))
    states = np.empty((n_steps + 1, model.dim_state))
    inputs = np.empty((n_steps + 1, u0.size))
    times = t0 + dt * np.arange(n_steps + 1)
    times[-1] = t1
    states[0] = x
    inputs[0] = u0

    for i in range(n_steps):
        t = times[i]
        u = u_of(t)
        x = euler_maruyama_step(model, t, x, u, dt, dws[i])
        if model.constrain is not None:
            x = model.constrain(x)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"state diverged at t={times[i + 1]}", time=float(times[i + 1]))
        states[i + 1] = x
        inputs[i + 1] = u_of(times[i + 1])
    return Trajectory(times=times, states=states, inputs=inputs)


def augment(model_or_factory, theta0, param_diffusion=None, param_jacobian=None) -> AugmentedModel:
    """Extend a model with constant-drift parameter states for joint estimation.

    Parameters
    ----------
    model_or_factory:
        Either a fixed :class:`SdeModel` (dynamics independent of theta) or a
        callable ``theta -> SdeModel`` binding the parameter vector into the
        model functions. The factory form is what parameter estimation needs;
        it must broadcast when handed a column-batched theta.
    theta0:
        Nominal parameter vector; fixes the parameter dimension.
    param_diffusion:
        Optional diagonal of an artificial parameter random walk (scalar,
        vector, or diagonal matrix). Zero (the default) keeps parameters
        constant during propagation; zero entries contribute no noise
        columns, so the augmented noise dimension grows only when some
        entry is positive.
    param_jacobian:
        Optional analytic ``d f / d theta`` with signature ``(t, x, u, theta)``
        returning ``(dim_state, dim_param)``; finite differences otherwise.

    The augmented drift is ``(f(t, x, u; theta), 0)`` and the augmented
    diffusion stacks the base diffusion over zero parameter rows (plus the
    parameter noise block when enabled). Marginalizing an augmented
    simulation back to the state coordinates with zero parameter diffusion
    reproduces the base simulation bitwise.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    n_th = theta0.size
    if n_th == 0:
        raise ValueError("theta0 must have at least one component")

    if isinstance(model_or_factory, SdeModel):
        fixed = model_or_factory
        factory = lambda th: fixed
    elif callable(model_or_factory):
        raw_factory = model_or_factory
        # the factory is a pure function of theta and the augmented drift is
        # zero in the parameter rows, so consecutive evaluations overwhelmingly
        # repeat the same theta; memoize the last binding (single reference
        # swap, so concurrent readers see either pair, never a torn one)
        memo = [None]

        def factory(th):
            pair = memo[0]
            key = th.tobytes() if isinstance(th, np.ndarray) else np.asarray(th, dtype=float).tobytes()
            if pair is not None and pair[0] == key:
                return pair[1]
            built = raw_factory(th)
            memo[0] = (key, built)
            return built
    else:
        raise TypeError("expected an SdeModel or a theta -> SdeModel factory")

    base = factory(theta0)
    n_x, n_w = base.dim_state, base.dim_noise

    if param_diffusion is None:
        sig_th = np.zeros((n_th, n_th))
    else:
        sig = np.asarray(param_diffusion, dtype=float)
        if sig.ndim == 0:
            sig_th = np.eye(n_th) * float(sig)
        elif sig.ndim == 1:
            if sig.size != n_th:
                raise ValueError("param_diffusion vector length must match theta0")
            sig_th = np.diag(sig)
        else:
            if sig.shape != (n_th, n_th) or np.any(sig != np.diag(np.diag(sig))):
                raise ValueError("param_diffusion must be diagonal")
            sig_th = sig
    if np.any(np.diag(sig_th) < 0):
        raise ValueError("param_diffusion entries must be non-negative")
    has_param_noise = bool(np.any(np.diag(sig_th) > 0))
    n_w_aug = n_w + (n_th if has_param_noise else 0)

    zero_param_rates = np.zeros(n_th)  # shared pad; concatenate copies it
    zero_param_rates.setflags(write=False)

    def aug_drift(t, z, u):
        th = z[n_x:]
        fx = np.asarray(factory(th).drift(t, z[:n_x], u), dtype=float)
        if fx.ndim == 1:
            return np.concatenate((fx, zero_param_rates))
        return np.concatenate((fx, np.zeros((n_th, fx.shape[1]))))

    def aug_diffusion(t, z, u):
        x, th = z[:n_x], z[n_x:]
        out = np.zeros((n_x + n_th, n_w_aug))
        out[:n_x, :n_w] = factory(th).diffusion(t, x, u)
        if has_param_noise:
            out[n_x:, n_w:] = sig_th
        return out

    def aug_measure(t, z):
        x, th = z[:n_x], z[n_x:]
        return factory(th).measure(t, x)

    def aug_drift_jacobian(t, z, u):
        x, th = z[:n_x], z[n_x:]
        m = factory(th)
        J = np.zeros((n_x + n_th, n_x + n_th))
        if m.drift_jacobian is not None:
            J[:n_x, :n_x] = m.drift_jacobian(t, x, u)
        else:
            J[:n_x, :n_x] = fd_jacobian(lambda xx: m.drift(t, xx, u), x)
        if param_jacobian is not None:
            J[:n_x, n_x:] = np.reshape(param_jacobian(t, x, u, th), (n_x, n_th))
        else:
            J[:n_x, n_x:] = fd_jacobian(lambda tt: factory(tt).drift(t, x, u), th)
        return J

    def aug_measure_jacobian(t, z):
        x, th = z[:n_x], z[n_x:]
        C = np.zeros((base.dim_obs, n_x + n_th))
        C[:, :n_x] = factory(th).measure_jac(t, x)
        C[:, n_x:] = fd_jacobian(lambda tt: factory(tt).measure(t, x), th)
        return C

    aug_constrain = None
    if base.constrain is not None:
        base_constrain = base.constrain

        def aug_constrain(z):
            z[:n_x] = base_constrain(z[:n_x])
            return z

    return AugmentedModel(
        dim_state=n_x + n_th,
        dim_noise=n_w_aug,
        dim_obs=base.dim_obs,
        drift=aug_drift,
        diffusion=aug_diffusion,
        measure=aug_measure,
        drift_jacobian=aug_drift_jacobian,
        measure_jacobian=aug_measure_jacobian,
        constrain=aug_constrain,
        base=base,
        dim_param=n_th,
        param_diffusion=sig_th,
        theta0=theta0,
    )
