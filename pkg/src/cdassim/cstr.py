"""Adiabatic CSTR benchmark: second-order exothermic reaction A + 2B -> products.

Provides the 3-state stochastic model (concentrations CA, CB and temperature
T with diffusion on T only), reduced 2-state (extent of reaction, T) and
1-state (T) deterministic approximations, the steady-state flow/temperature
curve with its ignition fold, analytic Jacobians, and the default joint
state-and-parameter estimation setup with the heat-rise coefficient beta
appended as a constant-drift fourth state.

Units: seconds, Kelvin, mol/L, L/s throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cdassim.sde import AugmentedModel, NoiseSpec, PiecewiseConstant, SdeModel, augment

__all__ = [
    "CstrParams",
    "CstrState",
    "FlowProfile",
    "SteadyStateRangeError",
    "CstrExperiment",
    "rate_constant",
    "cstr3_drift",
    "cstr3_jacobian",
    "cstr2_drift",
    "cstr1_drift",
    "adiabatic_concentrations",
    "steady_state_range",
    "steady_state_flow",
    "steady_state_curve",
    "cstr3_model",
    "beta_drift_jacobian",
    "default_experiment_model",
    "TRUTH_STATE_INIT",
    "TRUTH_BETA",
    "FILTER_STATE_INIT",
    "FILTER_BETA_INIT",
    "OBS_VARIANCE",
]

# Twin-experiment setup: ground truth and deliberately offset filter guesses.
TRUTH_STATE_INIT = (0.0, 0.0, 273.65)
TRUTH_BETA = 133.7792
FILTER_STATE_INIT = (0.1, 0.2, 293.65)
FILTER_BETA_INIT = 123.7792
OBS_VARIANCE = 9.0


class SteadyStateRangeError(ValueError):
    """Requested steady-state temperature leaves the physical branch."""


@dataclass(frozen=True)
class CstrParams:
    """Reactor constants.

    ``beta`` is the adiabatic heat-rise coefficient in K.L/mol; its sign
    encodes the reaction type (positive for exothermic). ``dHr``, when
    supplied, must be consistent with ``beta = -dHr / (rho * cp)``; it is
    otherwise back-derived on demand.
    """

    rho: float = 1.0            # kg/L
    cp: float = 4.186           # kJ/(kg K)
    k0: float = math.exp(24.6)  # L/(mol s)
    EaR: float = 8500.0         # K
    V: float = 0.105            # L
    CA_in: float = 0.8          # mol/L
    CB_in: float = 1.2          # mol/L
    T_in: float = 273.65        # K
    beta: float = TRUTH_BETA    # K L/mol
    sigma_T: float = 5.0        # K
    dHr: float | None = None

    def __post_init__(self):
        for name in ("rho", "cp", "k0", "EaR", "V", "CA_in", "CB_in", "T_in"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.beta == 0:
            raise ValueError("beta must be nonzero (adiabatic relations divide by it)")
        if self.sigma_T < 0:
            raise ValueError("sigma_T must be non-negative")
        if self.dHr is not None:
            implied = -self.dHr / (self.rho * self.cp)
            if abs(implied - self.beta) > 1e-6 * max(1.0, abs(self.beta)):
                raise ValueError(
                    f"dHr={self.dHr} implies beta={implied:.6f}, got beta={self.beta}"
                )

    @property
    def reaction_enthalpy(self) -> float:
        """Heat of reaction in kJ/mol implied by beta (negative: exothermic)."""
        if self.dHr is not None:
            return self.dHr
        return -self.beta * self.rho * self.cp


@dataclass(frozen=True)
class CstrState:
    """Physical reactor state."""

    CA: float  # mol/L
    CB: float  # mol/L
    T: float   # K

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.CA, self.CB, self.T], dtype=float)

    @classmethod
    def from_array(cls, x) -> "CstrState":
        x = np.asarray(x, dtype=float)
        return cls(CA=float(x[0]), CB=float(x[1]), T=float(x[2]))


@dataclass(frozen=True)
class FlowProfile:
    """Piecewise-constant volumetric flow rate F(t) in L/s.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``; the last
    value extends forever and queries before the first breakpoint return the
    first value. Calling yields the 1-vector input the SDE models expect.
    """

    breakpoints: np.ndarray  # seconds
    values: np.ndarray       # L/s

    def __post_init__(self):
        profile = PiecewiseConstant(times=self.breakpoints, values=self.values)
        if np.any(profile.values <= 0):
            raise ValueError("flow values must be strictly positive")
        if profile.values.shape[1] != 1:
            raise ValueError("flow values must be scalar per interval")
        object.__setattr__(self, "breakpoints", profile.times)
        object.__setattr__(self, "values", profile.values[:, 0])
        object.__setattr__(self, "_profile", profile)

    def __call__(self, t: float) -> np.ndarray:
        return self._profile(t)

    def flow(self, t: float) -> float:
        return float(self._profile(t)[0])


def rate_constant(T, params: CstrParams):
    """Arrhenius rate k(T) = k0 exp(-EaR / T); broadcasts over T."""
    return params.k0 * np.exp(-params.EaR / np.asarray(T, dtype=float))


def _unpack3(x):
    x = np.asarray(x, dtype=float)
    return x[0], x[1], x[2]


def cstr3_drift(x, F, params: CstrParams, beta=None):
    """Deterministic rates of the 3-state model.

    ``x`` is ``(CA, CB, T)`` as an array of shape ``(3,)`` or a column batch
    ``(3, n)``; ``beta`` overrides ``params.beta`` (scalar or per-column) so
    the same code serves the parameter-augmented model.
    """
    x = np.asarray(x, dtype=float)
    if beta is None:
        beta = params.beta
    if x.ndim == 1:
        # single-point evaluations dominate the moment-filter and truth-path
        # cost, so stay on numpy scalars and skip the stack machinery
        CA, CB, T = x[0], x[1], x[2]
        FV = F / params.V
        r = params.k0 * np.exp(-params.EaR / T) * CA * CB
        return np.array([
            FV * (params.CA_in - CA) - r,
            FV * (params.CB_in - CB) - 2.0 * r,
            FV * (params.T_in - T) + beta * r,
        ])
    CA, CB, T = x[0], x[1], x[2]
    FV = F / params.V
    r = rate_constant(T, params) * CA * CB  # reaction rate, mol/(L s)
    return np.stack([
        FV * (params.CA_in - CA) - r,
        FV * (params.CB_in - CB) - 2.0 * r,
        FV * (params.T_in - T) + beta * r,
    ])


def cstr3_jacobian(x, F, params: CstrParams, beta=None) -> np.ndarray:
    """Analytic state Jacobian of :func:`cstr3_drift`, using dk/dT = k EaR/T^2."""
    CA, CB, T = _unpack3(x)
    if beta is None:
        beta = params.beta
    FV = F / params.V
    k = params.k0 * np.exp(-params.EaR / T)
    kp = k * params.EaR / (T * T)
    kCA = k * CA
    kCB = k * CB
    kpAB = kp * CA * CB
    return np.array([
        [-FV - kCB, -kCA, -kpAB],
        [-2.0 * kCB, -FV - 2.0 * kCA, -2.0 * kpAB],
        [beta * kCB, beta * kCA, -FV + beta * kpAB],
    ])


def cstr2_drift(X, T, F, params: CstrParams) -> np.ndarray:
    """Reduced 2-state rates in (extent of reaction, temperature).

    X = (CB_in - CB)/CB_in recovers CB = CB_in (1 - X) and, by stoichiometry,
    CA = CA_in - (CB_in / 2) X.
    """
    CA = params.CA_in - 0.5 * params.CB_in * X
    CB = params.CB_in * (1.0 - X)
    FV = F / params.V
    r = rate_constant(T, params) * CA * CB
    return np.array([
        -FV * X + 2.0 * r / params.CB_in,
        FV * (params.T_in - T) + params.beta * r,
    ])


def adiabatic_concentrations(T, params: CstrParams):
    """Concentrations implied by temperature along the adiabatic branch."""
    rise = (np.asarray(T, dtype=float) - params.T_in) / params.beta
    return params.CA_in - rise, params.CB_in - 2.0 * rise


def cstr1_drift(T, F, params: CstrParams) -> float:
    """Reduced 1-state temperature rate with CA, CB eliminated adiabatically."""
    CA, CB = adiabatic_concentrations(T, params)
    r = rate_constant(T, params) * CA * CB
    return F / params.V * (params.T_in - T) + params.beta * r


def steady_state_range(params: CstrParams) -> tuple[float, float]:
    """Open interval of temperatures with a physical steady state.

    Above T_in the inflow can balance the heat release; the upper end is
    where the limiting feed concentration is exhausted.
    """
    span = params.beta * min(params.CA_in, 0.5 * params.CB_in)
    return params.T_in, params.T_in + span


def steady_state_flow(T_s: float, params: CstrParams) -> float:
    """Flow rate holding the reactor at temperature ``T_s``.

    Setting the three rates to zero couples the states through the adiabatic
    relations and leaves F_s = V beta k(T_s) CA(T_s) CB(T_s) / (T_s - T_in).
    """
    lo, hi = steady_state_range(params)
    if not lo < T_s < hi:
        raise SteadyStateRangeError(
            f"T_s={T_s} is outside the admissible branch ({lo:.4f}, {hi:.4f})"
        )
    CA, CB = adiabatic_concentrations(T_s, params)
    if CA <= 0 or CB <= 0:  # unreachable for sane params, cheap to keep
        raise SteadyStateRangeError(f"T_s={T_s} exhausts the feed")
    k = rate_constant(T_s, params)
    return params.V * params.beta * k * CA * CB / (T_s - params.T_in)


def steady_state_curve(params: CstrParams, n: int = 400,
                       margin: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Sample the steady-state flow curve F_s(T_s) across the admissible range.

    ``margin`` (K) keeps the grid off both open endpoints, where F_s blows
    up (lower) or the feed runs out (upper). The curve is non-monotonic:
    the fold between its local extrema is what makes ignition possible.
    """
    lo, hi = steady_state_range(params)
    if n < 2:
        raise ValueError("need at least two curve points")
    if 2 * margin >= hi - lo:
        raise ValueError("margin leaves no admissible temperatures")
    T_s = np.linspace(lo + margin, hi - margin, n)
    F_s = np.array([steady_state_flow(float(T), params) for T in T_s])
    return T_s, F_s


def _clamp_concentrations(x):
    # noise and measurement updates can push CA, CB slightly negative
    x = np.array(x, dtype=float)
    x[:2] = np.maximum(x[:2], 0.0)
    return x


def cstr3_model(params: CstrParams, beta=None) -> SdeModel:
    """3-state SDE with temperature-only diffusion (F/V) sigma_T.

    The input ``u`` is the 1-vector flow rate, typically a
    :class:`FlowProfile`. ``beta`` overrides ``params.beta``; passing the
    live parameter column is what the augmented factory does.
    """

    def drift(t, x, u):
        return cstr3_drift(x, u[0], params, beta=beta)

    def diffusion(t, x, u):
        return np.array([[0.0], [0.0], [u[0] / params.V * params.sigma_T]])

    def measure(t, x):
        return x[2:3]

    def drift_jacobian(t, x, u):
        b = params.beta if beta is None else float(np.asarray(beta).ravel()[0])
        return cstr3_jacobian(x, u[0], params, beta=b)

    def measure_jacobian(t, x):
        return np.array([[0.0, 0.0, 1.0]])

    return SdeModel(
        dim_state=3,
        dim_noise=1,
        dim_obs=1,
        drift=drift,
        diffusion=diffusion,
        measure=measure,
        drift_jacobian=drift_jacobian,
        measure_jacobian=measure_jacobian,
        constrain=_clamp_concentrations,
    )


def beta_drift_jacobian(params: CstrParams):
    """Analytic d(drift)/d(beta) for the augmented model: only T' depends on it."""

    def jac(t, x, u, theta):
        x = np.asarray(x, dtype=float)
        r = params.k0 * np.exp(-params.EaR / x[2]) * x[0] * x[1]
        return np.array([[0.0], [0.0], [r]])

    return jac


@dataclass(frozen=True)
class CstrExperiment:
    """Everything the twin experiment needs, bundled."""

    model: AugmentedModel
    flow: FlowProfile
    obs: NoiseSpec
    params: CstrParams
    truth_init: np.ndarray        # augmented (CA, CB, T, beta) ground truth
    filter_init_mean: np.ndarray  # augmented initial guess


def default_flow_profile() -> FlowProfile:
    """Flow schedule whose drop below the fold ignites the reactor mid-run."""
    return FlowProfile(breakpoints=[0.0, 200.0, 1500.0], values=[0.010, 0.004, 0.007])


def default_experiment_model(params: CstrParams | None = None,
                             flow: FlowProfile | None = None,
                             param_diffusion=None) -> CstrExperiment:
    """Joint state-and-parameter estimation setup for the CSTR twin experiment.

    beta rides along as a constant-drift fourth state; with
    ``param_diffusion`` zero (default) it carries no process noise, so the
    augmented model keeps a single noise channel. Measurement is the
    temperature with variance 9.
    """
    if params is None:
        params = CstrParams()
    if flow is None:
        flow = default_flow_profile()

    def factory(theta):
        return cstr3_model(params, beta=theta[0])

    model = augment(
        factory,
        theta0=np.array([FILTER_BETA_INIT]),
        param_diffusion=param_diffusion,
        param_jacobian=beta_drift_jacobian(params),
    )
    return CstrExperiment(
        model=model,
        flow=flow,
        obs=NoiseSpec(obs_cov=np.array([[OBS_VARIANCE]])),
        params=params,
        truth_init=np.array([*TRUTH_STATE_INIT, TRUTH_BETA]),
        filter_init_mean=np.array([*FILTER_STATE_INIT, FILTER_BETA_INIT]),
    )
