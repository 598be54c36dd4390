"""Continuous-time CSTR plant models and a fixed-step RK4 integrator.

Two benchmark reactors are provided:

* an isothermal CSTR with a first-order irreversible reaction, state ``[C_A]``,
  input the dilution rate (1/min);
* a nonisothermal (exothermic) CSTR in dimensionless form, state
  ``[x1, x2]`` = (conversion, temperature), input the coolant temperature,
  measured output ``x2``.

The input is held constant over each integration interval (zero-order hold).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Union

import numpy as np
from scipy.optimize import brentq

# Tolerance used when comparing accumulated simulation time against onsets.
_TIME_EPS = 1e-9


class SingularExponentError(ArithmeticError):
    """Raised when 1 + x2/gamma vanishes in the Arrhenius exponent."""


@dataclass(frozen=True)
class IsothermalCstrParams:
    rate_const: float = 0.028  # 1/min
    feed_conc: float = 1.0  # mol/L

    def __post_init__(self):
        if not self.rate_const > 0:
            raise ValueError(f"rate_const must be positive, got {self.rate_const}")
        if not self.feed_conc > 0:
            raise ValueError(f"feed_conc must be positive, got {self.feed_conc}")


@dataclass(frozen=True)
class NonisothermalCstrParams:
    damkohler: float = 0.72
    heat_of_reaction: float = 8.0
    activation: float = 20.0
    heat_transfer: float = 0.3

    def __post_init__(self):
        for name in ("damkohler", "heat_of_reaction", "activation", "heat_transfer"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class SimState:
    state_vector: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vec = np.array(self.state_vector, dtype=float).reshape(-1)
        vec.setflags(write=False)
        object.__setattr__(self, "state_vector", vec)


@dataclass(frozen=True)
class DisturbanceSpec:
    """Either a sensor-side output offset or a step change of a plant parameter.

    For ``parameter_step`` the magnitude is the new parameter value.
    """

    kind: Literal["additive_output", "parameter_step"]
    onset_time: float
    magnitude: float
    target_parameter: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("additive_output", "parameter_step"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.onset_time < 0:
            raise ValueError("onset_time must be nonnegative")
        if self.kind == "parameter_step" and not self.target_parameter:
            raise ValueError("parameter_step needs a target_parameter")

    def active(self, time: float) -> bool:
        return time + _TIME_EPS >= self.onset_time


def iso_rhs(state_vector, u: float, p: IsothermalCstrParams) -> float:
    """dC_A/dt = -K C_A + (C_Ai - C_A) u."""
    c_a = state_vector[0]
    return -p.rate_const * c_a + (p.feed_conc - c_a) * u


def noniso_rhs(state_vector, u: float, p: NonisothermalCstrParams) -> tuple[float, float]:
    x1, x2 = state_vector[0], state_vector[1]
    denom = 1.0 + x2 / p.activation
    if denom == 0.0:
        raise SingularExponentError(f"1 + x2/gamma = 0 at x2 = {x2}")
    reaction = p.damkohler * (1.0 - x1) * math.exp(x2 / denom)
    dx1 = -x1 + reaction
    dx2 = -x2 + p.heat_of_reaction * reaction + p.heat_transfer * (u - x2)
    return dx1, dx2


@dataclass(frozen=True)
class IsothermalCstr:
    params: IsothermalCstrParams = field(default_factory=IsothermalCstrParams)
    name = "isothermal"
    state_dim = 1

    def rhs(self, x, u):
        return np.array([iso_rhs(x, u, self.params)])

    def output(self, x) -> float:
        return float(x[0])

    def aux(self, x) -> np.ndarray:
        return np.empty(0)

    def with_parameter(self, name: str, value: float) -> "IsothermalCstr":
        return replace(self, params=replace(self.params, **{name: value}))

    def steady_state(self, u: float) -> np.ndarray:
        p = self.params
        return np.array([p.feed_conc * u / (p.rate_const + u)])

    def steady_input(self, y: float) -> float:
        """Dilution rate holding C_A at ``y``."""
        p = self.params
        return p.rate_const * y / (p.feed_conc - y)


@dataclass(frozen=True)
class NonisothermalCstr:
    params: NonisothermalCstrParams = field(default_factory=NonisothermalCstrParams)
    name = "nonisothermal"
    state_dim = 2

    def rhs(self, x, u):
        return np.array(noniso_rhs(x, u, self.params))

    def output(self, x) -> float:
        return float(x[1])

    def aux(self, x) -> np.ndarray:
        """Measured states fed to the model besides the output (conversion x1)."""
        return np.array([x[0]])

    def with_parameter(self, name: str, value: float) -> "NonisothermalCstr":
        return replace(self, params=replace(self.params, **{name: value}))

    def steady_state_at_output(self, y: float) -> tuple[np.ndarray, float]:
        """Equilibrium state and input giving temperature ``y``.

        At equilibrium the conversion is D E / (1 + D E) with E the Arrhenius
        factor at ``y``, and the energy balance then fixes the coolant input.
        """
        p = self.params
        arr = p.damkohler * math.exp(y / (1.0 + y / p.activation))
        x1 = arr / (1.0 + arr)
        u = (y - p.heat_of_reaction * x1) / p.heat_transfer + y
        return np.array([x1, y]), u

    def steady_state(self, u: float, y_bracket: tuple[float, float] = (-10.0, 30.0)) -> np.ndarray:
        """An equilibrium for constant input ``u`` (the one found in ``y_bracket``)."""
        y = brentq(lambda yy: self.steady_state_at_output(yy)[1] - u, *y_bracket, xtol=1e-14)
        return self.steady_state_at_output(y)[0]

    def steady_input(self, y: float) -> float:
        return self.steady_state_at_output(y)[1]


Plant = Union[IsothermalCstr, NonisothermalCstr]
VectorField = Callable[[np.ndarray, float], np.ndarray]


def rk4_step(rhs: VectorField, state: SimState, u: float, h: float) -> SimState:
    if not h > 0:
        raise ValueError("step size must be positive")
    x = state.state_vector
    k1 = np.asarray(rhs(x, u), dtype=float)
    k2 = np.asarray(rhs(x + 0.5 * h * k1, u), dtype=float)
    k3 = np.asarray(rhs(x + 0.5 * h * k2, u), dtype=float)
    k4 = np.asarray(rhs(x + h * k3, u), dtype=float)
    return SimState(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), state.time + h)


def _effective_plant(plant: Plant, time: float, disturbance: Optional[DisturbanceSpec]) -> Plant:
    if disturbance is not None and disturbance.kind == "parameter_step" and disturbance.active(time):
        return plant.with_parameter(disturbance.target_parameter, disturbance.magnitude)
    return plant


def simulate_control_interval(
    plant: Plant,
    state: SimState,
    u: float,
    control_period: float,
    substeps: int = 10,
    disturbance: Optional[DisturbanceSpec] = None,
) -> SimState:
    """Advance the plant over one control period with ``u`` held.

    A parameter-step disturbance is switched in once its onset has passed at
    the start of the interval. Additive output disturbances never touch the
    internal state; see :func:`measure_output`.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if not control_period > 0:
        raise ValueError("control_period must be positive")
    active = _effective_plant(plant, state.time, disturbance)
    h = control_period / substeps
    for _ in range(substeps):
        state = rk4_step(active.rhs, state, u, h)
    if not np.all(np.isfinite(state.state_vector)):
        raise FloatingPointError(f"plant state became non-finite at t={state.time}")
    return state


def measure_output(plant: Plant, state: SimState, disturbance: Optional[DisturbanceSpec] = None) -> float:
    """Sensor reading, including any active additive output disturbance."""
    y = plant.output(state.state_vector)
    if disturbance is not None and disturbance.kind == "additive_output" and disturbance.active(state.time):
        y += disturbance.magnitude
    return y
