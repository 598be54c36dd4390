"""Velocity-form discrete PID with online gain adaptation.

Each control cycle the gains are moved down the gradient of the control cost
E = 1/2 (y_d - y^m)^2, where y^m is the frozen neural model's prediction of
the next output under the candidate control, plus a momentum term on the
previous increment. The momentum rate is either zero, a fixed beta0, or
beta0 * exp(-b) with b the latest closed-loop stability margin.

The adaptation happens before the control is applied: the candidate u(k)
built from the current gains defines the model regressor, the gains are
updated, and the final u(k) uses the updated gains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .neural_model import NeuralModel, nn_forward, output_input_sensitivity


class AdaptationMode(str, Enum):
    NONE = "none"
    FIXED = "fixed"
    VARIABLE = "variable"


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.kp, self.ki, self.kd)):
            raise ValueError(f"gains must be finite: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.kd])

    @classmethod
    def from_array(cls, arr) -> "PidGains":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def scaled(self, factor: float) -> "PidGains":
        return PidGains(self.kp * factor, self.ki * factor, self.kd * factor)


@dataclass(frozen=True)
class AdaptationConfig:
    alpha: float
    beta0: float
    mode: AdaptationMode = AdaptationMode.VARIABLE
    gain_floor: float = 0.0
    u_limits: Optional[tuple[float, float]] = None
    # "setpoint" uses y_d - y^m in the gradient, "plant" the measured y - y^m.
    error_signal: str = "setpoint"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.beta0 < 1:
            raise ValueError("beta0 must lie in [0, 1)")
        object.__setattr__(self, "mode", AdaptationMode(self.mode))
        if self.error_signal not in ("setpoint", "plant"):
            raise ValueError(f"unknown error_signal {self.error_signal!r}")
        if self.u_limits is not None and not self.u_limits[0] < self.u_limits[1]:
            raise ValueError("u_limits must be (low, high) with low < high")


@dataclass
class ControllerState:
    """Mutable per-loop memory.

    ``errors`` holds e(k), e(k-1), e(k-2) newest first. ``y_hist`` and
    ``u_hist`` are the model regressor histories: measured outputs up to y(k)
    and applied controls up to u(k-1), newest first.
    """

    T: float
    errors: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u_prev: float = 0.0
    prev_deltas: np.ndarray = field(default_factory=lambda: np.zeros(3))
    y_hist: np.ndarray = field(default_factory=lambda: np.zeros(1))
    u_hist: np.ndarray = field(default_factory=lambda: np.zeros(1))
    aux: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("sampling period must be positive")

    @classmethod
    def at_rest(cls, T: float, y0: float, u0: float, output_lags: int = 1, input_lags: int = 1, aux=()) -> "ControllerState":
        """Zero error history, plant and controller sitting at (y0, u0)."""
        return cls(
            T,
            u_prev=u0,
            y_hist=np.full(output_lags, float(y0)),
            u_hist=np.full(input_lags, float(u0)),
            aux=np.asarray(aux, dtype=float),
        )

    def regressor(self, model: NeuralModel, u_now: Optional[float] = None) -> np.ndarray:
        """Model input for predicting y(k+1) given u(k) = ``u_now``.

        With ``u_now`` omitted, the latest applied control is used, i.e. the
        regressor describes the one-step map around the current operating point.
        """
        if u_now is None:
            u_seq = self.u_hist
        else:
            u_seq = np.concatenate([[u_now], self.u_hist])
        return model.spec.build(self.aux, self.y_hist, u_seq)


@dataclass(frozen=True)
class StepDiagnostics:
    y_model: float
    sensitivity: float
    model_error: float
    beta: float
    cost: float
    error_terms: tuple[float, float, float]
    gradients: tuple[float, float, float]


def error_terms(e_k: float, e_k1: float, e_k2: float, T: float) -> tuple[float, float, float]:
    """(e_p, e_i, e_d) from the last three tracking errors."""
    return e_k - e_k1, 0.5 * T * (e_k + e_k1), (e_k - 2.0 * e_k1 + e_k2) / T


def compute_errors(cs: ControllerState, e_k: float) -> tuple[float, float, float]:
    """Push ``e_k`` into the error history and return (e_p, e_i, e_d)."""
    cs.errors = np.array([e_k, cs.errors[0], cs.errors[1]])
    return error_terms(cs.errors[0], cs.errors[1], cs.errors[2], cs.T)


def pid_delta_u(g: PidGains, errs: Sequence[float]) -> float:
    return g.kp * errs[0] + g.ki * errs[1] + g.kd * errs[2]


def control_output(cs: ControllerState, delta_u: float, u_limits: Optional[tuple[float, float]] = None) -> float:
    """u(k) = u(k-1) + delta_u, clamped to ``u_limits``; records u(k)."""
    u = cs.u_prev + delta_u
    if u_limits is not None:
        u = min(max(u, u_limits[0]), u_limits[1])
    cs.u_prev = u
    return u


def momentum_rate(beta0: float, b: float) -> float:
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"stability margin must lie in [0, 1], got {b}")
    if not 0.0 <= beta0 < 1.0:
        raise ValueError(f"beta0 must lie in [0, 1), got {beta0}")
    return beta0 * math.exp(-b)


def beta_for_mode(cfg: AdaptationConfig, b: float) -> float:
    if cfg.mode is AdaptationMode.NONE:
        return 0.0
    if cfg.mode is AdaptationMode.FIXED:
        return cfg.beta0
    return momentum_rate(cfg.beta0, b)


def gain_gradients(sens: float, model_error: float, errs: Sequence[float]) -> np.ndarray:
    """dE/d(kp, ki, kd) for E = 1/2 model_error^2, with du/dk = (e_p, e_i, e_d)."""
    return -model_error * sens * np.asarray(errs, dtype=float)


def adapt_gains(
    g: PidGains,
    grads,
    prev_deltas,
    alpha: float,
    beta: float,
    gain_floor: float = 0.0,
) -> tuple[PidGains, np.ndarray]:
    """Gradient step with momentum; returns the new gains and the raw increments."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"momentum rate must lie in [0, 1), got {beta}")
    grads = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(f"non-finite gain gradient {grads}")
    deltas = -alpha * grads + beta * np.asarray(prev_deltas, dtype=float)
    updated = np.maximum(g.as_array() + deltas, gain_floor)
    return PidGains.from_array(updated), deltas


def controller_step(
    model: NeuralModel,
    cs: ControllerState,
    g: PidGains,
    cfg: AdaptationConfig,
    y_d: float,
    y: float,
    b: float,
    aux=(),
) -> tuple[float, PidGains, StepDiagnostics]:
    """One adapt-then-act control cycle. Mutates ``cs``."""
    errs = compute_errors(cs, y_d - y)
    cs.y_hist = np.concatenate([[y], cs.y_hist[:-1]])
    cs.aux = np.asarray(aux, dtype=float)

    u_candidate = cs.u_prev + pid_delta_u(g, errs)
    x = cs.regressor(model, u_candidate)
    y_model, _ = nn_forward(model, x)
    sens = output_input_sensitivity(model, x)
    model_error = (y_d if cfg.error_signal == "setpoint" else y) - y_model
    grads = gain_gradients(sens, model_error, errs)

    beta = beta_for_mode(cfg, b)
    g_new, cs.prev_deltas = adapt_gains(g, grads, cs.prev_deltas, cfg.alpha, beta, cfg.gain_floor)

    u = control_output(cs, pid_delta_u(g_new, errs), cfg.u_limits)
    cs.u_hist = np.concatenate([[u], cs.u_hist[:-1]])
    diag = StepDiagnostics(
        y_model=y_model,
        sensitivity=sens,
        model_error=model_error,
        beta=beta,
        cost=0.5 * (y_d - y_model) ** 2,
        error_terms=tuple(float(v) for v in errs),
        gradients=tuple(float(v) for v in grads),
    )
    return u, g_new, diag
