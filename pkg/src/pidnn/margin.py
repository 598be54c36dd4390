"""Closed-loop stability margin of a SISO discrete loop.

The margin is

    b(P, C) = 1 / sup_w  sigma_max( [1; C] (1 + P C)^-1 [1  P] )

evaluated at z = exp(j w T). For scalar P and C the matrix has rank one and
its largest singular value is sqrt((1 + |P|^2)(1 + |C|^2)) / |1 + P C| >= 1,
so b always lies in [0, 1].

The plant P is the local ARX linearization of the frozen neural model at the
current operating point; C is the exact transfer function of the velocity
form PID.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .controller import PidGains
from .neural_model import NeuralModel, nn_forward

_POLE_TOL = 1e-12
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NearPoleError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class TransferFunction:
    """num(z^-1) / den(z^-1); coefficient i multiplies z^-i."""

    num: np.ndarray
    den: np.ndarray
    T: float

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if den.size == 0 or den[0] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise ValueError("coefficients must be finite")
        if not self.T > 0:
            raise ValueError("sampling period must be positive")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def static(cls, gain: float, T: float = 1.0) -> "TransferFunction":
        return cls([gain], [1.0], T)

    def poles(self) -> np.ndarray:
        """Poles in the z-plane."""
        # den(z^-1) * z^n is an ordinary polynomial in z with the same coefficients
        den = np.trim_zeros(self.den, "b")
        return np.roots(den) if den.size > 1 else np.empty(0, dtype=complex)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def filter(self, x) -> np.ndarray:
        """Direct-form difference equation driven by ``x`` from rest."""
        x = np.asarray(x, dtype=float)
        a, b = self.den, self.num
        y = np.zeros_like(x)
        for k in range(x.size):
            acc = sum(b[i] * x[k - i] for i in range(min(b.size, k + 1)))
            acc -= sum(a[i] * y[k - i] for i in range(1, min(a.size, k + 1)))
            y[k] = acc / a[0]
        return y


@dataclass(frozen=True)
class FrequencyGrid:
    points: int
    omega_min: float
    omega_max: float

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("a frequency grid needs at least two points")
        if not 0 < self.omega_min < self.omega_max:
            raise ValueError("need 0 < omega_min < omega_max")

    @classmethod
    def default(cls, T: float, points: int = 200, decades: float = 3.0) -> "FrequencyGrid":
        nyquist = math.pi / T
        return cls(points, nyquist * 10.0 ** (-decades), nyquist)

    @property
    def omegas(self) -> np.ndarray:
        return np.geomspace(self.omega_min, self.omega_max, self.points)


@dataclass(frozen=True)
class MarginEstimate:
    b: float
    peak_sigma: float
    peak_omega: float
    plant_stable: bool = True


def _polyval_zinv(coeffs: np.ndarray, zinv):
    # Horner in z^-1
    acc = np.zeros_like(zinv, dtype=complex) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * zinv + c
    return acc


def freq_eval(tf: TransferFunction, omega):
    """Frequency response at z = exp(j omega T); scalar or array ``omega``."""
    zinv = np.exp(-1j * np.asarray(omega, dtype=float) * tf.T)
    den = _polyval_zinv(tf.den, zinv)
    if np.any(np.abs(den) < _POLE_TOL):
        raise NearPoleError(f"evaluation within {_POLE_TOL} of a pole")
    val = _polyval_zinv(tf.num, zinv) / den
    return complex(val) if np.ndim(val) == 0 else val


def sigma_max_siso(P_val, C_val):
    """Largest singular value of [1; C](1 + PC)^-1 [1 P]; inf at closed-loop singularity."""
    P_val = np.asarray(P_val, dtype=complex)
    C_val = np.asarray(C_val, dtype=complex)
    numer = np.sqrt((1.0 + np.abs(P_val) ** 2) * (1.0 + np.abs(C_val) ** 2))
    denom = np.abs(1.0 + P_val * C_val)
    with np.errstate(divide="ignore"):
        sigma = np.where(denom > 0.0, numer / np.where(denom > 0.0, denom, 1.0), np.inf)
    return float(sigma) if sigma.ndim == 0 else sigma


def _safe_eval(tf: TransferFunction, omegas: np.ndarray) -> np.ndarray:
    """freq_eval with near-pole points re-evaluated at a nudged neighbour frequency."""
    zinv = np.exp(-1j * omegas * tf.T)
    den = _polyval_zinv(tf.den, zinv)
    bad = np.abs(den) < _POLE_TOL
    if np.any(bad):
        omegas = np.where(bad, omegas * (1.0 + 1e-6), omegas)
        zinv = np.exp(-1j * omegas * tf.T)
        den = _polyval_zinv(tf.den, zinv)
    return _polyval_zinv(tf.num, zinv) / den


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200):
    """Maximise a unimodal ``f`` on [lo, hi]; returns (argmax, max)."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def peak_over_grid(response: Callable[[np.ndarray], np.ndarray], grid: FrequencyGrid, refine: bool = True):
    """Max of a real frequency function: grid argmax plus golden-section refinement
    in log-frequency between the neighbouring grid points. Returns (omega, value)."""
    omegas = grid.omegas
    values = response(omegas)
    i = int(np.argmax(values))
    best_w, best_v = float(omegas[i]), float(values[i])
    if not refine or not np.isfinite(best_v):
        return best_w, best_v
    lo = math.log(omegas[max(i - 1, 0)])
    hi = math.log(omegas[min(i + 1, omegas.size - 1)])
    w_log, v = golden_section_max(lambda lw: float(response(np.array([math.exp(lw)]))[0]), lo, hi)
    if v > best_v:
        best_w, best_v = math.exp(w_log), v
    return best_w, best_v


def hinf_norm(tf: TransferFunction, grid: FrequencyGrid, refine: bool = True) -> tuple[float, float]:
    """Peak gain |H(e^{jwT})| over the grid; returns (omega, gain)."""
    return peak_over_grid(lambda w: np.abs(_safe_eval(tf, w)), grid, refine)


def stability_margin(
    P: TransferFunction,
    C: TransferFunction,
    grid: FrequencyGrid,
    refine: bool = True,
) -> MarginEstimate:
    def sigma(w):
        return sigma_max_siso(_safe_eval(P, w), _safe_eval(C, w))

    omega, peak = peak_over_grid(sigma, grid, refine)
    if not np.isfinite(peak):
        return MarginEstimate(0.0, math.inf, omega, P.is_stable())
    return MarginEstimate(min(1.0, 1.0 / peak), peak, omega, P.is_stable())


def pid_tf(g: PidGains, T: float) -> TransferFunction:
    """Transfer function from error to control of the velocity-form PID.

    C(z) = [Kp (1 - z^-1) + Ki T/2 (1 + z^-1) + Kd/T (1 - z^-1)^2] / (1 - z^-1);
    without integral action the common (1 - z^-1) factor is cancelled.
    """
    if not T > 0:
        raise ValueError("sampling period must be positive")
    if g.ki == 0.0:
        return TransferFunction([g.kp + g.kd / T, -g.kd / T], [1.0], T)
    num = (
        g.kp * np.array([1.0, -1.0, 0.0])
        + 0.5 * g.ki * T * np.array([1.0, 1.0, 0.0])
        + (g.kd / T) * np.array([1.0, -2.0, 1.0])
    )
    return TransferFunction(num, [1.0, -1.0], T)


def model_jacobian(model: NeuralModel, regressor, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the one-step model map in physical units."""
    x = np.asarray(regressor, dtype=float)
    span = model.scaler.input_hi - model.scaler.input_lo
    jac = np.empty(x.size)
    for i in range(x.size):
        h = rel_step * span[i]
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[i] = (nn_forward(model, xp)[0] - nn_forward(model, xm)[0]) / (2.0 * h)
    if not np.all(np.isfinite(jac)):
        raise FloatingPointError("non-finite model Jacobian")
    return jac


def linearize_narx(model: NeuralModel, regressor, T: float) -> TransferFunction:
    """ARX transfer function P(z) = sum b_i z^-i / (1 - sum a_i z^-i) of the model at
    ``regressor``. Auxiliary state channels are held at their operating values."""
    spec = model.spec
    jac = model_jacobian(model, regressor)
    a = jac[spec.aux_states : spec.aux_states + spec.output_lags]
    b = jac[spec.u_channel : spec.u_channel + spec.input_lags]
    return TransferFunction(np.concatenate([[0.0], b]), np.concatenate([[1.0], -a]), T)


def linearize_plant(plant, x, u: float, T: float, substeps: int = 10, rel_step: float = 1e-6) -> TransferFunction:
    """Exact-discretisation (RK4) linearization of the analytic plant at (x, u).

    Used as an oracle for the model-based path: builds A = d x+/d x,
    B = d x+/d u by central differences and converts C (zI - A)^-1 B to a
    rational function in z^-1.
    """
    from scipy.signal import ss2tf

    from .plant_sim import SimState, simulate_control_interval

    x = np.asarray(x, dtype=float)
    n = x.size

    def step(xx, uu):
        return simulate_control_interval(plant, SimState(xx), uu, T, substeps).state_vector

    A = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        A[:, i] = (step(x + e, u) - step(x - e, u)) / (2.0 * h)
    hu = rel_step * max(1.0, abs(u))
    B = ((step(x, u + hu) - step(x, u - hu)) / (2.0 * hu)).reshape(n, 1)
    Cout = np.array([[plant.output(row) for row in np.eye(n)]])
    num, den = ss2tf(A, B, Cout, np.zeros((1, 1)))
    # polynomials in z of equal degree n read directly as coefficients of z^-i
    return TransferFunction(num[0], den, T)


def margin_report(P: TransferFunction, C: TransferFunction, grid: FrequencyGrid) -> str:
    """Tab-separated omega, |P|, |C|, sigma per grid point."""
    w = grid.omegas
    Pv, Cv = _safe_eval(P, w), _safe_eval(C, w)
    sig = sigma_max_siso(Pv, Cv)
    lines = ["omega\tabs_P\tabs_C\tsigma"]
    lines += [f"{float(wi)!r}\t{float(abs(p))!r}\t{float(abs(c))!r}\t{float(s)!r}" for wi, p, c, s in zip(w, Pv, Cv, sig)]
    return "\n".join(lines) + "\n"
