"""One-hidden-layer sigmoid NARX model of the plant.

The network maps a regressor

    [aux states(k)..., y(k), ..., y(k-n+1), u(k), ..., u(k-m+1)]

to a one-step-ahead prediction of y(k+1). Both layers use the logistic
sigmoid, so the raw network output lies in (0, 1); an affine scaler maps
physical regressor channels to [-1, 1] and the physical output range to
[0.05, 0.95].

Training is plain per-sample SGD on E = 1/2 (target - output)^2 in scaled
coordinates. Once identified, the model is frozen and used read-only by the
controller.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np

SCALED_INPUT_RANGE = (-1.0, 1.0)
SCALED_OUTPUT_RANGE = (0.05, 0.95)

_FORMAT_TAG = "pidnn-neural-model v1"


class TrainingDivergedError(FloatingPointError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class NarxSpec:
    """Regressor layout.

    ``aux_states`` counts measured states other than the output that enter
    the regressor at their current value only (the nonisothermal model uses
    the conversion x1 this way).
    """

    output_lags: int = 1
    input_lags: int = 1
    aux_states: int = 0

    def __post_init__(self):
        if self.output_lags < 1 or self.input_lags < 1:
            raise ValueError("output_lags and input_lags must be >= 1")
        if self.aux_states < 0:
            raise ValueError("aux_states must be >= 0")

    @property
    def regressor_dim(self) -> int:
        return self.aux_states + self.output_lags + self.input_lags

    @property
    def u_channel(self) -> int:
        """Index of u(k) in the regressor."""
        return self.aux_states + self.output_lags

    def y_channel(self, lag: int = 0) -> int:
        return self.aux_states + lag

    def build(self, aux, y_hist: Sequence[float], u_hist: Sequence[float]) -> np.ndarray:
        """Assemble a regressor from newest-first output and input histories."""
        aux = np.atleast_1d(np.asarray(aux, dtype=float)) if self.aux_states else np.empty(0)
        return np.concatenate(
            [aux[: self.aux_states], np.asarray(y_hist[: self.output_lags], float), np.asarray(u_hist[: self.input_lags], float)]
        )


@dataclass(frozen=True)
class AffineScaler:
    input_lo: np.ndarray
    input_hi: np.ndarray
    output_lo: float
    output_hi: float

    def __post_init__(self):
        lo = np.array(self.input_lo, dtype=float).reshape(-1)
        hi = np.array(self.input_hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("input_lo and input_hi differ in length")
        if not np.all(hi > lo) or not self.output_hi > self.output_lo:
            raise ValueError("scaler ranges must satisfy hi > lo")
        object.__setattr__(self, "input_lo", lo)
        object.__setattr__(self, "input_hi", hi)
        object.__setattr__(self, "output_lo", float(self.output_lo))
        object.__setattr__(self, "output_hi", float(self.output_hi))

    @classmethod
    def identity(cls, dim: int) -> "AffineScaler":
        return cls(np.full(dim, SCALED_INPUT_RANGE[0]), np.full(dim, SCALED_INPUT_RANGE[1]), *SCALED_OUTPUT_RANGE)

    @classmethod
    def from_data(cls, X: np.ndarray, y: np.ndarray, pad: float = 0.0) -> "AffineScaler":
        """Fit ranges to data, widened by ``pad`` times the span on each side."""
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        ylo, yhi = float(y.min()), float(y.max())
        yspan = yhi - ylo if yhi > ylo else 1.0
        return cls(lo - pad * span, hi + pad * span, ylo - pad * yspan, yhi + pad * yspan)

    @property
    def input_gain(self) -> np.ndarray:
        """d(scaled input)/d(physical input) per channel."""
        a, b = SCALED_INPUT_RANGE
        return (b - a) / (self.input_hi - self.input_lo)

    @property
    def output_gain(self) -> float:
        """d(physical output)/d(scaled output)."""
        a, b = SCALED_OUTPUT_RANGE
        return (self.output_hi - self.output_lo) / (b - a)

    def scale_input(self, x):
        return SCALED_INPUT_RANGE[0] + (np.asarray(x, float) - self.input_lo) * self.input_gain

    def unscale_input(self, s):
        return self.input_lo + (np.asarray(s, float) - SCALED_INPUT_RANGE[0]) / self.input_gain

    def scale_output(self, y):
        return SCALED_OUTPUT_RANGE[0] + (np.asarray(y, float) - self.output_lo) / self.output_gain

    def unscale_output(self, s):
        return self.output_lo + (np.asarray(s, float) - SCALED_OUTPUT_RANGE[0]) * self.output_gain


@dataclass(frozen=True)
class NeuralModel:
    spec: NarxSpec
    input_weights: np.ndarray  # hidden x regressor
    hidden_biases: np.ndarray
    output_weights: np.ndarray
    output_bias: float
    scaler: AffineScaler

    def __post_init__(self):
        w1 = np.array(self.input_weights, dtype=float, ndmin=2)
        b1 = np.array(self.hidden_biases, dtype=float).reshape(-1)
        w2 = np.array(self.output_weights, dtype=float).reshape(-1)
        if w1.shape != (b1.size, self.spec.regressor_dim) or w2.size != b1.size:
            raise ValueError(
                f"weight shapes {w1.shape}, {b1.shape}, {w2.shape} do not match "
                f"{b1.size} hidden units and regressor dim {self.spec.regressor_dim}"
            )
        if self.scaler.input_lo.size != self.spec.regressor_dim:
            raise ValueError("scaler dimension does not match the regressor")
        for arr in (w1, b1, w2):
            arr.setflags(write=False)
        object.__setattr__(self, "input_weights", w1)
        object.__setattr__(self, "hidden_biases", b1)
        object.__setattr__(self, "output_weights", w2)
        object.__setattr__(self, "output_bias", float(self.output_bias))
        if not all(np.all(np.isfinite(a)) for a in (w1, b1, w2)) or not np.isfinite(self.output_bias):
            raise ValueError("model weights must be finite")

    @property
    def hidden_count(self) -> int:
        return self.hidden_biases.size

    @classmethod
    def random(
        cls,
        spec: NarxSpec,
        hidden_count: int,
        scaler: Optional[AffineScaler] = None,
        rng: Optional[np.random.Generator] = None,
        init_range: float = 0.5,
    ) -> "NeuralModel":
        """Weights uniform on [-init_range, init_range]."""
        rng = np.random.default_rng() if rng is None else rng
        d = spec.regressor_dim
        return cls(
            spec,
            rng.uniform(-init_range, init_range, (hidden_count, d)),
            rng.uniform(-init_range, init_range, hidden_count),
            rng.uniform(-init_range, init_range, hidden_count),
            rng.uniform(-init_range, init_range),
            scaler if scaler is not None else AffineScaler.identity(d),
        )

    def raw_output(self, x_scaled) -> tuple[float, np.ndarray]:
        hidden = sigmoid(self.input_weights @ x_scaled + self.hidden_biases)
        return float(sigmoid(self.output_weights @ hidden + self.output_bias)), hidden


def _check_dim(model: NeuralModel, regressor) -> np.ndarray:
    x = np.asarray(regressor, dtype=float).reshape(-1)
    if x.size != model.spec.regressor_dim:
        raise ValueError(f"regressor has {x.size} entries, model expects {model.spec.regressor_dim}")
    return x


def nn_forward(model: NeuralModel, regressor) -> tuple[float, np.ndarray]:
    """Predict y(k+1) in physical units; also return the hidden activations."""
    x = _check_dim(model, regressor)
    raw, hidden = model.raw_output(model.scaler.scale_input(x))
    return float(model.scaler.unscale_output(raw)), hidden


def output_input_sensitivity(model: NeuralModel, regressor) -> float:
    """d y^m / d u(k) in physical units.

    In scaled coordinates the derivative is
    ym (1 - ym) * sum_j W_j O_j (1 - O_j) W1_{j,u}; the scaler chain factor
    converts it to physical units.
    """
    x = _check_dim(model, regressor)
    raw, hidden = model.raw_output(model.scaler.scale_input(x))
    ch = model.spec.u_channel
    inner = np.sum(model.output_weights * hidden * (1.0 - hidden) * model.input_weights[:, ch])
    scaled = raw * (1.0 - raw) * inner
    return float(scaled * model.scaler.output_gain * model.scaler.input_gain[ch])


@numba.njit(cache=True)
def _sgd_update(w1, b1, w2, b2, x, target, lr):
    """One in-place backprop step on 1/2 (target - out)^2; returns (E, new b2)."""
    h = w1.shape[0]
    hidden = np.empty(h)
    z = b2[0]
    for j in range(h):
        a = b1[j]
        for i in range(x.shape[0]):
            a += w1[j, i] * x[i]
        hidden[j] = 1.0 / (1.0 + np.exp(-a))
        z += w2[j] * hidden[j]
    out = 1.0 / (1.0 + np.exp(-z))
    err = target - out
    delta_out = -err * out * (1.0 - out)
    for j in range(h):
        delta_h = delta_out * w2[j] * hidden[j] * (1.0 - hidden[j])
        w2[j] -= lr * delta_out * hidden[j]
        b1[j] -= lr * delta_h
        for i in range(x.shape[0]):
            w1[j, i] -= lr * delta_h * x[i]
    b2[0] -= lr * delta_out
    return 0.5 * err * err


@numba.njit(cache=True)
def _sgd_epoch(w1, b1, w2, b2, X, t, order, lr):
    total = 0.0
    for k in order:
        total += _sgd_update(w1, b1, w2, b2, X[k], t[k], lr)
    return total / order.shape[0]


def loss_gradients(model: NeuralModel, x_scaled, target_scaled: float):
    """Analytic gradients of E = 1/2 (target - out)^2 in scaled coordinates.

    Returns ``(E, dW1, db1, dW2, db2)``.
    """
    out, hidden = model.raw_output(np.asarray(x_scaled, float))
    err = target_scaled - out
    delta_out = -err * out * (1.0 - out)
    delta_h = delta_out * model.output_weights * hidden * (1.0 - hidden)
    return 0.5 * err * err, np.outer(delta_h, x_scaled), delta_h, delta_out * hidden, delta_out


@dataclass(frozen=True)
class TrainingSample:
    regressor: np.ndarray  # scaled
    target: float  # scaled


def nn_train_step(model: NeuralModel, sample: TrainingSample, lr: float) -> tuple[NeuralModel, float]:
    """One SGD step; returns the updated model and the pre-step cost."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    x = _check_dim(model, sample.regressor)
    energy, dw1, db1, dw2, db2 = loss_gradients(model, x, sample.target)
    grads = (dw1, db1, dw2, db2)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergedError("non-finite gradient during identification")
    updated = replace(
        model,
        input_weights=model.input_weights - lr * dw1,
        hidden_biases=model.hidden_biases - lr * db1,
        output_weights=model.output_weights - lr * dw2,
        output_bias=model.output_bias - lr * db2,
    )
    return updated, float(energy)


def train(
    model: NeuralModel,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
) -> tuple[NeuralModel, np.ndarray]:
    """Shuffled per-sample SGD over physical-unit data; returns model and epoch losses."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    Xs = np.ascontiguousarray(model.scaler.scale_input(X), dtype=float)
    ts = np.ascontiguousarray(model.scaler.scale_output(y), dtype=float)
    w1 = model.input_weights.copy()
    b1 = model.hidden_biases.copy()
    w2 = model.output_weights.copy()
    b2 = np.array([model.output_bias])
    losses = np.empty(epochs)
    for epoch in range(epochs):
        order = rng.permutation(len(ts))
        losses[epoch] = _sgd_epoch(w1, b1, w2, b2, Xs, ts, order, lr)
        if not (np.isfinite(losses[epoch]) and np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise TrainingDivergedError(f"training diverged in epoch {epoch}")
    return replace(model, input_weights=w1, hidden_biases=b1, output_weights=w2, output_bias=b2[0]), losses


def predict(model: NeuralModel, X: np.ndarray) -> np.ndarray:
    """Vectorised nn_forward over rows of X."""
    Xs = model.scaler.scale_input(np.atleast_2d(X))
    hidden = sigmoid(Xs @ model.input_weights.T + model.hidden_biases)
    return model.scaler.unscale_output(sigmoid(hidden @ model.output_weights + model.output_bias))


def one_step_rmse(model: NeuralModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((predict(model, X) - y) ** 2)))


# -- persistence -------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.atleast_1d(values))


def dumps(model: NeuralModel) -> str:
    """Plain-text model format; floats are written with repr() so they round-trip."""
    s, sc = model.spec, model.scaler
    lines = [
        _FORMAT_TAG,
        f"output_lags {s.output_lags}",
        f"input_lags {s.input_lags}",
        f"aux_states {s.aux_states}",
        f"hidden_count {model.hidden_count}",
        f"input_lo {_fmt(sc.input_lo)}",
        f"input_hi {_fmt(sc.input_hi)}",
        f"output_lo {_fmt(sc.output_lo)}",
        f"output_hi {_fmt(sc.output_hi)}",
        "input_weights",
        *(_fmt(row) for row in model.input_weights),
        f"hidden_biases {_fmt(model.hidden_biases)}",
        f"output_weights {_fmt(model.output_weights)}",
        f"output_bias {_fmt(model.output_bias)}",
    ]
    return "\n".join(lines) + "\n"


def loads(text: str) -> NeuralModel:
    lines = [ln.strip() for ln in io.StringIO(text) if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ValueError("not a pidnn neural model file")
    fields: dict[str, str] = {}
    it = iter(lines[1:])
    rows = []
    for line in it:
        key, _, rest = line.partition(" ")
        if key == "input_weights":
            continue
        if key in {"output_lags", "input_lags", "aux_states", "hidden_count", "input_lo", "input_hi",
                   "output_lo", "output_hi", "hidden_biases", "output_weights", "output_bias"}:
            fields[key] = rest
        else:
            rows.append([float(v) for v in line.split()])
    spec = NarxSpec(int(fields["output_lags"]), int(fields["input_lags"]), int(fields["aux_states"]))
    hidden = int(fields["hidden_count"])
    if len(rows) != hidden:
        raise ValueError(f"expected {hidden} weight rows, found {len(rows)}")

    def floats(key):
        return np.array([float(v) for v in fields[key].split()])

    scaler = AffineScaler(floats("input_lo"), floats("input_hi"), floats("output_lo")[0], floats("output_hi")[0])
    return NeuralModel(spec, np.array(rows), floats("hidden_biases"), floats("output_weights"),
                       floats("output_bias")[0], scaler)


def save(model: NeuralModel, path) -> None:
    Path(path).write_text(dumps(model))


def load(path) -> NeuralModel:
    return loads(Path(path).read_text())


# -- identification ----------------------------------------------------------


@dataclass(frozen=True)
class ExcitationSpec:
    """Random piecewise-constant input: levels uniform on [u_lo, u_hi],
    each held for a uniformly drawn number of control steps."""

    u_lo: float
    u_hi: float
    control_period: float
    hold_min: int = 1
    hold_max: int = 1
    samples: int = 2000
    substeps: int = 10

    def __post_init__(self):
        if not self.u_hi > self.u_lo:
            raise ValueError("u_hi must exceed u_lo")
        if not 1 <= self.hold_min <= self.hold_max:
            raise ValueError("need 1 <= hold_min <= hold_max")
        if self.samples < 2:
            raise ValueError("need at least two samples")

    def signal(self, rng: np.random.Generator, length: int) -> np.ndarray:
        u = np.empty(length)
        k = 0
        while k < length:
            hold = int(rng.integers(self.hold_min, self.hold_max + 1))
            u[k : k + hold] = rng.uniform(self.u_lo, self.u_hi)
            k += hold
        return u


def collect_data(plant, x0, excitation: ExcitationSpec, spec: NarxSpec, rng: np.random.Generator):
    """Simulate the plant under random excitation and build (regressor, y(k+1)) pairs."""
    from .plant_sim import SimState, simulate_control_interval

    lag = max(spec.output_lags, spec.input_lags) - 1
    n = excitation.samples + lag
    u = excitation.signal(rng, n)
    state = SimState(np.asarray(x0, float))
    ys, auxs = [], []
    for k in range(n):
        ys.append(plant.output(state.state_vector))
        auxs.append(plant.aux(state.state_vector))
        state = simulate_control_interval(plant, state, u[k], excitation.control_period, excitation.substeps)
    ys.append(plant.output(state.state_vector))
    X = np.empty((excitation.samples, spec.regressor_dim))
    target = np.empty(excitation.samples)
    for row, k in enumerate(range(lag, n)):
        X[row] = spec.build(auxs[k], ys[k::-1], u[k::-1])
        target[row] = ys[k + 1]
    return X, target


def identify(
    plant,
    excitation: ExcitationSpec,
    spec: NarxSpec,
    hidden_count: int,
    epochs: int,
    lr: float,
    seed: int,
    x0=None,
) -> NeuralModel:
    """Fit a frozen NARX model of ``plant`` from one seeded excitation run."""
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = default_initial_state(plant, excitation)
    X, y = collect_data(plant, x0, excitation, spec, rng)
    scaler = AffineScaler.from_data(X, y, pad=0.05)
    model = NeuralModel.random(spec, hidden_count, scaler, rng)
    model, _ = train(model, X, y, epochs, lr, rng)
    return model


def default_initial_state(plant, excitation: ExcitationSpec) -> np.ndarray:
    return plant.steady_state(0.5 * (excitation.u_lo + excitation.u_hi))
