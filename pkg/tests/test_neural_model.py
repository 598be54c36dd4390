import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_model, random_regressor
from pidnn.neural_model import (
    AffineScaler,
    ExcitationSpec,
    NarxSpec,
    NeuralModel,
    TrainingSample,
    collect_data,
    dumps,
    identify,
    load,
    loads,
    loss_gradients,
    nn_forward,
    nn_train_step,
    one_step_rmse,
    output_input_sensitivity,
    predict,
    save,
    train,
)
from pidnn.plant_sim import IsothermalCstr

SPEC_1_1 = NarxSpec(1, 1)


def _single_unit_model():
    return NeuralModel(SPEC_1_1, [[0.0, 1.0]], [0.0], [1.0], 0.0, AffineScaler.identity(2))


def _reference_forward(model, regressor):
    """Loop-based forward pass used as an independent oracle."""
    sc = model.scaler
    x = [-1.0 + 2.0 * (r - lo) / (hi - lo) for r, lo, hi in zip(regressor, sc.input_lo, sc.input_hi)]
    z = model.output_bias
    for j in range(model.hidden_count):
        a = model.hidden_biases[j] + sum(model.input_weights[j, i] * x[i] for i in range(len(x)))
        z += model.output_weights[j] / (1.0 + np.exp(-a))
    s = 1.0 / (1.0 + np.exp(-z))
    return sc.output_lo + (s - 0.05) * (sc.output_hi - sc.output_lo) / 0.9


def test_narx_layout():
    spec = NarxSpec(2, 3, 1)
    assert spec.regressor_dim == 6
    assert spec.u_channel == 3
    x = spec.build([9.0], [1.0, 2.0, 7.0], [3.0, 4.0, 5.0, 8.0])
    assert np.array_equal(x, [9.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.raises(ValueError):
        NarxSpec(0, 1)


def test_zero_weights_give_midpoint():
    model = NeuralModel(SPEC_1_1, np.zeros((3, 2)), np.zeros(3), np.zeros(3), 0.0, AffineScaler.identity(2))
    y, hidden = nn_forward(model, [0.3, -0.2])
    assert y == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(hidden, 0.5)


def test_single_unit_value():
    y, _ = nn_forward(_single_unit_model(), [0.0, 0.0])
    assert y == pytest.approx(0.62246, abs=1e-5)


def test_forward_matches_reference():
    rng = np.random.default_rng(11)
    for _ in range(50):
        model = random_model(rng)
        x = random_regressor(rng, model)
        assert nn_forward(model, x)[0] == pytest.approx(_reference_forward(model, x), rel=1e-12, abs=1e-12)


def test_predict_matches_forward():
    rng = np.random.default_rng(2)
    model = random_model(rng, NarxSpec(2, 1, 1), 5)
    X = np.stack([random_regressor(rng, model) for _ in range(20)])
    assert np.allclose(predict(model, X), [nn_forward(model, x)[0] for x in X], rtol=1e-13, atol=1e-13)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        nn_forward(_single_unit_model(), [0.0, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=st.floats(-5, 5)), st.integers(0, 2**32 - 1))
def test_raw_output_in_open_unit_interval(x, seed):
    model = random_model(np.random.default_rng(seed), NarxSpec(2, 2), 4, scale=3.0, identity=True)
    raw, hidden = model.raw_output(x)
    assert 0.0 < raw < 1.0
    assert np.all((hidden >= 0.0) & (hidden <= 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scaler_round_trip(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, NarxSpec(1, 2, 1), 2)
    sc = model.scaler
    x = random_regressor(rng, model)
    assert np.allclose(sc.unscale_input(sc.scale_input(x)), x, rtol=0, atol=1e-12)
    y = rng.uniform(sc.output_lo, sc.output_hi)
    assert sc.unscale_output(sc.scale_output(y)) == pytest.approx(y, abs=1e-12)


def test_scaler_from_data_ranges():
    X = np.array([[0.0, 10.0], [2.0, 30.0]])
    y = np.array([1.0, 3.0])
    sc = AffineScaler.from_data(X, y, pad=0.05)
    assert np.allclose(sc.input_lo, [-0.1, 9.0])
    assert np.allclose(sc.input_hi, [2.1, 31.0])
    assert (sc.output_lo, sc.output_hi) == pytest.approx((0.9, 3.1))
    s = sc.scale_input(X)
    assert np.all((s > -1) & (s < 1))
    with pytest.raises(ValueError):
        AffineScaler([0.0], [0.0], 0.0, 1.0)


def _flat(model):
    return np.concatenate([model.input_weights.ravel(), model.hidden_biases, model.output_weights, [model.output_bias]])


def _with_flat(model, theta):
    h, d = model.input_weights.shape
    i = 0
    w1 = theta[i : i + h * d].reshape(h, d)
    i += h * d
    b1 = theta[i : i + h]
    i += h
    w2 = theta[i : i + h]
    return NeuralModel(model.spec, w1, b1, w2, theta[-1], model.scaler)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        model = random_model(rng, identity=True)
        x = rng.uniform(-1, 1, model.spec.regressor_dim)
        target = rng.uniform(0.05, 0.95)
        _, dw1, db1, dw2, db2 = loss_gradients(model, x, target)
        analytic = np.concatenate([dw1.ravel(), db1, dw2, [db2]])
        theta = _flat(model)
        numeric = np.empty_like(theta)
        h = 1e-6
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            ep = loss_gradients(_with_flat(model, tp), x, target)[0]
            em = loss_gradients(_with_flat(model, tm), x, target)[0]
            numeric[i] = (ep - em) / (2 * h)
        scale = np.max(np.abs(numeric))
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-5


def test_sensitivity_single_unit_value():
    assert output_input_sensitivity(_single_unit_model(), [0.0, 0.0]) == pytest.approx(0.05875, abs=1e-5)


def test_sensitivity_matches_finite_differences_physical_units():
    rng = np.random.default_rng(9)
    for _ in range(50):
        model = random_model(rng)
        x = random_regressor(rng, model)
        ch = model.spec.u_channel
        h = 1e-6 * (model.scaler.input_hi[ch] - model.scaler.input_lo[ch])
        xp, xm = x.copy(), x.copy()
        xp[ch] += h
        xm[ch] -= h
        fd = (nn_forward(model, xp)[0] - nn_forward(model, xm)[0]) / (2 * h)
        assert output_input_sensitivity(model, x) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_train_step_zero_error_is_noop():
    model = _single_unit_model()
    x = np.array([0.2, -0.4])
    target = model.raw_output(x)[0]
    new, energy = nn_train_step(model, TrainingSample(x, target), 0.1)
    assert energy == 0.0
    assert np.array_equal(_flat(new), _flat(model))


def test_train_step_matches_gradient_descent():
    rng = np.random.default_rng(1)
    model = random_model(rng, identity=True)
    x = rng.uniform(-1, 1, model.spec.regressor_dim)
    new, energy = nn_train_step(model, TrainingSample(x, 0.7), 0.1)
    e0, dw1, db1, dw2, db2 = loss_gradients(model, x, 0.7)
    assert energy == pytest.approx(e0)
    expected = _flat(model) - 0.1 * np.concatenate([dw1.ravel(), db1, dw2, [db2]])
    assert np.allclose(_flat(new), expected, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        nn_train_step(model, TrainingSample(x, 0.7), 0.0)


def test_compiled_training_matches_reference_steps():
    rng = np.random.default_rng(4)
    model = random_model(rng, NarxSpec(1, 1), 3, identity=True)
    X = rng.uniform(-1, 1, (6, 2))
    y = rng.uniform(0.1, 0.9, 6)
    trained, _ = train(model, X, y, 1, 0.1, np.random.default_rng(0))
    ref = model
    for k in np.random.default_rng(0).permutation(6):
        ref, _ = nn_train_step(ref, TrainingSample(X[k], y[k]), 0.1)
    assert np.allclose(_flat(trained), _flat(ref), rtol=0, atol=1e-13)


def test_training_reduces_loss_on_toy_map():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (200, 2))
    y = 0.5 + 0.2 * np.tanh(X[:, 0] - 0.5 * X[:, 1])
    model = NeuralModel.random(SPEC_1_1, 6, AffineScaler.identity(2), rng)
    _, losses = train(model, X, y, 500, 0.5, rng)
    assert losses[:10].mean() / losses[-10:].mean() >= 10


def test_persistence_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model = random_model(rng, NarxSpec(2, 1, 1), 4)
    text = dumps(model)
    again = loads(text)
    assert dumps(again) == text
    assert np.array_equal(_flat(again), _flat(model))
    assert again.spec == model.spec
    save(model, tmp_path / "m.txt")
    assert np.array_equal(_flat(load(tmp_path / "m.txt")), _flat(model))
    with pytest.raises(ValueError):
        loads("not a model\n")


def test_excitation_holds_levels():
    ex = ExcitationSpec(0.0, 1.0, 0.1, hold_min=3, hold_max=3, samples=10)
    u = ex.signal(np.random.default_rng(0), 9)
    assert u[0] == u[1] == u[2] != u[3]
    assert np.all((u >= 0) & (u <= 1))


def test_collect_data_targets_are_next_outputs():
    plant = IsothermalCstr()
    spec = NarxSpec(2, 2)
    ex = ExcitationSpec(0.0, 1.0, 0.5, samples=30)
    X, y = collect_data(plant, [0.5], ex, spec, np.random.default_rng(0))
    assert X.shape == (30, 4)
    # y(k) of row r+1 is the target of row r
    assert np.array_equal(X[1:, 0], y[:-1])
    assert np.array_equal(X[1:, 1], X[:-1, 0])


def test_identify_is_deterministic_and_accurate():
    plant = IsothermalCstr()
    ex = ExcitationSpec(0.0, 1.0, 1.0, hold_min=5, hold_max=30, samples=600)
    a = identify(plant, ex, SPEC_1_1, 4, 100, 0.1, seed=3)
    b = identify(plant, ex, SPEC_1_1, 4, 100, 0.1, seed=3)
    assert dumps(a) == dumps(b)
    X, y = collect_data(plant, [0.8], ex, SPEC_1_1, np.random.default_rng(99))
    assert one_step_rmse(a, X, y) < 0.05 * (y.max() - y.min())
