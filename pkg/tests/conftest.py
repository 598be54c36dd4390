import time

import numpy as np
import pytest

from pidnn.config import default_config
from pidnn.harness import compare_modes, get_model
from pidnn.neural_model import AffineScaler, NarxSpec, NeuralModel

ACCEPTANCE_LINES: list[str] = []
COMPARE_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def model_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("model_cache")


@pytest.fixture(scope="session")
def iso_config():
    return default_config("isothermal")


@pytest.fixture(scope="session")
def noniso_config():
    return default_config("nonisothermal")


@pytest.fixture(scope="session")
def iso_model(iso_config, model_cache):
    return get_model(iso_config, model_cache)


@pytest.fixture(scope="session")
def noniso_model(noniso_config, model_cache):
    return get_model(noniso_config, model_cache)


@pytest.fixture(scope="session")
def iso_comparison(iso_config, iso_model):
    t0 = time.perf_counter()
    comp = compare_modes(iso_config, model=iso_model)
    COMPARE_SECONDS["isothermal"] = time.perf_counter() - t0
    return comp


@pytest.fixture(scope="session")
def noniso_comparison(noniso_config, noniso_model):
    t0 = time.perf_counter()
    comp = compare_modes(noniso_config, model=noniso_model)
    COMPARE_SECONDS["nonisothermal"] = time.perf_counter() - t0
    return comp


def random_model(rng, spec=None, hidden=None, scale=1.0, identity=False):
    spec = spec or NarxSpec(int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(0, 2)))
    hidden = hidden or int(rng.integers(1, 8))
    d = spec.regressor_dim
    if identity:
        scaler = AffineScaler.identity(d)
    else:
        lo = rng.uniform(-2, 1, d)
        ylo = rng.uniform(-1, 1)
        scaler = AffineScaler(lo, lo + rng.uniform(0.5, 3, d), ylo, ylo + rng.uniform(0.5, 3))
    return NeuralModel(
        spec,
        rng.normal(0, scale, (hidden, d)),
        rng.normal(0, scale, hidden),
        rng.normal(0, scale, hidden),
        rng.normal(0, scale),
        scaler,
    )


def random_regressor(rng, model):
    sc = model.scaler
    return rng.uniform(sc.input_lo, sc.input_hi)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
