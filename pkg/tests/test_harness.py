import dataclasses
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pidnn.charts import build_figure, emit_chart, emit_comparison_charts
from pidnn.cli import main
from pidnn.config import SetpointConfig, default_config, dump_config, parse_config
from pidnn.harness import (
    MODES,
    TRACE_COLUMNS,
    compare_modes,
    ise,
    mse,
    read_trace_csv,
    run_experiment,
    simulate,
    trace_mse,
)


def _short(cfg, steps=60):
    return dataclasses.replace(cfg, setpoint=dataclasses.replace(cfg.setpoint, horizon=steps))


def test_mse_examples():
    assert mse([1, 1], [0, 2]) == 1.0
    assert mse([0, 0, 0], [1, 2, 2]) == 4.5
    assert mse([0.3, 0.7], [0.3, 0.7]) == 0.0
    with pytest.raises(ValueError):
        mse([], [])


def test_config_round_trip():
    for plant in ("isothermal", "nonisothermal"):
        cfg = default_config(plant)
        assert parse_config(dump_config(cfg)) == cfg
    cfg = dataclasses.replace(default_config(), plant_params={"rate_const": 0.03})
    assert parse_config(dump_config(cfg)) == cfg


def test_config_overrides_and_errors():
    cfg = parse_config("[experiment]\nplant = nonisothermal\n[controller]\nalpha = 0.05 ; slower\nmode = fixed\n")
    assert cfg.plant == "nonisothermal"
    assert cfg.controller.alpha == 0.05
    assert cfg.controller.mode == "fixed"
    assert cfg.controller.kp == default_config("nonisothermal").controller.kp
    with pytest.raises(ValueError):
        parse_config("[controller]\nbogus = 1\n")
    with pytest.raises(ValueError):
        parse_config("[controller]\nmode = sometimes\n")
    with pytest.raises(ValueError):
        parse_config("[experiment]\nplant = batch\n")


def test_setpoint_profile():
    cfg = default_config()
    assert cfg.horizon == 750
    assert cfg.setpoint_at(0) == 0.85
    assert cfg.setpoint_at(249) == 0.85
    assert cfg.setpoint_at(250) == 0.88
    assert cfg.setpoint_at(10_000) == 0.82


def test_identification_key_ignores_controller():
    cfg = default_config()
    assert cfg.identification_key() == cfg.with_mode("none").identification_key()
    other = dataclasses.replace(cfg, identification=dataclasses.replace(cfg.identification, seed=1))
    assert cfg.identification_key() != other.identification_key()


def test_zero_horizon_rejected(iso_config, iso_model):
    cfg = dataclasses.replace(iso_config, setpoint=SetpointConfig(values=(0.85,), durations=(0.01,)))
    with pytest.raises(ValueError):
        simulate(cfg, iso_model)
    with pytest.raises(ValueError):
        dataclasses.replace(iso_config, setpoint=dataclasses.replace(iso_config.setpoint, horizon=0))


def test_trace_csv_and_summary_consistent(tmp_path, iso_config, iso_model):
    cfg = _short(iso_config)
    trace, summary = run_experiment(cfg, iso_model, out_dir=tmp_path)
    rows = read_trace_csv(tmp_path / "trace_variable.csv")
    header = (tmp_path / "trace_variable.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == TRACE_COLUMNS
    assert rows == trace
    saved = json.loads((tmp_path / "summary_variable.json").read_text())
    assert saved["mse"] == pytest.approx(trace_mse(rows), abs=1e-9)
    assert saved["mean_margin"] == pytest.approx(np.mean([r.b for r in rows]), abs=1e-9)
    assert summary.mse == saved["mse"]


def test_ise_window():
    cfg = _short(default_config(), 5)
    from pidnn.harness import TraceRecord

    trace = [TraceRecord(k, 0.1 * k, 1.0, 0.0 if k < 3 else 0.5, 0, 0, 0, 0, 0, 0, 0, 0) for k in range(5)]
    assert ise(trace, 0.3, cfg.T) == pytest.approx(0.1 * 2 * 0.25)


def test_first_step_identical_across_modes(iso_config, iso_model):
    traces = {m: simulate(_short(iso_config, 3).with_mode(m), iso_model) for m in MODES}
    first = {m: traces[m][0] for m in MODES}
    # before any gain increment exists, momentum cannot matter
    assert first["none"].u == first["fixed"].u == first["variable"].u
    assert first["none"].kp == first["fixed"].kp == first["variable"].kp
    assert first["fixed"].beta == iso_config.controller.beta0
    assert first["none"].beta == 0.0


def test_margins_and_betas_in_range(iso_comparison, noniso_comparison):
    for comp in (iso_comparison, noniso_comparison):
        for mode, trace in comp.traces.items():
            b = np.array([r.b for r in trace])
            assert np.all((b >= 0) & (b <= 1))
            beta = np.array([r.beta for r in trace])
            if mode != "none":
                assert np.all((beta > 0) & (beta < 1))


def test_variable_beta_follows_logged_margin(iso_comparison, iso_config):
    beta0 = iso_config.controller.beta0
    for r in iso_comparison.traces["variable"]:
        assert r.beta == pytest.approx(beta0 * np.exp(-r.b), rel=1e-12)


def test_comparison_files(tmp_path, iso_config, iso_model):
    comp = compare_modes(_short(iso_config, 40), out_dir=tmp_path, model=iso_model)
    assert set(comp.summaries) == set(MODES)
    for m in MODES:
        assert (tmp_path / f"trace_{m}.csv").exists()
    header = (tmp_path / "comparison.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["k", "t", "y_d"]
    assert "b_variable" in header
    assert (tmp_path / "table.txt").read_text().startswith("PIDNN\t")


def test_chart_determinism_and_structure(tmp_path):
    t = np.linspace(0, 1, 50)
    cols = {"none": np.sin(t), "fixed": np.cos(t), "variable": t, "setpoint": np.full(50, 0.5)}
    a = emit_chart(t, cols, tmp_path / "a.svg", title="demo")
    b = emit_chart(t, cols, tmp_path / "b.svg", title="demo")
    assert a.read_bytes() == b.read_bytes()
    root = ET.parse(a).getroot()
    assert root.tag.endswith("svg")
    text = a.read_text()
    for name in cols:
        assert name in text


def test_chart_constant_series_and_errors(tmp_path):
    t = np.arange(10.0)
    path = emit_chart(t, {"flat": np.zeros(10)}, tmp_path / "flat.svg")
    assert path.stat().st_size > 0
    with pytest.raises(ValueError):
        build_figure([], {"x": []})
    with pytest.raises(ValueError):
        build_figure(t, {"x": np.zeros(3)})


def test_comparison_charts(tmp_path, iso_comparison):
    paths = emit_comparison_charts(iso_comparison.traces, tmp_path, "isothermal")
    names = sorted(p.name for p in paths)
    assert names == sorted(["compare_output.svg", "compare_margin.svg", "compare_kp.svg", "compare_ki.svg", "compare_kd.svg"])


def test_cli_smoke(tmp_path, capsys, model_cache, iso_model):
    ini = tmp_path / "short.ini"
    ini.write_text("[experiment]\nplant = isothermal\n[setpoint]\nhorizon = 30\n")
    out = tmp_path / "out"
    assert main(["show-config", "--plant", "nonisothermal"]) == 0
    assert "[controller]" in capsys.readouterr().out
    assert main(["run", "--config", str(ini), "--mode", "fixed", "--out", str(out), "--cache", str(model_cache), "--plot"]) == 0
    assert (out / "trace_fixed.csv").exists()
    assert (out / "chart_fixed.svg").exists()
    assert main(["compare", "--config", str(ini), "--out", str(out), "--cache", str(model_cache)]) == 0
    assert "MSE" in capsys.readouterr().out
    assert main(["margin-report", "--config", str(ini), "--out", str(out), "--cache", str(model_cache)]) == 0
    assert (out / "margin_report.tsv").read_text().startswith("omega\t")
    assert main(["identify", "--config", str(ini), "--out", str(out), "--cache", str(model_cache)]) == 0
    assert (out / "model-isothermal.txt").exists()


def test_cli_reports_bad_config(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[controller]\nalpha = -1\n")
    assert main(["show-config", "--config", str(ini)]) == 2
    assert "error" in capsys.readouterr().err
