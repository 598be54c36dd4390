"""Closed-loop experiments, metrics and trace files.

One run: identify (or load) the frozen plant model, then for each control
step k

    measure y(k) -> controller_step (momentum uses the margin from the
    previous cycle) -> relinearize the model, recompute the margin ->
    hold u(k) on the plant for one period.

Trace CSV columns, in order: k, t, y_d, y, y_m, u, kp, ki, kd, b, beta, cost.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import neural_model
from .config import ExperimentConfig
from .controller import AdaptationMode, ControllerState, PidGains, controller_step
from .margin import MarginEstimate, linearize_narx, pid_tf, stability_margin
from .neural_model import NeuralModel, identify
from .plant_sim import SimState, measure_output, simulate_control_interval

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "t", "y_d", "y", "y_m", "u", "kp", "ki", "kd", "b", "beta", "cost")
MODES = tuple(m.value for m in AdaptationMode)
MODE_LABELS = {
    "none": "Without momentum",
    "fixed": "With a fixed momentum",
    "variable": "With an adjusted momentum",
}


class IntegrationBlowUp(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"plant simulation failed at control step {step}: {cause}")
        self.step = step


@dataclass(frozen=True)
class TraceRecord:
    k: int
    t: float
    y_d: float
    y: float
    y_m: float
    u: float
    kp: float
    ki: float
    kd: float
    b: float
    beta: float
    cost: float


@dataclass(frozen=True)
class RunSummary:
    mode: str
    mse: float
    post_disturbance_ise: Optional[float]
    min_margin: float
    mean_margin: float
    final_gains: tuple[float, float, float]


def mse(y_d: Sequence[float], y: Sequence[float]) -> float:
    """1/2 sum (y_d - y)^2 over the horizon (no division by N)."""
    y_d = np.asarray(y_d, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("mse of an empty trace")
    return float(0.5 * np.sum((y_d - y) ** 2))


def trace_mse(trace: Sequence[TraceRecord]) -> float:
    return mse([r.y_d for r in trace], [r.y for r in trace])


def ise(trace: Sequence[TraceRecord], start_time: float, T: float) -> float:
    """Integral of squared tracking error from ``start_time`` to the horizon."""
    e2 = [(r.y_d - r.y) ** 2 for r in trace if r.t + 1e-9 >= start_time]
    return float(T * np.sum(e2))


def summarize(trace: Sequence[TraceRecord], cfg: ExperimentConfig) -> RunSummary:
    b = np.array([r.b for r in trace])
    dist = cfg.disturbance_spec()
    last = trace[-1]
    return RunSummary(
        mode=cfg.controller.mode,
        mse=trace_mse(trace),
        post_disturbance_ise=None if dist is None else ise(trace, dist.onset_time, cfg.T),
        min_margin=float(b.min()),
        mean_margin=float(b.mean()),
        final_gains=(last.kp, last.ki, last.kd),
    )


# -- model cache -------------------------------------------------------------


def identify_for(cfg: ExperimentConfig) -> NeuralModel:
    i = cfg.identification
    return identify(cfg.build_plant(), cfg.excitation(), cfg.narx_spec(), i.hidden_count, i.epochs, i.lr, i.seed)


def get_model(cfg: ExperimentConfig, cache_dir=None) -> NeuralModel:
    """Identified model for ``cfg``, read from / written to ``cache_dir`` when given."""
    if cache_dir is None:
        return identify_for(cfg)
    path = Path(cache_dir) / f"model-{cfg.plant}-{cfg.identification_key()}.txt"
    if path.exists():
        return neural_model.load(path)
    model = identify_for(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    neural_model.save(model, path)
    return model


# -- closed loop ---------------------------------------------------------------


def initial_operating_point(cfg: ExperimentConfig, plant):
    """Equilibrium state and input at the first setpoint."""
    y0 = cfg.setpoint_at(0)
    u0 = plant.steady_input(y0)
    return plant.steady_state(u0), u0


def current_margin(model: NeuralModel, cs: ControllerState, g: PidGains, cfg: ExperimentConfig) -> MarginEstimate:
    P = linearize_narx(model, cs.regressor(model), cfg.T)
    return stability_margin(P, pid_tf(g, cfg.T), cfg.grid(), cfg.margin.refine)


def simulate(cfg: ExperimentConfig, model: NeuralModel) -> list[TraceRecord]:
    if cfg.horizon < 1:
        raise ValueError("setpoint profile is shorter than one control period")
    plant = cfg.build_plant()
    dist = cfg.disturbance_spec()
    acfg = cfg.adaptation()
    T = cfg.T
    spec = model.spec

    x0, u0 = initial_operating_point(cfg, plant)
    state = SimState(x0, 0.0)
    y0 = measure_output(plant, state, dist)
    cs = ControllerState.at_rest(T, y0, u0, spec.output_lags, spec.input_lags, plant.aux(x0))
    g = cfg.initial_gains()
    b = current_margin(model, cs, g, cfg).b

    trace = []
    for k in range(cfg.horizon):
        t = k * T
        y_d = cfg.setpoint_at(k)
        y = measure_output(plant, state, dist)
        b_used = b
        u, g, diag = controller_step(model, cs, g, acfg, y_d, y, b_used, plant.aux(state.state_vector))
        trace.append(TraceRecord(k, t, y_d, y, diag.y_model, u, g.kp, g.ki, g.kd, b_used, diag.beta, diag.cost))
        if (k + 1) % cfg.margin.cadence == 0:
            b = current_margin(model, cs, g, cfg).b
        try:
            state = simulate_control_interval(plant, state, u, T, cfg.controller.substeps, dist)
        except (FloatingPointError, ArithmeticError) as exc:
            raise IntegrationBlowUp(k, exc) from exc
        # pin the clock to the control grid so onsets are not subject to drift
        state = SimState(state.state_vector, (k + 1) * T)
    return trace


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace:
        writer.writerow([r.k] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
    return buf.getvalue()


def read_trace_csv(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [TraceRecord(int(row["k"]), *(float(row[c]) for c in TRACE_COLUMNS[1:])) for row in reader]


def run_experiment(
    cfg: ExperimentConfig,
    model: Optional[NeuralModel] = None,
    out_dir=None,
    cache_dir=None,
    plot: bool = False,
) -> tuple[list[TraceRecord], RunSummary]:
    """Run one closed loop; with ``out_dir`` write trace_<mode>.csv and summary_<mode>.json."""
    if model is None:
        model = get_model(cfg, cache_dir)
    trace = simulate(cfg, model)
    summary = summarize(trace, cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mode = cfg.controller.mode
        (out / f"trace_{mode}.csv").write_text(trace_to_csv(trace))
        (out / f"summary_{mode}.json").write_text(json.dumps(asdict(summary), indent=2) + "\n")
        if plot:
            from .charts import emit_trace_chart

            emit_trace_chart(trace, out / f"chart_{mode}.svg", title=f"{cfg.plant} CSTR, {MODE_LABELS[mode].lower()}")
    log.info("%s/%s: mse=%.6g mean b=%.4f", cfg.plant, cfg.controller.mode, summary.mse, summary.mean_margin)
    return trace, summary


@dataclass(frozen=True)
class Comparison:
    traces: dict
    summaries: dict

    def table(self) -> str:
        """MSE table with one column per mode."""
        header = ["PIDNN"] + [MODE_LABELS[m] for m in MODES]
        rows = [
            ["MSE"] + [f"{self.summaries[m].mse:.6g}" for m in MODES],
            ["Mean margin"] + [f"{self.summaries[m].mean_margin:.6g}" for m in MODES],
        ]
        if self.summaries[MODES[0]].post_disturbance_ise is not None:
            rows.append(["Post-disturbance ISE"] + [f"{self.summaries[m].post_disturbance_ise:.6g}" for m in MODES])
        return "\n".join("\t".join(r) for r in [header] + rows) + "\n"


def comparison_csv(traces: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["y", "u", "b", "kp", "ki", "kd"]
    writer.writerow(["k", "t", "y_d"] + [f"{c}_{m}" for m in MODES for c in cols])
    base = traces[MODES[0]]
    for i, r in enumerate(base):
        row = [r.k, repr(r.t), repr(r.y_d)]
        for m in MODES:
            rec = traces[m][i]
            row += [repr(float(getattr(rec, c))) for c in cols]
        writer.writerow(row)
    return buf.getvalue()


def compare_modes(cfg: ExperimentConfig, out_dir=None, cache_dir=None, plot: bool = False, model=None) -> Comparison:
    """Run all three momentum modes on one shared identified model."""
    if model is None:
        model = get_model(cfg, cache_dir)
    traces, summaries = {}, {}
    for mode in MODES:
        traces[mode], summaries[mode] = run_experiment(cfg.with_mode(mode), model, out_dir, plot=plot)
    comp = Comparison(traces, summaries)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "comparison.csv").write_text(comparison_csv(traces))
        (out / "table.txt").write_text(comp.table())
        if plot:
            from .charts import emit_comparison_charts

            emit_comparison_charts(traces, out, cfg.plant)
    return comp
