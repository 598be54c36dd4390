"""SVG line charts of trace signals.

Line styles follow the three-way comparison convention: dash-dotted without
momentum, dashed with fixed momentum, solid with adjusted momentum, dotted
setpoint. Output is byte-stable for identical input.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLES = {
    "none": "-.",
    "fixed": "--",
    "variable": "-",
    "setpoint": ":",
}

_RC = {
    "svg.hashsalt": "pidnn",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def build_figure(
    time: Sequence[float],
    columns: Mapping[str, Sequence[float]],
    styles: Optional[Mapping[str, str]] = None,
    title: str = "",
    ylabel: str = "",
):
    if len(time) == 0 or not columns:
        raise ValueError("nothing to plot")
    styles = styles or {}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 3.5))
        for name, values in columns.items():
            if len(values) != len(time):
                raise ValueError(f"column {name!r} has {len(values)} points, time has {len(time)}")
            ax.plot(time, values, styles.get(name, "-"), label=name, linewidth=1.2, color="black")
        ax.set_xlabel("time")
        if ylabel:
            ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
    return fig


def emit_chart(
    time: Sequence[float],
    columns: Mapping[str, Sequence[float]],
    path,
    styles: Optional[Mapping[str, str]] = None,
    title: str = "",
    ylabel: str = "",
) -> Path:
    """Write ``columns`` against ``time`` as an SVG file."""
    fig = build_figure(time, columns, styles, title, ylabel)
    path = Path(path)
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_trace_chart(trace, path, title: str = "") -> Path:
    t = [r.t for r in trace]
    cols = {"y": [r.y for r in trace], "setpoint": [r.y_d for r in trace]}
    return emit_chart(t, cols, path, {"y": "-", "setpoint": STYLES["setpoint"]}, title, "output")


def emit_comparison_charts(traces: Mapping[str, Sequence], out_dir, plant: str) -> list[Path]:
    """Output, margin and gain charts with one curve per momentum mode."""
    out_dir = Path(out_dir)
    modes = list(traces)
    t = [r.t for r in traces[modes[0]]]
    paths = []
    outputs = {m: [r.y for r in traces[m]] for m in modes}
    outputs["setpoint"] = [r.y_d for r in traces[modes[0]]]
    paths.append(emit_chart(t, outputs, out_dir / "compare_output.svg", STYLES, f"{plant} CSTR closed loop", "output"))
    margins = {m: [r.b for r in traces[m]] for m in modes}
    paths.append(emit_chart(t, margins, out_dir / "compare_margin.svg", STYLES, "stability margin", "b"))
    for gain in ("kp", "ki", "kd"):
        cols = {m: np.array([getattr(r, gain) for r in traces[m]]) for m in modes}
        paths.append(emit_chart(t, cols, out_dir / f"compare_{gain}.svg", STYLES, gain, gain))
    return paths
