"""Experiment configuration and its plain-text (INI) file format.

A config file has one section per group below; every key is optional and
falls back to the benchmark default for the selected plant::

    [experiment]
    plant = isothermal          ; or nonisothermal
    output_dir = runs

    [plant]                     ; isothermal: rate_const, feed_conc
    rate_const = 0.028          ; nonisothermal: damkohler, heat_of_reaction,
                                ;   activation, heat_transfer

    [identification]
    output_lags = 1
    input_lags = 1
    aux_states = 0
    hidden_count = 6
    epochs = 4000
    lr = 0.1
    seed = 0
    u_lo = 0.0
    u_hi = 1.0
    hold_min = 5                ; excitation hold, control steps
    hold_max = 50
    samples = 4000

    [controller]
    kp = 0.5
    ki = 0.2
    kd = 1.0
    alpha = 0.2
    beta0 = 0.8
    mode = variable             ; none | fixed | variable
    gain_floor = 0.0
    u_min = 0.0                 ; leave both empty for no saturation
    u_max = 1.0
    control_period = 0.1
    substeps = 10
    error_signal = setpoint     ; setpoint | plant

    [setpoint]
    values = 0.85, 0.88, 0.82
    durations = 25, 25, 25
    horizon =                   ; control steps; empty = whole profile

    [disturbance]
    kind = additive_output      ; none | additive_output | parameter_step
    onset = 25.0                ; simulation time
    magnitude = 0.1             ; offset, or new parameter value
    target =                    ; parameter name for parameter_step

    [margin]
    grid_points = 200
    decades = 3.0
    refine = true
    cadence = 1                 ; recompute every n control steps
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .controller import AdaptationConfig, AdaptationMode, PidGains
from .margin import FrequencyGrid
from .neural_model import ExcitationSpec, NarxSpec
from .plant_sim import (
    DisturbanceSpec,
    IsothermalCstr,
    IsothermalCstrParams,
    NonisothermalCstr,
    NonisothermalCstrParams,
)

PLANTS = ("isothermal", "nonisothermal")


@dataclass(frozen=True)
class IdentificationConfig:
    output_lags: int = 1
    input_lags: int = 1
    aux_states: int = 0
    hidden_count: int = 6
    epochs: int = 4000
    lr: float = 0.1
    seed: int = 0
    u_lo: float = 0.0
    u_hi: float = 1.0
    hold_min: int = 5
    hold_max: int = 50
    samples: int = 4000


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 0.5
    ki: float = 0.2
    kd: float = 1.0
    alpha: float = 0.2
    beta0: float = 0.8
    mode: str = "variable"
    gain_floor: float = 0.0
    u_min: Optional[float] = 0.0
    u_max: Optional[float] = 1.0
    control_period: float = 0.1
    substeps: int = 10
    error_signal: str = "setpoint"


@dataclass(frozen=True)
class SetpointConfig:
    values: tuple[float, ...] = (0.85, 0.88, 0.82)
    durations: tuple[float, ...] = (25.0, 25.0, 25.0)
    horizon: Optional[int] = None


@dataclass(frozen=True)
class DisturbanceConfig:
    kind: str = "additive_output"
    onset: float = 25.0
    magnitude: float = 0.1
    target: Optional[str] = None


@dataclass(frozen=True)
class MarginConfig:
    grid_points: int = 200
    decades: float = 3.0
    refine: bool = True
    cadence: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    plant: str = "isothermal"
    plant_params: dict = field(default_factory=dict)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    setpoint: SetpointConfig = field(default_factory=SetpointConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    margin: MarginConfig = field(default_factory=MarginConfig)
    output_dir: str = "runs"

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ValueError(f"plant must be one of {PLANTS}, got {self.plant!r}")
        sp = self.setpoint
        if len(sp.values) != len(sp.durations) or not sp.values:
            raise ValueError("setpoint values and durations must be nonempty and of equal length")
        if any(d <= 0 for d in sp.durations):
            raise ValueError("setpoint segment durations must be positive")
        if sp.horizon is not None and sp.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.disturbance.kind not in ("none", "additive_output", "parameter_step"):
            raise ValueError(f"unknown disturbance kind {self.disturbance.kind!r}")
        if self.margin.cadence < 1:
            raise ValueError("margin cadence must be >= 1")
        if self.controller.substeps < 1:
            raise ValueError("substeps must be >= 1")
        # building the derived objects runs their own validation
        self.build_plant()
        self.narx_spec()
        self.excitation()
        self.initial_gains()
        self.adaptation()
        self.disturbance_spec()
        self.grid()

    # -- derived objects -----------------------------------------------------

    @property
    def T(self) -> float:
        return self.controller.control_period

    @property
    def horizon(self) -> int:
        if self.setpoint.horizon is not None:
            return self.setpoint.horizon
        return int(round(sum(self.setpoint.durations) / self.T))

    def build_plant(self):
        if self.plant == "isothermal":
            return IsothermalCstr(IsothermalCstrParams(**self.plant_params))
        return NonisothermalCstr(NonisothermalCstrParams(**self.plant_params))

    def narx_spec(self) -> NarxSpec:
        i = self.identification
        return NarxSpec(i.output_lags, i.input_lags, i.aux_states)

    def excitation(self) -> ExcitationSpec:
        i = self.identification
        return ExcitationSpec(i.u_lo, i.u_hi, self.T, i.hold_min, i.hold_max, i.samples, self.controller.substeps)

    def initial_gains(self) -> PidGains:
        c = self.controller
        return PidGains(c.kp, c.ki, c.kd)

    def adaptation(self) -> AdaptationConfig:
        c = self.controller
        limits = None if c.u_min is None or c.u_max is None else (c.u_min, c.u_max)
        return AdaptationConfig(c.alpha, c.beta0, AdaptationMode(c.mode), c.gain_floor, limits, c.error_signal)

    def disturbance_spec(self) -> Optional[DisturbanceSpec]:
        d = self.disturbance
        if d.kind == "none":
            return None
        return DisturbanceSpec(d.kind, d.onset, d.magnitude, d.target)

    def grid(self) -> FrequencyGrid:
        return FrequencyGrid.default(self.T, self.margin.grid_points, self.margin.decades)

    def setpoint_at(self, k: int) -> float:
        """Piecewise-constant profile; the last value is held past its end."""
        t = k * self.T
        edge = 0.0
        for value, duration in zip(self.setpoint.values, self.setpoint.durations):
            edge += duration
            if t < edge - 1e-9:
                return value
        return self.setpoint.values[-1]

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return replace(self, controller=replace(self.controller, mode=AdaptationMode(mode).value))

    def identification_key(self) -> str:
        """Hash of everything the identified model depends on."""
        payload = {
            "plant": self.plant,
            "plant_params": dict(sorted(self.plant_params.items())),
            "identification": dataclasses.asdict(self.identification),
            "T": self.T,
            "substeps": self.controller.substeps,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def default_config(plant: str = "isothermal") -> ExperimentConfig:
    """Benchmark defaults for either reactor."""
    if plant == "isothermal":
        return ExperimentConfig()
    if plant != "nonisothermal":
        raise ValueError(f"unknown plant {plant!r}")
    T = 0.05
    da = NonisothermalCstrParams().damkohler
    return ExperimentConfig(
        plant="nonisothermal",
        identification=IdentificationConfig(
            aux_states=1, hidden_count=10, epochs=8000, u_lo=-2.0, u_hi=2.0, hold_min=1, hold_max=20
        ),
        controller=ControllerConfig(
            kp=7.5, ki=2.5, kd=1.0, alpha=0.1, beta0=0.9, u_min=None, u_max=None, control_period=T
        ),
        setpoint=SetpointConfig(values=(6.1, 6.4, 5.8), durations=(20.0, 20.0, 20.0)),
        # 0.72 -> 0.9 is a 1.25x step, applied to the nominal Damkohler number
        disturbance=DisturbanceConfig(
            kind="parameter_step", onset=8 * T, magnitude=1.25 * da, target="damkohler"
        ),
    )


_SECTIONS = {
    "identification": IdentificationConfig,
    "controller": ControllerConfig,
    "setpoint": SetpointConfig,
    "disturbance": DisturbanceConfig,
    "margin": MarginConfig,
}


def _coerce(raw: str, name: str, cls) -> Any:
    ftype = {f.name: f.type for f in fields(cls)}[name]
    raw = raw.strip()
    if "Optional" in str(ftype) and raw in ("", "none", "None"):
        return None
    if "tuple" in str(ftype):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if "bool" in str(ftype):
        return raw.lower() in ("1", "true", "yes", "on")
    if "int" in str(ftype):
        return int(raw)
    if "float" in str(ftype):
        return float(raw)
    return raw


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(text)
    plant = parser.get("experiment", "plant", fallback=None)
    if base is None:
        base = default_config(plant or "isothermal")
    elif plant and plant != base.plant:
        base = default_config(plant)
    updates: dict[str, Any] = {}
    if parser.has_option("experiment", "output_dir"):
        updates["output_dir"] = parser.get("experiment", "output_dir")
    if parser.has_section("plant"):
        updates["plant_params"] = {k: float(v) for k, v in parser.items("plant")}
    for section, cls in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        current = getattr(base, section)
        known = {f.name for f in fields(cls)}
        changes = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            changes[key] = _coerce(raw, key, cls)
        updates[section] = replace(current, **changes)
    return replace(base, **updates)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _ini_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Full config as INI text; parse_config(dump_config(c)) == c."""
    lines = ["[experiment]", f"plant = {cfg.plant}", f"output_dir = {cfg.output_dir}", ""]
    if cfg.plant_params:
        lines.append("[plant]")
        lines += [f"{k} = {_ini_value(float(v))}" for k, v in sorted(cfg.plant_params.items())]
        lines.append("")
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        lines += [f"{f.name} = {_ini_value(getattr(obj, f.name))}" for f in fields(obj)]
        lines.append("")
    return "\n".join(lines)
