"""Experiment configuration files (TOML) and their validation.

A configuration has three tables: ``[model]`` (the radical pair),
``[run]`` (shared run settings plus one sub-table per subcommand) and
``[output]``.  Unknown keys are rejected.  See ``docs/config.md`` for the
full grammar.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .model import (
    DephasingSpec,
    HyperfineTensor,
    NucleusSpec,
    RadicalPairModel,
    omega_from_field,
)


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NucleusConfig(_Strict):
    spin: float = 0.5
    electron: Literal[1, 2] = 2
    axial: Optional[float] = None
    axial_over_B: Optional[float] = None
    diagonal: Optional[List[float]] = Field(None, min_length=3, max_length=3)
    tensor: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _one_coupling(self):
        given = [k for k in ("axial", "axial_over_B", "diagonal", "tensor") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError(f"give exactly one of axial, axial_over_B, diagonal, tensor (got {given or 'none'})")
        if self.tensor is not None and (len(self.tensor) != 3 or any(len(r) != 3 for r in self.tensor)):
            raise ValueError("tensor must be a 3x3 array")
        return self

    def to_spec(self, omega_B: float) -> NucleusSpec:
        if self.axial is not None:
            t = HyperfineTensor.axial(self.axial, self.electron)
        elif self.axial_over_B is not None:
            t = HyperfineTensor.axial(self.axial_over_B * omega_B, self.electron)
        elif self.diagonal is not None:
            t = HyperfineTensor.diagonal(*self.diagonal, electron=self.electron)
        else:
            t = HyperfineTensor(tuple(map(tuple, self.tensor)), self.electron)
        return NucleusSpec(t, self.spin)


class DephasingConfig(_Strict):
    gamma: float = Field(0.0, ge=0)
    d: float = 0.0


class ModelConfig(_Strict):
    B_uT: float = Field(46.0, ge=0)
    k_per_us: float = Field(0.5, gt=0)
    nuclei: List[NucleusConfig] = Field(default_factory=lambda: [NucleusConfig(axial_over_B=1 / 3)])
    dephasing: DephasingConfig = DephasingConfig()

    def build(self) -> RadicalPairModel:
        w = omega_from_field(self.B_uT)
        nuclei = tuple(n.to_spec(w) for n in self.nuclei)
        return RadicalPairModel(self.B_uT, self.k_per_us, nuclei,
                                DephasingSpec(self.dephasing.gamma, self.dephasing.d))


class OptimizerConfig(_Strict):
    max_evaluations: int = Field(1500, ge=1)
    restarts: int = Field(2, ge=0)
    initial_step: float = Field(0.05, gt=0)
    jitter: float = Field(0.1, gt=0)


class ControlConfig(_Strict):
    template: Literal["harmonic", "piecewise"] = "harmonic"
    components: int = Field(2, ge=1)
    c_max_uT: float = Field(1000.0, ge=0)
    omega_max: float = Field(50.0, gt=0)
    duration_us: Optional[float] = Field(None, gt=0)
    polar_offset: float = 0.0
    n_theta: int = Field(13, ge=9)
    n_starts: int = Field(32, ge=0)
    n_polish: int = Field(4, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig(restarts=1)


class Fig1Config(_Strict):
    ratio_min: float = Field(0.02, gt=0)
    ratio_max: float = Field(50.0, gt=0)
    points: int = Field(60, ge=2)
    contour: bool = False
    contour_ratios: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.33, 0.5, 1.0, 2.0, 5.0, 10.0])
    contour_B_uT: List[float] = Field(default_factory=lambda: [4.6, 10.0, 23.0, 46.0, 92.0])
    lifetimes_us: List[float] = Field(default_factory=list)
    lifetime_B_uT: float = Field(4.6, gt=0)


class Fig2Config(_Strict):
    control: ControlConfig = ControlConfig()
    trace_t_end_us: Optional[float] = Field(None, gt=0)
    trace_dt_us: float = Field(0.02, gt=0)


class Fig3Config(_Strict):
    gamma_min: float = Field(0.0, ge=0)
    gamma_max: float = Field(4.0, ge=0)
    points: int = Field(17, ge=2)
    d_values: List[float] = Field(default_factory=lambda: [0.0, 0.8, 1.0, -1.0])
    curve_gammas: List[float] = Field(default_factory=lambda: [0.0, 0.5, 2.0])
    curve_d: float = 0.0


class OptimizeConfig(_Strict):
    target: Literal["hyperfine", "control"] = "hyperfine"
    n_nuclei: int = Field(1, ge=1, le=3)
    tensor_form: Literal["axial", "diagonal"] = "axial"
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    grid: int = Field(31, ge=9)
    optimizer: OptimizerConfig = OptimizerConfig(max_evaluations=600, restarts=2, initial_step=0.1)
    control: ControlConfig = ControlConfig()


class SweepConfig(_Strict):
    parameter: Literal["a", "a_over_B", "B", "k", "tau", "gamma", "d"] = "a_over_B"
    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    points: int = Field(60, ge=1)
    spacing: Literal["linear", "log"] = "log"

    @model_validator(mode="after")
    def _values_or_range(self):
        if self.values is None and (self.start is None or self.stop is None):
            raise ValueError("give either values or start and stop")
        if self.spacing == "log" and self.values is None and (self.start <= 0 or self.stop <= 0):
            raise ValueError("log spacing needs positive start and stop")
        return self

    def resolved_values(self) -> list:
        import numpy as np

        if self.values is not None:
            return list(self.values)
        space = np.geomspace if self.spacing == "log" else np.linspace
        return [float(v) for v in space(self.start, self.stop, self.points)]


class RunConfig(_Strict):
    grid: int = Field(91, ge=9)
    full_theta: bool = False
    seed: int = 1
    jobs: int = Field(1, ge=1)
    method: Literal["auto", "analytic", "resolvent"] = "auto"
    fig1: Fig1Config = Fig1Config()
    fig2: Fig2Config = Fig2Config()
    fig3: Fig3Config = Fig3Config()
    optimize: OptimizeConfig = OptimizeConfig()
    sweep: SweepConfig = SweepConfig(start=0.02, stop=50.0)


class OutputConfig(_Strict):
    dir: str = "out"
    precision: int = Field(17, ge=1, le=17)


class ExperimentConfig(_Strict):
    model: ModelConfig = ModelConfig()
    run: RunConfig = RunConfig()
    output: OutputConfig = OutputConfig()

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, **run_updates) -> "ExperimentConfig":
        """Copy with top-level ``run`` or ``output`` keys replaced (``None`` skipped)."""
        data = self.to_dict()
        for key, value in run_updates.items():
            if value is None:
                continue
            if key == "out":
                data["output"]["dir"] = value
            else:
                data["run"][key] = value
        return parse_config(data)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
        cfg.model.build()
    except ValidationError as err:
        raise ConfigError(f"invalid configuration: {_format_errors(err)}") from None
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid configuration: {err}") from None
    return cfg


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"cannot parse configuration: {err}") from None
    return parse_config(data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from None
    return loads_config(text)


HEADER_CONFIG_PREFIX = "# config| "


def config_from_header(path) -> ExperimentConfig:
    """Recover the resolved configuration echoed into a result file header."""
    lines = []
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if line.startswith(HEADER_CONFIG_PREFIX):
                lines.append(line[len(HEADER_CONFIG_PREFIX):])
    if not lines:
        raise ConfigError(f"{path} carries no configuration header")
    return loads_config("".join(lines))
