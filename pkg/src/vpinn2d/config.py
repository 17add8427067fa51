"""YAML run configuration.

Every section is a strict pydantic model: unknown keys are errors, reported
with the offending key path and its line in the source file. The effective
configuration (defaults included) is what ``RunConfig.model_dump()`` returns
and is echoed verbatim into the run report.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .problems import LIBRARY

SCHEMA_PATH = Path(__file__).with_name("data") / "config.schema.json"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FieldRef(StrictModel):
    """A named analytic field from the built-in library plus its parameters."""

    name: str
    params: dict[str, float] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in LIBRARY:
            raise ValueError(f"unknown field {v!r}; known: {', '.join(sorted(LIBRARY))}")
        return v


class PdeSection(StrictModel):
    mode: Literal["poisson", "cd2d", "cd2d_variable_eps"] = "poisson"
    eps: float = Field(1.0, gt=0)
    b: tuple[float, float] = (0.0, 0.0)


class RectangleDomain(StrictModel):
    kind: Literal["rectangle"] = "rectangle"
    nx: int = Field(2, ge=1)
    ny: int = Field(2, ge=1)
    x_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (0.0, 1.0)

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.x_range[0] < self.x_range[1] and self.y_range[0] < self.y_range[1]):
            raise ValueError("ranges must be increasing")
        return self


class GmshDomain(StrictModel):
    kind: Literal["gmsh"]
    path: str = Field(description="MSH 2.2/4.1 ASCII file, or 'bundled:<name>' for a packaged mesh")


class SensorSection(StrictModel):
    count: int = Field(50, ge=1)
    seed: int = 0
    source: Optional[FieldRef] = Field(None, description="defaults to problem.exact_solution")


class ProblemSection(StrictModel):
    pde: PdeSection = Field(default_factory=PdeSection)
    forcing: FieldRef
    exact_solution: Optional[FieldRef] = None
    boundary_g: Optional[FieldRef] = Field(None, description="defaults to exact_solution, else zero")
    domain: Union[RectangleDomain, GmshDomain] = Field(default_factory=RectangleDomain, discriminator="kind")
    n_boundary_points: int = Field(1000, ge=1)
    boundary_seed: Optional[int] = Field(None, description="null: evenly spaced by arc length")
    sensors: Optional[SensorSection] = None


class DiscretizationSection(StrictModel):
    n_test: int = Field(5, ge=1, description="test functions per direction")
    n_quad: int = Field(40, ge=2, description="quadrature points per direction")
    quadrature: Literal["gauss_legendre", "gauss_lobatto"] = "gauss_legendre"


class NetworkSection(StrictModel):
    layers: list[int] = Field(default_factory=lambda: [2, 30, 30, 30, 1])
    activation: Literal["tanh", "sigmoid"] = "tanh"

    @field_validator("layers")
    @classmethod
    def _shape(cls, v):
        if len(v) < 3 or v[0] != 2 or min(v) < 1:
            raise ValueError("layers must look like [2, hidden..., out] with at least one hidden layer")
        return v


class InverseSection(StrictModel):
    mode: Literal["constant", "spatial"] = "constant"
    eps_init: float = Field(2.0, gt=0)
    eps_actual: Optional[float] = Field(None, description="known answer; enables validation-mode early stop")
    eps_tol: float = Field(1e-3, gt=0)
    eps_field: Optional[FieldRef] = Field(None, description="reference eps(x, y) for spatial-mode metrics")


class TrainingSection(StrictModel):
    method: Literal["vpinn", "pinn"] = "vpinn"
    iterations: int = Field(1000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    lr_schedule: Literal["constant", "exponential"] = "constant"
    decay: float = Field(1.0, gt=0, le=1)
    decay_every: int = Field(1000, ge=1)
    tau: float = Field(10.0, ge=0)
    gamma: float = Field(10.0, ge=0)
    seed: int = 0
    precision: Literal["double", "single"] = "double"
    log_every: int = Field(10, ge=1)
    timing_window: int = Field(1000, ge=1)
    loss_tol: Optional[float] = None
    plateau_window: int = Field(2000, ge=1)
    n_collocation: int = Field(4096, ge=1, description="pinn method: interior collocation points")


class MetricsSection(StrictModel):
    grid: int = Field(100, ge=2)


class OutputSection(StrictModel):
    heatmap: Literal["none", "ppm", "svg"] = "ppm"
    save_checkpoint: bool = True


class RunConfig(StrictModel):
    problem: ProblemSection
    discretization: DiscretizationSection = Field(default_factory=DiscretizationSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    inverse: Optional[InverseSection] = None
    training: TrainingSection = Field(default_factory=TrainingSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _consistent(self):
        pde = self.problem.pde
        if pde.mode == "poisson" and (pde.eps != 1.0 or tuple(pde.b) != (0.0, 0.0)):
            raise ValueError("problem.pde: poisson mode requires eps = 1 and b = [0, 0]")
        if self.inverse is not None:
            if self.inverse.mode == "spatial" and pde.mode != "cd2d_variable_eps":
                raise ValueError("inverse.mode 'spatial' needs problem.pde.mode 'cd2d_variable_eps'")
            if self.inverse.mode == "constant" and pde.mode == "cd2d_variable_eps":
                raise ValueError("inverse.mode 'constant' needs a constant-eps pde mode")
        if pde.mode == "cd2d_variable_eps" and self.inverse is None:
            raise ValueError("cd2d_variable_eps is only solvable as an inverse problem (inverse section)")
        out = self.network.layers[-1]
        want = 2 if pde.mode == "cd2d_variable_eps" else 1
        if out != want:
            raise ValueError(f"network.layers must end in {want} for pde mode {pde.mode!r}")
        if self.training.method == "pinn" and self.inverse is not None:
            raise ValueError("the pinn baseline supports forward problems only")
        return self

    def with_overrides(self, seed=None, precision=None) -> "RunConfig":
        data = self.model_dump()
        if seed is not None:
            data["training"]["seed"] = int(seed)
        if precision is not None:
            data["training"]["precision"] = precision
        return RunConfig.model_validate(data)


# -- loading ---------------------------------------------------------------------


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines using the composed YAML tree."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _describe(exc: ValidationError, lines: dict, source: str) -> str:
    msgs = []
    for err in exc.errors():
        # drop union-branch tags pydantic inserts into locations
        loc = tuple(p for p in err["loc"] if p not in ("rectangle", "gmsh"))
        dotted = ".".join(str(p) for p in loc) or "<root>"
        probe = loc
        while probe and probe not in lines:
            probe = probe[:-1]
        where = f"{source}:{lines[probe]}" if probe in lines else source
        if err["type"] == "extra_forbidden":
            msgs.append(f"{where}: unknown key '{dotted}'")
        else:
            msgs.append(f"{where}: {dotted}: {err['msg']}")
    return "; ".join(msgs)


def parse_yaml_model(text: str, model, source: str = "<config>"):
    """Validate YAML text against a strict model, errors carrying key and line."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _line_index(node) if node is not None else {}
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc, lines, source)) from None


def read_text(path) -> str:
    path = Path(path)
    try:
        return path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    return parse_yaml_model(text, RunConfig, source)


def load_config(path) -> RunConfig:
    return parse_config_text(read_text(path), str(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def config_schema() -> dict:
    return RunConfig.model_json_schema()


def schema_text() -> str:
    return json.dumps(config_schema(), indent=2, sort_keys=True) + "\n"


def default_forward_config(omega: float = 2 * math.pi) -> RunConfig:
    """The 2x2-element, 40x40-quadrature sine problem."""
    ref = {"name": "sin_exact", "params": {"omega": omega}}
    return RunConfig.model_validate({
        "problem": {
            "forcing": {"name": "sin_forcing", "params": {"omega": omega}},
            "exact_solution": ref,
        },
        "discretization": {"n_test": 15, "n_quad": 40},
    })
