import json
import math
import hashlib
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import settings
from src.services.simulator import SimConfig
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

Command = Literal["analyze", "simulate", "sweep", "oracle"]

PLAN_KEYS = {"command", "name", "seeds", "seed", "output_dir", "workers"}
SWEEP_KEYS = {"sweep_parameter": "parameter", "sweep_values": "values"}
ORACLE_PREFIX = "oracle_"
CURVE_PREFIX = "curve_"
SECTIONS = {"base", "sweep_axis", "oracle", "curves"}


class SweepAxis(BaseModel):
    """One SimConfig parameter varied over a list of values"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    parameter: str
    values: list[Union[int, float, str]] = Field(..., min_length=1)

    @field_validator("parameter")
    @classmethod
    def known_parameter(cls, value: str) -> str:
        aliases = {f.alias for f in SimConfig.model_fields.values() if f.alias}
        if value not in SimConfig.model_fields and value not in aliases:
            raise ValueError(f"Unknown sweep parameter '{value}'")
        if value == "seed":
            raise ValueError("Sweep seeds through 'seeds', not the sweep axis")
        return value


class OracleSpec(BaseModel):
    """
    Monte Carlo estimator grid.

    Every combination of ns x deltas x (distances x areas for meeting,
    steps for populated and pbeta) is estimated once.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    estimator: Literal["meeting", "populated", "pbeta"]
    ns: list[int] = Field(..., min_length=1)
    deltas: list[float] = Field(..., min_length=1)
    distances: list[float] = Field(default_factory=list)
    areas: list[float] = Field(default_factory=list)
    steps: list[int] = Field(default_factory=lambda: [0])
    area_scale: float = Field(1.0, gt=0, description="Multiplier on the scheduling squarelet area")
    area_constant: float = Field(1.0, gt=0)
    z0_constant: float = Field(1.0, gt=0)
    trials: int = Field(10_000, gt=0)
    instances: int = Field(100, gt=0)
    slots: int = Field(100, gt=0)

    @model_validator(mode="after")
    def check_grid(self) -> "OracleSpec":
        if any(n < 4 for n in self.ns):
            raise ValueError(f"Oracle network sizes must be at least 4, got {self.ns}")
        if any(d < 0 for d in self.deltas):
            raise ValueError(f"Decay exponents must be non-negative, got {self.deltas}")
        if self.estimator == "meeting" and (not self.distances or not self.areas):
            raise ValueError("Meeting estimator needs 'distances' and 'areas'")
        for A in self.areas:
            for D in self.distances:
                if math.sqrt(A) >= D / 4.0:
                    raise ValueError(f"Meeting estimator needs sqrt(A) < D/4, got A={A}, D={D}")
        if self.distances and max(self.distances) > math.sqrt(min(self.ns)) / 2.0:
            raise ValueError(f"Distances must not exceed half the torus side sqrt(n)/2 for n={min(self.ns)}")
        if any(i < 0 for i in self.steps):
            raise ValueError(f"Steps must be non-negative, got {self.steps}")
        return self


class CurveGrid(BaseModel):
    """Delta and beta grids for the analyze command"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    delta_min: float = Field(0.0, ge=0)
    delta_max: float = Field(4.0, ge=0)
    delta_step: float = Field(0.1, gt=0)
    beta_min: float = Field(0.0, ge=0, le=0.5)
    beta_max: float = Field(0.5, ge=0, le=0.5)
    beta_step: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def check_bounds(self) -> "CurveGrid":
        if self.delta_min > self.delta_max:
            raise ValueError(f"delta_min {self.delta_min} exceeds delta_max {self.delta_max}")
        if self.beta_min > self.beta_max:
            raise ValueError(f"beta_min {self.beta_min} exceeds beta_max {self.beta_max}")
        return self

    @staticmethod
    def _grid(low: float, high: float, step: float) -> np.ndarray:
        count = int(round((high - low) / step)) + 1
        return np.round(np.linspace(low, low + (count - 1) * step, count), 10)

    @property
    def deltas(self) -> np.ndarray:
        return self._grid(self.delta_min, self.delta_max, self.delta_step)

    @property
    def betas(self) -> np.ndarray:
        return self._grid(self.beta_min, self.beta_max, self.beta_step)


class ExperimentPlan(BaseModel):
    """A validated experiment: command, base run, sweep, seeds and output location"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command
    name: str = Field("run", pattern=r"^[A-Za-z0-9_.-]+$")
    base: Optional[SimConfig] = None
    sweep_axis: Optional[SweepAxis] = None
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: str = Field(default_factory=lambda: settings.output_dir)
    workers: Optional[int] = Field(None, gt=0)
    oracle: Optional[OracleSpec] = None
    curves: CurveGrid = CurveGrid()

    @model_validator(mode="after")
    def check_plan(self) -> "ExperimentPlan":
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"Seeds must be distinct, got {self.seeds}")
        if any(s < 0 for s in self.seeds):
            raise ValueError(f"Seeds must be non-negative, got {self.seeds}")
        if self.command in ("simulate", "sweep") and self.base is None:
            raise ValueError(f"Command '{self.command}' needs run parameters (n, delta, slots, ...)")
        if self.command == "oracle" and self.oracle is None:
            raise ValueError("Command 'oracle' needs oracle_* parameters")
        if self.sweep_axis is not None and self.base is not None:
            # every derived config must validate
            self.run_configs()
        return self

    def _derive(self, value, seed: int) -> SimConfig:
        data = self.base.model_dump(by_alias=True)
        data["seed"] = seed
        if self.sweep_axis is not None:
            field = self.sweep_axis.parameter
            # lambda and load_fraction are exclusive
            if field in ("lambda", "lam"):
                data.pop("load_fraction", None)
                data["lambda"] = value
            elif field == "load_fraction":
                data.pop("lambda", None)
                data["load_fraction"] = value
            else:
                data[field] = value
        try:
            return SimConfig.model_validate(data)
        except ValidationError as e:
            axis = f"{self.sweep_axis.parameter}={value}, " if self.sweep_axis else ""
            raise ValueError(f"Invalid run ({axis}seed={seed}): {format_errors(e)}") from None

    def run_configs(self) -> list[tuple[str, Optional[object], int, SimConfig]]:
        """
        Every (sweep value x seed) run in a fixed order.

        Returns:
            (run_id, sweep value, seed, SimConfig) tuples
        """
        values = self.sweep_axis.values if self.sweep_axis else [None]
        runs = []
        for value in values:
            for seed in self.seeds:
                config = self._derive(value, seed)
                runs.append((run_id(self.name, config), value, seed, config))
        return runs


def run_id(name: str, config: SimConfig) -> str:
    """Stable run identifier: plan name plus a digest of the full run parameters."""
    payload = json.dumps(config.model_dump(by_alias=True, mode="json"), sort_keys=True)
    return f"{name}-{hashlib.sha1(payload.encode('utf-8')).hexdigest()[:12]}"


def format_errors(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = [str(p) for p in item["loc"]]
        # run parameters are flat keys in the file
        if loc[:1] == ["base"]:
            loc = loc[1:]
        loc = ".".join(loc) or "plan"
        msg = item["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def _nest(raw: dict) -> dict:
    """Map flat keys onto plan sections; nested tables pass through."""
    plan: dict = {}
    base: dict = dict(raw.get("base") or {})
    sweep: dict = dict(raw.get("sweep_axis") or {})
    oracle: dict = dict(raw.get("oracle") or {})
    curves: dict = dict(raw.get("curves") or {})

    for key, value in raw.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a table of parameters")
            continue
        if key in PLAN_KEYS:
            plan[key] = value
        elif key in SWEEP_KEYS:
            sweep[SWEEP_KEYS[key]] = value
        elif key.startswith(ORACLE_PREFIX):
            oracle[key[len(ORACLE_PREFIX):]] = value
        elif key.startswith(CURVE_PREFIX):
            curves[key[len(CURVE_PREFIX):]] = value
        else:
            base[key] = value

    if "seed" in plan:
        if "seeds" in plan:
            raise ConfigError("Set either 'seed' or 'seeds', not both")
        plan["seeds"] = [plan.pop("seed")]
    if base:
        plan["base"] = base
    if sweep:
        plan["sweep_axis"] = sweep
    if oracle:
        plan["oracle"] = oracle
    if curves:
        plan["curves"] = curves
    return plan


def parse_config(text: str, fmt: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentPlan:
    """
    Parse and validate an experiment configuration.

    The schema is flat: plan keys (command, name, seed/seeds, output_dir,
    workers), sweep_parameter/sweep_values, oracle_* and curve_* keys, and
    every other key is a run parameter. TOML is the default encoding; JSON
    with the same keys is accepted.

    Args:
        text: File content
        fmt: "toml" or "json"; detected from the content when omitted
        overrides: Flat keys applied on top of the file (CLI flags)

    Returns:
        Validated ExperimentPlan

    Raises:
        ConfigError: On syntax errors, unknown keys or invalid values
    """
    fmt = fmt or ("json" if text.lstrip().startswith("{") else "toml")
    try:
        raw = json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Malformed {fmt.upper()} configuration: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("Configuration must be a table of key/value pairs")

    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if key == "seeds":
            raw.pop("seed", None)
        raw[key] = value

    try:
        plan = ExperimentPlan.model_validate(_nest(raw))
    except ValidationError as e:
        raise ConfigError(format_errors(e)) from None
    except ValueError as e:
        raise ConfigError(str(e)) from None

    logger.info(f"Loaded plan '{plan.name}': command={plan.command} seeds={plan.seeds}")
    return plan


def load_plan(path: Path, overrides: Optional[dict] = None) -> ExperimentPlan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from None
    fmt = "json" if Path(path).suffix.lower() == ".json" else "toml"
    return parse_config(text, fmt=fmt, overrides=overrides)
