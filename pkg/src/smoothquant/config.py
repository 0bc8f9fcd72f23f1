"""JSON run configuration for the command line pipeline.

Unknown keys are rejected at every nesting level so that a typo cannot
silently fall back to a default.
"""

import json
import os
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .calib import DEFAULT_GRID, parse_grid
from .exceptions import ConfigurationError, SmoothQuantError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OutlierConfig(_Strict):
    fraction: float = Field(0.01, ge=0.0, le=1.0)
    scale: float = Field(100.0, gt=0.0)
    seed: Optional[int] = Field(None, ge=0)


class ModelConfig(_Strict):
    seed: Optional[int] = Field(None, ge=0)
    n_blocks: int = Field(2, ge=1)
    width: int = Field(128, ge=1)
    heads: int = Field(4, ge=1)
    ffn_mult: int = Field(4, ge=1)
    weight_std: float = Field(0.02, gt=0.0)
    outlier: Optional[OutlierConfig] = OutlierConfig()


class SampleConfig(_Strict):
    samples: int = Field(512, ge=1)
    seq_len: int = Field(32, ge=1)
    seed: Optional[int] = Field(None, ge=0)


class OutputConfig(_Strict):
    calib: str = "calib.sqtc"
    plan: str = "plan.sqtc"
    quantized: str = "quantized.sqtc"
    report: Optional[str] = None


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    model: Optional[ModelConfig] = None
    model_path: Optional[str] = None
    level: Literal["O1", "O2", "O3"] = "O3"
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    grid: Optional[Union[str, List[float]]] = None
    clip_fraction: float = Field(0.0, ge=0.0, lt=0.5)
    calibration: SampleConfig = SampleConfig()
    evaluation: SampleConfig = SampleConfig(samples=16)
    outputs: OutputConfig = OutputConfig()

    @field_validator("grid")
    @classmethod
    def _grid_ok(cls, v):
        if v is not None:
            _grid(v)
        return v

    @model_validator(mode="after")
    def _one_model_source(self):
        if self.model is not None and self.model_path is not None:
            raise ValueError("give either model or model_path, not both")
        return self

    def model_spec(self):
        return self.model if self.model is not None else ModelConfig()

    def grid_values(self):
        return list(DEFAULT_GRID) if self.grid is None else _grid(self.grid)

    def model_seed(self):
        spec = self.model_spec()
        return self.seed if spec.seed is None else spec.seed

    def sample_seed(self, which):
        sc = getattr(self, which)
        if sc.seed is not None:
            return sc.seed
        return self.seed if which == "calibration" else self.seed + 1

    def override(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return validate_config({**self.model_dump(exclude_unset=True), **changes})


def _grid(v):
    try:
        values = parse_grid(v) if isinstance(v, str) else [float(a) for a in v]
    except SmoothQuantError as exc:
        raise ValueError(str(exc)) from None
    if not values or any(not 0.0 <= a <= 1.0 for a in values):
        raise ValueError("grid values must lie in [0, 1]")
    return values


def validate_config(data):
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run config: {exc}") from None


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    return validate_config(data)
