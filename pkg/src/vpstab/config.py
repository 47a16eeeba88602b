"""Declarative experiment configuration, validated with pydantic."""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

KINDS = ("none", "boost", "amplitude", "split-bulk", "random-phase")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SteadyConfig(_Strict):
    k: float = Field(gt=0.0, lt=1.5)
    M: float = Field(gt=0.0)


class PerturbationConfig(_Strict):
    kind: Literal["none", "boost", "amplitude", "split-bulk", "random-phase"] = "none"
    V: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    epsilon: float = Field(default=0.0, ge=0.0, lt=0.5)
    fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: Optional[int] = None

    @field_validator("fraction")
    @classmethod
    def _fraction_for_split(cls, v, info):
        if info.data.get("kind") == "split-bulk" and not 0.0 < v < 1.0:
            raise ValueError("split-bulk needs 0 < fraction < 1")
        return v


class IntegratorConfig(_Strict):
    dt: float = Field(gt=0.0, description="time step in units of T_dyn")
    softening: Optional[float] = Field(default=None, ge=0.0,
                                       description="absolute softening length; null = default")
    method: Literal["direct", "tree"] = "direct"
    theta: float = Field(default=0.5, gt=0.0, le=1.5)


class ShiftConfig(_Strict):
    bulk_fraction: float = Field(default=0.9, gt=0.0, le=1.0)
    xatol: float = Field(default=1e-7, gt=0.0, description="in units of R")
    fatol: float = Field(default=1e-13, gt=0.0)
    maxiter: int = Field(default=4000, ge=10)


class ExperimentConfig(_Strict):
    steady: SteadyConfig
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    integrator: IntegratorConfig
    N: int = Field(ge=100)
    seed: int = 0
    horizon_tdyn: float = Field(gt=0.0)
    cadence_tdyn: float = Field(gt=0.0)
    shift: ShiftConfig = Field(default_factory=ShiftConfig)
    concentration_radii: List[float] = Field(
        default_factory=lambda: [0.125, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0],
        description="ball radii in units of R")
    snapshot_every_tdyn: Optional[float] = Field(default=None, gt=0.0)
    d_reference: Literal["realization", "quadrature"] = "realization"
    output_dir: str = "run"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @field_validator("concentration_radii")
    @classmethod
    def _positive_radii(cls, v):
        if not v or any(r <= 0 for r in v):
            raise ValueError("radii must be a non-empty list of positive numbers")
        return v


def format_errors(exc: ValidationError):
    """One ``path: message`` line per offending field."""
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return lines


def parse_config(data):
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid experiment config:\n  " + "\n  ".join(format_errors(exc))) from exc


def load_config(path):
    """Read and validate a JSON experiment config."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(data)
