"""TOML experiment configuration (see ``docs/config.md`` for the annotated schema)."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "RANDOMIZED_KINDS"]

RANDOMIZED_KINDS = {"translation", "rotation_coboundary", "random_bounded"}
U64 = 1 << 64


class ConfigError(ValueError):
    """Unreadable or invalid configuration; the message lists field paths."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceConfig(_Strict):
    kind: Literal["euclidean", "hyperbolic", "spd"]
    dim: int = Field(2, ge=1)
    kappa: Optional[float] = None


class BaseConfig(_Strict):
    kind: Literal["cyclic", "map", "torus"] = "cyclic"
    size: Optional[int] = Field(None, ge=1)
    successor: Optional[list[int]] = None
    shape: Optional[list[int]] = None

    @model_validator(mode="after")
    def _needs(self) -> "BaseConfig":
        if self.kind == "cyclic" and self.size is None:
            raise ValueError("cyclic base needs 'size'")
        if self.kind == "map" and self.successor is None:
            raise ValueError("map base needs 'successor'")
        if self.kind == "torus" and not self.shape:
            raise ValueError("torus base needs 'shape'")
        return self


class CocycleConfig(_Strict):
    kind: Literal["identity", "constant", "translation", "rotation_coboundary", "random_bounded", "from_file"]
    seed: Optional[int] = Field(None, ge=0, lt=U64)
    scale: float = Field(0.5, gt=0)
    mean: Optional[list[float]] = None
    means: Optional[list[list[float]]] = None
    matrix: Optional[list[list[float]]] = None
    shift: Optional[list[float]] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _needs(self) -> "CocycleConfig":
        if self.kind in RANDOMIZED_KINDS and self.seed is None:
            raise ValueError(f"cocycle kind '{self.kind}' is randomized and needs 'seed'")
        if self.kind == "constant" and self.matrix is None:
            raise ValueError("constant cocycle needs 'matrix'")
        if self.kind == "from_file" and self.path is None:
            raise ValueError("from_file cocycle needs 'path'")
        return self


class SweepConfig(_Strict):
    N: list[int] = Field(min_length=1)
    k: Optional[list[int]] = None

    @field_validator("N")
    @classmethod
    def _increasing(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v):
            raise ValueError("sweep entries must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep must be strictly increasing")
        return v

    @field_validator("k")
    @classmethod
    def _levels(cls, v: Optional[list[int]]) -> Optional[list[int]]:
        if v is not None and any(k < 0 for k in v):
            raise ValueError("dyadic levels must be nonnegative")
        return v


class Tolerances(_Strict):
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(10_000, ge=1)
    step: float = Field(0.5, gt=0, le=1)
    contract_slack: float = Field(1e-6, ge=0)
    dyadic_slack: float = Field(1e-9, ge=0)
    invariance: float = Field(1e-7, ge=0)
    stabilizer: float = Field(1e-7, ge=0)
    orthogonality: Optional[float] = Field(None, ge=0)
    cond_cap: float = Field(1e12, gt=1)


class ZdConfig(_Strict):
    family: Literal["cube", "l1ball"] = "cube"


class VerifyConfig(_Strict):
    trials: int = Field(10_000, ge=100)


class OutputConfig(_Strict):
    dir: str = "out"
    formats: list[Literal["json", "csv"]] = ["json", "csv"]


class ExperimentConfig(_Strict):
    space: SpaceConfig
    base: BaseConfig
    cocycle: CocycleConfig
    sweep: SweepConfig
    tolerances: Tolerances = Tolerances()
    zd: ZdConfig = ZdConfig()
    verify: VerifyConfig = VerifyConfig()
    output: OutputConfig = OutputConfig()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return parse_config(data)
