"""Run configuration: YAML files validated into pydantic models; unknown keys are errors."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import nonlinear


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemConfig(_Strict):
    kind: Literal["adr", "heat", "scalar_linear"] = "adr"
    diffusion: Literal["time_dependent", "constant"] = "time_dependent"
    velocity: Literal["cellular", "uniform", "none", "file"] = "cellular"
    velocity_file: Optional[str] = None
    nonlinearity: str = "saturating"
    initial: Literal["zero", "smooth", "rough"] = "zero"
    gaarding_shift: float = Field(0.0, ge=0.0)
    mass_lumping: bool = False

    @field_validator("nonlinearity")
    @classmethod
    def _known_nonlinearity(cls, v):
        nonlinear.by_name(v)
        return v

    @model_validator(mode="after")
    def _velocity_file(self):
        if self.velocity == "file" and not self.velocity_file:
            raise ValueError("velocity 'file' requires velocity_file")
        return self


class MeshConfig(_Strict):
    nx: int = Field(32, ge=1)
    ny: Optional[int] = Field(None, ge=1)
    L1: float = Field(1.0, gt=0)
    L2: float = Field(1.0, gt=0)


class ReferenceConfig(_Strict):
    mode: Literal["fine_step", "oracle", "exact"] = "fine_step"
    M: int = Field(4096, ge=1)
    tol: float = Field(1e-12, gt=0)


class OutputConfig(_Strict):
    dir: str = "magros_out"
    vtk: bool = False


class RunConfig(_Strict):
    study: Literal["single", "temporal", "spatial", "scheme_comparison", "initial_data"] = "single"
    problem: ProblemConfig = ProblemConfig()
    mesh: MeshConfig = MeshConfig()
    scheme: Literal["magros", "exprb2", "reference"] = "magros"
    T: float = Field(1.0, gt=0)
    M: int = Field(64, ge=1)
    sweep: List[int] = [16, 32, 64, 128, 256, 512]
    mesh_sweep: List[int] = [8, 16, 32, 64]
    initials: List[Literal["zero", "smooth", "rough"]] = ["smooth", "rough"]
    reference: ReferenceConfig = ReferenceConfig()
    krylov_tol: float = Field(1e-10, gt=0, lt=1)
    krylov_max_dim: int = Field(100, ge=2)
    stability_R: Optional[float] = Field(None, gt=0)
    snapshot_times: List[float] = []
    threads: int = Field(1, ge=1)
    preflight: bool = False
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _consistent(self):
        for name in ("sweep", "mesh_sweep"):
            vals = getattr(self, name)
            if not vals or any(v < 1 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be a non-empty, strictly increasing list of positive integers")
        if self.study in ("temporal", "scheme_comparison", "initial_data") and self.reference.mode == "fine_step":
            if self.reference.M <= self.sweep[-1]:
                raise ValueError("reference.M must exceed every value in sweep")
        if self.study == "spatial" and self.problem.kind != "heat":
            raise ValueError("spatial study needs a problem with an exact solution (kind: heat)")
        if self.scheme == "exprb2" and self.problem.kind == "adr" and self.problem.diffusion != "constant":
            raise ValueError("exprb2 needs a time-independent operator (problem.diffusion: constant)")
        return self


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def bundled_names() -> list:
    root = resources.files("magros") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_text(name: str) -> str:
    path = resources.files("magros") / "configs" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}; available: {', '.join(bundled_names())}")
    return path.read_text()


def parse(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(path_or_name: str) -> RunConfig:
    """Load a YAML file, or a bundled config by name when no such file exists."""
    p = Path(path_or_name)
    if p.is_file():
        return parse(p.read_text(), str(p))
    if p.suffix in (".yaml", ".yml") or "/" in path_or_name:
        raise ConfigError(f"config file {path_or_name!r} not found")
    return parse(bundled_text(path_or_name), f"bundled:{path_or_name}")


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
