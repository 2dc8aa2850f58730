"""Experiment configuration: YAML file, dotted overrides, canonical hash."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .geometry import ImageGrid, ScanGeometry
from .pathseek import PathConfig
from .penalty import HuberPenalty
from .simulate import EllipsePhantom


class ConfigError(ValueError):
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhantomBlock(_Block):
    kind: Literal["water_cylinder", "abdomen", "file"] = "water_cylinder"
    path: Optional[str] = None
    radius: float = Field(160.0, gt=0)
    scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _path_exists(self):
        if self.kind == "file":
            if not self.path:
                raise ValueError("phantom.path is required when kind is 'file'")
            if not Path(self.path).is_file():
                raise ValueError(f"phantom file {self.path} does not exist")
        return self

    def build(self) -> EllipsePhantom:
        if self.kind == "water_cylinder":
            return EllipsePhantom.water_cylinder(self.radius)
        if self.kind == "abdomen":
            return EllipsePhantom.abdomen(self.scale)
        return EllipsePhantom.from_file(self.path)


class GeometryBlock(_Block):
    beam: Literal["parallel", "fan"] = "parallel"
    nx: int = Field(128, ge=1)
    ny: int = Field(128, ge=1)
    dx: float = Field(3.0, gt=0)
    dy: float = Field(3.0, gt=0)
    n_views: int = Field(180, ge=1)
    n_dets: Optional[int] = Field(None, ge=1)
    det_spacing: Optional[float] = Field(None, gt=0)
    source_to_iso: Optional[float] = Field(None, gt=0)
    source_to_det: Optional[float] = Field(None, gt=0)

    def grid(self) -> ImageGrid:
        return ImageGrid(self.nx, self.ny, self.dx, self.dy)

    def build(self) -> ScanGeometry:
        g = self.grid()
        if self.beam == "parallel":
            return ScanGeometry.parallel(g, self.n_views, self.n_dets, self.det_spacing)
        if None in (self.n_dets, self.det_spacing, self.source_to_iso, self.source_to_det):
            raise ValueError("fan beam needs n_dets, det_spacing, source_to_iso and source_to_det")
        return ScanGeometry.fan(g, self.n_views, self.n_dets, self.det_spacing,
                                self.source_to_iso, self.source_to_det)


class SimulationBlock(_Block):
    I0: float = Field(2e5, gt=0)
    seed: int = Field(1, ge=0)
    noiseless: bool = False


class PenaltyBlock(_Block):
    delta: float = Field(5.0, gt=0)
    neighborhood: Literal[4, 8] = 4

    def build(self) -> HuberPenalty:
        return HuberPenalty(self.delta, self.neighborhood)


class SolverBlock(_Block):
    algorithm: Literal["fbp", "sqs", "admm", "lbfgs"] = "lbfgs"
    beta: float = Field(6.3e-3, ge=0)
    n_iters: int = Field(300, ge=1)
    n_subsets: int = Field(1, ge=1)
    rho: float = Field(0.5, gt=0)
    n_inner: int = Field(2, ge=1)
    window: Literal["ramp", "hann"] = "ramp"


class PathBlock(_Block):
    engine: Literal["rog", "dog"] = "dog"
    beta1: float = Field(1e-3, ge=0)
    beta2: float = Field(4e-2, ge=0)
    n_frames: int = Field(20, ge=1)
    direction: Literal["increasing", "decreasing"] = "increasing"
    p: float = 0.2
    delta_v: float = 1.0
    n_opt: int = Field(2, ge=0)
    beta_ratio: float = 1.45
    n_subsets_ps: Optional[int] = Field(None, ge=1)
    n_subsets_opt: Optional[int] = Field(None, ge=1)
    rho: float = 0.5
    n_inner: int = 2
    advance_tol: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> PathConfig:
        return PathConfig(**self.model_dump(exclude={"engine"}))


class MetricsBlock(_Block):
    references: list[str] = []
    reference_betas: list[float] = []
    n_references: int = Field(5, ge=1)
    roi: Literal["full", "support"] = "full"
    strict: bool = True

    @field_validator("references")
    @classmethod
    def _refs_exist(cls, v):
        for p in v:
            if not Path(p).is_file():
                raise ValueError(f"reference image {p} does not exist")
        return v

    @model_validator(mode="after")
    def _betas_match(self):
        if self.references and len(self.reference_betas) not in (0, len(self.references)):
            raise ValueError("reference_betas must be empty or match references in length")
        return self


class NPSBlock(_Block):
    n_seeds: int = Field(8, ge=2)
    betas: list[float] = []
    n_levels: int = Field(3, ge=1)
    roi_fraction: float = Field(0.25, gt=0, le=1)
    mode: Literal["ensemble", "difference"] = "ensemble"
    n_bins: Optional[int] = Field(None, ge=1)


class ExportBlock(_Block):
    pgm: bool = False
    window: float = Field(400.0, gt=0)
    level: float = 40.0


class ExperimentConfig(_Block):
    output_dir: str = "out"
    phantom: PhantomBlock = PhantomBlock()
    geometry: GeometryBlock = GeometryBlock()
    simulation: SimulationBlock = SimulationBlock()
    penalty: PenaltyBlock = PenaltyBlock()
    solver: SolverBlock = SolverBlock()
    path: PathBlock = PathBlock()
    metrics: MetricsBlock = MetricsBlock()
    nps: NPSBlock = NPSBlock()
    export: ExportBlock = ExportBlock()

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of every field except ``output_dir``."""
        d = self.model_dump(mode="json", exclude={"output_dir"})
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canon.encode()).hexdigest()

    def path_betas(self) -> list[float]:
        return geomspace(self.path.beta1, self.path.beta2, self.metrics.n_references)


def geomspace(a: float, b: float, n: int) -> list[float]:
    if n == 1 or a == b:
        return [float(a)] * n
    if a <= 0:
        raise ValueError("log-spaced betas need beta1 > 0")
    return [float(math.exp(math.log(a) + k * (math.log(b) - math.log(a)) / (n - 1))) for k in range(n)]


def _set_dotted(d: dict, key: str, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key}: {p} is not a block")
        cur = nxt
    cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    if not raw.strip():
        return key, None
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value


def load_config(path=None, overrides=()) -> ExperimentConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({str(e).splitlines()[0]})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        _set_dotted(data, *parse_override(item))
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        raise ConfigError(f"{loc}: {err['msg']}") from e
