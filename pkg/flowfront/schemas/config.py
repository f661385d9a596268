# flowfront/schemas/config.py
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from flowfront.errors import ConfigError
from flowfront.services.faults import FaultScenario
from flowfront.services.mle import EstimateOptions, FilterOptions
from flowfront.services.pde_sim import GridSpec, MaterialField, build_coefficient_field
from flowfront.services.sde_model import Stencil, build_stencil


class _Section(BaseModel):
    # unknown keys are a config error, not something to silently drop
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Section):
    Lx: float = Field(0.8, gt=0.0)
    Ly: float = Field(0.9, gt=0.0)
    nx: int = Field(64, ge=2)
    ny: int = Field(128, ge=2)


class MaterialConfig(_Section):
    A: float = Field(0.5, ge=0.0, lt=1.0)
    c0: float = Field(6.75e-9, gt=0.0)  # homogeneous fill time Ly^2/(2 c0 p0) = 600 s
    phi: float = Field(0.5, gt=0.0, le=1.0)
    H: float = Field(0.01, gt=0.0)
    rho: float = Field(1100.0, gt=0.0)
    g: float = Field(9.81, gt=0.0)
    p0: float = Field(1e5, gt=0.0)
    p_th: Optional[float] = Field(None, gt=0.0)


class SimConfig(_Section):
    dt_pde: float = Field(0.5, gt=0.0)
    T: float = Field(600.0, gt=0.0)
    sample_interval: float = Field(1.0, gt=0.0)
    noise: float = Field(0.0, ge=0.0)
    solver: Literal["direct", "cg"] = "direct"

    @model_validator(mode="after")
    def _interval_covers_step(self) -> "SimConfig":
        if self.sample_interval < self.dt_pde:
            raise ValueError("sample_interval must be >= dt_pde")
        return self


class SensorConfig(_Section):
    n_sensors: Optional[int] = Field(None, ge=2)


class ModelConfig(_Section):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    order: Literal[2, 4] = 4
    y_min: float = Field(1e-3, gt=0.0, alias="Y_min")


class FilterConfig(_Section):
    Ps: float = Field(10.0, ge=1.0)
    substep: Optional[float] = Field(None, gt=0.0)


class MleConfig(_Section):
    multistart: int = Field(5, ge=1)
    max_evals: int = Field(2000, ge=1)
    xatol: float = Field(1e-6, gt=0.0)
    fatol: float = Field(1e-6, gt=0.0)
    penalty: float = Field(1e12, gt=0.0)


class SweepConfig(_Section):
    sample_intervals: List[float] = Field(default_factory=lambda: [1.0, 5.0, 20.0], min_length=1)
    noise_stds: List[float] = Field(default_factory=lambda: [0.002, 0.01, 0.05], min_length=1)
    sensor_counts: List[int] = Field(default_factory=lambda: [5, 8, 12], min_length=1)
    orders: List[Literal[2, 4]] = Field(default_factory=lambda: [2, 4], min_length=1)
    scenarios: List[FaultScenario] = Field(default_factory=lambda: [FaultScenario()], min_length=1)
    replicates: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)


class RunConfig(_Section):
    grid: GridConfig = Field(default_factory=GridConfig)
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    sensors: SensorConfig = Field(default_factory=SensorConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    mle: MleConfig = Field(default_factory=MleConfig)
    scenario: FaultScenario = Field(default_factory=FaultScenario)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seed: int = 0

    @property
    def p_th_resolved(self) -> float:
        m = self.material
        return m.p_th if m.p_th is not None else 0.01 * m.p0

    # ---------- Builders ----------

    def build_grid(self) -> GridSpec:
        g = self.grid
        return GridSpec(Lx=g.Lx, Ly=g.Ly, nx=g.nx, ny=g.ny)

    def build_field(self) -> MaterialField:
        m = self.material
        return build_coefficient_field(self.build_grid(), m.A, m.c0, phi=m.phi, H=m.H, rho=m.rho, g=m.g)

    def build_stencil(self, n_lines: int, order: Optional[int] = None) -> Stencil:
        """Stencil over n_lines equally spaced sensors spanning the mould width."""
        if n_lines < 2:
            raise ValueError(f"need at least 2 lines, got {n_lines}")
        return build_stencil(n_lines, order or self.model.order, self.grid.Lx / (n_lines - 1))

    def filter_options(self) -> FilterOptions:
        return FilterOptions(Ps=self.filter.Ps, substep=self.filter.substep, y_min=self.model.y_min)

    def estimate_options(self, seed: Optional[int] = None) -> EstimateOptions:
        m = self.mle
        return EstimateOptions(
            multistart=m.multistart,
            max_evals=m.max_evals,
            xatol=m.xatol,
            fatol=m.fatol,
            penalty=m.penalty,
            seed=self.seed if seed is None else seed,
        )

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        return self if seed is None else self.model_copy(update={"seed": seed})


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic child seed for one unit of work; no OS entropy involved."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _pointer(loc) -> str:
    return "/" + "/".join(str(part) for part in loc)


def parse_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        problems = [f"{_pointer(err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigError("invalid config", problems) from e


def load_config(path: Optional[Path]) -> RunConfig:
    """Read a JSON config; no path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}", [f"/: line {e.lineno} column {e.colno}: {e.msg}"]) from e
    if not isinstance(doc, dict):
        raise ConfigError("invalid config", ["/: expected a JSON object"])
    return parse_config(doc)
