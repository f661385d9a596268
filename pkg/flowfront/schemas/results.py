from __future__ import annotations
from pydantic import BaseModel, Field
from typing import List

class EvaluationRecord(BaseModel):
    config_id: int
    order: int
    n_sensors: int
    sample_interval: float
    noise: float
    scenario: str = "none"
    replicate: int = 0
    avg_rmse: float
    times: List[float] = Field(default_factory=list)
    rmse: List[float] = Field(default_factory=list)
    error: str = ""

class SweepRow(BaseModel):
    """One line of sweep.csv."""
    config_id: int
    order: int
    n_sensors: int
    dt: float
    noise: float
    scenario: str
    replicate: int
    avg_rmse: float
    error: str = ""

    @classmethod
    def from_record(cls, rec: EvaluationRecord) -> "SweepRow":
        return cls(
            config_id=rec.config_id,
            order=rec.order,
            n_sensors=rec.n_sensors,
            dt=rec.sample_interval,
            noise=rec.noise,
            scenario=rec.scenario,
            replicate=rec.replicate,
            avg_rmse=rec.avg_rmse,
            error=rec.error,
        )
