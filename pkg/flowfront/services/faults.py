# flowfront/services/faults.py
from __future__ import annotations

import math
from typing import List, Literal, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from flowfront.services.cdekf import ObservationFrame

FaultKind = Literal["none", "drop_sensor", "partial_dropout", "bias"]


class FaultScenario(BaseModel):
    """One of the sensor-fault case studies applied to a measurement sequence.

    Sensor indices are 0-based. `fraction` is read by partial_dropout and bias,
    `bias` (metres, added to the reading) only by bias.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: FaultKind = "none"
    sensors: List[int] = Field(default_factory=list)
    fraction: float = Field(0.0, ge=0.0, le=1.0)
    bias: float = 0.2
    seed: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        sensors = "+".join(str(s) for s in self.sensors)
        if self.kind == "drop_sensor":
            return f"drop_sensor[{sensors}]"
        if self.kind == "partial_dropout":
            return f"partial_dropout[{sensors}]@{self.fraction:g}"
        return f"bias[{sensors}]@{self.fraction:g}{self.bias:+g}"


def affected_count(fraction: float, n_frames: int) -> int:
    return int(math.floor(fraction * n_frames + 1e-9))


def apply_scenario(
    frames: Sequence[ObservationFrame],
    scenario: FaultScenario,
    *,
    seed: Optional[int] = None,
) -> List[ObservationFrame]:
    """Return new frames with the scenario's faults; the input is never mutated.

    `seed` is used when the scenario carries none. Sampling scenarios need one of
    the two.
    """
    n_frames = len(frames)
    n_sensors = len(frames[0].z) if frames else 0
    for s in scenario.sensors:
        if not 0 <= s < n_sensors:
            raise ValueError(f"sensor index {s} outside 0..{n_sensors - 1}")

    z = np.vstack([f.z for f in frames]) if frames else np.empty((0, 0))
    mask = np.vstack([f.mask for f in frames]) if frames else np.empty((0, 0), dtype=bool)
    z, mask = z.copy(), mask.copy()

    if scenario.kind == "drop_sensor":
        mask[:, scenario.sensors] = False
    elif scenario.kind in ("partial_dropout", "bias"):
        chosen = scenario.seed if scenario.seed is not None else seed
        if chosen is None:
            raise ValueError(f"{scenario.label} samples frames and needs a seed")
        count = affected_count(scenario.fraction, n_frames)
        rng = np.random.default_rng(chosen)
        for s in scenario.sensors:
            rows = rng.choice(n_frames, size=count, replace=False)
            if scenario.kind == "partial_dropout":
                mask[rows, s] = False
            else:
                z[rows, s] += scenario.bias
        logger.debug("{}: {} of {} frames touched per listed sensor", scenario.label, count, n_frames)

    return [ObservationFrame(t=f.t, z=z[k], mask=mask[k]) for k, f in enumerate(frames)]
