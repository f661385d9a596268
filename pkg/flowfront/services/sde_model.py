# flowfront/services/sde_model.py
"""
Coupled-SDE grey-box model of the flow-front over parallel line sensors:

    dY_i = (C0_i / Y_i + D0 * (G Y)_i) dt + sigma dW_i

G is a finite-difference approximation of the 2nd or 4th spatial derivative
across the sensor lines.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
from loguru import logger

from flowfront.services.pde_sim import FrontSeries

Y_MIN = 1e-3

_CENTRAL = {
    2: np.array([1.0, -2.0, 1.0]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


@dataclass(frozen=True)
class Stencil:
    order: int
    n: int
    dx: float
    G: sp.csr_matrix  # (n, n), 1/m^order

    @property
    def dense(self) -> np.ndarray:
        return self.G.toarray()


def build_stencil(n: int, order: int, dx: float) -> Stencil:
    """Central stencil on interior rows, one-sided stencils of the same order on the edges.

    Edge row i on the left uses the window starting at min(i, n-1-order); the right
    edge mirrors it, so the operator is symmetric under reversing the line order.
    """
    if order not in _CENTRAL:
        raise ValueError(f"stencil order must be 2 or 4, got {order}")
    if n < order + 1:
        raise ValueError(f"order-{order} stencil needs at least {order + 1} lines, got {n}")
    if dx <= 0:
        raise ValueError(f"dx must be positive, got {dx}")

    coeffs = _CENTRAL[order] / dx**order
    half = order // 2
    G = sp.lil_matrix((n, n))
    for i in range(n):
        if i < half:
            start = min(i, n - 1 - order)
        elif i >= n - half:
            start = max(i, order) - order
        else:
            start = i - half
        G[i, start : start + order + 1] = coeffs
    return Stencil(order=order, n=n, dx=dx, G=G.tocsr())


@dataclass(frozen=True)
class ModelParams:
    C0: np.ndarray  # (n,), m^2/s
    D0: float
    sigma: float
    s_meas: float

    def __post_init__(self) -> None:
        c0 = np.asarray(self.C0, dtype=float)
        object.__setattr__(self, "C0", c0)
        if c0.ndim != 1 or not np.all(c0 > 0):
            raise ValueError("C0 must be a vector of positive entries")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.s_meas > 0:
            raise ValueError(f"s_meas must be positive, got {self.s_meas}")
        if not math.isfinite(self.D0):
            raise ValueError(f"D0 must be finite, got {self.D0}")

    @property
    def n(self) -> int:
        return len(self.C0)


def drift(Y: np.ndarray, params: ModelParams, stencil: Stencil, *, y_min: float = Y_MIN) -> np.ndarray:
    """f_i = C0_i / max(Y_i, y_min) + D0 (G Y)_i."""
    Y = np.asarray(Y, dtype=float)
    return params.C0 / np.maximum(Y, y_min) + params.D0 * (stencil.G @ Y)


def drift_jacobian(
    Y: np.ndarray, params: ModelParams, stencil: Stencil, *, y_min: float = Y_MIN
) -> np.ndarray:
    """diag(-C0_i / Y_i^2) + D0 G, with zero reciprocal slope on clamped entries."""
    Y = np.asarray(Y, dtype=float)
    slope = np.where(Y > y_min, -params.C0 / np.maximum(Y, y_min) ** 2, 0.0)
    return np.diag(slope) + params.D0 * stencil.dense


@dataclass(frozen=True)
class CoupledFrontModel:
    """The surface the filter integrates: drift, its Jacobian and the noise levels."""

    params: ModelParams
    stencil: Stencil
    y_min: float = Y_MIN
    _coupling: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.params.n != self.stencil.n:
            raise ValueError(f"params describe {self.params.n} lines, stencil {self.stencil.n}")
        object.__setattr__(self, "_coupling", self.params.D0 * self.stencil.dense)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def s_meas(self) -> float:
        return self.params.s_meas

    def drift(self, Y: np.ndarray) -> np.ndarray:
        return self.params.C0 / np.maximum(Y, self.y_min) + self._coupling @ Y

    def jacobian(self, Y: np.ndarray) -> np.ndarray:
        slope = np.where(Y > self.y_min, -self.params.C0 / np.maximum(Y, self.y_min) ** 2, 0.0)
        return self._coupling + np.diag(slope)


def euler_maruyama(
    params: ModelParams,
    stencil: Stencil,
    Y0: np.ndarray,
    T: float,
    sample_interval: float,
    dt: float,
    seed: int,
    *,
    Ly: float = 0.9,
    nx: Optional[int] = None,
    y_min: float = Y_MIN,
) -> FrontSeries:
    """Sample a path of the coupled SDE at multiples of sample_interval (noise-free states)."""
    if dt <= 0 or sample_interval < dt:
        raise ValueError(f"need 0 < dt <= sample_interval, got dt={dt}, sample_interval={sample_interval}")
    model = CoupledFrontModel(params=params, stencil=stencil, y_min=y_min)
    rng = np.random.default_rng(seed)
    n_sub = max(1, math.ceil(sample_interval / dt - 1e-9))
    h = sample_interval / n_sub
    n_samples = int(math.floor(T / sample_interval + 1e-9))

    Y = np.maximum(np.asarray(Y0, dtype=float), y_min)
    out = np.empty((n_samples + 1, model.n))
    out[0] = Y
    scale = params.sigma * math.sqrt(h)
    for k in range(1, n_samples + 1):
        for _ in range(n_sub):
            Y = np.maximum(Y + model.drift(Y) * h + scale * rng.standard_normal(model.n), y_min)
        out[k] = Y
    logger.debug("euler-maruyama path: {} samples, {} substeps each", n_samples, n_sub)

    columns = np.arange(model.n) if nx is None else np.floor(np.linspace(0.0, nx, model.n) + 0.5).astype(int)
    return FrontSeries(
        times=np.arange(n_samples + 1) * sample_interval,
        fronts=out,
        Ly=Ly,
        nx=model.n - 1 if nx is None else nx,
        columns=columns,
    )
