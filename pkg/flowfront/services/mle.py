# flowfront/services/mle.py
"""
Maximum-likelihood fitting of the coupled-SDE parameters.

The filter's total negative log-likelihood is minimised with Nelder-Mead in an
unconstrained vector (log C0_1..log C0_n, D0, log sigma, log s_meas).
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize

from flowfront.errors import FlowFrontError
from flowfront.services.cdekf import PS_DEFAULT, ObservationFrame, filter_pass
from flowfront.services.sde_model import Y_MIN, CoupledFrontModel, ModelParams, Stencil

PENALTY = 1e12
SIMPLEX_STEP = 0.1


class FilterOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    Ps: float = Field(PS_DEFAULT, ge=1.0)
    substep: Optional[float] = Field(None, gt=0.0)
    y_min: float = Field(Y_MIN, gt=0.0)


class EstimateOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    multistart: int = Field(5, ge=1)
    max_evals: int = Field(2000, ge=1)
    xatol: float = Field(1e-6, gt=0.0)
    fatol: float = Field(1e-6, gt=0.0)
    penalty: float = Field(PENALTY, gt=0.0)
    seed: int = 0


def transform(params: ModelParams) -> np.ndarray:
    C0 = np.asarray(params.C0, dtype=float)
    if np.any(C0 <= 0) or params.sigma <= 0 or params.s_meas <= 0:
        raise ValueError("transform needs positive C0, sigma and s_meas")
    return np.concatenate([np.log(C0), [params.D0, math.log(params.sigma), math.log(params.s_meas)]])


def untransform(v: np.ndarray) -> ModelParams:
    v = np.asarray(v, dtype=float)
    return ModelParams(C0=np.exp(v[:-3]), D0=float(v[-3]), sigma=math.exp(v[-2]), s_meas=math.exp(v[-1]))


def negloglik(
    v: np.ndarray,
    frames: Sequence[ObservationFrame],
    stencil: Stencil,
    options: FilterOptions = FilterOptions(),
    *,
    penalty: float = PENALTY,
) -> float:
    """Filter negative log-likelihood at v; failures map to `penalty`."""
    if not frames:
        raise ValueError("negloglik needs data")
    try:
        model = CoupledFrontModel(params=untransform(v), stencil=stencil, y_min=options.y_min)
        value = filter_pass(frames, model, Ps=options.Ps, substep=options.substep).negloglik
    except (FlowFrontError, ValueError, FloatingPointError, OverflowError) as e:
        logger.debug("penalised evaluation: {}", e)
        return penalty
    return value if math.isfinite(value) else penalty


class FitResult(BaseModel):
    """Best start of a fit. `converged` is False only when every start hit the evaluation cap."""

    C0: List[float]
    D0: float
    sigma: float
    s_meas: float
    negloglik: float
    converged: bool
    evaluations: int
    start: int = 0
    order: Optional[int] = None

    def params(self) -> ModelParams:
        return ModelParams(C0=np.array(self.C0), D0=self.D0, sigma=self.sigma, s_meas=self.s_meas)

    @classmethod
    def from_params(cls, params: ModelParams, **kw) -> "FitResult":
        return cls(
            C0=[float(c) for c in params.C0],
            D0=float(params.D0),
            sigma=float(params.sigma),
            s_meas=float(params.s_meas),
            **kw,
        )


def coupling_scale(C0: np.ndarray, stencil: Stencil, Ly: float) -> float:
    """D0 magnitude at which coupling and per-line drift are comparable over the mould length."""
    return float(np.mean(C0)) * stencil.dx**stencil.order / Ly**2


def initial_guess(frames: Sequence[ObservationFrame], stencil: Stencil, *, y_min: float = Y_MIN) -> ModelParams:
    """Data-driven starting point: C0 from the growth of Y^2, sigma from increment spread."""
    n = stencil.n
    times = np.array([f.t for f in frames])
    Z = np.vstack([np.where(f.mask, f.z, np.nan) for f in frames])
    if not np.any(np.isfinite(Z)):
        raise ValueError("no informative observations")

    C0 = np.empty(n)
    for i in range(n):
        ok = np.isfinite(Z[:, i])
        if ok.sum() >= 2:
            slope = np.polyfit(times[ok], np.maximum(Z[ok, i], y_min) ** 2, 1)[0]
            C0[i] = slope / 2.0
        else:
            C0[i] = np.nan
    fallback = np.nanmedian(C0) if np.any(np.isfinite(C0)) else 1e-4
    C0 = np.where(np.isfinite(C0), C0, fallback)
    C0 = np.maximum(C0, 1e-8)

    dZ = np.diff(Z, axis=0)
    dt = np.diff(times)[:, None]
    expected = C0 / np.maximum(Z[:-1], y_min) * dt
    resid = (dZ - expected) / np.sqrt(dt)
    resid = resid[np.isfinite(resid)]
    sigma = float(np.std(resid)) if resid.size > 1 else 1e-3
    sigma = max(sigma, 1e-5)
    s_meas = max(0.5 * sigma * math.sqrt(float(np.median(dt))), 1e-4)
    return ModelParams(C0=C0, D0=0.0, sigma=sigma, s_meas=s_meas)


@dataclass
class _Incumbent:
    value: float = math.inf
    evaluations: int = 0
    history: Optional[List[float]] = None

    def record(self, value: float) -> None:
        self.evaluations += 1
        self.value = min(self.value, value)
        if self.history is not None:
            self.history.append(self.value)


def _jittered_start(theta0: ModelParams, rng: np.random.Generator, d_ref: float) -> ModelParams:
    C0 = theta0.C0 * rng.uniform(0.5, 1.5, size=theta0.n)
    D0 = theta0.D0 + rng.uniform(-1.0, 1.0) * (abs(theta0.D0) + 0.1 * d_ref)
    sigma = theta0.sigma * rng.uniform(0.5, 1.5)
    s_meas = theta0.s_meas * rng.uniform(0.5, 1.5)
    return ModelParams(C0=C0, D0=D0, sigma=sigma, s_meas=s_meas)


def estimate(
    frames: Sequence[ObservationFrame],
    stencil: Stencil,
    theta0: Optional[ModelParams] = None,
    opts: EstimateOptions = EstimateOptions(),
    filter_options: FilterOptions = FilterOptions(),
    *,
    Ly: float = 0.9,
    objective=None,
    history: Optional[List[float]] = None,
) -> FitResult:
    """Nelder-Mead over the transformed parameters with optional jittered restarts.

    `objective(v)` replaces the filter likelihood when given. `history`, if
    passed, receives the best-so-far value after every evaluation.
    """
    if not any(f.effective_dim for f in frames):
        raise ValueError("no informative observations")
    if theta0 is None:
        theta0 = initial_guess(frames, stencil, y_min=filter_options.y_min)
    if theta0.n != stencil.n:
        raise ValueError(f"theta0 has {theta0.n} lines but the stencil has {stencil.n}")

    d_ref = coupling_scale(theta0.C0, stencil, Ly)
    scale = np.ones(theta0.n + 3)
    scale[-3] = d_ref

    incumbent = _Incumbent(history=history)

    def fun(u: np.ndarray) -> float:
        v = u * scale
        if objective is not None:
            value = float(objective(v))
        else:
            value = negloglik(v, frames, stencil, filter_options, penalty=opts.penalty)
        incumbent.record(value)
        return value

    rng = np.random.default_rng(opts.seed)
    best = None
    any_converged = False
    for start in range(opts.multistart):
        start_params = theta0 if start == 0 else _jittered_start(theta0, rng, d_ref)
        u0 = transform(start_params) / scale
        simplex = np.vstack([u0] + [u0 + SIMPLEX_STEP * e for e in np.eye(len(u0))])
        before = incumbent.evaluations
        res = minimize(
            fun,
            u0,
            method="Nelder-Mead",
            options=dict(
                maxfev=opts.max_evals,
                xatol=opts.xatol,
                fatol=opts.fatol,
                initial_simplex=simplex,
                adaptive=False,
            ),
        )
        used = incumbent.evaluations - before
        converged = bool(res.success)
        any_converged |= converged
        logger.debug(
            "start {}: negloglik={:.6g} after {} evaluations ({})",
            start, res.fun, used, "converged" if converged else res.message,
        )
        if best is None or res.fun < best[1]:
            best = (res.x * scale, float(res.fun), start)

    v_hat, value, start = best
    if not any_converged:
        logger.warning("no start converged within {} evaluations; returning best so far", opts.max_evals)
    fit = FitResult.from_params(
        untransform(v_hat),
        negloglik=value,
        converged=any_converged,
        evaluations=incumbent.evaluations,
        start=start,
        order=stencil.order,
    )
    logger.info("fit finished: negloglik={:.6g}, {} evaluations, best start {}", value, fit.evaluations, start)
    return fit
