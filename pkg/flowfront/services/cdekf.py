# flowfront/services/cdekf.py
"""
Continuous-discrete extended Kalman filter with missing-data updates.

Between observations the mean and covariance follow
    dY/dt = f(Y),    dP/dt = A P + P A^T + sigma^2 I,    A = df/dY
integrated jointly with classical RK4. At an observation only the valid sensor
rows enter the update (row-deleted identity as selector), and the likelihood
term uses the reduced observation dimension.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, expm

from flowfront.errors import NumericalError
from flowfront.services.pde_sim import FrontSeries

LOG_2PI = math.log(2.0 * math.pi)
PS_DEFAULT = 10.0
SUBSTEP_FRACTION = 0.1
STABILITY = 1.0
MAX_SUBSTEPS = 20000


class DriftModel(Protocol):
    sigma: float
    s_meas: float
    y_min: float

    @property
    def n(self) -> int: ...

    def drift(self, Y: np.ndarray) -> np.ndarray: ...

    def jacobian(self, Y: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray  # (n,)
    cov: np.ndarray  # (n, n)
    t: float


@dataclass(frozen=True)
class ObservationFrame:
    t: float
    z: np.ndarray  # (n,)
    mask: np.ndarray  # (n,) bool, True where z is valid

    @property
    def effective_dim(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class StepResult:
    t: float
    predicted: FilterState  # one-step-ahead prediction, before the update
    innovation: np.ndarray  # (L,)
    innovation_cov: np.ndarray  # (L, L)
    negloglik: float
    state: FilterState  # after the update


@dataclass(frozen=True)
class FilterResult:
    negloglik: float
    steps: List[StepResult]

    @property
    def predictions(self) -> np.ndarray:
        """One-step-ahead means, one row per scored frame."""
        if not self.steps:
            return np.empty((0, 0))
        return np.vstack([s.predicted.mean for s in self.steps])


def frames_from_series(series: FrontSeries) -> List[ObservationFrame]:
    """NaN entries become masked-out sensors."""
    frames = []
    for t, row in zip(series.times, series.fronts):
        mask = np.isfinite(row)
        frames.append(ObservationFrame(t=float(t), z=np.where(mask, row, 0.0), mask=mask))
    return frames


def series_from_frames(frames: Sequence[ObservationFrame], template: FrontSeries) -> FrontSeries:
    fronts = np.vstack([np.where(f.mask, f.z, np.nan) for f in frames])
    return FrontSeries(
        times=np.array([f.t for f in frames]),
        fronts=fronts,
        Ly=template.Ly,
        nx=template.nx,
        columns=template.columns,
    )


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def initial_state(frame: ObservationFrame, n: int, y_min: float) -> np.ndarray:
    """Y0 from the first frame, gaps filled by linear interpolation.

    Only the first frame is read. A fully masked one starts every line at
    max(y_min, 0).
    """
    if not frame.effective_dim:
        return np.full(n, max(y_min, 0.0))
    idx = np.flatnonzero(frame.mask)
    Y0 = np.interp(np.arange(n), idx, frame.z[idx])
    return np.maximum(Y0, y_min)


def initial_covariance(model: DriftModel, Y0: np.ndarray, dt1: float, Ps: float = PS_DEFAULT) -> np.ndarray:
    """P0 = Ps * int_0^dt1 e^{As} sigma^2 (e^{As})^T ds, A frozen at Y0.

    The integral is evaluated exactly from the exponential of the block matrix
    [[-A, Q], [0, A^T]] * dt1.
    """
    if Ps < 1:
        raise ValueError(f"Ps must be >= 1, got {Ps}")
    if dt1 <= 0:
        raise ValueError(f"dt1 must be positive, got {dt1}")
    n = model.n
    A = model.jacobian(np.asarray(Y0, dtype=float))
    Q = model.sigma**2 * np.eye(n)
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -A
    block[:n, n:] = Q
    block[n:, n:] = A.T
    E = expm(block * dt1)
    integral = E[n:, n:].T @ E[:n, n:]
    return _symmetrize(Ps * integral)


def _moments_rhs(model: DriftModel, Y: np.ndarray, P: np.ndarray, Q: np.ndarray, A: Optional[np.ndarray] = None):
    if A is None:
        A = model.jacobian(Y)
    AP = A @ P
    return model.drift(Y), AP + AP.T + Q


def predict(
    state: FilterState,
    model: DriftModel,
    t_next: float,
    substep: float,
) -> FilterState:
    """RK4 on (mean, cov) up to t_next in steps no longer than substep."""
    span = t_next - state.t
    if span < 0:
        raise ValueError(f"cannot predict backwards from t={state.t} to t={t_next}")
    if span == 0:
        return state
    if substep <= 0:
        raise ValueError(f"substep must be positive, got {substep}")

    n_steps = max(1, math.ceil(span / substep - 1e-9))
    h_max = span / n_steps
    Q = model.sigma**2 * np.eye(len(state.mean))
    Y, P = state.mean, state.cov
    t = state.t
    k = 0
    while t_next - t > 1e-12 * span:
        k += 1
        if k > MAX_SUBSTEPS:
            raise NumericalError(
                f"prediction from t={state.t:g} to t={t_next:g} needs more than {MAX_SUBSTEPS} substeps"
            )
        A = model.jacobian(Y)
        k1y, k1p = _moments_rhs(model, Y, P, Q, A)
        # keep h * ||A|| inside the RK4 stability region of the covariance equation
        stiffness = float(np.abs(A).sum(axis=1).max())
        h = min(h_max, t_next - t)
        if stiffness * h > STABILITY:
            h = STABILITY / stiffness
        k2y, k2p = _moments_rhs(model, Y + 0.5 * h * k1y, P + 0.5 * h * k1p, Q)
        k3y, k3p = _moments_rhs(model, Y + 0.5 * h * k2y, P + 0.5 * h * k2p, Q)
        k4y, k4p = _moments_rhs(model, Y + h * k3y, P + h * k3p, Q)
        Y = np.maximum(Y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y), model.y_min)
        P = _symmetrize(P + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p))
        t += h
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(P))):
            raise NumericalError(
                f"non-finite filter moments in substep {k} "
                f"of the prediction from t={state.t:g} to t={t_next:g}"
            )
    return FilterState(mean=Y, cov=P, t=float(t_next))


def _repair_psd(P: np.ndarray) -> np.ndarray:
    bad = np.flatnonzero(np.diag(P) < 0)
    if bad.size:
        logger.warning("covariance diagonal went negative on rows {}; zeroing them", bad.tolist())
        P = P.copy()
        P[bad, :] = 0.0
        P[:, bad] = 0.0
    return P


def update(
    state: FilterState,
    frame: ObservationFrame,
    model: DriftModel,
    *,
    meas_var: Optional[np.ndarray] = None,
) -> StepResult:
    """Measurement update on the valid rows of frame; identity observation map.

    `meas_var` overrides the per-sensor measurement variances (default s_meas^2).
    """
    if not math.isclose(state.t, frame.t, rel_tol=0.0, abs_tol=1e-9 * max(1.0, abs(frame.t))):
        raise ValueError(f"state at t={state.t} cannot absorb a frame at t={frame.t}")
    n = len(state.mean)
    idx = np.flatnonzero(frame.mask)
    if idx.size == 0:
        return StepResult(
            t=frame.t,
            predicted=state,
            innovation=np.empty(0),
            innovation_cov=np.empty((0, 0)),
            negloglik=0.0,
            state=state,
        )

    variances = np.full(n, model.s_meas**2) if meas_var is None else np.asarray(meas_var, dtype=float)
    P = state.cov
    innovation = frame.z[idx] - state.mean[idx]
    R = P[np.ix_(idx, idx)] + np.diag(variances[idx])
    try:
        factor = cho_factor(R, lower=True)
    except LinAlgError as e:
        raise NumericalError(f"innovation covariance not positive definite at t={frame.t:g}: {e}") from e

    PCt = P[:, idx]
    gain = cho_solve(factor, PCt.T).T
    weighted = cho_solve(factor, innovation)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    negloglik = 0.5 * (float(innovation @ weighted) + logdet + idx.size * LOG_2PI)

    mean = state.mean + gain @ innovation
    cov = _repair_psd(_symmetrize(P - gain @ R @ gain.T))
    return StepResult(
        t=frame.t,
        predicted=state,
        innovation=innovation,
        innovation_cov=R,
        negloglik=negloglik,
        state=FilterState(mean=mean, cov=cov, t=frame.t),
    )


def default_substep(frames: Sequence[ObservationFrame]) -> float:
    times = np.array([f.t for f in frames])
    if len(times) < 2:
        return 1.0
    return SUBSTEP_FRACTION * float(np.median(np.diff(times)))


def filter_pass(
    frames: Sequence[ObservationFrame],
    model: DriftModel,
    *,
    Y0: Optional[np.ndarray] = None,
    Ps: float = PS_DEFAULT,
    substep: Optional[float] = None,
    meas_var: Optional[np.ndarray] = None,
) -> FilterResult:
    """Run the filter and sum the per-step negative log-likelihood terms.

    The filter starts at the first frame (its density is treated as a constant),
    so every later frame contributes one scored step.
    """
    if not frames:
        raise ValueError("filter_pass needs at least one frame")
    times = np.array([f.t for f in frames])
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame times must be strictly increasing")

    n = model.n
    mean0 = initial_state(frames[0], n, model.y_min) if Y0 is None else np.asarray(Y0, dtype=float)
    step = default_substep(frames) if substep is None else substep
    dt1 = float(times[1] - times[0]) if len(times) > 1 else 1.0
    state = FilterState(mean=mean0, cov=initial_covariance(model, mean0, dt1, Ps), t=float(times[0]))

    total = 0.0
    steps: List[StepResult] = []
    for frame in frames[1:]:
        predicted = predict(state, model, frame.t, step)
        result = update(predicted, frame, model, meas_var=meas_var)
        total += result.negloglik
        steps.append(result)
        state = result.state
    return FilterResult(negloglik=total, steps=steps)


def one_step_predictions(result: FilterResult) -> Tuple[np.ndarray, np.ndarray]:
    """(times, means) of the one-step-ahead predictions."""
    return np.array([s.t for s in result.steps]), result.predictions
