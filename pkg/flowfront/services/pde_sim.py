# flowfront/services/pde_sim.py
"""
Darcy-flow pressure simulator used to manufacture synthetic flow-front data.

The fluid layer thickness h = min(phi*H, p/(rho*g)) turns mass conservation into
    dh/dp * dp/dt = div((kappa*phi*H/mu) grad p)
which is marched with a semi-implicit Euler step (dh/dp frozen at the previous
step) on a vertex-centred finite-volume grid. Inlet row y=0 is held at p0, the
outlet row y=Ly at 0, and the sides x=0, x=Lx are no-flux.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import cg, spsolve

from flowfront.errors import BoundViolationError, SolverConvergenceError

SolverKind = Literal["direct", "cg"]

# slack on [0, p0] and on the Jacobi-scaled residual, both relative to p0
BOUND_SLACK = 1e-9
RESIDUAL_TOL = 1e-8
FILL_FRACTION = 0.99


@dataclass(frozen=True)
class GridSpec:
    Lx: float = 0.8
    Ly: float = 0.9
    nx: int = 64
    ny: int = 128

    def __post_init__(self) -> None:
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError(f"grid lengths must be positive, got Lx={self.Lx}, Ly={self.Ly}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got nx={self.nx}, ny={self.ny}")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Vertex array shape, rows along y and columns along x."""
        return (self.ny + 1, self.nx + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.Lx, self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.Ly, self.ny + 1)


@dataclass(frozen=True)
class MaterialField:
    grid: GridSpec
    kappa_over_mu: np.ndarray  # (ny+1, nx+1), m^2/(Pa s)
    phi: float = 0.5
    H: float = 0.01
    rho: float = 1100.0
    g: float = 9.81
    A: float = 0.0
    c0: float = 6.75e-9

    def __post_init__(self) -> None:
        if self.kappa_over_mu.shape != self.grid.shape:
            raise ValueError(
                f"kappa_over_mu shape {self.kappa_over_mu.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(self.kappa_over_mu > 0):
            raise ValueError("kappa_over_mu must be positive everywhere")
        if not 0 < self.phi <= 1:
            raise ValueError(f"porosity must lie in (0, 1], got {self.phi}")
        if self.H <= 0 or self.rho <= 0 or self.g <= 0:
            raise ValueError("H, rho and g must be positive")

    @property
    def fill_pressure(self) -> float:
        """Pressure at which the gap is completely filled, rho*g*phi*H."""
        return self.rho * self.g * self.phi * self.H

    @property
    def transmissivity(self) -> np.ndarray:
        return self.kappa_over_mu * self.phi * self.H


@dataclass(frozen=True)
class PressureField:
    p: np.ndarray  # (ny+1, nx+1), Pa
    t: float = 0.0

    @classmethod
    def empty(cls, grid: GridSpec, p0: float) -> "PressureField":
        p = np.zeros(grid.shape)
        p[0, :] = p0
        return cls(p=p, t=0.0)


@dataclass(frozen=True)
class FrontSeries:
    """Front positions per line over time.

    `columns` are the grid columns the lines sit on; a full-resolution series
    has columns 0..nx.
    """

    times: np.ndarray  # (T,)
    fronts: np.ndarray  # (T, n), NaN where missing
    Ly: float
    nx: int
    columns: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        if self.fronts.ndim != 2 or self.fronts.shape != (len(self.times), len(self.columns)):
            raise ValueError(
                f"fronts shape {self.fronts.shape} inconsistent with "
                f"{len(self.times)} times and {len(self.columns)} columns"
            )

    @property
    def n_lines(self) -> int:
        return len(self.columns)

    def with_fronts(self, fronts: np.ndarray) -> "FrontSeries":
        return FrontSeries(times=self.times, fronts=fronts, Ly=self.Ly, nx=self.nx, columns=self.columns)


def build_coefficient_field(
    grid: GridSpec,
    A: float,
    c0: float,
    *,
    phi: float = 0.5,
    H: float = 0.01,
    rho: float = 1100.0,
    g: float = 9.81,
) -> MaterialField:
    """kappa/mu = c0 / ((1 - A cos(2 pi x/Lx)) (1 - A cos(2 pi y/Ly))) at every vertex."""
    if not 0.0 <= A < 1.0:
        raise ValueError(f"heterogeneity amplitude A must satisfy 0 <= A < 1, got {A}")
    if c0 <= 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    X, Y = np.meshgrid(grid.x, grid.y)
    denom = (1.0 - A * np.cos(2.0 * np.pi * X / grid.Lx)) * (1.0 - A * np.cos(2.0 * np.pi * Y / grid.Ly))
    return MaterialField(
        grid=grid, kappa_over_mu=c0 / denom, phi=phi, H=H, rho=rho, g=g, A=A, c0=c0
    )


def dh_dp(p, field: MaterialField):
    """1/(rho g) while the gap is partially filled, 0 from the fill pressure on."""
    p_arr = np.asarray(p, dtype=float)
    out = np.where(p_arr < field.fill_pressure, 1.0 / (field.rho * field.g), 0.0)
    return out if out.ndim else float(out)


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


@dataclass(frozen=True)
class DarcyOperator:
    """Static part of the discrete system on the interior rows 1..ny-1."""

    stiffness: sp.csr_matrix
    inlet_coupling: np.ndarray  # multiply by p0 for the Dirichlet right-hand side
    volume: np.ndarray  # control-volume areas, m^2
    grid: GridSpec


def assemble_operator(field: MaterialField) -> DarcyOperator:
    grid = field.grid
    nxp = grid.nx + 1
    nint = grid.ny - 1
    size = nint * nxp
    K = field.transmissivity
    index = np.arange(size).reshape(nint, nxp)

    # half control volumes on the no-flux sides
    width = np.full(nxp, grid.dx)
    width[[0, -1]] *= 0.5

    diag = np.zeros(size)
    rows, cols, vals = [], [], []

    def couple(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> None:
        rows.extend((a, b))
        cols.extend((b, a))
        vals.extend((-t, -t))
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)

    tx = _harmonic(K[1:-1, :-1], K[1:-1, 1:]) * grid.dy / grid.dx
    couple(index[:, :-1].ravel(), index[:, 1:].ravel(), tx.ravel())

    ty = _harmonic(K[:-1, :], K[1:, :]) * width / grid.dy  # face between rows j and j+1
    couple(index[:-1, :].ravel(), index[1:, :].ravel(), ty[1:-1].ravel())

    inlet = np.zeros(size)
    inlet[index[0]] = ty[0]
    diag[index[0]] += ty[0]
    diag[index[-1]] += ty[-1]

    off = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    stiffness = (off + sp.diags(diag)).tocsr()
    volume = np.tile(width * grid.dy, nint)
    return DarcyOperator(stiffness=stiffness, inlet_coupling=inlet, volume=volume, grid=grid)


def _solve(
    A: sp.csr_matrix,
    b: np.ndarray,
    x0: np.ndarray,
    solver: SolverKind,
    atol: float,
) -> np.ndarray:
    if solver == "direct":
        return spsolve(A.tocsc(), b)
    if solver == "cg":
        precond = sp.diags(1.0 / A.diagonal())
        x, info = cg(A, b, x0=x0, rtol=0.0, atol=atol, maxiter=20 * A.shape[0], M=precond)
        if info != 0:
            raise SolverConvergenceError(
                f"conjugate gradient stopped after {info} iterations without converging",
                residual=float(np.linalg.norm(A @ x - b)),
            )
        return x
    raise ValueError(f"unknown solver {solver!r}")


def step_pressure(
    p_n: PressureField,
    dt: float,
    field: MaterialField,
    p0: float,
    *,
    operator: Optional[DarcyOperator] = None,
    solver: SolverKind = "direct",
) -> PressureField:
    """One semi-implicit Euler step; dh/dp is evaluated at p_n."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = field.grid
    op = operator if operator is not None else assemble_operator(field)

    interior = p_n.p[1:-1, :].ravel()
    capacity = dh_dp(interior, field) * op.volume / dt
    A = (op.stiffness + sp.diags(capacity)).tocsr()
    b = capacity * interior + op.inlet_coupling * p0
    diag = A.diagonal()

    # ||r||_2 <= atol bounds every Jacobi-scaled residual entry by 0.1 * RESIDUAL_TOL * p0
    x = _solve(A, b, interior, solver, atol=0.1 * RESIDUAL_TOL * p0 * float(diag.min()))

    residual = float(np.max(np.abs(A @ x - b) / diag))
    if not np.isfinite(residual) or residual > RESIDUAL_TOL * p0:
        raise SolverConvergenceError(f"pressure solve inaccurate at t={p_n.t + dt:.3f}s", residual=residual)

    excess = max(float(-x.min()), float(x.max() - p0), 0.0)
    if excess > BOUND_SLACK * p0:
        raise BoundViolationError(f"pressure left [0, p0] at t={p_n.t + dt:.3f}s", excess=excess)
    if excess > 0:
        x = np.clip(x, 0.0, p0)

    p = np.empty(grid.shape)
    p[0, :] = p0
    p[-1, :] = 0.0
    p[1:-1, :] = x.reshape(grid.ny - 1, grid.nx + 1)
    return PressureField(p=p, t=p_n.t + dt)


def extract_front(p: PressureField, p_th: float, grid: GridSpec) -> np.ndarray:
    """Per x-column: Ly * sum_K max(min(p, p_th), 0) / (p_th * (ny+1))."""
    if p_th <= 0:
        raise ValueError(f"p_th must be positive, got {p_th}")
    clipped = np.maximum(np.minimum(p.p, p_th), 0.0)
    return grid.Ly * clipped.sum(axis=0) / (p_th * (grid.ny + 1))


def simulate(
    grid: GridSpec,
    field: MaterialField,
    p0: float,
    p_th: float,
    dt_pde: float,
    T: float,
    sample_interval: float,
    *,
    solver: SolverKind = "direct",
) -> FrontSeries:
    """March from an empty mould and record the front at multiples of sample_interval.

    Each sample interval is split into ceil(sample_interval/dt_pde) equal steps.
    Stops early once every line has reached FILL_FRACTION * Ly.
    """
    if field.grid != grid:
        raise ValueError("material field was built on a different grid")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if dt_pde <= 0 or sample_interval < dt_pde:
        raise ValueError(f"need 0 < dt_pde <= sample_interval, got dt_pde={dt_pde}, sample_interval={sample_interval}")

    op = assemble_operator(field)
    n_sub = max(1, math.ceil(sample_interval / dt_pde - 1e-9))
    dt = sample_interval / n_sub
    n_samples = int(math.floor(T / sample_interval + 1e-9))
    logger.debug(
        "simulating {}x{} vertices, {} samples of {} steps (dt={:.4g}s)",
        grid.nx + 1, grid.ny + 1, n_samples, n_sub, dt,
    )

    state = PressureField.empty(grid, p0)
    times = [0.0]
    fronts = [extract_front(state, p_th, grid)]
    for k in range(1, n_samples + 1):
        for _ in range(n_sub):
            state = step_pressure(state, dt, field, p0, operator=op, solver=solver)
        z = extract_front(state, p_th, grid)
        times.append(k * sample_interval)
        fronts.append(z)
        if np.all(z >= FILL_FRACTION * grid.Ly):
            logger.info("mould filled at t={:.1f}s", times[-1])
            break

    logger.info("simulation finished: {} samples up to t={:.1f}s", len(times), times[-1])
    return FrontSeries(
        times=np.asarray(times),
        fronts=np.vstack(fronts),
        Ly=grid.Ly,
        nx=grid.nx,
        columns=np.arange(grid.nx + 1),
    )


def add_noise(series: FrontSeries, s: float, seed: int) -> FrontSeries:
    """I.i.d. Gaussian noise with std s on every entry, clamped to [0, Ly]."""
    if s < 0:
        raise ValueError(f"noise std must be non-negative, got {s}")
    if s == 0:
        return series.with_fronts(series.fronts.copy())
    rng = np.random.default_rng(seed)
    noisy = series.fronts + rng.normal(0.0, s, size=series.fronts.shape)
    return series.with_fronts(np.clip(noisy, 0.0, series.Ly))


def sensor_columns(nx: int, n_sensors: int) -> np.ndarray:
    """Equally spaced columns from 0 to nx, interior ones rounded half up."""
    if not 2 <= n_sensors <= nx + 1:
        raise ValueError(f"n_sensors must lie in [2, {nx + 1}], got {n_sensors}")
    return np.floor(np.linspace(0.0, nx, n_sensors) + 0.5).astype(int)


def select_lines(series: FrontSeries, n_sensors: int) -> FrontSeries:
    if series.n_lines != series.nx + 1:
        raise ValueError("select_lines needs a full-resolution series")
    cols = sensor_columns(series.nx, n_sensors)
    return FrontSeries(
        times=series.times,
        fronts=series.fronts[:, cols],
        Ly=series.Ly,
        nx=series.nx,
        columns=cols,
    )
