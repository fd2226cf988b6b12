"""Husimi Q-function dynamics on a finite-difference phase-space grid.

The grid coordinates are the dimensionless quadratures of the coherent-state
label, ``beta = x + i y``, so ``<q> = 2 s <x>_Q`` and ``<p> = 2 r <y>_Q`` with
``s = sqrt(hbar / 2 m omega)`` and ``r = sqrt(hbar m omega / 2)``.  In these
coordinates the conditional Q function obeys

    dQ = [omega (x d_y - y d_x) - (u s / hbar) d_y + (alpha s^2 / 2) d_y^2] Q dt
         + sqrt(eta alpha) s (4 x + d_x - 4 <x>_Q) Q dW,

which is integrated in Stratonovich form with a stochastic Heun step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fock import FockDensity
from .gaussian import GaussianMoments
from .model import (
    ControlGains,
    DivergenceError,
    ParameterError,
    StateValidityError,
    SystemParams,
)

EPS_NEG = 1e-6
HUSIMI_MAX = 1 / math.pi


class GeometryError(ParameterError):
    """The grid is too small or too coarse for the requested state."""


class StabilityError(ParameterError):
    """The time step violates the advection limit of the grid."""


@dataclass(frozen=True)
class GridGeometry:
    nx: int = 128
    ny: int = 128
    x_min: float = -6.0
    x_max: float = 6.0
    y_min: float = -6.0
    y_max: float = 6.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise GeometryError("grid needs at least 8 points per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GeometryError("grid extents must be increasing")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def radius(self) -> float:
        return max(abs(self.x_min), abs(self.x_max), abs(self.y_min), abs(self.y_max))


@dataclass
class QGrid:
    """Q-function samples ``values[i, j] = Q(x_i, y_j)``."""

    values: np.ndarray
    geometry: GridGeometry = field(default_factory=GridGeometry)
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.geometry.nx, self.geometry.ny):
            raise GeometryError(
                f"values shape {self.values.shape} does not match the geometry")

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.geometry.cell_area)

    def check_invariants(self, eps_neg: float = EPS_NEG, mass_tol: float = 1e-4) -> None:
        v = self.values
        if not np.all(np.isfinite(v)):
            raise StateValidityError("Q grid has non-finite values")
        if v.min() < -eps_neg:
            raise StateValidityError(f"Q undershoots to {v.min():.3g} < -{eps_neg:g}")
        if v.max() > HUSIMI_MAX + 1e-6:
            raise StateValidityError(f"Q peaks at {v.max():.6f} above 1/pi")
        if abs(self.mass - 1) > mass_tol:
            raise StateValidityError(f"Q integrates to {self.mass:.8f}")


@dataclass(frozen=True)
class SpdeConfig:
    dt: float = 5e-4
    renorm_every: int = 20
    boundary: str = "clamp"
    geometry: GridGeometry = field(default_factory=GridGeometry)
    filter_eps: float = 2e-3

    def __post_init__(self):
        if not 0 <= self.filter_eps <= 1 / 64:
            raise ParameterError("filter_eps must lie in [0, 1/64]")
        if not self.dt > 0:
            raise ParameterError("dt must be > 0")
        if self.renorm_every < 0:
            raise ParameterError("renorm_every must be >= 0")
        if self.boundary != "clamp":
            raise ParameterError(f"unsupported boundary treatment {self.boundary!r}")

    def check_stability(self, params: SystemParams) -> float:
        """Rotation Courant number; raises above 1."""
        g = self.geometry
        courant = abs(params.omega) * self.dt * g.radius / min(g.hx, g.hy)
        if courant > 1:
            raise StabilityError(
                f"omega dt max|x| / h = {courant:.3g} > 1; reduce dt or refine less")
        return courant


def _coherent_amplitudes(geom: GridGeometry, dim: int) -> np.ndarray:
    """<n|x+iy> for every grid point, shape (dim, nx, ny)."""
    X, Y = np.meshgrid(geom.x, geom.y, indexing="ij")
    beta = X + 1j * Y
    out = np.empty((dim,) + beta.shape, dtype=complex)
    out[0] = np.exp(-0.5 * np.abs(beta) ** 2)
    for n in range(1, dim):
        out[n] = out[n - 1] * beta / math.sqrt(n)
    return out


def _finalize(Q: np.ndarray, geom: GridGeometry, what: str, tol: float) -> QGrid:
    dA = geom.cell_area
    mass = Q.sum() * dA
    ring = (Q[0].sum() + Q[-1].sum() + Q[1:-1, 0].sum() + Q[1:-1, -1].sum()) * dA
    if abs(1 - mass) > tol or ring > tol:
        raise GeometryError(
            f"{what}: grid misses {abs(1 - mass):.2e} of the mass "
            f"({ring:.2e} on the boundary); enlarge the extents")
    Q = Q.copy()
    Q[0, :] = Q[-1, :] = 0.0
    Q[:, 0] = Q[:, -1] = 0.0
    return QGrid(Q / (Q.sum() * dA), geom)


def qgrid_from_fock(state, geometry: GridGeometry | None = None,
                    tol: float = 1e-6) -> QGrid:
    """Evaluate Q(x, y) = <x+iy|rho|x+iy>/pi on the grid.

    ``state`` is a FockDensity or a state vector in the number basis.
    """
    geom = geometry or GridGeometry()
    if isinstance(state, FockDensity):
        if abs(state.trace - 1) > 1e-8:
            raise StateValidityError("state must be normalized")
        rho = state.matrix
        c = _coherent_amplitudes(geom, rho.shape[0])
        Q = np.einsum("mij,mn,nij->ij", c.conj(), rho, c).real / math.pi
    else:
        psi = np.asarray(state, dtype=complex)
        if abs(np.vdot(psi, psi).real - 1) > 1e-8:
            raise StateValidityError("state vector must be normalized")
        c = _coherent_amplitudes(geom, len(psi))
        Q = np.abs(np.tensordot(psi.conj(), c, axes=1)) ** 2 / math.pi
    return _finalize(Q, geom, "qgrid_from_fock", tol)


def _q_gaussian_params(moments: GaussianMoments, params: SystemParams):
    s, r = params.x_scale, params.p_scale
    mean = np.array([moments.mean[0] / (2 * s), moments.mean[1] / (2 * r)])
    scale = np.diag([1 / (2 * s), 1 / (2 * r)])
    cov = scale @ moments.cov @ scale + 0.25 * np.eye(2)
    return mean, cov


def _gaussian_on_grid(mean, cov, geom: GridGeometry) -> np.ndarray:
    X, Y = np.meshgrid(geom.x - mean[0], geom.y - mean[1], indexing="ij")
    W = np.linalg.inv(cov)
    quad = W[0, 0] * X * X + 2 * W[0, 1] * X * Y + W[1, 1] * Y * Y
    return np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def qgrid_from_gaussian(moments: GaussianMoments, params: SystemParams,
                        geometry: GridGeometry | None = None, tol: float = 1e-6) -> QGrid:
    """Q function of the Gaussian state with the given operator moments."""
    geom = geometry or GridGeometry()
    mean, cov = _q_gaussian_params(moments, params)
    return _finalize(_gaussian_on_grid(mean, cov, geom), geom, "qgrid_from_gaussian", tol)


@dataclass
class QGridMoments:
    gaussian: GaussianMoments
    energy: float
    mass: float
    q_mean: np.ndarray
    q_cov: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.gaussian.mean

    @property
    def cov(self) -> np.ndarray:
        return self.gaussian.cov


def _moments_from_stats(stats: np.ndarray, params: SystemParams):
    """Vectorized calibration map from Q moments to operator moments.

    Q-function second moments are anti-normally ordered, so they exceed the
    symmetrized ones by the vacuum offset 1/4 per quadrature.
    """
    s, r = params.x_scale, params.p_scale
    m = stats[..., kernels.G_MASS]
    mx = stats[..., kernels.G_X] / m
    my = stats[..., kernels.G_Y] / m
    vx = stats[..., kernels.G_XX] / m - mx * mx
    vy = stats[..., kernels.G_YY] / m - my * my
    cxy = stats[..., kernels.G_XY] / m - mx * my
    table = np.stack([2 * s * mx, 2 * r * my, 4 * s * s * (vx - 0.25),
                      4 * s * r * cxy, 4 * r * r * (vy - 0.25)], axis=-1)
    r2 = (stats[..., kernels.G_XX] + stats[..., kernels.G_YY]) / m
    energy = params.hbar * params.omega * (r2 - 0.5)
    return table, energy


def qgrid_moments(grid: QGrid, params: SystemParams) -> QGridMoments:
    """Operator means, symmetrized covariance and energy from a Q grid."""
    g = grid.geometry
    stats = np.array(kernels.grid_stats(grid.values, g.x, g.y, g.cell_area))
    table, energy = _moments_from_stats(stats, params)
    m = stats[kernels.G_MASS]
    mx, my = stats[kernels.G_X] / m, stats[kernels.G_Y] / m
    qcov = np.array([[stats[kernels.G_XX] / m - mx * mx, stats[kernels.G_XY] / m - mx * my],
                     [stats[kernels.G_XY] / m - mx * my, stats[kernels.G_YY] / m - my * my]])
    return QGridMoments(GaussianMoments.from_vector(table), float(energy), float(m),
                        np.array([mx, my]), qcov)


def gaussianity_residual(grid: QGrid) -> float:
    """L1 distance between Q and the Gaussian with Q's own mean and covariance."""
    g = grid.geometry
    Q = grid.values / grid.mass
    stats = np.array(kernels.grid_stats(Q, g.x, g.y, g.cell_area))
    mx, my = stats[kernels.G_X], stats[kernels.G_Y]
    cov = np.array([[stats[kernels.G_XX] - mx * mx, stats[kernels.G_XY] - mx * my],
                    [stats[kernels.G_XY] - mx * my, stats[kernels.G_YY] - my * my]])
    G = _gaussian_on_grid((mx, my), cov, g)
    return float(np.abs(Q - G).sum() * g.cell_area)


def spde_fields(grid: QGrid, params: SystemParams, gains: ControlGains):
    """Stratonovich drift and noise coefficient, both on the grid."""
    g = grid.geometry
    return kernels.qgrid_fields(grid.values, g.x, g.y, g.hx, g.hy, params.omega,
                                params.hbar, params.mass, params.alpha, params.eta,
                                gains.k_q, gains.k_p)


def _run(values, geom, params, gains, noise, cfg, renorm_every):
    stats, states, drifts, fail = kernels.qfunc_run(
        values, geom.x, geom.y, params.omega, params.hbar, params.mass, params.alpha,
        params.eta, gains.k_q, gains.k_p, noise, cfg.dt, renorm_every, max(1, len(noise)),
        cfg.filter_eps)
    if fail >= 0:
        raise DivergenceError(f"Q-function integration diverged at step {fail}", fail)
    return stats, states[-1], drifts


def step_spde(grid: QGrid, params: SystemParams, gains: ControlGains, dW: float,
              cfg: SpdeConfig | None = None, renormalize: bool = False) -> QGrid:
    """Advance the grid by one step of ``cfg.dt`` with increment ``dW``."""
    cfg = cfg or SpdeConfig(geometry=grid.geometry)
    cfg.check_stability(params)
    _, values, _ = _run(grid.values, grid.geometry, params, gains,
                        np.array([float(dW)]), cfg, 1 if renormalize else 0)
    return QGrid(values, grid.geometry, grid.time + cfg.dt)


@dataclass
class QTrajectory:
    times: np.ndarray
    stats: np.ndarray
    moments: np.ndarray
    energy: np.ndarray
    snapshots: list[QGrid]
    renorm_drifts: np.ndarray
    noise: np.ndarray
    params: SystemParams

    @property
    def min_value(self) -> float:
        return float(self.stats[:, kernels.G_MIN].min())

    @property
    def max_value(self) -> float:
        return float(self.stats[:, kernels.G_MAX].max())

    @property
    def max_renorm_drift(self) -> float:
        return float(self.renorm_drifts.max()) if len(self.renorm_drifts) else 0.0


def initial_grid(init, params: SystemParams, geometry: GridGeometry) -> QGrid:
    """Q grid for a QGrid, FockDensity, number-basis vector or GaussianMoments."""
    if isinstance(init, QGrid):
        if init.geometry != geometry:
            raise GeometryError("initial grid geometry differs from the configuration")
        return init
    if isinstance(init, GaussianMoments):
        return qgrid_from_gaussian(init, params, geometry)
    return qgrid_from_fock(init, geometry)


def _check_coverage(grid: QGrid, tol: float = 1e-6) -> None:
    # tail mass is the coverage measure; for a Gaussian, 1e-6 is about 5 sigma
    g = grid.geometry
    v = grid.values
    edge = np.concatenate([v[:2].ravel(), v[-2:].ravel(), v[2:-2, :2].ravel(), v[2:-2, -2:].ravel()])
    if edge.sum() * g.cell_area > tol * grid.mass:
        raise GeometryError("initial state has more than 1e-6 of its mass at the grid edge")


def run_qfunc_trajectory(init, params: SystemParams, gains: ControlGains,
                         cfg: SpdeConfig | None = None, steps: int | None = None,
                         seed=None, noise=None, snapshot_times=()) -> QTrajectory:
    """Integrate one conditional Q-function trajectory.

    Snapshot times are rounded to the nearest completed renormalization
    cycle, so taking snapshots never changes the trajectory itself.  The
    actual times are stored on the returned grids.

    Parameters
    ----------
    noise : array_like, optional
        Innovation increments of variance ``cfg.dt``.  Drawn from ``seed``
        when omitted, in which case ``steps`` is required.
    """
    cfg = cfg or SpdeConfig()
    cfg.check_stability(params)
    geom = cfg.geometry
    grid = initial_grid(init, params, geom)
    _check_coverage(grid)
    if noise is None:
        if steps is None:
            raise ParameterError("either noise or steps is required")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        noise = rng.normal(0.0, math.sqrt(cfg.dt), int(steps))
    noise = np.asarray(noise, dtype=float)
    n = len(noise)
    cycle = max(cfg.renorm_every, 1)
    marks = sorted({min(n, cycle * round(t / (cfg.dt * cycle))) for t in snapshot_times})
    bounds = [b for b in marks if 0 < b < n] + [n]

    first = kernels.grid_stats(grid.values, geom.x, geom.y, geom.cell_area)
    stats_parts = [np.array(first)[None]]
    snapshots = [QGrid(grid.values.copy(), geom, 0.0)] if 0 in marks else []
    drifts = []
    values = grid.values
    start = 0
    for stop in bounds:
        if stop == start:
            continue
        stats, values, dr = _run(values, geom, params, gains, noise[start:stop], cfg,
                                 cfg.renorm_every)
        stats_parts.append(stats[1:])
        drifts.append(dr)
        if stop in marks:
            snapshots.append(QGrid(values.copy(), geom, stop * cfg.dt))
        start = stop
    stats = np.concatenate(stats_parts)
    table, energy = _moments_from_stats(stats, params)
    times = cfg.dt * np.arange(n + 1)
    return QTrajectory(times, stats, table, energy, snapshots,
                       np.concatenate(drifts) if drifts else np.empty(0), noise, params)
