"""Seeded trajectory ensembles, parameter sweeps and convergence diagnostics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import fock as fk
from . import qfunc as qf
from .gaussian import (
    GaussianMoments,
    UnstableGainError,
    expected_energy_curve,
    integrate_filter,
    optimal_gain,
    steady_state_energy,
)
from .model import ControlGains, DivergenceError, ParameterError, SystemParams

ENGINES = ("gaussian", "fock", "qfunc")
WORKERS_ENV = "QCOOL_WORKERS"


@dataclass(frozen=True)
class InitialState:
    """Initial conditional state.

    ``kind`` is ``"coherent"`` (uses ``beta``), ``"fock"`` (superposition
    with ``amplitudes`` as ``(n, c_n)`` pairs) or ``"gaussian"`` (``mean``
    and ``cov`` of ``(q, p)``).
    """

    kind: str = "coherent"
    beta: complex = 0j
    amplitudes: tuple = ()
    mean: tuple = (0.0, 0.0)
    cov: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("coherent", "fock", "gaussian"):
            raise ParameterError(f"unknown initial state kind {self.kind!r}")
        if self.kind == "fock":
            if not self.amplitudes:
                raise ParameterError("a Fock superposition needs amplitudes")
            amps = tuple((int(n), complex(c)) for n, c in self.amplitudes)
            if any(n < 0 for n, _ in amps):
                raise ParameterError("Fock levels must be >= 0")
            if sum(abs(c) ** 2 for _, c in amps) == 0:
                raise ParameterError("Fock amplitudes are all zero")
            object.__setattr__(self, "amplitudes", amps)
        if self.kind == "gaussian" and self.cov is None:
            raise ParameterError("a Gaussian initial state needs cov")

    @classmethod
    def dark(cls) -> "InitialState":
        """(|1> + |4>)/sqrt(2)."""
        return cls("fock", amplitudes=((1, 1.0), (4, 1.0)))

    def vector(self, dim: int) -> np.ndarray:
        psi = np.zeros(dim, dtype=complex)
        for n, c in self.amplitudes:
            if n >= dim:
                raise ParameterError(f"level {n} does not fit in dimension {dim}")
            psi[n] += c
        return psi / np.linalg.norm(psi)

    def density(self, params: SystemParams, dim: int) -> fk.FockDensity:
        if self.kind == "coherent":
            return fk.coherent_density(self.beta, dim)
        if self.kind == "fock":
            return fk.FockDensity.from_vector(self.vector(dim))
        return fk.gaussian_density(self.gaussian_moments(params), params, dim)

    def gaussian_moments(self, params: SystemParams) -> GaussianMoments | None:
        """Moments when the state is Gaussian, else None."""
        if self.kind == "coherent":
            return GaussianMoments.coherent(params, self.beta)
        if self.kind == "gaussian":
            return GaussianMoments(np.array(self.mean, float), np.array(self.cov, float))
        levels = {n for n, c in self.amplitudes if c != 0}
        if levels == {0}:
            return GaussianMoments.ground(params)
        return None

    def energy(self, params: SystemParams) -> float:
        g = self.gaussian_moments(params)
        hw = params.hbar * params.omega
        if g is None:
            psi = self.vector(max(n for n, _ in self.amplitudes) + 1)
            return float(hw * np.sum(np.abs(psi) ** 2 * (np.arange(len(psi)) + 0.5)))
        G = np.diag([params.mass * params.omega**2, 1 / params.mass])
        return float(0.5 * g.mean @ G @ g.mean + 0.5 * np.trace(G @ g.cov))

    def reference_moments(self, params: SystemParams) -> GaussianMoments:
        """Gaussian stand-in for the analytic curve.

        Non-Gaussian states are replaced by the coherent state with real
        amplitude and the same mean energy.
        """
        g = self.gaussian_moments(params)
        if g is not None:
            return g
        n_bar = self.energy(params) / (params.hbar * params.omega) - 0.5
        return GaussianMoments.coherent(params, math.sqrt(max(n_bar, 0.0)))

    def qgrid_source(self, params: SystemParams, dim: int):
        if self.kind == "fock":
            return self.vector(dim)
        return self.gaussian_moments(params)


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams = field(default_factory=SystemParams)
    gains: ControlGains = field(default_factory=ControlGains)
    engine: str = "gaussian"
    initial: InitialState = field(default_factory=InitialState)
    dt: float = 1e-3
    t_final: float = 10.0
    n_trajectories: int = 1
    base_seed: int = 0
    stride: int = 1
    noise_dt: float | None = None
    fock_dim: int = 30
    spde: qf.SpdeConfig | None = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ParameterError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.n_trajectories < 1:
            raise ParameterError("n_trajectories must be >= 1")
        if not (self.dt > 0 and self.t_final > 0):
            raise ParameterError("dt and t_final must be > 0")
        if abs(self.steps * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ParameterError(f"t_final={self.t_final} is not a multiple of dt={self.dt}")
        if self.stride < 1:
            raise ParameterError("stride must be >= 1")
        if self.noise_dt is not None:
            ratio = self.dt / self.noise_dt
            if not (self.noise_dt > 0 and abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1):
                raise ParameterError("dt must be a whole multiple of noise_dt")
        if self.engine == "qfunc":
            spde = self.spde or qf.SpdeConfig(dt=self.dt)
            object.__setattr__(self, "spde", replace(spde, dt=self.dt))

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(0, self.steps + 1, self.stride)

    def seed(self, index: int) -> int:
        return self.base_seed + index


@dataclass
class BrownianPath:
    """Wiener increments on a uniform grid, shareable between integrators."""

    dt: float
    increments: np.ndarray

    @classmethod
    def generate(cls, dt: float, steps: int, rng) -> "BrownianPath":
        if not isinstance(rng, np.random.Generator):
            rng = trajectory_rng(rng)
        return cls(dt, rng.normal(0.0, math.sqrt(dt), int(steps)))

    def coarsen(self, factor: int) -> "BrownianPath":
        """Sum blocks of ``factor`` increments (an exact sub-sample of the path)."""
        factor = int(factor)
        if factor < 1 or len(self.increments) % factor:
            raise ParameterError(f"cannot coarsen {len(self.increments)} steps by {factor}")
        return BrownianPath(self.dt * factor,
                            self.increments.reshape(-1, factor).sum(axis=1))

    def save(self, path) -> None:
        np.savez(path, dt=self.dt, increments=self.increments)

    @classmethod
    def load(cls, path) -> "BrownianPath":
        with np.load(path) as f:
            return cls(float(f["dt"]), np.array(f["increments"]))

    def __len__(self) -> int:
        return len(self.increments)


def trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based stream for one trajectory."""
    return np.random.Generator(np.random.Philox(int(seed)))


def trajectory_noise(cfg: ExperimentConfig, index: int) -> np.ndarray:
    """Innovation increments used by trajectory ``index`` at step ``cfg.dt``."""
    rng = trajectory_rng(cfg.seed(index))
    if cfg.noise_dt is None:
        return rng.normal(0.0, math.sqrt(cfg.dt), cfg.steps)
    factor = int(round(cfg.dt / cfg.noise_dt))
    fine = BrownianPath.generate(cfg.noise_dt, cfg.steps * factor, rng)
    return fine.coarsen(factor).increments


class EnsembleError(RuntimeError):
    """A trajectory failed; completed trajectories are kept in ``partial``."""

    def __init__(self, message, seed, step, partial, cause):
        super().__init__(message)
        self.seed = seed
        self.step = step
        self.partial = partial
        self.cause = cause


def run_trajectory(cfg: ExperimentConfig, index: int) -> np.ndarray:
    """One trajectory sampled every ``cfg.stride`` steps.

    Returns rows ``(energy, q, p, Vqq, Vqp, Vpp)``.
    """
    noise = trajectory_noise(cfg, index)
    s = cfg.stride
    if cfg.engine == "gaussian":
        init = cfg.initial.gaussian_moments(cfg.params)
        if init is None:
            raise ParameterError("the Gaussian filter needs a Gaussian initial state")
        tr = integrate_filter(init, cfg.params, cfg.gains, noise=noise, dt=cfg.dt)
        table, energy = tr.states, tr.energy
    elif cfg.engine == "fock":
        init = cfg.initial.density(cfg.params, cfg.fock_dim)
        tr, _ = fk.evolve_sme(init, cfg.params, cfg.gains, noise=noise, dt=cfg.dt,
                              store_every=cfg.steps)
        table, energy = tr.moment_table, tr.energy
    else:
        src = cfg.initial.qgrid_source(cfg.params, cfg.fock_dim)
        tr = qf.run_qfunc_trajectory(src, cfg.params, cfg.gains, cfg.spde, noise=noise)
        table, energy = tr.moments, tr.energy
    return np.column_stack([energy, table])[::s]


def run_qfunc_snapshots(cfg: ExperimentConfig, snapshot_times, index: int = 0):
    """One Q-function trajectory as an EnsembleResult plus its snapshots."""
    if cfg.engine != "qfunc":
        raise ParameterError("snapshots need the qfunc engine")
    src = cfg.initial.qgrid_source(cfg.params, cfg.fock_dim)
    tr = qf.run_qfunc_trajectory(src, cfg.params, cfg.gains, cfg.spde,
                                 noise=trajectory_noise(cfg, index),
                                 snapshot_times=snapshot_times)
    rows = np.column_stack([tr.energy, tr.moments])[::cfg.stride]
    return _reduce(cfg, [rows], [cfg.seed(index)]), tr


def _worker(args):
    cfg, index = args
    try:
        return index, run_trajectory(cfg, index), None
    except (DivergenceError, fk.TruncationError) as exc:
        return index, None, exc


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_energy: np.ndarray
    stderr: np.ndarray
    mean_moments: np.ndarray
    trajectories: np.ndarray
    analytic_gaussian: np.ndarray
    analytic_ss: float
    seeds: np.ndarray
    config: ExperimentConfig

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def energies(self) -> np.ndarray:
        """Per-trajectory energies, shape ``(N, len(times))``."""
        return self.trajectories[:, :, 0]


def analytic_steady_energy(params: SystemParams, gains: ControlGains) -> float:
    """Long-time energy, or NaN where the closed form does not apply."""
    try:
        return steady_state_energy(params, gains)
    except ParameterError:
        return float("nan")


def _reduce(cfg: ExperimentConfig, rows: list[np.ndarray], seeds) -> EnsembleResult:
    data = np.stack(rows)
    n = len(rows)
    times = cfg.times
    mean = data.mean(axis=0)
    if n > 1:
        stderr = data[:, :, 0].std(axis=0, ddof=1) / math.sqrt(n)
    else:
        stderr = np.full(len(times), np.nan)
    ref = cfg.initial.reference_moments(cfg.params)
    curve = expected_energy_curve(ref, cfg.params, cfg.gains, times)
    return EnsembleResult(times, mean[:, 0], stderr, mean[:, 1:], data, curve,
                          analytic_steady_energy(cfg.params, cfg.gains),
                          np.asarray(seeds), cfg)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers < 1:
        raise ParameterError("worker count must be >= 1")
    return workers


def run_ensemble(cfg: ExperimentConfig, workers: int | None = None) -> EnsembleResult:
    """Run ``cfg.n_trajectories`` trajectories with seeds ``base_seed + i``.

    The reduction is by trajectory index, so results do not depend on the
    worker count.  Worker count defaults to ``$QCOOL_WORKERS`` (else 1).

    Raises
    ------
    EnsembleError
        If a trajectory diverges or overflows its basis.  The exception
        names the seed and step and carries the completed trajectories as an
        :class:`EnsembleResult` in ``partial`` (None if none completed).
    """
    workers = min(resolve_workers(workers), cfg.n_trajectories)
    jobs = [(cfg, i) for i in range(cfg.n_trajectories)]
    if workers == 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    results.sort(key=lambda r: r[0])
    ok = [(i, rows) for i, rows, exc in results if exc is None]
    bad = [(i, exc) for i, rows, exc in results if exc is not None]
    if bad:
        i, exc = bad[0]
        partial = _reduce(cfg, [r for _, r in ok], [cfg.seed(j) for j, _ in ok]) if ok else None
        step = getattr(exc, "step", None)
        raise EnsembleError(
            f"trajectory {i} (seed {cfg.seed(i)}) failed"
            + (f" at step {step}" if step is not None else "") + f": {exc}",
            cfg.seed(i), step, partial, exc)
    return _reduce(cfg, [r for _, r in ok], [cfg.seed(i) for i in range(cfg.n_trajectories)])


def window_means(result: EnsembleResult, fraction: float = 0.25) -> np.ndarray:
    """Per-trajectory time average of the energy over the final ``fraction``."""
    if not 0 < fraction <= 1:
        raise ParameterError("window fraction must be in (0, 1]")
    t = result.times
    start = t[-1] * (1 - fraction)
    return result.energies[:, t >= start - 1e-12].mean(axis=1)


@dataclass
class ConvergenceStats:
    settle_time: float
    asymptotic_mean: float
    stderr: float
    band: float
    reference: float


def convergence_stats(result: EnsembleResult, window: float = 0.25,
                      band: float | None = None, smooth: float | None = None) -> ConvergenceStats:
    """Settle time and long-time mean of the ensemble energy.

    The ensemble mean is smoothed by a trailing average over ``smooth``
    (default one oscillator period).  The settle time is the first output
    time after which the smoothed curve stays within ``band`` (default 5%)
    of the reference level, which is the analytic steady state when it
    exists and the window mean otherwise.
    """
    w = window_means(result, window)
    mean = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(len(w))) if len(w) > 1 else float("nan")
    ref = result.analytic_ss if math.isfinite(result.analytic_ss) else mean
    band = 0.05 * abs(ref) if band is None else band
    t = result.times
    if smooth is None:
        smooth = 2 * math.pi / result.config.params.omega
    dt_out = t[1] - t[0] if len(t) > 1 else 1.0
    width = max(1, int(round(smooth / dt_out)))
    c = np.cumsum(np.concatenate([[0.0], result.mean_energy]))
    idx = np.arange(len(t))
    lo = np.maximum(0, idx + 1 - width)
    running = (c[idx + 1] - c[lo]) / (idx + 1 - lo)
    outside = np.nonzero(np.abs(running - ref) > band)[0]
    if len(outside) == 0:
        settle = float(t[0])
    elif outside[-1] == len(t) - 1:
        settle = float("inf")
    else:
        settle = float(t[outside[-1] + 1])
    return ConvergenceStats(settle, mean, se, band, ref)


@dataclass
class SweepRow:
    value: float
    analytic: float
    simulated: float
    stderr: float
    flag: str = ""


@dataclass
class SweepTable:
    param: str
    rows: list[SweepRow]
    argmin: float
    optimum: float

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def _sweep(cfg: ExperimentConfig, param: str, values, simulate: bool, workers) -> SweepTable:
    rows = []
    for v in values:
        v = float(v)
        if param == "k_p":
            c = replace(cfg, gains=replace(cfg.gains, k_p=v))
        else:
            c = replace(cfg, params=replace(cfg.params, alpha=v))
        try:
            analytic = steady_state_energy(c.params, c.gains)
            flag = ""
        except UnstableGainError as exc:
            analytic, flag = float("nan"), f"unstable: {exc}"
        sim = se = float("nan")
        if simulate and not flag:
            w = window_means(run_ensemble(c, workers))
            sim = float(w.mean())
            se = float(w.std(ddof=1) / math.sqrt(len(w))) if len(w) > 1 else float("nan")
        rows.append(SweepRow(v, analytic, sim, se, flag))
    a = np.array([r.analytic for r in rows])
    argmin = float(rows[int(np.nanargmin(a))].value) if np.any(np.isfinite(a)) else float("nan")
    optimum = float("nan")
    if param == "k_p" and cfg.params.alpha > 0:
        optimum = optimal_gain(cfg.params)
    return SweepTable(param, rows, argmin, optimum)


def sweep_gain(cfg: ExperimentConfig, kp_values, simulate: bool = False,
               workers: int | None = None) -> SweepTable:
    """Steady-state energy against k_p; simulated column when ``simulate``.

    Non-negative gains are flagged rather than fatal.
    """
    return _sweep(cfg, "k_p", kp_values, simulate, workers)


def sweep_coupling(cfg: ExperimentConfig, alpha_values, simulate: bool = False,
                   workers: int | None = None) -> SweepTable:
    alpha_values = np.asarray(alpha_values, dtype=float)
    if np.any(alpha_values <= 0) or np.any(np.diff(alpha_values) <= 0):
        raise ParameterError("alpha values must be positive and ascending")
    return _sweep(cfg, "alpha", alpha_values, simulate, workers)
