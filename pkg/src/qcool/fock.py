"""Filtering in a truncated number basis.

The normalized stochastic master equation (conditional state) and the
linear unnormalized filter driven by a measurement record share one
discretization.  The deterministic master equation gives the
unconditional state.

Each stochastic step applies a measurement operator in Kraus form,

    M = 1 + (i u / hbar) q dt - (alpha/2) q^2 dt + sqrt(eta alpha) q dY
          + (eta alpha / 2) q^2 (dY^2 - dt),
    sigma -> M sigma M^+ + (1 - eta) alpha q sigma q dt,

with dY = 2 sqrt(eta alpha) dq_meas, wrapped in two exact half steps of the
free oscillator rotation.  The normalized filter is this map followed by a
trace renormalization, with dY = 2 sqrt(eta alpha) <q> dt + dW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .gaussian import GaussianMoments
from .model import (
    ControlGains,
    DivergenceError,
    FockWorkspace,
    ParameterError,
    StateValidityError,
    SystemParams,
    TruncationError,
    dark_state,
    fock_workspace,
)

DEFAULT_DIM = 30
TRUNCATION_LIMIT = 1e-4
HEADROOM_LIMIT = 1e-6


@dataclass(frozen=True)
class FockDensity:
    matrix: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ParameterError("density matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @classmethod
    def from_vector(cls, psi) -> "FockDensity":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    def normalize(self) -> "FockDensity":
        return FockDensity(self.matrix / self.trace, True)

    def validate(self, herm_tol: float = 1e-10, trace_tol: float = 1e-8,
                 pos_tol: float = 1e-8) -> None:
        m = self.matrix
        if not np.all(np.isfinite(m)):
            raise StateValidityError("density matrix has non-finite entries")
        scale = max(1.0, abs(self.trace))
        if np.max(np.abs(m - m.conj().T)) > herm_tol * scale:
            raise StateValidityError("density matrix is not Hermitian")
        if self.normalized:
            if abs(self.trace - 1) > trace_tol:
                raise StateValidityError(f"trace {self.trace!r} is not 1")
            if np.linalg.eigvalsh(m).min() < -pos_tol:
                raise StateValidityError("density matrix has negative eigenvalues")
        elif not self.trace > 0:
            raise StateValidityError("unnormalized state must have positive trace")


@dataclass(frozen=True)
class MeasurementRecord:
    """Homodyne record ``dq_meas`` per step plus the control that was applied."""

    dt: float
    increments: np.ndarray
    controls: np.ndarray | None = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        object.__setattr__(self, "increments", inc)
        ctl = np.zeros_like(inc) if self.controls is None else np.asarray(self.controls, float)
        if ctl.shape != inc.shape:
            raise ParameterError("controls and increments differ in length")
        object.__setattr__(self, "controls", ctl)

    def __len__(self) -> int:
        return len(self.increments)


@dataclass
class FockTrajectory:
    """Per-step observables plus density matrices every ``store_every`` steps."""

    times: np.ndarray
    stats: np.ndarray
    states: np.ndarray
    store_every: int
    params: SystemParams
    normalized: bool = True

    @property
    def q_mean(self) -> np.ndarray:
        return self.stats[:, kernels.F_Q]

    @property
    def p_mean(self) -> np.ndarray:
        return self.stats[:, kernels.F_P]

    @property
    def energy(self) -> np.ndarray:
        return self.stats[:, kernels.F_E]

    @property
    def top_population(self) -> np.ndarray:
        return self.stats[:, kernels.F_TOP]

    @property
    def log_norm(self) -> np.ndarray:
        """log Tr of the unnormalized state (zero drift for the normalized filter)."""
        return self.stats[:, kernels.F_LOGN]

    @property
    def moment_table(self) -> np.ndarray:
        """Rows ``(q, p, Vqq, Vqp, Vpp)``."""
        s = self.stats
        q, p = s[:, kernels.F_Q], s[:, kernels.F_P]
        return np.column_stack([q, p, s[:, kernels.F_QQ] - q * q,
                                s[:, kernels.F_QP] - q * p, s[:, kernels.F_PP] - p * p])

    @property
    def state_times(self) -> np.ndarray:
        return self.times[:: self.store_every][: len(self.states)]

    def density(self, j: int) -> FockDensity:
        """j-th stored (normalized) density matrix."""
        return FockDensity(self.states[j], True)

    def unnormalized(self, j: int) -> FockDensity:
        k = j * self.store_every
        return FockDensity(self.states[j] * math.exp(self.log_norm[k]), False)


def coherent_vector(beta: complex, dim: int) -> np.ndarray:
    beta = complex(beta)
    n = np.arange(dim)
    logs = -0.5 * abs(beta) ** 2 - 0.5 * np.array([math.lgamma(k + 1) for k in n])
    amps = np.exp(logs) * np.power(beta, n) if beta != 0 else (n == 0).astype(complex)
    return amps.astype(complex)


def coherent_density(beta: complex, dim: int = DEFAULT_DIM, tol: float = 1e-10) -> FockDensity:
    """|beta><beta| in the truncated basis; raises if the tail is cut off."""
    if dim < 2:
        raise ParameterError("dim must be >= 2")
    psi = coherent_vector(beta, dim)
    lost = 1 - float(np.vdot(psi, psi).real)
    if lost > tol:
        raise TruncationError(f"dim={dim} loses {lost:.2e} of |beta={beta}> norm")
    return FockDensity(np.outer(psi, psi.conj()) / (1 - lost))


def dark_density(dim: int = DEFAULT_DIM) -> FockDensity:
    return FockDensity.from_vector(dark_state(dim))


def _check_headroom(state: FockDensity) -> None:
    d = np.diag(state.matrix).real / state.trace
    if d[-1] + d[-2] > HEADROOM_LIMIT:
        raise TruncationError(
            f"initial population {d[-1] + d[-2]:.2e} in the top two levels exceeds "
            f"{HEADROOM_LIMIT:g}; increase dim")


def _default_dt(params: SystemParams) -> float:
    return 1e-4 * 2 * math.pi / params.omega


def _store_every(steps: int, store_every: int | None) -> int:
    if store_every is None:
        return max(1, steps // 1000)
    if store_every < 1:
        raise ParameterError("store_every must be >= 1")
    return int(store_every)


def _finish(stats, states, fail, dt, store, params, normalized, limit, what):
    if fail >= 0:
        raise DivergenceError(f"{what} diverged at step {fail}", fail)
    top = stats[:, kernels.F_TOP]
    if np.max(top) > limit:
        k = int(np.argmax(top > limit))
        raise TruncationError(
            f"{what}: top-level population {top[k]:.2e} at step {k} exceeds {limit:g}")
    times = dt * np.arange(len(stats))
    return FockTrajectory(times, stats, states, store, params, normalized)


def evolve_sme(init: FockDensity, params: SystemParams, gains: ControlGains,
               noise=None, dt: float | None = None, steps: int | None = None,
               rng: np.random.Generator | int | None = None,
               store_every: int | None = None,
               truncation_limit: float = TRUNCATION_LIMIT):
    """Integrate the conditional state under measurement and feedback.

    The control ``u = k_q <q> + k_p <p>`` enters the Hamiltonian as ``-u q``
    and is evaluated at the start of each step.

    Returns
    -------
    (FockTrajectory, MeasurementRecord)
    """
    if not init.normalized:
        raise ParameterError("the conditional filter needs a normalized initial state")
    init.validate()
    _check_headroom(init)
    dt = _default_dt(params) if dt is None else float(dt)
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    if noise is None:
        if steps is None:
            raise ParameterError("either noise or steps is required")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        noise = rng.normal(0.0, math.sqrt(dt), int(steps))
    noise = np.asarray(noise, dtype=float)
    steps = len(noise)
    store = _store_every(steps, store_every)
    stats, record, used, states, fail = kernels.fock_run(
        init.matrix, params.hbar, params.mass, params.omega, params.alpha, params.eta,
        gains.k_q, gains.k_p, noise, np.empty(0), dt, 0, store)
    traj = _finish(stats, states, fail, dt, store, params, True, truncation_limit,
                   "stochastic master equation")
    return traj, MeasurementRecord(dt, record, used)


def evolve_zakai(init: FockDensity, params: SystemParams, record: MeasurementRecord,
                 dt: float | None = None, steps: int | None = None,
                 store_every: int | None = None,
                 truncation_limit: float = TRUNCATION_LIMIT) -> FockTrajectory:
    """Linear (unnormalized) filter driven by an external record.

    The record's controls are replayed as the feedback Hamiltonian.  The
    stored states are rescaled to unit trace; the discarded scale is kept in
    ``log_norm`` so :meth:`FockTrajectory.unnormalized` recovers sigma_t.
    """
    if not init.trace > 0:
        raise StateValidityError("initial trace must be positive")
    dt = record.dt if dt is None else float(dt)
    if not math.isclose(dt, record.dt, rel_tol=1e-12):
        raise ParameterError("dt differs from the record's step")
    n = len(record) if steps is None else int(steps)
    if n > len(record):
        raise ParameterError(f"record has {len(record)} steps, {n} requested")
    store = _store_every(n, store_every)
    stats, _, _, states, fail = kernels.fock_run(
        init.matrix, params.hbar, params.mass, params.omega, params.alpha, params.eta,
        0.0, 0.0, record.increments[:n], record.controls[:n], dt, 1, store)
    return _finish(stats, states, fail, dt, store, params, False, truncation_limit,
                   "unnormalized filter")


def lindblad_rhs(rho: np.ndarray, ws: FockWorkspace, alpha: float) -> np.ndarray:
    H = ws.hamiltonian_op
    q = ws.q_op
    hbar = ws.params.hbar
    comm = H @ rho - rho @ H
    q2 = q @ q
    return -1j / hbar * comm + alpha * (q @ rho @ q - 0.5 * (q2 @ rho + rho @ q2))


def evolve_master(init: FockDensity, params: SystemParams, dt: float | None = None,
                  steps: int = 0, store_every: int | None = None,
                  truncation_limit: float = TRUNCATION_LIMIT) -> FockTrajectory:
    """Unconditional evolution under measurement back-action only (RK4)."""
    init.validate()
    dt = 1e-3 * 2 * math.pi / params.omega if dt is None else float(dt)
    ws = fock_workspace(params, init.dim)
    store = _store_every(steps, store_every)
    rho = init.matrix.copy()
    nstore = steps // store + 1
    states = np.empty((nstore, init.dim, init.dim), dtype=complex)
    stats = np.empty((steps + 1, kernels.N_FOCK_STATS))
    stats[0] = density_stats(rho, ws)
    states[0] = rho
    a = params.alpha
    for k in range(steps):
        k1 = lindblad_rhs(rho, ws, a)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, ws, a)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, ws, a)
        k4 = lindblad_rhs(rho + dt * k3, ws, a)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if not np.all(np.isfinite(rho)):
            raise DivergenceError(f"master equation diverged at step {k}", k)
        stats[k + 1] = density_stats(rho, ws)
        if (k + 1) % store == 0:
            states[(k + 1) // store] = rho
    return _finish(stats, states, -1, dt, store, params, True, truncation_limit,
                   "master equation")


def density_stats(rho: np.ndarray, ws: FockWorkspace) -> np.ndarray:
    """One row of the statistics table (same columns as the kernels)."""
    tr = np.trace(rho).real
    q, p = ws.q_op, ws.p_op

    def ev(op):
        return np.sum(op * rho.T).real / tr

    qp = 0.5 * (q @ p + p @ q)
    d = np.diag(rho).real / tr
    return np.array([ev(q), ev(p), ev(q @ q), ev(p @ p), ev(qp),
                     ev(ws.hamiltonian_op), d[-1] + d[-2], math.log(tr)])


@dataclass
class FockMoments:
    gaussian: GaussianMoments
    energy: float
    purity: float
    gaussianity_residual: float = field(default=float("nan"))

    @property
    def mean(self) -> np.ndarray:
        return self.gaussian.mean

    @property
    def cov(self) -> np.ndarray:
        return self.gaussian.cov


def trace_distance(a, b) -> float:
    a = a.matrix if isinstance(a, FockDensity) else np.asarray(a)
    b = b.matrix if isinstance(b, FockDensity) else np.asarray(b)
    diff = a - b
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def gaussian_density(moments: GaussianMoments, params: SystemParams, dim: int,
                     pad: int = 40) -> FockDensity:
    """Gaussian state with the given first and second moments.

    A Gaussian state is exp(-c (x - <x>)^T V^{-1} (x - <x>)) up to
    normalization, with ``c = theta nu / (2 hbar)``, ``nu = sqrt(det V)`` and
    ``coth(theta / 2) = 2 nu / hbar``.  The quadratic form is diagonalized in
    an enlarged basis and the result cut back to ``dim``.
    """
    hbar = params.hbar
    V = moments.cov
    nu = math.sqrt(max(np.linalg.det(V), 0.0))
    ratio = 2 * nu / hbar
    if ratio < 1 - 1e-6:
        raise StateValidityError("covariance violates the uncertainty bound")
    big = fock_workspace(params, dim + pad)
    eye = np.eye(big.dim)
    xq = big.q_op - moments.mean[0] * eye
    xp = big.p_op - moments.mean[1] * eye
    W = np.linalg.inv(V)
    K = W[0, 0] * xq @ xq + W[0, 1] * (xq @ xp + xp @ xq) + W[1, 1] * xp @ xp
    lam, vec = np.linalg.eigh(0.5 * (K + K.conj().T))
    if ratio <= 1 + 1e-9:
        weights = np.zeros_like(lam)
        weights[0] = 1.0
    else:
        theta = math.log((ratio + 1) / (ratio - 1))
        weights = np.exp(-theta * nu / (2 * hbar) * (lam - lam[0]))
    rho = (vec * weights) @ vec.conj().T
    rho = rho[:dim, :dim]
    return FockDensity(rho / np.trace(rho).real)


def moments(state: FockDensity, workspace: FockWorkspace,
            residual: bool = True) -> FockMoments:
    """Means, symmetrized covariance, energy, purity and Gaussianity residual.

    The residual is the trace distance to the Gaussian state with the same
    first and second moments.
    """
    rho = state.matrix / state.trace
    row = density_stats(rho, workspace)
    q, p = row[kernels.F_Q], row[kernels.F_P]
    cov = np.array([[row[kernels.F_QQ] - q * q, row[kernels.F_QP] - q * p],
                    [row[kernels.F_QP] - q * p, row[kernels.F_PP] - p * p]])
    g = GaussianMoments(np.array([q, p]), cov)
    pur = float(np.real(np.vdot(rho, rho)))
    res = float("nan")
    if residual:
        res = trace_distance(rho, gaussian_density(g, workspace.params, workspace.dim))
    return FockMoments(g, float(row[kernels.F_E]), pur, res)
