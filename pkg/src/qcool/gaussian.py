"""Gaussian conditional-moment filter and its analytic steady state.

The conditional means obey a linear SDE driven by the innovation and the
symmetrized covariance obeys a deterministic Riccati equation that does not
depend on the feedback gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import kernels
from .model import (
    ControlGains,
    DivergenceError,
    ParameterError,
    SystemMatrices,
    SystemParams,
    build_system_matrices,
    check_heisenberg,
)


class DegenerateMeasurementError(ParameterError):
    """A steady-state quantity was requested without measurement (alpha = 0)."""


class UnstableGainError(ParameterError):
    """The gains do not give a damped closed loop."""


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def ground(cls, params: SystemParams, mean=(0.0, 0.0)) -> "GaussianMoments":
        return cls(np.asarray(mean, dtype=float), params.ground_covariance())

    @classmethod
    def coherent(cls, params: SystemParams, beta: complex) -> "GaussianMoments":
        beta = complex(beta)
        mean = (2 * params.x_scale * beta.real, 2 * params.p_scale * beta.imag)
        return cls.ground(params, mean)

    def as_vector(self) -> np.ndarray:
        """``(q, p, Vqq, Vqp, Vpp)``."""
        return np.array([self.mean[0], self.mean[1],
                         self.cov[0, 0], self.cov[0, 1], self.cov[1, 1]])

    @classmethod
    def from_vector(cls, v) -> "GaussianMoments":
        return cls(np.array([v[0], v[1]]), np.array([[v[2], v[3]], [v[3], v[4]]]))


def _sym(vqq, vqp, vpp) -> np.ndarray:
    return np.array([[vqq, vqp], [vqp, vpp]])


@dataclass
class FilterTrajectory:
    """Output of :func:`integrate_filter`.

    ``states`` has one row ``(q, p, Vqq, Vqp, Vpp)`` per time point, and
    ``innovations``/``record`` one entry per step.
    """

    times: np.ndarray
    states: np.ndarray
    innovations: np.ndarray
    record: np.ndarray
    energy: np.ndarray
    params: SystemParams

    @property
    def means(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def covs(self) -> np.ndarray:
        s = self.states
        return np.stack([np.stack([s[:, 2], s[:, 3]], -1),
                         np.stack([s[:, 3], s[:, 4]], -1)], -2)

    def moments(self, k: int) -> GaussianMoments:
        return GaussianMoments.from_vector(self.states[k])

    def __len__(self) -> int:
        return len(self.times)


def riccati_rhs(V, matrices: SystemMatrices, eta: float) -> np.ndarray:
    """A V + V A^T + D - 4 eta V L L^T V."""
    V = np.asarray(V, dtype=float)
    A = matrices.A
    L = matrices.L_vec
    VL = V @ L
    out = A @ V + V @ A.T + matrices.D - 4 * eta * np.outer(VL, VL)
    return 0.5 * (out + out.T)


def conditional_energy(states: np.ndarray, params: SystemParams) -> np.ndarray:
    m, w = params.mass, params.omega
    q, p, vqq, _, vpp = (states[..., i] for i in range(5))
    return 0.5 * m * w**2 * (q * q + vqq) + 0.5 * (p * p + vpp) / m


def integrate_filter(init: GaussianMoments, params: SystemParams, gains: ControlGains,
                     noise=None, dt: float | None = None, steps: int | None = None,
                     rng: np.random.Generator | int | None = None,
                     scheme: str = "heun") -> FilterTrajectory:
    """Integrate the conditional means and covariance.

    Parameters
    ----------
    init : GaussianMoments
        Initial conditional state; must satisfy the Heisenberg bound.
    noise : array_like, optional
        Wiener increments, one per step, each of variance ``dt``.  When
        omitted they are drawn from ``rng`` (a Generator or a seed).
    dt : float, optional
        Step size; defaults to ``1e-3 * 2 pi / omega``.
    steps : int, optional
        Number of steps; inferred from ``noise`` when given.
    scheme : {"heun", "euler"}
        Stepping of the means.  The covariance always takes RK4 steps.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite; the message names the step.
    """
    check_heisenberg(init.cov, params.hbar)
    if dt is None:
        dt = 1e-3 * 2 * math.pi / params.omega
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    if noise is None:
        if steps is None:
            raise ParameterError("either noise or steps is required")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        noise = rng.normal(0.0, math.sqrt(dt), int(steps))
    noise = np.asarray(noise, dtype=float)
    if steps is not None and len(noise) != steps:
        raise ParameterError(f"noise has {len(noise)} increments, expected {steps}")
    code = {"heun": 0, "euler": 1}.get(scheme)
    if code is None:
        raise ParameterError(f"unknown scheme {scheme!r}")
    states, record, fail = kernels.gaussian_run(
        init.as_vector(), params.mass, params.omega, params.hbar, params.alpha,
        params.eta, gains.k_q, gains.k_p, noise, dt, code)
    if fail >= 0:
        raise DivergenceError(f"Gaussian filter diverged at step {fail} (dt={dt:g})", fail)
    times = dt * np.arange(len(noise) + 1)
    return FilterTrajectory(times, states, noise, record,
                            conditional_energy(states, params), params)


def integrate_riccati(V0, params: SystemParams, t_final: float,
                      dt: float = 1e-3) -> np.ndarray:
    """Covariance after integrating the Riccati flow (RK4) from ``V0``."""
    V0 = np.asarray(V0, dtype=float)
    steps = int(round(t_final / dt))
    x0 = np.array([0.0, 0.0, V0[0, 0], V0[0, 1], V0[1, 1]])
    states, _, fail = kernels.gaussian_run(
        x0, params.mass, params.omega, params.hbar, params.alpha, params.eta, 0.0, 0.0,
        np.zeros(steps), dt, 0)
    if fail >= 0:
        raise DivergenceError(f"Riccati flow diverged at step {fail}", fail)
    _, _, vqq, vqp, vpp = states[-1]
    return _sym(vqq, vqp, vpp)


def _require_measurement(params: SystemParams) -> None:
    if params.alpha <= 0:
        raise DegenerateMeasurementError(
            "steady state needs alpha > 0; without measurement use the ground-state covariance")


def riccati_xi(params: SystemParams) -> float:
    _require_measurement(params)
    m, w = params.mass, params.omega
    return math.sqrt(1 + 4 * params.hbar**2 * params.eta * params.alpha**2 / (m**2 * w**4))


def steady_state_covariance(params: SystemParams) -> np.ndarray:
    """Closed-form stabilizing solution of the algebraic Riccati equation."""
    xi = riccati_xi(params)
    m, w, a, e = params.mass, params.omega, params.alpha, params.eta
    # (xi - 1) written to avoid cancellation for tiny alpha
    xim1 = (4 * params.hbar**2 * e * a**2 / (m**2 * w**4)) / (xi + 1)
    root = math.sqrt(xim1)
    vqq = w / (2 * math.sqrt(2) * a * e) * root
    vpp = m**2 * w**3 / (2 * math.sqrt(2) * a * e) * xi * root
    vqp = m * w**2 / (4 * a * e) * xim1
    return _sym(vqq, vqp, vpp)


def purity(V, hbar: float = 1.0) -> float:
    """Purity of a Gaussian state with covariance ``V``."""
    V = np.asarray(V, dtype=float)
    check_heisenberg(V, hbar, tol=1e-10)
    det = V[0, 0] * V[1, 1] - V[0, 1] ** 2
    return min(1.0, 0.5 * hbar / math.sqrt(det))


def _check_gains(gains: ControlGains) -> None:
    if gains.k_q != 0:
        raise ParameterError("the steady-state energy formula assumes k_q = 0")
    if not gains.k_p < 0:
        raise UnstableGainError(f"k_p must be < 0 for a damped loop, got {gains.k_p}")


def steady_state_energy(params: SystemParams, gains: ControlGains) -> float:
    """Long-time expected energy under feedback ``u = k_p p``."""
    _check_gains(gains)
    V = steady_state_covariance(params)
    m, w, hbar = params.mass, params.omega, params.hbar
    a, e, kp = params.alpha, params.eta, gains.k_p
    vqq, vqp, vpp = V[0, 0], V[0, 1], V[1, 1]
    return (0.5 * m * w**2 * vqq + vpp / (2 * m)
            + e * a * (2 * vqq * vqp - m * kp * vqq**2 - hbar**2 / (2 * e * m * kp)))


def optimal_gain(params: SystemParams) -> float:
    """Momentum gain minimizing :func:`steady_state_energy`.

    The energy has the form ``c0 - a kp - b / kp`` with ``a = eta alpha m Vqq^2``
    and ``b = alpha hbar^2 / 2m``, so the minimizer is ``-sqrt(b / a)``.
    """
    V = steady_state_covariance(params)
    return -params.hbar / (params.mass * V[0, 0] * math.sqrt(2 * params.eta))


def stationary_mean_moment(params: SystemParams, gains: ControlGains) -> np.ndarray:
    """Stationary E[x x^T] of the conditional means with V frozen at its limit.

    Solves (A+K) M + M (A+K)^T + 4 eta V L L^T V = 0.
    """
    mats = build_system_matrices(params, gains)
    if not mats.is_hurwitz():
        raise UnstableGainError("closed loop A + K is not Hurwitz")
    V = steady_state_covariance(params)
    VL = V @ mats.L_vec
    N = 4 * params.eta * np.outer(VL, VL)
    M = solve_continuous_lyapunov(mats.closed_loop, -N)
    return 0.5 * (M + M.T)


def expected_energy_curve(init: GaussianMoments, params: SystemParams, gains: ControlGains,
                          times, max_step: float | None = None) -> np.ndarray:
    """Ensemble-averaged energy for a Gaussian initial state.

    Integrates the second moment of the means, M' = (A+K)M + M(A+K)^T +
    4 eta V L L^T V, alongside the Riccati flow with RK4 steps no longer
    than ``max_step`` (default 1e-3 of a period), and returns
    1/2 Tr[G (M + V)] at each requested time (which must start at 0).
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0 or np.any(np.diff(times) < 0):
        raise ParameterError("times must start at 0 and be non-decreasing")
    m, w = params.mass, params.omega
    mw2, inv_m = m * w * w, 1.0 / m
    g = 4 * params.eta * params.alpha
    diff = params.hbar**2 * params.alpha
    kq, kp = gains.k_q - mw2, gains.k_p
    h_max = 1e-3 * 2 * math.pi / w if max_step is None else max_step

    def rhs(y):
        mqq, mqp, mpp, vqq, vqp, vpp = y
        # closed loop [[0, 1/m], [kq, kp]]; innovation gain 4 eta (V L)(V L)^T
        nqq, nqp, npp = g * vqq * vqq, g * vqq * vqp, g * vqp * vqp
        return (2 * mqp * inv_m + nqq,
                mpp * inv_m + kq * mqq + kp * mqp + nqp,
                2 * (kq * mqp + kp * mpp) + npp,
                2 * vqp * inv_m - nqq,
                vpp * inv_m - mw2 * vqq - nqp,
                -2 * mw2 * vqp + diff - npp)

    def energy(y):
        return 0.5 * mw2 * (y[0] + y[3]) + 0.5 * inv_m * (y[2] + y[5])

    mu = init.mean
    y = (mu[0] * mu[0], mu[0] * mu[1], mu[1] * mu[1],
         init.cov[0, 0], init.cov[0, 1], init.cov[1, 1])
    out = np.empty(len(times))
    out[0] = energy(y)
    for k in range(1, len(times)):
        span = times[k] - times[k - 1]
        n = math.ceil(span / h_max) if span > 0 else 0
        for _ in range(n):
            h = span / n
            k1 = rhs(y)
            k2 = rhs([a + 0.5 * h * b for a, b in zip(y, k1)])
            k3 = rhs([a + 0.5 * h * b for a, b in zip(y, k2)])
            k4 = rhs([a + h * b for a, b in zip(y, k3)])
            y = tuple(a + h / 6 * (b + 2 * c + 2 * d + e)
                      for a, b, c, d, e in zip(y, k1, k2, k3, k4))
        out[k] = energy(y)
    return out
