"""Physical parameters and the linear-quadratic matrix model.

All matrices use the ``(q, p)`` ordering.  Units are whatever the caller
supplies; nothing is rescaled internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """A physical parameter lies outside its allowed domain."""


class StateValidityError(ValueError):
    """A state violates the Heisenberg bound or another physical constraint."""


class DivergenceError(FloatingPointError):
    """An integrator produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class TruncationError(RuntimeError):
    """Population leaked into the top of a truncated Fock basis."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemParams:
    hbar: float = 1.0
    mass: float = 1.0
    omega: float = 1.0
    alpha: float = 0.0
    eta: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "omega"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be > 0, got {v!r}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ParameterError(f"alpha must be >= 0, got {self.alpha!r}")
        if not (np.isfinite(self.eta) and 0 < self.eta <= 1):
            raise ParameterError(f"eta must satisfy eta ∈ (0,1], got {self.eta!r}")

    @property
    def x_scale(self) -> float:
        """Position zero-point scale sqrt(hbar / 2 m omega)."""
        return float(np.sqrt(self.hbar / (2 * self.mass * self.omega)))

    @property
    def p_scale(self) -> float:
        """Momentum zero-point scale sqrt(hbar m omega / 2)."""
        return float(np.sqrt(self.hbar * self.mass * self.omega / 2))

    def ground_covariance(self) -> np.ndarray:
        return np.diag([self.hbar / (2 * self.mass * self.omega),
                        self.hbar * self.mass * self.omega / 2])


@dataclass(frozen=True)
class ControlGains:
    k_q: float = 0.0
    k_p: float = 0.0

    def control(self, q_mean: float, p_mean: float) -> float:
        return self.k_q * q_mean + self.k_p * p_mean


SYMPLECTIC = _freeze([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class SystemMatrices:
    G: np.ndarray
    Sigma: np.ndarray
    B_col: np.ndarray
    L_vec: np.ndarray
    D: np.ndarray
    K: np.ndarray
    hbar: float = field(default=1.0)

    @property
    def A(self) -> np.ndarray:
        return self.Sigma @ self.G

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A + self.K

    def is_hurwitz(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.closed_loop).real < 0))


def build_system_matrices(params: SystemParams, gains: ControlGains) -> SystemMatrices:
    """Assemble the quadratic-form, drift, diffusion and gain matrices.

    ``D`` is computed as ``hbar^2 Sigma L L^T Sigma^T`` rather than written
    down, so it stays consistent with ``L`` by construction.
    """
    if not isinstance(params, SystemParams):
        raise ParameterError("params must be a SystemParams")
    m, w, hbar = params.mass, params.omega, params.hbar
    G = np.diag([m * w**2, 1.0 / m])
    L = np.array([np.sqrt(params.alpha), 0.0])
    D = hbar**2 * SYMPLECTIC @ np.outer(L, L) @ SYMPLECTIC.T
    K = np.array([[0.0, 0.0], [gains.k_q, gains.k_p]])
    return SystemMatrices(
        G=_freeze(G),
        Sigma=SYMPLECTIC,
        B_col=_freeze([0.0, 1.0]),
        L_vec=_freeze(L),
        D=_freeze(D),
        K=_freeze(K),
        hbar=hbar,
    )


@dataclass(frozen=True)
class FockWorkspace:
    """Dense operators in the number basis |0>, ..., |dim-1>."""

    dim: int
    annihilation: np.ndarray
    q_op: np.ndarray
    p_op: np.ndarray
    number_op: np.ndarray
    hamiltonian_op: np.ndarray
    params: SystemParams

    @property
    def energies(self) -> np.ndarray:
        return self.params.hbar * self.params.omega * (np.arange(self.dim) + 0.5)


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def fock_workspace(params: SystemParams, dim: int = 30) -> FockWorkspace:
    if int(dim) != dim or dim < 2:
        raise ParameterError(f"Fock dimension must be an integer >= 2, got {dim!r}")
    dim = int(dim)
    a = annihilation(dim)
    ad = a.conj().T
    q = params.x_scale * (a + ad)
    p = 1j * params.p_scale * (ad - a)
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    # diagonal by construction: the truncated p^2 + q^2 picks up a spurious
    # entry in the last row that the exact spectrum does not have
    h = params.hbar * params.omega * (n + 0.5 * np.eye(dim))
    return FockWorkspace(dim, _freeze(a), _freeze(q), _freeze(p), _freeze(n),
                         _freeze(h), params)


def dark_state(dim: int = 30) -> np.ndarray:
    """(|1> + |4>)/sqrt(2): zero position and momentum means, energy 3 hbar omega."""
    if int(dim) != dim or dim < 5:
        raise ParameterError(f"dark state needs dim >= 5, got {dim!r}")
    psi = np.zeros(int(dim), dtype=complex)
    psi[1] = psi[4] = 1 / np.sqrt(2)
    return psi


def heisenberg_margin(cov: np.ndarray, hbar: float) -> float:
    cov = np.asarray(cov, dtype=float)
    return float(cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0] - hbar**2 / 4)


def check_heisenberg(cov: np.ndarray, hbar: float, tol: float = 1e-12) -> None:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
        raise StateValidityError("covariance is not symmetric")
    if cov[0, 0] <= 0 or cov[1, 1] <= 0:
        raise StateValidityError("covariance diagonal must be positive")
    if heisenberg_margin(cov, hbar) < -tol * max(1.0, hbar**2):
        raise StateValidityError(
            f"det V = {np.linalg.det(cov):.6g} violates the bound hbar^2/4 = {hbar**2 / 4:.6g}")


def gaussian_energy(moments, matrices: SystemMatrices) -> float:
    """Conditional energy 1/2 x^T G x + 1/2 Tr[G V] of a Gaussian state."""
    mean = np.asarray(moments.mean, dtype=float)
    cov = np.asarray(moments.cov, dtype=float)
    check_heisenberg(cov, matrices.hbar)
    G = matrices.G
    return float(0.5 * mean @ G @ mean + 0.5 * np.trace(G @ cov))
