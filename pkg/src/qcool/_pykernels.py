"""Pure numpy implementations of the inner integration loops.

These are the reference semantics for the compiled versions in
``_ckernels.pyx``; both must agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np

# columns of the Fock statistics table
F_Q, F_P, F_QQ, F_PP, F_QP, F_E, F_TOP, F_LOGN = range(8)
N_FOCK_STATS = 8

# columns of the Q-grid statistics table
G_MASS, G_X, G_Y, G_XX, G_YY, G_XY, G_MIN, G_MAX = range(8)
N_GRID_STATS = 8


def gaussian_run(x0, mass, omega, hbar, alpha, eta, k_q, k_p, dW, dt, scheme=0):
    """Propagate conditional means and covariance of the Gaussian filter.

    ``x0`` is ``(q, p, Vqq, Vqp, Vpp)``.  The covariance takes an RK4 step;
    the means take a stochastic Heun step (``scheme=0``) or plain
    Euler-Maruyama (``scheme=1``), both using the covariance at the two ends
    of the step for the noise coefficient.  Returns the state table with
    ``len(dW) + 1`` rows, the measurement record ``dq_meas`` per step and
    the index of the first non-finite step (-1 if none).
    """
    dW = np.asarray(dW, dtype=float)
    steps = dW.shape[0]
    out = np.empty((steps + 1, 5))
    record = np.empty(steps)
    q, p, vqq, vqp, vpp = (float(v) for v in x0)
    out[0] = q, p, vqq, vqp, vpp
    mw2 = mass * omega * omega
    inv_m = 1.0 / mass
    g = 4.0 * eta * alpha
    diff = hbar * hbar * alpha
    gain = 2.0 * math.sqrt(eta * alpha)
    rec_scale = 1.0 / gain if gain > 0 else 0.0
    kq = k_q - mw2

    def rhs(a, b, c):
        return (2.0 * b * inv_m - g * a * a,
                c * inv_m - mw2 * a - g * a * b,
                -2.0 * mw2 * b + diff - g * b * b)

    for k in range(steps):
        w = dW[k]
        record[k] = q * dt + w * rec_scale
        k1 = rhs(vqq, vqp, vpp)
        k2 = rhs(vqq + 0.5 * dt * k1[0], vqp + 0.5 * dt * k1[1], vpp + 0.5 * dt * k1[2])
        k3 = rhs(vqq + 0.5 * dt * k2[0], vqp + 0.5 * dt * k2[1], vpp + 0.5 * dt * k2[2])
        k4 = rhs(vqq + dt * k3[0], vqp + dt * k3[1], vpp + dt * k3[2])
        nqq = vqq + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        nqp = vqp + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        npp = vpp + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        fq = p * inv_m
        fp = kq * q + k_p * p
        if scheme == 0:
            qt = q + fq * dt + gain * vqq * w
            pt = p + fp * dt + gain * vqp * w
            q, p = (q + 0.5 * (fq + pt * inv_m) * dt + 0.5 * gain * (vqq + nqq) * w,
                    p + 0.5 * (fp + kq * qt + k_p * pt) * dt + 0.5 * gain * (vqp + nqp) * w)
        else:
            q, p = q + fq * dt + gain * vqq * w, p + fp * dt + gain * vqp * w
        vqq, vqp, vpp = nqq, nqp, npp
        out[k + 1] = q, p, vqq, vqp, vpp
        if not (math.isfinite(q) and math.isfinite(p) and math.isfinite(vqq)
                and math.isfinite(vqp) and math.isfinite(vpp)):
            return out[: k + 2], record[: k + 1], k
    return out, record, -1


def _fock_ops(dim, hbar, mass, omega):
    s = math.sqrt(hbar / (2 * mass * omega))
    r = math.sqrt(hbar * mass * omega / 2)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)
    q = s * (a + a.T)
    p = 1j * r * (a.T - a)
    q2 = q @ q
    p2 = (p @ p).real
    qp = 0.5 * (q @ p + p @ q)
    return q, p, q2, p2, qp


def _fock_stats(rho, q, p, q2, p2, qp, energies, lognorm):
    tr = np.trace(rho).real
    diag = np.diag(rho).real
    return (
        np.sum(q * rho.T).real / tr,
        np.sum(p * rho.T).real / tr,
        np.sum(q2 * rho.T).real / tr,
        np.sum(p2 * rho.T).real / tr,
        np.sum(qp * rho.T).real / tr,
        float(diag @ energies) / tr,
        (diag[-1] + diag[-2]) / tr,
        lognorm,
    )


def fock_run(rho0, hbar, mass, omega, alpha, eta, k_q, k_p, inc, controls, dt,
             mode, store_every):
    """Kraus-form filter stepping in a truncated number basis.

    ``mode == 0``: normalized filter, ``inc`` holds innovations dW and the
    control is computed from the current estimate.  ``mode == 1``:
    unnormalized filter driven by ``inc`` = dq_meas with the supplied
    ``controls``; the state is rescaled each step and the log of the
    discarded trace is accumulated so nothing underflows.

    Returns ``(stats, record, used_controls, states, fail_step)``.
    """
    rho = np.array(rho0, dtype=complex, copy=True)
    dim = rho.shape[0]
    inc = np.asarray(inc, dtype=float)
    steps = inc.shape[0]
    q, p, q2, p2, qp = _fock_ops(dim, hbar, mass, omega)
    energies = hbar * omega * (np.arange(dim) + 0.5)
    n = np.arange(dim)
    half_phase = np.exp(-0.5j * omega * dt * (n[:, None] - n[None, :]))
    eye = np.eye(dim)
    sqa = math.sqrt(eta * alpha)
    leftover = (1.0 - eta) * alpha * dt

    stats = np.empty((steps + 1, N_FOCK_STATS))
    record = np.empty(steps)
    used = np.empty(steps)
    nstore = steps // store_every + 1
    states = np.empty((nstore, dim, dim), dtype=complex)

    lognorm = 0.0
    tr0 = np.trace(rho).real
    rho /= tr0
    lognorm += math.log(tr0)
    stats[0] = _fock_stats(rho, q, p, q2, p2, qp, energies, lognorm)
    states[0] = rho
    for k in range(steps):
        qm = stats[k, F_Q]
        pm = stats[k, F_P]
        if mode == 0:
            u = k_q * qm + k_p * pm
            dy = 2.0 * sqa * qm * dt + inc[k]
            record[k] = qm * dt + (inc[k] / (2.0 * sqa) if sqa > 0 else 0.0)
        else:
            u = controls[k]
            dy = 2.0 * sqa * inc[k]
            record[k] = inc[k]
        used[k] = u
        cq = 1j * u / hbar * dt + sqa * dy
        cq2 = -0.5 * alpha * dt + 0.5 * eta * alpha * (dy * dy - dt)
        M = eye + cq * q + cq2 * q2
        rho = half_phase * rho
        new = M @ rho @ M.conj().T
        if leftover != 0.0:
            new += leftover * (q @ rho @ q)
        rho = half_phase * new
        tr = np.trace(rho).real
        if not (math.isfinite(tr) and tr > 0):
            return stats[: k + 1], record[: k + 1], used[: k + 1], states[: k // store_every + 1], k
        rho /= tr
        lognorm += math.log(tr)
        stats[k + 1] = _fock_stats(rho, q, p, q2, p2, qp, energies, lognorm)
        if (k + 1) % store_every == 0:
            states[(k + 1) // store_every] = rho
    return stats, record, used, states, -1


def _grid_stats(Q, x, y, dA):
    mass = Q.sum() * dA
    qx = Q.sum(axis=1)
    qy = Q.sum(axis=0)
    return (
        mass,
        float(x @ qx) * dA,
        float(y @ qy) * dA,
        float((x * x) @ qx) * dA,
        float((y * y) @ qy) * dA,
        float(x @ Q @ y) * dA,
        float(Q.min()),
        float(Q.max()),
    )


def _ddx(f, h):
    # fourth order inside, second order on the ring next to the boundary
    out = np.zeros_like(f)
    out[2:-2, :] = (-f[4:, :] + 8 * f[3:-1, :] - 8 * f[1:-3, :] + f[:-4, :]) / (12 * h)
    out[1, :] = (f[2, :] - f[0, :]) / (2 * h)
    out[-2, :] = (f[-1, :] - f[-3, :]) / (2 * h)
    return out


def _ddy(f, h):
    return _ddx(f.T, h).T


def _d2dy(f, h):
    out = np.zeros_like(f)
    out[:, 2:-2] = (-f[:, 4:] + 16 * f[:, 3:-1] - 30 * f[:, 2:-2] + 16 * f[:, 1:-3]
                    - f[:, :-4]) / (12 * h * h)
    out[:, 1] = (f[:, 2] - 2 * f[:, 1] + f[:, 0]) / (h * h)
    out[:, -2] = (f[:, -1] - 2 * f[:, -2] + f[:, -3]) / (h * h)
    return out


def _filter6(f, eps):
    # f + eps (delta_x^6 + delta_y^6) f, zeros outside the grid; the sixth
    # difference annihilates polynomials of degree < 6, so mass, means and
    # second moments are untouched while grid-scale modes are damped
    g = np.pad(f, 3)
    w = (1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0)
    n, m = f.shape
    d = np.zeros_like(f)
    for k, c in enumerate(w):
        d += c * (g[k:k + n, 3:3 + m] + g[3:3 + n, k:k + m])
    return _interior(f + eps * d)


def _interior(f):
    f[0, :] = f[-1, :] = 0.0
    f[:, 0] = f[:, -1] = 0.0
    return f


def qgrid_fields(Q, x, y, hx, hy, omega, hbar, mass, alpha, eta, k_q, k_p):
    """Stratonovich drift and noise coefficient of the Q-function SPDE."""
    s = math.sqrt(hbar / (2 * mass * omega))
    r = math.sqrt(hbar * mass * omega / 2)
    c = math.sqrt(eta * alpha) * s
    dA = hx * hy
    X = x[:, None]
    Y = y[None, :]
    mx = float(x @ Q.sum(axis=1)) * dA
    my = float(y @ Q.sum(axis=0)) * dA
    u = k_q * 2 * s * mx + k_p * 2 * r * my
    Qx = _ddx(Q, hx)
    Qy = _ddy(Q, hy)
    drift = omega * (X * Qy - Y * Qx) - (u * s / hbar) * Qy + 0.5 * alpha * s * s * _d2dy(Q, hy)
    b = c * (4 * X * Q + Qx - 4 * mx * Q)
    _interior(b)
    mb = float(x @ b.sum(axis=1)) * dA
    bb = c * (4 * X * b + _ddx(b, hx) - 4 * mx * b) - 4 * c * mb * Q
    drift = drift - 0.5 * bb
    _interior(drift)
    return drift, b


def qfunc_run(Q0, x, y, omega, hbar, mass, alpha, eta, k_q, k_p, dW, dt,
              renorm_every, store_every, filter_eps=0.0):
    """Stochastic Heun stepping of the Q-function SPDE on a clamped grid.

    After each step a sixth-difference filter of strength ``filter_eps`` is
    applied (see ``_filter6``).

    Returns ``(stats, states, renorm_drift, fail_step)``.  ``renorm_drift``
    holds |mass - 1| seen at each renormalization.
    """
    Q = np.array(Q0, dtype=float, copy=True)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hx = x[1] - x[0]
    hy = y[1] - y[0]
    dA = hx * hy
    dW = np.asarray(dW, dtype=float)
    steps = dW.shape[0]
    _interior(Q)
    stats = np.empty((steps + 1, N_GRID_STATS))
    stats[0] = _grid_stats(Q, x, y, dA)
    nstore = steps // store_every + 1
    states = np.empty((nstore,) + Q.shape)
    states[0] = Q
    drifts = []
    args = (x, y, hx, hy, omega, hbar, mass, alpha, eta, k_q, k_p)
    for k in range(steps):
        w = dW[k]
        a0, b0 = qgrid_fields(Q, *args)
        Qt = Q + a0 * dt + b0 * w
        a1, b1 = qgrid_fields(Qt, *args)
        Q = Q + 0.5 * (a0 + a1) * dt + 0.5 * (b0 + b1) * w
        if filter_eps != 0.0:
            Q = _filter6(Q, filter_eps)
        if renorm_every > 0 and (k + 1) % renorm_every == 0:
            mass_now = Q.sum() * dA
            drifts.append(abs(mass_now - 1.0))
            Q /= mass_now
        st = _grid_stats(Q, x, y, dA)
        if not all(math.isfinite(v) for v in st):
            return stats[: k + 1], states[: k // store_every + 1], np.array(drifts), k
        stats[k + 1] = st
        if (k + 1) % store_every == 0:
            states[(k + 1) // store_every] = Q
    return stats, states, np.array(drifts), -1
