# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; semantics identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, cos, sin, isfinite

cnp.import_array()

ctypedef double complex cplx

DEF N_FOCK_STATS = 8
DEF N_GRID_STATS = 8


cdef inline void _grhs(double a, double b, double c, double inv_m, double mw2,
                       double g, double diff, double* out) nogil:
    out[0] = 2.0 * b * inv_m - g * a * a
    out[1] = c * inv_m - mw2 * a - g * a * b
    out[2] = -2.0 * mw2 * b + diff - g * b * b


def gaussian_run(x0, double mass, double omega, double hbar, double alpha,
                 double eta, double k_q, double k_p, dW, double dt, int scheme=0):
    cdef const double[::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef Py_ssize_t steps = w.shape[0], k
    out_arr = np.empty((steps + 1, 5))
    rec_arr = np.empty(steps)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] record = rec_arr
    cdef double q = x0[0], p = x0[1], vqq = x0[2], vqp = x0[3], vpp = x0[4]
    cdef double mw2 = mass * omega * omega, inv_m = 1.0 / mass
    cdef double g = 4.0 * eta * alpha, diff = hbar * hbar * alpha
    cdef double gain = 2.0 * sqrt(eta * alpha)
    cdef double rec_scale = 1.0 / gain if gain > 0 else 0.0
    cdef double kq = k_q - mw2
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double nqq, nqp, npp, fq, fp, qt, pt, dw, qn, pn
    cdef Py_ssize_t fail = -1
    out[0, 0] = q; out[0, 1] = p; out[0, 2] = vqq; out[0, 3] = vqp; out[0, 4] = vpp
    with nogil:
        for k in range(steps):
            dw = w[k]
            record[k] = q * dt + dw * rec_scale
            _grhs(vqq, vqp, vpp, inv_m, mw2, g, diff, k1)
            _grhs(vqq + 0.5 * dt * k1[0], vqp + 0.5 * dt * k1[1], vpp + 0.5 * dt * k1[2],
                  inv_m, mw2, g, diff, k2)
            _grhs(vqq + 0.5 * dt * k2[0], vqp + 0.5 * dt * k2[1], vpp + 0.5 * dt * k2[2],
                  inv_m, mw2, g, diff, k3)
            _grhs(vqq + dt * k3[0], vqp + dt * k3[1], vpp + dt * k3[2],
                  inv_m, mw2, g, diff, k4)
            nqq = vqq + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            nqp = vqp + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            npp = vpp + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            fq = p * inv_m
            fp = kq * q + k_p * p
            if scheme == 0:
                qt = q + fq * dt + gain * vqq * dw
                pt = p + fp * dt + gain * vqp * dw
                qn = q + 0.5 * (fq + pt * inv_m) * dt + 0.5 * gain * (vqq + nqq) * dw
                pn = p + 0.5 * (fp + kq * qt + k_p * pt) * dt + 0.5 * gain * (vqp + nqp) * dw
            else:
                qn = q + fq * dt + gain * vqq * dw
                pn = p + fp * dt + gain * vqp * dw
            q = qn; p = pn
            vqq = nqq; vqp = nqp; vpp = npp
            out[k + 1, 0] = q; out[k + 1, 1] = p
            out[k + 1, 2] = vqq; out[k + 1, 3] = vqp; out[k + 1, 4] = vpp
            if not (isfinite(q) and isfinite(p) and isfinite(vqq)
                    and isfinite(vqp) and isfinite(vpp)):
                fail = k
                break
    if fail >= 0:
        return out_arr[: fail + 2], rec_arr[: fail + 1], fail
    return out_arr, rec_arr, -1


cdef void _fock_stats(cplx[:, ::1] rho, double[::1] qo, double[::1] po,
                      double[::1] q2d, double[::1] q2o, double[::1] p2d,
                      double[::1] p2o, double sr, double[::1] energies,
                      double lognorm, double[:, ::1] stats, Py_ssize_t row) nogil:
    cdef Py_ssize_t n = rho.shape[0], i
    cdef double tr = 0, qm = 0, pm = 0, qq = 0, pp = 0, qp = 0, e = 0, d
    for i in range(n):
        d = rho[i, i].real
        tr += d
        qq += q2d[i] * d
        pp += p2d[i] * d
        e += energies[i] * d
    for i in range(n - 1):
        qm += 2.0 * qo[i] * rho[i + 1, i].real
        pm += 2.0 * po[i] * rho[i + 1, i].imag
    for i in range(n - 2):
        qq += 2.0 * q2o[i] * rho[i + 2, i].real
        pp -= 2.0 * p2o[i] * rho[i + 2, i].real
        qp += 2.0 * sr * q2o[i] * rho[i + 2, i].imag
    stats[row, 0] = qm / tr
    stats[row, 1] = pm / tr
    stats[row, 2] = qq / tr
    stats[row, 3] = pp / tr
    stats[row, 4] = qp / tr
    stats[row, 5] = e / tr
    stats[row, 6] = (rho[n - 1, n - 1].real + rho[n - 2, n - 2].real) / tr
    stats[row, 7] = lognorm


def fock_run(rho0, double hbar, double mass, double omega, double alpha,
             double eta, double k_q, double k_p, inc, controls, double dt,
             int mode, Py_ssize_t store_every):
    rho_arr = np.array(rho0, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, ::1] rho = rho_arr
    cdef Py_ssize_t n = rho.shape[0], i, j, k
    cdef const double[::1] xs = np.ascontiguousarray(inc, dtype=np.float64)
    cdef const double[::1] us
    cdef Py_ssize_t steps = xs.shape[0]
    if mode == 1:
        us = np.ascontiguousarray(controls, dtype=np.float64)
    else:
        us = np.zeros(1)

    cdef double s = sqrt(hbar / (2 * mass * omega))
    cdef double r = sqrt(hbar * mass * omega / 2)
    # band storage of the truncated q, p, q@q, p@p (index = upper row)
    qo_a = s * np.sqrt(np.arange(1, n, dtype=float))
    po_a = r * np.sqrt(np.arange(1, n, dtype=float))
    q2d_a = s * s * (2 * np.arange(n, dtype=float) + 1)
    q2d_a[n - 1] = s * s * (n - 1)
    p2d_a = q2d_a * (r * r) / (s * s)
    w2 = np.sqrt(np.arange(1, n - 1, dtype=float) * np.arange(2, n, dtype=float))
    cdef double[::1] qo = qo_a
    cdef double[::1] po = po_a
    cdef double[::1] q2d = q2d_a
    cdef double[::1] p2d = p2d_a
    cdef double[::1] q2o = s * s * w2
    cdef double[::1] p2o = r * r * w2
    cdef double sr = r / s  # qp off-band = (s r w2) = sr * q2o
    cdef double[::1] energies = hbar * omega * (np.arange(n, dtype=float) + 0.5)
    nn = np.arange(n)
    cdef cplx[:, ::1] ph = np.exp(-0.5j * omega * dt * (nn[:, None] - nn[None, :]))

    tmp_arr = np.zeros((n, n), dtype=np.complex128)
    new_arr = np.zeros((n, n), dtype=np.complex128)
    qr_arr = np.zeros((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] tmp = tmp_arr
    cdef cplx[:, ::1] new = new_arr
    cdef cplx[:, ::1] qr = qr_arr
    md_a = np.zeros(n, dtype=np.complex128)
    m1_a = np.zeros(n, dtype=np.complex128)
    m2_a = np.zeros(n, dtype=np.complex128)
    cdef cplx[::1] md = md_a
    cdef cplx[::1] m1 = m1_a
    cdef cplx[::1] m2 = m2_a

    stats_arr = np.empty((steps + 1, N_FOCK_STATS))
    rec_arr = np.empty(steps)
    used_arr = np.empty(steps)
    cdef double[:, ::1] stats = stats_arr
    cdef double[::1] record = rec_arr
    cdef double[::1] used = used_arr
    cdef Py_ssize_t nstore = steps // store_every + 1
    states_arr = np.empty((nstore, n, n), dtype=np.complex128)
    cdef cplx[:, :, ::1] states = states_arr

    cdef double sqa = sqrt(eta * alpha)
    cdef double leftover = (1.0 - eta) * alpha * dt
    cdef double lognorm = 0, tr, qm, pm, u, dy
    cdef cplx cq, cq2, acc
    cdef Py_ssize_t fail = -1

    tr = 0
    for i in range(n):
        tr += rho[i, i].real
    for i in range(n):
        for j in range(n):
            rho[i, j] = rho[i, j] / tr
    lognorm = log(tr)
    _fock_stats(rho, qo, po, q2d, q2o, p2d, p2o, sr, energies, lognorm, stats, 0)
    states[0, :, :] = rho

    with nogil:
        for k in range(steps):
            qm = stats[k, 0]
            pm = stats[k, 1]
            if mode == 0:
                u = k_q * qm + k_p * pm
                dy = 2.0 * sqa * qm * dt + xs[k]
                record[k] = qm * dt + (xs[k] / (2.0 * sqa) if sqa > 0 else 0.0)
            else:
                u = us[k]
                dy = 2.0 * sqa * xs[k]
                record[k] = xs[k]
            used[k] = u
            cq = 1j * u / hbar * dt + sqa * dy
            cq2 = -0.5 * alpha * dt + 0.5 * eta * alpha * (dy * dy - dt)
            for i in range(n):
                md[i] = 1.0 + cq2 * q2d[i]
            for i in range(n - 1):
                m1[i] = cq * qo[i]
            for i in range(n - 2):
                m2[i] = cq2 * q2o[i]
            # half free rotation
            for i in range(n):
                for j in range(n):
                    rho[i, j] = rho[i, j] * ph[i, j]
            # tmp = M rho  (M complex symmetric pentadiagonal)
            for i in range(n):
                for j in range(n):
                    acc = md[i] * rho[i, j]
                    if i + 1 < n:
                        acc = acc + m1[i] * rho[i + 1, j]
                    if i >= 1:
                        acc = acc + m1[i - 1] * rho[i - 1, j]
                    if i + 2 < n:
                        acc = acc + m2[i] * rho[i + 2, j]
                    if i >= 2:
                        acc = acc + m2[i - 2] * rho[i - 2, j]
                    tmp[i, j] = acc
            # new = tmp M^dagger; Hermitian, so fill lower triangle by conjugation
            for i in range(n):
                for j in range(i, n):
                    acc = tmp[i, j] * md[j].conjugate()
                    if j + 1 < n:
                        acc = acc + tmp[i, j + 1] * m1[j].conjugate()
                    if j >= 1:
                        acc = acc + tmp[i, j - 1] * m1[j - 1].conjugate()
                    if j + 2 < n:
                        acc = acc + tmp[i, j + 2] * m2[j].conjugate()
                    if j >= 2:
                        acc = acc + tmp[i, j - 2] * m2[j - 2].conjugate()
                    new[i, j] = acc
            if leftover != 0.0:
                for i in range(n):
                    for j in range(n):
                        acc = 0
                        if i + 1 < n:
                            acc = acc + qo[i] * rho[i + 1, j]
                        if i >= 1:
                            acc = acc + qo[i - 1] * rho[i - 1, j]
                        qr[i, j] = acc
                for i in range(n):
                    for j in range(i, n):
                        acc = 0
                        if j + 1 < n:
                            acc = acc + qr[i, j + 1] * qo[j]
                        if j >= 1:
                            acc = acc + qr[i, j - 1] * qo[j - 1]
                        new[i, j] = new[i, j] + leftover * acc
            tr = 0
            for i in range(n):
                tr += new[i, i].real
            if not (isfinite(tr) and tr > 0):
                fail = k
                break
            for i in range(n):
                rho[i, i] = new[i, i].real / tr
                for j in range(i + 1, n):
                    rho[i, j] = new[i, j] * ph[i, j] / tr
                    rho[j, i] = rho[i, j].conjugate()
            lognorm += log(tr)
            _fock_stats(rho, qo, po, q2d, q2o, p2d, p2o, sr, energies, lognorm, stats, k + 1)
            if (k + 1) % store_every == 0:
                states[(k + 1) // store_every, :, :] = rho
    if fail >= 0:
        return (stats_arr[: fail + 1], rec_arr[: fail + 1], used_arr[: fail + 1],
                states_arr[: fail // store_every + 1], fail)
    return stats_arr, rec_arr, used_arr, states_arr, -1


cdef inline double _d1(double[:, ::1] f, Py_ssize_t i, Py_ssize_t j, Py_ssize_t n,
                       double inv12h, double inv2h, bint along_x) nogil:
    # derivative along x (first index) or y (second index) at an interior node
    if along_x:
        if i >= 2 and i <= n - 3:
            return (-f[i + 2, j] + 8 * f[i + 1, j] - 8 * f[i - 1, j] + f[i - 2, j]) * inv12h
        return (f[i + 1, j] - f[i - 1, j]) * inv2h
    if j >= 2 and j <= n - 3:
        return (-f[i, j + 2] + 8 * f[i, j + 1] - 8 * f[i, j - 1] + f[i, j - 2]) * inv12h
    return (f[i, j + 1] - f[i, j - 1]) * inv2h


cdef void _qfields(double[:, ::1] Q, double[::1] x, double[::1] y, double hx,
                   double hy, double omega, double hbar, double mass, double alpha,
                   double eta, double k_q, double k_p, double[:, ::1] drift,
                   double[:, ::1] b) nogil:
    cdef Py_ssize_t nx = Q.shape[0], ny = Q.shape[1], i, j
    cdef double s = sqrt(hbar / (2 * mass * omega))
    cdef double r = sqrt(hbar * mass * omega / 2)
    cdef double c = sqrt(eta * alpha) * s
    cdef double dA = hx * hy
    cdef double mx = 0, my = 0, mb = 0, u, cu, dyy, qx, qy, qyy, bx
    cdef double ix12 = 1.0 / (12 * hx), ix2 = 1.0 / (2 * hx)
    cdef double iy12 = 1.0 / (12 * hy), iy2 = 1.0 / (2 * hy)
    cdef double iyy = 1.0 / (hy * hy), iyy12 = 1.0 / (12 * hy * hy)
    for i in range(nx):
        for j in range(ny):
            mx += x[i] * Q[i, j]
            my += y[j] * Q[i, j]
    mx *= dA
    my *= dA
    u = k_q * 2 * s * mx + k_p * 2 * r * my
    cu = u * s / hbar
    dyy = 0.5 * alpha * s * s
    for i in range(nx):
        b[i, 0] = 0; b[i, ny - 1] = 0
        drift[i, 0] = 0; drift[i, ny - 1] = 0
    for j in range(ny):
        b[0, j] = 0; b[nx - 1, j] = 0
        drift[0, j] = 0; drift[nx - 1, j] = 0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            qx = _d1(Q, i, j, nx, ix12, ix2, True)
            qy = _d1(Q, i, j, ny, iy12, iy2, False)
            if j >= 2 and j <= ny - 3:
                qyy = (-Q[i, j + 2] + 16 * Q[i, j + 1] - 30 * Q[i, j] + 16 * Q[i, j - 1]
                       - Q[i, j - 2]) * iyy12
            else:
                qyy = (Q[i, j + 1] - 2 * Q[i, j] + Q[i, j - 1]) * iyy
            drift[i, j] = omega * (x[i] * qy - y[j] * qx) - cu * qy + dyy * qyy
            b[i, j] = c * (4 * x[i] * Q[i, j] + qx - 4 * mx * Q[i, j])
            mb += x[i] * b[i, j]
    mb *= dA
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            bx = _d1(b, i, j, nx, ix12, ix2, True)
            drift[i, j] -= 0.5 * (c * (4 * x[i] * b[i, j] + bx - 4 * mx * b[i, j])
                                  - 4 * c * mb * Q[i, j])


cdef void _grid_stats(double[:, ::1] Q, double[::1] x, double[::1] y, double dA,
                      double[:, ::1] stats, Py_ssize_t row) nogil:
    cdef Py_ssize_t nx = Q.shape[0], ny = Q.shape[1], i, j
    cdef double m = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, rowsum, rowy, v
    cdef double lo = Q[0, 0], hi = Q[0, 0]
    for i in range(nx):
        rowsum = 0
        rowy = 0
        for j in range(ny):
            v = Q[i, j]
            rowsum += v
            rowy += y[j] * v
            syy += y[j] * y[j] * v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        m += rowsum
        sx += x[i] * rowsum
        sxx += x[i] * x[i] * rowsum
        sy += rowy
        sxy += x[i] * rowy
    stats[row, 0] = m * dA
    stats[row, 1] = sx * dA
    stats[row, 2] = sy * dA
    stats[row, 3] = sxx * dA
    stats[row, 4] = syy * dA
    stats[row, 5] = sxy * dA
    stats[row, 6] = lo
    stats[row, 7] = hi


cdef inline double _at(double[:, ::1] f, Py_ssize_t i, Py_ssize_t j,
                      Py_ssize_t nx, Py_ssize_t ny) nogil:
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return 0.0
    return f[i, j]


cdef void _filter6(double[:, ::1] Q, double[:, ::1] tmp, double eps) nogil:
    # Q += eps (delta_x^6 + delta_y^6) Q with zeros outside the grid
    cdef Py_ssize_t nx = Q.shape[0], ny = Q.shape[1], i, j
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            tmp[i, j] = (_at(Q, i - 3, j, nx, ny) + _at(Q, i + 3, j, nx, ny)
                         - 6.0 * (_at(Q, i - 2, j, nx, ny) + _at(Q, i + 2, j, nx, ny))
                         + 15.0 * (Q[i - 1, j] + Q[i + 1, j])
                         + _at(Q, i, j - 3, nx, ny) + _at(Q, i, j + 3, nx, ny)
                         - 6.0 * (_at(Q, i, j - 2, nx, ny) + _at(Q, i, j + 2, nx, ny))
                         + 15.0 * (Q[i, j - 1] + Q[i, j + 1]) - 40.0 * Q[i, j])
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            Q[i, j] += eps * tmp[i, j]


def qgrid_fields(Q, x, y, double hx, double hy, double omega, double hbar,
                 double mass, double alpha, double eta, double k_q, double k_p):
    Qc = np.ascontiguousarray(Q, dtype=np.float64)
    drift = np.empty_like(Qc)
    b = np.empty_like(Qc)
    _qfields(Qc, np.ascontiguousarray(x, dtype=np.float64),
             np.ascontiguousarray(y, dtype=np.float64), hx, hy, omega, hbar, mass,
             alpha, eta, k_q, k_p, drift, b)
    return drift, b


def qfunc_run(Q0, x_in, y_in, double omega, double hbar, double mass, double alpha,
              double eta, double k_q, double k_p, dW, double dt,
              Py_ssize_t renorm_every, Py_ssize_t store_every, double filter_eps=0.0):
    Q_arr = np.array(Q0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] Q = Q_arr
    cdef double[::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t nx = Q.shape[0], ny = Q.shape[1], i, j, k
    cdef double hx = x[1] - x[0], hy = y[1] - y[0], dA = hx * hy
    cdef const double[::1] w = np.ascontiguousarray(dW, dtype=np.float64)
    cdef Py_ssize_t steps = w.shape[0]
    for i in range(nx):
        Q[i, 0] = 0; Q[i, ny - 1] = 0
    for j in range(ny):
        Q[0, j] = 0; Q[nx - 1, j] = 0
    a0_arr = np.zeros_like(Q_arr)
    b0_arr = np.zeros_like(Q_arr)
    a1_arr = np.zeros_like(Q_arr)
    b1_arr = np.zeros_like(Q_arr)
    qt_arr = np.zeros_like(Q_arr)
    cdef double[:, ::1] a0 = a0_arr
    cdef double[:, ::1] b0 = b0_arr
    cdef double[:, ::1] a1 = a1_arr
    cdef double[:, ::1] b1 = b1_arr
    cdef double[:, ::1] qt = qt_arr
    stats_arr = np.empty((steps + 1, N_GRID_STATS))
    cdef double[:, ::1] stats = stats_arr
    cdef Py_ssize_t nstore = steps // store_every + 1
    states_arr = np.empty((nstore, nx, ny))
    cdef double[:, :, ::1] states = states_arr
    drift_arr = np.empty(steps // renorm_every if renorm_every > 0 else 0)
    cdef double[::1] drifts = drift_arr
    cdef Py_ssize_t nren = 0, fail = -1
    cdef double dw, mass_now, v
    _grid_stats(Q, x, y, dA, stats, 0)
    states[0, :, :] = Q
    with nogil:
        for k in range(steps):
            dw = w[k]
            _qfields(Q, x, y, hx, hy, omega, hbar, mass, alpha, eta, k_q, k_p, a0, b0)
            for i in range(nx):
                for j in range(ny):
                    qt[i, j] = Q[i, j] + a0[i, j] * dt + b0[i, j] * dw
            _qfields(qt, x, y, hx, hy, omega, hbar, mass, alpha, eta, k_q, k_p, a1, b1)
            for i in range(nx):
                for j in range(ny):
                    Q[i, j] = Q[i, j] + 0.5 * (a0[i, j] + a1[i, j]) * dt + \
                        0.5 * (b0[i, j] + b1[i, j]) * dw
            if filter_eps != 0.0:
                _filter6(Q, qt, filter_eps)
            if renorm_every > 0 and (k + 1) % renorm_every == 0:
                mass_now = 0
                for i in range(nx):
                    for j in range(ny):
                        mass_now += Q[i, j]
                mass_now *= dA
                drifts[nren] = mass_now - 1.0 if mass_now >= 1.0 else 1.0 - mass_now
                nren += 1
                for i in range(nx):
                    for j in range(ny):
                        Q[i, j] = Q[i, j] / mass_now
            _grid_stats(Q, x, y, dA, stats, k + 1)
            v = stats[k + 1, 0] + stats[k + 1, 3] + stats[k + 1, 4] + stats[k + 1, 7] \
                + stats[k + 1, 6]
            if not isfinite(v):
                fail = k
                break
            if (k + 1) % store_every == 0:
                states[(k + 1) // store_every, :, :] = Q
    if fail >= 0:
        return stats_arr[: fail + 1], states_arr[: fail // store_every + 1], \
            drift_arr[:nren], fail
    return stats_arr, states_arr, drift_arr[:nren], -1
