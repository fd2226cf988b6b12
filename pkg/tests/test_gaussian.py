import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_are, solve_continuous_lyapunov
from scipy.optimize import minimize_scalar

from qcool.gaussian import (
    DegenerateMeasurementError,
    GaussianMoments,
    UnstableGainError,
    conditional_energy,
    expected_energy_curve,
    integrate_filter,
    integrate_riccati,
    optimal_gain,
    purity,
    riccati_rhs,
    riccati_xi,
    stationary_mean_moment,
    steady_state_covariance,
    steady_state_energy,
)
from qcool.model import (
    ControlGains,
    DivergenceError,
    ParameterError,
    StateValidityError,
    SystemParams,
    build_system_matrices,
    heisenberg_margin,
)

# frozen from the ARE oracle below (alpha = 0.3, unit constants)
V_INF_03 = np.array([[0.480437270401, 0.138491982474], [0.138491982474, 0.560281322440]])
XI_03 = 1.166190378969
E_SS_03 = 0.764874521721  # k_p = -1.35
K_OPT_009 = -1.419884102197  # true minimizer at alpha = 0.09

params_st = st.builds(SystemParams, hbar=st.floats(0.2, 5), mass=st.floats(0.2, 5),
                      omega=st.floats(0.2, 5), alpha=st.floats(1e-3, 3),
                      eta=st.floats(0.05, 1))


def are_oracle(p: SystemParams) -> np.ndarray:
    """Stabilizing Riccati solution from scipy's generic ARE solver."""
    m = build_system_matrices(p, ControlGains())
    L = m.L_vec.reshape(2, 1)
    return solve_continuous_are(m.A.T, L, m.D, np.array([[1 / (4 * p.eta)]]))


def lyapunov_energy(p: SystemParams, kp: float) -> float:
    m = build_system_matrices(p, ControlGains(0.0, kp))
    V = are_oracle(p)
    VL = V @ m.L_vec
    M = solve_continuous_lyapunov(m.closed_loop, -4 * p.eta * np.outer(VL, VL))
    return 0.5 * np.trace(m.G @ (M + V))


def test_frozen_steady_state_values():
    p = SystemParams(alpha=0.3)
    np.testing.assert_allclose(are_oracle(p), V_INF_03, atol=1e-11)
    np.testing.assert_allclose(steady_state_covariance(p), V_INF_03, atol=1e-11)
    assert riccati_xi(p) == pytest.approx(XI_03, abs=1e-11)
    assert steady_state_energy(p, ControlGains(0, -1.35)) == pytest.approx(E_SS_03, abs=1e-11)
    assert optimal_gain(SystemParams(alpha=0.09)) == pytest.approx(K_OPT_009, abs=1e-11)


@settings(max_examples=60, deadline=None)
@given(params_st)
def test_closed_form_matches_are_solver(p):
    V = steady_state_covariance(p)
    np.testing.assert_allclose(V, are_oracle(p), rtol=1e-8, atol=1e-12)
    m = build_system_matrices(p, ControlGains())
    scale = np.abs(m.D).max() + np.abs(m.A @ V).max()
    assert np.abs(riccati_rhs(V, m, p.eta)).max() < 1e-10 * scale


@settings(max_examples=40, deadline=None)
@given(params_st)
def test_purity_is_root_eta(p):
    assert purity(steady_state_covariance(p), p.hbar) == pytest.approx(math.sqrt(p.eta), rel=1e-9)


def test_small_alpha_cross_covariance_follows_leading_order():
    # V_qp ~ hbar^2 alpha / (2 m omega^2) for weak coupling
    p = SystemParams(hbar=1.0, mass=2.0, omega=1.5, alpha=1e-5)
    leading = p.hbar**2 * p.alpha / (2 * p.mass * p.omega**2)
    assert steady_state_covariance(p)[0, 1] == pytest.approx(leading, rel=1e-4)


def test_tiny_alpha_has_no_cancellation():
    p = SystemParams(alpha=1e-9)
    V = steady_state_covariance(p)
    np.testing.assert_allclose(np.diag(V), [0.5, 0.5], rtol=1e-8)
    assert V[0, 1] == pytest.approx(0.5e-9, rel=1e-6)


def test_zero_alpha_has_no_steady_state():
    with pytest.raises(DegenerateMeasurementError):
        steady_state_covariance(SystemParams())


@settings(max_examples=40, deadline=None)
@given(params_st, st.floats(-8, -0.05))
def test_energy_formula_matches_lyapunov_oracle(p, kp):
    assert steady_state_energy(p, ControlGains(0, kp)) == pytest.approx(
        lyapunov_energy(p, kp), rel=1e-8)
    M = stationary_mean_moment(p, ControlGains(0, kp))
    V = steady_state_covariance(p)
    G = build_system_matrices(p, ControlGains()).G
    assert 0.5 * np.trace(G @ (M + V)) == pytest.approx(lyapunov_energy(p, kp), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(params_st)
def test_optimal_gain_minimizes_energy(p):
    k = optimal_gain(p)

    def e(kp):
        return steady_state_energy(p, ControlGains(0, kp))

    res = minimize_scalar(e, bracket=(5 * k, k, 0.2 * k), tol=1e-12)
    assert k == pytest.approx(res.x, rel=1e-5)
    assert e(k) <= min(e(0.99 * k), e(1.01 * k))


def test_energy_above_ground_for_every_gain():
    p = SystemParams(alpha=0.09)
    for kp in np.linspace(-10, -0.05, 200):
        assert steady_state_energy(p, ControlGains(0, kp)) > 0.5


def test_weak_coupling_limit_is_ground_state():
    e = [steady_state_energy(SystemParams(alpha=a), ControlGains(0, -1.35))
         for a in (1e-2, 1e-3, 1e-4)]
    assert e[0] > e[1] > e[2] > 0.5
    assert e[2] - 0.5 < 1e-4


def test_gain_validation():
    p = SystemParams(alpha=0.3)
    with pytest.raises(UnstableGainError):
        steady_state_energy(p, ControlGains(0, 0.0))
    with pytest.raises(ParameterError):
        steady_state_energy(p, ControlGains(0.1, -1.0))
    with pytest.raises(UnstableGainError):
        stationary_mean_moment(p, ControlGains(0, 1.0))


def test_riccati_flow_reaches_fixed_point():
    p = SystemParams(alpha=0.3, eta=0.5)
    V = integrate_riccati(np.diag([2.0, 2.0]), p, 60.0)
    np.testing.assert_allclose(V, steady_state_covariance(p), atol=1e-10)


def test_filter_rejects_unphysical_initial_state():
    bad = GaussianMoments((0, 0), np.diag([0.1, 0.1]))
    with pytest.raises(StateValidityError):
        integrate_filter(bad, SystemParams(alpha=0.3), ControlGains(), steps=10, rng=0)


def test_filter_is_reproducible_and_shapes(unit_params, cooling_gains):
    init = GaussianMoments.coherent(unit_params, 1.0)
    a = integrate_filter(init, unit_params, cooling_gains, steps=500, rng=7)
    b = integrate_filter(init, unit_params, cooling_gains, steps=500, rng=7)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.states.shape == (501, 5) and len(a.record) == 500
    assert a.covs.shape == (501, 2, 2)
    np.testing.assert_allclose(a.energy, conditional_energy(a.states, unit_params))


def test_filter_keeps_heisenberg_bound(unit_params, cooling_gains):
    init = GaussianMoments((0.3, -0.2), np.array([[2.0, 0.4], [0.4, 1.0]]))
    tr = integrate_filter(init, unit_params, cooling_gains, steps=20000, rng=3)
    margins = [heisenberg_margin(c, 1.0) for c in tr.covs[::500]]
    assert min(margins) > -1e-12


def test_closed_system_conserves_energy_to_second_order():
    p = SystemParams()
    init = GaussianMoments.coherent(p, 1.2 - 0.4j)
    q0, p0 = init.mean
    errs = []
    for dt in (2e-3, 1e-3):
        tr = integrate_filter(init, p, ControlGains(), dt=dt, steps=round(10 / dt), rng=1)
        assert np.abs(tr.energy / tr.energy[0] - 1).max() < 1e-7
        t = tr.times[-1]
        errs.append(abs(tr.means[-1, 0] - (q0 * math.cos(t) + p0 * math.sin(t))))
    assert errs[1] < 1e-5
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_record_is_mean_plus_scaled_innovation(unit_params, cooling_gains):
    init = GaussianMoments.coherent(unit_params, 0.5)
    tr = integrate_filter(init, unit_params, cooling_gains, steps=100, rng=5)
    dt = tr.times[1]
    expect = tr.means[:-1, 0] * dt + tr.innovations / (2 * math.sqrt(unit_params.alpha))
    np.testing.assert_allclose(tr.record, expect, atol=1e-15)


def test_heun_converges_faster_than_euler(unit_params, cooling_gains):
    init = GaussianMoments.coherent(unit_params, 1.0)
    fine_dt, T = 1e-4, 5.0
    w = np.random.default_rng(11).normal(0, math.sqrt(fine_dt), int(T / fine_dt))
    ref = integrate_filter(init, unit_params, cooling_gains, noise=w, dt=fine_dt).states[-1]
    errs = {}
    for scheme in ("heun", "euler"):
        coarse = w.reshape(-1, 20).sum(axis=1)
        s = integrate_filter(init, unit_params, cooling_gains, noise=coarse, dt=20 * fine_dt,
                             scheme=scheme).states[-1]
        errs[scheme] = np.abs(s - ref)[:2].max()
    assert errs["heun"] < errs["euler"]
    assert errs["heun"] < 1e-3


def test_divergence_names_step():
    p = SystemParams(alpha=50.0)
    init = GaussianMoments((0, 0), np.diag([5.0, 5.0]))
    with pytest.raises(DivergenceError) as exc:
        integrate_filter(init, p, ControlGains(0, 5.0), dt=1.0, steps=200, rng=0)
    assert exc.value.step is not None and str(exc.value.step) in str(exc.value)


def test_bad_scheme_and_lengths(unit_params):
    init = GaussianMoments.ground(unit_params)
    with pytest.raises(ParameterError):
        integrate_filter(init, unit_params, ControlGains(), steps=5, rng=0, scheme="rk")
    with pytest.raises(ParameterError):
        integrate_filter(init, unit_params, ControlGains(), noise=np.zeros(4), steps=5)
    with pytest.raises(ParameterError):
        integrate_filter(init, unit_params, ControlGains())


def test_expected_energy_curve_limits(unit_params, cooling_gains):
    init = GaussianMoments.coherent(unit_params, 1.0)
    t = np.linspace(0, 150, 301)
    e = expected_energy_curve(init, unit_params, cooling_gains, t)
    assert e[0] == pytest.approx(1.5)
    assert e[-1] == pytest.approx(E_SS_03, abs=1e-8)


def test_expected_energy_curve_matches_monte_carlo(unit_params, cooling_gains):
    init = GaussianMoments.coherent(unit_params, 1.0)
    dt, steps, n = 2e-3, 1500, 300
    rng = np.random.default_rng(21)
    energies = np.array([integrate_filter(init, unit_params, cooling_gains, dt=dt, steps=steps,
                                          rng=rng).energy[[500, 1000, 1500]] for _ in range(n)])
    curve = expected_energy_curve(init, unit_params, cooling_gains, [0, 1.0, 2.0, 3.0])[1:]
    se = energies.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(energies.mean(axis=0) - curve) < 4 * se)


def test_expected_energy_curve_rejects_bad_times(unit_params):
    with pytest.raises(ParameterError):
        expected_energy_curve(GaussianMoments.ground(unit_params), unit_params,
                              ControlGains(), [0.5, 1.0])
