import math
from dataclasses import replace

import numpy as np
import pytest

from qcool import ensemble as ens
from qcool.ensemble import (
    BrownianPath,
    EnsembleError,
    ExperimentConfig,
    InitialState,
    convergence_stats,
    resolve_workers,
    run_ensemble,
    run_trajectory,
    sweep_coupling,
    sweep_gain,
    trajectory_noise,
    window_means,
)
from qcool.gaussian import GaussianMoments, integrate_filter, optimal_gain, steady_state_energy
from qcool.model import ControlGains, DivergenceError, ParameterError, SystemParams
from qcool.qfunc import SpdeConfig

P = SystemParams(alpha=0.3)
G = ControlGains(0, -1.35)


def gauss_cfg(**kw):
    base = dict(params=P, gains=G, engine="gaussian", initial=InitialState(beta=1.0),
                dt=1e-3, t_final=2.0, n_trajectories=4, base_seed=10)
    base.update(kw)
    return ExperimentConfig(**base)


def test_single_trajectory_matches_direct_call():
    cfg = gauss_cfg(n_trajectories=1)
    res = run_ensemble(cfg)
    tr = integrate_filter(GaussianMoments.coherent(P, 1.0), P, G,
                          noise=trajectory_noise(cfg, 0), dt=cfg.dt)
    np.testing.assert_array_equal(res.mean_energy, tr.energy)
    np.testing.assert_array_equal(res.mean_moments, tr.states)
    assert np.all(np.isnan(res.stderr))


def test_trajectory_seeds_are_base_plus_index():
    a = run_ensemble(gauss_cfg(n_trajectories=3, base_seed=5))
    b = run_trajectory(gauss_cfg(base_seed=6), 0)
    np.testing.assert_array_equal(a.trajectories[1], b)
    np.testing.assert_array_equal(a.seeds, [5, 6, 7])


def test_reproducible_and_worker_invariant():
    cfg = gauss_cfg(stride=10)
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=1)
    c = run_ensemble(cfg, workers=2)
    np.testing.assert_array_equal(a.trajectories, b.trajectories)
    np.testing.assert_array_equal(a.trajectories, c.trajectories)
    assert a.trajectories.shape == (4, 201, 6)


def test_resolve_workers_reads_environment(monkeypatch):
    monkeypatch.setenv(ens.WORKERS_ENV, "3")
    assert resolve_workers() == 3
    monkeypatch.delenv(ens.WORKERS_ENV)
    assert resolve_workers() == 1
    with pytest.raises(ParameterError):
        resolve_workers(0)


def test_closed_system_energy_constant():
    cfg = gauss_cfg(params=SystemParams(), gains=ControlGains(), t_final=5.0)
    res = run_ensemble(cfg)
    np.testing.assert_allclose(res.energies, 1.5, rtol=1e-8)


def test_mean_tracks_analytic_curve_and_stderr_scales():
    cfg = gauss_cfg(n_trajectories=400, t_final=4.0, stride=100, dt=2e-3)
    res = run_ensemble(cfg)
    z = np.abs(res.mean_energy - res.analytic_gaussian)[1:] / res.stderr[1:]
    assert np.all(z < 4.5)
    small = run_ensemble(replace(cfg, n_trajectories=100))
    ratio = small.stderr[1:] / res.stderr[1:]
    assert np.median(ratio) == pytest.approx(2.0, rel=0.25)


def test_noise_dt_coarsens_a_fine_path():
    cfg = gauss_cfg(noise_dt=1e-4)
    fine = BrownianPath.generate(1e-4, cfg.steps * 10, ens.trajectory_rng(cfg.seed(2)))
    np.testing.assert_allclose(trajectory_noise(cfg, 2), fine.coarsen(10).increments, atol=1e-15)
    with pytest.raises(ParameterError):
        gauss_cfg(noise_dt=3e-4)


def test_brownian_path_statistics_and_io(tmp_path):
    path = BrownianPath.generate(1e-3, 200000, 1)
    assert path.increments.var() == pytest.approx(1e-3, rel=0.02)
    coarse = path.coarsen(100)
    assert coarse.dt == pytest.approx(0.1)
    assert coarse.increments.var() == pytest.approx(0.1, rel=0.1)
    assert coarse.increments.sum() == pytest.approx(path.increments.sum(), abs=1e-10)
    path.save(tmp_path / "w.npz")
    back = BrownianPath.load(tmp_path / "w.npz")
    np.testing.assert_array_equal(back.increments, path.increments)
    assert back.dt == path.dt and len(back) == len(path)
    with pytest.raises(ParameterError):
        path.coarsen(7)


def test_failure_keeps_completed_trajectories(monkeypatch):
    real = ens.run_trajectory

    def flaky(cfg, index):
        if index == 2:
            raise DivergenceError("blew up at step 17", 17)
        return real(cfg, index)

    monkeypatch.setattr(ens, "run_trajectory", flaky)
    with pytest.raises(EnsembleError) as exc:
        run_ensemble(gauss_cfg())
    err = exc.value
    assert err.seed == 12 and err.step == 17
    assert "seed 12" in str(err) and "step 17" in str(err)
    assert err.partial.n == 3
    np.testing.assert_array_equal(err.partial.seeds, [10, 11, 13])


def test_truncation_failure_is_wrapped():
    cfg = ExperimentConfig(params=SystemParams(alpha=20.0), engine="fock",
                           initial=InitialState.dark(), dt=1e-3, t_final=3.0, fock_dim=12)
    with pytest.raises(EnsembleError) as exc:
        run_ensemble(cfg)
    assert exc.value.partial is None
    assert isinstance(exc.value.cause, ens.fk.TruncationError)


def test_engines_agree_on_a_gaussian_start():
    kw = dict(initial=InitialState(beta=0.7), dt=1e-3, t_final=1.0, n_trajectories=1)
    g = run_ensemble(gauss_cfg(**kw))
    f = run_ensemble(gauss_cfg(engine="fock", **kw))
    q = run_ensemble(gauss_cfg(engine="qfunc", **kw))
    np.testing.assert_allclose(f.mean_energy, g.mean_energy, atol=2e-3)
    np.testing.assert_allclose(q.mean_energy, g.mean_energy, atol=1e-2)


def test_initial_state_variants():
    dark = InitialState.dark()
    assert dark.energy(P) == pytest.approx(3.0)
    assert dark.gaussian_moments(P) is None
    ref = dark.reference_moments(P)
    assert ref.mean[0] == pytest.approx(2 * math.sqrt(0.5) * math.sqrt(2.5))
    g = InitialState("gaussian", mean=(0.1, 0.2), cov=((0.6, 0.0), (0.0, 0.6)))
    assert g.energy(P) == pytest.approx(0.5 * (0.01 + 0.04) + 0.6)
    assert InitialState("fock", amplitudes=((0, 1.0),)).gaussian_moments(P) is not None
    for bad in (dict(kind="squeezed"), dict(kind="fock"), dict(kind="gaussian"),
                dict(kind="fock", amplitudes=((-1, 1.0),)),
                dict(kind="fock", amplitudes=((2, 0.0),))):
        with pytest.raises(ParameterError):
            InitialState(**bad)
    with pytest.raises(ParameterError):
        dark.vector(3)
    with pytest.raises(ParameterError):
        run_trajectory(gauss_cfg(initial=dark), 0)


def test_config_validation():
    with pytest.raises(ParameterError):
        gauss_cfg(engine="wigner")
    with pytest.raises(ParameterError):
        gauss_cfg(t_final=1.0005, dt=1e-3 * 1.7)
    with pytest.raises(ParameterError):
        gauss_cfg(n_trajectories=0)
    with pytest.raises(ParameterError):
        gauss_cfg(stride=0)
    q = gauss_cfg(engine="qfunc", dt=5e-4, spde=SpdeConfig(dt=1e-3))
    assert q.spde.dt == 5e-4


def test_window_and_convergence_stats():
    cfg = gauss_cfg(n_trajectories=400, t_final=40.0, stride=50, dt=2e-3)
    res = run_ensemble(cfg)
    w = window_means(res)
    assert w.shape == (400,)
    conv = convergence_stats(res)
    assert conv.reference == pytest.approx(steady_state_energy(P, G))
    assert 0 < conv.settle_time < 30
    assert abs(conv.asymptotic_mean - conv.reference) < 4 * conv.stderr + 0.01
    with pytest.raises(ParameterError):
        window_means(res, 0.0)


def test_gain_sweep_flags_unstable_rows_and_finds_optimum():
    cfg = gauss_cfg(params=SystemParams(alpha=0.09))
    values = np.concatenate([np.linspace(-4, -0.1, 3901), [0.0, 0.5]])
    table = sweep_gain(cfg, values)
    assert table.rows[-1].flag.startswith("unstable")
    assert math.isnan(table.rows[-2].analytic)
    assert table.argmin == pytest.approx(optimal_gain(cfg.params), abs=1e-3)
    assert table.optimum == pytest.approx(optimal_gain(cfg.params))


def test_coupling_sweep():
    table = sweep_coupling(gauss_cfg(), [1e-3, 0.01, 0.1, 0.5])
    a = table.column("analytic")
    assert np.all(a > 0.5) and a[0] - 0.5 < 1e-3
    assert math.isnan(table.optimum)
    with pytest.raises(ParameterError):
        sweep_coupling(gauss_cfg(), [0.1, 0.01])
    with pytest.raises(ParameterError):
        sweep_coupling(gauss_cfg(), [0.0, 0.1])


def test_simulated_sweep_column():
    cfg = gauss_cfg(n_trajectories=20, t_final=20.0, stride=20, dt=5e-3)
    table = sweep_gain(cfg, [-1.35, -0.5], simulate=True)
    for row in table.rows:
        assert abs(row.simulated - row.analytic) < 5 * row.stderr + 0.05
