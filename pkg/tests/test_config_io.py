import json
import math

import numpy as np
import pytest

from qcool import io
from qcool.config import (
    DEFAULT_DT,
    PRESET_NAMES,
    ConfigError,
    build_config,
    config_to_dict,
    load_config,
    parse_config,
    preset,
)
from qcool.ensemble import ExperimentConfig, InitialState, run_ensemble
from qcool.fock import coherent_density
from qcool.qfunc import GridGeometry, QGrid, qgrid_from_fock


def test_minimal_config_defaults():
    cfg = parse_config('engine = "fock"\n')
    assert cfg.params.hbar == cfg.params.mass == cfg.params.omega == cfg.params.eta == 1.0
    assert cfg.params.alpha == 0.0
    assert cfg.dt == DEFAULT_DT["fock"]
    assert cfg.steps // cfg.stride <= 2000
    assert cfg.fock_dim == 30 and cfg.initial.kind == "coherent"


def test_full_config():
    cfg = parse_config("""
engine = "qfunc"
alpha = 0.3
k_p = -1.35
dt = 1e-3
t_final = 2.0
n_trajectories = 3
seed = 7

[initial]
state = "dark"

[qfunc]
nx = 64
ny = 64
extent = 5.0
filter_eps = 0.001
""")
    assert cfg.initial == InitialState.dark()
    assert cfg.spde.geometry == GridGeometry(64, 64, -5, 5, -5, 5)
    assert cfg.spde.dt == 1e-3 and cfg.spde.filter_eps == 0.001
    assert cfg.base_seed == 7 and cfg.n_trajectories == 3


@pytest.mark.parametrize("text, key", [
    ('engine = "fock"\neta = 1.5\n', "eta"),
    ('engine = "fock"\nalpha = -0.1\n', "alpha"),
    ('engine = "fock"\nmass = 0\n', "mass"),
    ('engine = "fock"\nspeed = 1\n', "speed"),
    ('engine = "warp"\n', "engine"),
    ('alpha = 0.1\n', "engine"),
    ('engine = "fock"\nt_final = 1.00003\ndt = 0.001\n', "t_final"),
    ('engine = "fock"\nn_trajectories = 0\n', "n_trajectories"),
    ('engine = "fock"\nalpha = "big"\n', "alpha"),
    ('engine = "fock"\n[fock]\ndim = 3\n', "fock.dim"),
    ('engine = "fock"\n[initial]\nkind = "cat"\n', "initial.kind"),
    ('engine = "fock"\n[initial]\nstate = "bright"\n', "initial.state"),
    ('engine = "gaussian"\n[initial]\nkind = "gaussian"\n', "initial.cov"),
    ('engine = "qfunc"\n[qfunc]\nnx = 4\n', "qfunc"),
    ('engine = "qfunc"\n[qfunc]\nwidth = 4\n', "width"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


def test_eta_message_states_range():
    with pytest.raises(ConfigError) as exc:
        parse_config('engine = "fock"\neta = 1.5\n')
    assert "(0,1]" in str(exc.value).replace(" ", "")


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config('engine = "fock"\nalpha = 0.1\nalpha = 0.2\n')


def test_overrides_win(tmp_path):
    f = tmp_path / "run.toml"
    f.write_text('engine = "gaussian"\nalpha = 0.1\nk_p = -1.0\n', encoding="utf-8")
    cfg = load_config(f, {"alpha": 0.3, "k_p": None})
    assert cfg.params.alpha == 0.3 and cfg.gains.k_p == -1.0


@pytest.mark.parametrize("initial", [
    {"kind": "coherent", "beta": [0.5, -0.25]},
    {"kind": "fock", "amplitudes": [[1, 1.0], [3, 0.0, 0.5]]},
    {"kind": "gaussian", "mean": [0.1, 0.0], "cov": [[0.6, 0.1], [0.1, 0.7]]},
])
def test_config_round_trip(initial):
    data = {"engine": "qfunc", "alpha": 0.2, "k_p": -1.0, "dt": 1e-3, "t_final": 1.0,
            "noise_dt": 1e-4, "initial": initial, "qfunc": {"nx": 64, "extent": 5.0}}
    cfg = build_config(data)
    again = build_config(config_to_dict(cfg))
    assert again == cfg
    json.dumps(config_to_dict(cfg))


def test_presets():
    for name in PRESET_NAMES:
        pr = preset(name)
        assert build_config(config_to_dict(pr.config)) == pr.config
    assert preset("fig1").config.params.alpha == 0.09
    assert preset("fig3").snapshot_times == {"a": 0.0, "b": 1.0, "c": 3.0, "d": 10.0}
    assert preset("fig4").config.n_trajectories == 48
    with pytest.raises(ConfigError):
        preset("fig5")


def test_params_hash_is_stable():
    d = config_to_dict(preset("fig4").config)
    assert io.params_hash(d) == io.params_hash(json.loads(json.dumps(d)))
    d2 = dict(d, alpha=0.31)
    assert io.params_hash(d) != io.params_hash(d2)
    assert len(io.params_hash(d)) == 16


def test_snapshot_text_and_binary_agree(tmp_path):
    grid = qgrid_from_fock(coherent_density(0.7 + 0.2j, 30), GridGeometry(48, 40, -6, 6, -5, 5))
    grid = QGrid(grid.values, grid.geometry, 1.25)
    a = io.emit_snapshot(grid, tmp_path / "q.txt", "abc123")
    b = io.emit_snapshot(grid, tmp_path / "q.qgrd", "abc123", binary=True)
    ga, ha = io.read_snapshot(a)
    gb, hb = io.read_snapshot(b)
    np.testing.assert_allclose(ga.values, gb.values, atol=1e-12, rtol=0)
    np.testing.assert_array_equal(gb.values, grid.values)
    assert ga.geometry == gb.geometry == grid.geometry
    assert ga.time == gb.time == 1.25
    assert ha == hb == "abc1230000000000"
    (tmp_path / "junk").write_text("nope\n")
    with pytest.raises(ValueError):
        io.read_snapshot(tmp_path / "junk")


def test_timeseries_round_trip(tmp_path):
    cfg = ExperimentConfig(engine="gaussian", dt=1e-3, t_final=0.5, n_trajectories=3, stride=10)
    res = run_ensemble(cfg)
    path = io.emit_timeseries(res, tmp_path / "ts.csv")
    back = io.read_timeseries(path)
    assert tuple(back) == io.TIMESERIES_COLUMNS
    np.testing.assert_allclose(back["energy"], res.mean_energy, atol=1e-12)
    np.testing.assert_allclose(back["t"], res.times, atol=1e-12)
    assert math.isnan(back["analytic_ss"][0])
    text = path.read_text()
    assert "e" not in text.split("\n")[1].replace("nan", "")


def test_manifest(tmp_path):
    cfg = preset("fig1").config
    f = io.write_table(tmp_path / "sub" / "x.csv", ("a",), [[1.0]])
    m = json.loads(io.write_manifest(tmp_path, config_to_dict(cfg), [f], {"note": 1}).read_text())
    assert m["files"] == ["sub/x.csv"] and m["note"] == 1
    assert m["params_hash"] == io.params_hash(config_to_dict(cfg))
    assert {"version", "kernel_backend", "numpy", "python", "seed"} <= set(m)
