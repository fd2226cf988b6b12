"""TOML experiment configuration and the figure presets.

A configuration holds flat physics and run keys plus optional
``[initial]``, ``[fock]`` and ``[qfunc]`` tables::

    engine = "fock"
    alpha = 0.3
    k_p = -1.35
    t_final = 20.0

    [initial]
    state = "dark"

Unset constants default to hbar = m = omega = eta = 1.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ensemble import ENGINES, ExperimentConfig, InitialState
from .model import ControlGains, ParameterError, SystemParams
from .qfunc import GridGeometry, SpdeConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


DEFAULT_DT = {"gaussian": 1e-3, "fock": 1e-4, "qfunc": 5e-4}
MAX_ROWS = 2000

_TOP = {"engine", "hbar", "mass", "omega", "alpha", "eta", "k_q", "k_p", "dt", "t_final",
        "n_trajectories", "seed", "stride", "noise_dt"}
_INITIAL = {"kind", "state", "beta", "amplitudes", "mean", "cov"}
_FOCK = {"dim"}
_QFUNC = {"nx", "ny", "extent", "x_min", "x_max", "y_min", "y_max", "renorm_every",
          "filter_eps"}
_SECTIONS = {"initial": _INITIAL, "fock": _FOCK, "qfunc": _QFUNC}


def _number(key, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return float(v)


def _complex(key, v):
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError(f"{key}: expected [re, im]")
        return complex(_number(key, v[0]), _number(key, v[1]))
    return complex(_number(key, v))


def _check_keys(table: dict, allowed: set, where: str) -> None:
    for k in table:
        if k not in allowed:
            hint = f" in [{where}]" if where else ""
            raise ConfigError(f"unknown key {k!r}{hint}")


def _initial(tab: dict) -> InitialState:
    _check_keys(tab, _INITIAL, "initial")
    if "state" in tab:
        if tab["state"] != "dark":
            raise ConfigError(f"initial.state: only 'dark' is predefined, got {tab['state']!r}")
        return InitialState.dark()
    kind = tab.get("kind", "coherent")
    try:
        if kind == "coherent":
            return InitialState("coherent", beta=_complex("initial.beta", tab.get("beta", 1.0)))
        if kind == "fock":
            amps = []
            for row in tab.get("amplitudes", []):
                if not isinstance(row, list) or len(row) not in (2, 3):
                    raise ConfigError("initial.amplitudes: rows are [n, re] or [n, re, im]")
                n = _number("initial.amplitudes", row[0], integer=True)
                c = complex(*(_number("initial.amplitudes", r) for r in row[1:]))
                amps.append((n, c))
            return InitialState("fock", amplitudes=tuple(amps))
        if kind == "gaussian":
            mean = tuple(_number("initial.mean", v) for v in tab.get("mean", [0.0, 0.0]))
            if "cov" not in tab:
                raise ConfigError("initial.cov: required for a Gaussian initial state")
            cov = tuple(tuple(_number("initial.cov", v) for v in row) for row in tab["cov"])
            return InitialState("gaussian", mean=mean, cov=cov)
    except ParameterError as exc:
        raise ConfigError(f"initial: {exc}") from None
    raise ConfigError(f"initial.kind: expected coherent, fock or gaussian, got {kind!r}")


def _spde(tab: dict, dt: float) -> SpdeConfig:
    _check_keys(tab, _QFUNC, "qfunc")
    geo = {}
    for k in ("nx", "ny"):
        if k in tab:
            geo[k] = _number(f"qfunc.{k}", tab[k], integer=True)
    if "extent" in tab:
        e = _number("qfunc.extent", tab["extent"])
        geo.update(x_min=-e, x_max=e, y_min=-e, y_max=e)
    for k in ("x_min", "x_max", "y_min", "y_max"):
        if k in tab:
            geo[k] = _number(f"qfunc.{k}", tab[k])
    kw = {}
    if "renorm_every" in tab:
        kw["renorm_every"] = _number("qfunc.renorm_every", tab["renorm_every"], integer=True)
    if "filter_eps" in tab:
        kw["filter_eps"] = _number("qfunc.filter_eps", tab["filter_eps"])
    try:
        return SpdeConfig(dt=dt, geometry=GridGeometry(**geo), **kw)
    except ParameterError as exc:
        raise ConfigError(f"qfunc: {exc}") from None


def build_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed table (plus flag overrides) into an ExperimentConfig."""
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    _check_keys(top, _TOP, "")
    for name in _SECTIONS:
        if name in data and not isinstance(data[name], dict):
            raise ConfigError(f"{name}: expected a table")
    if "engine" not in data:
        raise ConfigError("engine: missing required key")
    engine = data["engine"]
    if engine not in ENGINES:
        raise ConfigError(f"engine: unknown engine {engine!r}; expected one of {', '.join(ENGINES)}")

    phys = {k: _number(k, data[k]) for k in ("hbar", "mass", "omega", "alpha", "eta") if k in data}
    try:
        params = SystemParams(**phys)
    except ParameterError as exc:
        bad = str(exc).split(" ")[0]
        raise ConfigError(f"{bad}: {exc}") from None
    gains = ControlGains(_number("k_q", data.get("k_q", 0.0)), _number("k_p", data.get("k_p", 0.0)))

    dt = _number("dt", data.get("dt", DEFAULT_DT[engine]))
    t_final = _number("t_final", data.get("t_final", 10.0))
    if dt <= 0:
        raise ConfigError("dt: must be > 0")
    if t_final <= 0:
        raise ConfigError("t_final: must be > 0")
    steps = int(round(t_final / dt))
    if steps < 1 or abs(steps * dt - t_final) > 1e-9 * t_final:
        raise ConfigError(f"t_final: {t_final} is not a whole number of steps of dt={dt}")
    n = _number("n_trajectories", data.get("n_trajectories", 1), integer=True)
    if n < 1:
        raise ConfigError("n_trajectories: must be >= 1")
    seed = _number("seed", data.get("seed", 0), integer=True)
    if seed < 0:
        raise ConfigError("seed: must be >= 0")
    stride = _number("stride", data.get("stride", max(1, steps // MAX_ROWS)), integer=True)
    if stride < 1:
        raise ConfigError("stride: must be >= 1")
    noise_dt = _number("noise_dt", data["noise_dt"]) if "noise_dt" in data else None

    initial = _initial(data.get("initial", {}))
    fock = data.get("fock", {})
    _check_keys(fock, _FOCK, "fock")
    dim = _number("fock.dim", fock.get("dim", 30), integer=True)
    if dim < 5:
        raise ConfigError("fock.dim: must be >= 5")
    spde = _spde(data.get("qfunc", {}), dt) if engine == "qfunc" else None
    try:
        return ExperimentConfig(params=params, gains=gains, engine=engine, initial=initial,
                                dt=dt, t_final=t_final, n_trajectories=n, base_seed=seed,
                                stride=stride, noise_dt=noise_dt, fock_dim=dim, spde=spde)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse TOML text.  Duplicate keys are reported with their line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return build_config(data, overrides)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain, JSON-serializable view of a resolved configuration."""
    ini = cfg.initial
    initial = {"kind": ini.kind}
    if ini.kind == "coherent":
        initial["beta"] = [ini.beta.real, ini.beta.imag]
    elif ini.kind == "fock":
        initial["amplitudes"] = [[n, c.real, c.imag] for n, c in ini.amplitudes]
    else:
        initial["mean"] = list(ini.mean)
        initial["cov"] = [list(r) for r in ini.cov]
    out = {
        "engine": cfg.engine,
        **asdict(cfg.params),
        "k_q": cfg.gains.k_q,
        "k_p": cfg.gains.k_p,
        "dt": cfg.dt,
        "t_final": cfg.t_final,
        "n_trajectories": cfg.n_trajectories,
        "seed": cfg.base_seed,
        "stride": cfg.stride,
        "initial": initial,
        "fock": {"dim": cfg.fock_dim},
    }
    if cfg.noise_dt is not None:
        out["noise_dt"] = cfg.noise_dt
    if cfg.spde is not None:
        g = cfg.spde.geometry
        out["qfunc"] = {"nx": g.nx, "ny": g.ny, "x_min": g.x_min, "x_max": g.x_max,
                        "y_min": g.y_min, "y_max": g.y_max,
                        "renorm_every": cfg.spde.renorm_every,
                        "filter_eps": cfg.spde.filter_eps}
    return out


@dataclass
class Preset:
    """A figure's parameter set plus what to compute from it."""

    name: str
    config: ExperimentConfig
    kind: str
    sweep_param: str | None = None
    sweep_values: np.ndarray | None = None
    snapshot_times: dict = field(default_factory=dict)
    description: str = ""


def preset(name: str) -> Preset:
    """Parameter sets of the four figures with the artifact's run defaults."""
    base = SystemParams(hbar=1.0, mass=1.0, omega=1.0, eta=1.0)
    if name == "fig1":
        cfg = ExperimentConfig(params=replace(base, alpha=0.09), gains=ControlGains(0.0, -1.35),
                               engine="gaussian", dt=1e-3, t_final=126.0, stride=100)
        return Preset(name, cfg, "sweep", "k_p", np.linspace(-6.0, -0.2, 10001),
                      description="steady-state energy against k_p at alpha = 0.09")
    if name == "fig2":
        cfg = ExperimentConfig(params=replace(base, alpha=0.3), gains=ControlGains(0.0, -1.35),
                               engine="gaussian", dt=1e-3, t_final=126.0, stride=100)
        return Preset(name, cfg, "sweep", "alpha", np.geomspace(1e-3, 0.5, 500),
                      description="steady-state energy against alpha at k_p = -1.35")
    if name == "fig3":
        cfg = ExperimentConfig(params=replace(base, alpha=0.3), gains=ControlGains(0.0, -1.35),
                               engine="qfunc", initial=InitialState.dark(), dt=5e-4,
                               t_final=10.0, stride=20, spde=SpdeConfig(dt=5e-4))
        return Preset(name, cfg, "qfunc",
                      snapshot_times={"a": 0.0, "b": 1.0, "c": 3.0, "d": 10.0},
                      description="Q-function snapshots of the dark state under feedback")
    if name == "fig4":
        cfg = ExperimentConfig(params=replace(base, alpha=0.3), gains=ControlGains(0.0, -1.35),
                               engine="fock", initial=InitialState.dark(), dt=5e-4,
                               t_final=126.0, n_trajectories=48, base_seed=0, stride=200)
        return Preset(name, cfg, "ensemble",
                      description="energy of the dark state: one trajectory, 48-average, "
                                  "Gaussian analytic curve")
    raise ConfigError(f"unknown preset {name!r}; expected fig1, fig2, fig3 or fig4")


PRESET_NAMES = ("fig1", "fig2", "fig3", "fig4")
