"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 truncation overflow.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import (
    PRESET_NAMES,
    ConfigError,
    build_config,
    config_to_dict,
    load_config,
    preset,
)
from .ensemble import (
    EnsembleError,
    ExperimentConfig,
    convergence_stats,
    run_ensemble,
    run_qfunc_snapshots,
    sweep_coupling,
    sweep_gain,
)
from .gaussian import optimal_gain, purity, riccati_xi, steady_state_covariance, steady_state_energy
from .model import DivergenceError, ParameterError, TruncationError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TRUNCATED = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="base seed (trajectory i uses seed + i)")
    p.add_argument("--n", type=int, dest="n_trajectories", help="number of trajectories")
    p.add_argument("--alpha", type=float, help="measurement strength")
    p.add_argument("--kp", type=float, dest="k_p", help="momentum feedback gain")
    p.add_argument("--eta", type=float, help="detection efficiency")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--t-final", type=float, dest="t_final", help="final time")
    p.add_argument("--workers", type=int,
                   help="worker processes (default: $QCOOL_WORKERS, else 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcool", description="Feedback cooling of a position-measured oscillator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steady-state", help="print V_inf, purity, <E_inf> and k_p^opt")
    _common(p)

    for name, engine, what in (("filter", "gaussian", "Gaussian filter"),
                               ("fock", "fock", "Fock-basis stochastic master equation"),
                               ("qfunc", "qfunc", "Q-function SPDE")):
        p = sub.add_parser(name, help=f"one {what} trajectory")
        _common(p)
        p.set_defaults(engine=engine)
        if name == "qfunc":
            p.add_argument("--snapshot-times", default="",
                           help="comma-separated times at which to write Q grids")
            p.add_argument("--binary", action="store_true", help="binary snapshots")

    p = sub.add_parser("ensemble", help="averaged energy over seeded trajectories")
    _common(p)
    p.add_argument("--engine", choices=("gaussian", "fock", "qfunc"))

    p = sub.add_parser("sweep", help="steady-state energy against k_p or alpha")
    _common(p)
    p.add_argument("--param", choices=("kp", "alpha"), required=True)
    p.add_argument("--values", default=None,
                   help="start:stop:count (linear for kp, geometric for alpha)")
    p.add_argument("--simulate", action="store_true",
                   help="add ensemble long-time means (final 25%% window)")

    p = sub.add_parser("preset", help="reproduce the data behind a figure")
    _common(p)
    p.add_argument("name", choices=PRESET_NAMES)
    p.add_argument("--simulate", action="store_true",
                   help="fig1/fig2: also simulate every row (slow)")
    return parser


def _overrides(args) -> dict:
    keys = ("alpha", "k_p", "eta", "dt", "t_final", "n_trajectories", "seed")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if getattr(args, "engine", None) is not None:
        out["engine"] = args.engine
    return out


def resolve_config(args, default_engine: str = "gaussian") -> ExperimentConfig:
    over = _overrides(args)
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config: no such file {args.config}")
        return load_config(args.config, over)
    return build_config({"engine": default_engine}, over)


def _report(cfg: ExperimentConfig, out: Path, files, extra=None) -> None:
    io.write_manifest(out, config_to_dict(cfg), files, extra)
    for f in files:
        print(f"wrote {f}")


def cmd_steady_state(args) -> int:
    cfg = resolve_config(args)
    p, g = cfg.params, cfg.gains
    V = steady_state_covariance(p)
    lines = [
        f"alpha = {p.alpha:.10g}",
        f"eta = {p.eta:.10g}",
        f"xi = {riccati_xi(p):.12f}",
        f"V_qq = {V[0, 0]:.12f}",
        f"V_qp = {V[0, 1]:.12f}",
        f"V_pp = {V[1, 1]:.12f}",
        f"purity = {purity(V, p.hbar):.12f}",
        f"k_p_opt = {optimal_gain(p):.12f}",
    ]
    try:
        lines.append(f"E_inf(k_p={g.k_p:.10g}) = {steady_state_energy(p, g):.12f}")
        lines.append(f"E_inf(k_p_opt) = {steady_state_energy(p, type(g)(0.0, optimal_gain(p))):.12f}")
    except ParameterError as exc:
        lines.append(f"E_inf = undefined ({exc})")
    print("\n".join(lines))
    if args.config is not None or args.out != Path("."):
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "steady_state.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        _report(cfg, args.out, [path])
    return EXIT_OK


def _snapshot_files(tr, cfg, out: Path, labels: dict | None, binary: bool):
    phash = io.params_hash(config_to_dict(cfg))
    files, log = [], {}
    by_time = {round(s.time, 9): s for s in tr.snapshots}
    for label, t in (labels or {}).items():
        cycle = cfg.spde.renorm_every or 1
        t_eff = round(cfg.dt * cycle * round(t / (cfg.dt * cycle)), 9)
        snap = by_time.get(round(min(t_eff, cfg.t_final), 9))
        if snap is None:
            continue
        stem = out / "snapshots"
        files.append(io.emit_snapshot(snap, stem / f"q_{label}.txt", phash))
        if binary:
            files.append(io.emit_snapshot(snap, stem / f"q_{label}.qgrd", phash, binary=True))
        log[label] = snap.time
    return files, log


def cmd_single(args) -> int:
    cfg = resolve_config(args, args.engine)
    out = args.out
    if cfg.engine == "qfunc":
        times = [float(t) for t in args.snapshot_times.split(",") if t.strip()]
        labels = {f"t{t:g}".replace(".", "p"): t for t in times}
        result, tr = run_qfunc_snapshots(cfg, times)
        files, log = _snapshot_files(tr, cfg, out, labels, args.binary)
        files.insert(0, io.emit_timeseries(result, out / "timeseries.csv"))
        _report(cfg, out, files, {"snapshot_times": log,
                                  "max_renorm_drift": tr.max_renorm_drift,
                                  "q_min": tr.min_value, "q_max": tr.max_value})
        return EXIT_OK
    result = run_ensemble(cfg, args.workers)
    _report(cfg, out, [io.emit_timeseries(result, out / "timeseries.csv")])
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = resolve_config(args)
    result = run_ensemble(cfg, args.workers)
    files = [io.emit_timeseries(result, args.out / "timeseries.csv")]
    conv = convergence_stats(result)
    _report(cfg, args.out, files, {"convergence": {
        "settle_time": conv.settle_time, "asymptotic_mean": conv.asymptotic_mean,
        "stderr": conv.stderr, "band": conv.band, "reference": conv.reference}})
    return EXIT_OK


def _parse_values(text: str, log: bool) -> np.ndarray:
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise ConfigError(f"--values: expected start:stop:count, got {text!r}") from None
    if count < 2:
        raise ConfigError("--values: count must be >= 2")
    return np.geomspace(start, stop, count) if log else np.linspace(start, stop, count)


def _sweep_summary(table) -> dict:
    a = table.column("analytic")
    ok = np.isfinite(a)
    return {"param": table.param, "argmin": table.argmin,
            "k_p_opt": None if math.isnan(table.optimum) else table.optimum,
            "min_analytic": float(a[ok].min()) if ok.any() else None,
            "ground_state_energy": 0.5,
            "all_above_ground": bool(np.all(a[ok] > 0.5))}


def _run_sweep(cfg, param, values, simulate, workers, out):
    if param == "k_p":
        table = sweep_gain(cfg, values, simulate, workers)
    else:
        table = sweep_coupling(cfg, values, simulate, workers)
    path = io.emit_sweep(table, out / "sweep.csv")
    return table, path


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    param = "k_p" if args.param == "kp" else "alpha"
    default = "-6:-0.2:1000" if param == "k_p" else "0.001:0.5:200"
    values = _parse_values(args.values or default, log=(param == "alpha"))
    table, path = _run_sweep(cfg, param, values, args.simulate, args.workers, args.out)
    _report(cfg, args.out, [path], {"sweep": _sweep_summary(table)})
    return EXIT_OK


def cmd_preset(args) -> int:
    pr = preset(args.name)
    over = _overrides(args)
    cfg = build_config(config_to_dict(pr.config), over) if over else pr.config
    out = args.out
    extra = {"preset": pr.name, "description": pr.description}
    if pr.kind == "sweep":
        table, path = _run_sweep(cfg, pr.sweep_param, pr.sweep_values, args.simulate,
                                 args.workers, out)
        extra["sweep"] = _sweep_summary(table)
        _report(cfg, out, [path], extra)
    elif pr.kind == "qfunc":
        result, tr = run_qfunc_snapshots(cfg, list(pr.snapshot_times.values()))
        files, log = _snapshot_files(tr, cfg, out, pr.snapshot_times, binary=True)
        files.insert(0, io.emit_timeseries(result, out / "timeseries.csv"))
        extra.update(snapshot_times=log, max_renorm_drift=tr.max_renorm_drift,
                     q_min=tr.min_value, q_max=tr.max_value)
        _report(cfg, out, files, extra)
    else:
        result = run_ensemble(cfg, args.workers)
        files = [io.emit_timeseries(result, out / "timeseries.csv"),
                 io.emit_trajectory(result, 0, out / "single_trajectory.csv"),
                 io.write_table(out / "curves.csv",
                                ("t", "single_trajectory", "ensemble_mean", "stderr",
                                 "analytic_gaussian", "analytic_ss"),
                                [result.times, result.energies[0], result.mean_energy,
                                 result.stderr, result.analytic_gaussian,
                                 np.full(len(result.times), result.analytic_ss)])]
        conv = convergence_stats(result)
        extra["convergence"] = {"settle_time": conv.settle_time,
                                "asymptotic_mean": conv.asymptotic_mean,
                                "stderr": conv.stderr, "reference": conv.reference}
        _report(cfg, out, files, extra)
    return EXIT_OK


COMMANDS = {"steady-state": cmd_steady_state, "filter": cmd_single, "fock": cmd_single,
            "qfunc": cmd_single, "ensemble": cmd_ensemble, "sweep": cmd_sweep,
            "preset": cmd_preset}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except EnsembleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATED if isinstance(exc.cause, TruncationError) else EXIT_DIVERGED
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except TruncationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
