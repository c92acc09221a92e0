"""Command-line driver.

    mnflow run <config.json | builtin-name> [...] [--jobs k] [--output-dir DIR]
    mnflow validate <config.json>
    mnflow bookkeeping --N 3 --sigma 0.1 --p 2
    mnflow list-scenarios
    mnflow version

Exit status: 0 success, 2 the run finished but its verdict failed,
1 error (bad config, unreadable file, numerical breakdown).  Verbosity is
taken from the MNFLOW_LOG environment variable (DEBUG, INFO, WARNING).
"""
from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
import csv
import datetime as _dt
import json
import logging
import math
import os
from pathlib import Path
import platform
import sys
import time

import numpy as np

from . import __version__
from .config import (BUILTIN, ConfigError, Scenario, _plain, _random_smooth, build_initial_data,
                     builtin_scenario, lint, load_scenario)
from .decay import exponent_bookkeeping, fit_exponent, heat_sanity, run_decay_table
from .fields import FieldState
from .nonlinear import estimate_monitor
from .norms import initial_norm, state_norm_series
from .plotting import figure
from .scheme import linear_solve, picard_fixed_point

log = logging.getLogger("mnflow")

OK, VERDICT_FAILED, ERROR = 0, 2, 1


def write_json(path, obj) -> Path:
    path = Path(path)
    text = json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")
    return path


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (bool, str)) or v is None:
        return "" if v is None else v
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def _cols(origin: str, names) -> list[str]:
    return [f"{origin}:{n}" for n in names]


# ---------------------------------------------------------------------------
# modes

def _run_picard(sc: Scenario, out: Path) -> tuple[int, dict]:
    state0 = build_initial_data(sc)
    inorm = initial_norm(state0, sc.params, sc.domain)
    traj, rep = picard_fixed_point(state0, sc.params, sc.domain, sc.scheme, pairings=True)
    series = state_norm_series(traj, sc.domain, sc.params.sigma)
    summary = {"initial_norm": inorm.to_dict(), "picard": rep.to_dict()}
    write_json(out / "picard_report.json", summary)
    origin = "scheme.picard_fixed_point"
    rows = []
    for i, e in enumerate(rep.diff_energies):
        rows.append([i + 1, e, rep.contraction_factors[i - 1] if i > 0 else None])
    write_csv(out / "picard_iterates.csv", _cols(origin, ["iterate", "diff_energy", "contraction_factor"]), rows)
    keys = sorted(series)
    write_csv(out / "picard_norms.csv", _cols(origin, ["t"]) + _cols("norms.state_norm_series", keys),
              [[t] + [series[k][i] for k in keys] for i, t in enumerate(traj.times)])
    comp = sorted(rep.energy_components.items())
    write_csv(out / "energy.csv", _cols("norms.energy_ET", ["component", "value"]),
              comp + [("total", rep.energy_total)])
    shown = ["L2", "L6", "grad_H01_2", "H12_6", "dt_L2", "dt_grad_L2"]
    figure(out, "norms_vs_time", traj.times, {k: series[k] for k in shown},
           "state norms along the Picard solution", "t", "norm", logy=True)
    code = OK if rep.verdict == "converged" else VERDICT_FAILED
    return code, {"verdict": rep.verdict, "iterates": rep.iterates, "residual": rep.residual}


def _run_decay(sc: Scenario, out: Path) -> tuple[int, dict]:
    cfg = sc.decay_config()
    data0 = build_initial_data(sc)
    cells = [(str(k), float(p)) for k, p in sc.decay.cells]
    fits = run_decay_table(data0, cells, sc.decay.q, cfg)
    if sc.decay.heat_sanity:
        fits.append(heat_sanity(cfg))
    write_json(out / "decay_report.json", {"config": cfg.to_dict(), "fits": [f.to_dict() for f in fits]})
    origin = "decay.run_decay_table"
    write_csv(out / "decay_fits.csv",
              _cols(origin, ["quantity", "p", "q", "t_min", "t_max", "fitted_exponent", "predicted_exponent",
                             "r_squared", "verdict"]),
              [[f.quantity, f.p, f.q, f.window[0], f.window[1], f.fitted_exponent, f.predicted_exponent,
                f.r_squared, f.verdict] for f in fits])
    main = [f for f in fits if f.quantity != "transverse_L2"]
    times = main[0].times if main else fits[0].times
    write_csv(out / "decay_series.csv", _cols(origin, ["t"] + [f.quantity for f in main]),
              [[t] + [f.values[i] for f in main] for i, t in enumerate(times)])
    if main and len(times) >= 2:
        lines = {}
        for f in main:
            if math.isfinite(f.fitted_exponent):
                a, _ = fit_exponent(f.times, f.values)
                c = float(np.mean(np.log(f.values) + a * np.log(f.times)))
                lines[f.quantity] = (-a, c)
        figure(out, "decay_loglog", times, {f.quantity: f.values for f in main},
               "decay of T(t) data on the pre-wrap-around window", "t", "norm",
               logx=True, logy=True, fits=lines)
    code = OK if all(f.verdict == "pass" for f in fits) else VERDICT_FAILED
    return code, {f.quantity: {"fitted": f.fitted_exponent, "predicted": f.predicted_exponent,
                               "verdict": f.verdict} for f in fits}


def _run_monitor(sc: Scenario, out: Path) -> tuple[int, dict]:
    s1 = build_initial_data(sc)
    rng = np.random.default_rng(sc.seed)
    scale = sc.monitor.perturbation * max(float(np.max(np.abs(s1.theta))), float(np.max(np.abs(s1.vel))))
    s2 = s1 + FieldState(_random_smooth(sc.domain, rng, sc.data.modes, 0),
                         _random_smooth(sc.domain, rng, sc.data.modes, 3)).scaled(scale)
    t1 = linear_solve(s1, sc.params, sc.domain, sc.scheme)
    t2 = linear_solve(s2, sc.params, sc.domain, sc.scheme)
    rep = estimate_monitor(t1, t2, sc.params, sc.domain)
    write_json(out / "monitor_report.json", rep.to_dict())
    origin = "nonlinear.estimate_monitor"
    write_csv(out / "monitor.csv", _cols(origin, ["entry", "lhs", "rhs", "ratio"]),
              [[k, e["lhs"], e["rhs"], e["ratio"]] for k, e in sorted(rep.entries.items())])
    bad = not math.isfinite(rep.max_ratio) or rep.max_ratio > sc.monitor.ratio_bound
    return (VERDICT_FAILED if bad else OK), {"max_ratio": rep.max_ratio}


def _run_bookkeeping(sc: Scenario, out: Path) -> tuple[int, dict]:
    bk = sc.bookkeeping
    rep = exponent_bookkeeping(bk.N, bk.sigma, bk.p)
    write_json(out / "bookkeeping.json", rep.to_dict())
    write_csv(out / "bookkeeping.csv", _cols("decay.exponent_bookkeeping", ["quantity", "value"]),
              sorted(rep.to_dict().items()))
    return (OK if rep.verdict == "pass" else VERDICT_FAILED), {"verdict": rep.verdict}


MODE_RUNNERS = {"picard": _run_picard, "linear-decay": _run_decay, "monitor": _run_monitor,
                "bookkeeping": _run_bookkeeping}


def run(sc: Scenario, output_dir=None) -> tuple[int, dict]:
    """Execute one scenario, writing results and a separate metadata file."""
    bad = sc.violations()
    if bad:
        raise ConfigError("; ".join(bad))
    out = Path(output_dir if output_dir is not None else sc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "scenario.json", sc.to_dict())
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    code, summary = MODE_RUNNERS[sc.mode](sc, out)
    meta = {"scenario": sc.name, "mode": sc.mode, "exit_status": code, "version": __version__,
            "started_utc": started.isoformat(), "wall_seconds": time.perf_counter() - t0,
            "python": platform.python_version(), "numpy": np.__version__, "host": platform.node()}
    write_json(out / "metadata.json", meta)
    log.info("%s finished with status %d", sc.name, code)
    return code, summary


# ---------------------------------------------------------------------------
# argument handling

def _resolve(ref: str) -> Scenario:
    if Path(ref).is_file():
        return load_scenario(ref)
    if ref in BUILTIN:
        return builtin_scenario(ref)
    raise FileNotFoundError(f"no config file or built-in scenario named {ref!r}")


def _run_one(ref: str, output_dir, many: bool) -> int:
    try:
        sc = _resolve(ref)
        out = None
        if output_dir is not None:
            out = Path(output_dir) / sc.name if many else Path(output_dir)
        code, summary = run(sc, out)
    except (ConfigError, KeyError) as exc:
        print(f"error in {ref}: {exc}", file=sys.stderr)
        return ERROR
    except (OSError, ValueError, ArithmeticError, NotImplementedError) as exc:
        print(f"error in {ref}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ERROR
    print(json.dumps({"scenario": sc.name, "status": code, **_plain(summary)}, sort_keys=True))
    return code


def cmd_run(args) -> int:
    many = len(args.configs) > 1
    if args.jobs > 1 and many:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(lambda r: _run_one(r, args.output_dir, many), args.configs))
    else:
        codes = [_run_one(r, args.output_dir, many) for r in args.configs]
    if ERROR in codes:
        return ERROR
    return VERDICT_FAILED if VERDICT_FAILED in codes else OK


def cmd_validate(args) -> int:
    try:
        bad = lint(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return ERROR
    print(json.dumps({"config": args.config, "violations": bad}, indent=2))
    return OK if not bad else VERDICT_FAILED


def cmd_bookkeeping(args) -> int:
    try:
        rep = exponent_bookkeeping(args.N, args.sigma, args.p)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR
    print(json.dumps(_plain(rep.to_dict()), sort_keys=True, indent=2))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "bookkeeping.json", rep.to_dict())
    return OK if rep.verdict == "pass" else VERDICT_FAILED


def cmd_list(args) -> int:
    for name, (desc, _) in BUILTIN.items():
        print(f"{name:16s} {desc}")
    return OK


def cmd_version(args) -> int:
    print(f"mnflow {__version__}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mnflow", description="compressible flow in Lagrangian coordinates: "
                                 "linear semigroup, Picard scheme, decay experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run scenario files or built-in scenarios")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for several scenarios")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="lint a scenario file without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("bookkeeping", help="check the exponent inequalities")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_bookkeeping)
    sub.add_parser("list-scenarios", help="print the built-in scenarios").set_defaults(func=cmd_list)
    sub.add_parser("version").set_defaults(func=cmd_version)
    return ap


def _setup_logging():
    level = os.environ.get("MNFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
