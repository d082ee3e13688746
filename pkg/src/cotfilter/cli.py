"""Command-line front end.

Five subcommands (``track``, ``trade``, ``distance``, ``solve``,
``calibrate``) share one configuration story: an INI file with one
section per subcommand, overridden by flags, resolved against defaults.
Unknown keys are rejected, input paths are checked before any work
starts, and every run writes a ``manifest.json`` (resolved config, seed,
versions) that suffices to reproduce it bit for bit.

Exit codes: 0 success, 2 configuration problem, 3 runtime failure
(outputs written before the failure are kept).
"""

from __future__ import annotations

import argparse
import configparser
import glob
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import __version__
from .calibrate import EmOptions, ModelSkeleton, em_fit
from .errors import (
    ConfigError,
    DataGapError,
    InsufficientHistoryError,
)
from .experiments.tracking import TrackingScenario, run_tracking
from .experiments.trading import (
    TradingConfig,
    load_price_csv,
    run_backtest,
    write_ratios_csv,
)
from .gaussot import (
    CandidateParams,
    ModelStep,
    bicausal_distance,
    joint_noncausal_distance,
)
from .minimax import RobustConfig
from .solver import solve_step
from .statespace import FLOAT_FMT, GaussianBelief, trajectory_from_csv

__all__ = [
    "main",
    "RunConfig",
    "cmd_track",
    "cmd_trade",
    "cmd_distance",
    "cmd_solve",
    "cmd_calibrate",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_SUBCOMMANDS = ("track", "trade", "distance", "solve", "calibrate")

#: Errors that mean the run was asked for incorrectly, as opposed to
#: failing while doing legitimate work.
_CONFIG_ERRORS = (
    ConfigError,
    DataGapError,
    InsufficientHistoryError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    configparser.Error,
)


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _strs(text: str) -> tuple[str, ...]:
    return tuple(p for p in text.replace(",", " ").split() if p)


def _int(text) -> int:
    try:
        return int(str(text))
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _float(text) -> float:
    try:
        return float(str(text))
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc


# Per-subcommand key schema: name -> (converter, default). Required keys
# use the _REQUIRED sentinel and must come from the file or a flag.
_REQUIRED = object()

_SCHEMAS: dict[str, dict[str, tuple]] = {
    "track": {
        "seed": (_int, 1234),
        "out": (str, "cotfilter_track"),
        "jobs": (_int, 0),
        "radii": (_floats, (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)),
        "modes": (_strs, ("em", "ot", "cot")),
        "instances": (_int, 10),
        "T": (_int, 100),
        "T_train": (_int, 10),
        "dt": (_float, 1.0),
        "q": (_float, 10.0),
        "r": (_float, 50.0),
        "n_train": (_int, 1),
    },
    "trade": {
        "seed": (_int, 0),
        "out": (str, "cotfilter_trade"),
        "jobs": (_int, 0),
        "prices": (str, ""),
        "radii": (_floats, (0.1, 0.2, 0.3, 0.4, 0.5,
                            0.6, 0.7, 0.8, 0.9, 1.0)),
        "modes": (_strs, ("nonrobust", "ot", "cot")),
        "warmup": (_int, 100),
        "window": (_int, 20),
        "entry_z": (_float, 2.0),
        "lot": (_float, 100.0),
        "tc_rate": (_float, 1e-4),
        "initial_wealth": (_float, 10000.0),
        "rf_annual": (_float, 0.02),
    },
    "distance": {
        "seed": (_int, 0),
        "out": (str, "cotfilter_distance"),
        "jobs": (_int, 0),
        "A": (str, _REQUIRED),
        "C": (str, _REQUIRED),
        "B": (str, _REQUIRED),
        "D": (str, _REQUIRED),
        "Sigma": (str, _REQUIRED),
        "B_alt": (str, _REQUIRED),
        "D_alt": (str, _REQUIRED),
        "Sigma_alt": (str, _REQUIRED),
    },
    "solve": {
        "seed": (_int, 0),
        "out": (str, "cotfilter_solve"),
        "jobs": (_int, 0),
        "A": (str, _REQUIRED),
        "C": (str, _REQUIRED),
        "B": (str, _REQUIRED),
        "D": (str, _REQUIRED),
        "Sigma": (str, _REQUIRED),
        "xhat": (str, ""),
        "radius": (_float, _REQUIRED),
        "mode": (str, "cot"),
        "max_iters": (_int, 20),
    },
    "calibrate": {
        "seed": (_int, 0),
        "out": (str, "cotfilter_calibrate"),
        "jobs": (_int, 0),
        "trajectories": (str, _REQUIRED),
        "A": (str, _REQUIRED),
        "C": (str, _REQUIRED),
        "init_mean": (str, ""),
        "init_cov": (str, ""),
        "init_B": (str, ""),
        "init_D": (str, ""),
        "max_em_iters": (_int, 50),
        "loglik_rel_tol": (_float, 1e-6),
    },
}


@dataclass
class RunConfig:
    """Resolved settings of one invocation."""

    subcommand: str
    values: dict
    seed: int
    out_dir: str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotfilter",
        description="Robust Kalman filtering studies and utilities",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with a [%s] section"
                       % name)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int,
                       help="worker processes (0 = auto)")
        p.add_argument("--radius", type=float, help="single ball radius")
        p.add_argument("--radii", help="comma-separated ball radii")
        p.add_argument("--mode", help="single filter mode")
        p.add_argument("--modes", help="comma-separated filter modes")
        if name == "track":
            p.add_argument("--instances", type=int)
        if name == "trade":
            p.add_argument("--prices", help="price CSV path")
        if name == "calibrate":
            p.add_argument("--trajectories",
                           help="trajectory CSV glob or directory")
    return parser


def _flag_overrides(args: argparse.Namespace, schema: dict) -> dict:
    """Translate provided flags into schema keys."""
    out: dict = {}
    if args.radius is not None and args.radii is not None:
        raise ConfigError("give --radius or --radii, not both")
    if args.mode is not None and args.modes is not None:
        raise ConfigError("give --mode or --modes, not both")
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out"] = args.out
    if args.jobs is not None:
        out["jobs"] = args.jobs

    if "radius" in schema:
        if args.radius is not None:
            out["radius"] = args.radius
        if args.radii is not None:
            radii = _floats(args.radii)
            if len(radii) != 1:
                raise ConfigError("this subcommand takes a single radius")
            out["radius"] = radii[0]
    elif "radii" in schema:
        if args.radius is not None:
            out["radii"] = (args.radius,)
        if args.radii is not None:
            out["radii"] = _floats(args.radii)
    elif args.radius is not None or args.radii is not None:
        raise ConfigError("this subcommand takes no radius")

    if "mode" in schema:
        if args.mode is not None:
            out["mode"] = args.mode
        if args.modes is not None:
            modes = _strs(args.modes)
            if len(modes) != 1:
                raise ConfigError("this subcommand takes a single mode")
            out["mode"] = modes[0]
    elif "modes" in schema:
        if args.mode is not None:
            out["modes"] = (args.mode,)
        if args.modes is not None:
            out["modes"] = _strs(args.modes)
    elif args.mode is not None or args.modes is not None:
        raise ConfigError("this subcommand takes no mode")

    for extra in ("instances", "prices", "trajectories"):
        v = getattr(args, extra, None)
        if v is not None:
            out[extra] = v
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file section and flags; reject unknown
    keys and missing required ones."""
    name = args.subcommand
    schema = _SCHEMAS[name]
    values = {k: d for k, (_, d) in schema.items() if d is not _REQUIRED}

    if args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        ini = configparser.ConfigParser()
        ini.optionxform = str  # keys are case-sensitive
        ini.read(args.config)
        for section in ini.sections():
            if section not in _SUBCOMMANDS:
                raise ConfigError(
                    f"unknown config section [{section}] in {args.config}")
        if ini.has_section(name):
            for key, raw in ini.items(name):
                if key not in schema:
                    raise ConfigError(
                        f"unknown key {key!r} in [{name}] of {args.config}")
                conv = schema[key][0]
                values[key] = conv(raw)

    for key, val in _flag_overrides(args, schema).items():
        values[key] = val

    missing = [k for k, (_, d) in schema.items()
               if d is _REQUIRED and k not in values]
    if missing:
        raise ConfigError(
            f"missing required keys for {name}: {', '.join(missing)}")

    return RunConfig(subcommand=name, values=values,
                     seed=int(values.get("seed", 0)),
                     out_dir=str(values["out"]))


def _jobs(values: dict) -> int:
    j = int(values.get("jobs", 0))
    return j if j > 0 else max(1, os.cpu_count() or 1)


def _load_matrix(path: str, key: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"{key}: file not found: {path}")
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {path}: {exc}") from None


def _save_matrix(path, M) -> None:
    np.savetxt(path, np.atleast_2d(M), fmt=FLOAT_FMT, delimiter=",")


def _print_matrix(name: str, M) -> None:
    print(name)
    for row in np.atleast_2d(M):
        print(",".join(FLOAT_FMT % v for v in row))


def _write_manifest(run: RunConfig) -> None:
    os.makedirs(run.out_dir, exist_ok=True)
    payload = {
        "subcommand": run.subcommand,
        "seed": run.seed,
        "config": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in sorted(run.values.items())
        },
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "platform": platform.platform(),
    }
    try:
        import scipy

        payload["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    with open(os.path.join(run.out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fixture_prices() -> str:
    return str(resources.files("cotfilter") / "data" / "pair_prices.csv")


def cmd_track(run: RunConfig) -> int:
    v = run.values
    scenario = TrackingScenario(
        dt=v["dt"], T=v["T"], T_train=v["T_train"], q=v["q"], r=v["r"],
        instances=v["instances"], radii=tuple(v["radii"]),
        base_seed=v["seed"], n_train=v["n_train"],
    )
    scenario.validate()
    modes = tuple(v["modes"])
    _write_manifest(run)
    table = run_tracking(scenario, modes, out_dir=run.out_dir,
                         jobs=_jobs(v))
    if table.diffs:
        from . import report

        report.render_rmse_cdf(
            table, os.path.join(run.out_dir, "rmse_cdf.png"))
    print(f"track: {len(table.instance_ids)} instances kept, "
          f"{len(table.skipped)} skipped, "
          f"{len(table.rmse)} (method, radius) cells -> {run.out_dir}")
    for inst, reason in table.skipped:
        print(f"  skipped instance {inst}: {reason}", file=sys.stderr)
    return EXIT_OK


def _trade_cell(args) -> tuple:
    cfg, mode, radius, cell_dir = args
    os.makedirs(cell_dir, exist_ok=True)
    report = run_backtest(cfg, mode, radius, out_dir=cell_dir)
    return mode, radius, report


def cmd_trade(run: RunConfig) -> int:
    v = run.values
    path = v["prices"] or _fixture_prices()
    if not os.path.exists(path):
        raise ConfigError(f"price file not found: {path}")
    prices = load_price_csv(path)
    cfg = TradingConfig(
        prices=prices, warmup=v["warmup"], window=v["window"],
        entry_z=v["entry_z"], lot=v["lot"], tc_rate=v["tc_rate"],
        initial_wealth=v["initial_wealth"], rf_annual=v["rf_annual"],
        radii=tuple(v["radii"]),
    )
    cfg.validate()
    modes = tuple(v["modes"])
    for mode in modes:
        if mode not in ("nonrobust", "ot", "cot"):
            raise ConfigError(
                f"unknown mode {mode!r}: expected nonrobust, ot or cot")
    run.values["prices"] = os.path.abspath(path)
    _write_manifest(run)

    cells = []
    for mode in modes:
        if mode == "nonrobust":
            cells.append((cfg, mode, 0.0,
                          os.path.join(run.out_dir, "nonrobust")))
        else:
            for eps in cfg.radii:
                cells.append((cfg, mode, float(eps),
                              os.path.join(run.out_dir,
                                           f"{mode}_{eps:g}")))
    jobs = _jobs(v)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trade_cell, cells))
    else:
        results = [_trade_cell(c) for c in cells]

    reports = [rep for _, _, rep in results]
    write_ratios_csv(reports, cfg,
                     os.path.join(run.out_dir, "ratios.csv"))
    from . import report as reportmod

    reportmod.render_equity(reports,
                            os.path.join(run.out_dir, "equity.png"))
    for rep in reports:
        tag = rep.mode if rep.mode == "nonrobust" \
            else f"{rep.mode} r={rep.radius:g}"
        print(f"trade: {tag}: sharpe {rep.sharpe:.4f} "
              f"sortino {rep.sortino:.4f} trades {rep.n_trades} "
              f"final wealth {rep.final_wealth:.2f}")
        for w in rep.warnings:
            print(f"  warning ({tag}): {w}", file=sys.stderr)
    print(f"trade: ratios.csv and equity.png -> {run.out_dir}")
    return EXIT_OK


def cmd_distance(run: RunConfig) -> int:
    v = run.values
    step = ModelStep(*(_load_matrix(v[k], k) for k in "ACBD"))
    Sigma = _load_matrix(v["Sigma"], "Sigma")
    alt = CandidateParams(
        _load_matrix(v["B_alt"], "B_alt"),
        _load_matrix(v["D_alt"], "D_alt"),
        _load_matrix(v["Sigma_alt"], "Sigma_alt"),
    )
    _write_manifest(run)
    w = bicausal_distance(step, alt, Sigma)
    wj = joint_noncausal_distance(step, alt, Sigma)
    print(f"w {FLOAT_FMT % w}")
    print(f"W_joint {FLOAT_FMT % wj}")
    with open(os.path.join(run.out_dir, "distances.csv"), "w",
              newline="") as fh:
        fh.write("w,W_joint\n")
        fh.write(f"{FLOAT_FMT % w},{FLOAT_FMT % wj}\n")
    return EXIT_OK


def cmd_solve(run: RunConfig) -> int:
    v = run.values
    step = ModelStep(*(_load_matrix(v[k], k) for k in "ACBD"))
    Sigma = _load_matrix(v["Sigma"], "Sigma")
    if v["xhat"]:
        xhat = _load_matrix(v["xhat"], "xhat").ravel()
    else:
        xhat = np.zeros(step.n)
    cfg = RobustConfig(radius=v["radius"], mode=v["mode"],
                       max_iters=v["max_iters"])
    cfg.validate()
    _write_manifest(run)

    sol = solve_step(step, Sigma, cfg)
    G = sol.gain
    offset = step.A @ xhat - G @ (step.C @ (step.A @ xhat))
    _print_matrix("B_star", sol.params.B_bar)
    _print_matrix("D_star", sol.params.D_bar)
    _print_matrix("Sigma_star", sol.params.Sigma_bar)
    _print_matrix("gain", G)
    _print_matrix("offset", offset.reshape(1, -1))
    print(f"value {FLOAT_FMT % sol.value}")
    print(f"distance {FLOAT_FMT % sol.distance}")
    print(f"converged {sol.converged}")

    sol.trace.to_csv(os.path.join(run.out_dir, "solve_trace.csv"))
    for name, M in (("B_star", sol.params.B_bar),
                    ("D_star", sol.params.D_bar),
                    ("Sigma_star", sol.params.Sigma_bar),
                    ("gain", G), ("offset", offset.reshape(1, -1))):
        _save_matrix(os.path.join(run.out_dir, f"{name}.csv"), M)
    from . import report

    report.render_solver_trace(
        sol.trace, os.path.join(run.out_dir, "solve_trace.png"))
    return EXIT_OK


def _trajectory_files(pattern: str) -> list[str]:
    if os.path.isdir(pattern):
        files = sorted(glob.glob(os.path.join(pattern, "*.csv")))
    else:
        files = sorted(glob.glob(pattern))
    if not files:
        raise ConfigError(f"no trajectory CSVs match {pattern!r}")
    return files


def cmd_calibrate(run: RunConfig) -> int:
    v = run.values
    A = _load_matrix(v["A"], "A")
    C = _load_matrix(v["C"], "C")
    n = A.shape[0]
    init_mean = (_load_matrix(v["init_mean"], "init_mean").ravel()
                 if v["init_mean"] else np.zeros(n))
    init_cov = (_load_matrix(v["init_cov"], "init_cov")
                if v["init_cov"] else np.eye(n))
    opts = EmOptions(
        max_em_iters=v["max_em_iters"],
        loglik_rel_tol=v["loglik_rel_tol"],
        init_B=_load_matrix(v["init_B"], "init_B") if v["init_B"]
        else None,
        init_D=_load_matrix(v["init_D"], "init_D") if v["init_D"]
        else None,
    )
    files = _trajectory_files(v["trajectories"])
    observations = [trajectory_from_csv(p).observations for p in files]
    _write_manifest(run)

    skeleton = ModelSkeleton(A, C, GaussianBelief(init_mean, init_cov))
    result = em_fit(skeleton, observations, opts)
    _save_matrix(os.path.join(run.out_dir, "B_hat.csv"), result.B_hat)
    _save_matrix(os.path.join(run.out_dir, "D_hat.csv"), result.D_hat)
    with open(os.path.join(run.out_dir, "loglik.csv"), "w",
              newline="") as fh:
        fh.write("iter,loglik\n")
        for k, ll in enumerate(result.loglik_path):
            fh.write(f"{k},{FLOAT_FMT % ll}\n")
    from . import report

    report.render_loglik(result.loglik_path,
                         os.path.join(run.out_dir, "loglik.png"))
    print(f"calibrate: {len(files)} trajectories, {result.iters} EM "
          f"iterations, final loglik {result.loglik_path[-1]:.6f} "
          f"-> {run.out_dir}")
    return EXIT_OK


_DISPATCH = {
    "track": cmd_track,
    "trade": cmd_trade,
    "distance": cmd_distance,
    "solve": cmd_solve,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = resolve_config(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _DISPATCH[run.subcommand](run)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map to the exit contract
        print(f"runtime failure ({exc.__class__.__name__}): {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
