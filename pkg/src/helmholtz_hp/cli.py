"""Command-line entry point.

    helmholtz-hp COMMAND [--config PATH] [--out DIR] [--k F] [--h F] [--p N]
                         [--mu F] [--preset NAME] [--seed N] [--jobs N]

Commands: solve, decompose, sweep, eta, csol, report. A TOML config (or the
JSON manifest written by a previous run) describes the run; flags override
it. Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from . import hp_fem as fem
from .dtn_map import estimate_cdtn1, make_dtn
from .symbol_core import eta_threshold, mu_zero

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("helmholtz_hp")

COMMANDS = ("solve", "decompose", "sweep", "eta", "csol", "report")
SWEEP_KINDS = ("quasiopt", "pollution", "planewave")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
JOBS_ENV = "HELMHOLTZ_HP_JOBS"

# keys read by the CLI itself; everything else belongs to SweepConfig
RUN_KEYS = {"command", "kind", "k", "h", "mu", "dimension", "k_min", "k_max", "step", "svg"}
RUN_TYPES = {
    "command": str, "kind": str, "k": float, "h": float, "mu": float,
    "dimension": int, "k_min": float, "k_max": float, "step": float, "svg": bool,
}
SWEEP_TYPES = {
    "preset": str, "rule": str, "C1": float, "C2": float, "p": int, "hk": float,
    "R": float, "problem": str, "source": str, "seed": int, "estimate_eta": bool, "jobs": int,
}


class EmptyReportError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    config_path: str | None
    out: Path
    overrides: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    sweep_keys: frozenset = frozenset()

    def get(self, key, default=None):
        return self.settings.get(key, default)


# ---- configuration ------------------------------------------------------------


def load_config(path: str | os.PathLike) -> dict:
    """Read a TOML config or a JSON run manifest into a flat dict."""
    p = Path(path)
    if not p.is_file():
        raise ex.ConfigError("config", f"config file not found: {p}")
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text(encoding="utf-8"))
            if "config" in data:
                cfg = dict(data["config"])
                if "command" in data:
                    cfg.setdefault("command", data["command"])
                return cfg
            return data
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ex.ConfigError("config", f"cannot parse {p}: {exc}") from exc


def _coerce(key: str, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ex.ConfigError(key, f"{key} must be true or false")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ex.ConfigError(key, f"{key} must be an integer")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ex.ConfigError(key, f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ex.ConfigError(key, f"{key} must be a string")
    return value


def split_settings(raw: dict) -> tuple[dict, dict]:
    """Type-check a flat config dict and split it into (run keys, sweep keys)."""
    run, sweep = {}, {}
    for key, value in raw.items():
        if key in RUN_KEYS:
            run[key] = _coerce(key, value, RUN_TYPES[key])
        elif key == "k_values":
            if not isinstance(value, (list, tuple)):
                raise ex.ConfigError("k_values", "k_values must be an array of numbers")
            sweep[key] = tuple(_coerce("k_values", v, float) for v in value)
        elif key == "coefficients":
            if not isinstance(value, dict):
                raise ex.ConfigError("coefficients", "coefficients must be a table")
            sweep[key] = {k: list(v) for k, v in value.items()}
        elif key in SWEEP_TYPES:
            sweep[key] = _coerce(key, value, SWEEP_TYPES[key])
        else:
            raise ex.ConfigError(key, f"unknown key {key!r}")
    return run, sweep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="helmholtz-hp", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--out", metavar="DIR", default=".")
    ap.add_argument("--k", type=float)
    ap.add_argument("--h", type=float)
    ap.add_argument("--p", type=int)
    ap.add_argument("--mu", type=float)
    ap.add_argument("--preset")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int)
    return ap


def resolve(args: argparse.Namespace) -> tuple[RunConfig, ex.SweepConfig]:
    raw = load_config(args.config) if args.config else {}
    run, sweep = split_settings(raw)
    if "command" in run and run["command"] != args.command:
        logger.warning("config was written for %r, running %r", run["command"], args.command)
    overrides = {}
    for key in ("k", "h", "mu"):
        val = getattr(args, key)
        if val is not None:
            run[key] = overrides[key] = val
    for key in ("p", "preset", "seed", "jobs"):
        val = getattr(args, key)
        if val is not None:
            sweep[key] = overrides[key] = val
    if "jobs" not in sweep and os.environ.get(JOBS_ENV):
        try:
            sweep["jobs"] = int(os.environ[JOBS_ENV])
        except ValueError as exc:
            raise ex.ConfigError("jobs", f"{JOBS_ENV} must be an integer") from exc
    if "k" in run:
        if not run["k"] > 0:
            raise ex.ConfigError("k", "k must be positive")
        if args.command in ("sweep", "decompose") and "k" in overrides:
            sweep["k_values"] = (run["k"],)
    if "h" in run and not run["h"] > 0:
        raise ex.ConfigError("h", "h must be positive")
    if "mu" in run and not run["mu"] > 0:
        raise ex.ConfigError("mu", "mu must be positive")
    cfg = ex.SweepConfig.from_dict(sweep)
    if "h" in run and not run["h"] < cfg.R:
        raise ex.ConfigError("h", "h must be smaller than R")
    rc = RunConfig(args.command, args.config, Path(args.out), overrides, run, frozenset(sweep))
    return rc, cfg


# ---- output -------------------------------------------------------------------


def emit_report(report, fmt: str, path, label: str = "") -> Path:
    """Write a sweep report as CSV or as an SVG log-log error plot."""
    path = Path(path)
    rows = getattr(report, "rows", report)
    if not rows:
        raise EmptyReportError("report is empty; nothing written")
    if fmt == "csv":
        report.to_csv(path)
    elif fmt == "svg":
        plot_errors({label or "run": report}, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def plot_errors(reports: dict, path, column: str = "rel_error") -> None:
    """Log-log lines of ``column`` against k, one per labelled report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "helmholtz-hp"
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = 0
    for label, rep in reports.items():
        ks = np.array([r["k"] if isinstance(r, dict) else r.k for r in rep.rows], dtype=float)
        ys = np.array([r[column] if isinstance(r, dict) else getattr(r, column) for r in rep.rows], dtype=float)
        good = np.isfinite(ys) & (ys > 0)
        if np.any(good):
            ax.loglog(ks[good], ys[good], "o-", label=label)
            drawn += 1
    if drawn == 0:
        plt.close(fig)
        raise EmptyReportError(f"no positive {column} values to plot")
    ax.set_xlabel("k")
    ax.set_ylabel(column.replace("_", " "))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@dataclass
class CsvTable:
    """Rows read back from a CSV file written by this tool."""

    rows: list[dict]


def read_csv(path) -> CsvTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            conv = {}
            for key, val in rec.items():
                try:
                    conv[key] = float(val)
                except ValueError:
                    conv[key] = val
            rows.append(conv)
    return CsvTable(rows)


def write_manifest(rc: RunConfig, cfg: ex.SweepConfig, extra: dict | None = None) -> Path:
    config = cfg.to_dict()
    config.update({k: v for k, v in rc.settings.items() if k != "command"})
    manifest = {
        "command": rc.command,
        "config": config,
        "seed": cfg.seed,
        "versions": {
            "helmholtz_hp": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest["results"] = extra
    path = rc.out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---- commands -----------------------------------------------------------------


def _single_space(rc: RunConfig, cfg: ex.SweepConfig):
    k = rc.get("k")
    if k is None:
        raise ex.ConfigError("k", "k is required for this command")
    h, p = ex.discretisation(cfg, k)
    if rc.get("h") is not None:
        h = rc.get("h")
    if "p" in rc.overrides or (cfg.rule != "threshold" and rc.get("h") is not None):
        p = cfg.p
    return k, fem.build_space(cfg.R, h, p)


def cmd_solve(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    k, space = _single_space(rc, cfg)
    coeffs = cfg.coefficient_field()
    dtn = make_dtn(k, cfg.R, 1)
    system = fem.assemble(coeffs, k, space, dtn)
    if cfg.problem == "l2_source":
        load = fem.load_l2(ex.make_source(cfg.source, k), space)
    else:
        load = fem.load_planewave(1.0, k, space, dtn)
    sol = fem.solve(system, load, cfg.problem)
    sol.to_csv(rc.out / "solution.csv")
    summary = {"k": k, "h": space.h, "p": space.p, "dof": space.dof_count, "h1k_norm": fem.h1k_norm_fem(sol, k)}
    ex.write_csv(rc.out / "summary.csv", list(summary), [summary])
    write_manifest(rc, cfg, summary)
    return EXIT_OK


def cmd_decompose(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    coeffs = cfg.coefficient_field()
    mu0 = mu_zero(coeffs)
    mu = rc.get("mu", mu0)
    if "source" not in rc.sweep_keys:
        # the splitting needs data with content in the elliptic band
        cfg = ex.SweepConfig(**{**cfg.to_dict(), "source": "two-scale"})
    rep = ex.decomposition_sweep(cfg, mu=mu)
    rep.to_csv(rc.out / "decomposition.csv")
    results = {
        "mu": mu,
        "slopes_high": {str(j): v for j, v in rep.scaling.slopes_high.items()},
        "slopes_low": {str(j): v for j, v in rep.scaling.slopes_low.items()},
        "max_partition_error": rep.max_partition_error,
    }
    write_manifest(rc, cfg, results)
    return EXIT_OK


def cmd_sweep(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    kind = rc.get("kind") or ("quasiopt" if cfg.rule == "threshold" else "pollution")
    if kind not in SWEEP_KINDS:
        raise ex.ConfigError("kind", f"kind must be one of {', '.join(SWEEP_KINDS)}")
    reports = {}
    if kind == "quasiopt":
        rep = ex.quasiopt_sweep(cfg)
        reports[f"threshold C1={cfg.C1:g}"] = rep
    elif kind == "pollution":
        rep = ex.pollution_sweep(cfg)
        reports[f"{cfg.rule} p={cfg.p}"] = rep
        contrast = ex.SweepConfig(**{**cfg.to_dict(), "rule": "threshold"})
        other = ex.pollution_sweep(contrast)
        reports[f"threshold C1={cfg.C1:g}"] = other
        emit_report(other, "csv", rc.out / "sweep_threshold.csv")
    else:
        rep = ex.relative_error_planewave(cfg)
        reports[f"threshold C1={cfg.C1:g}"] = rep
    emit_report(rep, "csv", rc.out / "sweep.csv")
    if rc.get("svg", True):
        plot_errors(reports, rc.out / "sweep.svg")
    write_manifest(rc, cfg, {"kind": kind, **rep.fitted})
    return EXIT_OK


def cmd_eta(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    k, space = _single_space(rc, cfg)
    coeffs = cfg.coefficient_field()
    fine = ex.reference_space(space)
    eta = ex.estimate_eta(space, coeffs, k, fine, seed=cfg.seed)
    csol = ex.estimate_csol(coeffs, k, fine, seed=cfg.seed)
    cdtn1 = estimate_cdtn1(make_dtn(k, cfg.R, 1), fine)
    row = {
        "k": k,
        "h": space.h,
        "p": space.p,
        "dof": space.dof_count,
        "eta": eta.value,
        "eta_k": k * eta.value,
        "eta_k_bound": eta_threshold(coeffs, cdtn1),
        "csol": csol.value,
        "c_dtn1": cdtn1,
        "converged": eta.converged and csol.converged,
    }
    ex.write_csv(rc.out / "eta.csv", list(row), [row])
    write_manifest(rc, cfg, row)
    return EXIT_OK


def cmd_csol(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    if rc.get("k_min") is not None or rc.get("k_max") is not None:
        k_min, k_max = rc.get("k_min"), rc.get("k_max")
        if k_min is None or k_max is None or not 0 < k_min < k_max:
            raise ex.ConfigError("k_min", "a scan needs 0 < k_min < k_max")
        scan = ex.trapping_scan(k_min, k_max, rc.get("step", 0.1), cfg.preset, cfg.R, jobs=cfg.jobs, seed=cfg.seed)
        scan.to_csv(rc.out / "csol.csv")
        write_manifest(
            rc,
            cfg,
            {
                "baseline": scan.baseline,
                "peak_k": scan.peak_k,
                "peak_ratio": scan.peak_ratio,
                "confirmed": {f"{k:.1f}": list(v) for k, v in scan.confirmed.items()},
            },
        )
        return EXIT_OK
    k = rc.get("k")
    if k is None:
        raise ex.ConfigError("k", "k is required for this command")
    dim = rc.get("dimension", 1)
    if dim == 2:
        value = ex.csol_2d(cfg.preset, k, cfg.R, method="power", seed=cfg.seed)
        row = {"k": k, "dimension": 2, "csol": value}
    elif dim == 1:
        _, space = _single_space(rc, cfg)
        est = ex.estimate_csol(cfg.coefficient_field(), k, ex.reference_space(space), seed=cfg.seed)
        row = {"k": k, "dimension": 1, "csol": est.value, "iterations": est.iterations, "converged": est.converged}
    else:
        raise ex.ConfigError("dimension", "dimension must be 1 or 2")
    ex.write_csv(rc.out / "csol.csv", list(row), [row])
    write_manifest(rc, cfg, row)
    return EXIT_OK


def cmd_report(rc: RunConfig, cfg: ex.SweepConfig) -> int:
    src = rc.out / "sweep.csv"
    table = read_csv(src)
    if not table.rows:
        raise EmptyReportError(f"{src} has no rows; nothing written")
    plot_errors({"sweep": table}, rc.out / "sweep.svg")
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "decompose": cmd_decompose,
    "sweep": cmd_sweep,
    "eta": cmd_eta,
    "csol": cmd_csol,
    "report": cmd_report,
}


_handler = logging.StreamHandler()
_handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))


def _setup_logging() -> None:
    # follow the current stderr, which may have been swapped since import
    _handler.stream = sys.stderr
    if _handler not in logger.handlers:
        logger.addHandler(_handler)
    if logger.level == logging.NOTSET:
        logger.setLevel(logging.WARNING)


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        rc, cfg = resolve(args)
        rc.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[rc.command](rc, cfg)
    except ex.ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except fem.SolverError as exc:
        print(f"solver failure at k={exc.k:g}, h={exc.h:g}, p={exc.p}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, EmptyReportError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
