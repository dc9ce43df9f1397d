"""Command-line front end: price, boundary, convexity, sweep, diagnose, asymptote.

Settings resolve as flags > ``--config`` file > defaults.  The config file is
flat ``key = value`` text with ``#`` comments; keys are the long flag names
(dashes or underscores).  Every report embeds the resolved configuration.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .asymptotics import asymptotic_spec, compare_near_expiry
from .boundary import analyse_params, concavity_scan, extract_boundary, monotonicity_check
from .diagnostics import (
    IdentityReport,
    boundary_identity_report,
    compute_v_field,
    compute_w_field,
    trace_level_curves,
    v_equation_max,
)
from .errors import (
    DomainError,
    ExtractionError,
    GridError,
    InputError,
    IterationLimitError,
    NumericalError,
    ParameterError,
    PutLabError,
)
from .market import MarketParams, boundary_at_expiry, transform
from .pde import Scheme, build_grid, solve_lcp
from .tree import crr_boundary, crr_price

log = logging.getLogger("putlab")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

COMMANDS = ("price", "boundary", "convexity", "sweep", "diagnose", "asymptote")


class ConfigError(Exception):
    """Invalid configuration; the message names the offending line or field."""


# -- configuration schema ---------------------------------------------------


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


def _float_list(text) -> tuple:
    """``a,b,c`` or ``start:stop:count`` (inclusive, evenly spaced)."""
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    t = str(text).strip()
    if ":" in t:
        parts = t.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:count, got {text!r}")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ValueError("range count must be >= 1")
        if n == 1:
            return (lo,)
        return tuple(float(v) for v in np.linspace(lo, hi, n))
    vals = tuple(float(v) for v in t.split(",") if v.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


@dataclass(frozen=True)
class Option:
    type: object
    default: object
    help: str
    choices: tuple | None = None


SHARED = {
    "r": Option(float, 0.06, "risk-free rate"),
    "q": Option(float, 0.03, "dividend yield"),
    "sigma": Option(float, 0.2, "volatility"),
    "strike": Option(float, 100.0, "strike K"),
    "expiry": Option(float, 1.0, "expiry T_F in years"),
    "nx": Option(int, 3201, "space nodes"),
    "nt": Option(int, 3200, "time levels"),
    "scheme": Option(str, "bs", "LCP solver", ("psor", "bs")),
    "theta": Option(float, 0.5, "time-stepping weight (0.5 = Crank-Nicolson)"),
    "tol": Option(float, 1e-8, "solver tolerance in value units"),
    "out": Option(str, "putlab_out", "output directory"),
    "jobs": Option(int, 1, "worker threads"),
}

PER_COMMAND = {
    "price": {
        "spot": Option(_opt_float, None, "spot price (default: strike)"),
        "time": Option(float, 0.0, "calendar time T of the valuation"),
        "tree_steps": Option(int, 10000, "lattice steps for the oracle price"),
    },
    "boundary": {
        "source": Option(str, "pde", "boundary source", ("pde", "tree")),
        "method": Option(str, "linear", "sub-grid refinement", ("linear", "quadratic")),
        "tree_steps": Option(int, 10000, "lattice steps when --source tree"),
    },
    "convexity": {
        "tol_scale": Option(float, 1.0, "multiplier on the 2*dx noise tolerance"),
        "smooth": Option(_bool, False, "3-point moving average before differencing"),
    },
    "sweep": {
        "r_values": Option(_float_list, (0.03, 0.06, 0.09), "r list a,b,c or range start:stop:count"),
        "q_values": Option(_float_list, (0.0, 0.03, 0.06), "q list or range"),
        "sigma_values": Option(_float_list, (0.2, 0.3), "sigma list or range"),
        "tol_scale": Option(float, 1.0, "multiplier on the 2*dx noise tolerance"),
        "smooth": Option(_bool, False, "3-point moving average before differencing"),
    },
    "diagnose": {
        "refine": Option(int, 1, "refinement factor for a second run (1 = none)"),
        "method": Option(str, "quadratic", "sub-grid refinement", ("linear", "quadratic")),
        "alphas": Option(_float_list, None, "v levels to trace (default: v deciles 1,3,5,7,9)"),
        "dump_stride": Option(int, 10, "write every n-th time level to the field CSV"),
        "t_min_frac": Option(float, 0.1, "report identities on t >= t_min_frac * t_max"),
    },
    "asymptote": {
        "tau_min": Option(float, 1e-4, "window start as a fraction of expiry"),
        "tau_max": Option(float, 5e-3, "window end as a fraction of expiry"),
        "horizon": Option(_opt_float, None, "solve only this many years before expiry"),
        "method": Option(str, "quadratic", "sub-grid refinement", ("linear", "quadratic")),
    },
}

ALL_KEYS = set(SHARED) | {k for opts in PER_COMMAND.values() for k in opts}


def schema(command: str) -> dict:
    return {**SHARED, **PER_COMMAND[command]}


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; raises ConfigError naming file and line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file ({exc.strerror})") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = (value, f"{path}:{lineno}")
    return out


def resolve_config(command: str, flags: dict, config_file: str | None = None) -> dict:
    """Merge defaults, file and flags, convert and validate as one unit."""
    opts = schema(command)
    raw = {k: (o.default, "default") for k, o in opts.items()}
    if config_file is not None:
        for key, (value, where) in read_config_file(config_file).items():
            if key in opts:
                raw[key] = (value, where)
    for key, value in flags.items():
        if key in opts:
            raw[key] = (value, f"--{key.replace('_', '-')}")

    errors = []
    cfg = {}
    for key, opt in opts.items():
        value, where = raw[key]
        if where == "default":
            cfg[key] = value
            continue
        try:
            cfg[key] = opt.type(value)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}: field {key}: {exc}")
            continue
        if opt.choices and cfg[key] not in opt.choices:
            errors.append(f"{where}: field {key}: must be one of {', '.join(opt.choices)}")
    if not errors:
        errors.extend(_validate(command, cfg))
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def _validate(command: str, cfg: dict) -> list[str]:
    errs = []
    try:
        MarketParams(cfg["r"], cfg["q"], cfg["sigma"], cfg["strike"], cfg["expiry"])
    except ParameterError as exc:
        errs.append(f"field {str(exc).split(' ', 1)[0]}: {exc}")
    if cfg["nx"] < 3:
        errs.append("field nx: must be >= 3")
    if cfg["nt"] < 2:
        errs.append("field nt: must be >= 2")
    if not 0.0 <= cfg["theta"] <= 1.0:
        errs.append("field theta: must lie in [0, 1]")
    if not cfg["tol"] > 0.0:
        errs.append("field tol: must be > 0")
    if cfg["jobs"] < 1:
        errs.append("field jobs: must be >= 1")
    if cfg.get("tree_steps", 1) < 1:
        errs.append("field tree_steps: must be >= 1")
    if cfg.get("spot") is not None and cfg["spot"] < 0.0:
        errs.append("field spot: must be >= 0")
    if "time" in cfg and not 0.0 <= cfg["time"] <= cfg["expiry"]:
        errs.append("field time: must lie in [0, expiry]")
    if cfg.get("refine", 1) < 1:
        errs.append("field refine: must be >= 1")
    if cfg.get("dump_stride", 1) < 1:
        errs.append("field dump_stride: must be >= 1")
    if "tau_min" in cfg and not 0.0 < cfg["tau_min"] <= cfg["tau_max"]:
        errs.append("field tau_min: need 0 < tau_min <= tau_max")
    if cfg.get("horizon") is not None and not 0.0 < cfg["horizon"] <= cfg["expiry"]:
        errs.append("field horizon: must lie in (0, expiry]")
    if "tol_scale" in cfg and not cfg["tol_scale"] > 0.0:
        errs.append("field tol_scale: must be > 0")
    return errs


def market(cfg: dict) -> MarketParams:
    return MarketParams(cfg["r"], cfg["q"], cfg["sigma"], cfg["strike"], cfg["expiry"])


def _solve(cfg: dict, params: MarketParams, nx=None, nt=None, horizon=None):
    tp = transform(params)
    grid = build_grid(tp, params, nx or cfg["nx"], nt or cfg["nt"], horizon=horizon)
    return solve_lcp(params, grid, scheme=Scheme(cfg["scheme"]), theta=cfg["theta"], tol=cfg["tol"])


def _echo(command: str, cfg: dict) -> dict:
    return {"command": command, **cfg}


# -- commands ---------------------------------------------------------------


def cmd_price(cfg: dict) -> int:
    params = market(cfg)
    spot = params.strike if cfg["spot"] is None else cfg["spot"]
    surface, report = _solve(cfg, params)
    warnings = list(report.warnings)
    g = surface.grid
    if spot > 0.0 and math.log(spot) >= g.x_max:
        warnings.append(f"spot {spot} above the grid edge {math.exp(g.x_max):.6g}; value clamped to 0")
        print(f"warning: {warnings[-1]}", file=sys.stderr)
    pde_value = surface.value_at(spot, cfg["time"])
    remaining = params.expiry - cfg["time"]
    if remaining > 0.0:
        tree_params = MarketParams(params.r, params.q, params.sigma, params.strike, remaining)
        tree_value = crr_price(tree_params, spot, cfg["tree_steps"])
    else:
        tree_value = max(params.strike - spot, 0.0)
    out = Path(cfg["out"])
    io.write_json(
        out / "price.json",
        {
            "config": _echo("price", cfg),
            "spot": spot,
            "time": cfg["time"],
            "pde_price": pde_value,
            "tree_price": tree_value,
            "difference": pde_value - tree_value,
            "max_complementarity_residual": report.max_complementarity_residual,
            "warnings": warnings,
        },
    )
    print(f"pde  {io.fmt(pde_value)}")
    print(f"tree {io.fmt(tree_value)}")
    return EXIT_OK


def cmd_boundary(cfg: dict) -> int:
    params = market(cfg)
    if cfg["source"] == "tree":
        curve = crr_boundary(params, cfg["tree_steps"])
    else:
        surface, _ = _solve(cfg, params)
        curve = extract_boundary(surface, method=cfg["method"])
        del surface
    rows = io.boundary_rows(curve)
    # lattice boundaries alternate between odd and even node sets
    mono = monotonicity_check(curve, pairwise_average=cfg["source"] == "tree")
    expected = boundary_at_expiry(params)
    near_expiry = rows[-1][1]
    summary = {
        "config": _echo("boundary", cfg),
        "rows": len(rows),
        "skipped_levels": curve.skipped_levels,
        "expiry_value": near_expiry,
        "expiry_limit": expected,
        "expiry_rel_gap": abs(near_expiry - expected) / expected,
        "monotone": mono.monotone,
        "monotonicity_violations": mono.violations,
        "worst_violation": mono.worst_violation,
        "mono_tol": mono.mono_tol,
        "pairwise_averaged": mono.averaged,
    }
    out = Path(cfg["out"])
    io.write_csv(out / "boundary.csv", io.BOUNDARY_HEADER, rows)
    io.write_json(out / "boundary_summary.json", summary)
    print(f"rows {len(rows)}  X_f near expiry {io.fmt(near_expiry)}  limit {io.fmt(expected)}")
    print(f"monotone {str(mono.monotone).lower()}  violations {mono.violations}")
    return EXIT_OK


def cmd_convexity(cfg: dict) -> int:
    params = market(cfg)
    rep = analyse_params(
        params, cfg["nx"], cfg["nt"], cfg["scheme"], cfg["theta"], cfg["tol"], cfg["tol_scale"], cfg["smooth"]
    )
    io.write_json(Path(cfg["out"]) / "convexity.json", {"config": _echo("convexity", cfg), **rep.as_dict()})
    print(f"regime {rep.regime.value}  convex {rep.convex}  status {rep.status}")
    if rep.status == "error":
        print(f"error: {rep.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL if rep.status == "fail" else EXIT_OK


SWEEP_HEADER = (
    "r", "q", "sigma", "regime", "convex", "min_second_difference",
    "violations", "s_convex", "status", "error",
)


def cmd_sweep(cfg: dict) -> int:
    combos = sorted(itertools.product(cfg["r_values"], cfg["q_values"], cfg["sigma_values"]))
    rows: list = [None] * len(combos)
    runnable = []
    for i, (r, q, sigma) in enumerate(combos):
        try:
            runnable.append((i, MarketParams(r, q, sigma, cfg["strike"], cfg["expiry"])))
        except ParameterError as exc:
            rows[i] = {"r": r, "q": q, "sigma": sigma, "regime": None, "status": "error",
                       "error": f"ParameterError: {exc}"}
    reports = concavity_scan(
        [p for _, p in runnable], cfg["nx"], cfg["nt"], cfg["scheme"], cfg["theta"], cfg["tol"],
        cfg["tol_scale"], cfg["smooth"], jobs=cfg["jobs"],
    )
    for (i, p), rep in zip(runnable, reports):
        d = rep.as_dict()
        rows[i] = {"r": p.r, "q": p.q, "sigma": p.sigma, **{k: d[k] for k in d if k != "params"}}

    def cell(row, key):
        if key == "violations":
            return len(row.get("violation_intervals") or [])
        v = row.get(key)
        if v is None:
            return ""
        if isinstance(v, str):
            return v.replace(",", ";")
        return v

    out = Path(cfg["out"])
    io.write_csv(out / "sweep.csv", SWEEP_HEADER, [[cell(row, k) for k in SWEEP_HEADER] for row in rows])
    io.write_json(out / "sweep.json", {"config": _echo("sweep", cfg), "rows": rows})
    failed = sum(row["status"] == "error" for row in rows)
    print(f"rows {len(rows)}  failed {failed}")
    return EXIT_NUMERICAL if failed == len(rows) else EXIT_OK


IDENTITY_NAMES = ("w", "w_x", "w_xx", "v", "sign", "L_wxx")


def _diagnose_once(cfg: dict, params: MarketParams, nx: int, nt: int):
    surface, _ = _solve(cfg, params, nx, nt)
    curve = extract_boundary(surface, method=cfg["method"])
    field = compute_v_field(compute_w_field(surface, curve=curve))
    del surface
    report = boundary_identity_report(field, t_min_frac=cfg["t_min_frac"])
    return field, report


def _level_table(report: IdentityReport, h: float):
    rows = []
    for m, t in enumerate(report.t):
        sign = "skipped" if h == 0.0 else report.sign[m]
        rows.append((t, report.w[m], report.w_x[m], report.w_xx[m], report.v[m], sign))
    return rows


def cmd_diagnose(cfg: dict) -> int:
    params = market(cfg)
    tp = transform(params)
    field, report = _diagnose_once(cfg, params, cfg["nx"], cfg["nt"])
    maxima = report.max_residuals()
    if tp.h == 0.0:
        maxima["sign"] = "skipped"
    table_header = ["identity", "max_residual"]
    table = [[name, maxima[name]] for name in IDENTITY_NAMES]
    refined = None
    f = cfg["refine"]
    if f > 1:
        nx2, nt2 = f * (cfg["nx"] - 1) + 1, f * (cfg["nt"] - 1) + 1
        _, rep2 = _diagnose_once(cfg, params, nx2, nt2)
        refined = rep2.max_residuals()
        table_header += ["max_residual_refined", "order"]
        for row in table:
            a, b = maxima[row[0]], refined[row[0]]
            if isinstance(a, str):
                row += ["skipped", "skipped"]
            else:
                row += [b, math.log(a / b) / math.log(f) if a > 0 and b > 0 else float("nan")]

    mask = field.valid & (field.t >= cfg["t_min_frac"] * field.t[-1])[:, None]
    if cfg["alphas"] is None:
        vals = field.v[mask]
        alphas = [float(a) for a in np.percentile(vals, [10, 30, 50, 70, 90])] if vals.size else []
    else:
        alphas = list(cfg["alphas"])
    curves = trace_level_curves(field, alphas, jobs=cfg["jobs"])

    out = Path(cfg["out"])
    io.write_csv(out / "field.csv", io.FIELD_HEADER, io.field_rows(field, cfg["dump_stride"]))
    io.write_json(out / "level_curves.json", [c.as_dict() for c in curves])
    io.write_csv(out / "identities.csv", table_header, table)
    io.write_csv(out / "identity_levels.csv", ("t", "w", "w_x", "w_xx", "v", "sign"), _level_table(report, tp.h))
    summary = {
        "config": _echo("diagnose", cfg),
        "max_residuals": maxima,
        "refined_max_residuals": refined,
        "wxx_positive": report.wxx_positive,
        "wxx_min_interior": report.wxx_min_interior,
        "drift_nonnegative": tp.drift >= 0.0,
        "defining_identity_max": report.defining_identity_max,
        "v_equation_max": v_equation_max(field, t_min_frac=cfg["t_min_frac"]),
        "floor_masked_nodes": field.floor_masked,
        "sign_positive_fraction": None if report.sign_positive is None else float(np.mean(report.sign_positive)),
        "level_curves": len(curves),
        "t_monotone_fraction": float(np.mean([c.t_monotone for c in curves])) if curves else None,
        "t_window": list(report.t_window),
    }
    io.write_json(out / "diagnose.json", summary)
    for row in table:
        print("  ".join(io.fmt(v) for v in row))
    return EXIT_OK


def cmd_asymptote(cfg: dict) -> int:
    params = market(cfg)
    spec = asymptotic_spec(params)
    window = (cfg["tau_min"] * params.expiry, cfg["tau_max"] * params.expiry)
    if window[1] > spec.validity_tau_max:
        raise DomainError(f"window end {window[1]:.6g} is past the expansion's validity edge {spec.validity_tau_max:.6g}")
    surface, _ = _solve(cfg, params, horizon=cfg["horizon"])
    curve = extract_boundary(surface, method=cfg["method"])
    del surface
    profile = compare_near_expiry(curve, spec, window)
    out = Path(cfg["out"])
    io.write_csv(out / "asymptote.csv", io.ASYMPTOTE_HEADER, io.asymptote_rows(profile))
    io.write_json(
        out / "asymptote.json",
        {
            "config": _echo("asymptote", cfg),
            "branch": spec.branch.value,
            "validity_tau_max": spec.validity_tau_max,
            **profile.as_dict(),
        },
    )
    print(f"branch {spec.branch.value}  samples {profile.tau.size}  max gap {io.fmt(profile.max_gap)}")
    return EXIT_OK


HANDLERS = {
    "price": cmd_price,
    "boundary": cmd_boundary,
    "convexity": cmd_convexity,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
    "asymptote": cmd_asymptote,
}


# -- argument parsing -------------------------------------------------------


def _add_options(parser: argparse.ArgumentParser, opts: dict) -> None:
    for key, opt in opts.items():
        flag = "--" + key.replace("_", "-")
        kw = {"dest": key, "default": argparse.SUPPRESS, "help": f"{opt.help} (default: {opt.default})"}
        if opt.type is _bool:
            kw["action"] = "store_const"
            kw["const"] = True
        else:
            kw["type"] = str
            if opt.choices:
                kw["choices"] = opt.choices
        parser.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="putlab", description="American put free-boundary toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "price": "American put value from the PDE surface and the lattice",
        "boundary": "extract the exercise boundary to CSV",
        "convexity": "convexity verdict of the boundary for one parameter set",
        "sweep": "convexity verdicts over a grid of (r, q, sigma)",
        "diagnose": "w and v fields with the boundary identity residuals",
        "asymptote": "near-expiry comparison with the leading-order expansion",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", dest="config", default=None, help="key = value config file")
        _add_options(p, schema(name))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(args.command, flags, args.config)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"putlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[args.command](cfg)
    except (ParameterError, GridError, InputError, DomainError) as exc:
        print(f"putlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IterationLimitError, NumericalError, ExtractionError) as exc:
        print(f"putlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PutLabError as exc:
        print(f"putlab: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
