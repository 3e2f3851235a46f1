"""Command-line front end: simulate, verify, sweep, validate.

All outputs (CSV trajectories, JSON reports, sweep summaries) are
deterministic byte-for-byte for identical config + argv: no timestamps, no
machine identifiers, floats printed with 17 significant digits so values
round-trip exactly.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import itertools
import json
import os
import sys

import numpy as np

from . import scenarios
from .config import ConfigError, apply_overrides, from_dict
from .simulate import DivergedError, TrajectoryLog, run_scenario
from .verification import VerificationReport, build_report

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def write_csv(log: TrajectoryLog, path: str) -> None:
    """Trajectory samples, fixed column order, 17-significant-digit floats."""
    n = log.cfg.plant.n
    n_u = log.cfg.plant.n_u
    n_r = log.cfg.reference.n_r
    n_w = log.cfg.plant.n_w
    header: list[str] = ["t"]
    header += [f"x[{i}]" for i in range(n)]
    header += [f"x_m[{i}]" for i in range(n)]
    header += [f"e[{i}]" for i in range(n)]
    header += [f"u[{i}]" for i in range(n_u)]
    header += [f"r[{i}]" for i in range(n_r)]
    header += [f"W[{i}]" for i in range(n_w * n_u)]
    header += [f"W_hat[{i}]" for i in range(n_w * n_u)]
    header += [f"W_hat_star[{i}]" for i in range(n_w * n_u)]
    header += ["s", "lambda_min_Phi_ff", "V", "V_star",
               "residual_layer1", "residual_layer2"]

    m = len(log.t)
    cols = np.column_stack(
        [
            log.t,
            log.x,
            log.x_m,
            log.e,
            log.u,
            log.r,
            log.W_true.reshape(m, -1),
            log.W_hat.reshape(m, -1),
            log.W_hat_star.reshape(m, -1),
            log.s,
            log.lambda_min_Phi_ff,
            log.V,
            log.V_star,
            log.residual_layer1,
            log.residual_layer2,
        ]
    )
    assert cols.shape[1] == len(header)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in cols:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_report(report: VerificationReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report.as_dict(), indent=2) + "\n")


def _print_report(report: VerificationReport) -> None:
    for item in report.items:
        tag = "PASS" if item.passed else "FAIL"
        line = (
            f"[{tag}] {item.name}: measured={item.measured!r} "
            f"bound={item.bound!r} tol={item.tolerance!r}"
        )
        if item.note:
            line += f" ({item.note})"
        print(line)
    if report.all_pass:
        print(f"{report.scenario}: all {len(report.items)} checks passed")
    else:
        failed = sum(1 for i in report.items if not i.passed)
        print(f"{report.scenario}: {failed} of {len(report.items)} checks FAILED")


def _resolve_config_path(ref: str) -> str:
    if os.path.exists(ref):
        return ref
    try:
        return scenarios.path(ref)
    except KeyError:
        raise ConfigError(
            "--config", f"{ref!r} is neither a file nor a bundled scenario name"
        ) from None


def _load_with_flags(args: argparse.Namespace):
    path = _resolve_config_path(args.config)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.loads(fh.read())
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    if args.set:
        data = apply_overrides(data, args.set)
    flag_sets = []
    if getattr(args, "dt", None) is not None:
        flag_sets.append(f"integrator.dt={args.dt!r}")
    if getattr(args, "horizon", None) is not None:
        flag_sets.append(f"integrator.horizon={args.horizon!r}")
    if getattr(args, "ie_policy", None) is not None:
        kind = {"window": "fixed_window", "threshold": "online_threshold"}[
            args.ie_policy
        ]
        flag_sets.append(f'ie_policy.kind="{kind}"')
    if flag_sets:
        data = apply_overrides(data, flag_sets)
    return from_dict(data), data


def _add_common(parser: argparse.ArgumentParser, with_run_flags: bool = True) -> None:
    parser.add_argument(
        "--config", required=True,
        help="config file path or bundled scenario name (g1..g4)",
    )
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry (dotted key, JSON value); repeatable",
    )
    if with_run_flags:
        parser.add_argument("--dt", type=float, help="integrator step override")
        parser.add_argument(
            "--horizon", type=float, help="simulation horizon override (seconds)"
        )
        parser.add_argument(
            "--ie-policy", choices=("window", "threshold"), dest="ie_policy",
            help="excitation policy override (fixed window / online threshold)",
        )
        parser.add_argument(
            "--backend", choices=("auto", "compiled", "python"), default=None,
            help="integration backend (default: auto)",
        )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualadapt",
        description="simulate and verify dual-estimator adaptive control scenarios",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario and export the trajectory")
    _add_common(p_sim)
    p_sim.add_argument("--out", help="CSV output path")

    p_ver = sub.add_parser("verify", help="run a scenario and check analytic bounds")
    _add_common(p_ver)
    p_ver.add_argument("--out", help="also export the trajectory CSV here")
    p_ver.add_argument("--report", help="write the JSON report here")

    p_swp = sub.add_parser("sweep", help="run a config grid (cartesian product)")
    _add_common(p_swp)
    p_swp.add_argument("--out", required=True, help="output directory")

    p_val = sub.add_parser("validate", help="check a config without running it")
    _add_common(p_val, with_run_flags=False)
    return parser


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg, _ = _load_with_flags(args)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    log = run_scenario(cfg, backend=args.backend)
    if args.out:
        write_csv(log, args.out)
        print(f"{cfg.name}: {len(log.t)} samples -> {args.out}")
    else:
        print(f"{cfg.name}: {len(log.t)} samples (no --out given; nothing written)")
    if log.activated:
        print(f"excitation drive activated at T={log.T:.17g}")
    else:
        print("excitation drive never activated")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    cfg, _ = _load_with_flags(args)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    log = run_scenario(cfg, backend=args.backend)
    if args.out:
        write_csv(log, args.out)
    report = build_report(log)
    if args.report:
        write_report(report, args.report)
    _print_report(report)
    return EXIT_OK if report.all_pass else EXIT_CHECK_FAILED


def _expand_grid(sweep: dict) -> list[dict[str, object]]:
    grid = sweep.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep.grid", "must be a non-empty object of key -> list")
    keys = list(grid.keys())
    value_lists = []
    for k in keys:
        vals = grid[k]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.grid.{k}", "must be a non-empty list")
        value_lists.append(vals)
    return [dict(zip(keys, combo)) for combo in itertools.product(*value_lists)]


def _sweep_point(payload: tuple) -> dict:
    index, data, point, out_dir, backend = payload
    run_data = copy.deepcopy(data)
    run_data.pop("sweep", None)
    assignments = [f"{k}={json.dumps(v)}" for k, v in point.items()]
    run_data = apply_overrides(run_data, assignments)
    cfg = from_dict(run_data)
    stem = os.path.join(out_dir, f"{cfg.name}_{index:03d}")
    try:
        log = run_scenario(cfg, backend=backend)
    except (DivergedError, FloatingPointError) as exc:
        return {
            "index": index,
            "overrides": point,
            "status": "diverged",
            "detail": str(exc),
            "all_pass": False,
        }
    write_csv(log, stem + ".csv")
    report = build_report(log)
    write_report(report, stem + ".json")
    return {
        "index": index,
        "overrides": point,
        "status": "ok",
        "all_pass": report.all_pass,
        "failed_checks": [i.name for i in report.items if not i.passed],
    }


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg, data = _load_with_flags(args)
    sweep = data.get("sweep")
    if sweep is None:
        raise ConfigError("sweep", "config has no sweep section")
    points = _expand_grid(sweep)
    os.makedirs(args.out, exist_ok=True)
    env_threads = os.environ.get("DUAL_ADAPT_THREADS")
    max_workers = int(env_threads) if env_threads else (os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, len(points)))
    payloads = [
        (i, data, point, args.out, args.backend) for i, point in enumerate(points)
    ]
    if max_workers == 1:
        rows = [_sweep_point(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    summary = {
        "scenario": cfg.name,
        "points": rows,
        "all_pass": all(r["all_pass"] for r in rows),
    }
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, indent=2) + "\n")
    for r in rows:
        status = "ok" if r["all_pass"] else r.get("status", "failed")
        print(f"point {r['index']:03d} {r['overrides']}: {status}")
    print(f"sweep summary -> {summary_path}")
    if any(r.get("status") == "diverged" for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK if summary["all_pass"] else EXIT_CHECK_FAILED


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg, _ = _load_with_flags(args)
    for w in cfg.warnings:
        print(f"warning: {w}")
    print(
        f"config OK: {cfg.name} "
        f"(n={cfg.plant.n}, n_u={cfg.plant.n_u}, n_w={cfg.plant.n_w}, "
        f"steps={cfg.n_steps})"
    )
    return EXIT_OK


def run_command(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "simulate":
            return _cmd_simulate(args)
        if args.verb == "verify":
            return _cmd_verify(args)
        if args.verb == "sweep":
            return _cmd_sweep(args)
        if args.verb == "validate":
            return _cmd_validate(args)
        parser.error(f"unknown verb {args.verb!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FloatingPointError as exc:
        print(f"error: non-finite dynamics: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv: list[str] | None = None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
