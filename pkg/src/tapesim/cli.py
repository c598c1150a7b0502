"""Command-line entry point.

Subcommands: run (single library or array, per the config), rail (force
an array run), sweep (vary one config field over a value list), analyze
(closed-form queueing calculator), validate (config lint). Config keys
can be overridden one-for-one with --set key=value. The default output
directory comes from TAPESIM_OUT when set.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import export
from .config import (
    ConfigError,
    SimConfig,
    convert_field,
    derive_arrival_rate,
    is_config_field,
    load_config,
    with_param,
)
from .engine import object_records, simulate_single
from .geometry import MotionTimeModel, build_grid
from .kpis import KpiReport, compute_kpis
from .queueing import QueueModelParams, end_to_end_estimate, sizing_table
from .rail import run_rail
from .seeding import SERVICE, derive_rng, sweep_rng_seed

_SELECTORS = {
    "mean_last_byte_latency_s": lambda rep: rep.last_byte.mean_s,
    "mean_first_byte_latency_s": lambda rep: rep.first_byte.mean_s,
    "std_last_byte_latency_s": lambda rep: rep.last_byte.std_s,
    "max_last_byte_latency_s": lambda rep: rep.last_byte.max_s,
    "objects_touched": lambda rep: rep.objects_touched,
    "exchanges_total": lambda rep: rep.exchanges_total,
    "exchange_rate_per_hour": lambda rep: rep.exchange_rate_per_hour,
    "read_errors_total": lambda rep: rep.read_errors_total,
    "dr_queue_mean_len": lambda rep: rep.dr_queue_mean_len,
    "d_queue_mean_len": lambda rep: rep.d_queue_mean_len,
    "retrieval_failures": lambda rep: rep.retrieval_failures,
    "objects_completed": lambda rep: rep.objects_completed,
}


def _default_outdir() -> str:
    return os.environ.get("TAPESIM_OUT", "tapesim_out")


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _collect_overrides(args) -> dict[str, str]:
    overrides = _parse_overrides(args.set or [])
    if getattr(args, "protocol", None):
        overrides["protocol"] = args.protocol
    if getattr(args, "threshold", None) is not None:
        overrides["failure_threshold_steps"] = str(args.threshold)
    if getattr(args, "duration_hours", None) is not None:
        overrides["sim_duration_hours"] = str(args.duration_hours)
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = str(args.seed)
    if getattr(args, "libraries", None) is not None:
        overrides["num_libraries"] = str(args.libraries)
    return overrides


def _print_summary(report: KpiReport) -> None:
    lb = report.last_byte
    mean = "no data" if lb.mean_s is None else f"{lb.mean_s:.1f}s"
    print(
        f"objects {report.objects_completed}/{report.requests_total} completed, "
        f"mean last-byte latency {mean}, exchanges {report.exchanges_total} "
        f"({report.exchange_rate_per_hour:.1f}/h), read errors {report.read_errors_total}"
    )
    if report.unstable_hint:
        print("warning: DR queue backlog kept growing; the system looks unstable")


def _execute(cfg: SimConfig, outdir: str, motion_histogram: bool) -> KpiReport:
    os.makedirs(outdir, exist_ok=True)
    if cfg.num_libraries > 1:
        rail_result = run_rail(cfg)
        for j, res in enumerate(rail_result.results):
            export.write_result_trace(res, outdir, library_index=j)
        report = rail_result.report
    else:
        result = simulate_single(cfg)
        export.write_result_trace(result, outdir, library_index=None)
        report = compute_kpis(result, object_records(result))
    export.write_report(report, outdir)
    if motion_histogram:
        grid = build_grid(cfg)
        model = MotionTimeModel.calibrate(grid, cfg.robot_xph)
        rng = derive_rng(cfg.rng_seed, 0, SERVICE)
        export.write_motion_histograms(model, rng, os.path.join(outdir, "motion_histogram.csv"))
    return report


def cmd_run(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    report = _execute(cfg, args.outdir, args.motion_histogram)
    _print_summary(report)
    return 0


def cmd_rail(args) -> int:
    overrides = _collect_overrides(args)
    cfg = load_config(args.config, overrides)
    if cfg.num_libraries < 2:
        print("error: rail needs num_libraries >= 2 (use --libraries)", file=sys.stderr)
        return 2
    report = _execute(cfg, args.outdir, args.motion_histogram)
    _print_summary(report)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    values = [v for v in args.values.split(",") if v]
    if not values:
        print("error: sweep needs a non-empty value list", file=sys.stderr)
        return 2
    if not is_config_field(args.param):
        print(f"error: {args.param!r} is not a configuration field", file=sys.stderr)
        return 2
    if args.selector not in _SELECTORS:
        print(
            f"error: unknown selector {args.selector!r}; "
            f"choose from {', '.join(sorted(_SELECTORS))}",
            file=sys.stderr,
        )
        return 2
    selector = _SELECTORS[args.selector]
    lines = ["value,mean,stddev,runs_ok,error"]
    for index, raw_value in enumerate(values):
        samples = []
        error = ""
        for rep in range(args.runs):
            try:
                run_cfg = with_param(cfg, args.param, convert_field(args.param, raw_value))
                run_cfg = with_param(
                    run_cfg, "rng_seed", sweep_rng_seed(cfg.rng_seed, index, rep)
                )
                if run_cfg.num_libraries > 1:
                    report = run_rail(run_cfg).report
                else:
                    result = simulate_single(run_cfg)
                    report = compute_kpis(result, object_records(result))
                picked = selector(report)
                if picked is None:
                    raise RuntimeError("selector produced no data")
                samples.append(float(picked))
            except Exception as exc:  # keep sweeping, record the failure
                error = f"{type(exc).__name__}: {exc}"
        if samples:
            arr = np.asarray(samples)
            lines.append(
                f"{raw_value},{arr.mean()!r},{arr.std(ddof=0)!r},{len(samples)},{error}"
            )
        else:
            lines.append(f"{raw_value},,,0,{error}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    lams = [float(x) for x in args.lams.split(",") if x]
    rows = sizing_table(lams, mu=1.0 / args.service_mean, c=args.servers, ca2=args.ca2, cs2=args.cs2)
    out = ["lam,rho,L_q,W_q,G_q"]
    for row in rows:
        out.append(f"{row['lam']!r},{row['rho']!r},{row['L_q']},{row['W_q']},{row['G_q']}")
    if args.drives and args.drive_service_mean:
        out.append("lam,end_to_end_estimate_s")
        for lam in lams:
            robot = QueueModelParams(lam=lam, mu=1.0 / args.service_mean, c=args.servers, name="robots")
            drive = QueueModelParams(
                lam=lam, mu=1.0 / args.drive_service_mean, c=args.drives, cs2=args.cs2, name="drives"
            )
            try:
                out.append(f"{lam!r},{end_to_end_estimate(robot, drive)!r}")
            except Exception as exc:
                out.append(f"{lam!r},{type(exc).__name__}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    lam_day = derive_arrival_rate(cfg) * 86400.0 / cfg.step_seconds
    print(
        f"OK: {cfg.grid_rows}x{cfg.grid_cols} grid, {cfg.num_drives} drives, "
        f"{cfg.num_robots} robots, capacity {cfg.total_capacity_pb:.4g} PB, "
        f"{lam_day:.4g} object requests/day, protocol {cfg.protocol.value}, "
        f"(n={cfg.code_n}, k={cfg.code_k}, s={cfg.fragments_dispatched})"
    )
    return 0


def _add_common(parser, needs_config=True):
    if needs_config:
        parser.add_argument("-c", "--config", required=True, help="config file path")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--protocol", choices=["redundant", "failure"], help="retrieval protocol")
    parser.add_argument("--threshold", type=int, help="failure-protocol decision threshold, steps")
    parser.add_argument("--duration-hours", type=float, help="simulated hours")
    parser.add_argument("--seed", type=int, help="base RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapesim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the simulation described by a config")
    _add_common(p_run)
    p_run.add_argument("--libraries", type=int, help="override num_libraries")
    p_run.add_argument("-o", "--outdir", default=_default_outdir())
    p_run.add_argument("--motion-histogram", action="store_true", help="also export motion-time histograms")
    p_run.set_defaults(func=cmd_run)

    p_rail = sub.add_parser("rail", help="run a multi-library array")
    _add_common(p_rail)
    p_rail.add_argument("--libraries", type=int, help="override num_libraries")
    p_rail.add_argument("-o", "--outdir", default=_default_outdir())
    p_rail.add_argument("--motion-histogram", action="store_true")
    p_rail.set_defaults(func=cmd_rail)

    p_sweep = sub.add_parser("sweep", help="vary one config field over a value list")
    _add_common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="SimConfig field to vary")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--runs", type=int, default=1, help="repetitions per value")
    p_sweep.add_argument(
        "--selector", default="mean_last_byte_latency_s", help="KPI to collect per run"
    )
    p_sweep.add_argument("-o", "--output", help="CSV output path (default stdout)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_an = sub.add_parser("analyze", help="closed-form queueing sizing table")
    p_an.add_argument("--servers", type=int, required=True, help="server count c")
    p_an.add_argument("--service-mean", type=float, required=True, help="mean service time, seconds")
    p_an.add_argument("--lams", required=True, help="comma-separated arrival rates, per second")
    p_an.add_argument("--ca2", type=float, default=1.0)
    p_an.add_argument("--cs2", type=float, default=1.0)
    p_an.add_argument("--drives", type=int, help="drive count for the end-to-end estimate")
    p_an.add_argument("--drive-service-mean", type=float, help="mean drive service, seconds")
    p_an.set_defaults(func=cmd_analyze)

    p_val = sub.add_parser("validate", help="parse and validate a config")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
