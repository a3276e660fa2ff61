"""Command-line entry point: ``econav run|compare|fit|validate-sets``.

Exit codes: 0 pass, 1 invalid input, 2 safety violation, 3 solver abort,
4 destination not reached (or, for ``compare``, energy not reduced).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import fitting
from .scenario import ScenarioError, load_scenario, shipped_scenario_path
from .simulate import (ABORT, ERROR, PASS, VIOLATION, Metrics, SimLog, compare_schemes,
                       compute_metrics, csv_header, csv_rows, run_receding_horizon)
from .uncertainty import coverage_threshold, required_sample_count, validate_coverage

log = logging.getLogger("econav")

EXIT_OK, EXIT_INPUT, EXIT_VIOLATION, EXIT_ABORT, EXIT_FAIL = 0, 1, 2, 3, 4
LOG_ENV = "ECONAV_LOG_LEVEL"


def _resolve_scenario(arg):
    p = Path(arg)
    if p.exists():
        return load_scenario(p)
    try:
        return load_scenario(shipped_scenario_path(arg))
    except ScenarioError:
        raise ScenarioError(f"scenario file {arg} not found") from None


def _overrides(args):
    ea = None if args.energy_aware is None else args.energy_aware == "on"
    return dict(energy_aware=ea, horizon=args.horizon, seed=args.seed,
                dump_sets=True if args.dump_sets else None, trace=True if args.trace else None,
                out_dir=args.out)


def write_outputs(slog: SimLog, metrics: Metrics, out_dir: Path, stem: str, figures=False):
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(len(slog.scenario.obstacles)))
        w.writerows(csv_rows(slog))
    payload = metrics.to_dict()
    payload.update(energy_aware=slog.energy_aware, diagnostic=slog.diagnostic,
                   coverage_excess=slog.coverage_excess if np.isfinite(slog.coverage_excess) else None)
    (out_dir / f"{stem}-metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    if slog.set_dump:
        (out_dir / f"{stem}-sets.json").write_text(json.dumps(slog.set_dump) + "\n")
    if slog.trace:
        with open(out_dir / f"{stem}-trace.jsonl", "w") as fh:
            for row in slog.trace:
                fh.write(json.dumps(row) + "\n")
    if figures:
        from .plotting import plot_run

        d_safe = min((o.d_safe for o in slog.scenario.obstacles), default=0.0)
        plot_run(csv_path, out_dir, stem, d_safe=d_safe)
    return csv_path


def _exit_for(metrics: Metrics):
    if metrics.status == ABORT:
        return EXIT_ABORT
    if metrics.status == VIOLATION:
        print(f"safety violation: first at t={metrics.first_violation_s:.2f} s "
              f"({metrics.violations} step(s) with clearance below d_safe)", file=sys.stderr)
        return EXIT_VIOLATION
    if metrics.status != PASS:
        print("destination not reached within the time limit", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_run(args):
    sc = _resolve_scenario(args.scenario).with_overrides(**_overrides(args))
    slog = run_receding_horizon(sc)
    metrics = compute_metrics(slog)
    path = write_outputs(slog, metrics, Path(sc.out_dir), sc.name, figures=args.figures)
    print(json.dumps({"status": metrics.status, "energy_wh": metrics.energy_wh,
                      "travel_time_s": metrics.travel_time_s, "min_d_eo_m": metrics.min_d_eo_m,
                      "csv": str(path)}))
    if slog.aborted:
        print(f"solver abort: {slog.diagnostic}", file=sys.stderr)
    return _exit_for(metrics)


def cmd_compare(args):
    sc = _resolve_scenario(args.scenario).with_overrides(**_overrides(args))
    cmp, la, lu = compare_schemes(sc)
    out = Path(sc.out_dir)
    pa = write_outputs(la, cmp.aware, out, f"{sc.name}-aware", figures=args.figures)
    pu = write_outputs(lu, cmp.unaware, out, f"{sc.name}-unaware", figures=args.figures)
    if args.figures:
        from .plotting import plot_comparison

        plot_comparison(pa, pu, out / f"{sc.name}-comparison.png")
    doc = cmp.to_dict()
    (out / "comparison.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({k: doc[k] for k in ("verdict", "energy_wh", "travel_time_s",
                                          "energy_ratio", "time_ratio")}))
    if cmp.verdict == ERROR:
        print(f"solver abort: {cmp.diagnostic}", file=sys.stderr)
        return EXIT_ABORT
    if cmp.verdict == PASS:
        return EXIT_OK
    worst = max((_exit_for(cmp.aware), _exit_for(cmp.unaware)),
                key=lambda c: {EXIT_VIOLATION: 3, EXIT_ABORT: 2, EXIT_FAIL: 1}.get(c, 0))
    if worst == EXIT_OK:
        print("energy-aware run did not use less energy", file=sys.stderr)
        return EXIT_FAIL
    return worst


def _read_columns(path, n):
    """Numeric sample rows; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{path}: non-numeric sample ({exc})") from None
    if data.ndim != 2 or data.shape[1] != n:
        raise ScenarioError(f"{path}: expected {n} columns per row")
    return data.T


FIT_COLUMNS = {"battery": ("tau_m", "omega_m", "P_b"), "torque": ("v_x", "tau_max"),
               "curvature": ("s_x", "rho")}


def cmd_fit(args):
    kind = args.kind
    if args.synthetic:
        if kind == "battery":
            cols = fitting.synthetic_battery_samples()
        elif kind == "torque":
            cols = fitting.synthetic_torque_envelope()
        else:
            s = np.linspace(0.0, 300.0, 31)
            cols = (s, 1e-8 * s**2 - 2e-6 * s + 1e-3)
    elif args.data is None:
        raise ScenarioError("fit needs a data file or --synthetic")
    else:
        cols = _read_columns(args.data, len(FIT_COLUMNS[kind]))
    try:
        if kind == "battery":
            model, r2 = fitting.fit_battery_power_model(*cols)
            fragment = {"motor": {"battery_coeffs": [float(c) for c in model.c]}}
        elif kind == "torque":
            model, r2 = fitting.fit_torque_limit(*cols)
            fragment = {"motor": {"torque_coeffs_Nm": [float(c) for c in model.xi]}}
        else:
            road, r2 = fitting.fit_curvature(*cols)
            fragment = {"road": {"curvature_coeffs": [road.k1, road.k2, road.k3]}}
    except fitting.FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = yaml.safe_dump(fragment, sort_keys=False)
    print(f"# R^2 = {r2:.6f}")
    print(text, end="")
    if args.out:
        Path(args.out).write_text(f"# R^2 = {r2:.6f}\n" + text)
    return EXIT_OK


def cmd_validate_sets(args):
    if args.trials < 1 or args.draws < 1:
        raise ScenarioError("trials and draws must be positive")
    n = required_sample_count(args.epsilon, args.beta, 2)
    fractions = validate_coverage(args.epsilon, args.beta, args.trials, seed=args.seed,
                                  draws=args.draws)
    passing = int(np.sum(fractions >= 1.0 - args.epsilon))
    need = coverage_threshold(args.trials, args.beta)
    ok = passing >= need
    print(json.dumps({"samples_per_set": n, "trials": args.trials, "passing_trials": passing,
                      "required_passing": need, "empirical_confidence": passing / args.trials,
                      "pass": ok}))
    return EXIT_OK if ok else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="econav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp):
        sp.add_argument("--scenario", required=True,
                        help="scenario YAML path or shipped name (overtaking, multi_obstacle)")
        sp.add_argument("--out", help="output directory (overrides the scenario)")
        sp.add_argument("--seed", type=int, help="obstacle jitter seed")
        sp.add_argument("--energy-aware", choices=("on", "off"))
        sp.add_argument("--horizon", type=int, help="prediction horizon N")
        sp.add_argument("--dump-sets", action="store_true",
                        help="write occupancy polygons per step, obstacle and k")
        sp.add_argument("--trace", action="store_true", help="write solver iteration traces")
        sp.add_argument("--figures", action="store_true", help="render PNG figures")

    scenario_flags(sub.add_parser("run", help="closed-loop run of one controller"))
    scenario_flags(sub.add_parser("compare", help="energy-aware vs energy-unaware runs"))

    f = sub.add_parser("fit", help="least-squares fit of a model from sample rows")
    f.add_argument("kind", choices=sorted(FIT_COLUMNS))
    f.add_argument("data", nargs="?", help="CSV: battery tau_m,omega_m,P_b; torque v_x,tau_max; "
                                           "curvature s_x,rho")
    f.add_argument("--synthetic", action="store_true", help="fit built-in synthetic samples")
    f.add_argument("--out", help="write the scenario fragment here")

    v = sub.add_parser("validate-sets", help="Monte-Carlo check of the sample-count bound")
    v.add_argument("--epsilon", type=float, default=0.1)
    v.add_argument("--beta", type=float, default=0.1)
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--draws", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "fit": cmd_fit,
            "validate-sets": cmd_validate_sets}


def main(argv=None):
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
