"""Command-line pipeline: simulate, solve, eval, overlap-stats, bench, sweep, replay.

Exit codes: 0 success, 2 invalid input, 3 uncertified solve, 4 timeout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .active_set import solve
from .bench import BenchPlan, parse_lambda, run_bench
from .io import (
    FormatError,
    build_manifest,
    read_activations,
    read_shapes,
    read_signal,
    verify_manifest,
    write_activations,
    write_json,
    write_shapes,
    write_signal,
)
from .metrics import CPConfig, MatchConfig, cp_score, f1_score
from .operator import ActivationSet, lambda_max
from .overlaps import empirical_overlaps, overlap_bound
from .simulate import simulate
from .sweep import DEFAULT_LAMBDAS, SweepSpec, run_sweep

EXIT_OK, EXIT_INVALID, EXIT_UNCERTIFIED, EXIT_TIMEOUT = 0, 2, 3, 4

log = logging.getLogger("spikelasso")


class UsageError(Exception):
    pass


def _emit(args, obj):
    if args.quiet:
        return
    if args.json:
        print(json.dumps(obj, sort_keys=True))
    else:
        for k, v in obj.items():
            print(f"{k}: {v}")


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in row.items()})


def _manifest(args, argv, params, seeds, inputs, outputs, t0, default_path):
    path = Path(args.manifest) if args.manifest else Path(default_path)
    m = build_manifest(args.command, argv, params, seeds, inputs, outputs, time.perf_counter() - t0)
    write_json(path, m)
    return path


def _float_or_none(s):
    if s is None or str(s).lower() in ("none", "inf", "noiseless"):
        return None
    return float(s)


def cmd_simulate(args, argv, t0):
    snr = _float_or_none(args.snr_db)
    ds = simulate(args.k, args.d, args.t, args.n, args.rate_hz, args.sample_rate_hz,
                  snr_db=snr, seed=args.seed, jitter=not args.no_jitter)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    paths = {"shapes": f"{prefix}.shapes.bin", "signal": f"{prefix}.signal.bin", "truth": f"{prefix}.truth.csv"}
    write_shapes(paths["shapes"], ds.shapes)
    write_signal(paths["signal"], ds.observed)
    write_activations(paths["truth"], ds.truth)
    params = {k: getattr(args, k) for k in ("k", "d", "t", "n", "rate_hz", "sample_rate_hz", "snr_db", "no_jitter")}
    _manifest(args, argv, params, {"seed": args.seed}, [], [(p, None) for p in paths.values()], t0,
              f"{prefix}.manifest.json")
    _emit(args, {"spikes": len(ds.truth), "energy": ds.clean.energy(), **paths})
    return EXIT_OK


def cmd_solve(args, argv, t0):
    shapes = read_shapes(args.shapes)
    y = read_signal(args.signal)
    if y.d != shapes.d:
        raise FormatError(f"signal has {y.d} electrodes, shape bank has {shapes.d}")
    lmax = lambda_max(shapes, y)
    lam = parse_lambda(args.lam, y_lmax=lmax)
    if not lam > 0:
        raise UsageError(f"lambda resolves to {lam}; it must be > 0")
    acts, report = solve(shapes, y, lam, args.solver, window=args.window, kkt_tol=args.kkt_tol,
                         time_limit=args.time_limit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_activations(out, acts)
    report_path = args.report or f"{out}.report.json"
    rep = report.to_dict()
    rep.update({"lambda_max": lmax, "lambda_spec": args.lam, "nnz": len(acts)})
    write_json(report_path, rep)
    params = {"solver": args.solver, "lambda": args.lam, "lambda_abs": lam, "window": args.window,
              "kkt_tol": args.kkt_tol, "time_limit": args.time_limit}
    _manifest(args, argv, params, {}, [args.shapes, args.signal],
              [(out, None), (report_path, ["seconds"])], t0, f"{out}.manifest.json")
    _emit(args, {"nnz": len(acts), "certified": report.certified, "kkt_value": report.kkt_value,
                 "lambda": lam, "objective": report.objective, "iterations": report.iterations,
                 "seconds": report.seconds})
    if report.timed_out:
        return EXIT_TIMEOUT
    if not report.certified and not args.allow_uncertified:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_eval(args, argv, t0):
    truth = read_activations(args.truth, n=args.n, k=args.k)
    est = read_activations(args.est, n=args.n, k=args.k)
    n, k = max(truth.n, est.n), max(truth.k, est.k)
    truth = ActivationSet(truth.neurons, truth.samples, truth.amplitudes, n, k)
    est = ActivationSet(est.neurons, est.samples, est.amplitudes, n, k)
    p, r, f1 = f1_score(truth, est, MatchConfig(args.tol, not args.any_neuron))
    cp, defined = cp_score(truth, est, CPConfig(args.cp_width, args.binarize))
    result = {"precision": p, "recall": r, "f1": f1, "cp": cp, "cp_defined": defined}
    outputs = []
    if args.out:
        write_json(args.out, result)
        outputs.append((args.out, None))
    params = {"tol": args.tol, "cp_width": args.cp_width, "binarize": args.binarize, "any_neuron": args.any_neuron}
    default = f"{args.out}.manifest.json" if args.out else "eval.manifest.json"
    _manifest(args, argv, params, {}, [args.truth, args.est], outputs, t0, default)
    if not args.quiet:
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_overlap_stats(args, argv, t0):
    acts = read_activations(args.acts, n=args.n)
    stats = empirical_overlaps(acts, args.t)
    mu = args.mu_total
    if mu is None and len(acts):
        mu = len(acts) / acts.n
    result = stats.to_dict()
    result["t"] = args.t
    result["mu_total"] = mu
    result["bound"] = overlap_bound(mu, args.t) if mu else None
    outputs = []
    if args.out:
        write_json(args.out, result)
        outputs.append((args.out, None))
    default = f"{args.out}.manifest.json" if args.out else "overlap-stats.manifest.json"
    _manifest(args, argv, {"t": args.t, "mu_total": args.mu_total, "n": args.n}, {}, [args.acts], outputs, t0, default)
    if not args.quiet:
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK


BENCH_COLUMNS = ["solver", "n", "rep", "seconds", "iterations", "certified", "timed_out", "nnz", "objective", "seed"]


def cmd_bench(args, argv, t0):
    plan = BenchPlan.from_dict(json.loads(Path(args.plan).read_text())) if args.plan else BenchPlan()

    def progress(row):
        log.info("%s n=%d rep=%d %.3fs certified=%s", row["solver"], row["n"], row["rep"],
                 row["seconds"], row["certified"])

    result = run_bench(plan, progress=progress)
    _write_csv(args.out, result.rows, BENCH_COLUMNS)
    summary_path = args.summary or f"{args.out}.summary.json"
    write_json(summary_path, {"plan": plan.to_dict(), **result.summary()})
    inputs = [args.plan] if args.plan else []
    _manifest(args, argv, plan.to_dict(), {"seed": plan.seed}, inputs,
              [(args.out, ["seconds"]), (summary_path, ["cells", "slopes"])], t0, f"{args.out}.manifest.json")
    _emit(args, {"slopes": result.slopes})
    if any(r["timed_out"] for r in result.rows) and not args.allow_timeouts:
        return EXIT_TIMEOUT
    if any(not r["certified"] for r in result.rows if not r["timed_out"]) and not args.allow_uncertified:
        return EXIT_UNCERTIFIED
    return EXIT_OK


SWEEP_COLUMNS = ["lambda_rel", "snr_db", "draws", "f1_mean", "f1_std", "cp_mean", "precision_mean",
                 "recall_mean", "uncertified"]
RUN_COLUMNS = ["lambda_rel", "snr_db", "draw", "seed", "n_true", "n_est", "precision", "recall", "f1", "cp",
               "certified"]


def cmd_sweep(args, argv, t0):
    spec = SweepSpec(
        lambdas=[float(x) for x in args.lambdas.split(",")],
        snrs=[_float_or_none(x) for x in args.snrs.split(",")],
        draws=args.draws, n=args.n, k=args.k, d=args.d, t=args.t, rate_hz=args.rate_hz,
        sample_rate_hz=args.sample_rate_hz, seed=args.seed, tol=args.tol, cp_width=args.cp_width,
        binarize=args.binarize, jitter=not args.no_jitter, window=args.window,
    )
    if not spec.lambdas or not spec.snrs or spec.draws < 1:
        raise UsageError("sweep grid is empty")
    cells, runs = run_sweep(spec)
    _write_csv(args.out, cells, SWEEP_COLUMNS)
    runs_path = f"{args.out}.runs.csv"
    _write_csv(runs_path, runs, RUN_COLUMNS)
    params = {k: v for k, v in spec.__dict__.items()}
    _manifest(args, argv, params, {"seed": spec.seed}, [], [(args.out, None), (runs_path, None)], t0,
              f"{args.out}.manifest.json")
    _emit(args, {"cells": len(cells), "runs": len(runs), "out": args.out})
    if any(c["uncertified"] for c in cells) and not args.allow_uncertified:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_replay(args, argv, t0):
    """Re-run the command recorded in a manifest and compare output digests."""
    manifest = json.loads(Path(args.manifest_file).read_text())
    here = os.getcwd()
    os.chdir(manifest.get("cwd", here))
    try:
        code = main(manifest["argv"])
        bad = verify_manifest(manifest)
    finally:
        os.chdir(here)
    result = {"command": manifest["command"], "exit_code": code, "mismatched": bad, "reproduced": not bad}
    if not args.quiet:
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK if not bad else EXIT_UNCERTIFIED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikelasso", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--json", action="store_true", help="machine-readable stdout")
    common.add_argument("--manifest", help="manifest path (default: next to the main output)")
    common.add_argument("--allow-uncertified", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write shapes, signal and ground truth")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--d", type=int, default=4)
    s.add_argument("--t", type=int, default=30)
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--rate-hz", type=float, default=10.0)
    s.add_argument("--sample-rate-hz", type=float, default=30_000.0)
    s.add_argument("--snr-db", default=None, help="dB, or 'none' for noiseless")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-jitter", action="store_true", help="unit amplitudes")
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", parents=[common], help="estimate activations")
    s.add_argument("--shapes", required=True)
    s.add_argument("--signal", required=True)
    s.add_argument("--solver", choices=["fista-full", "as-naive", "as-group", "as-window"], default="as-window")
    s.add_argument("--lambda", dest="lam", default="rel:0.1", help="absolute value or rel:<x> (x * lambda_max)")
    s.add_argument("--window", type=int, default=None, help="window size in samples (default 10 t)")
    s.add_argument("--kkt-tol", type=float, default=None)
    s.add_argument("--time-limit", type=float, default=None, help="seconds")
    s.add_argument("--out", required=True, help="activation CSV")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("eval", parents=[common], help="F1 and CP scores")
    s.add_argument("--truth", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--tol", type=float, default=0)
    s.add_argument("--cp-width", type=int, default=15)
    s.add_argument("--binarize", action="store_true")
    s.add_argument("--any-neuron", action="store_true", help="match spikes across neurons")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("overlap-stats", parents=[common], help="overlap sizes and bound")
    s.add_argument("--acts", required=True)
    s.add_argument("--t", type=int, required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--mu-total", type=float, default=None, help="pooled events per sample (default: estimated)")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_overlap_stats)

    s = sub.add_parser("bench", parents=[common], help="runtime scaling in n")
    s.add_argument("--plan", default=None, help="JSON plan (default plan if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--summary", default=None)
    s.add_argument("--allow-timeouts", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", parents=[common], help="lambda x SNR recovery grid")
    s.add_argument("--lambdas", default=",".join(str(x) for x in DEFAULT_LAMBDAS),
                   help="comma-separated multiples of lambda_max")
    s.add_argument("--snrs", default="none,20,10,0,-10", help="comma-separated dB values; 'none' = noiseless")
    s.add_argument("--draws", type=int, default=5)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--d", type=int, default=4)
    s.add_argument("--t", type=int, default=30)
    s.add_argument("--rate-hz", type=float, default=50.0)
    s.add_argument("--sample-rate-hz", type=float, default=10_000.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=int, default=0)
    s.add_argument("--cp-width", type=int, default=None)
    s.add_argument("--binarize", action="store_true")
    s.add_argument("--no-jitter", action="store_true")
    s.add_argument("--window", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("replay", parents=[common], help="re-run a manifest and verify its outputs")
    s.add_argument("manifest_file")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        return args.func(args, argv, t0)
    except (FormatError, UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
