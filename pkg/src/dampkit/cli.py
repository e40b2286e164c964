"""Command-line front end.

Subcommands: gen-signal, gen-matrix, measure, recover, se, diag, run, sweep.
Exit codes: 0 success, 2 validation problem, 3 numerical failure, 4 budget
exceeded.
"""

import argparse
import json
import sys

import numpy as np

from . import denoisers, diagnostics, experiments, signals, state_evolution as se
from .recovery import (
    BudgetExceeded, NumericalFailure, RecoveryConfig, run_recovery,
    read_trace, write_trace,
)
from .sensing import gen_matrix, load_matrix, measure, save_matrix
from .signals import Signal, gen_signal, load_csv, load_pgm, save_csv, save_pgm

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_BUDGET = 4


def _parse_kv(pairs):
    """--param k=3 --param p=0.5 -> {'k': 3, 'p': 0.5} (int before float)."""
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = int(raw)
        except ValueError:
            try:
                out[key] = float(raw)
            except ValueError:
                out[key] = raw
    return out


def _parse_grid(text):
    if text is None:
        return None
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {text!r}")
    return (int(parts[0]), int(parts[1]))


def _load_signal_arg(path):
    if path.endswith(".pgm"):
        return load_pgm(path)
    return load_csv(path)


def _denoiser_from_args(args):
    if getattr(args, "denoiser_config", None):
        return denoisers.from_config(args.denoiser_config)
    if not getattr(args, "denoiser", None):
        raise ValueError("give --denoiser KIND or --denoiser-config FILE")
    cfg = {"kind": args.denoiser}
    if getattr(args, "tuning", None):
        cfg["tuning"] = args.tuning
    dparams = _parse_kv(getattr(args, "dparam", None))
    if dparams:
        cfg["params"] = dparams
    return denoisers.from_config(cfg)


def _add_denoiser_args(parser):
    parser.add_argument("--denoiser", help="denoiser kind (see docs)")
    parser.add_argument("--denoiser-config", help="JSON file with a full config")
    parser.add_argument("--tuning", choices=denoisers.TUNING_MODES)
    parser.add_argument("--dparam", action="append", metavar="K=V",
                        help="denoiser parameter, repeatable")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_gen_signal(args):
    sig = gen_signal(args.signal_class, args.n, _parse_kv(args.param), args.seed)
    save_csv(sig, args.out)
    return EXIT_OK


def cmd_gen_matrix(args):
    A = gen_matrix(args.m, args.n, args.seed, normalize=args.normalize)
    save_matrix(A, args.out)
    return EXIT_OK


def cmd_measure(args):
    A = load_matrix(args.matrix)
    x = _load_signal_arg(args.signal)
    meas = measure(A, x, args.sigma_w, args.seed)
    save_csv(meas.y, args.out)
    return EXIT_OK


def cmd_recover(args):
    A = load_matrix(args.matrix)
    y = load_csv(args.y).values
    truth = _load_signal_arg(args.truth) if args.truth else None
    grid = _parse_grid(args.grid)
    if grid is None and truth is not None and truth.grid is not None:
        grid = truth.grid
    cfg = RecoveryConfig(
        algorithm=args.algo,
        denoiser=_denoiser_from_args(args),
        onsager=args.onsager,
        max_iters=args.iters,
        stop_rel_change=args.stop_rel_change,
        oversmooth_factor=args.oversmooth,
        seed=args.seed,
        grid=grid,
        snapshot_iters=args.snapshot or (),
        div_epsilon_scale=args.div_epsilon_scale,
    )
    try:
        trace = run_recovery(y, A, cfg, x_true=truth)
    except NumericalFailure as exc:
        write_trace(exc.trace, args.out)
        print(f"recover: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_trace(trace, args.out)
    if args.x_out:
        final = Signal(trace.final_x, grid=grid)
        if args.x_out.endswith(".pgm"):
            save_pgm(final, args.x_out)
        else:
            save_csv(final, args.x_out)
    last = trace.records[-1]
    if last.mse is not None:
        tail = f" psnr {last.psnr:.2f} dB" if isinstance(last.psnr, float) and np.isfinite(last.psnr) else ""
        print(f"final mse {last.mse:.6g}{tail}")
    return EXIT_OK


def cmd_se(args):
    truth = _load_signal_arg(args.truth)
    trace = se.se_trace(
        _denoiser_from_args(args), truth,
        delta=args.delta, sigma_w2=args.sigma_w2, iters=args.iters,
        mc_trials=args.mc_trials, seed=args.seed, method=args.method,
    )
    se.save_se_trace(trace, args.out)
    print(f"terminal theta {trace.theta[-1]:.6g}")
    return EXIT_OK


def cmd_diag(args):
    if args.what == "compare":
        if not args.se:
            raise ValueError("diag compare needs --se")
    else:
        if args.iter is None or not args.truth:
            raise ValueError(f"diag {args.what} needs --iter and --truth")
        if args.what == "qq" and not args.out:
            raise ValueError("diag qq needs --out")
    trace = read_trace(args.trace)
    if args.what == "compare":
        predicted = se.load_se_trace(args.se)
        report = diagnostics.compare_traces(trace, predicted)
        print(diagnostics.report_json(report))
        return EXIT_OK
    if args.iter not in trace.snapshots:
        have = ", ".join(str(t) for t in sorted(trace.snapshots)) or "none"
        print(f"diag: no snapshot at iteration {args.iter} (have: {have})",
              file=sys.stderr)
        return EXIT_VALIDATION
    truth = _load_signal_arg(args.truth)
    snap = diagnostics.effective_noise(trace.snapshots[args.iter], None, truth)
    report = diagnostics.normality(snap.v)
    if args.what == "qq":
        diagnostics.save_qq(report, args.out)
    else:
        print(diagnostics.report_json(report))
    return EXIT_OK


def cmd_run(args):
    spec = experiments.load_spec(args.spec)
    experiments.run_spec(spec, args.out_dir)
    print(f"wrote {args.out_dir}/manifest.json")
    return EXIT_OK


def cmd_sweep(args):
    spec = experiments.load_spec(args.spec)
    experiments.sweep_spec(spec, args.out_dir, workers=args.workers)
    print(f"wrote {args.out_dir}/sweep.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="dampkit",
        description="compressed-sensing recovery with pluggable denoisers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-signal", help="draw a synthetic test signal")
    p.add_argument("--class", dest="signal_class", required=True,
                   choices=[c for c in signals.SIGNAL_CLASSES if c != "image_file"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--param", action="append", metavar="K=V")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_signal)

    p = sub.add_parser("gen-matrix", help="draw a Gaussian measurement matrix")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--normalize", choices=["column", "none"], default="column")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_matrix)

    p = sub.add_parser("measure", help="apply a matrix and add noise")
    p.add_argument("--matrix", required=True)
    p.add_argument("--signal", required=True)
    p.add_argument("--sigma-w", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_measure)

    p = sub.add_parser("recover", help="run an iterative recovery")
    p.add_argument("--algo", required=True, choices=["ist", "amp", "dit", "damp"])
    _add_denoiser_args(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth")
    p.add_argument("--onsager", choices=["exact", "monte_carlo", "auto", "none"])
    p.add_argument("--oversmooth", type=float, default=2.0)
    p.add_argument("--stop-rel-change", type=float, default=0.0)
    p.add_argument("--div-epsilon-scale", type=float,
                   help="MC divergence probe step as a multiple of sigma_hat")
    p.add_argument("--grid", help="HxW for image denoisers")
    p.add_argument("--snapshot", action="append", type=int,
                   help="record pseudo-data at this iteration, repeatable")
    p.add_argument("--out", required=True, help="trace JSONL path")
    p.add_argument("--x-out", help="final estimate (.csv or .pgm)")
    p.set_defaults(handler=cmd_recover)

    p = sub.add_parser("se", help="run the scalar performance prediction")
    _add_denoiser_args(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--sigma-w2", type=float, default=0.0)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--mc-trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["auto", "exact", "mc"], default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_se)

    p = sub.add_parser("diag", help="effective-noise diagnostics on a trace")
    p.add_argument("what", choices=["qq", "normality", "compare"])
    p.add_argument("--trace", required=True)
    p.add_argument("--iter", type=int, help="snapshot iteration (qq/normality)")
    p.add_argument("--truth", help="ground-truth signal (qq/normality)")
    p.add_argument("--se", help="prediction CSV (compare)")
    p.add_argument("--out", help="QQ CSV output path")
    p.set_defaults(handler=cmd_diag)

    p = sub.add_parser("run", help="execute a declarative experiment spec")
    p.add_argument("spec")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("sweep", help="run a spec over delta/noise/seed axes")
    p.add_argument("spec")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except experiments.ValidationError as exc:
        for problem in exc.problems:
            print(f"spec error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetExceeded as exc:
        print(f"budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
