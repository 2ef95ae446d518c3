"""Command-line entry point: ``kdlab run | verify | sweep-rho``.

Exit status: 0 when every enabled check passes, 1 on a check failure,
2 on a config error (the message names the field path), 3 on a numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import bounds as B
from .divergence import assemble_ledger
from .estimators import estimate_gen_teacher
from .experiment import (ConfigError, default_rho_grid, load_config, run_experiment, sweep_csv,
                         validate_report, write_outputs)
from .numcore import NumericError, ParameterError
from .verify import SUITES, run_suites

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override mc.datasetTrials")
    p.add_argument("--out", type=Path, help="output directory (default: outputs.dir or ./out)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads for trial fan-out; output does not depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kdlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    _common(sub.add_parser("run", help="run the full pipeline and write report.json and CSV tables"))
    v = sub.add_parser("verify", help="run randomized invariant suites")
    v.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    _common(sub.add_parser("sweep-rho", help="tabulate B_std and B_sh over a radius grid"))
    return ap


def _summary(report: dict) -> list[str]:
    b, L = report["bounds"], report["ledger"]
    lines = [
        f"seed {report['seed']}  trials {L['trials']}  wall {report['wallClockSeconds']:.2f}s",
        f"knUpper {L['knUpper']:.6g} (SE {L['stdErr']['knUpper']:.2g}) = datasetShift "
        f"{L['datasetShift']:.6g} + algoShift {L['algoShift']:.6g}",
        f"genT {b['genT']:.6g} (SE {b['genTStdErr']:.2g})  genS {b['genS']:.6g} "
        f"(SE {b['genSStdErr']:.2g})  sigmaHat {b['sigma']:.6g}",
        f"upper bound {b['upperBound']:.6g}" + (
            f"  lower bound {b['lowerBound']:.6g}" if b["lowerBound"] is not None else ""),
    ]
    if report["rho0"] is not None:
        lines.append(f"rho0 {report['rho0']:.6g}")
    for name, chk in report["checks"].items():
        lines.append(f"  {'PASS' if chk['pass'] else 'FAIL'} {name}")
    return lines


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, trials=args.trials)
    report = run_experiment(cfg, workers=args.workers)
    validate_report(report)
    out = args.out if args.out is not None else Path(cfg.out_dir)
    write_outputs(report, out, cfg.formats)
    print("\n".join(_summary(report)))
    print(f"wrote {out}")
    return EXIT_OK if report["pass"] else EXIT_CHECK


def cmd_verify(args) -> int:
    results = run_suites(args.suite)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


def cmd_sweep_rho(args) -> int:
    cfg = load_config(args.config, seed=args.seed, trials=args.trials)
    if cfg.sharpness is None:
        raise ConfigError("$.sharpness", "sweep-rho needs the sharpness constants block")
    ledger = assemble_ledger(cfg.spec, cfg.teacher, cfg.student, cfg.dataset_trials,
                             cfg.posterior_samples, cfg.seed, workers=args.workers)
    gen_t, _ = estimate_gen_teacher(cfg.spec, cfg.teacher, cfg.dataset_trials, cfg.seed, args.workers)
    c = cfg.sharpness
    grid = cfg.rho_grid if cfg.rho_grid is not None else default_rho_grid(c, ledger.kn_upper)
    rows = B.rho_sweep(c, gen_t.mean, ledger.kn_upper, grid)
    out = args.out if args.out is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rho_sweep.csv").write_text(sweep_csv(rows))
    r0 = B.rho_zero(c, ledger.kn_upper)
    if r0 is None:
        print("warning: no tightening radius (flatness gap or knUpper not positive)", file=sys.stderr)
    else:
        print(f"rho0 {r0:.17g}")
    print(f"wrote {out / 'rho_sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "verify": cmd_verify, "sweep-rho": cmd_sweep_rho}[args.cmd]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ParameterError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
