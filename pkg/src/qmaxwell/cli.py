"""Command-line front end: ``qmxw <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 assumption failure,
4 solver failure, 5 verification failure.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import config as cfgmod
from . import diagnostics as dg
from . import experiments as ex
from .errors import AssumptionError, ConfigError, MissingArtifacts, QmxwError, SolverError
from .solver import write_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("qmxw")


def _workers(args):
    if args.workers is not None:
        return max(int(args.workers), 1)
    env = os.environ.get("QMXW_WORKERS")
    try:
        return max(int(env), 1) if env else 1
    except ValueError:
        raise ConfigError(f"QMXW_WORKERS must be an integer, got {env!r}") from None


def _load(args):
    if not args.config:
        raise ConfigError("--config is required")
    sc = cfgmod.load(args.config)
    if args.out_dir:
        sc = replace(sc, output=replace(sc.output, dir=args.out_dir))
    if args.seed_override is not None:
        sc = replace(sc, initial=replace(sc.initial, seed=int(args.seed_override)))
    cfgmod.validate(sc)
    return sc


def _out(sc, name):
    os.makedirs(sc.output.dir, exist_ok=True)
    return os.path.join(sc.output.dir, f"{sc.output.prefix}_{name}")


def _write_lines(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_check_assumptions(args):
    sc = _load(args)
    report = ex.certify(sc)
    lines = report.lines()
    _write_lines(_out(sc, "assumptions.txt"), lines)
    print("\n".join(lines))
    if not report.ok:
        failed = ", ".join(k for k, ok in report.passed.items() if not ok)
        print(f"assumption failure: {failed}", file=sys.stderr)
        return EXIT_ASSUMPTION
    return EXIT_OK


def cmd_run(args):
    sc = _load(args)
    report = ex.certify(sc)
    if not report.ok:
        failed = ", ".join(k for k, ok in report.passed.items() if not ok)
        if not args.force:
            raise AssumptionError(f"assumptions fail ({failed}); rerun with --force to proceed anyway")
        log.warning("assumptions fail (%s); continuing because of --force", failed)
    out = ex.run_scenario(sc, _workers(args))
    trace = out.trace
    trace.to_csv(_out(sc, "trace.csv"))
    trace.extra_to_csv(_out(sc, "trace_extra.csv"))
    write_checkpoint(_out(sc, "final.chk"), out.result.final)
    summary = [
        f"t_final={trace.t[-1]:.17g}",
        f"rows={len(trace)}",
        f"e0_final={trace['e0'][-1]:.17g}",
        f"e3_final={trace['e3'][-1]:.17g}",
        f"z3_final={trace['z3'][-1]:.17g}",
        f"divD_final={trace['divD'][-1]:.17g}",
        f"divB_final={trace['divB'][-1]:.17g}",
        f"bc_residual_final={trace['bc_residual'][-1]:.17g}",
        f"wall_time={out.wall_time:.3f}",
        f"max_sweeps={trace.meta.get('max_sweeps')}",
        f"init_sweeps={out.data.sweeps}",
    ]
    fit = None
    try:
        fit = dg.trace_decay_fit(trace, sc.analysis.fit_quantity, sc.fit_window)
        summary += ["[decay_fit]"] + fit.lines()
    except QmxwError as exc:
        summary += ["[decay_fit]", f"error={exc.code}: {exc}"]
    _write_lines(_out(sc, "summary.txt"), summary)
    if not args.no_figures:
        from .plotting import write_report_figures

        col = {"e": "e3", "z": "z3"}.get(sc.analysis.fit_quantity, sc.analysis.fit_quantity)
        write_report_figures(trace, sc.output.dir, sc.output.prefix, fit, col)
    print("\n".join(summary))
    return EXIT_OK


def _load_trace(sc):
    path, extra = _out(sc, "trace.csv"), _out(sc, "trace_extra.csv")
    if os.path.exists(path) and os.path.exists(extra):
        return dg.EnergyTrace.from_csv(path, extra)
    return None


def cmd_verify(args):
    sc = _load(args)
    trace = None if args.rerun else _load_trace(sc)
    if args.require_artifacts and trace is None:
        raise MissingArtifacts(f"no trace found under {sc.output.dir}")
    checks = ex.verify(sc, args.which, trace=trace, workers=_workers(args))
    lines = [c.line() for c in checks]
    _write_lines(_out(sc, f"verify_{args.which}.txt"), lines)
    print("\n".join(lines))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_decay_fit(args):
    path = args.trace
    if not os.path.exists(path):
        raise MissingArtifacts(f"trace {path} not found")
    trace = dg.EnergyTrace.from_csv(path)
    window = tuple(args.window) if args.window else None
    for q in args.quantity:
        fit = dg.trace_decay_fit(trace, q, window)
        print("\n".join(fit.lines()))
    return EXIT_OK


def cmd_init(args):
    text = cfgmod.DEMO if not args.full else cfgmod.parse_text(cfgmod.DEMO).to_text()
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (section.key = value lines)")
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: $QMXW_WORKERS or 1)")
    common.add_argument("--force", action="store_true", help="run even if assumption checks fail")
    common.add_argument("--out-dir", default=None, help="override output.dir")
    common.add_argument("--seed-override", type=int, default=None, help="override initial.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qmxw", description="Quasilinear Maxwell laboratory with absorbing boundaries.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-assumptions", parents=[common], help="certify material, impedance and geometry")
    s.set_defaults(func=cmd_check_assumptions)

    s = sub.add_parser("run", parents=[common], help="simulate and write trace, checkpoint, summary, figures")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("verify", parents=[common], help="run verification suites")
    s.add_argument("--which", choices=("energy", "multiplier", "divcurl", "compat", "all"), default="all")
    s.add_argument("--rerun", action="store_true", help="ignore an existing trace and simulate again")
    s.add_argument("--require-artifacts", action="store_true", help="fail if no trace exists")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("decay-fit", parents=[common], help="fit log q = log M - omega t on a trace CSV")
    s.add_argument("trace")
    s.add_argument("--window", type=float, nargs=2, metavar=("T_LO", "T_HI"))
    s.add_argument("--quantity", nargs="+", default=["e0", "e", "z"], choices=("e0", "e", "z"))
    s.set_defaults(func=cmd_decay_fit)

    s = sub.add_parser("init", help="write the demo configuration")
    s.add_argument("output", nargs="?", default="-")
    s.add_argument("--full", action="store_true", help="list every key with its value")
    s.set_defaults(func=cmd_init)
    return p


def exit_code_for(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, AssumptionError):
        return EXIT_ASSUMPTION
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return getattr(exc, "exit_code", EXIT_VERIFY)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QmxwError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
