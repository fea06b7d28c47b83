"""Command-line entry point for the experiment harness.

Subcommands: ``spatial``, ``temporal``, ``penalty``, ``cavity``,
``selftest``.  Every flag may also be supplied through a key=value
config file (``--config``); explicit flags win over file values.

Exit codes: 0 success, 2 parameter error, 3 solver failure (including
studies with recorded per-run failures), 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .harness import IngestionError
from .solver import (LinearSolveError, ParameterError,
                     PicardDivergenceError)
from .stepper import SteppingError


def parse_levels(text):
    """Parse ``"3"``, ``"1,2,5"``, or ``"1-4"`` into a level list."""
    text = str(text).strip()
    try:
        if "-" in text:
            lo, hi = text.split("-")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse levels {text!r}; "
                             "use forms like '3', '1-5', or '1,2,4'")


def parse_float_list(text):
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse number list {text!r}")


def read_config(path):
    """Read a key=value config file (blank lines and # comments skipped)."""
    values = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParameterError(
                    f"{path}: line {lineno}: expected key=value, "
                    f"got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _as_bool(raw, key):
    token = str(raw).lower()
    if token in _TRUE:
        return True
    if token in _FALSE:
        return False
    raise ParameterError(f"config key {key}: expected a boolean, got {raw!r}")


def resolve(args, key, default=None, cast=None):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is None and args.config_values is not None:
        raw = args.config_values.get(key)
        if raw is not None:
            value = _as_bool(raw, key) if cast is bool else raw
    if value is None:
        return default
    if cast is not None and cast is not bool and not isinstance(
            value, (int, float, list)):
        value = cast(value)
    return value


def _add_common(sub):
    sub.add_argument("--config", help="key=value file supplying any flag")
    sub.add_argument("--out", help="output directory for artifacts")
    sub.add_argument("--pair", choices=sorted(harness.ELEMENT_PAIRS),
                     help="element pair (default p2p1)")
    sub.add_argument("--nu", type=float, help="viscosity")
    sub.add_argument("--T", dest="T", type=float, help="final time")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="penfem",
        description="Penalty finite element flow solver experiments")
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("spatial", help="mesh-refinement error study")
    _add_common(sp)
    sp.add_argument("--levels", help="e.g. '1-5' or '1,2,3'")
    sp.add_argument("--c", type=float,
                    help="coupling constant in dt=eps=c*h^(degree+1)")
    sp.add_argument("--full", action="store_true", default=None,
                    help="unlock the largest (slow) refinement level")

    tp = subs.add_parser("temporal", help="time-step refinement study")
    _add_common(tp)
    tp.add_argument("--levels", help="single mesh level (default 5)")
    tp.add_argument("--eps", help="penalty parameter (default 1e-8)")
    tp.add_argument("--dt", help="comma list of time steps to sweep")
    tp.add_argument("--rough-u0", action="store_true", default=None,
                    dest="rough_u0",
                    help="exploratory: nonsmooth initial velocity, "
                         "self-convergence against a finer-step run")

    pp = subs.add_parser("penalty", help="penalty-parameter error study")
    _add_common(pp)
    pp.add_argument("--levels", help="single mesh level (default 5)")
    pp.add_argument("--eps", help="comma list of penalty values to sweep")
    pp.add_argument("--dt", help="fixed time step (default 1e-3)")

    cv = subs.add_parser("cavity", help="lid-driven cavity benchmark")
    _add_common(cv)
    cv.add_argument("--levels", help="single mesh level (default 5)")
    cv.add_argument("--eps", help="penalty parameter (default 1e-6)")
    cv.add_argument("--dt", help="time step (default 1e-2)")
    cv.add_argument("--ghia", help="directory with reference profile CSVs "
                                   "(default: bundled data)")

    st = subs.add_parser("selftest", help="fast invariant checks (~30 s)")
    st.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def _progress(row):
    bits = [f"{k}={getattr(row, k):.6g}" for k in ("h", "k", "eps")]
    if row.failure is not None:
        print(f"  {' '.join(bits)}  FAILED: {row.failure}", flush=True)
        return
    e = row.errors
    print(f"  {' '.join(bits)}  eL2={e.velocity_l2:.6e} "
          f"eH1={e.velocity_h1:.6e} eP={e.pressure_l2:.6e} "
          f"steps={row.steps}", flush=True)


def _single_level(args, default):
    levels = resolve(args, "levels", default=None)
    if levels is None:
        return default
    levels = parse_levels(levels)
    if len(levels) != 1:
        raise ParameterError("this study uses a single mesh level")
    return levels[0]


def _emit(report, outdir, kind):
    outdir = outdir or f"runs/{kind}"
    harness.emit_outputs(report, outdir)
    print(f"artifacts written to {outdir}/ "
          "(errors.csv, run.txt, plot.gp)")
    return 3 if report.failed() else 0


def cmd_spatial(args):
    pair = resolve(args, "pair", "p2p1")
    full = bool(resolve(args, "full", False, cast=bool))
    levels = resolve(args, "levels", default=None)
    levels = parse_levels(levels) if levels is not None else None
    if full and levels is None:
        print("note: --full runs the largest mesh; this can take hours")
    report = harness.run_spatial_study(
        pair=pair, levels=levels, c=float(resolve(args, "c", 1.0)),
        nu=float(resolve(args, "nu", 1.0)),
        t_end=float(resolve(args, "T", 1.0)),
        full=full, on_row=_progress)
    return _emit(report, resolve(args, "out"), f"spatial_{pair}")


def cmd_temporal(args):
    pair = resolve(args, "pair", "p2p1")
    level = _single_level(args, 5)
    dts = resolve(args, "dt", default=None)
    dts = tuple(parse_float_list(dts)) if dts else harness.TEMPORAL_DTS
    eps = float(resolve(args, "eps", 1e-8))
    rough = bool(resolve(args, "rough-u0", False, cast=bool))
    if rough:
        report = harness.run_rough_start_study(
            pair=pair, level=level, eps=eps, dts=dts,
            nu=float(resolve(args, "nu", 1.0)),
            t_end=float(resolve(args, "T", 1.0)), on_row=_progress)
    else:
        report = harness.run_temporal_study(
            pair=pair, level=level, eps=eps, dts=dts,
            nu=float(resolve(args, "nu", 1.0)),
            t_end=float(resolve(args, "T", 1.0)), on_row=_progress)
    return _emit(report, resolve(args, "out"), f"temporal_{pair}")


def cmd_penalty(args):
    pair = resolve(args, "pair", "p2p1")
    level = _single_level(args, 5)
    eps_values = resolve(args, "eps", default=None)
    eps_values = (tuple(parse_float_list(eps_values)) if eps_values
                  else harness.PENALTY_EPS)
    report = harness.run_penalty_study(
        pair=pair, level=level, dt=float(resolve(args, "dt", 1e-3)),
        eps_values=eps_values, nu=float(resolve(args, "nu", 1.0)),
        t_end=float(resolve(args, "T", 1.0)), on_row=_progress)
    code = _emit(report, resolve(args, "out"), f"penalty_{pair}")
    if not report.failed():
        slope, floor, n = harness.penalty_slope(report)
        print(f"velocity error slope vs eps: {slope:.3f} "
              f"({n} pre-floor points, floor {floor:.3e})")
    return code


def cmd_cavity(args):
    nu = float(resolve(args, "nu", 1e-2))
    report = harness.run_cavity(
        pair=resolve(args, "pair", "p2p1"),
        level=_single_level(args, 5), nu=nu,
        dt=float(resolve(args, "dt", 1e-2)),
        eps=float(resolve(args, "eps", 1e-6)),
        t_end=float(resolve(args, "T", 75.0)),
        ghia_dir=resolve(args, "ghia"))
    outdir = resolve(args, "out") or "runs/cavity"
    harness.write_cavity_outputs(report, outdir)
    state = (f"steady at t={report.steady_time:.4g}" if report.steady
             else "final time reached without meeting the steady tolerance")
    print(f"cavity run ({state}); rms_u={report.rms_u:.4f} "
          f"rms_v={report.rms_v:.4f}")
    print(f"artifacts written to {outdir}/")
    return 0


def cmd_selftest(args):
    from .selfcheck import run_selftest
    return 0 if run_selftest(print) else 3


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = (read_config(args.config)
                              if getattr(args, "config", None) else None)
        handler = {
            "spatial": cmd_spatial,
            "temporal": cmd_temporal,
            "penalty": cmd_penalty,
            "cavity": cmd_cavity,
            "selftest": cmd_selftest,
        }[args.command]
        return handler(args)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except (SteppingError, LinearSolveError, PicardDivergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, IngestionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
