"""Experiment orchestration: convergence studies and the cavity benchmark.

Studies drive the transient solver over parameter sweeps and reduce the
results to error tables with convergence rates:

- spatial: uniform refinement with the time step and penalty parameter
  tied to the mesh, ``dt = eps = c * h**(degree+1)``;
- temporal: fixed fine mesh, tiny penalty parameter, halved time steps;
- penalty: fixed fine mesh and small time step, penalty parameter swept
  over decades, with the error floor measured by an extra tiny-eps run;
- cavity: the lid-driven benchmark, compared against digitized
  centerline reference profiles.

Artifacts per study: ``errors.csv`` (full double precision, byte-stable
across reruns), ``run.txt`` metadata (key=value), and a gnuplot script
that turns the CSVs into SVG plots.  The harness never executes
gnuplot; the script is an artifact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .analysis import (ErrorTriple, convergence_rates, divergence_l2,
                       error_norms, polynomial_vortex)
from .fespace import build_space, evaluate
from .mesh import unit_square_mesh
from .solver import ParameterError
from .stepper import (ELEMENT_PAIRS, PAIR_DEGREE, SteppingError,
                      TransientSolver)

#: Default finest level per pair; ``full=True`` unlocks the largest
#: mesh from the reference tables (several hours for the larger pairs).
DEFAULT_MAX_LEVEL = {"p2p1": 5, "p3p2": 4, "crp0": 6}
FULL_MAX_LEVEL = {"p2p1": 6, "p3p2": 5, "crp0": 6}

#: Time steps of the temporal-order study.
TEMPORAL_DTS = (1 / 10, 1 / 20, 1 / 40, 1 / 80, 1 / 160)

#: Penalty parameters of the penalty-order study and the tiny value
#: used to measure the mesh/time error floor.
PENALTY_EPS = (1e-2, 1e-3, 1e-4, 1e-5)
PENALTY_FLOOR_EPS = 1e-8


class IngestionError(ValueError):
    """A reference-profile file failed validation."""


@dataclass
class StudyRow:
    """One run of a parameter sweep (or its recorded failure)."""

    sweep: float
    h: float
    k: float
    eps: float
    errors: ErrorTriple | None = None
    div_l2: float | None = None
    steps: int = 0
    picard: int = 0
    level: int | None = None
    failure: str | None = None


@dataclass
class ExperimentReport:
    """Study results plus everything needed to emit artifacts."""

    kind: str
    pair: str
    sweep_name: str
    params: dict
    rows: list = field(default_factory=list)

    def succeeded(self):
        return [r for r in self.rows if r.failure is None]

    def failed(self):
        return [r for r in self.rows if r.failure is not None]

    def rate_table(self):
        """Per-row rate triples against the sweep variable.

        The first successful row (and every failed row) gets blanks.
        """
        ok = self.succeeded()
        rates = {id(r): ("", "", "") for r in self.rows}
        for prev, cur in zip(ok, ok[1:]):
            triple = tuple(
                convergence_rates([getattr(prev.errors, name),
                                   getattr(cur.errors, name)],
                                  [prev.sweep, cur.sweep])[0]
                for name in ("velocity_l2", "velocity_h1", "pressure_l2"))
            rates[id(cur)] = triple
        return rates


def _study_levels(pair, levels=None, full=False):
    if levels is not None:
        levels = [int(l) for l in levels]
        if levels != sorted(levels):
            raise ParameterError("levels must be ascending")
        return levels
    top = (FULL_MAX_LEVEL if full else DEFAULT_MAX_LEVEL)[pair]
    return list(range(1, top + 1))


def _run_one(pair, level, nu, eps, dt, t_end, case, picard,
             need_div=False, steady_tol=0.0, bc_fn=None, u0=None,
             capture_every=0, path=None):
    """One transient run; returns (row-ingredients, result or None)."""
    vfam, pfam, default_path = ELEMENT_PAIRS[pair]
    path = default_path if path is None else path
    mesh = unit_square_mesh(level)
    vspace = build_space(mesh, vfam, multiplicity=2)
    pspace = build_space(mesh, pfam)
    forcing = None if case is None else case.f
    solver = TransientSolver(vspace, pspace, nu=nu, eps=eps, dt=dt,
                             forcing=forcing, bc_fn=bc_fn,
                             picard=picard, path=path)
    if u0 is None and case is not None:
        u0 = case.velocity_at(0.0)
    result = solver.run(t_end=t_end, u0=u0, capture_every=capture_every,
                        steady_tol=steady_tol)
    triple = None if case is None else error_norms(
        vspace, pspace, result.final, case)
    div = divergence_l2(vspace, result.final.U) if need_div else None
    return solver, result, triple, div


def run_spatial_study(pair="p2p1", levels=None, c=1.0, nu=1.0, t_end=1.0,
                      full=False, picard=None, on_row=None):
    """Uniform-refinement study with ``dt = eps = c * h**(degree+1)``.

    Per-level solver failures are recorded on the row and the study
    continues with the remaining levels.
    """
    if pair not in ELEMENT_PAIRS:
        raise ParameterError(f"unknown element pair {pair!r}")
    if c <= 0.0:
        raise ParameterError(f"coupling constant must be positive, got {c}")
    levels = _study_levels(pair, levels, full)
    degree = PAIR_DEGREE[pair]
    case = polynomial_vortex(nu)
    report = ExperimentReport(
        kind="spatial", pair=pair, sweep_name="h",
        params={"pair": pair, "nu": nu, "c": c, "t_end": t_end,
                "coupling": f"dt=eps=c*h^{degree + 1}",
                "levels": ",".join(str(l) for l in levels)})
    for level in levels:
        h = 2.0 ** -level
        k = c * h ** (degree + 1)
        row = StudyRow(sweep=h, h=h, k=k, eps=k, level=level)
        try:
            _, result, triple, _ = _run_one(
                pair, level, nu, eps=k, dt=k, t_end=t_end, case=case,
                picard=picard)
            row.errors = triple
            row.steps = result.steps
            row.picard = result.picard_iterations
        except (SteppingError, ParameterError) as exc:
            row.failure = str(exc)
        report.rows.append(row)
        if on_row:
            on_row(row)
    return report


def run_temporal_study(pair="p2p1", level=5, eps=1e-8, dts=TEMPORAL_DTS,
                       nu=1.0, t_end=1.0, picard=None, on_row=None):
    """Fixed fine mesh, tiny penalty parameter, halved time steps.

    Isolates the first-order-in-dt part of the error; the rate columns
    are taken against dt.  The sweep parks eps far below the range where
    the eliminated (1/eps-scaled) system can certify its residual, so
    every pair runs on the coupled blocks here.
    """
    case = polynomial_vortex(nu)
    h = 2.0 ** -level
    report = ExperimentReport(
        kind="temporal", pair=pair, sweep_name="k",
        params={"pair": pair, "nu": nu, "eps": eps, "level": level,
                "t_end": t_end})
    for dt in dts:
        row = StudyRow(sweep=dt, h=h, k=dt, eps=eps, level=level)
        try:
            _, result, triple, _ = _run_one(
                pair, level, nu, eps=eps, dt=dt, t_end=t_end, case=case,
                picard=picard, path="coupled")
            row.errors = triple
            row.steps = result.steps
            row.picard = result.picard_iterations
        except (SteppingError, ParameterError) as exc:
            row.failure = str(exc)
        report.rows.append(row)
        if on_row:
            on_row(row)
    return report


def run_penalty_study(pair="p2p1", level=5, dt=1e-3, eps_values=PENALTY_EPS,
                      floor_eps=PENALTY_FLOOR_EPS, nu=1.0, t_end=1.0,
                      picard=None, on_row=None):
    """Penalty parameter swept over decades at fixed mesh and time step.

    An extra run at ``floor_eps`` measures the mesh/time error floor;
    its row carries the sweep value ``floor_eps`` and is listed last.
    The divergence norm is recorded for every run (it must scale
    linearly with eps).  The floor run sits below the eliminated
    system's certifiable range, so the whole sweep uses the coupled
    blocks to keep one operator across all rows.
    """
    case = polynomial_vortex(nu)
    h = 2.0 ** -level
    report = ExperimentReport(
        kind="penalty", pair=pair, sweep_name="eps",
        params={"pair": pair, "nu": nu, "dt": dt, "level": level,
                "t_end": t_end, "floor_eps": floor_eps})
    for eps in tuple(eps_values) + (floor_eps,):
        row = StudyRow(sweep=eps, h=h, k=dt, eps=eps, level=level)
        try:
            _, result, triple, div = _run_one(
                pair, level, nu, eps=eps, dt=dt, t_end=t_end, case=case,
                picard=picard, need_div=True, path="coupled")
            row.errors = triple
            row.div_l2 = div
            row.steps = result.steps
            row.picard = result.picard_iterations
        except (SteppingError, ParameterError) as exc:
            row.failure = str(exc)
        report.rows.append(row)
        if on_row:
            on_row(row)
    return report


def penalty_slope(report):
    """Log-log slope of velocity error vs eps over the pre-floor rows.

    Pre-floor rows are those whose error exceeds 3x the measured floor
    (the tiny-eps run); returns (slope, floor_error, n_points).
    """
    ok = report.succeeded()
    if not ok or report.rows[-1].failure is not None:
        raise ValueError("penalty study lacks a floor measurement")
    floor_row = ok[-1]
    floor = floor_row.errors.velocity_l2
    pre = [r for r in ok[:-1] if r.errors.velocity_l2 > 3.0 * floor]
    if len(pre) < 2:
        raise ValueError("fewer than two pre-floor points; shrink dt or h")
    xs = np.log([r.eps for r in pre])
    ys = np.log([r.errors.velocity_l2 for r in pre])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, floor, len(pre)


def rough_initial_velocity(x, y):
    """H1-but-not-H2 start field: boundary-distance kinks along diagonals."""
    d = np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))
    return np.stack([d, -d])


def run_rough_start_study(pair="p2p1", level=5, eps=1e-8, dts=TEMPORAL_DTS,
                          nu=1.0, t_end=1.0, picard=None, on_row=None):
    """Exploratory: time-step sweep from a nonsmooth initial velocity.

    No closed-form solution exists here, so errors are self-convergence
    distances: each run is compared at the final time against a
    reference computed with a four-times-smaller step.  Unforced decay
    (f = 0), homogeneous walls.  Runs on the coupled blocks for the
    same reason as the smooth time-step sweep (tiny eps).
    """
    from .assembly import assemble_mass, assemble_stiffness
    vfam, pfam, _ = ELEMENT_PAIRS[pair]
    mesh = unit_square_mesh(level)
    vspace = build_space(mesh, vfam, multiplicity=2)
    pspace = build_space(mesh, pfam)
    mass_u = assemble_mass(vspace)
    stiff_u = assemble_stiffness(vspace)
    mass_p = assemble_mass(pspace)
    p_weights = np.asarray(mass_p.sum(axis=1)).ravel()

    def run_with(dt):
        solver = TransientSolver(vspace, pspace, nu=nu, eps=eps, dt=dt,
                                 picard=picard, path="coupled")
        return solver.run(t_end=t_end, u0=rough_initial_velocity)

    reference = run_with(min(dts) / 4.0).final
    h = 2.0 ** -level
    report = ExperimentReport(
        kind="temporal-rough", pair=pair, sweep_name="k",
        params={"pair": pair, "nu": nu, "eps": eps, "level": level,
                "t_end": t_end, "mode": "self-convergence",
                "reference_dt": min(dts) / 4.0})
    for dt in sorted(dts, reverse=True):
        row = StudyRow(sweep=dt, h=h, k=dt, eps=eps, level=level)
        try:
            result = run_with(dt)
            du = result.final.U - reference.U
            dp = result.final.P - reference.P
            dp = dp - (p_weights @ dp) / p_weights.sum()
            row.errors = ErrorTriple(
                velocity_l2=float(np.sqrt(du @ (mass_u @ du))),
                velocity_h1=float(np.sqrt(du @ ((mass_u + stiff_u) @ du))),
                pressure_l2=float(np.sqrt(dp @ (mass_p @ dp))),
                time=t_end)
            row.steps = result.steps
            row.picard = result.picard_iterations
        except (SteppingError, ParameterError) as exc:
            row.failure = str(exc)
        report.rows.append(row)
        if on_row:
            on_row(row)
    return report


# ---------------------------------------------------------------------------
# Cavity benchmark


@dataclass
class CavityReport:
    """Centerline profiles against the digitized reference data."""

    params: dict
    u_coords: np.ndarray
    u_sim: np.ndarray
    u_ref: np.ndarray
    v_coords: np.ndarray
    v_sim: np.ndarray
    v_ref: np.ndarray
    rms_u: float
    rms_v: float
    steady: bool
    steady_time: float | None


def lid_bc(x, y, t):
    """Unit lid velocity on the top side, zero elsewhere.

    The corner points belong to the walls (non-leaky closure): only
    points strictly inside the lid move.
    """
    on_lid = (y >= 1.0 - 1e-12) & (x > 1e-12) & (x < 1.0 - 1e-12)
    return np.stack([on_lid.astype(float), np.zeros_like(np.asarray(x))])


def read_reference_profile(path):
    """Read a two-column ``coord,value`` CSV; returns sorted arrays.

    Raises IngestionError naming the offending line on malformed input.
    """
    coords, values = [], []
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "coord,value":
            raise IngestionError(
                f"{path}: line 1: expected header 'coord,value', "
                f"got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise IngestionError(
                    f"{path}: line {lineno}: expected two comma-separated "
                    f"fields, got {line!r}")
            try:
                coords.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError as exc:
                raise IngestionError(
                    f"{path}: line {lineno}: {exc}") from None
    coords = np.asarray(coords)
    values = np.asarray(values)
    if len(coords) < 2:
        raise IngestionError(f"{path}: fewer than two samples")
    if np.any(coords < 0.0) or np.any(coords > 1.0):
        raise IngestionError(f"{path}: ordinates outside [0, 1]")
    order = np.argsort(coords)
    return coords[order], values[order]


def load_reference_profiles(directory=None, reynolds=100):
    """Load the centerline reference profiles for a Reynolds number.

    ``directory=None`` uses the data files bundled with the package.
    Returns ((y, u), (x, v)) with basic boundary-condition validation:
    the vertical profile must read 0 at the floor and 1 at the lid, the
    horizontal one 0 at both walls.
    """
    names = (f"ghia_re{reynolds}_u_x05.csv", f"ghia_re{reynolds}_v_y05.csv")
    if directory is None:
        base = resources.files("penfem").joinpath("data")
        paths = [base.joinpath(n) for n in names]
        missing = [str(p) for p in paths if not p.is_file()]
    else:
        paths = [os.path.join(directory, n) for n in names]
        missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise IngestionError(
            "missing reference profile file(s): " + ", ".join(missing))
    (yu, uu) = read_reference_profile(str(paths[0]))
    (xv, vv) = read_reference_profile(str(paths[1]))
    checks = [
        (yu[0] == 0.0 and uu[0] == 0.0, "u profile must read 0 at the floor"),
        (yu[-1] == 1.0 and uu[-1] == 1.0, "u profile must read 1 at the lid"),
        (xv[0] == 0.0 and vv[0] == 0.0, "v profile must read 0 at x=0"),
        (xv[-1] == 1.0 and vv[-1] == 0.0, "v profile must read 0 at x=1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise IngestionError(f"reference profile validation: {msg}")
    return (yu, uu), (xv, vv)


def run_cavity(pair="p2p1", level=5, nu=1e-2, dt=1e-2, eps=1e-6,
               t_end=75.0, steady_tol=1e-6, ghia_dir=None, reynolds=100,
               picard=None):
    """Lid-driven cavity to steady state (or ``t_end``), vs reference data.

    Samples the horizontal velocity along the vertical centerline and
    the vertical velocity along the horizontal centerline at the
    reference ordinates, and reports RMS deviations.
    """
    (yu, uu), (xv, vv) = load_reference_profiles(ghia_dir, reynolds)
    vfam, pfam, path = ELEMENT_PAIRS[pair]
    mesh = unit_square_mesh(level)
    vspace = build_space(mesh, vfam, multiplicity=2)
    pspace = build_space(mesh, pfam)
    solver = TransientSolver(vspace, pspace, nu=nu, eps=eps, dt=dt,
                             bc_fn=lid_bc, picard=picard, path=path)
    result = solver.run(t_end=t_end, steady_tol=steady_tol)

    up_pts = np.column_stack([np.full_like(yu, 0.5), yu])
    vp_pts = np.column_stack([xv, np.full_like(xv, 0.5)])
    u_sim = evaluate(vspace, result.final.U, up_pts)[:, 0]
    v_sim = evaluate(vspace, result.final.U, vp_pts)[:, 1]
    rms_u = float(np.sqrt(np.mean((u_sim - uu) ** 2)))
    rms_v = float(np.sqrt(np.mean((v_sim - vv) ** 2)))
    return CavityReport(
        params={"pair": pair, "level": level, "nu": nu, "dt": dt,
                "eps": eps, "t_end": t_end, "steady_tol": steady_tol,
                "reynolds": reynolds, "steps": result.steps},
        u_coords=yu, u_sim=u_sim, u_ref=uu,
        v_coords=xv, v_sim=v_sim, v_ref=vv,
        rms_u=rms_u, rms_v=rms_v,
        steady=result.steady,
        steady_time=result.final.t if result.steady else None)


# ---------------------------------------------------------------------------
# Artifact emission


def _fmt(value):
    if isinstance(value, str):
        return value
    return f"{value:.17g}"


def write_errors_csv(report, path):
    """Write the study table; blank rate cells where undefined."""
    rates = report.rate_table()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("h,k,eps,eL2,eH1,eP,rateL2,rateH1,rateP\n")
        for row in report.succeeded():
            r = rates[id(row)]
            cells = [row.h, row.k, row.eps, row.errors.velocity_l2,
                     row.errors.velocity_h1, row.errors.pressure_l2,
                     r[0], r[1], r[2]]
            fh.write(",".join(_fmt(c) for c in cells) + "\n")


def read_errors_csv(path):
    """Re-parse an errors.csv into a list of dicts (floats, None blanks)."""
    out = []
    with open(path, encoding="ascii") as fh:
        names = fh.readline().strip().split(",")
        for line in fh:
            cells = line.strip().split(",")
            out.append({n: (float(c) if c else None)
                        for n, c in zip(names, cells)})
    return out


def write_run_metadata(report, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"kind={report.kind}\n")
        fh.write(f"sweep={report.sweep_name}\n")
        for key in sorted(report.params):
            fh.write(f"{key}={report.params[key]}\n")
        for row in report.rows:
            if row.failure is not None:
                fh.write(f"failed_{report.sweep_name}={_fmt(row.sweep)}: "
                         f"{row.failure}\n")


def write_plot_script(report, path, csv_name="errors.csv"):
    """Gnuplot script for log-log error plots (an artifact, not executed)."""
    xcol = {"h": 1, "k": 2, "eps": 3}[report.sweep_name]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("set terminal svg size 800,600 dynamic\n")
        fh.write(f"set output '{report.kind}_errors.svg'\n")
        fh.write("set datafile separator ','\n")
        fh.write("set logscale xy\n")
        fh.write(f"set xlabel '{report.sweep_name}'\n")
        fh.write("set ylabel 'error'\n")
        fh.write("set key left top\n")
        fh.write(f"plot '{csv_name}' skip 1 using {xcol}:4 "
                 "with linespoints title 'velocity L2', \\\n"
                 f"     '{csv_name}' skip 1 using {xcol}:5 "
                 "with linespoints title 'velocity H1', \\\n"
                 f"     '{csv_name}' skip 1 using {xcol}:6 "
                 "with linespoints title 'pressure L2'\n")


def emit_outputs(report, outdir):
    """Write errors.csv, run.txt, and the plot script into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    write_errors_csv(report, os.path.join(outdir, "errors.csv"))
    write_run_metadata(report, os.path.join(outdir, "run.txt"))
    write_plot_script(report, os.path.join(outdir, "plot.gp"))


def write_cavity_outputs(report, outdir):
    """Write overlay CSVs, metadata, and the overlay plot script."""
    os.makedirs(outdir, exist_ok=True)
    profiles = [
        ("centerline_u_x05.csv", "y,sim,ref",
         report.u_coords, report.u_sim, report.u_ref),
        ("centerline_v_y05.csv", "x,sim,ref",
         report.v_coords, report.v_sim, report.v_ref),
    ]
    for name, header, coords, sim, ref in profiles:
        with open(os.path.join(outdir, name), "w", encoding="ascii") as fh:
            fh.write(header + "\n")
            for c, s, g in zip(coords, sim, ref):
                fh.write(f"{c:.17g},{s:.17g},{g:.17g}\n")
    with open(os.path.join(outdir, "run.txt"), "w", encoding="ascii") as fh:
        for key in sorted(report.params):
            fh.write(f"{key}={report.params[key]}\n")
        fh.write(f"rms_u={report.rms_u:.17g}\n")
        fh.write(f"rms_v={report.rms_v:.17g}\n")
        fh.write(f"steady={report.steady}\n")
        if report.steady_time is not None:
            fh.write(f"steady_time={report.steady_time:.17g}\n")
    with open(os.path.join(outdir, "plot.gp"), "w", encoding="ascii") as fh:
        fh.write("set terminal svg size 1000,500 dynamic\n")
        fh.write("set output 'cavity_centerlines.svg'\n")
        fh.write("set datafile separator ','\n")
        fh.write("set multiplot layout 1,2\n")
        fh.write("set xlabel 'y'\nset ylabel 'u'\n")
        fh.write("plot 'centerline_u_x05.csv' skip 1 using 1:2 "
                 "with lines title 'computed', \\\n"
                 "     'centerline_u_x05.csv' skip 1 using 1:3 "
                 "with points title 'reference'\n")
        fh.write("set xlabel 'x'\nset ylabel 'v'\n")
        fh.write("plot 'centerline_v_y05.csv' skip 1 using 1:2 "
                 "with lines title 'computed', \\\n"
                 "     'centerline_v_y05.csv' skip 1 using 1:3 "
                 "with points title 'reference'\n")
        fh.write("unset multiplot\n")
