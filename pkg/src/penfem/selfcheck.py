"""Fast invariant suite behind the ``selftest`` CLI subcommand.

A cheap, dependency-light slice of the full property checks: structural
facts about small meshes and operators, one tiny convergence study, and
artifact round-trips.  Runs in well under a minute; the heavyweight
claims live in the test suite.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .analysis import polynomial_vortex
from .assembly import (assemble_convection, assemble_mass,
                       assemble_stiffness)
from .fespace import build_space, interpolate
from .harness import emit_outputs, run_spatial_study
from .mesh import unit_square_mesh
from .stepper import State, read_checkpoint, write_checkpoint

PAIRS = (("P2", "P1"), ("P3", "P2"), ("CR", "P0"))


def _check(log, passed, label, detail=""):
    tag = "ok" if passed else "FAIL"
    log(f"  {tag:4s} {label}" + (f" ({detail})" if detail else ""))
    return passed


def run_selftest(log=print):
    """Run all quick checks; returns True when everything passed."""
    ok = True
    rng = np.random.default_rng(1234)

    mesh = unit_square_mesh(3)
    pts = mesh.nodes[mesh.triangles]
    areas = 0.5 * np.abs(
        (pts[:, 1, 0] - pts[:, 0, 0]) * (pts[:, 2, 1] - pts[:, 0, 1])
        - (pts[:, 2, 0] - pts[:, 0, 0]) * (pts[:, 1, 1] - pts[:, 0, 1]))
    ok &= _check(log, abs(areas.sum() - 1.0) < 1e-14 and areas.min() > 0,
                 "level-3 mesh covers the unit square",
                 f"sum(areas)={areas.sum():.16f}")

    small = unit_square_mesh(2)
    for vfam, pfam in PAIRS:
        vspace = build_space(small, vfam, multiplicity=2)
        pspace = build_space(small, pfam)
        mass = assemble_mass(vspace).toarray()
        mass_p = assemble_mass(pspace).toarray()
        stiff = assemble_stiffness(vspace).toarray()
        eig_m = np.linalg.eigvalsh(mass).min()
        eig_q = np.linalg.eigvalsh(mass_p).min()
        eig_k = np.linalg.eigvalsh(stiff).min()
        const = interpolate(vspace, lambda x, y: np.stack(
            [np.ones_like(x), np.full_like(x, -2.0)]))
        ok &= _check(log, eig_m > 0 and eig_q > 0,
                     f"{vfam}-{pfam} mass matrices SPD",
                     f"min eigs {eig_m:.2e}, {eig_q:.2e}")
        ok &= _check(log, eig_k > -1e-12 and
                     np.abs(stiff @ const).max() < 1e-12,
                     f"{vfam}-{pfam} stiffness PSD, constants in kernel")
        w = rng.standard_normal(vspace.ndof)
        conv = assemble_convection(vspace, w)
        skew = np.abs((conv + conv.T).toarray()).max()
        u = rng.standard_normal(vspace.ndof)
        neutral = abs(u @ (conv @ u)) / (u @ u)
        ok &= _check(log, skew < 1e-13 and neutral < 1e-12,
                     f"{vfam}-{pfam} convection exactly skew",
                     f"|N+N^T|={skew:.1e}")

    case = polynomial_vortex(1.0)
    report = run_spatial_study(pair="crp0", levels=[2, 3], on_row=None)
    rows = report.succeeded()
    decreasing = (len(rows) == 2 and
                  rows[1].errors.velocity_l2 < rows[0].errors.velocity_l2)
    rates = report.rate_table()[id(rows[-1])] if len(rows) == 2 else (0,) * 3
    ok &= _check(log, decreasing and all(r > 0.5 for r in rates),
                 "two-level crp0 study converges",
                 f"rates {tuple(round(r, 2) for r in rates)}")

    with tempfile.TemporaryDirectory() as tmp:
        state = State(U=rng.standard_normal(40), P=rng.standard_normal(11),
                      t=0.375, n=3)
        path = os.path.join(tmp, "state.chk")
        write_checkpoint(path, state)
        back = read_checkpoint(path)
        ok &= _check(log, np.array_equal(back.U, state.U) and
                     np.array_equal(back.P, state.P) and
                     back.t == state.t and back.n == state.n,
                     "checkpoint round-trip is exact")

        emit_outputs(report, os.path.join(tmp, "a"))
        emit_outputs(report, os.path.join(tmp, "b"))
        with open(os.path.join(tmp, "a", "errors.csv"), "rb") as fh:
            first = fh.read()
        with open(os.path.join(tmp, "b", "errors.csv"), "rb") as fh:
            second = fh.read()
        ok &= _check(log, first == second and len(first) > 0,
                     "errors.csv emission is byte-stable")

    du = case.u(np.array([0.3]), np.array([0.4]), 1.0)
    ok &= _check(log, np.all(np.isfinite(du)),
                 "manufactured fields evaluate finitely")
    log("selftest " + ("PASSED" if ok else "FAILED"))
    return bool(ok)
