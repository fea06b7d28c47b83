import numpy as np
import pytest

from penfem.analysis import ErrorTriple
from penfem.harness import (ExperimentReport, IngestionError, StudyRow,
                            emit_outputs, lid_bc, load_reference_profiles,
                            penalty_slope, read_errors_csv,
                            read_reference_profile, rough_initial_velocity,
                            run_cavity, run_penalty_study,
                            run_rough_start_study, run_spatial_study,
                            run_temporal_study, write_errors_csv)


def synthetic_report(errors=(1e-2, 2.5e-3, 6.25e-4), fail_at=None):
    report = ExperimentReport(kind="spatial", pair="p2p1", sweep_name="h",
                              params={"nu": 1.0})
    for i, e in enumerate(errors):
        h = 2.0 ** -(i + 1)
        row = StudyRow(sweep=h, h=h, k=h, eps=h, level=i + 1)
        if fail_at == i:
            row.failure = "synthetic failure"
        else:
            row.errors = ErrorTriple(e, 2 * e, 3 * e, time=1.0)
        report.rows.append(row)
    return report


def test_rate_table_blanks_and_values():
    report = synthetic_report()
    rates = report.rate_table()
    rows = report.rows
    assert rates[id(rows[0])] == ("", "", "")
    for row in rows[1:]:
        assert rates[id(row)][0] == pytest.approx(2.0, abs=1e-12)


def test_rate_table_skips_failed_rows():
    report = synthetic_report(fail_at=1)
    rates = report.rate_table()
    ok = report.succeeded()
    assert len(ok) == 2
    # rate bridges the gap: levels 1 -> 3 still quarter per halving
    assert rates[id(ok[1])][0] == pytest.approx(2.0, abs=1e-12)
    assert rates[id(report.rows[1])] == ("", "", "")


def test_errors_csv_roundtrip(tmp_path):
    report = synthetic_report()
    path = tmp_path / "errors.csv"
    write_errors_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "h,k,eps,eL2,eH1,eP,rateL2,rateH1,rateP"
    assert len(lines) == 4
    assert lines[1].endswith(",,,")  # first row has blank rates
    back = read_errors_csv(path)
    assert back[0]["rateL2"] is None
    assert back[1]["rateL2"] == pytest.approx(2.0, abs=1e-12)
    for row, rec in zip(report.rows, back):
        assert rec["eL2"] == row.errors.velocity_l2  # 17 digits: exact


def test_empty_report_writes_header_only(tmp_path):
    report = ExperimentReport(kind="spatial", pair="p2p1", sweep_name="h",
                              params={})
    path = tmp_path / "errors.csv"
    write_errors_csv(report, path)
    assert path.read_text() == "h,k,eps,eL2,eH1,eP,rateL2,rateH1,rateP\n"


def test_emission_is_deterministic(tmp_path):
    report = synthetic_report()
    emit_outputs(report, tmp_path / "a")
    emit_outputs(report, tmp_path / "b")
    for name in ("errors.csv", "run.txt", "plot.gp"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_run_metadata_records_failures(tmp_path):
    report = synthetic_report(fail_at=2)
    emit_outputs(report, tmp_path)
    text = (tmp_path / "run.txt").read_text()
    assert "kind=spatial" in text
    assert "sweep=h" in text
    assert "nu=1.0" in text
    assert "failed_h=0.125: synthetic failure" in text


def test_plot_script_references_csv_and_sweep_column(tmp_path):
    report = synthetic_report()
    emit_outputs(report, tmp_path)
    script = (tmp_path / "plot.gp").read_text()
    assert "'errors.csv'" in script
    assert "using 1:4" in script  # h is column 1
    assert "logscale xy" in script
    temporal = ExperimentReport(kind="temporal", pair="p2p1",
                                sweep_name="k", params={})
    emit_outputs(temporal, tmp_path / "t")
    assert "using 2:4" in (tmp_path / "t" / "plot.gp").read_text()


def test_bundled_profiles_load_and_satisfy_bcs():
    (yu, uu), (xv, vv) = load_reference_profiles()
    assert len(yu) == 17 and len(xv) == 17
    assert np.all(np.diff(yu) > 0) and np.all(np.diff(xv) > 0)
    assert uu[0] == 0.0 and uu[-1] == 1.0
    assert vv[0] == 0.0 and vv[-1] == 0.0


def test_missing_profile_directory():
    with pytest.raises(IngestionError, match="missing"):
        load_reference_profiles("/nonexistent/dir")


@pytest.mark.parametrize("content,match", [
    ("x,y\n0.0,0.0\n1.0,1.0\n", "line 1"),
    ("coord,value\n0.0,0.0\n0.5\n1.0,1.0\n", "line 3"),
    ("coord,value\n0.0,0.0\n0.5,abc\n1.0,1.0\n", "line 3"),
    ("coord,value\n-0.2,0.0\n1.0,1.0\n", "outside"),
    ("coord,value\n0.5,0.3\n", "fewer than two"),
])
def test_profile_validation_errors(tmp_path, content, match):
    path = tmp_path / "profile.csv"
    path.write_text(content)
    with pytest.raises(IngestionError, match=match):
        read_reference_profile(path)


def test_profile_endpoint_validation(tmp_path):
    # lid endpoint must read the lid speed
    (tmp_path / "ghia_re100_u_x05.csv").write_text(
        "coord,value\n0.0,0.0\n1.0,0.5\n")
    (tmp_path / "ghia_re100_v_y05.csv").write_text(
        "coord,value\n0.0,0.0\n1.0,0.0\n")
    with pytest.raises(IngestionError, match="lid"):
        load_reference_profiles(tmp_path)


def test_lid_velocity_closure():
    x = np.array([0.0, 1e-13, 0.5, 1.0 - 1e-13, 1.0, 0.3])
    y = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.2])
    vals = lid_bc(x, y, 0.0)
    np.testing.assert_array_equal(vals[0], [0, 0, 1, 0, 0, 0])
    assert not vals[1].any()


def test_spatial_study_records_failure_and_continues():
    # c=8 makes the level-1 step size 2.0, an invalid configuration;
    # the level-2 run still happens
    report = run_spatial_study(pair="crp0", levels=[1, 2], c=8.0)
    assert report.rows[0].failure is not None
    assert report.rows[1].failure is None
    assert report.rows[1].errors.velocity_l2 > 0


def test_spatial_study_validates_inputs():
    from penfem.solver import ParameterError
    with pytest.raises(ParameterError):
        run_spatial_study(pair="p1p0")
    with pytest.raises(ParameterError):
        run_spatial_study(pair="p2p1", c=0.0)
    with pytest.raises(ParameterError):
        run_spatial_study(pair="p2p1", levels=[3, 1])


def test_spatial_study_monotone_error():
    report = run_spatial_study(pair="crp0", levels=[1, 3])
    ok = report.succeeded()
    assert ok[-1].errors.velocity_l2 < ok[0].errors.velocity_l2


def test_temporal_study_rates_against_dt():
    report = run_temporal_study(pair="crp0", level=2, eps=1e-8,
                                dts=(0.5, 0.25))
    assert [r.k for r in report.rows] == [0.5, 0.25]
    assert all(r.h == 0.25 for r in report.rows)
    rates = report.rate_table()
    assert rates[id(report.rows[1])][0] != ""


def test_penalty_study_floor_and_slope():
    # level-2 P2-P1 keeps the spatial floor (~5e-4) well under 1/3 of
    # both sweep points, so exactly the two swept rows count as pre-floor
    report = run_penalty_study(pair="p2p1", level=2, dt=0.05,
                               eps_values=(1e-1, 1e-2), floor_eps=1e-9)
    assert [r.eps for r in report.rows] == [1e-1, 1e-2, 1e-9]
    assert all(r.div_l2 is not None for r in report.rows)
    # divergence shrinks with eps until the spatial floor
    assert report.rows[0].div_l2 > report.rows[1].div_l2 > \
        report.rows[2].div_l2
    slope, floor, n = penalty_slope(report)
    assert n == 2
    assert floor == report.rows[-1].errors.velocity_l2
    assert 0.5 < slope < 1.5


def test_penalty_slope_needs_pre_floor_points():
    report = ExperimentReport(kind="penalty", pair="p2p1",
                              sweep_name="eps", params={})
    for eps, err in ((1e-4, 3e-6), (1e-5, 2.2e-6), (1e-8, 2e-6)):
        row = StudyRow(sweep=eps, h=0.1, k=1e-3, eps=eps,
                       errors=ErrorTriple(err, err, err, 1.0))
        report.rows.append(row)
    with pytest.raises(ValueError, match="pre-floor"):
        penalty_slope(report)


def test_rough_start_study_self_converges():
    u = rough_initial_velocity(np.array([0.5, 0.25]), np.array([0.5, 0.1]))
    np.testing.assert_allclose(u[0], [0.5, 0.1])  # distance to boundary
    report = run_rough_start_study(pair="crp0", level=2, eps=1e-6,
                                   dts=(0.25, 0.125), t_end=0.5)
    e = [r.errors.velocity_l2 for r in report.rows]
    assert e[1] < e[0]  # halving dt moves toward the reference
    assert report.params["mode"] == "self-convergence"


def test_creeping_cavity_midplane_symmetry_and_lid():
    # Steady creeping cavity flow: reflecting across x=0.5 leaves u1 even
    # and u2 odd along the horizontal centerline.  The residual asymmetry
    # is the convective contribution, linear in Re: measured 1.2e-4 at
    # Re=0.1 and 1.3e-3 at Re=1 (mesh-converged at this level).
    from penfem.fespace import build_space, evaluate
    from penfem.mesh import unit_square_mesh
    from penfem.stepper import TransientSolver

    mesh = unit_square_mesh(4)
    vspace = build_space(mesh, "P2", multiplicity=2)
    pspace = build_space(mesh, "P1")
    x = np.linspace(1.0 / 16.0, 15.0 / 16.0, 15)
    pts = np.column_stack([x, np.full_like(x, 0.5)])
    mirror = np.column_stack([1.0 - x, np.full_like(x, 0.5)])

    def asymmetry(nu):
        solver = TransientSolver(vspace, pspace, nu=nu, eps=1e-6,
                                 dt=0.01 / nu, bc_fn=lid_bc, path="coupled")
        result = solver.run(t_end=5.0 / nu, steady_tol=1e-6 * nu)
        assert result.steady
        vals = evaluate(vspace, result.final.U, pts)
        mvals = evaluate(vspace, result.final.U, mirror)
        return (result.final.U,
                np.max(np.abs(vals[:, 0] - mvals[:, 0])),
                np.max(np.abs(vals[:, 1] + mvals[:, 1])))

    U1, a1_re1, a2_re1 = asymmetry(1.0)
    assert a1_re1 < 1.5e-3
    assert a2_re1 < 1.5e-3
    _, a1_re01, a2_re01 = asymmetry(10.0)
    assert a1_re01 < 2.5e-4
    assert a2_re01 < 2.5e-4

    # lid velocity is enforced exactly at top points away from corners
    lid_pts = np.column_stack([np.array([0.25, 0.5, 0.75]), np.ones(3)])
    lid_vals = evaluate(vspace, U1, lid_pts)
    np.testing.assert_allclose(lid_vals[:, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(lid_vals[:, 1], 0.0, atol=1e-12)


def test_run_cavity_report_mechanics():
    report = run_cavity(pair="p2p1", level=3, nu=1.0, dt=0.01, eps=1e-6,
                        t_end=5.0, steady_tol=1e-6)
    assert report.steady
    assert report.steady_time is not None and report.steady_time < 1.0
    # profile endpoints carry the boundary values exactly
    assert report.u_coords[0] == 0.0 and report.u_sim[0] == 0.0
    assert report.u_coords[-1] == 1.0 and report.u_sim[-1] == 1.0
    assert report.v_sim[0] == 0.0 and report.v_sim[-1] == 0.0
    assert np.isfinite(report.rms_u) and report.rms_u > 0.0
    assert np.isfinite(report.rms_v) and report.rms_v > 0.0
    assert report.params["steps"] > 0
