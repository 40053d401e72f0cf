import math

import numpy as np
import pytest

from steklab.analytic import isoperimetric_ratio
from steklab.config import ExperimentConfig
from steklab.eigensolve import SpectrumKind, SpectrumResult
from steklab.errors import ConfigError, IncompleteReportError, InvalidInputError, InvalidSpecError
from steklab.harness import (
    FAIL,
    PASS,
    REPORT_ONLY,
    CheckRecord,
    DomainReport,
    apply_suites,
    conformal_profile,
    density_from_config,
    exit_code,
    metric_from_config,
    run_experiment,
    run_jobs,
    sample_star_radius,
    summarize,
    verify_bounds,
)
from steklab.mesh import MetricKind, UnitDisk, make_domain


def _spectrum(kind, raw, sigma_area, omega_volume, n_bdim=1, normalized=None):
    if normalized is None:
        normalized = [v * sigma_area ** (1.0 / n_bdim) for v in raw]
    return SpectrumResult(
        kind=kind,
        raw=list(raw),
        normalized=list(normalized),
        k_count=len(raw),
        geometry={"sigma_area": sigma_area, "omega_volume": omega_volume, "n_bdim": n_bdim, "mean_density": 1.0},
    )


def disk_like_report(sigma2=1.0, **props):
    """A hand-built report shaped like the unit disk."""
    sigma_area, omega_volume = 2.0 * math.pi, math.pi
    steklov = _spectrum(SpectrumKind.STEKLOV, [0.0, sigma2, sigma2, 2.0, 2.0], sigma_area, omega_volume)
    laplace = _spectrum(SpectrumKind.LAPLACE, [0.0, 1.0, 1.0, 4.0, 4.0], sigma_area, sigma_area)
    properties = {
        "metric": "euclidean",
        "density_uniform": True,
        "boundary_components": 1,
        "embedding_dim": 2,
        "ricci_nonnegative": True,
        "curvature": 1.0,
    }
    properties.update(props)
    return DomainReport(
        domain_id="disk",
        dim=2,
        genus=0,
        sigma_area=sigma_area,
        omega_volume=omega_volume,
        iso_ratio=isoperimetric_ratio(sigma_area, omega_volume, 1),
        mean_density=1.0,
        steklov=steklov,
        laplace_boundary=laplace,
        properties=properties,
    )


def _pass_fail(reports):
    return [c for r in reports for c in r.checks if c.verdict != REPORT_ONLY]


class TestCheckRecord:
    def test_at_most(self):
        """Test at_most with and without tolerance."""
        assert CheckRecord.compare("c", "planar", 1.0, 1.0).verdict == PASS
        assert CheckRecord.compare("c", "planar", 1.005, 1.0, 0.01).verdict == PASS
        assert CheckRecord.compare("c", "planar", 1.02, 1.0, 0.01).verdict == FAIL

    def test_at_least_and_above(self):
        """Test the lower-bound relations and an unknown relation."""
        assert CheckRecord.compare("c", "x", 2.9, 3.0, relation="at_least").verdict == FAIL
        assert CheckRecord.compare("c", "x", 3.1, 3.0, relation="at_least").verdict == PASS
        assert CheckRecord.compare("c", "x", 1.0, 1.0, relation="above").verdict == FAIL
        with pytest.raises(InvalidInputError):
            CheckRecord.compare("c", "x", 1.0, 1.0, relation="between")

    def test_report_only_constant(self):
        """Report-only records carry observed / shape."""
        record = CheckRecord.report_only("c", "genus", 6.0, shape=2.0, k=3)

        assert record.verdict == REPORT_ONLY
        assert record.empirical_constant == 3.0
        assert record.bound_value is None
        assert CheckRecord.from_dict(record.to_dict()) == record


class TestPlanarSuite:
    def test_disk_sits_on_the_bound(self):
        """Test the disk passes at equality."""
        summary = verify_bounds(disk_like_report(), "planar", 0.01)

        assert summary.failed == 0
        assert summary.passed == 4
        first = summary.checks[0]
        assert first.name == "planar:sigma_bar[2]"
        assert first.bound_value == pytest.approx(2.0 * math.pi)

    def test_violation_fails(self):
        """Test a 5% excess over the bound fails."""
        summary = verify_bounds(disk_like_report(sigma2=1.05), "planar", 0.01)
        assert [c.name for c in summary.failed_checks] == ["planar:sigma_bar[2]"]

    def test_hypotheses(self):
        """Test each violated hypothesis skips the suite with its reason."""
        cases = [
            ({"metric": MetricKind.SPHERICAL.value}, "hypothesis violated: euclidean metric"),
            ({"boundary_components": 2}, "hypothesis violated: simply connected"),
            ({"density_uniform": False}, "hypothesis violated: uniform density"),
            ({"embedding_dim": 3}, "hypothesis violated: planar domain"),
        ]
        for props, reason in cases:
            summary = verify_bounds(disk_like_report(**props), "planar")
            assert summary.checks == []
            assert summary.skipped == [{"suite": "planar", "reason": reason}]


class TestOtherSuites:
    def test_isoperimetric_is_report_only(self):
        """Test the isoperimetric suite never passes or fails."""
        summary = verify_bounds(disk_like_report(), "isoperimetric")

        assert summary.passed == summary.failed == 0
        names = [c.name for c in summary.checks]
        assert "isoperimetric:ratio[2]" in names
        assert "isoperimetric:spaceform[5]" in names
        assert names[-1] == "isoperimetric:fitted_exponent"

    def test_genus_constant(self):
        """Genus shapes use the same order index - 1 as the planar bound."""
        check = verify_bounds(disk_like_report(), "genus").checks[0]
        # genus 0: floor((0 + 3) / 2) = 1 and order 1, so the constant is sigma_bar_2
        assert check.name == "genus:sigma_bar[2]"
        assert check.empirical_constant == pytest.approx(2.0 * math.pi)

        report = disk_like_report()
        report.genus = 2
        third = verify_bounds(report, "genus").checks[1]
        # degree floor(5 / 2) = 2, order 2
        assert third.empirical_constant == pytest.approx(report.steklov.normalized[2] / 4.0)

    def test_shapes_use_order_not_index(self):
        """Order index - 1 enters the isoperimetric and comparison shapes too."""
        isoperimetric = {c.name: c for c in verify_bounds(disk_like_report(), "isoperimetric").checks}
        assert isoperimetric["isoperimetric:spaceform[2]"].empirical_constant == pytest.approx(2.0 * math.pi)
        assert isoperimetric["isoperimetric:spaceform[3]"].empirical_constant == pytest.approx(2.0 * math.pi / 4.0)

        comparison = {c.name: c for c in verify_bounds(disk_like_report(), "comparison").checks}
        # disk: lambda_2 sigma_2 = 1 and |Omega|^{3/2} / (1 * 1) = pi^{3/2}
        assert comparison["comparison:comp2[2,2]"].empirical_constant == pytest.approx(math.pi**1.5)

    def test_comparison_skips_negative_curvature(self):
        """Test negative Ricci curvature skips the comparison suite."""
        summary = verify_bounds(disk_like_report(ricci_nonnegative=False), "comparison")
        assert summary.skipped[0]["reason"] == "hypothesis violated: non-negative Ricci curvature"

    def test_comparison_products(self):
        """Test the products and ratios on the disk."""
        checks = {c.name: c for c in verify_bounds(disk_like_report(), "comparison").checks}

        assert checks["comparison:comp2[2,2]"].observed_value == pytest.approx(1.0)
        assert checks["comparison:sigma_over_sqrt_lambda[2]"].observed_value == pytest.approx(1.0)
        assert all(c.verdict == REPORT_ONLY for c in checks.values())

    def test_wang_xia(self):
        """Test the disk attains the bound; regime and curvature gates skip."""
        check = verify_bounds(disk_like_report(), "wang_xia").checks[0]
        assert check.bound_value == pytest.approx(1.0)
        assert check.empirical_constant == pytest.approx(1.0)

        skipped = verify_bounds(disk_like_report(curvature=2.0), "wang_xia").skipped[0]
        assert skipped["reason"].startswith("out of regime")
        report = disk_like_report()
        del report.properties["curvature"]
        assert verify_bounds(report, "wang_xia").skipped[0]["reason"].startswith("hypothesis violated")

    def test_missing_inputs(self):
        """Test unknown suites and incomplete reports."""
        with pytest.raises(InvalidInputError):
            verify_bounds(disk_like_report(), "hearing")
        report = disk_like_report()
        report.laplace_boundary = None
        with pytest.raises(IncompleteReportError):
            verify_bounds(report, "comparison")
        with pytest.raises(IncompleteReportError):
            verify_bounds(DomainReport.failed("x", InvalidSpecError("bad")), "planar")

    def test_apply_suites_replaces_previous_checks(self):
        """Test re-applying suites does not duplicate checks."""
        report = disk_like_report()
        apply_suites(report, ["planar", "genus"], 0.01)
        first = len(report.checks)
        apply_suites(report, ["planar"], 0.5)

        assert len(report.checks) == first
        assert all(c.tolerance == 0.5 for c in report.checks if c.suite == "planar")


class TestReports:
    def test_round_trip_and_consistency(self):
        """Test reports reload and reject inconsistent derived fields."""
        report = disk_like_report()
        apply_suites(report, ["planar"], 0.01)
        data = report.to_dict()
        restored = DomainReport.from_dict(data)

        assert restored.checks == report.checks
        assert restored.steklov.raw == report.steklov.raw
        assert data["note"].startswith("eigenvalues are 1-indexed")

        data["iso_ratio"] = data["iso_ratio"] * 1.01
        with pytest.raises(IncompleteReportError):
            DomainReport.from_dict(data)
        with pytest.raises(IncompleteReportError):
            DomainReport.from_dict({"dim": 2})

    def test_exit_codes(self):
        """Test 0 for all pass, 1 for a failure, 2 for an error record."""
        good = disk_like_report()
        apply_suites(good, ["planar"], 0.01)
        bad = disk_like_report(sigma2=1.2)
        apply_suites(bad, ["planar"], 0.01)
        errored = DomainReport.failed("broken", InvalidSpecError("bad spec"))

        assert exit_code([good]) == 0
        assert exit_code([good, bad]) == 1
        assert exit_code([good, bad, errored]) == 2
        assert summarize([good, bad]).failed == 1

    def test_run_jobs_orders_and_guards(self):
        """Test jobs come back sorted by id and errors become records."""

        def broken():
            raise InvalidSpecError("radius must be positive")

        jobs = [("b", lambda: DomainReport("b")), ("a", broken)]
        for workers in (1, 2):
            reports = run_jobs(jobs, workers)
            assert [r.domain_id for r in reports] == ["a", "b"]
            assert reports[0].error == {"code": "invalid-spec", "message": "radius must be positive"}


class TestConfiguration:
    def test_metric_kinds(self):
        """Test metric configs by kind."""
        assert metric_from_config({"kind": "hyperbolic"}).kind is MetricKind.HYPERBOLIC
        assert metric_from_config({"kind": "spherical_stereographic", "curvature_scale": 2.0}).curvature_scale == 2.0
        with pytest.raises(ConfigError):
            metric_from_config({"kind": "lorentzian"})

    def test_density_kinds(self):
        """Test cosine densities and their validation."""
        mesh = make_domain(UnitDisk(refinement=1))
        density = density_from_config(mesh, {"kind": "cosine", "value": 2.0, "amplitude": 0.5, "mode": 2})

        assert not density.is_uniform
        assert density.values.max() == pytest.approx(3.0)
        with pytest.raises(ConfigError):
            density_from_config(mesh, {"kind": "cosine", "amplitude": 1.5})
        with pytest.raises(ConfigError):
            density_from_config(mesh, {"kind": "gaussian"})

    def test_star_samples_are_deterministic(self):
        """Test a seeded generator gives the same star."""
        first = sample_star_radius(np.random.default_rng(7))
        second = sample_star_radius(np.random.default_rng(7))
        assert first == second
        assert min(first) >= 0.3

    def test_conformal_profile(self):
        """Test the linear profile and the zero decay."""
        values = conformal_profile(np.array([0.0, 0.5, 1.0]), 2.0)
        assert values.tolist() == [-32.0, -16.0, 0.0]
        assert conformal_profile(np.array([0.0]), 0.0).tolist() == [0.0]


class TestExperiments:
    def test_large_sigma(self):
        """Test the closed-form sequence passes its checks."""
        reports = run_experiment(ExperimentConfig(experiment="large_sigma"))

        assert [r.domain_id for r in reports] == [f"large-sigma-{i:02d}" for i in range(4)]
        assert exit_code(reports) == 0
        assert all(c.verdict == PASS for r in reports for c in r.checks)
        assert DomainReport.from_dict(reports[-1].to_dict()).iso_ratio == reports[-1].iso_ratio

    def test_large_sigma_out_of_regime(self):
        """Test lambda_2 below the regime becomes an error record."""
        reports = run_experiment(ExperimentConfig(experiment="large_sigma", lambda2_values=[0.5]))
        assert reports[0].error["code"] == "out-of-regime"
        assert exit_code(reports) == 2

    def test_solve_disk(self):
        """Test a configured disk solve."""
        config = ExperimentConfig(
            experiment="solve",
            domains=[{"kind": "unit_disk", "refinement": 3}],
            k=6,
            suites=["planar", "wang_xia"],
            tolerance=0.05,
        )
        reports = run_experiment(config)
        report = reports[0]

        assert report.domain_id == "unit_disk-000"
        assert report.properties["domain"]["kind"] == "unit_disk"
        assert report.hypotheses["simply_connected"] == "satisfied"
        assert exit_code(reports) == 0
        assert any(c.name == "wang_xia:sigma_2" for c in report.checks)

    def test_solve_errors(self):
        """Test config errors raise and domain errors become records."""
        with pytest.raises(ConfigError):
            run_experiment(ExperimentConfig(experiment="solve"))
        with pytest.raises(ConfigError):
            run_experiment(ExperimentConfig(experiment="solve", domains=[{"kind": "unit_disk"}], suites=["nope"]))
        with pytest.raises(ConfigError):
            run_experiment(ExperimentConfig(experiment="solve", domains=[{"kind": "triangle"}]))

        config = ExperimentConfig(
            experiment="solve", domains=[{"id": "bad", "kind": "annulus", "r_in": 1.0, "r_out": 0.5}]
        )
        reports = run_experiment(config)
        assert reports[0].error["code"] == "invalid-spec"
        assert exit_code(reports) == 2

    def test_cylinder_crosscheck(self):
        """Test FEM against the closed form on the flat cylinder."""
        reports = run_experiment(ExperimentConfig(experiment="cylinder_crosscheck", refinement=2, k=6))
        report = reports[0]

        assert report.domain_id == "flat-cylinder"
        assert len([c for c in report.checks if c.suite == "cylinder"]) == 7
        assert exit_code(reports) == 0
        assert report.properties["closed_form"][1] == pytest.approx(math.tanh(1.0))

    def test_single_eigenvalue_comparisons(self):
        """With k = 1 the only reference value is 0; relative errors stay finite."""
        report = run_experiment(ExperimentConfig(experiment="cylinder_crosscheck", refinement=1, k=1))[0]
        assert report.error is None
        checks = {c.name: c for c in report.checks}
        assert checks["cylinder:rel_error[1]"].verdict == PASS

        config = ExperimentConfig(experiment="conformal_experiment", refinement=1, k=1, decay_values=[0.0, 1.0])
        reports = run_experiment(config)
        assert all(r.error is None for r in reports)
        checks = {c.name: c for c in reports[1].checks}
        assert checks["conformal:sigma_bar_max_rel_diff"].verdict == PASS

    def test_spaceform_sweep(self):
        """Test the space-form sweep skips comparison on hyperbolic domains."""
        reports = run_experiment(ExperimentConfig(experiment="spaceform_sweep", refinement=1, k=4))

        assert len(reports) == 10
        assert all(r.error is None for r in reports)
        hyperbolic = [r for r in reports if "hyperbolic" in r.domain_id]
        assert len(hyperbolic) == 4
        for report in hyperbolic:
            assert {"suite": "comparison", "reason": "hypothesis violated: non-negative Ricci curvature"} in report.skipped

    def test_planar_sweep_invariance(self):
        """Test scaling invariance is attached to the first star."""
        config = ExperimentConfig(experiment="planar_sweep", refinement=2, k=4, count=2, seed=3, suites=["isoperimetric"])
        reports = run_experiment(config)

        assert [r.domain_id for r in reports] == ["star-000", "star-001"]
        invariance = [c for c in reports[0].checks if c.suite == "invariance"]
        assert len(invariance) == 4
        assert all(c.verdict == PASS for c in invariance)

    def test_conformal_leaves_boundary_data_alone(self):
        """Test the DtN map and sigma_bar do not move while the interior shrinks."""
        config = ExperimentConfig(experiment="conformal_experiment", refinement=2, k=4, decay_values=[0.0, 1.0, 2.0])
        reports = run_experiment(config)

        assert [r.domain_id for r in reports] == ["conformal-00-s0", "conformal-01-s1", "conformal-02-s2"]
        for report in reports[1:]:
            checks = {c.name: c for c in report.checks}
            assert checks["conformal:dtn_max_abs_diff"].verdict == PASS
            assert checks["conformal:sigma_bar_max_rel_diff"].verdict == PASS
        assert reports[0].iso_ratio < reports[1].iso_ratio < reports[2].iso_ratio

    def test_convergence_ids(self):
        """Test the convergence reports are named by shape and level."""
        reports = run_experiment(ExperimentConfig(experiment="convergence_study", levels=[1, 2]))
        assert [r.domain_id for r in reports] == ["convergence-ball-r2", "convergence-disk-r1", "convergence-disk-r2"]
        assert all(r.error is None for r in reports)


class TestAcceptance:
    """Full-size experiments at their default resolution."""

    def test_convergence_study(self):
        """Disk within 1% at level 5 with error shrinking 3x per level; ball within 5% at level 4."""
        reports = run_experiment(ExperimentConfig(experiment="convergence_study", levels=[3, 4, 5]))

        assert [r.domain_id for r in reports] == [
            "convergence-ball-r4",
            "convergence-disk-r3",
            "convergence-disk-r4",
            "convergence-disk-r5",
        ]
        checks = _pass_fail(reports)
        names = {c.name for c in checks}
        assert {"convergence:within_1pct", "convergence:error_reduction", "convergence:within_5pct"} <= names
        assert all(c.verdict == PASS for c in checks)
        assert exit_code(reports) == 0
        assert reports[0].steklov.normalized[1] == pytest.approx(math.sqrt(4.0 * math.pi), rel=0.05)

    def test_planar_sweep(self):
        """Twenty random star-shaped domains stay under 2 pi (index - 1)."""
        config = ExperimentConfig(experiment="planar_sweep", refinement=4, count=20, seed=42, suites=["planar"])
        reports = run_experiment(config)

        assert len(reports) == 20
        planar = [c for r in reports for c in r.checks if c.suite == "planar"]
        invariance = [c for r in reports for c in r.checks if c.suite == "invariance"]
        assert len(planar) == 20 * (config.k - 1)
        assert len(invariance) == 4
        assert all(c.verdict == PASS for c in planar + invariance)
        assert exit_code(reports) == 0

    def test_conformal_experiment(self):
        """Five decays: boundary data unchanged while I grows at least fivefold."""
        reports = run_experiment(ExperimentConfig(experiment="conformal_experiment", k=4))

        assert len(reports) == 5
        checks = _pass_fail(reports)
        assert "conformal:iso_ratio_growth" in {c.name for c in checks}
        assert all(c.verdict == PASS for c in checks)
        ratios = [r.iso_ratio for r in reports]
        assert all(a < b for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] / ratios[0] >= 5.0
