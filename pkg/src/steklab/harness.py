"""Experiment runner: builds domain families, computes spectra and checks bounds.

Only the planar bound sigma_bar_k <= 2 pi k has an explicit constant, so it
is the only bound with pass/fail verdicts. Bounds whose constants are not
known are tabulated as report-only records with their empirical constants.
Oracle cross-checks (closed forms, exact invariances) are pass/fail.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analytic import (
    CylinderSpec,
    closed_form_spectrum,
    cylinder_geometry,
    cylinder_steklov,
    fit_power_law,
    isoperimetric_ratio,
    large_sigma_sequence,
    normalized_quantities,
    wang_xia_bound,
)
from .assembly import OperatorBundle, assemble
from .config import ExperimentConfig
from .eigensolve import (
    SpectrumKind,
    SpectrumResult,
    laplace_spectrum,
    schur_dtn,
    steklov_from_operators,
    steklov_spectrum,
)
from .errors import ConfigError, IncompleteReportError, InvalidInputError, OutOfRegimeError, SteklabError
from .mesh import (
    Annulus,
    BoundaryDensity,
    FlatCylinder,
    MetricField,
    MetricKind,
    SimplicialMesh,
    StarShaped,
    UnitBall,
    UnitDisk,
    boundary_of,
    domain_spec_from_dict,
    domain_spec_to_dict,
    import_mesh,
    make_domain,
    scale_mesh,
)

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
REPORT_ONLY = "report-only"

SUITES = ("planar", "isoperimetric", "genus", "comparison", "wang_xia")
DEFAULT_REFINEMENT = 4
INVARIANCE_RTOL = 1e-10
DTN_ATOL = 1e-12
COMPARISON_MAX_INDEX = 6
INDEX_NOTE = (
    "eigenvalues are 1-indexed with sigma_1 = 0; bound shapes use the order index - 1, "
    "so the planar bound reads sigma_bar[index] <= 2 pi (index - 1)"
)


# ---------------------------------------------------------------------------
# Report records


@dataclass
class CheckRecord:
    """One bound or oracle comparison.

    ``relation`` says how observed relates to bound for a pass:
    ``at_most`` (observed <= bound * (1 + tolerance)), ``at_least``
    (observed >= bound * (1 - tolerance)) or ``above`` (observed > bound).
    """

    name: str
    suite: str
    observed_value: float
    bound_value: Optional[float]
    verdict: str
    relation: str = "at_most"
    tolerance: Optional[float] = None
    empirical_constant: Optional[float] = None
    k: Optional[int] = None
    l: Optional[int] = None

    @classmethod
    def compare(
        cls,
        name: str,
        suite: str,
        observed: float,
        bound: float,
        tolerance: float = 0.0,
        relation: str = "at_most",
        **extra,
    ) -> "CheckRecord":
        observed, bound = float(observed), float(bound)
        if relation == "at_most":
            ok = observed <= bound + tolerance * abs(bound)
        elif relation == "at_least":
            ok = observed >= bound - tolerance * abs(bound)
        elif relation == "above":
            ok = observed > bound
        else:
            raise InvalidInputError(f"unknown relation {relation!r}")
        return cls(name, suite, observed, bound, PASS if ok else FAIL, relation, tolerance, **extra)

    @classmethod
    def report_only(
        cls,
        name: str,
        suite: str,
        observed: float,
        shape: Optional[float] = None,
        bound: Optional[float] = None,
        empirical_constant: Optional[float] = None,
        **extra,
    ) -> "CheckRecord":
        constant = float(observed) / shape if shape else empirical_constant
        return cls(name, suite, float(observed), bound, REPORT_ONLY, empirical_constant=constant, **extra)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "suite": self.suite,
            "k": self.k,
            "l": self.l,
            "observed_value": self.observed_value,
            "bound_value": self.bound_value,
            "relation": self.relation,
            "tolerance": self.tolerance,
            "empirical_constant": self.empirical_constant,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CheckRecord":
        return cls(
            name=data["name"],
            suite=data["suite"],
            observed_value=data["observed_value"],
            bound_value=data.get("bound_value"),
            verdict=data["verdict"],
            relation=data.get("relation", "at_most"),
            tolerance=data.get("tolerance"),
            empirical_constant=data.get("empirical_constant"),
            k=data.get("k"),
            l=data.get("l"),
        )


@dataclass
class DomainReport:
    domain_id: str
    dim: Optional[int] = None
    genus: Optional[int] = None
    sigma_area: Optional[float] = None
    omega_volume: Optional[float] = None
    iso_ratio: Optional[float] = None
    mean_density: Optional[float] = None
    steklov: Optional[SpectrumResult] = None
    laplace_boundary: Optional[SpectrumResult] = None
    checks: List[CheckRecord] = field(default_factory=list)
    skipped: List[Dict[str, str]] = field(default_factory=list)
    properties: Dict[str, Any] = field(default_factory=dict)
    hypotheses: Dict[str, str] = field(default_factory=dict)
    error: Optional[Dict[str, str]] = None

    @classmethod
    def failed(cls, domain_id: str, error: SteklabError) -> "DomainReport":
        return cls(domain_id=domain_id, error=error.to_dict())

    @property
    def n_bdim(self) -> Optional[int]:
        return None if self.steklov is None else int(self.steklov.geometry["n_bdim"])

    def to_dict(self) -> Dict:
        return {
            "domain_id": self.domain_id,
            "note": INDEX_NOTE,
            "dim": self.dim,
            "genus": self.genus,
            "sigma_area": self.sigma_area,
            "omega_volume": self.omega_volume,
            "iso_ratio": self.iso_ratio,
            "mean_density": self.mean_density,
            "properties": {key: self.properties[key] for key in sorted(self.properties)},
            "hypotheses": {key: self.hypotheses[key] for key in sorted(self.hypotheses)},
            "steklov": None if self.steklov is None else self.steklov.to_dict(),
            "laplace_boundary": None if self.laplace_boundary is None else self.laplace_boundary.to_dict(),
            "checks": [check.to_dict() for check in self.checks],
            "skipped": list(self.skipped),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DomainReport":
        try:
            report = cls(
                domain_id=data["domain_id"],
                dim=data.get("dim"),
                genus=data.get("genus"),
                sigma_area=data.get("sigma_area"),
                omega_volume=data.get("omega_volume"),
                iso_ratio=data.get("iso_ratio"),
                mean_density=data.get("mean_density"),
                steklov=SpectrumResult.from_dict(data["steklov"]) if data.get("steklov") else None,
                laplace_boundary=SpectrumResult.from_dict(data["laplace_boundary"]) if data.get("laplace_boundary") else None,
                checks=[CheckRecord.from_dict(c) for c in data.get("checks", [])],
                skipped=list(data.get("skipped", [])),
                properties=dict(data.get("properties", {})),
                hypotheses=dict(data.get("hypotheses", {})),
                error=data.get("error"),
            )
        except (KeyError, TypeError, InvalidInputError) as e:
            raise IncompleteReportError(f"malformed report record: {e}") from e
        if report.error is None and report.steklov is not None and report.omega_volume:
            try:
                expected = isoperimetric_ratio(report.sigma_area, report.omega_volume, report.n_bdim)
                consistent = abs(expected - float(report.iso_ratio)) <= 1e-12 * expected
            except (TypeError, ValueError) as e:
                raise IncompleteReportError(f"{report.domain_id}: bad geometry fields: {e}") from e
            if not consistent:
                raise IncompleteReportError(f"{report.domain_id}: iso_ratio does not match sigma_area and omega_volume")
        return report


@dataclass
class VerdictSummary:
    checks: List[CheckRecord] = field(default_factory=list)
    skipped: List[Dict[str, str]] = field(default_factory=list)

    def _count(self, verdict: str) -> int:
        return sum(1 for check in self.checks if check.verdict == verdict)

    @property
    def passed(self) -> int:
        return self._count(PASS)

    @property
    def failed(self) -> int:
        return self._count(FAIL)

    @property
    def report_only(self) -> int:
        return self._count(REPORT_ONLY)

    @property
    def failed_checks(self) -> List[CheckRecord]:
        return [check for check in self.checks if check.verdict == FAIL]

    def merge(self, other: "VerdictSummary") -> "VerdictSummary":
        return VerdictSummary(self.checks + other.checks, self.skipped + other.skipped)

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "failed": self.failed,
            "report_only": self.report_only,
            "skipped": list(self.skipped),
        }


# ---------------------------------------------------------------------------
# Suites


def _require_spectrum(report: DomainReport, suite: str, laplace: bool = False):
    if report.error is not None:
        raise IncompleteReportError(f"{report.domain_id}: report carries an error record")
    if report.steklov is None:
        raise IncompleteReportError(f"{report.domain_id}: suite {suite!r} needs a Steklov spectrum")
    if laplace and report.laplace_boundary is None:
        raise IncompleteReportError(f"{report.domain_id}: suite {suite!r} needs a boundary Laplace spectrum")


def _planar_suite(report: DomainReport, tolerance: float) -> Tuple[List[CheckRecord], Optional[str]]:
    _require_spectrum(report, "planar")
    props = report.properties
    if report.dim != 2 or props.get("embedding_dim", 2) != 2:
        return [], "hypothesis violated: planar domain"
    if props.get("metric") != MetricKind.EUCLIDEAN.value:
        return [], "hypothesis violated: euclidean metric"
    if props.get("boundary_components") != 1 or report.genus != 0:
        return [], "hypothesis violated: simply connected"
    if not props.get("density_uniform", False):
        return [], "hypothesis violated: uniform density"
    normalized = report.steklov.normalized
    checks = []
    for index in range(2, len(normalized) + 1):
        order = index - 1
        checks.append(
            CheckRecord.compare(
                f"planar:sigma_bar[{index}]",
                "planar",
                normalized[index - 1],
                2.0 * math.pi * order,
                tolerance,
                k=index,
            )
        )
    return checks, None


def _isoperimetric_suite(report: DomainReport, tolerance: float):
    _require_spectrum(report, "isoperimetric")
    n = report.n_bdim
    normalized = report.steklov.normalized
    iso = report.iso_ratio
    checks = []
    for index in range(2, len(normalized) + 1):
        checks.append(
            CheckRecord.report_only(
                f"isoperimetric:ratio[{index}]",
                "isoperimetric",
                normalized[index - 1] * iso ** ((n - 1) / n),
                shape=(index - 1) ** (2.0 / (n + 1)),
                k=index,
            )
        )
        checks.append(
            CheckRecord.report_only(
                f"isoperimetric:spaceform[{index}]",
                "isoperimetric",
                normalized[index - 1],
                shape=(index - 1) ** (2.0 / n),
                k=index,
            )
        )
    ks = list(range(1, len(normalized)))
    values = normalized[1:]
    if len(ks) >= 2 and all(v > 0 for v in values):
        exponent, prefactor = fit_power_law(ks, values)
        checks.append(
            CheckRecord.report_only(
                "isoperimetric:fitted_exponent",
                "isoperimetric",
                exponent,
                bound=2.0 / (n + 1),
                empirical_constant=prefactor,
            )
        )
    return checks, None


def _genus_suite(report: DomainReport, tolerance: float):
    _require_spectrum(report, "genus")
    if report.dim != 2 or report.genus is None:
        return [], "hypothesis violated: surface of known genus"
    degree = (report.genus + 3) // 2
    normalized = report.steklov.normalized
    checks = [
        CheckRecord.report_only(
            f"genus:sigma_bar[{index}]",
            "genus",
            normalized[index - 1],
            shape=degree * (index - 1),
            k=index,
        )
        for index in range(2, len(normalized) + 1)
    ]
    return checks, None


def _comparison_suite(report: DomainReport, tolerance: float):
    _require_spectrum(report, "comparison", laplace=True)
    if report.properties.get("ricci_nonnegative") is False:
        return [], "hypothesis violated: non-negative Ricci curvature"
    n = report.n_bdim
    sigma_area, omega_volume, iso = report.sigma_area, report.omega_volume, report.iso_ratio
    steklov, laplace = report.steklov, report.laplace_boundary
    m = report.mean_density
    top = min(steklov.k_count, laplace.k_count, COMPARISON_MAX_INDEX)
    checks = []
    for k in range(2, top + 1):
        for l in range(2, top + 1):
            checks.append(
                CheckRecord.report_only(
                    f"comparison:comp1[{k},{l}]",
                    "comparison",
                    laplace.normalized[k - 1] * steklov.normalized[l - 1],
                    shape=(sigma_area / omega_volume) ** (3.0 / n) * (k - 1) ** (2.0 / n) * (l - 1) ** (2.0 / (n + 1)),
                    k=k,
                    l=l,
                )
            )
            checks.append(
                CheckRecord.report_only(
                    f"comparison:comp2[{k},{l}]",
                    "comparison",
                    laplace.raw[k - 1] * steklov.raw[l - 1] * m,
                    shape=(k - 1) ** (2.0 / n) * (l - 1) ** (2.0 / (n + 1)) / omega_volume ** (3.0 / (n + 1)),
                    k=k,
                    l=l,
                )
            )
    for k in range(2, top + 1):
        checks.append(
            CheckRecord.report_only(
                f"comparison:laplace[{k}]",
                "comparison",
                laplace.normalized[k - 1],
                shape=iso ** ((n + 2.0) / n) * (k - 1) ** (2.0 / n),
                k=k,
            )
        )
        if laplace.raw[k - 1] > 0:
            checks.append(
                CheckRecord.report_only(
                    f"comparison:sigma_over_sqrt_lambda[{k}]",
                    "comparison",
                    steklov.raw[k - 1] / math.sqrt(laplace.raw[k - 1]),
                    shape=1.0,
                    k=k,
                )
            )
    return checks, None


def _wang_xia_suite(report: DomainReport, tolerance: float):
    _require_spectrum(report, "wang_xia", laplace=True)
    curvature = report.properties.get("curvature")
    if curvature is None:
        return [], "hypothesis violated: disk or ball of known boundary curvature"
    if report.steklov.k_count < 2 or report.laplace_boundary.k_count < 2:
        return [], "spectrum too short"
    try:
        bound = wang_xia_bound(report.laplace_boundary.raw[1], report.n_bdim, curvature)
    except OutOfRegimeError as e:
        return [], f"out of regime: {e.message}"
    sigma2 = report.steklov.raw[1]
    return [CheckRecord.report_only("wang_xia:sigma_2", "wang_xia", sigma2, shape=bound, bound=bound, k=2)], None


_SUITE_CHECKS: Dict[str, Callable] = {
    "planar": _planar_suite,
    "isoperimetric": _isoperimetric_suite,
    "genus": _genus_suite,
    "comparison": _comparison_suite,
    "wang_xia": _wang_xia_suite,
}


def verify_bounds(report: DomainReport, suite: str, tolerance: float = 0.01) -> VerdictSummary:
    """Evaluate one suite on a report; a skipped suite yields a reason, not checks."""
    if suite not in _SUITE_CHECKS:
        raise InvalidInputError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    checks, reason = _SUITE_CHECKS[suite](report, tolerance)
    skipped = [] if reason is None else [{"suite": suite, "reason": reason}]
    return VerdictSummary(checks=checks, skipped=skipped)


def apply_suites(report: DomainReport, suites: Sequence[str], tolerance: float) -> VerdictSummary:
    """Replace the report's suite checks with freshly computed ones."""
    suites = list(suites)
    summary = VerdictSummary()
    for suite in suites:
        summary = summary.merge(verify_bounds(report, suite, tolerance))
    report.checks = [check for check in report.checks if check.suite not in suites] + summary.checks
    report.skipped = [entry for entry in report.skipped if entry["suite"] not in suites] + summary.skipped
    return summary


def summarize(reports: Sequence[DomainReport]) -> VerdictSummary:
    summary = VerdictSummary()
    for report in reports:
        summary = summary.merge(VerdictSummary(list(report.checks), list(report.skipped)))
    return summary


def exit_code(reports: Sequence[DomainReport]) -> int:
    """0 all pass or report-only, 1 some pass/fail check failed, 2 some domain errored."""
    if any(report.error is not None for report in reports):
        return 2
    if summarize(reports).failed:
        return 1
    return 0


# ---------------------------------------------------------------------------
# Domain analysis


def metric_from_config(cfg: Dict) -> MetricField:
    kind = str(cfg.get("kind", "euclidean"))
    scale = cfg.get("curvature_scale", 1.0)
    aliases = {
        "euclidean": MetricField.euclidean,
        "spherical": MetricField.spherical,
        "spherical_stereographic": MetricField.spherical,
        "hyperbolic": MetricField.hyperbolic,
        "hyperbolic_poincare": MetricField.hyperbolic,
    }
    if kind not in aliases:
        raise ConfigError(f"unknown metric kind {kind!r}")
    if kind == "euclidean":
        return MetricField.euclidean()
    return aliases[kind](float(scale))


def density_from_config(mesh: SimplicialMesh, cfg: Dict) -> BoundaryDensity:
    kind = cfg.get("kind", "uniform")
    value = float(cfg.get("value", 1.0))
    if kind == "uniform":
        return BoundaryDensity.uniform(mesh, value)
    if kind == "cosine":
        amplitude = float(cfg.get("amplitude", 0.5))
        mode = int(cfg.get("mode", 1))
        if not abs(amplitude) < 1:
            raise ConfigError("cosine density needs |amplitude| < 1")
        return BoundaryDensity.from_function(
            mesh,
            lambda x: value * (1.0 + amplitude * np.cos(mode * np.arctan2(x[:, 1], x[:, 0]))),
        )
    raise ConfigError(f"unknown density kind {kind!r}")


def _validate_density_config(cfg: Dict):
    if cfg.get("kind") not in ("uniform", "cosine"):
        raise ConfigError(f"unknown density kind {cfg.get('kind')!r}")
    if cfg.get("kind") == "cosine" and not abs(float(cfg.get("amplitude", 0.5))) < 1:
        raise ConfigError("cosine density needs |amplitude| < 1")


def describe_domain(mesh: SimplicialMesh, metric: MetricField, density: BoundaryDensity) -> Dict[str, Any]:
    props: Dict[str, Any] = {
        "metric": metric.kind.value,
        "density_uniform": density.is_uniform,
        "boundary_components": mesh.boundary_components,
        "embedding_dim": mesh.embed_dim,
        "source": "imported" if mesh.generator is None else f"generated:{mesh.generator.kind}",
        "ricci_nonnegative": metric.ricci_nonnegative,
    }
    if metric.kind in (MetricKind.SPHERICAL, MetricKind.HYPERBOLIC):
        props["curvature_scale"] = metric.curvature_scale
    if mesh.generator is not None and mesh.generator.kind in ("disk", "ball") and metric.kind is MetricKind.EUCLIDEAN:
        props["curvature"] = 1.0 / mesh.generator.params[0]
    return props


def _hypotheses(report: DomainReport) -> Dict[str, str]:
    props = report.properties
    simply_connected = report.dim == 2 and props.get("boundary_components") == 1 and report.genus == 0
    ricci = props.get("ricci_nonnegative")
    if props.get("metric") == MetricKind.EUCLIDEAN.value and props.get("source") != "imported":
        injectivity = "satisfied"
    else:
        injectivity = "assumed"
    return {
        "simply_connected": "satisfied" if simply_connected else "violated",
        "ricci_nonnegative": "unknown" if ricci is None else ("satisfied" if ricci else "violated"),
        "injectivity_radius": injectivity,
    }


def analyze_domain(
    domain_id: str,
    mesh: SimplicialMesh,
    metric: MetricField,
    density: BoundaryDensity,
    k: int,
    suites: Sequence[str] = SUITES,
    tolerance: float = 0.01,
    solver: str = "auto",
    with_laplace: bool = True,
    ops: Optional[OperatorBundle] = None,
    properties: Optional[Dict[str, Any]] = None,
) -> DomainReport:
    """Steklov (and boundary Laplace) spectra of one domain plus suite checks."""
    ops = ops if ops is not None else assemble(mesh, metric, density)
    steklov = steklov_from_operators(ops, k, solver)
    laplace = None
    if with_laplace:
        closed = boundary_of(mesh)
        laplace = laplace_spectrum(closed, metric.restrict(closed.parent_vertices), k)
    props = describe_domain(mesh, metric, density)
    props.update(properties or {})
    report = DomainReport(
        domain_id=domain_id,
        dim=mesh.dim,
        genus=mesh.genus,
        sigma_area=ops.sigma_area,
        omega_volume=ops.omega_volume,
        iso_ratio=isoperimetric_ratio(ops.sigma_area, ops.omega_volume, ops.n_bdim),
        mean_density=ops.mean_density,
        steklov=steklov,
        laplace_boundary=laplace,
        properties=props,
    )
    report.hypotheses = _hypotheses(report)
    apply_suites(report, suites, tolerance)
    logger.info("Analyzed %s: sigma_bar_2 = %.6g", domain_id, steklov.normalized[1] if steklov.k_count > 1 else float("nan"))
    return report


Job = Tuple[str, Callable[[], DomainReport]]


def _guarded(domain_id: str, job: Callable[[], DomainReport]) -> DomainReport:
    try:
        return job()
    except SteklabError as e:
        logger.warning("Domain %s failed [%s]: %s", domain_id, e.code, e.message)
        return DomainReport.failed(domain_id, e)


def run_jobs(jobs: Sequence[Job], workers: int = 1) -> List[DomainReport]:
    """Run domain jobs (optionally on a thread pool); reports come back ordered by domain_id."""
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda job: _guarded(*job), jobs))
    else:
        reports = [_guarded(*job) for job in jobs]
    return sorted(reports, key=lambda report: report.domain_id)


def domain_job(
    domain_id: str,
    build_mesh: Callable[[], SimplicialMesh],
    config: ExperimentConfig,
    suites: Sequence[str],
    metric: Optional[MetricField] = None,
    properties: Optional[Dict[str, Any]] = None,
) -> Job:
    """A deferred analysis of one domain; mesh errors surface inside the job."""

    def job() -> DomainReport:
        mesh = build_mesh()
        return analyze_domain(
            domain_id,
            mesh,
            metric or metric_from_config(config.metric),
            density_from_config(mesh, config.density),
            config.k,
            suites=suites,
            tolerance=config.tolerance,
            solver=config.solver,
            properties=properties,
        )

    return domain_id, job


def _spec_job(domain_id: str, spec, config: ExperimentConfig, suites, metric: Optional[MetricField] = None) -> Job:
    return domain_job(domain_id, partial(make_domain, spec), config, suites, metric, {"domain": domain_spec_to_dict(spec)})


def _suites(config: ExperimentConfig, default: Sequence[str]) -> List[str]:
    suites = list(config.suites) if config.suites is not None else list(default)
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite(s): {', '.join(unknown)}")
    return suites


def _refinement(config: ExperimentConfig, default: int = DEFAULT_REFINEMENT) -> int:
    return default if config.refinement is None else config.refinement


def _configured_domains(config: ExperimentConfig, suites) -> List[Job]:
    jobs = []
    for index, entry in enumerate(config.domains):
        entry = dict(entry)
        domain_id = entry.pop("id", None)
        if "path" in entry:
            path = Path(entry["path"])
            build = partial(import_mesh, path, entry.get("format"))
            jobs.append(domain_job(domain_id or path.stem, build, config, suites, properties={"path": str(path)}))
            continue
        if "refinement" not in entry:
            entry["refinement"] = _refinement(config)
        try:
            spec = domain_spec_from_dict(entry)
        except SteklabError as e:
            raise ConfigError(f"domain {index}: {e.message}") from e
        jobs.append(_spec_job(domain_id or f"{spec.kind}-{index:03d}", spec, config, suites))
    return jobs


# ---------------------------------------------------------------------------
# Experiments


def _solve(config: ExperimentConfig) -> List[DomainReport]:
    if not config.domains:
        raise ConfigError("'solve' needs at least one domain")
    return run_jobs(_configured_domains(config, _suites(config, SUITES)), config.workers)


def sample_star_radius(
    rng: np.random.Generator,
    samples: int = 64,
    modes: int = 4,
    amplitude: float = 0.15,
    min_radius: float = 0.3,
) -> Tuple[float, ...]:
    """r(theta) = 1 + sum a_j cos(j theta + phi_j), rejection-sampled for min r >= min_radius."""
    theta = 2.0 * np.pi * np.arange(samples) / samples
    j = np.arange(1, modes + 1)
    while True:
        a = rng.uniform(-amplitude, amplitude, modes)
        phi = rng.uniform(0.0, 2.0 * np.pi, modes)
        radius = 1.0 + np.sum(a[:, None] * np.cos(j[:, None] * theta[None, :] + phi[:, None]), axis=0)
        if radius.min() >= min_radius:
            return tuple(float(r) for r in radius)


def invariance_checks(
    mesh: SimplicialMesh,
    metric: MetricField,
    density: BoundaryDensity,
    k: int,
    base: Sequence[float],
    solver: str = "auto",
) -> List[CheckRecord]:
    """sigma_bar is unchanged by coordinate scaling and by density scaling."""
    base = np.asarray(base, dtype=float)
    scale = max(float(np.max(np.abs(base))), 1e-300)
    checks = []

    def deviation(other) -> float:
        other = np.asarray(other.normalized)
        count = min(len(other), len(base))
        return float(np.max(np.abs(other[:count] - base[:count]))) / scale

    for t in (0.5, 3.0):
        other = steklov_spectrum(scale_mesh(mesh, t), metric, density, k, solver)
        checks.append(CheckRecord.compare(f"invariance:coordinate_scale[{t:g}]", "invariance", deviation(other), INVARIANCE_RTOL))
    for c in (0.1, 10.0):
        other = steklov_spectrum(mesh, metric, density.scaled(c), k, solver)
        checks.append(CheckRecord.compare(f"invariance:density_scale[{c:g}]", "invariance", deviation(other), INVARIANCE_RTOL))
    return checks


def _attach_invariance(report: DomainReport, mesh_factory, config: ExperimentConfig):
    if report.error is not None:
        return
    try:
        mesh = mesh_factory()
        metric = metric_from_config(config.metric)
        report.checks.extend(
            invariance_checks(
                mesh, metric, density_from_config(mesh, config.density), config.k, report.steklov.normalized, config.solver
            )
        )
    except SteklabError as e:
        logger.warning("Invariance checks on %s failed: %s", report.domain_id, e.message)
        report.error = e.to_dict()


def _planar_sweep(config: ExperimentConfig) -> List[DomainReport]:
    suites = _suites(config, ("planar", "isoperimetric", "genus", "comparison"))
    rng = np.random.default_rng(config.seed)
    refinement = _refinement(config)
    specs = [StarShaped(sample_star_radius(rng), refinement) for _ in range(config.count or 20)]
    jobs = [_spec_job(f"star-{i:03d}", spec, config, suites) for i, spec in enumerate(specs)]
    reports = run_jobs(jobs, config.workers)
    _attach_invariance(reports[0], partial(make_domain, specs[0]), config)
    return reports


def _spaceform_sweep(config: ExperimentConfig) -> List[DomainReport]:
    suites = _suites(config, ("isoperimetric", "genus", "comparison"))
    if config.domains:
        return run_jobs(_configured_domains(config, suites), config.workers)
    refinement = _refinement(config)
    ball_level = min(refinement, 2)
    entries = []
    for a in (0.25, 0.5, 0.75, 1.0):
        entries.append((f"cap-spherical-a{a:.2f}", UnitDisk(refinement, radius=a), MetricField.spherical()))
    for a in (0.25, 0.5, 0.75):
        entries.append((f"disk-hyperbolic-a{a:.2f}", UnitDisk(refinement, radius=a), MetricField.hyperbolic()))
    entries.append(("ball-euclidean-a1.00", UnitBall(ball_level), MetricField.euclidean()))
    entries.append(("ball-spherical-a1.00", UnitBall(ball_level), MetricField.spherical()))
    entries.append(("ball-hyperbolic-a0.50", UnitBall(ball_level, radius=0.5), MetricField.hyperbolic()))
    jobs = [_spec_job(domain_id, spec, config, suites, metric=metric) for domain_id, spec, metric in entries]
    return run_jobs(jobs, config.workers)


def conformal_profile(radius: np.ndarray, s: float, profile: str = "linear", gain: float = 16.0, r0: float = 1.0) -> np.ndarray:
    """Exponent f of rho = e^f: zero near the boundary, strongly negative inside."""
    bump = np.maximum(0.0, 1.0 - np.asarray(radius) / r0)
    if profile == "quadratic":
        bump = bump**2
    return -gain * s * bump


def _conformal_experiment(config: ExperimentConfig) -> List[DomainReport]:
    suites = _suites(config, ("isoperimetric",))
    decays = config.decay_values or [0.0, 1.0, 2.0, 4.0, 8.0]
    linear = config.profile == "linear"
    gain = config.gain if config.gain is not None else (16.0 if linear else 1.0)
    r0 = config.r0 if config.r0 is not None else (1.0 if linear else 0.9)
    try:
        mesh = make_domain(UnitDisk(_refinement(config, 5)))
    except SteklabError as e:
        return [DomainReport.failed("conformal", e)]
    density = density_from_config(mesh, config.density)
    radius = np.linalg.norm(np.asarray(mesh.vertices), axis=1)

    reports: List[DomainReport] = []
    reference = None
    for index, s in enumerate(decays):
        domain_id = f"conformal-{index:02d}-s{s:g}"
        try:
            exponent = conformal_profile(radius, s, config.profile, gain, r0)
            exponent[mesh.boundary_vertices] = 0.0
            metric = MetricField.exponential(exponent)
            ops = assemble(mesh, metric, density)
            dtn = schur_dtn(ops, config.solver)
            report = analyze_domain(
                domain_id, mesh, metric, density, config.k,
                suites=suites, tolerance=config.tolerance, solver=config.solver,
                with_laplace=False, ops=ops,
                properties={"decay": float(s), "profile": config.profile, "gain": gain, "r0": r0},
            )
        except SteklabError as e:
            reports.append(DomainReport.failed(domain_id, e))
            continue
        if reference is None:
            reference = (dtn, np.asarray(report.steklov.normalized))
        else:
            ref_dtn, ref_normalized = reference
            report.checks.append(
                CheckRecord.compare(
                    "conformal:dtn_max_abs_diff", "conformal",
                    float(np.max(np.abs(dtn - ref_dtn))),
                    DTN_ATOL * max(1.0, float(np.max(np.abs(ref_dtn)))),
                )
            )
            normalized = np.asarray(report.steklov.normalized)
            report.checks.append(
                CheckRecord.compare(
                    "conformal:sigma_bar_max_rel_diff", "conformal",
                    float(np.max(np.abs(normalized - ref_normalized))) / max(1.0, float(np.max(np.abs(ref_normalized)))),
                    INVARIANCE_RTOL,
                )
            )
        reports.append(report)

    good = [r for r in reports if r.error is None]
    if len(good) >= 2 and len(good) == len(reports):
        ratios = [good[j + 1].iso_ratio / good[j].iso_ratio for j in range(len(good) - 1)]
        good[-1].checks.append(CheckRecord.compare("conformal:iso_ratio_min_step", "conformal", min(ratios), 1.0, relation="above"))
        good[-1].checks.append(
            CheckRecord.compare("conformal:iso_ratio_growth", "conformal", good[-1].iso_ratio / good[0].iso_ratio, 5.0, relation="at_least")
        )
    return reports


def _cylinder_crosscheck(config: ExperimentConfig) -> List[DomainReport]:
    suites = _suites(config, ("isoperimetric", "comparison"))
    circumference = config.circumference or 2.0 * math.pi
    length = config.length or 2.0
    spec = FlatCylinder(circumference, length, _refinement(config, 3))

    def job() -> DomainReport:
        mesh = make_domain(spec)
        report = analyze_domain(
            "flat-cylinder", mesh, MetricField.euclidean(), density_from_config(mesh, {"kind": "uniform"}),
            config.k, suites=suites, tolerance=config.tolerance, solver=config.solver,
        )
        cylinder = CylinderSpec(
            tuple(closed_form_spectrum("circle", circumference, 2 * config.k + 1)),
            length / 2.0,
            cross_boundary_measure=circumference,
        )
        compared = min(config.k, 6)
        analytic = cylinder_steklov(cylinder, compared)
        report.properties["closed_form"] = analytic
        report.properties["domain"] = domain_spec_to_dict(spec)
        scale = max(1.0, max(analytic))
        for i, (fem, exact) in enumerate(zip(report.steklov.raw, analytic)):
            error = abs(fem - exact) / (exact if exact > 0 else scale)
            report.checks.append(CheckRecord.compare(f"cylinder:rel_error[{i + 1}]", "cylinder", error, 0.02, k=i + 1))
        volume = circumference * length
        report.checks.append(
            CheckRecord.compare("cylinder:omega_volume_rel_error", "cylinder", abs(report.omega_volume - volume) / volume, 1e-10)
        )
        return report

    return run_jobs([("flat-cylinder", job)])


def cylinder_closed_form_report(cylinder: CylinderSpec, k: int) -> DomainReport:
    """Report for the closed-form spectrum of a product cylinder; no mesh involved."""
    raw = cylinder_steklov(cylinder, k)
    geometry = cylinder_geometry(cylinder)
    quantities = normalized_quantities(raw, geometry["sigma_area"], geometry["omega_volume"], cylinder.n_bdim)
    steklov = SpectrumResult(
        kind=SpectrumKind.STEKLOV,
        raw=raw,
        normalized=quantities.normalized,
        k_count=len(raw),
        geometry={**geometry, "n_bdim": cylinder.n_bdim, "mean_density": 1.0},
        solver_info={"method": "closed-form"},
    )
    return DomainReport(
        domain_id="cylinder-closed-form",
        dim=cylinder.n_bdim + 1,
        sigma_area=geometry["sigma_area"],
        omega_volume=geometry["omega_volume"],
        iso_ratio=quantities.iso_ratio,
        mean_density=1.0,
        steklov=steklov,
        properties={
            "source": "closed-form:cylinder",
            "cross_spectrum": list(cylinder.cross_spectrum),
            "half_length": cylinder.half_length,
            "exhaustive": cylinder.exhaustive,
        },
    )


def _large_sigma(config: ExperimentConfig) -> List[DomainReport]:
    values = config.lambda2_values or [4.0, 16.0, 64.0, 256.0]
    try:
        entries = large_sigma_sequence(values, cross_measure=1.0, n_bdim=3)
    except SteklabError as e:
        return [DomainReport.failed("large-sigma", e)]
    reports = []
    for index, entry in enumerate(entries):
        steklov = SpectrumResult(
            kind=SpectrumKind.STEKLOV,
            raw=[0.0, entry.sigma2],
            normalized=[0.0, entry.normalized_sigma2],
            k_count=2,
            geometry={"sigma_area": 2.0, "omega_volume": entry.omega_volume, "n_bdim": 3, "mean_density": 1.0},
            solver_info={"method": "closed-form"},
        )
        report = DomainReport(
            domain_id=f"large-sigma-{index:02d}",
            dim=4,
            sigma_area=2.0,
            omega_volume=entry.omega_volume,
            iso_ratio=entry.iso_ratio,
            mean_density=1.0,
            steklov=steklov,
            properties={"source": "closed-form:cylinder", "lambda2": entry.lambda2, "half_length": entry.half_length},
        )
        cylinder = CylinderSpec((0.0, entry.lambda2), entry.half_length, exhaustive=True)
        closed = cylinder_steklov(cylinder, 2)[1]
        report.checks.append(
            CheckRecord.compare("large_sigma:closed_form_rel_diff", "large_sigma", abs(closed - entry.sigma2) / entry.sigma2, 1e-12)
        )
        if index > 0:
            previous = entries[index - 1]
            report.checks.append(
                CheckRecord.compare("large_sigma:sigma2_step", "large_sigma", entry.sigma2 / previous.sigma2, 1.0, relation="above")
            )
            report.checks.append(
                CheckRecord.compare("large_sigma:iso_ratio_step", "large_sigma", entry.iso_ratio / previous.iso_ratio, 1.0, relation="above")
            )
        reports.append(report)
    return reports


def _comparison_product(config: ExperimentConfig) -> List[DomainReport]:
    suites = _suites(config, ("comparison",))
    if config.domains:
        return run_jobs(_configured_domains(config, suites), config.workers)
    refinement = _refinement(config)
    entries = [
        ("annulus-0.50", Annulus(0.5, 1.0, max(refinement - 2, 0))),
        ("ball", UnitBall(min(refinement, 2))),
        ("disk", UnitDisk(refinement)),
    ]
    jobs = [_spec_job(domain_id, spec, config, suites) for domain_id, spec in entries]
    return run_jobs(jobs, config.workers)


def _convergence_study(config: ExperimentConfig) -> List[DomainReport]:
    levels = config.levels_or((3, 4, 5))
    reports = []
    previous_error = None
    for level in levels:
        report = _oracle_report(f"convergence-disk-r{level}", UnitDisk(level), "disk", 7, config)
        if report.error is None:
            error = report.checks[-1].observed_value
            if level >= 5:
                report.checks.append(CheckRecord.compare("convergence:within_1pct", "convergence", error, 0.01, k=7))
            if previous_error is not None:
                report.checks.append(
                    CheckRecord.compare(
                        "convergence:error_reduction", "convergence", previous_error / max(error, 1e-300), 3.0, relation="at_least"
                    )
                )
            previous_error = error
        else:
            previous_error = None
        reports.append(report)
    ball_level = min(max(levels), 4)
    ball = _oracle_report(f"convergence-ball-r{ball_level}", UnitBall(ball_level), "ball3", 5, config)
    if ball.error is None and ball_level >= 4:
        ball.checks.append(CheckRecord.compare("convergence:within_5pct", "convergence", ball.checks[-1].observed_value, 0.05, k=5))
    reports.append(ball)
    return sorted(reports, key=lambda r: r.domain_id)


def _oracle_report(domain_id: str, spec, shape: str, k: int, config: ExperimentConfig) -> DomainReport:
    def job() -> DomainReport:
        mesh = make_domain(spec)
        report = analyze_domain(
            domain_id, mesh, MetricField.euclidean(), BoundaryDensity.uniform(mesh), k,
            suites=(), solver=config.solver, with_laplace=False,
        )
        oracle = closed_form_spectrum(shape, 1.0, k)
        errors = [abs(f - o) / o for f, o in zip(report.steklov.raw[1:], oracle[1:])]
        report.properties["closed_form"] = oracle
        report.checks.append(CheckRecord.report_only("convergence:max_rel_error", "convergence", max(errors), k=k))
        return report

    return _guarded(domain_id, job)


_EXPERIMENTS: Dict[str, Callable[[ExperimentConfig], List[DomainReport]]] = {
    "solve": _solve,
    "planar_sweep": _planar_sweep,
    "spaceform_sweep": _spaceform_sweep,
    "conformal_experiment": _conformal_experiment,
    "cylinder_crosscheck": _cylinder_crosscheck,
    "large_sigma": _large_sigma,
    "comparison_product": _comparison_product,
    "convergence_study": _convergence_study,
}


def run_experiment(config: ExperimentConfig) -> List[DomainReport]:
    """Run one experiment; a failing domain becomes an error record, not an abort."""
    metric_from_config(config.metric)
    _validate_density_config(config.density)
    logger.info("Running %s (k=%d, seed=%d)", config.experiment, config.k, config.seed)
    reports = _EXPERIMENTS[config.experiment](config)
    logger.info("%s finished: %d report(s)", config.experiment, len(reports))
    return reports
