import logging
import math
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import click

from . import __version__
from .analytic import CylinderSpec
from .config import EXPERIMENTS, Config, ExperimentConfig
from .errors import ConfigError, SteklabError
from .harness import SUITES, DomainReport, apply_suites, cylinder_closed_form_report, exit_code, run_experiment, summarize
from .storage import ReportStorage, RunHistory

DOMAIN_KINDS = ('unit_disk', 'star_shaped', 'annulus', 'flat_cylinder', 'unit_ball')
SWEEP_KINDS = tuple(kind for kind in EXPERIMENTS if kind != 'solve')


def _error(message: str, hint: Optional[str] = None):
    click.echo(click.style(f"𐩃 Error: {message}", fg="red", bold=True), err=True)
    if hint:
        click.echo(click.style(f"💡 {hint}", fg="yellow"), err=True)


def _parse_list(text: Optional[str], kind=float) -> Optional[List]:
    if text is None:
        return None
    try:
        return [kind(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list, got {text!r}")


def common_options(f):
    """Flags shared by every command that runs an experiment."""
    options = [
        click.option('--refinement', '-r', type=int, help='Mesh refinement level'),
        click.option('--k', '-k', 'k', type=int, help='Number of eigenvalues (default from ~/.steklab/config.json)'),
        click.option('--seed', '-s', type=int, help='Random seed for sampled domain families'),
        click.option('--format', '-f', 'fmt', type=click.Choice(ReportStorage.FORMATS), default='json', help='Report format (default: json)'),
        click.option('--out', '-o', type=click.Path(dir_okay=False), help='Write the report to PATH instead of stdout'),
        click.option('--tol-override', type=float, help='Relative tolerance for pass/fail checks'),
        click.option('--solver', type=click.Choice(['auto', 'splu', 'cholmod', 'cg']), help='Interior solver'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group(invoke_without_command=True)
@click.option('--version', '-v', is_flag=True, help='Show version and exit')
@click.option('--verbose', '-V', count=True, help='Log progress (-VV for debug output)')
@click.pass_context
def cli(ctx, version, verbose):
    """steklab - Steklov spectra of meshed domains and their eigenvalue bounds

    \b
    USAGE:
      steklab solve [OPTIONS]          Spectrum and bound checks for one domain
      steklab sweep KIND [OPTIONS]     Run an experiment over a domain family
      steklab cylinder [OPTIONS]       Flat-cylinder closed form vs. FEM
      steklab convergence [OPTIONS]    Convergence against closed-form spectra
      steklab verify REPORT            Re-check a saved JSON report
      steklab history                  Show previous runs

    \b
    EXAMPLES:
      Single domains:
        steklab solve --domain unit_disk -r 5 -k 8
        steklab solve --domain annulus --r-in 0.5 --suite comparison
        steklab solve --mesh surface.off --suite genus

    \b
      Sweeps:
        steklab sweep planar_sweep --count 20 --seed 42 -o planar.json
        steklab sweep spaceform_sweep --workers 4
        steklab sweep --config experiment.json -f csv -o table.csv

    \b
      Closed forms:
        steklab cylinder --cross-spectrum 0,9.8696 --half-length 1 --exhaustive
        steklab cylinder -r 3 -k 6

    \b
    EXIT CODES:
      0  every check passed or is report-only
      1  at least one pass/fail check failed
      2  execution error (bad config, unreadable report, failed domain)
    """
    if verbose:
        logging.basicConfig(
            level=logging.DEBUG if verbose > 1 else logging.INFO,
            format='%(asctime)s %(name)s %(levelname)s: %(message)s',
        )

    if version:
        click.echo(f"steklab version {__version__}")
        ctx.exit()

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit()


def _build_config(ctx, data: Dict, overrides: Dict, config_path: Optional[str] = None) -> ExperimentConfig:
    defaults = Config()
    try:
        if config_path:
            config = ExperimentConfig.from_file(config_path, defaults)
            if data.get('experiment'):
                config = config.with_overrides(experiment=data['experiment'])
        else:
            config = ExperimentConfig.from_dict(data, defaults)
        return config.with_overrides(**overrides)
    except ConfigError as e:
        _error(e.message, "Check the experiment config and command-line flags")
        ctx.exit(2)


def _print_summary(reports: Sequence[DomainReport]):
    for report in reports:
        if report.error is not None:
            click.echo(
                click.style(f"✗ {report.domain_id}: [{report.error['code']}] {report.error['message']}", fg="red"),
                err=True,
            )
            continue
        failed = [check for check in report.checks if check.verdict == 'fail']
        line = f"  {click.style(report.domain_id, fg='cyan', bold=True)}"
        if report.steklov is not None and report.steklov.k_count > 1:
            line += f"  sigma_bar_2={report.steklov.normalized[1]:.6g}"
        if report.iso_ratio is not None:
            line += f"  I={report.iso_ratio:.6g}"
        click.echo(line, err=True)
        for check in failed:
            click.echo(
                click.style(
                    f"    ✗ {check.name}: observed {check.observed_value:.6g} vs bound {check.bound_value:.6g}",
                    fg="red",
                ),
                err=True,
            )

    summary = summarize(reports)
    errors = sum(1 for report in reports if report.error is not None)
    click.echo(err=True)
    parts = [
        click.style(f"✓ {summary.passed} passed", fg="green", bold=True),
        click.style(f"{summary.report_only} report-only", fg="cyan"),
    ]
    if summary.failed:
        parts.append(click.style(f"✗ {summary.failed} failed", fg="red", bold=True))
    if summary.skipped:
        parts.append(click.style(f"{len(summary.skipped)} suite(s) skipped", fg="yellow"))
    if errors:
        parts.append(click.style(f"{errors} domain error(s)", fg="red", bold=True))
    click.echo(', '.join(parts), err=True)


def _emit(reports: Sequence[DomainReport], fmt: str, out: Optional[str]):
    storage = ReportStorage()
    if out:
        path = storage.save(reports, out, fmt)
        click.echo(click.style(f"✓ Report written to {path}", fg="green"), err=True)
    else:
        click.echo(storage.render(reports, fmt), nl=False)


def _execute(ctx, command: str, config: ExperimentConfig, fmt: str, out: Optional[str]):
    try:
        reports = run_experiment(config)
    except SteklabError as e:
        _error(f"[{e.code}] {e.message}")
        RunHistory().save_run(command, config.to_dict(), 2, out)
        ctx.exit(2)

    _emit(reports, fmt, out)
    _print_summary(reports)
    code = exit_code(reports)
    RunHistory().save_run(command, config.to_dict(), code, out)
    ctx.exit(code)


@cli.command()
@click.option('--domain', '-d', type=click.Choice(DOMAIN_KINDS), default='unit_disk', help='Built-in domain family (default: unit_disk)')
@click.option('--mesh', '-m', 'mesh_path', type=click.Path(exists=True, dir_okay=False), help='Import a .off or .json mesh instead')
@click.option('--radius', type=float, help='Radius of unit_disk / unit_ball')
@click.option('--r-in', type=float, default=0.5, show_default=True, help='Annulus inner radius')
@click.option('--r-out', type=float, default=1.0, show_default=True, help='Annulus outer radius')
@click.option('--circumference', type=float, help='Flat cylinder circumference')
@click.option('--length', type=float, help='Flat cylinder length')
@click.option('--metric', type=click.Choice(['euclidean', 'spherical', 'hyperbolic']), default='euclidean', help='Conformal metric preset')
@click.option('--curvature-scale', type=float, default=1.0, show_default=True, help='Radius of curvature of the metric preset')
@click.option('--density-amplitude', type=float, help='Use delta = 1 + a cos(m theta) with this a')
@click.option('--density-mode', type=int, default=1, show_default=True, help='Mode m of the cosine density')
@click.option('--suite', 'suites', multiple=True, type=click.Choice(SUITES), help='Bound suites to run (default: all)')
@common_options
@click.pass_context
def solve(ctx, domain, mesh_path, radius, r_in, r_out, circumference, length, metric, curvature_scale,
          density_amplitude, density_mode, suites, refinement, k, seed, fmt, out, tol_override, solver):
    """Compute the Steklov spectrum of one domain and check its bounds

    Builds one domain (generated or imported), computes the Steklov spectrum
    and the boundary Laplace spectrum, and evaluates the requested suites.
    """
    if refinement is None:
        refinement = Config().get('refinement', 4)
    if mesh_path:
        entry = {'path': mesh_path}
    elif domain == 'annulus':
        entry = {'kind': domain, 'r_in': r_in, 'r_out': r_out, 'refinement': refinement}
    elif domain == 'flat_cylinder':
        entry = {'kind': domain, 'circumference': circumference or 2.0 * math.pi, 'length': length or 2.0, 'refinement': refinement}
    elif domain == 'star_shaped':
        entry = {'kind': domain, 'radius_samples': [1.0] * 16, 'refinement': refinement}
    else:
        entry = {'kind': domain, 'refinement': refinement}
        if radius is not None:
            entry['radius'] = radius

    data = {
        'experiment': 'solve',
        'domains': [entry],
        'metric': {'kind': metric, 'curvature_scale': curvature_scale},
    }
    if density_amplitude is not None:
        data['density'] = {'kind': 'cosine', 'amplitude': density_amplitude, 'mode': density_mode}
    if suites:
        data['suites'] = list(suites)
    config = _build_config(ctx, data, {'k': k, 'seed': seed, 'tolerance': tol_override, 'solver': solver})
    _execute(ctx, 'solve', config, fmt, out)


@cli.command()
@click.argument('kind', required=False, type=click.Choice(SWEEP_KINDS))
@click.option('--config', '-c', 'config_path', type=click.Path(exists=True, dir_okay=False), help='Experiment config JSON')
@click.option('--count', '-n', type=int, help='Number of sampled domains (planar_sweep)')
@click.option('--workers', '-w', type=int, help='Worker threads for per-domain solves')
@click.option('--levels', help='Comma-separated refinement levels (convergence_study)')
@common_options
@click.pass_context
def sweep(ctx, kind, config_path, count, workers, levels, refinement, k, seed, fmt, out, tol_override, solver):
    """Run an experiment over a family of domains

    KIND is one of the experiment kinds; with --config the kind may come
    from the file instead. Command-line flags override file values.
    """
    if not kind and not config_path:
        _error("Specify an experiment KIND or --config PATH", f"Kinds: {', '.join(SWEEP_KINDS)}")
        ctx.exit(2)
    overrides = {
        'refinement': refinement,
        'k': k,
        'seed': seed,
        'tolerance': tol_override,
        'solver': solver,
        'count': count,
        'workers': workers,
        'levels': _parse_list(levels, int),
    }
    config = _build_config(ctx, {'experiment': kind}, overrides, config_path)
    _execute(ctx, f"sweep:{config.experiment}", config, fmt, out)


@cli.command()
@click.option('--cross-spectrum', help='Comma-separated cross-section eigenvalues; evaluates the closed form only')
@click.option('--half-length', type=float, default=1.0, show_default=True, help='Half-length L of the cylinder')
@click.option('--exhaustive', is_flag=True, help='Treat --cross-spectrum as the complete spectrum')
@click.option('--circumference', type=float, help='Cross-section measure (default: 2 pi when meshed, 1 with --cross-spectrum)')
@click.option('--length', type=float, help='Length of the meshed cylinder (default: 2)')
@common_options
@click.pass_context
def cylinder(ctx, cross_spectrum, half_length, exhaustive, circumference, length,
             refinement, k, seed, fmt, out, tol_override, solver):
    """Flat-cylinder Steklov spectrum: closed form and FEM cross-check

    With --cross-spectrum the closed form is evaluated directly and written
    as a report. Otherwise a meshed flat cylinder is solved and compared with it.
    """
    if cross_spectrum is not None:
        settings = {
            'cross_spectrum': _parse_list(cross_spectrum),
            'half_length': half_length,
            'cross_boundary_measure': circumference or 1.0,
            'exhaustive': exhaustive,
            'k': k or 4,
        }
        try:
            spec = CylinderSpec(
                tuple(settings['cross_spectrum']),
                half_length,
                cross_boundary_measure=settings['cross_boundary_measure'],
                exhaustive=exhaustive,
            )
            report = cylinder_closed_form_report(spec, settings['k'])
        except SteklabError as e:
            _error(f"[{e.code}] {e.message}", "Supply more cross-section eigenvalues or pass --exhaustive")
            RunHistory().save_run('cylinder', settings, 2, out)
            ctx.exit(2)

        _emit([report], fmt, out)
        for index, value in enumerate(report.steklov.raw, 1):
            click.echo(f"{click.style(f'sigma_{index}', fg='cyan')} {value!r}", err=True)
        RunHistory().save_run('cylinder', settings, 0, out)
        ctx.exit(0)

    data = {'experiment': 'cylinder_crosscheck'}
    overrides = {
        'refinement': refinement,
        'k': k,
        'seed': seed,
        'tolerance': tol_override,
        'solver': solver,
        'circumference': circumference,
        'length': length,
    }
    config = _build_config(ctx, data, overrides)
    _execute(ctx, 'cylinder', config, fmt, out)


@cli.command()
@click.option('--levels', help='Comma-separated disk refinement levels (default: 3,4,5)')
@common_options
@click.pass_context
def convergence(ctx, levels, refinement, k, seed, fmt, out, tol_override, solver):
    """Convergence of disk and ball spectra to their closed forms"""
    overrides = {'k': k, 'seed': seed, 'tolerance': tol_override, 'solver': solver, 'levels': _parse_list(levels, int)}
    config = _build_config(ctx, {'experiment': 'convergence_study'}, overrides)
    _execute(ctx, 'convergence', config, fmt, out)


@cli.command()
@click.argument('report_path', type=click.Path(dir_okay=False))
@click.option('--suite', 'suites', multiple=True, type=click.Choice(SUITES), help='Suites to re-check (default: those in the report)')
@click.option('--tol-override', type=float, help='Relative tolerance for pass/fail checks')
@click.option('--out', '-o', type=click.Path(dir_okay=False), help='Write the re-checked report to PATH')
@click.pass_context
def verify(ctx, report_path, suites, tol_override, out):
    """Re-check a saved JSON report

    Bound suites are recomputed from the stored spectra; oracle checks keep
    their recorded verdicts.
    """
    tolerance = tol_override if tol_override is not None else Config().get('tolerance', 0.01)
    storage = ReportStorage()
    try:
        reports = storage.load(report_path)
        for report in reports:
            if report.error is not None:
                continue
            chosen = list(suites) or sorted({check.suite for check in report.checks if check.suite in SUITES}
                                             | {entry['suite'] for entry in report.skipped})
            apply_suites(report, chosen, tolerance)
    except SteklabError as e:
        _error(f"[{e.code}] {e.message}", "verify needs a complete JSON report written by steklab")
        ctx.exit(2)

    if out:
        _emit(reports, 'json', out)
    _print_summary(reports)
    code = exit_code(reports)
    RunHistory().save_run('verify', {'report': report_path, 'tolerance': tolerance}, code, out)
    ctx.exit(code)


@cli.command()
@click.option('--limit', '-n', default=10, help='Number of runs to show (default: 10)')
@click.option('--clear', is_flag=True, help='Clear run history')
def history(limit: int, clear: bool):
    """Show previous steklab runs"""
    runs_history = RunHistory()

    if clear:
        if click.confirm("Clear the run history?"):
            runs_history.clear_runs()
            click.echo(click.style("🗑️  Run history cleared.", fg="green"))
        return

    runs = runs_history.get_runs(limit=limit)

    if not runs:
        click.echo(click.style("📭 No previous runs found.", fg="yellow"))
        return

    for i, entry in enumerate(reversed(runs), 1):
        timestamp = datetime.fromisoformat(entry['timestamp'])
        formatted_time = timestamp.strftime('%Y-%m-%d %H:%M:%S')
        code = entry.get('exit_code')
        colour = 'green' if code == 0 else ('yellow' if code == 1 else 'red')

        click.echo(f"\n{click.style(f'[{i}]', fg='cyan', bold=True)} {click.style(formatted_time, fg='green')}")
        click.echo(f"    {click.style('Command:', fg='blue', bold=True)} {entry.get('command', 'unknown')}")
        click.echo(f"    {click.style('Exit code:', fg='magenta')} {click.style(str(code), fg=colour)}")
        if entry.get('report_path'):
            click.echo(f"    {click.style('Report:', fg='yellow')} {entry['report_path']}")


def main():
    """Console-script entry point"""
    cli()


if __name__ == '__main__':
    main()
