"""
Command-line interface for toric Bernstein approximation.

Usage:
    toric-bernstein validate --config simplex.yaml
    toric-bernstein approx --config run.yaml --N 2,4,8 --f "x1^2" --out approx.csv
    toric-bernstein converge --config run.yaml --N 64,128,256,512 --out converge.csv
    toric-bernstein riemann --config run.yaml --N 16,32,64,128
    toric-bernstein identities --config run.yaml
    toric-bernstein norming --config run.yaml --N 2 --cache norming.json
"""

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np
import pandas as pd
from scipy.special import gammaln

from . import __version__
from .exceptions import ConfigError, ToricBernsteinError

logger = logging.getLogger(__name__)

CSV_FORMAT = "%.17g"
DONALDSON_TOL = 1e-7
CURVATURE_TOL = 1e-6
DENOMINATOR_TOL = 1e-9


@click.group()
@click.version_option(version=__version__)
@click.option('--verbose', '-v', is_flag=True, help='Log library progress to stderr')
def main(verbose: bool):
    """Toric Bernstein - Bergman-Bernstein approximation on Delzant polytopes."""
    if verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s")


def run_options(func):
    """Options shared by every command; flags override the config document."""
    options = [
        click.option('--config', '-c', 'config_path', default=None,
                     help='YAML/JSON run config ("-" reads stdin)'),
        click.option('--N', 'n_list', default=None, help='Comma-separated dilations, e.g. 2,4,8'),
        click.option('--f', 'f_text', default=None, help='Test function, e.g. "sin(pi*x1)"'),
        click.option('--grid', default=None, help='Grid points per axis, e.g. 11 or 11,11'),
        click.option('--margin', type=float, default=None,
                     help='Interior margin as a fraction of the diameter'),
        click.option('--quad-order', type=int, default=None, help='Gauss points per direction'),
        click.option('--quad-tol', type=float, default=None, help='Relative quadrature tolerance'),
        click.option('--quad-levels', type=int, default=None, help='Maximum refinement levels'),
        click.option('--out', '-o', default=None, help='Output path (stdout when omitted)'),
        click.option('--cache', default=None, help='Norming table JSON cache'),
        click.option('--summary', 'summary_path', default=None,
                     help='JSON summary path (defaults to --out with a .json suffix)'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def handle_errors(func):
    """Turn package errors into an error line and the matching exit code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ToricBernsteinError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(exc.exit_code)
    return wrapper


def _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache):
    from .config import load_config, parse_int_list

    counts = parse_int_list(grid, "grid")
    if counts is not None and len(counts) == 1:
        counts = counts[0]
    return load_config(config_path).with_overrides(
        N=parse_int_list(n_list, "N"),
        f=f_text,
        grid=counts,
        margin=margin,
        quad_order=quad_order,
        quad_tol=quad_tol,
        quad_levels=quad_levels,
        out=out,
        cache=cache,
    )


def _emit_frame(frame: pd.DataFrame, out: Optional[str]) -> None:
    text = frame.to_csv(index=False, float_format=CSV_FORMAT, lineterminator="\n", na_rep="")
    if out:
        with open(out, 'w', newline='') as f:
            f.write(text)
        click.echo(f"Wrote {len(frame)} rows to {out}", err=True)
    else:
        click.echo(text, nl=False)


def _emit_summary(summary: dict, out: Optional[str], summary_path: Optional[str]) -> None:
    text = json.dumps(summary, indent=2) + "\n"
    path = summary_path or (str(Path(out).with_suffix(".json")) if out else None)
    if path:
        with open(path, 'w', newline='') as f:
            f.write(text)
        click.echo(f"Summary written to {path}", err=True)
    else:
        click.echo(text, nl=False, err=True)


def _cache_path(cache: Optional[str], N: int, several: bool) -> Optional[Path]:
    if not cache:
        return None
    if "{N}" in cache:
        return Path(cache.format(N=N))
    path = Path(cache)
    return path.with_name(f"{path.stem}_N{N}{path.suffix}") if several else path


def _evaluator(metric, N: int, spec, cfg):
    """Build an evaluator, reusing or filling the norming table cache."""
    from .bernstein import BernsteinEvaluator, NormingTable

    path = _cache_path(cfg.cache, N, len(cfg.N) > 1)
    if path is not None and path.is_file():
        try:
            table = NormingTable.from_json(path, metric, N)
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot use norming cache {path}: {exc}") from exc
        click.echo(f"Loaded norming table N={N} from {path}", err=True)
        return BernsteinEvaluator(metric, table, cfg.truncation)
    evaluator = BernsteinEvaluator.build(metric, N, spec, truncation=cfg.truncation)
    if path is not None:
        evaluator.table.to_json(path)
    return evaluator


def _point_columns(points: np.ndarray) -> dict:
    return {f"x{j + 1}": points[:, j] for j in range(points.shape[1])}


@main.command()
@run_options
@handle_errors
def validate(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
             out, cache, summary_path):
    """Validate the polytope and the convexity of the metric."""
    from .polytope import delzant_determinants

    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()

    click.echo(f"Dimension: {polytope.dim}")
    click.echo(f"Facets ({polytope.n_facets}):")
    for r, facet in enumerate(polytope.facets):
        click.echo(f"  {r}: normal {list(facet.normal)}  lambda {facet.offset}")
    click.echo(f"Vertices ({len(polytope.vertices)}), with incident-normal determinants:")
    for vertex, det in delzant_determinants(polytope):
        click.echo(f"  ({', '.join(str(c) for c in vertex)})  det {det:+d}")

    metric = cfg.build_metric(polytope)
    counts = cfg.grid if isinstance(cfg.grid, int) else max(cfg.grid)
    report = metric.check_convexity(max(counts, 4))
    click.echo(f"Minimum Hessian eigenvalue: {report.min_eigenvalue:.6g} "
               f"at x = {list(report.argmin)} ({report.n_points} points)")
    if summary_path:
        _emit_summary({"checks": [{
            "name": "convexity",
            "residual": report.min_eigenvalue,
            "tolerance": 0.0,
            "pass": report.passed,
        }]}, None, summary_path)
    if not report.passed:
        x = ", ".join(f"{c:.3g}" for c in report.argmin)
        click.echo(f"Error: convexity failure at x ≈ ({x})", err=True)
        sys.exit(1)
    click.echo("Polytope is Delzant and the metric is convex.")


@main.command()
@run_options
@handle_errors
def approx(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
           out, cache, summary_path):
    """Evaluate B_N f over the grid and the vertices."""
    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()
    metric = cfg.build_metric(polytope)
    f = cfg.test_function(polytope.dim)
    spec = cfg.quad_spec(polytope.dim)

    points = cfg.evaluation_points(polytope)
    if cfg.x is not None:
        margin_distance = cfg.margin * polytope.diameter
        keep = polytope.facet_distance(points) >= margin_distance
        for point in points[~keep]:
            click.echo(f"Skipping x = {point.tolist()}: closer than {margin_distance:.3g} to the boundary",
                       err=True)
        points = points[keep]
    else:
        points = np.vstack([points, polytope.vertex_array])

    exact = f.evaluate(points)
    frames = []
    for N in cfg.N:
        evaluator = _evaluator(metric, N, spec, cfg)
        values = evaluator.evaluate(f, points)
        frames.append(pd.DataFrame({
            "N": N,
            **_point_columns(points),
            "f": exact,
            "B": values,
            "abs_err": np.abs(values - exact),
        }))
        click.echo(f"N={N}: max abs_err {np.max(np.abs(values - exact)):.3e}", err=True)
    _emit_frame(pd.concat(frames, ignore_index=True), cfg.out)


@main.command()
@run_options
@handle_errors
def converge(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
             out, cache, summary_path):
    """Residuals of B_N f against its 1/N expansion with 0, 1 (and 2) corrections."""
    from .asymptotics import bernstein_convergence

    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()
    metric = cfg.build_metric(polytope)
    f = cfg.test_function(polytope.dim)
    spec = cfg.quad_spec(polytope.dim)
    points = cfg.evaluation_points(polytope)

    evaluators = {}

    def factory(N):
        if N not in evaluators:
            evaluators[N] = _evaluator(metric, N, spec, cfg)
        return evaluators[N]

    max_corrections = 2 if (polytope.is_interval() and metric.is_canonical) else 1
    frames, orders = [], []
    for point in points:
        for corrections in range(max_corrections + 1):
            report = bernstein_convergence(metric, f, point, cfg.N, corrections, spec, factory=factory)
            report.meta.update({f"x{j + 1}": float(c) for j, c in enumerate(point)})
            report.meta["corrections"] = corrections
            report.name = f"bernstein[{corrections}] at x={[round(float(c), 12) for c in point]}"
            frames.append(report.to_frame())
            orders.append(report.summary())
    _emit_frame(pd.concat(frames, ignore_index=True), cfg.out)
    _emit_summary({"checks": [], "orders": orders}, cfg.out, summary_path)


@main.command()
@run_options
@handle_errors
def riemann(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
            out, cache, summary_path):
    """Lattice sums of f against the two-term Euler-Maclaurin formula."""
    from .asymptotics import riemann_convergence

    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()
    f = cfg.test_function(polytope.dim)
    report = riemann_convergence(polytope, f, cfg.N, cfg.quad_spec(polytope.dim))
    _emit_frame(report.to_frame(), cfg.out)
    _emit_summary({"checks": [], "orders": [report.summary()]}, cfg.out, summary_path)


def _constant_curvature(metric) -> Optional[float]:
    """Known constant scalar curvature of canonical simplex and cube metrics."""
    from .polytope import unit_cube

    if not metric.is_canonical:
        return None
    m = metric.dim
    if metric.polytope.is_standard_simplex():
        return float(m * (m + 1))
    if set(metric.polytope.facets) == set(unit_cube(m).facets):
        return float(2 * m)
    return None


@main.command()
@run_options
@handle_errors
def identities(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
               out, cache, summary_path):
    """Check the integral and pointwise identities; exit 1 if any fails."""
    from .asymptotics import donaldson_residual, integrated_denominator, integrated_numerator, riemann_sum
    from .polytope import lattice_points

    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()
    metric = cfg.build_metric(polytope)
    f = cfg.test_function(polytope.dim)
    spec = cfg.quad_spec(polytope.dim)
    points = cfg.evaluation_points(polytope)
    integral_tol = 10.0 * spec.tol
    checks = []

    def record(name, residual, tolerance):
        passed = bool(residual <= tolerance)
        checks.append({"name": name, "residual": float(residual), "tolerance": float(tolerance), "pass": passed})
        click.echo(f"{'PASS' if passed else 'FAIL'}  {name}: residual {residual:.3e} (tol {tolerance:.1e})",
                   err=True)

    record("donaldson", donaldson_residual(metric, f, spec), DONALDSON_TOL)

    expected = _constant_curvature(metric)
    if expected is not None:
        curvature = metric.scalar_curvature(points)
        record(f"curvature S={expected:g}", np.max(np.abs(curvature - expected)), CURVATURE_TOL)

    m = polytope.dim
    for N in cfg.N:
        evaluator = _evaluator(metric, N, spec, cfg)
        if metric.is_fubini_study:
            oracle = np.exp(gammaln(N + m + 1.0) - gammaln(N + 1.0))
            error = np.max(np.abs(evaluator.denominator(points) - oracle)) / oracle
            record(f"denominator N={N}", error, DENOMINATOR_TOL)
        count = len(lattice_points(polytope, N))
        record(f"integrated denominator N={N}",
               abs(integrated_denominator(evaluator, spec) - count) / count, integral_tol)
        lattice_sum = riemann_sum(polytope, f, N)
        record(f"integrated numerator N={N}",
               abs(integrated_numerator(evaluator, f, spec) - lattice_sum) / max(1.0, abs(lattice_sum)),
               integral_tol)

    summary = {"checks": checks, "orders": []}
    text = json.dumps(summary, indent=2) + "\n"
    target = cfg.out or summary_path
    if target:
        with open(target, 'w', newline='') as fh:
            fh.write(text)
        click.echo(f"Report written to {target}", err=True)
    else:
        click.echo(text, nl=False)
    if not all(check["pass"] for check in checks):
        sys.exit(1)


@main.command()
@run_options
@handle_errors
def norming(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels,
            out, cache, summary_path):
    """Norming constants by quadrature, next to the closed form where it exists."""
    from .bernstein import build_norming_table, norming_closed_form_batch

    cfg = _load(config_path, n_list, f_text, grid, margin, quad_order, quad_tol, quad_levels, out, cache)
    polytope = cfg.build_polytope()
    metric = cfg.build_metric(polytope)
    spec = cfg.quad_spec(polytope.dim)

    frames = []
    for N in cfg.N:
        table = build_norming_table(metric, N, spec, method="quadrature")
        path = _cache_path(cfg.cache, N, len(cfg.N) > 1)
        if path is not None:
            table.to_json(path)
        frame = table.to_frame().rename(columns={"logQ": "logQ_quadrature"})
        if metric.is_fubini_study:
            closed = norming_closed_form_batch(N, table.lattice.points, polytope.dim)
            frame["logQ_closed_form"] = closed
            frame["rel_err"] = np.abs(table.log_q - closed) / np.abs(closed)
        else:
            frame["logQ_closed_form"] = np.nan
            frame["rel_err"] = np.nan
        frame.insert(0, "N", N)
        frames.append(frame[["N"] + [c for c in frame.columns if c.startswith("alpha")]
                            + ["logQ_quadrature", "logQ_closed_form", "rel_err", "method"]])
        click.echo(f"N={N}: {len(table)} norming constants", err=True)
    _emit_frame(pd.concat(frames, ignore_index=True), cfg.out)


if __name__ == '__main__':
    main()
