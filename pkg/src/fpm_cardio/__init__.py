import logging
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import click
from rich.console import Console

from .config import parse_config
from .diagnostics import build_table, diagnose
from .errors import ConfigError, FpmError
from .files import (
    read_checkpoint,
    read_points,
    read_polygon,
    write_coo,
    write_partition,
    write_table,
)
from .post import summarize_run
from .problem import build_problem, discretize
from .stepper import run_simulation
from .templates import CV_HEADER, METRICS_HEADER
from .utils import setup_logging
from .voronoi import build_voronoi_partition_2d, domain_area

logger = logging.getLogger("fpm_cardio")
console = Console()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

METRICS_FILE_NAME = "metrics.csv"
CV_FILE_NAME = "cv.csv"
PARTITION_FILE_NAME = "partition.txt"


@dataclass
class CliOptions:
    threads: Optional[int] = None
    deterministic: Optional[bool] = None
    output_dir: Optional[Path] = None
    quiet: bool = False
    debug: bool = False


def _fail(e: Exception, options: CliOptions):
    click.secho(f"Error ({e.__class__.__name__}): {e}", fg="red", err=True)
    if options.debug:
        click.secho(traceback.format_exc(), fg="bright_black", err=True)
    code = EXIT_USAGE if isinstance(e, ConfigError) else EXIT_RUNTIME
    raise click.exceptions.Exit(code)


@click.group(
    help="Meshfree Fragile Points Method solver for the cardiac monodomain equation"
)
@click.option(
    "--threads",
    "-j",
    type=click.IntRange(min=0),
    help="Worker threads (0 = all cores)",
)
@click.option(
    "--deterministic",
    is_flag=True,
    default=None,
    help="Bit-identical assembly independent of the thread count",
)
@click.option(
    "--output-dir",
    "-o",
    type=click.Path(file_okay=False),
    help="Directory for results",
)
@click.option("--quiet", "-q", is_flag=True, help="Only report warnings and errors")
@click.option("--debug", "-d", is_flag=True, help="Turns on debug logging")
@click.pass_context
def cli(ctx, threads, deterministic, output_dir, quiet, debug):
    setup_logging(verbose=debug, quiet=quiet)
    ctx.obj = CliOptions(
        threads=threads,
        deterministic=deterministic,
        output_dir=Path(output_dir) if output_dir else None,
        quiet=quiet,
        debug=debug,
    )


@cli.command(help="Run a full simulation")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False),
    help="Resume from a checkpoint written by an earlier run",
)
@click.pass_obj
def run(options: CliOptions, config_path, checkpoint):
    try:
        config = parse_config(config_path)
        output_dir = options.output_dir or config.resolve(config.output.directory)
        problem = build_problem(
            config, threads=options.threads, deterministic=options.deterministic
        )
        state = read_checkpoint(checkpoint) if checkpoint else None
        result = run_simulation(
            problem, output_dir, checkpoint=state, quiet=options.quiet
        )

        rows = [
            {
                "probe": trace.name,
                "node": trace.node,
                "lat_ms": trace.lat(problem.lat_threshold),
            }
            for trace in result.traces
        ]
        if rows and not options.quiet:
            table = build_table(
                rows, ["probe", "node", "lat_ms"], title=f"t = {result.t:g} ms"
            )
            console.print(table)
        click.echo(f"Results written to {output_dir}")
    except Exception as e:
        _fail(e, options)


@cli.command(help="Build a 2D Voronoi partition from points and a boundary polygon")
@click.argument("points_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("boundary_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def partition(options: CliOptions, points_path, boundary_path):
    try:
        boundary = read_polygon(boundary_path)
        threads = 1 if options.threads is None else options.threads
        result = build_voronoi_partition_2d(
            read_points(points_path), boundary, threads=threads
        )
        result.validate(domain_measure=domain_area(boundary))
        target = options.output_dir or Path(".")
        path = write_partition(target / PARTITION_FILE_NAME, result)
        click.echo(
            f"{result.n} cells, {len(result.internal_facets)} internal and "
            f"{len(result.external_facets)} external facets written to {path}"
        )
    except Exception as e:
        _fail(e, options)


@cli.command(help="LAT, APD90 and conduction velocity tables of a finished run")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def post(options: CliOptions, run_dir):
    try:
        summary = summarize_run(run_dir)
        target = options.output_dir or Path(run_dir)
        write_table(target / METRICS_FILE_NAME, METRICS_HEADER, summary.metrics)
        write_table(target / CV_FILE_NAME, CV_HEADER, summary.cv)
        console.print(build_table(summary.metrics, METRICS_HEADER, title="Probes"))
        console.print(build_table(summary.cv, CV_HEADER, title="Conduction velocity"))
    except Exception as e:
        _fail(e, options)


@cli.command(help="Assemble the operators and check them without time stepping")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--no-eigen", is_flag=True, help="Skip the smallest eigenvalue")
@click.option("--export", is_flag=True, help="Also write C and K as coordinate lists")
@click.pass_obj
def check(options: CliOptions, config_path, no_eigen, export):
    try:
        config = parse_config(config_path)
        discretization = discretize(
            config, threads=options.threads, deterministic=options.deterministic
        )
        diagnostics = diagnose(
            discretization.partition, discretization.operators, eigenvalue=not no_eigen
        )
        console.print(diagnostics.to_tree())
        if export:
            target = options.output_dir or Path(".")
            write_coo(target / "C.txt", discretization.operators.C)
            write_coo(target / "K.txt", discretization.operators.K)
        if not diagnostics.passed:
            raise FpmError("operator checks failed")
    except Exception as e:
        _fail(e, options)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code: 0 on success, 1 for
    usage and configuration errors, 2 for runtime failures."""
    try:
        result = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="fpm-cardio",
            standalone_mode=False,
        )
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_RUNTIME
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


def main():
    sys.exit(cli_main())
