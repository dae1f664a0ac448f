import logging
from pathlib import Path
from typing import Optional

import typer
from pydantic import ValidationError
from typing_extensions import Annotated

from . import __version__
from .harness import EXIT_INVALID_CONFIG, ExperimentConfig, Mode, RunResult, run

app = typer.Typer(help="Zero-energy states and ground energies of random projector chains")

logger = logging.getLogger(__name__)

SUMMARY_ROW_LIMIT = 40


def version_callback(value: bool):
    if value:
        typer.echo(f"frustra version: {__version__}")
        raise typer.Exit()


@app.callback()
def callback(
    version: Annotated[
        bool, typer.Option("--version", callback=version_callback, is_eager=True)
    ] = False,
    log_level: Annotated[str, typer.Option(help="Logging level (DEBUG, INFO, WARNING, ERROR)")] = "WARNING",
):
    """
    frustra: counting, exact construction and TEBD search of zero-energy states on qudit chains
    """
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.WARNING),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


def parse_int_list(text: str) -> list[int]:
    """'2,4,8' -> [2, 4, 8]"""
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated integers, got {text!r}")


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated numbers, got {text!r}")


def expand_seeds(seed: int, seeds: Optional[int]) -> list[int]:
    """--seeds K means K consecutive master seeds starting at --seed."""
    if seeds is None:
        return [seed]
    if seeds < 1:
        raise typer.BadParameter(f"--seeds must be >= 1, got {seeds}")
    return list(range(seed, seed + seeds))


def _execute(**fields) -> None:
    from rich.console import Console
    from rich.progress import Progress
    from rich.table import Table

    console = Console()
    try:
        config = ExperimentConfig(**fields)
    except ValidationError as e:
        console.print(f"[red]Invalid configuration:[/] {e}")
        raise typer.Exit(code=EXIT_INVALID_CONFIG)

    try:
        with Progress(console=console, transient=True) as progress:
            task = progress.add_task(f"[cyan]Running {config.mode.value}...", total=config.cell_count)
            result: RunResult = run(config, on_cell=lambda: progress.advance(task))
    except OSError as e:
        console.print(f"[red]Cannot write output:[/] {e}")
        raise typer.Exit(code=EXIT_INVALID_CONFIG)

    if result.summary:
        table = Table(title=f"{config.mode.value} results")
        for column in result.columns:
            table.add_column(column, justify="right")
        for row in result.summary[:SUMMARY_ROW_LIMIT]:
            table.add_row(*[_display(v) for v in row])
        console.print(table)
        if len(result.summary) > SUMMARY_ROW_LIMIT:
            console.print(f"[dim]... {len(result.summary) - SUMMARY_ROW_LIMIT} more rows in the output files[/dim]")
    if result.message:
        console.print(result.message)
    for path in result.artifacts:
        console.print(f"[dim]wrote {path}[/dim]")
    if result.exit_code:
        console.print("[red]Verification failed.[/]")
        raise typer.Exit(code=result.exit_code)


def _display(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


DOption = Annotated[Optional[int], typer.Option("--d", help="Local dimension")]
ROption = Annotated[Optional[int], typer.Option("--r", help="Projector rank per bond")]
NOption = Annotated[Optional[int], typer.Option("--n", help="Chain length (n_max for count)")]
SeedOption = Annotated[int, typer.Option("--seed", help="Master seed")]
SeedsOption = Annotated[Optional[int], typer.Option("--seeds", help="Number of consecutive seeds starting at --seed")]
FieldOption = Annotated[str, typer.Option("--field", help="Random entries: complex or real")]
FormatOption = Annotated[str, typer.Option("--format", help="Output format: csv or json")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output directory (default $FRUSTRA_OUTPUT_DIR or ./frustra-out)")]
WorkersOption = Annotated[int, typer.Option("--workers", help="Worker processes for independent cells")]
RankTolOption = Annotated[float, typer.Option("--rank-tol", help="Relative singular value threshold for kernels")]


@app.command()
def count(d: DOption = None, r: ROption = None, n: NOption = None, out: OutOption = None, format: FormatOption = "csv"):
    """
    Solution counts D_0..D_n, characteristic roots and regime
    """
    _execute(mode=Mode.COUNT, d=d, r=r, n=n, out=out, format=format)


@app.command("phase-diagram")
def phase_diagram(
    d_max: Annotated[int, typer.Option("--d-max", help="Largest local dimension in the grid")] = 6,
    out: OutOption = None,
    format: FormatOption = "csv",
):
    """
    Regime of every (d, r) with 2 <= d <= d-max
    """
    _execute(mode=Mode.PHASE_DIAGRAM, d_max=d_max, out=out, format=format)


@app.command("solve-exact")
def solve_exact(
    d: DOption = None,
    r: ROption = None,
    n: NOption = None,
    seed: SeedOption = 0,
    seeds: SeedsOption = None,
    rank_tol: RankTolOption = 1e-10,
    field: FieldOption = "complex",
    out: OutOption = None,
    format: FormatOption = "csv",
    workers: WorkersOption = 1,
):
    """
    Build the zero-energy solution space by kernel propagation
    """
    _execute(
        mode=Mode.SOLVE_EXACT, d=d, r=r, n=n, seeds=expand_seeds(seed, seeds), rank_tol=rank_tol,
        field=field, out=out, format=format, workers=workers,
    )


@app.command()
def product(
    d: DOption = None,
    r: ROption = None,
    n: NOption = None,
    seed: SeedOption = 0,
    seeds: SeedsOption = None,
    field: FieldOption = "complex",
    out: OutOption = None,
    format: FormatOption = "csv",
    workers: WorkersOption = 1,
):
    """
    Zero-energy product state for r < d
    """
    _execute(
        mode=Mode.PRODUCT, d=d, r=r, n=n, seeds=expand_seeds(seed, seeds), field=field,
        out=out, format=format, workers=workers,
    )


@app.command()
def tebd(
    d: DOption = None,
    r: ROption = None,
    n: NOption = None,
    chi: Annotated[str, typer.Option("--chi", help="Comma-separated bond dimensions")] = "8",
    seed: SeedOption = 0,
    seeds: SeedsOption = None,
    tau_schedule: Annotated[str, typer.Option("--tau-schedule", help="Comma-separated imaginary time steps")] = "0.5,0.1,0.02",
    max_sweeps: Annotated[int, typer.Option("--max-sweeps", help="Sweep limit per run")] = 5000,
    stop_tol: Annotated[float, typer.Option("--stop-tol", help="Relative energy change that counts as stalled")] = 1e-9,
    second_order: Annotated[bool, typer.Option("--second-order", help="Symmetric Trotter splitting")] = False,
    field: FieldOption = "complex",
    out: OutOption = None,
    format: FormatOption = "csv",
    workers: WorkersOption = 1,
):
    """
    Imaginary-time TEBD ground state search, one trace per (chi, seed)
    """
    _execute(
        mode=Mode.TEBD, d=d, r=r, n=n, chi_list=parse_int_list(chi), seeds=expand_seeds(seed, seeds),
        taus=parse_float_list(tau_schedule), max_sweeps=max_sweeps, stop_tol=stop_tol,
        second_order=second_order, field=field, out=out, format=format, workers=workers,
    )


@app.command("oracle-check")
def oracle_check(
    d: DOption = None,
    r: ROption = None,
    n: NOption = None,
    seed: SeedOption = 0,
    seeds: SeedsOption = None,
    rank_tol: RankTolOption = 1e-10,
    field: FieldOption = "complex",
    out: OutOption = None,
    format: FormatOption = "csv",
    workers: WorkersOption = 1,
):
    """
    Compare propagated counts with the dense kernel dimension
    """
    _execute(
        mode=Mode.ORACLE_CHECK, d=d, r=r, n=n, seeds=expand_seeds(seed, seeds), rank_tol=rank_tol,
        field=field, out=out, format=format, workers=workers,
    )


@app.command("appendix-verify")
def appendix_verify(
    d: DOption = None,
    r: ROption = None,
    n: NOption = None,
    rank_tol: RankTolOption = 1e-10,
    out: OutOption = None,
    format: FormatOption = "csv",
):
    """
    Check the structured construction step by step
    """
    _execute(mode=Mode.APPENDIX_VERIFY, d=d, r=r, n=n, rank_tol=rank_tol, out=out, format=format)


if __name__ == "__main__":
    app()
