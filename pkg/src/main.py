from enum import Enum
from functools import wraps
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src.errors import ConfigError, InputError, RefusalError
from src.experiment import ExperimentConfig, atomic_write, load_config, write_table
from src.logger import logger
from src.tools.harness.tool.adversary import AdversaryKind, AdversarySpec
from src.tools.harness.tool.instances import builtin_corpus, compare_row_family, gen_intersection_tight, gen_rank_one_tight
from src.tools.harness.tool.properties import property_suite
from src.tools.harness.tool.simulate import CSV_COLUMNS, SimulationReport, simulate as run_simulation
from src.tools.mechanism.tool.mechanism import REVENUE_COLUMNS, revenue_stats
from src.tools.policy.tool.policy import PolicyKind, PolicySpec, ThresholdPolicy
from src.tools.weights.tool.weights import Estimator

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_PROPERTY = 0, 1, 2, 3
PROPERTY_COLUMNS = ["instance", "policy", "property", "passed", "checked", "witness"]


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


app = typer.Typer(help="Matroid prophet inequality experiments.", no_args_is_help=True)
console = Console()


def exit_codes(command):
    """Map domain errors to the documented exit codes."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ConfigError, ValidationError, InputError) as err:
            logger.error(f"{command.__name__}: {err}")
            console.print(f"[bold red]Configuration error:[/bold red] {err}")
            raise typer.Exit(EXIT_CONFIG)
        except RefusalError as err:
            logger.error(f"{command.__name__}: {err}")
            console.print(f"[bold yellow]Refused:[/bold yellow] {err}")
            raise typer.Exit(EXIT_REFUSED)

    return wrapper


def _print_rows(title: str, rows: List[dict], columns: List[str]) -> None:
    table = Table(title=title)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*("" if row.get(c) is None else f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c]) for c in columns))
    console.print(table)


def _report_rows(reports: List[SimulationReport], fmt: str) -> List[dict]:
    return [r.row() if fmt == "csv" else r.model_dump(exclude_none=True) for r in reports]


@app.command()
@exit_codes
def simulate(
    config: Path = typer.Option(..., "--config", help="YAML experiment file."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
    fmt: Optional[OutputFormat] = typer.Option(None, "--format", help="Result table format."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker processes."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides the config seed."),
):
    """Run gambler against prophet on one instance and write a SimulationReport table."""
    cfg = load_config(config, seed=seed, workers=workers)
    cfg = _with_output(cfg, out, fmt)
    if cfg.instance is None:
        raise ConfigError("simulate needs an 'instance' entry")
    instance = cfg.instance.build()
    policy = ThresholdPolicy(cfg.policy, instance.matroids, instance.profile)
    report = run_simulation(instance, policy, cfg.adversary, cfg.trials, cfg.seed, cfg.mode, cfg.worker_count, progress=True)
    path = write_table(cfg.output.dir, cfg.output.name, _report_rows([report], cfg.output.format), CSV_COLUMNS, cfg.output.format)
    _print_rows(f"simulate {instance.name}", [report.row()], CSV_COLUMNS)
    console.print(f"[green]Wrote {path}[/green]")


@app.command()
@exit_codes
def verify(
    config: Optional[Path] = typer.Option(None, "--config", help="YAML experiment file; the builtin corpus when omitted."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
    fmt: Optional[OutputFormat] = typer.Option(None, "--format", help="Result table format."),
    mutate_threshold: Optional[float] = typer.Option(None, "--mutate-threshold", help="Scale every threshold (mutation test)."),
):
    """Run the property suite over a corpus; exit 3 when any property fails."""
    cfg = load_config(config) if config else ExperimentConfig(seed=0, output={"name": "properties"})
    cfg = _with_output(cfg, out, fmt)
    instances = [source.build() for source in cfg.corpus] if cfg.corpus is not None else builtin_corpus()
    if not instances:
        raise ConfigError("The verification corpus is empty")

    rows, failed = [], False
    for instance in instances:
        kind = PolicyKind.MATROID_BALANCED if instance.p == 1 else PolicyKind.INTERSECTION_BALANCED
        spec = PolicySpec(kind=kind, estimator=Estimator(), threshold_scale=mutate_threshold or 1.0)
        report = property_suite(instance, ThresholdPolicy(spec, instance.matroids, instance.profile), cfg.depth)
        failed = failed or not report.passed
        for result in report.results:
            rows.append({"instance": report.instance, "policy": report.policy, "property": result.name, **result.model_dump(exclude={"name"})})

    path = write_table(cfg.output.dir, cfg.output.name, rows, PROPERTY_COLUMNS, cfg.output.format)
    _print_rows("verify", [r for r in rows if not r["passed"]] or rows, PROPERTY_COLUMNS)
    console.print(f"[green]Wrote {path}[/green]")
    if failed:
        raise typer.Exit(EXIT_PROPERTY)


@app.command()
@exit_codes
def lowerbound(
    rank1: Optional[int] = typer.Option(None, "--rank1", help="n of the rank-one tight instance."),
    intersection: Optional[int] = typer.Option(None, "--intersection", help="Prime q of the intersection tight instance."),
    trials: int = typer.Option(100_000, "--trials", help="Monte Carlo trials when exact enumeration is out of reach."),
    seed: int = typer.Option(0, "--seed"),
    workers: int = typer.Option(1, "--workers"),
    out: Path = typer.Option(Path("results"), "--out"),
    fmt: OutputFormat = typer.Option(OutputFormat.CSV, "--format", help="Result table format."),
):
    """Tabulate gambler and prophet on the tight instances."""
    if (rank1 is None) == (intersection is None):
        raise ConfigError("Give exactly one of --rank1 or --intersection")
    if rank1 is not None:
        instance = gen_rank_one_tight(rank1)
        policy = ThresholdPolicy(PolicySpec(kind=PolicyKind.RANK_ONE_HALF_MAX), instance.matroids, instance.profile)
        report = run_simulation(instance, policy, AdversarySpec(kind=AdversaryKind.FIXED_ORDER), mode="exact", seed=seed)
    else:
        instance = gen_intersection_tight(intersection)
        family = compare_row_family(instance, intersection)
        described = "subsets of one row" if family.equal else f"not the row family, witness {sorted(family.witness or ())}"
        logger.info(f"{instance.name}: feasible family is {described}")
        console.print(f"Feasible family: {described} ({instance.n // intersection} rows, {instance.p} matroids)")
        exact = instance.profile.outcome_count() <= 2**10
        estimator = Estimator() if exact else Estimator.monte_carlo(trials=2_000, seed=seed)
        policy = ThresholdPolicy(PolicySpec(kind=PolicyKind.INTERSECTION_BALANCED, estimator=estimator), instance.matroids, instance.profile)
        mode = "exact" if exact else "monteCarlo"
        report = run_simulation(instance, policy, AdversarySpec(), trials, seed, mode, workers, progress=True)
    rows = _report_rows([report], fmt.value)
    path = write_table(out, f"lowerbound-{instance.name}", rows, CSV_COLUMNS, fmt.value)
    _print_rows(f"lowerbound {instance.name}", [report.row()], CSV_COLUMNS)
    console.print(f"[green]Wrote {path}[/green]")


@app.command()
@exit_codes
def mechanism(
    config: Optional[Path] = typer.Option(None, "--config", help="YAML experiment file; the 2x2 uniform instance when omitted."),
    out: Optional[Path] = typer.Option(None, "--out"),
    fmt: Optional[OutputFormat] = typer.Option(None, "--format", help="Result table format."),
    workers: Optional[int] = typer.Option(None, "--workers"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    trials: Optional[int] = typer.Option(None, "--trials"),
):
    """Estimate revenue and virtual surplus of both posted-price mechanisms."""
    if config:
        cfg = load_config(config, seed=seed, workers=workers, trials=trials)
    else:
        cfg = ExperimentConfig(seed=seed or 0, workers=workers, trials=trials or 10_000, output={"name": "revenue"})
    cfg = _with_output(cfg, out, fmt)
    instance = (cfg.bmumd or _default_bmumd()).build()
    report = revenue_stats(instance, cfg.trials, cfg.seed, workers=cfg.worker_count, progress=True)
    rows = [report.row() if cfg.output.format == "csv" else report.model_dump()]
    path = write_table(cfg.output.dir, cfg.output.name, rows, REVENUE_COLUMNS, cfg.output.format)
    _print_rows(f"mechanism {instance.name}", [report.row()], REVENUE_COLUMNS[:4] + ["trials"])
    console.print(f"[green]Wrote {path}[/green]")


def _default_bmumd():
    from src.experiment import BMUMDSource

    return BMUMDSource()


def _with_output(cfg: ExperimentConfig, out: Optional[Path], fmt: Optional[OutputFormat]) -> ExperimentConfig:
    updates = {k: v for k, v in {"dir": str(out) if out else None, "format": fmt.value if fmt else None}.items() if v is not None}
    if not updates:
        return cfg
    output = cfg.output.model_validate({**cfg.output.model_dump(), **updates})
    return cfg.model_copy(update={"output": output})


if __name__ == "__main__":
    app()
