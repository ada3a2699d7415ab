from __future__ import annotations

from pathlib import Path
from typing import Annotated

import typer
from trogon.typer import init_tui

from ..cache import cache
from ..errors import EventBudgetExceeded, MigrasimError, MissingConfigFile
from ..loaders import MigrasimPaths, init_cache, init_config, read_scenario, resolve_out_dir, write_outputs
from ..migration import plan_precopy
from ..runner import check_plans, run_scenario, validate_scenario
from ..scenario import render_scenario
from ..ui import (
    Markdown,
    console,
    err_console,
    feasibility_table,
    migrations_table,
    precopy_table,
    setup_logging,
    summary_line,
)
from .cli_utils import (
    ScenarioArgument,
    parse_bandwidth,
    parse_byte_rate,
    parse_size,
    path_autocomplete,
    with_error_handling,
)
from .report import print_report

app = typer.Typer(no_args_is_help=True)
init_tui(app)

OutDirOption = Annotated[
    Path | None,
    typer.Option(
        help="Where the CSV (and trace) files go. Defaults to $MIGRASIM_OUT_DIR, the config `out_dir`, or ./out.",
        autocompletion=path_autocomplete(dirs_only=True),
        show_default=False,
    ),
]


@app.callback()
def common(
    ctx: typer.Context,
    config_filename: str | None = typer.Option(
        None,
        "--config",
        "-c",
        envvar="MIGRASIM_CONFIG_FILENAME",
        help="Name of the migrasim config file, relative to the working directory.",
        autocompletion=path_autocomplete(),
        show_default=False,
        show_envvar=False,
    ),
    debug: bool = typer.Option(False, help="Show debug logs"),
):
    """
    Define root options, and initialize the cache.
    """
    setup_logging(debug)
    try:
        paths = MigrasimPaths(Path("."), config_filename, init_command=ctx.invoked_subcommand == "init")
        init_cache(paths)
    except MissingConfigFile as e:
        err_console.print(
            "[bold red]ERROR :[/] the config file you asked for does not exist. "
            "Create it with [magenta]migrasim init[/], or drop the [magenta]--config[/] option.\n",
            f"Missing file: [blue]{'[/] or [blue]'.join(map(str, e.paths))}[/]",
        )
        raise SystemExit(1) from None
    except MigrasimError as e:
        err_console.print(f"[bold red]ERROR :[/] {e}", highlight=False)
        raise SystemExit(e.exit_code) from None


@app.command()
def init():
    """
    Create a config file with the default constants.
    """
    target = cache.paths.init_target
    if init_config(target):
        console.print(f"Created [blue]{target}[/]. Edit it, then run a scenario with [magenta]migrasim run[/]!")
    else:
        console.print(f"[blue]{target}[/] already exists, nothing to do.")


@app.command()
@with_error_handling
def run(
    path: ScenarioArgument,
    out_dir: OutDirOption = None,
    trace: Annotated[bool, typer.Option(help="Also write trace.log.")] = False,
    validate_only: Annotated[
        bool, typer.Option(help="Only parse the scenario and check every migration against the requirements.")
    ] = False,
    seed: Annotated[int | None, typer.Option(help="Override the scenario seed.", show_default=False)] = None,
):
    """
    Run a scenario and write migrations.csv, sessions.csv and requests.csv.
    """
    scenario = read_scenario(path, cache.config)
    if validate_only:
        checks = validate_scenario(scenario, scenario.constants(cache.constants))
        console.print(f"[green]{scenario.name}[/] is valid, {len(checks)} feasible migration(s).")
        return

    output = run_scenario(scenario, cache.constants, seed)
    if output.error is not None and not isinstance(output.error, EventBudgetExceeded):
        raise output.error

    written = write_outputs(output, resolve_out_dir(out_dir, cache.config), trace)
    if output.outcomes:
        console.print(migrations_table(output.outcomes))
    console.print(summary_line("migrations", len(output.outcomes)))
    console.print(Markdown("Wrote " + ", ".join(f"`{file}`" for file in written)))
    if output.error is not None:
        raise output.error


@app.command()
@with_error_handling
def check(path: ScenarioArgument):
    """
    Show the requirements report of every migration of a scenario.
    """
    scenario = read_scenario(path, cache.config)
    checks = check_plans(scenario, scenario.constants(cache.constants))
    if not checks:
        console.print(f"{scenario.name} commands no migration.")
        return
    console.print(feasibility_table(checks))
    validate_scenario(scenario, scenario.constants(cache.constants))


@app.command()
@with_error_handling
def precopy(
    mem: Annotated[float, typer.Option(parser=parse_size, metavar="SIZE", help="VM memory, e.g. 480MiB.")],
    bw: Annotated[float, typer.Option(parser=parse_bandwidth, metavar="RATE", help="Link rate, e.g. 1Gbps.")],
    dirty: Annotated[
        float | None, typer.Option(parser=parse_byte_rate, metavar="RATE", help="Dirty page rate, e.g. 16MiB/s.")
    ] = None,
    threshold: Annotated[
        float | None, typer.Option(parser=parse_size, metavar="SIZE", help="Stop threshold (config default if unset).")
    ] = None,
    max_rounds: Annotated[int | None, typer.Option(min=1, help="Round cap (config default if unset).")] = None,
    cpu: Annotated[
        float | None, typer.Option(parser=parse_size, metavar="SIZE", help="CPU state size (config default if unset).")
    ] = None,
):
    """
    Closed-form pre-copy plan at a constant rate: rounds, residual, estimated downtime and total time.
    """
    constants = cache.constants
    rate = bw / 8
    try:
        plan = plan_precopy(
            mem,
            rate,
            dirty or 0.0,
            threshold or constants.stop_threshold,
            max_rounds or constants.max_rounds,
        )
    except ValueError as e:
        raise typer.BadParameter(str(e)) from None
    console.print(precopy_table(plan, rate, constants.cpu_state if cpu is None else cpu))


@app.command()
@with_error_handling
def render(path: ScenarioArgument):
    """
    Print the canonical form of a scenario.
    """
    console.out(render_scenario(read_scenario(path, cache.config)), end="", highlight=False)


@app.command()
@with_error_handling
def report(out_dir: OutDirOption = None):
    """
    Aggregate the CSV files of a previous run.
    """
    print_report(resolve_out_dir(out_dir, cache.config))
