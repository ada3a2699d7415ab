from __future__ import annotations

import logging
from collections.abc import Iterable
from typing import TYPE_CHECKING

from rich.console import Console
from rich.logging import RichHandler
from rich.markdown import Markdown as Markdown
from rich.table import Table as Table
from rich.text import Text as Text

from .utils import GiB, MiB, format_number

if TYPE_CHECKING:
    from .migration import MigrationOutcome, PrecopyPlan
    from .runner import PlanCheck


console = Console()
err_console = Console(stderr=True)


def setup_logging(debug: bool = False) -> None:
    """
    Route the `migrasim` loggers to a rich handler on stderr. Warnings only, unless `debug`.
    """
    handler = RichHandler(console=err_console, show_path=debug, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger = logging.getLogger("migrasim")
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if debug else logging.WARNING)
    logger.propagate = False


def format_bytes(value: float) -> str:
    if value >= GiB:
        return f"{value / GiB:,.2f} GiB"
    return f"{value / MiB:,.2f} MiB"


def format_seconds(value: float) -> str:
    if value < 1:
        return f"{value * 1e3:,.3f} ms"
    return f"{value:,.4f} s"


def migrations_table(outcomes: Iterable[MigrationOutcome]) -> Table:
    table = Table(show_header=True, header_style="bold", width=console.width)
    table.add_column("vm")
    table.add_column("mode")
    table.add_column("mobility")
    table.add_column("start", justify="right")
    table.add_column("rounds", justify="right")
    table.add_column("downtime", justify="right")
    table.add_column("total", justify="right")
    table.add_column("moved", justify="right")
    table.add_column("warnings")

    for outcome in outcomes:
        rounds = str(outcome.rounds) if outcome.converged else f"[red]{outcome.rounds}*"
        table.add_row(
            outcome.vm,
            outcome.mode,
            outcome.mobility,
            format_seconds(outcome.t_start),
            rounds,
            format_seconds(outcome.t_downtime),
            format_seconds(outcome.t_total),
            format_bytes(outcome.bytes_total),
            "[yellow]" + ", ".join(outcome.warnings) if outcome.warnings else "",
        )
    return table


def feasibility_table(checks: Iterable[PlanCheck]) -> Table:
    table = Table(show_header=True, header_style="bold", width=console.width)
    table.add_column("line", justify="right")
    table.add_column("vm")
    table.add_column("src -> dst")
    table.add_column("storage")
    table.add_column("network")
    table.add_column("bottleneck", justify="right")
    table.add_column("verdict")

    for check in checks:
        report = check.report
        if not report.feasible:
            verdict = "[red]refused: " + "; ".join(report.reasons)
        elif report.warnings:
            verdict = "[yellow]" + "; ".join(report.warnings)
        else:
            verdict = "[green]ok"
        table.add_row(
            "" if check.line is None else str(check.line),
            check.plan.vm,
            f"{check.plan.src} -> {check.plan.dst}" + ("" if report.same_subnet else " [i](cross-subnet)"),
            report.storage,
            report.network_continuity,
            f"{report.bottleneck_capacity / 1e6:,.0f} Mbit/s",
            verdict,
        )
    return table


def precopy_table(plan: PrecopyPlan, rate: float, cpu_state: float) -> Table:
    t_downtime, t_total = plan.estimate(rate, cpu_state)
    table = Table(show_header=True, header_style="bold", show_footer=True)
    table.add_column("round", footer=Text.from_markup("[b]total", justify="right"))
    table.add_column("duration", justify="right", footer=format_seconds(t_total))
    table.add_column("payload", justify="right")

    for index, duration in enumerate(plan.round_durations, 1):
        table.add_row(str(index), format_seconds(duration), format_bytes(duration * rate))
    status = "converged" if plan.converged else "[red]not converged"
    table.add_row(
        f"stop-and-copy ({status})",
        format_seconds(t_downtime),
        format_bytes(plan.residual_bytes + cpu_state),
    )
    return table


def summary_line(label: str, value: float | int | bool) -> str:
    return f"[b]{label}:[/b] {format_number(value)}"
