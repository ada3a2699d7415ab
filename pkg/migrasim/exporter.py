from __future__ import annotations

from collections.abc import Iterable
from typing import TYPE_CHECKING

import polars as pl

from .utils import format_number

if TYPE_CHECKING:
    from .migration import MigrationOutcome
    from .services import RequestRecord, Session

MIGRATION_COLUMNS = (
    "scenario",
    "vm",
    "mode",
    "mobility",
    "t_start",
    "t_disk",
    "t_context",
    "rounds",
    "t_precopy",
    "t_downtime",
    "t_redirect",
    "t_total",
    "bytes_total",
    "converged",
    "feasible_warnings",
)
SESSION_COLUMNS = ("scenario", "session", "vm", "n_interruptions", "max_interruption_s", "dropped")
REQUEST_COLUMNS = ("scenario", "client", "content", "issued_at", "served_by", "latency_s")


def _frame(columns: tuple[str, ...], rows: Iterable[tuple[str | None, ...]]) -> pl.DataFrame:
    # Cells are pre-rendered text; None is written as an empty field.
    schema = {column: pl.String for column in columns}
    if not (data := list(rows)):
        return pl.DataFrame(schema=schema)
    return pl.DataFrame(data, schema=schema, orient="row")


def migrations_frame(scenario: str, outcomes: Iterable[MigrationOutcome]) -> pl.DataFrame:
    return _frame(
        MIGRATION_COLUMNS,
        (
            (
                scenario,
                outcome.vm,
                str(outcome.mode),
                str(outcome.mobility),
                format_number(outcome.t_start),
                format_number(outcome.t_disk),
                format_number(outcome.t_context),
                format_number(outcome.rounds),
                format_number(outcome.t_precopy),
                format_number(outcome.t_downtime),
                format_number(outcome.t_redirect),
                format_number(outcome.t_total),
                format_number(outcome.bytes_total),
                format_number(outcome.converged),
                ";".join(outcome.warnings) or None,
            )
            for outcome in outcomes
        ),
    )


def sessions_frame(scenario: str, sessions: Iterable[Session]) -> pl.DataFrame:
    return _frame(
        SESSION_COLUMNS,
        (
            (
                scenario,
                session.id,
                session.vm,
                format_number(len(session.interruptions)),
                format_number(session.max_interruption),
                format_number(session.dropped),
            )
            for session in sessions
        ),
    )


def requests_frame(scenario: str, records: Iterable[RequestRecord]) -> pl.DataFrame:
    return _frame(
        REQUEST_COLUMNS,
        (
            (
                scenario,
                record.client,
                record.content,
                format_number(record.issued_at),
                record.served_by,
                format_number(record.latency),
            )
            for record in records
        ),
    )


def to_csv(df: pl.DataFrame) -> str:
    return df.write_csv(line_terminator="\n")
