from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import polars as pl

from ..errors import MissingResults
from ..exporter import MIGRATION_COLUMNS, REQUEST_COLUMNS, SESSION_COLUMNS
from ..ui import Table, console

_MIGRATION_TYPES = {
    "t_start": pl.Float64,
    "t_disk": pl.Float64,
    "t_context": pl.Float64,
    "rounds": pl.Int64,
    "t_precopy": pl.Float64,
    "t_downtime": pl.Float64,
    "t_redirect": pl.Float64,
    "t_total": pl.Float64,
    "bytes_total": pl.Float64,
    "converged": pl.Boolean,
}
_SESSION_TYPES = {"n_interruptions": pl.Int64, "max_interruption_s": pl.Float64, "dropped": pl.Boolean}
_REQUEST_TYPES = {"issued_at": pl.Float64, "latency_s": pl.Float64}


class RunResults(NamedTuple):
    migrations: pl.DataFrame
    sessions: pl.DataFrame
    requests: pl.DataFrame


def _read(path: Path, columns: tuple[str, ...], types: dict[str, type[pl.DataType]]) -> pl.DataFrame:
    if not path.exists():
        raise MissingResults(path)
    schema = {column: types.get(column, pl.String) for column in columns}
    return pl.read_csv(path, schema=schema)


def load_results(out_dir: Path) -> RunResults:
    return RunResults(
        _read(out_dir / "migrations.csv", MIGRATION_COLUMNS, _MIGRATION_TYPES),
        _read(out_dir / "sessions.csv", SESSION_COLUMNS, _SESSION_TYPES),
        _read(out_dir / "requests.csv", REQUEST_COLUMNS, _REQUEST_TYPES),
    )


def migration_summary(migrations: pl.DataFrame) -> pl.DataFrame:
    return (
        migrations.group_by("scenario", "mode", "mobility", maintain_order=True)
        .agg(
            pl.len().alias("migrations"),
            pl.col("t_total").mean().alias("mean_t_total"),
            pl.col("t_downtime").max().alias("max_t_downtime"),
            (~pl.col("converged")).sum().alias("not_converged"),
            pl.col("bytes_total").sum().alias("bytes_total"),
        )
        .sort("scenario", "mode", "mobility")
    )


def session_summary(sessions: pl.DataFrame) -> pl.DataFrame:
    return (
        sessions.group_by("scenario", maintain_order=True)
        .agg(
            pl.len().alias("sessions"),
            pl.col("n_interruptions").sum().alias("interruptions"),
            pl.col("max_interruption_s").max().alias("max_interruption_s"),
            pl.col("dropped").sum().alias("dropped"),
        )
        .sort("scenario")
    )


def request_summary(requests: pl.DataFrame) -> pl.DataFrame:
    return (
        requests.group_by("scenario", "content", maintain_order=True)
        .agg(
            pl.len().alias("requests"),
            pl.col("latency_s").mean().alias("mean_latency_s"),
            pl.col("served_by").n_unique().alias("surrogates_used"),
        )
        .sort("scenario", "content")
    )


def frame_table(title: str, df: pl.DataFrame) -> Table:
    table = Table(title=title, show_header=True, header_style="bold", width=console.width)
    for column, dtype in df.schema.items():
        table.add_column(column, justify="right" if dtype.is_numeric() else "left")
    for row in df.iter_rows():
        table.add_row(*(f"{value:.6g}" if isinstance(value, float) else str(value) for value in row))
    return table


def print_report(out_dir: Path) -> None:
    results = load_results(out_dir)
    console.print(frame_table("Migrations", migration_summary(results.migrations)))
    console.print(frame_table("Sessions", session_summary(results.sessions)))
    console.print(frame_table("Requests", request_summary(results.requests)))
