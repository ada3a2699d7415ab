from __future__ import annotations

from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Annotated

import typer

from ..errors import MigrasimError
from ..ui import err_console
from ..utils import BANDWIDTH_UNITS, BYTE_RATE_UNITS, SIZE_UNITS, parse_quantity


def path_autocomplete(suffix: str | None = None, dirs_only: bool = False) -> Callable[[str], list[str]]:
    """
    Shell completion for paths, descending into the folder already typed (`scenarios/op` lists `scenarios/`).
    Directories are always offered so the user can keep walking; files only when they end with `suffix`.
    """

    def completer(incomplete: str) -> list[str]:
        folder, _, prefix = incomplete.rpartition("/")
        base = Path(folder or ".")
        if not base.is_dir():
            return []
        completions: list[str] = []
        for item in sorted(base.iterdir()):
            if not item.name.startswith(prefix):
                continue
            if item.is_dir():
                completions.append(f"{item.name}/" if not folder else f"{folder}/{item.name}/")
            elif not dirs_only and (suffix is None or item.name.endswith(suffix)):
                completions.append(item.name if not folder else f"{folder}/{item.name}")
        return completions

    return completer


def quantity_parser(units: dict[str, float]) -> Callable[[str], float]:
    def parser(value: str) -> float:
        try:
            return parse_quantity(value, units)
        except ValueError as e:
            raise typer.BadParameter(str(e)) from None

    return parser


ScenarioArgument = Annotated[
    Path,
    typer.Argument(
        help="Path to the scenario file.",
        autocompletion=path_autocomplete(suffix=".scn"),
        show_default=False,
    ),
]
parse_size = quantity_parser(SIZE_UNITS)
parse_bandwidth = quantity_parser(BANDWIDTH_UNITS)
parse_byte_rate = quantity_parser(BYTE_RATE_UNITS)


def with_error_handling[R, **P](f: Callable[P, R]) -> Callable[P, R]:
    """
    Decorator to use on a typer command.
    Turns a `MigrasimError` into a red message and the exit code the error carries, without any traceback.

    The decorator must be placed under the `Typer.command()` decorator (in order to be executed before).
    """

    @wraps(f)
    def wrapped(*args: P.args, **kwargs: P.kwargs) -> R:
        try:
            return f(*args, **kwargs)
        except MigrasimError as e:
            err_console.print(f"[bold red]ERROR:[/] {e}", highlight=False)
            raise typer.Exit(code=e.exit_code) from None

    return wrapped
