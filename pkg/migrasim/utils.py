from __future__ import annotations

import math
import re

# Link capacities are decimal, memory and disk sizes are binary.
BANDWIDTH_UNITS: dict[str, float] = {"bps": 1.0, "Kbps": 1e3, "Mbps": 1e6, "Gbps": 1e9}
TIME_UNITS: dict[str, float] = {"us": 1e-6, "ms": 1e-3, "s": 1.0}
SIZE_UNITS: dict[str, float] = {"B": 1.0, "KiB": 2.0**10, "MiB": 2.0**20, "GiB": 2.0**30}
BYTE_RATE_UNITS: dict[str, float] = {f"{unit}/s": factor for unit, factor in SIZE_UNITS.items()}

MiB = SIZE_UNITS["MiB"]
GiB = SIZE_UNITS["GiB"]

_QUANTITY_RE = re.compile(r"(?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)(?P<unit>[A-Za-z/]*)")


def parse_quantity(text: str, units: dict[str, float]) -> float:
    """
    Parse `<number><unit>` against a unit table and return the value in base units.

    Raises `ValueError` with a readable message when the number or the unit is wrong.
    """
    match = _QUANTITY_RE.fullmatch(text)
    if match is None:
        raise ValueError(f"expected a number followed by one of {', '.join(units)}, got {text!r}")
    unit = match["unit"]
    if unit not in units:
        raise ValueError(f"unknown unit {unit!r} in {text!r} (expected one of {', '.join(units)})")
    value = float(match["number"]) * units[unit]
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not a finite quantity")
    return value


def format_number(value: float | int) -> str:
    """
    Render a metric with 9 significant digits, the way every CSV column and trace field is written.
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if value == 0:
        # avoids "-0"
        return "0"
    return f"{value:.9g}"


def format_exact(value: float) -> str:
    """
    Shortest representation that parses back to the very same float.
    """
    if value == int(value) and abs(value) < 2**53:
        return str(int(value))
    return repr(value)
