"""Deterministic report writers: CSV tables and key-value blocks."""

from __future__ import annotations

import csv
import pathlib
from collections.abc import Iterable, Mapping, Sequence
from typing import Any, TextIO


def fmt(value: Any) -> str:
    """Six significant digits for floats, empty cell for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_rows(stream: TextIO, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a header and formatted rows to `stream`; returns the row count."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    count = 0
    for row in rows:
        writer.writerow([fmt(cell) for cell in row])
        count += 1
    return count


def write_csv(
    path: str | pathlib.Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> pathlib.Path:
    """Write a CSV table, creating parent directories."""
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        write_rows(handle, header, rows)
    return target


def read_csv(path: str | pathlib.Path) -> tuple[list[str], list[list[str]]]:
    """Header and data rows of a CSV file."""
    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def format_block(values: Mapping[str, Any]) -> str:
    """One `key: value` line per entry, in insertion order."""
    return "".join(f"{key}: {fmt(value)}\n" for key, value in values.items())


def write_block(path: str | pathlib.Path, values: Mapping[str, Any]) -> pathlib.Path:
    """Write a key-value block, creating parent directories."""
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(format_block(values), encoding="utf-8")
    return target
