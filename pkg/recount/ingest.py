"""MovieLens-format rating log parsing."""

from __future__ import annotations

import io
import logging
import pathlib
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import IO, Any, TextIO

import pandas as pd

from recount._errors import DomainError, InputError, ParseError
from recount.store import MOVIELENS_EPOCH, GraphStore, RatingEvent, build_store

logger = logging.getLogger(__name__)

COLUMNS = ("userId", "movieId", "rating", "timestamp")
HEADER = ",".join(COLUMNS)
CHUNK_ROWS = 100_000

# Placeholder row for lines with too many fields, so row indices stay line-aligned.
_OVERFLOW = "\x00overflow"


@dataclass
class IngestReport:
    """Ingest totals. Every line after the optional header is either accepted or rejected."""

    accepted: int = 0
    rejected: int = 0
    first_timestamp: int | None = None
    last_timestamp: int | None = None

    def record(self, ev: RatingEvent) -> None:
        """Count an accepted event and widen the timestamp range."""
        self.accepted += 1
        if self.first_timestamp is None or ev.timestamp < self.first_timestamp:
            self.first_timestamp = ev.timestamp
        if self.last_timestamp is None or ev.timestamp > self.last_timestamp:
            self.last_timestamp = ev.timestamp

    def as_dict(self) -> dict[str, int | None]:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "first_timestamp": self.first_timestamp,
            "last_timestamp": self.last_timestamp,
        }


def _overflow(bad_line: list[str]) -> list[str]:
    """Keep an over-long line as a marker row instead of dropping it."""
    return [_OVERFLOW, str(len(bad_line)), "", ""]


def _as_source(stream: IO[bytes] | IO[str] | Iterable[str | bytes]) -> IO[bytes] | IO[str]:
    """Return a file-like object pandas can read, joining plain line iterables."""
    if hasattr(stream, "read"):
        return stream  # type: ignore[return-value]
    lines = list(stream)
    if not lines:
        return io.StringIO("")
    if isinstance(lines[0], bytes):
        return io.BytesIO(b"".join(bytes(line).rstrip(b"\r\n") + b"\n" for line in lines))
    return io.StringIO("".join(str(line).rstrip("\r\n") + "\n" for line in lines))


def _read_chunks(source: IO[bytes] | IO[str], chunk_rows: int) -> Iterator[pd.DataFrame]:
    """Read every line as one row of strings; undecodable bytes become U+FFFD."""
    try:
        with pd.read_csv(
            source,
            header=None,
            names=list(COLUMNS),
            index_col=False,
            dtype=str,
            na_filter=False,
            skip_blank_lines=False,
            engine="python",
            on_bad_lines=_overflow,
            encoding="utf-8",
            encoding_errors="replace",
            chunksize=chunk_rows,
        ) as reader:
            yield from reader
    except pd.errors.EmptyDataError:
        return


def _fields(row: tuple[Any, ...]) -> list[str]:
    return [value.strip() for value in row if isinstance(value, str)]


def _is_header(fields: list[str]) -> bool:
    return bool(fields) and fields[0].isidentifier()


def _parse_row(fields: list[str], number: int) -> RatingEvent:
    """Turn one line's fields into a RatingEvent or raise with the line position."""
    if fields and fields[0] == _OVERFLOW:
        raise ParseError(f"expected 4 fields, got {fields[1]}", number)
    if not any(fields):
        raise ParseError("blank line", number)
    if len(fields) != len(COLUMNS):
        raise ParseError(f"expected 4 fields, got {len(fields)}", number)
    try:
        user, item, rating, timestamp = (
            int(fields[0]),
            int(fields[1]),
            float(fields[2]),
            int(fields[3]),
        )
    except ValueError as exc:
        raise ParseError(f"bad field value in {','.join(fields)!r}", number) from exc
    try:
        return RatingEvent(user, item, rating, timestamp)
    except DomainError as exc:
        raise DomainError(f"line {number}: {exc}") from exc


def iter_ratings(
    stream: IO[bytes] | IO[str] | Iterable[str | bytes],
    report: IngestReport,
    strict: bool = False,
    chunk_rows: int = CHUNK_ROWS,
) -> Iterator[RatingEvent]:
    """Yield events in file order, updating `report` as lines are consumed.

    Blank, undecodable and malformed lines all count as rejected.

    Args:
        stream: Binary or text stream (or any iterable of lines).
        report: Totals are accumulated here.
        strict: Abort on the first malformed line instead of skipping it.
        chunk_rows: Lines held in memory at a time.
    """
    for chunk in _read_chunks(_as_source(stream), chunk_rows):
        for index, row in zip(chunk.index, chunk.itertuples(index=False, name=None), strict=True):
            number = int(index) + 1
            fields = _fields(row)
            if number == 1 and _is_header(fields):
                continue
            try:
                ev = _parse_row(fields, number)
            except (ParseError, DomainError) as exc:
                if strict:
                    raise
                report.rejected += 1
                logger.debug("skipping line %d: %s", number, exc)
                continue
            report.record(ev)
            yield ev


def parse_ratings(
    stream: IO[bytes] | IO[str] | Iterable[str | bytes],
    strict: bool = False,
) -> tuple[list[RatingEvent], IngestReport]:
    """Parse a whole rating log.

    Returns:
        The accepted events in file order and the ingest totals.
    """
    report = IngestReport()
    events = list(iter_ratings(stream, report, strict=strict))
    if report.rejected:
        logger.warning("rejected %d malformed lines", report.rejected)
    if report.first_timestamp is not None and report.first_timestamp < MOVIELENS_EPOCH:
        logger.warning(
            "earliest timestamp %d predates the MovieLens epoch (1996-07-28)",
            report.first_timestamp,
        )
    return events, report


def parse_text(text: str, strict: bool = False) -> tuple[list[RatingEvent], IngestReport]:
    """Parse a rating log held in memory."""
    return parse_ratings(io.StringIO(text), strict=strict)


def load_store(path: str | pathlib.Path, strict: bool = False) -> tuple[GraphStore, IngestReport]:
    """Read a ratings file straight into a GraphStore."""
    source = pathlib.Path(path)
    try:
        with open(source, "rb") as handle:
            events, report = parse_ratings(handle, strict=strict)
    except OSError as exc:
        raise InputError(f"Cannot read dataset {source}: {exc}") from exc
    return build_store(events), report


def _format_rating(rating: float) -> str:
    return f"{rating:.1f}"


def write_ratings_csv(events: Iterable[RatingEvent], stream: TextIO) -> None:
    """Write events in MovieLens `ratings.csv` layout, header included."""
    stream.write(HEADER + "\n")
    for ev in events:
        stream.write(f"{ev.user_id},{ev.item_id},{_format_rating(ev.rating)},{ev.timestamp}\n")
