"""In-memory user/item rating graph with similarity edges and file persistence."""

from __future__ import annotations

import bisect
import logging
import os
import pathlib
import tempfile
import threading
from collections.abc import Iterator
from dataclasses import dataclass, replace
from typing import NamedTuple

from recount._errors import DomainError, InputError, NotFoundError, ParseError

logger = logging.getLogger(__name__)

HALF_STARS = frozenset(step / 2 for step in range(1, 11))
MOVIELENS_EPOCH = 838_512_000

_HEADER = "# recount-store v1"
_FOOTER = "# end"


@dataclass(frozen=True, slots=True)
class RatingEvent:
    """One timestamped (user, item, rating) action."""

    user_id: int
    item_id: int
    rating: float
    timestamp: int

    def __post_init__(self) -> None:
        if self.rating not in HALF_STARS:
            raise DomainError(f"Rating {self.rating!r} is not a half-star value in 0.5..5.0")
        if self.timestamp < 0:
            raise DomainError(f"Negative timestamp {self.timestamp}")


@dataclass(frozen=True, slots=True, order=True)
class UserPair:
    """Unordered user pair, stored with the smaller id first."""

    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise DomainError(f"A pair needs two distinct users, got {self.a} twice")
        if self.a > self.b:
            first, second = self.b, self.a
            object.__setattr__(self, "a", first)
            object.__setattr__(self, "b", second)

    def other(self, user: int) -> int:
        return self.b if user == self.a else self.a


@dataclass(frozen=True, slots=True)
class SimilarityEdge:
    """Similarity relationship with its recomputation metadata (seconds)."""

    pair: UserPair
    coefficient: float
    recount_period: float | None
    average_rp: float
    last_recount_time: int

    def __post_init__(self) -> None:
        if not -1.0 <= self.coefficient <= 1.0:
            raise DomainError(f"Coefficient {self.coefficient!r} outside [-1, 1]")
        if not self.average_rp > 0:
            raise DomainError(f"average_rp must be positive, got {self.average_rp!r}")
        if self.recount_period is not None and not self.recount_period > 0:
            raise DomainError(f"recount_period must be positive, got {self.recount_period!r}")

    def refreshed(self, coefficient: float, now: int) -> SimilarityEdge:
        """Record a recomputation at `now`."""
        return replace(self, coefficient=coefficient, last_recount_time=now)


class Rated(NamedTuple):
    item_id: int
    rating: float
    timestamp: int


def _order_key(entry: Rated) -> tuple[int, int]:
    return entry.timestamp, entry.item_id


class GraphStore:
    """Users and items as nodes, ratings and similarities as edges.

    Mutations are serialised through a lock; read from a `copy()` when
    handing the store to parallel workers.
    """

    def __init__(self) -> None:
        self.users: set[int] = set()
        self.items: set[int] = set()
        self._ratings: dict[int, list[Rated]] = {}
        self._edges: dict[UserPair, SimilarityEdge] = {}
        self._adjacency: dict[int, set[UserPair]] = {}
        self._lock = threading.RLock()

    # -- ratings -------------------------------------------------------

    def upsert_rating(self, ev: RatingEvent) -> GraphStore:
        """Insert a rating edge keeping the user's list in (time, item) order."""
        with self._lock:
            self.users.add(ev.user_id)
            self.items.add(ev.item_id)
            entries = self._ratings.setdefault(ev.user_id, [])
            entry = Rated(ev.item_id, ev.rating, ev.timestamp)
            bisect.insort_right(entries, entry, key=_order_key)
        return self

    def _entries(self, user: int) -> list[Rated]:
        try:
            return self._ratings[user]
        except KeyError:
            raise NotFoundError(f"Unknown user {user}") from None

    def ratings_asof(self, user: int, t: int) -> dict[int, float]:
        """Latest rating per item the user gave at or before `t`."""
        entries = self._entries(user)
        cutoff = bisect.bisect_right(entries, t, key=lambda entry: entry.timestamp)
        latest: dict[int, float] = {}
        for entry in entries[:cutoff]:
            latest[entry.item_id] = entry.rating
        return latest

    def user_entries(self, user: int) -> tuple[Rated, ...]:
        return tuple(self._entries(user))

    def rating_count(self, user: int) -> int:
        return len(self._entries(user))

    def activity_span(self, user: int) -> tuple[int, int]:
        """First and last action time of a user."""
        entries = self._entries(user)
        return entries[0].timestamp, entries[-1].timestamp

    def time_range(self) -> tuple[int, int] | None:
        if not self._ratings:
            return None
        spans = [self.activity_span(user) for user in self._ratings]
        return min(first for first, _ in spans), max(last for _, last in spans)

    def iter_events(self) -> Iterator[RatingEvent]:
        """All ratings in global (time, user, item) order."""
        merged = sorted(
            (entry.timestamp, user, entry.item_id, index, entry.rating)
            for user, entries in self._ratings.items()
            for index, entry in enumerate(entries)
        )
        for timestamp, user, item, _, rating in merged:
            yield RatingEvent(user, item, rating, timestamp)

    def __len__(self) -> int:
        return sum(len(entries) for entries in self._ratings.values())

    # -- similarity edges ----------------------------------------------

    def get_edge(self, pair: UserPair) -> SimilarityEdge | None:
        """The stored edge for `pair`, if any."""
        return self._edges.get(pair)

    def put_edge(self, edge: SimilarityEdge) -> GraphStore:
        """Insert or overwrite the edge for `edge.pair`."""
        with self._lock:
            self._edges[edge.pair] = edge
            self._adjacency.setdefault(edge.pair.a, set()).add(edge.pair)
            self._adjacency.setdefault(edge.pair.b, set()).add(edge.pair)
        return self

    def remove_edge(self, pair: UserPair) -> GraphStore:
        with self._lock:
            if self._edges.pop(pair, None) is not None:
                self._adjacency[pair.a].discard(pair)
                self._adjacency[pair.b].discard(pair)
        return self

    def edges(self) -> list[SimilarityEdge]:
        return [self._edges[pair] for pair in sorted(self._edges)]

    def edges_of(self, user: int) -> list[SimilarityEdge]:
        return [self._edges[pair] for pair in sorted(self._adjacency.get(user, ()))]

    def __getstate__(self) -> dict[str, object]:
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state: dict[str, object]) -> None:
        self.__dict__.update(state)
        self._lock = threading.RLock()

    def copy(self) -> GraphStore:
        """Independent snapshot."""
        clone = GraphStore()
        with self._lock:
            clone.users = set(self.users)
            clone.items = set(self.items)
            clone._ratings = {user: list(entries) for user, entries in self._ratings.items()}
            clone._edges = dict(self._edges)
            clone._adjacency = {user: set(pairs) for user, pairs in self._adjacency.items()}
        return clone


def build_store(events: Iterator[RatingEvent] | list[RatingEvent]) -> GraphStore:
    """A fresh store holding `events`."""
    store = GraphStore()
    for ev in events:
        store.upsert_rating(ev)
    return store


# -- persistence -------------------------------------------------------


def _format_optional(value: float | None) -> str:
    return "" if value is None else repr(value)


def _records(store: GraphStore) -> Iterator[str]:
    for user in sorted(store._ratings):
        for entry in store._ratings[user]:
            yield f"R,{user},{entry.item_id},{entry.rating!r},{entry.timestamp}"
    for edge in store.edges():
        yield (
            f"S,{edge.pair.a},{edge.pair.b},{edge.coefficient!r},"
            f"{_format_optional(edge.recount_period)},{edge.average_rp!r},"
            f"{edge.last_recount_time}"
        )


def save(store: GraphStore, path: str | pathlib.Path) -> None:
    """Write the store atomically as a line-oriented record file."""
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [_HEADER, *_records(store)]
    count = len(lines) - 1
    lines.append(f"{_FOOTER} {count}")
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp_name, target)
    except BaseException:
        pathlib.Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug("saved %d records to %s", count, target)


def _parse_record(fields: list[str], line: int) -> RatingEvent | SimilarityEdge:
    kind = fields[0]
    try:
        if kind == "R" and len(fields) == 5:
            return RatingEvent(int(fields[1]), int(fields[2]), float(fields[3]), int(fields[4]))
        if kind == "S" and len(fields) == 7:
            period = float(fields[4]) if fields[4] else None
            return SimilarityEdge(
                pair=UserPair(int(fields[1]), int(fields[2])),
                coefficient=float(fields[3]),
                recount_period=period,
                average_rp=float(fields[5]),
                last_recount_time=int(fields[6]),
            )
    except (ValueError, DomainError) as exc:
        raise ParseError(str(exc), line) from exc
    raise ParseError(f"unrecognised record {','.join(fields)!r}", line)


def load(path: str | pathlib.Path) -> GraphStore:
    """Read a store written by `save`; nothing is returned on a bad file."""
    source = pathlib.Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"Cannot read store {source}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != _HEADER:
        raise ParseError("missing store header", 1)

    store = GraphStore()
    seen = 0
    for number, line in enumerate(lines[1:], start=2):
        if line.startswith(_FOOTER):
            declared = line[len(_FOOTER) :].strip()
            if not declared.isdigit() or int(declared) != seen:
                raise ParseError(f"footer declares {declared!r} records, read {seen}", number)
            if number != len(lines):
                raise ParseError("data after footer", number + 1)
            logger.debug("loaded %d records from %s", seen, source)
            return store
        record = _parse_record(line.split(","), number)
        if isinstance(record, RatingEvent):
            store.upsert_rating(record)
        else:
            store.put_edge(record)
        seen += 1
    raise ParseError("truncated store file: footer missing", len(lines) + 1)
