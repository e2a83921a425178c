"""Shared pytest fixtures."""

from __future__ import annotations

import sys
from collections.abc import Iterable
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from recount import _config  # noqa: E402
from recount.store import GraphStore, RatingEvent, build_store  # noqa: E402

BUCKET = 1_000_000


def events_from(rows: Iterable[tuple[int, int, float, int]]) -> list[RatingEvent]:
    """(user, item, rating, timestamp) tuples in global time order."""
    events = [RatingEvent(*row) for row in rows]
    return sorted(events, key=lambda ev: (ev.timestamp, ev.user_id, ev.item_id))


def store_from(rows: Iterable[tuple[int, int, float, int]]) -> GraphStore:
    return build_store(events_from(rows))


def bot_ring_rows(
    members: Iterable[int] = (101, 102, 103, 104), buckets: int = 6
) -> list[tuple[int, int, float, int]]:
    """Users rating the same items identically, two items per bucket."""
    ratings = (1.0, 4.5, 2.0, 5.0, 3.0, 0.5, 4.0, 1.5, 3.5, 2.5, 5.0, 1.0)
    rows = []
    for user in members:
        for step in range(2 * buckets):
            rows.append((user, 500 + step, ratings[step % len(ratings)], step * BUCKET // 2 + user))
    return rows


def organic_rows(buckets: int = 6) -> list[tuple[int, int, float, int]]:
    """Users with different tastes over shared items; every pair keeps k <= 0.4."""
    tastes = {
        1: (1.0, 2.0, 3.0, 4.0),
        2: (4.0, 3.0, 2.0, 1.0),
        3: (1.0, 4.0, 4.0, 1.0),
        4: (3.0, 1.0, 2.0, 4.0),
    }
    rows = []
    for user, taste in tastes.items():
        for step in range(2 * buckets):
            rows.append((user, 100 + step, taste[step % 4], step * BUCKET // 2 + 10 * user))
    return rows


@pytest.fixture(autouse=True)
def isolated_config(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """Keep tests away from the project config file and the output-dir env var."""
    monkeypatch.setattr(_config, "_CONFIG_PATH", tmp_path / "missing.cfg")
    monkeypatch.delenv(_config._OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def fixture_dir() -> Path:
    """Return path to static test fixture directory."""
    return PROJECT_ROOT / "scripts" / "fixtures"


@pytest.fixture
def sample_ratings(fixture_dir: Path) -> Path:
    return fixture_dir / "ratings.sample.csv"


@pytest.fixture
def output_dir(tmp_path: Path) -> Path:
    return tmp_path / "out"
