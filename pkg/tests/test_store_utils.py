"""Tests for the rating graph store."""

from __future__ import annotations

import math
import pickle
from pathlib import Path

import numpy as np
import pytest
from conftest import store_from

from recount import store as store_io
from recount._errors import DomainError, InputError, NotFoundError, ParseError
from recount.store import GraphStore, RatingEvent, SimilarityEdge, UserPair


def test_rating_event_rejects_off_grid_values() -> None:
    with pytest.raises(DomainError):
        RatingEvent(1, 2, 3.3, 10)
    with pytest.raises(DomainError):
        RatingEvent(1, 2, 0.0, 10)
    with pytest.raises(DomainError):
        RatingEvent(1, 2, 3.0, -1)
    assert RatingEvent(1, 2, 5.0, 0).rating == 5.0


def test_user_pair_is_canonical() -> None:
    assert UserPair(7, 3) == UserPair(3, 7)
    assert (UserPair(7, 3).a, UserPair(7, 3).b) == (3, 7)
    assert UserPair(3, 7).other(3) == 7
    with pytest.raises(DomainError):
        UserPair(4, 4)


def test_similarity_edge_validates_metadata() -> None:
    with pytest.raises(DomainError):
        SimilarityEdge(UserPair(1, 2), 1.5, None, 10.0, 0)
    with pytest.raises(DomainError):
        SimilarityEdge(UserPair(1, 2), 0.5, None, 0.0, 0)
    with pytest.raises(DomainError):
        SimilarityEdge(UserPair(1, 2), 0.5, -3.0, 10.0, 0)
    edge = SimilarityEdge(UserPair(1, 2), 0.5, None, math.inf, 0)
    refreshed = edge.refreshed(0.25, 99)
    assert refreshed.coefficient == 0.25
    assert refreshed.last_recount_time == 99
    assert refreshed.average_rp == math.inf


def test_ratings_asof_takes_latest_rating_before_time() -> None:
    store = store_from([(1, 10, 2.0, 100), (1, 10, 4.0, 300), (1, 11, 3.0, 200)])
    assert store.ratings_asof(1, 50) == {}
    assert store.ratings_asof(1, 200) == {10: 2.0, 11: 3.0}
    assert store.ratings_asof(1, 300) == {10: 4.0, 11: 3.0}
    assert store.rating_count(1) == 3
    assert store.activity_span(1) == (100, 300)


def test_unknown_user_is_not_found() -> None:
    store = store_from([(1, 10, 2.0, 100)])
    with pytest.raises(NotFoundError):
        store.ratings_asof(2, 100)


def test_upsert_keeps_users_time_ordered_regardless_of_arrival() -> None:
    store = GraphStore()
    store.upsert_rating(RatingEvent(1, 10, 2.0, 300))
    store.upsert_rating(RatingEvent(1, 11, 3.0, 100))
    store.upsert_rating(RatingEvent(2, 10, 5.0, 200))
    assert [entry.timestamp for entry in store.user_entries(1)] == [100, 300]
    assert [(ev.user_id, ev.timestamp) for ev in store.iter_events()] == [
        (1, 100),
        (2, 200),
        (1, 300),
    ]
    assert len(store) == 3
    assert store.time_range() == (100, 300)


def test_edges_are_indexed_by_user() -> None:
    store = store_from([(1, 10, 2.0, 1), (2, 10, 2.0, 1), (3, 10, 2.0, 1)])
    store.put_edge(SimilarityEdge(UserPair(2, 1), 0.5, None, 10.0, 1))
    store.put_edge(SimilarityEdge(UserPair(3, 2), -0.5, 5.0, 10.0, 1))
    assert [edge.pair for edge in store.edges_of(2)] == [UserPair(1, 2), UserPair(2, 3)]
    store.remove_edge(UserPair(1, 2))
    assert store.get_edge(UserPair(1, 2)) is None
    assert [edge.pair for edge in store.edges()] == [UserPair(2, 3)]
    assert store.edges_of(1) == []


def test_copy_and_pickle_are_independent() -> None:
    store = store_from([(1, 10, 2.0, 1), (2, 10, 2.0, 1)])
    clone = store.copy()
    clone.upsert_rating(RatingEvent(3, 11, 1.0, 5))
    assert 3 not in store.users
    restored = pickle.loads(pickle.dumps(store))
    restored.upsert_rating(RatingEvent(1, 12, 4.0, 9))
    assert store.rating_count(1) == 1
    assert restored.rating_count(1) == 2


def test_save_load_round_trip(tmp_path: Path) -> None:
    store = store_from([(1, 10, 2.5, 100), (1, 10, 3.5, 400), (2, 10, 4.0, 200), (2, 11, 1.0, 300)])
    store.put_edge(SimilarityEdge(UserPair(1, 2), 0.123456789, None, math.inf, 400))
    path = tmp_path / "store.txt"
    store_io.save(store, path)
    loaded = store_io.load(path)

    assert loaded.users == store.users
    assert loaded.items == store.items
    assert list(loaded.iter_events()) == list(store.iter_events())
    assert loaded.edges() == store.edges()
    assert loaded.ratings_asof(1, 10**6) == {10: 3.5}


def test_save_is_byte_identical_on_rerun(tmp_path: Path) -> None:
    store = store_from([(2, 10, 4.0, 200), (1, 10, 2.5, 100)])
    store_io.save(store, tmp_path / "a.txt")
    store_io.save(store_io.load(tmp_path / "a.txt"), tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_load_detects_truncation_and_bad_records(tmp_path: Path) -> None:
    store = store_from([(1, 10, 2.5, 100), (2, 10, 4.0, 200)])
    path = tmp_path / "store.txt"
    store_io.save(store, path)
    lines = path.read_text(encoding="utf-8").splitlines()

    truncated = tmp_path / "truncated.txt"
    truncated.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        store_io.load(truncated)

    corrupt = tmp_path / "corrupt.txt"
    corrupt.write_text("\n".join([lines[0], "R,1,10,2.7,100", *lines[2:]]) + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 2"):
        store_io.load(corrupt)

    headless = tmp_path / "headless.txt"
    headless.write_text("\n".join(lines[1:]) + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        store_io.load(headless)


def _random_store(rng: np.random.Generator) -> GraphStore:
    half_stars = np.arange(1, 11) / 2
    rows = [
        (
            int(rng.integers(1, 8)),
            int(rng.integers(1, 20)),
            float(rng.choice(half_stars)),
            int(rng.integers(0, 1_000)),
        )
        for _ in range(int(rng.integers(0, 60)))
    ]
    store = store_from(rows)
    users = sorted(store.users)
    for a, b in zip(users, users[1:], strict=False):
        personal = float(rng.uniform(1.0, 1e7)) if rng.random() < 0.5 else None
        average = math.inf if rng.random() < 0.3 else float(rng.uniform(1.0, 1e8))
        coefficient = float(rng.uniform(-1.0, 1.0))
        store.put_edge(SimilarityEdge(UserPair(a, b), coefficient, personal, average, 7))
    return store


def test_random_stores_survive_save_and_load(tmp_path: Path) -> None:
    rng = np.random.default_rng(41)
    path = tmp_path / "store.txt"
    for _ in range(30):
        store = _random_store(rng)
        store_io.save(store, path)
        loaded = store_io.load(path)
        assert loaded.users == store.users
        assert list(loaded.iter_events()) == list(store.iter_events())
        assert loaded.edges() == store.edges()
        for user in store.users:
            for t in (0, 250, 500, 999):
                assert loaded.ratings_asof(user, t) == store.ratings_asof(user, t)


def test_ratings_asof_windows_only_grow() -> None:
    rng = np.random.default_rng(43)
    for _ in range(30):
        store = _random_store(rng)
        for user in store.users:
            previous: set[int] = set()
            for t in range(0, 1_001, 50):
                items = set(store.ratings_asof(user, t))
                assert previous <= items
                previous = items


def test_unreadable_store_is_input_error(tmp_path: Path) -> None:
    with pytest.raises(InputError) as excinfo:
        store_io.load(tmp_path / "missing.txt")
    assert not isinstance(excinfo.value, ParseError)
