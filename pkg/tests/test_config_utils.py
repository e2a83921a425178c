"""Tests for run configuration loading."""

from __future__ import annotations

from pathlib import Path

import pytest

from recount import _config
from recount._config import RunConfig
from recount._errors import InputError


def test_defaults_follow_published_protocol() -> None:
    config = _config.load_run_config()
    assert config == RunConfig()
    assert config.bucket_len == 1_000_000
    assert config.d == 0.01
    assert config.resolved_store_path == Path("out") / "store.txt"


def test_config_file_values_are_coerced(tmp_path: Path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment\nbucket_len = 500000\nd = 0.02  # tighter\nstrict = yes\npolicy = adaptive\n",
        encoding="utf-8",
    )
    config = _config.load_run_config(path)
    assert config.bucket_len == 500_000
    assert config.d == 0.02
    assert config.strict is True
    assert config.policy == "adaptive"


def test_default_config_file_is_read(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    path = tmp_path / "recount.cfg"
    path.write_text("top_n = 5\n", encoding="utf-8")
    monkeypatch.setattr(_config, "_CONFIG_PATH", path)
    assert _config.load_run_config().top_n == 5


def test_precedence_flag_over_env_over_file(
    monkeypatch: pytest.MonkeyPatch, tmp_path: Path
) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("output_dir = from-file\n", encoding="utf-8")
    assert _config.load_run_config(path).output_dir == "from-file"

    monkeypatch.setenv(_config._OUTPUT_DIR_ENV, "from-env")
    assert _config.load_run_config(path).output_dir == "from-env"
    assert _config.load_run_config(path, {"output_dir": "from-flag"}).output_dir == "from-flag"


def test_bad_keys_and_values_are_input_errors(tmp_path: Path) -> None:
    with pytest.raises(InputError, match="Unknown"):
        _config.load_run_config(overrides={"bucket": 10})
    with pytest.raises(InputError, match="Invalid"):
        _config.load_run_config(overrides={"window": "three"})
    with pytest.raises(InputError, match="Invalid"):
        _config.load_run_config(overrides={"strict": "maybe"})

    path = tmp_path / "run.cfg"
    path.write_text("just words\n", encoding="utf-8")
    with pytest.raises(InputError):
        _config.load_run_config(path)
    with pytest.raises(InputError):
        _config.load_run_config(tmp_path / "missing.cfg")


def test_with_overrides_coerces_strings() -> None:
    config = RunConfig().with_overrides(bucket_len="1e6", workers="4", fit_raw="true")
    assert config.bucket_len == 1_000_000
    assert config.workers == 4
    assert config.fit_raw is True
    assert RunConfig(store_path="s.txt").resolved_store_path == Path("s.txt")
