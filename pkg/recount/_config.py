"""Run configuration: defaults, key-value config file and env override."""

from __future__ import annotations

import dataclasses
import os
import pathlib
from dataclasses import dataclass
from typing import Any

from recount._errors import InputError

_CONFIG_PATH = pathlib.Path(__file__).parent.parent / "recount.cfg"
_OUTPUT_DIR_ENV = "RECOUNT_OUTPUT_DIR"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, defaulting to the published protocol."""

    dataset_path: str = ""
    store_path: str = ""
    output_dir: str = "out"
    strict: bool = False
    # stability analysis
    bucket_len: int = 1_000_000
    d: float = 0.01
    window: int = 3
    fit_raw: bool = False
    min_overlap: int = 3
    min_span: int = 5
    max_pairs: int = 2000
    workers: int = 1
    fit_input: str = ""
    # service model
    t_fr: float = 1.0
    t_ir: float = 0.1
    p_b: float = 0.1
    n_cr: float = 0.2
    tau_visit: float = 1.0
    p_st: float = 0.5
    lam: float = 0.0
    min_intervals: int = 5
    groups: int = 3
    # replay
    policy: str = "all"
    period: float = 0.0
    top_n: int = 10
    relevance_threshold: float = 4.0
    k_neighbors: int = 20
    split: float = 0.8
    max_users: int = 0
    # bot rings
    epsilon: float = 0.01
    min_duration: int = 3
    min_size: int = 3

    @property
    def output_path(self) -> pathlib.Path:
        return pathlib.Path(self.output_dir)

    @property
    def resolved_store_path(self) -> pathlib.Path:
        if self.store_path:
            return pathlib.Path(self.store_path)
        return self.output_path / "store.txt"

    def with_overrides(self, **overrides: Any) -> RunConfig:
        """Return a copy with the given fields coerced and replaced."""
        return dataclasses.replace(self, **_coerce_all(overrides))


def field_types() -> dict[str, type]:
    """Map each RunConfig field to its runtime type."""
    types = {"str": str, "int": int, "float": float, "bool": bool}
    return {f.name: types[str(f.type)] for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a raw config value to the type of field `name`."""
    kinds = field_types()
    if name not in kinds:
        raise InputError(f"Unknown configuration key '{name}'")
    kind = kinds[name]
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        return kind(text)
    except ValueError as exc:
        raise InputError(f"Invalid value for '{name}': {value!r}") from exc


def _coerce_all(values: dict[str, Any]) -> dict[str, Any]:
    """Coerce every value of a raw mapping."""
    return {name: _coerce(name, value) for name, value in values.items()}


def _read_config_file(path: pathlib.Path) -> dict[str, Any]:
    """Parse `key = value` lines; `#` starts a comment."""
    values: dict[str, Any] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"Cannot read config file {path}: {exc}") from exc
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_run_config(
    config_path: str | pathlib.Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Build a RunConfig from defaults, config file, env and overrides.

    Args:
        config_path: Explicit config file. When omitted, the project-level
            `recount.cfg` is read if it exists.
        overrides: Values given explicitly (CLI flags, tool arguments).

    Returns:
        The resolved configuration.
    """
    values: dict[str, Any] = {}
    if config_path:
        values.update(_read_config_file(pathlib.Path(config_path)))
    elif _CONFIG_PATH.exists():
        values.update(_read_config_file(_CONFIG_PATH))

    env_dir = os.environ.get(_OUTPUT_DIR_ENV, "").strip()
    if env_dir:
        values["output_dir"] = env_dir

    values.update(overrides or {})
    return RunConfig(**_coerce_all(values))
