#!/usr/bin/env python3
"""
CLI entry point that auto-discovers the pipeline commands in recount/commands.py.
"""

import argparse
import inspect
import json
import logging
import sys
from collections.abc import Callable, Sequence
from typing import Any

from recount import commands
from recount._config import RunConfig, field_types, load_run_config
from recount._errors import RecountError

_PREFIX = "cmd_"


def _discover_commands() -> dict[str, Callable[[RunConfig], dict[str, Any]]]:
    """Map subcommand names (`detect-bots`) to the `cmd_*` functions."""
    found: dict[str, Callable[[RunConfig], dict[str, Any]]] = {}
    for name, obj in inspect.getmembers(commands, inspect.isfunction):
        if name.startswith(_PREFIX) and obj.__module__ == commands.__name__:
            found[name[len(_PREFIX) :].replace("_", "-")] = obj
    return found


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field; unset flags leave the config file value alone."""
    for name, kind in field_types().items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, dest=name, action="store_true", default=None)
        else:
            parser.add_argument(flag, dest=name, type=kind, default=None, metavar=name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recount",
        description="Similarity decay analysis and recomputation scheduling.",
    )
    parser.add_argument("--config", default="", help="key = value config file")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, func in _discover_commands().items():
        doc = (func.__doc__ or "").strip().split("\n")[0]
        sub = subparsers.add_parser(name, help=doc, description=doc)
        _add_config_flags(sub)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    overrides = {
        name: getattr(args, name)
        for name in field_types()
        if getattr(args, name, None) is not None
    }
    func = _discover_commands()[args.command]
    try:
        config = load_run_config(args.config or None, overrides)
        result = func(config)
    except RecountError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code

    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
