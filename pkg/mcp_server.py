#!/usr/bin/env python3
"""
MCP server that auto-discovers the pipeline commands in recount/commands.py.
"""

import inspect
import pathlib
from collections.abc import Callable
from typing import Any

from fastmcp import FastMCP

from recount import commands
from recount._config import RunConfig, load_run_config
from recount._errors import RecountError

mcp = FastMCP("Recount")

_PREFIX = "cmd_"


def _as_tool(func: Callable[[RunConfig], dict[str, Any]]) -> Callable[..., dict[str, Any]]:
    """Wrap a command so it takes config overrides and reports errors as data."""

    def tool(overrides: dict[str, Any] | None = None, config_path: str = "") -> dict[str, Any]:
        try:
            config = load_run_config(config_path or None, overrides)
            return func(config)
        except RecountError as exc:
            return {"error": str(exc), "exit_code": exc.exit_code}

    tool.__name__ = func.__name__
    tool.__doc__ = func.__doc__
    return tool


def _discover_and_register() -> None:
    """
    Register every `cmd_*` function of recount.commands as an MCP tool.
    """
    ns_doc = (commands.__doc__ or "").strip().split("\n")[0]

    for name, obj in inspect.getmembers(commands, inspect.isfunction):
        if not name.startswith(_PREFIX) or obj.__module__ != commands.__name__:
            continue
        qualified_name = name[len(_PREFIX) :]
        func_doc = (obj.__doc__ or "").strip()
        description = (
            f"{func_doc}\n\n`overrides` maps RunConfig fields to values; "
            f"`config_path` selects a key = value config file."
        )
        if ns_doc:
            description = f"[recount] {ns_doc}\n\n{description}"
        mcp.tool(
            name=qualified_name,
            description=description,
        )(_as_tool(obj))


_discover_and_register()


if __name__ == "__main__":
    import json
    import sys

    server_dir = pathlib.Path(__file__).parent.resolve()

    lm_studio_config = {
        "recount": {
            "command": "uv",
            "args": ["run", "python", "mcp_server.py"],
            "cwd": str(server_dir),
        }
    }

    print(
        "LM Studio mcp.json config:",
        file=sys.stderr,
    )
    print(
        json.dumps(lm_studio_config, indent=2),
        file=sys.stderr,
    )
    print(file=sys.stderr)

    mcp.run(transport="stdio")
