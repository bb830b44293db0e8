"""Run manifests: enough structured metadata to re-run a command exactly.

Every artifact-producing CLI command writes one manifest next to its
outputs. The manifest stores the subcommand, its full argument set, the
seed, input/output paths and the library version; re-running from it must
reproduce every primary artifact byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def write_manifest(path, command: str, args: dict, outputs: list, wall_time_s: float,
                   inputs: list | None = None, version: str | None = None):
    if version is None:
        from . import __version__ as version
    payload = {
        "command": command,
        "args": args,
        "seed": args.get("seed"),
        "inputs": inputs or [],
        "outputs": outputs,
        "version": version,
        "wall_time_s": wall_time_s,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
