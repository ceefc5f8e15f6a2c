"""Run manifests: the reproducibility record embedded in every output artifact.

A manifest captures the exact command, arguments, inputs/outputs, seed,
and tool version.  The timestamp is null unless the caller supplies one,
so rerunning the same invocation yields byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunManifest:
    command: str
    params: dict
    inputs: dict[str, str]
    outputs: dict[str, str]
    seed: int | None = None
    version: str = ""
    timestamp: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "command": self.command,
            "params": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
        }
        if self.extra:
            doc["extra"] = self.extra
        return doc


def write_json_artifact(path: Path, doc: dict, manifest: RunManifest) -> None:
    """Write a JSON artifact with its manifest embedded under "manifest"."""
    payload = dict(doc)
    payload["manifest"] = manifest.to_dict()
    path.write_text(json.dumps(payload, indent=2) + "\n")


def write_csv_artifact(
    path: Path, header: list[str], rows: list[tuple], manifest: RunManifest
) -> None:
    """Write a CSV artifact; the manifest rides in a leading '#' comment line."""
    lines = ["# manifest: " + json.dumps(manifest.to_dict(), separators=(",", ":"))]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n")


def _format_cell(cell) -> str:
    if isinstance(cell, float):
        return repr(cell)
    return str(cell)
