"""Run manifests: the resolved configuration and input digests of a run,
written to the output directory before any compute starts. Two runs with
identical manifests produce identical outputs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs: dict, seed: int | None) -> Path:
    """Serialize the manifest as deterministic JSON; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": {"name": "adahash", "version": __version__},
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": file_digest(path)}
            for name, path in inputs.items()
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
