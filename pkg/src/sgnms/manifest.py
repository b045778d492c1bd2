"""Run manifests: enough recorded state to reproduce a command's outputs exactly.

A manifest intentionally stores no timestamps or host details, so re-running the
recorded argv against the same inputs rewrites the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

__all__ = ["RunManifest", "load_manifest", "write_manifest"]


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    toolkit_version: str = ""


def write_manifest(path: Union[str, Path], manifest: RunManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def load_manifest(path: Union[str, Path]) -> RunManifest:
    data = json.loads(Path(path).read_text())
    return RunManifest(**data)
