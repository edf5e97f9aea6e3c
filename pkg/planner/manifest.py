"""Run manifests embedded in every artifact the command line writes."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import pandas as pd

from planner import __version__

logger = logging.getLogger(__name__)

MANIFEST_PREFIX = "# manifest"


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


@dataclass(frozen=True)
class RunManifest:
    """What produced an artifact: command, resolved configuration and outputs."""

    command: str
    config: Mapping[str, Any] = field(default_factory=dict)
    outputs: Tuple[str, ...] = ()
    tool_version: str = __version__

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": dict(self.config),
            "outputs": list(self.outputs),
            "tool_version": self.tool_version,
        }

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()


def write_csv(table: pd.DataFrame, path: str, manifest: RunManifest, index: bool = False) -> None:
    """CSV with the manifest hash and body as leading comment lines."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{MANIFEST_PREFIX} sha256={manifest.digest}\n")
        f.write(f"{MANIFEST_PREFIX} {canonical_json(manifest.to_dict())}\n")
        table.to_csv(f, index=index, lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(table), path)


def write_json(payload: Mapping[str, Any], path: str, manifest: RunManifest) -> None:
    document = {
        **payload,
        "manifest": manifest.to_dict(),
        "manifest_sha256": manifest.digest,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.info("Wrote %s", path)


def read_manifest_digest(path: str) -> Optional[str]:
    """The sha256 recorded in a CSV or JSON artifact, if any."""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.startswith(MANIFEST_PREFIX):
            return first.strip().split("sha256=", 1)[1]
        f.seek(0)
        try:
            return json.load(f).get("manifest_sha256")
        except json.JSONDecodeError:
            return None
