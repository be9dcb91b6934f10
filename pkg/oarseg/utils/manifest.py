"""
Run manifests: one self-describing JSON record per output directory.
"""

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from oarseg import __version__
from oarseg.utils.errors import FileAccessError

MANIFEST_NAME = "run_manifest.json"

# Fields that legitimately differ between two reproductions of a run
VOLATILE_FIELDS = ("started_at", "wall_seconds", "host")


@dataclass
class RunManifest:
    """Everything needed to replay one CLI command."""
    command: str
    argv: List[str]
    config: Dict[str, Any]
    seeds: Dict[str, int] = field(default_factory=dict)
    input_hash: str = ""
    tool_version: str = __version__
    deterministic: bool = False
    threads: int = 1
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    wall_seconds: float = 0.0
    host: Dict[str, str] = field(default_factory=lambda: {
        "python": platform.python_version(),
        "numpy": np.__version__,
    })

    def write(self, out_dir: Path) -> Path:
        """Write the manifest into ``out_dir``; replaces a previous one."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        """Load a manifest file.

        Raises:
            FileAccessError: If the file is missing or malformed
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise FileAccessError(f"Manifest not found: {path}", "FILE_001")
        try:
            with open(path) as f:
                payload = json.load(f)
            return cls(**payload)
        except (json.JSONDecodeError, TypeError) as e:
            raise FileAccessError(f"Malformed manifest {path}: {e}", "FILE_004")

    def stable_view(self) -> Dict[str, Any]:
        """Manifest content without wall-clock and host fields."""
        payload = asdict(self)
        for key in VOLATILE_FIELDS:
            payload.pop(key, None)
        return payload


def hash_inputs(paths: Iterable[Optional[str]]) -> str:
    """SHA-256 over every file below the given paths (sorted, path-tagged).

    Args:
        paths: Files or directories; missing entries and None are skipped

    Returns:
        Hex digest
    """
    digest = hashlib.sha256()
    for raw in sorted(str(p) for p in paths if p):
        root = Path(raw)
        if not root.exists():
            continue
        files = [root] if root.is_file() else sorted(p for p in root.rglob("*") if p.is_file())
        for file in files:
            if file.name == MANIFEST_NAME or file.suffix == ".log":
                continue
            rel = file.name if root.is_file() else file.relative_to(root).as_posix()
            digest.update(rel.encode())
            with open(file, "rb") as f:
                for block in iter(lambda: f.read(1 << 20), b""):
                    digest.update(block)
    return digest.hexdigest()
