"""Run manifests: config snapshot, seeds and content hashes of every output file."""
from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tool_version() -> str:
    from . import __version__
    return __version__


def host_fingerprint() -> dict:
    import numpy
    import torch
    return {"python": platform.python_version(), "platform": platform.platform(),
            "machine": platform.machine(), "numpy": numpy.__version__, "torch": torch.__version__}


@dataclass
class RunManifest:
    config: dict
    seeds: dict
    artifacts: dict[str, str] = field(default_factory=dict)
    tool_version: str = field(default_factory=tool_version)
    wall_clock: float = 0.0
    host: dict = field(default_factory=host_fingerprint)
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))

    @classmethod
    def for_directory(cls, run_dir, config: dict, seeds: dict, wall_clock: float = 0.0):
        """Hash every file under ``run_dir`` except the manifest itself."""
        root = Path(run_dir)
        arts = {str(p.relative_to(root)): sha256_file(p) for p in sorted(root.rglob("*"))
                if p.is_file() and p.name != MANIFEST_NAME}
        return cls(config, seeds, arts, wall_clock=wall_clock)

    def write(self, run_dir) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        return cls(**json.loads((Path(run_dir) / MANIFEST_NAME).read_text()))

    def verify(self, run_dir) -> list[str]:
        """Relative paths whose current content differs from the recorded hash."""
        root = Path(run_dir)
        bad = []
        for rel, digest in self.artifacts.items():
            p = root / rel
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(rel)
        return bad
