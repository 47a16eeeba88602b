"""Run manifests: what was run, with which settings, and which files it wrote."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Manifest written at the start of a run and rewritten at its end.

    Every output file must be passed to :meth:`declare`; the final write
    records a SHA-256 digest for each.
    """

    path: Path
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    status: str = "running"
    started: float = field(default_factory=time.time)

    def __post_init__(self):
        self.path = Path(self.path)

    def declare(self, path):
        rel = str(Path(path).resolve().relative_to(self.path.parent.resolve()))
        if rel not in self.files:
            self.files.append(rel)

    def as_dict(self):
        base = self.path.parent
        digests = {f: file_digest(base / f) for f in self.files if (base / f).exists()}
        return _jsonable(dict(
            command=self.command, code_version=__version__, config=self.config,
            seeds=self.seeds, tolerances=self.tolerances, threads=kernels.configure_threads(),
            python=platform.python_version(), numpy=np.__version__,
            started=_dt.datetime.fromtimestamp(self.started, _dt.timezone.utc).isoformat(),
            wall_clock_s=time.time() - self.started, status=self.status,
            files=self.files, sha256=digests, results=self.results))

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return self.path

    def finish(self, status="ok", **results):
        self.status = status
        self.results.update(results)
        return self.write()
