"""CSV and manifest writers shared by training, sweeps and the CLI."""

from __future__ import annotations

import json
import os
import tempfile
import time
from pathlib import Path

from . import __version__


def fmt(value) -> str:
    if isinstance(value, float):
        return "%.12g" % value
    return str(value)


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_text_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Manifest:
    """Per-run record of artifacts and stage status, written once at the end."""

    def __init__(self, config_hash: str):
        self.config_hash = config_hash
        self.artifacts: dict[str, str] = {}
        self.stages: dict[str, dict] = {}
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def stage(self, name: str, status: str, **info):
        self.stages[name] = {"status": status, **info}

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "artifacts": dict(sorted(self.artifacts.items())),
            "wall_clock_s": round(time.perf_counter() - self._t0, 3),
            "build": f"vecor {__version__}",
            "stages": self.stages,
            **self.extra,
        }

    def write(self, path):
        write_text_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")
