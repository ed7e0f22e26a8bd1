"""Deterministic persistence: CSV time series, JSON documents, grid dumps, manifests.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs give identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .grid import ScalarField


def manifest_name(command: str) -> str:
    return f"manifest_{command}.json"


def timing_name(command: str) -> str:
    return f"timing_{command}.json"


def artifact_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_grid(path, u: ScalarField) -> Path:
    """Row-major plain-text dump: one grid row (fixed x index) per line."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for row in u.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return path


def read_grid(path, domain) -> ScalarField:
    vals = np.loadtxt(path, ndmin=2)
    return ScalarField(domain, vals.reshape(domain.shape))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    files: dict = field(default_factory=dict)
    step_counts: dict = field(default_factory=dict)
    constants: dict | None = None

    def add_file(self, out_dir, name) -> None:
        self.files[name] = sha256_file(Path(out_dir) / name)

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / manifest_name(self.command), asdict(self))

    @classmethod
    def read(cls, out_dir, command) -> "RunManifest":
        return cls(**read_json(Path(out_dir) / manifest_name(command)))

    def verify_files(self, out_dir) -> list:
        """Names whose checksum no longer matches (or that are missing)."""
        bad = []
        for name, digest in sorted(self.files.items()):
            p = Path(out_dir) / name
            if not p.exists() or sha256_file(p) != digest:
                bad.append(name)
        return bad


def write_timing(out_dir, command: str, seconds: float) -> Path:
    """Wall-clock is kept apart from the manifest so data and manifest bytes stay reproducible."""
    return write_json(Path(out_dir) / timing_name(command), {"command": command, "wall_clock_seconds": seconds})


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
