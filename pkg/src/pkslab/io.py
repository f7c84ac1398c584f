"""Binary snapshots and deterministic CSV tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import DomainError, OutputError

__all__ = ["MAGIC", "VERSION", "KINDS", "write_snapshot", "read_snapshot", "write_csv", "format_value"]

MAGIC = b"PKSL"
VERSION = 1
KINDS = {"particles": 0, "density": 1, "liouville": 2}
_HEADER = struct.Struct("<4sIIQIdQ")  # magic, version, kind, n, d, t, seed


def write_snapshot(path, kind: str, data, t: float, seed: int) -> Path:
    """Header (magic, version, kind, n, d, t, seed) followed by little-endian
    float64 values in row-major order.

    For particles ``n`` is the particle count and ``d`` the dimension; for grid
    fields ``n`` is the number of values and ``d`` the array rank.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown snapshot kind {kind!r}")
    arr = np.asarray(data, dtype="<f8")
    if kind == "particles":
        if arr.ndim != 2:
            raise DomainError("particle snapshots need an (N, d) array")
        n, d = arr.shape
    else:
        n, d = arr.size, arr.ndim
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, KINDS[kind], n, d, float(t), int(seed) & (2**64 - 1)))
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    except OSError as exc:
        raise OutputError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path):
    """Return ``(kind, data, t, seed)``; grid fields come back flattened unless cubic."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise OutputError(f"{path}: truncated header")
    magic, version, kind, n, d, t, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise OutputError(f"{path}: not a snapshot file (magic {magic!r}, version {version})")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    name = {v: k for k, v in KINDS.items()}[kind]
    if name == "particles":
        data = data.reshape(n, d)
    else:
        m = round(n ** (1.0 / d)) if d else n
        if d and m**d == n:
            data = data.reshape((m,) * d)
    return name, data, t, seed


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns, rows) -> Path:
    """Write a table with a header row; floats use ``repr`` so output is byte-stable."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise DomainError(f"row of length {len(row)} for {len(columns)} columns in {path.name}")
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path
