"""Binary ensemble files with a JSON sidecar, plus small CSV/JSON helpers.

Layout of an ensemble file (all integers little-endian):

    bytes  0..15   magic  b"NSPROJ-ENSEMBLE\\0"
    bytes 16..19   format version (u32)
    bytes 20..27   number of rows (u64)
    bytes 28..35   number of columns (u64)
    then rows * cols float64 values, row-major, little-endian

The sidecar ``<file>.json`` holds the metadata dictionary.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NSPROJ-ENSEMBLE\x00"
VERSION = 1
_HEADER = struct.Struct("<16sIQQ")


class FormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dumps_json(obj) -> str:
    """Deterministic JSON text (sorted keys, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_ensemble(path, rows, meta: dict | None = None) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f8")
    if rows.ndim != 2:
        raise ValueError("rows must be a 2-d array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())
    write_text(sidecar_path(path), dumps_json(meta or {}))


def read_ensemble(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("truncated header")
        magic, version, n, d = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError("bad magic")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        data = fh.read()
    if len(data) != 8 * n * d:
        raise FormatError(f"expected {n}x{d} values, found {len(data) // 8}")
    rows = np.frombuffer(data, dtype="<f8").reshape(n, d).astype(np.float64)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if os.path.exists(side) else {}
    return rows, meta


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()
