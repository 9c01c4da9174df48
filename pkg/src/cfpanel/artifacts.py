"""On-disk formats: one-record-per-line JSON forecast summaries and a binary
sidecar holding full predictive draws."""
from __future__ import annotations

import json
import os
import re
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError

_HEADER = re.compile(rb"^firm_id=(?P<fid>.*) rows=(?P<rows>\d+) cols=(?P<cols>\d+) dtype=<f8 order=C\n$")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_records(path, records: Iterable[dict]) -> int:
    """Write records as JSON lines with sorted keys; non-finite floats become null."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(_clean(rec), sort_keys=True, allow_nan=False))
            fh.write("\n")
            n += 1
    return n


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_draws(path, items: Iterable[tuple]) -> None:
    """Write (firm_id, 2-d array) pairs.

    Each record is a text header line
    ``firm_id=<id> rows=<r> cols=<c> dtype=<f8 order=C`` followed by
    r*c little-endian float64 values in row-major order.
    """
    with open(path, "wb") as fh:
        for fid, arr in items:
            a = np.ascontiguousarray(arr, dtype="<f8")
            if a.ndim != 2:
                raise ValueError("draw arrays must be 2-d")
            sid = str(fid)
            if "\n" in sid:
                raise ValueError("firm id may not contain a newline")
            fh.write(f"firm_id={sid} rows={a.shape[0]} cols={a.shape[1]} dtype=<f8 order=C\n".encode())
            fh.write(a.tobytes(order="C"))


def iter_draws(path) -> Iterator[tuple]:
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                return
            m = _HEADER.match(line)
            if not m:
                raise DataError(f"{path}: malformed sidecar header {line[:80]!r}")
            r, c = int(m["rows"]), int(m["cols"])
            buf = fh.read(8 * r * c)
            if len(buf) != 8 * r * c:
                raise DataError(f"{path}: truncated record for {m['fid'].decode()}")
            yield m["fid"].decode(), np.frombuffer(buf, dtype="<f8").reshape(r, c).copy()


def read_draws(path) -> dict:
    return dict(iter_draws(path))


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
