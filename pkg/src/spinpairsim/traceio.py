"""CSV trace files and atomic output helpers.

Layout::

    # unit=us
    # protocol="rabi"
    x,contrast,sigma
    0,0,0.001
    ...

Comment lines other than ``unit`` carry JSON-encoded metadata. The sigma
column is optional. Values are written with 17 significant digits so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .spinpair import ContrastTrace

UNITS = ("us", "ns", "MHz", "N", "G")
PROTOCOL_UNITS = {
    "rabi": "us", "t1": "us", "ramsey": "us", "hahn": "us", "cpmg": "us",
    "charge": "us", "odmr": "MHz", "scaling": "N",
}


class TraceFormatError(ValueError):
    pass


class UnitMismatchWarning(UserWarning):
    pass


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_trace(trace: ContrastTrace) -> str:
    if trace.unit not in UNITS:
        raise TraceFormatError(f"unit must be one of {UNITS}, got {trace.unit!r}")
    lines = [f"# unit={trace.unit}"]
    for key, value in sorted(trace.meta.items()):
        if "=" in key or "\n" in key:
            raise TraceFormatError(f"invalid metadata key {key!r}")
        lines.append(f"# {key}={json.dumps(value, sort_keys=True)}")
    has_sigma = trace.sigma is not None
    lines.append("x,contrast,sigma" if has_sigma else "x,contrast")
    for i in range(trace.x.size):
        row = [_fmt(trace.x[i]), _fmt(trace.contrast[i])]
        if has_sigma:
            row.append(_fmt(trace.sigma[i]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def save_trace(trace: ContrastTrace, path) -> None:
    atomic_write_text(path, format_trace(trace))


def parse_trace(text: str, expected_unit: str | None = None, source: str = "<string>") -> ContrastTrace:
    unit = None
    meta = {}
    header = None
    rows = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, value = body.partition("=")
            if not sep:
                continue
            key = key.strip()
            if key == "unit":
                unit = value.strip()
                if unit not in UNITS:
                    raise TraceFormatError(f"{source}:{lineno}: unknown unit {unit!r}; expected one of {UNITS}")
            else:
                try:
                    meta[key] = json.loads(value)
                except json.JSONDecodeError:
                    meta[key] = value.strip()
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header = [f.strip() for f in fields]
            if header not in (["x", "contrast"], ["x", "contrast", "sigma"]):
                raise TraceFormatError(f"{source}:{lineno}: header must be 'x,contrast[,sigma]', got {line!r}")
            continue
        if len(fields) != len(header):
            raise TraceFormatError(f"{source}:{lineno}: expected {len(header)} columns, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise TraceFormatError(f"{source}:{lineno}: non-numeric value in {line!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise TraceFormatError(f"{source}:{lineno}: non-finite value in {line!r}")
        rows.append((lineno, values))
    if header is None or not rows:
        raise TraceFormatError(f"{source}: no data rows")
    if unit is None:
        raise TraceFormatError(f"{source}: missing '# unit=' line")
    data = np.array([v for _, v in rows])
    for (lineno, _), step in zip(rows[1:], np.diff(data[:, 0])):
        if step <= 0:
            raise TraceFormatError(f"{source}:{lineno}: x must be strictly increasing")
    sigma = data[:, 2] if len(header) == 3 else None
    if sigma is not None:
        bad = np.flatnonzero(sigma < 0)
        if bad.size:
            raise TraceFormatError(f"{source}:{rows[bad[0]][0]}: sigma must be non-negative")
    if expected_unit is not None and unit != expected_unit:
        warnings.warn(f"{source}: x unit is {unit!r}, expected {expected_unit!r}",
                      UnitMismatchWarning, stacklevel=3)
    return ContrastTrace(data[:, 0], data[:, 1], unit, sigma, meta)


def load_trace(path, expected_unit: str | None = None) -> ContrastTrace:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_trace(text, expected_unit, str(path))
