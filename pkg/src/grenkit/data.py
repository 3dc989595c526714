"""CSV ingestion for survival (``y,delta[,w1..wd]``) and regression (``a,y[,w1..wd]``) files."""

from __future__ import annotations

import csv

import numpy as np

from .survival import SurvivalSample

__all__ = ["SchemaError", "read_survival_csv", "read_regression_csv", "format_float", "write_xy_csv"]


class SchemaError(ValueError):
    """Input file does not match the expected schema; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _read(path, first, second):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    if header[:2] != [first, second]:
        raise SchemaError(f"header must start with '{first},{second}'", 1)
    cov = header[2:]
    for j, name in enumerate(cov, start=1):
        if name != f"w{j}":
            raise SchemaError(f"covariate columns must be named w1..wd, got {name!r}", 1)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise SchemaError("non-numeric field", lineno) from None
        if not all(np.isfinite(vals)):
            raise SchemaError("non-finite field", lineno)
        data.append((lineno, vals))
    if not data:
        raise SchemaError("no data rows", 2)
    return data, len(cov)


def read_survival_csv(path) -> SurvivalSample:
    data, d = _read(path, "y", "delta")
    for lineno, vals in data:
        if vals[0] <= 0:
            raise SchemaError("y must be positive", lineno)
        if vals[1] not in (0.0, 1.0):
            raise SchemaError("delta must be 0 or 1", lineno)
    arr = np.array([v for _, v in data])
    return SurvivalSample(arr[:, 0], arr[:, 1].astype(int), arr[:, 2:] if d else None)


def read_regression_csv(path):
    """Return ``(a, y, w)``; ``w`` has shape ``(n, d)``."""
    data, d = _read(path, "a", "y")
    arr = np.array([v for _, v in data])
    return arr[:, 0], arr[:, 1], arr[:, 2:]


def format_float(v) -> str:
    """17 significant digits: round-trips every double."""
    return format(float(v), ".17g")


def write_xy_csv(path_or_fh, x, values, header=("x", "estimate")):
    lines = [",".join(header)]
    lines += [f"{format_float(a)},{format_float(b)}" for a, b in zip(x, values)]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
    else:
        with open(path_or_fh, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
