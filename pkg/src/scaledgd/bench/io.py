"""CSV readers and writers for traces, matrices and tensors."""

from __future__ import annotations

import csv
import math

import numpy as np

from ..linalg import matricize, tensorize
from ..models import ConvergenceTrace

TRACE_HEADER = ("t", "rel_error_fro", "rel_error_inf", "wall_time_s", "event")


class DataFormatError(ValueError):
    """Malformed input file; the message carries the location."""


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in trace:
            w.writerow([rec["t"], _fmt(rec["rel_error_fro"]), _fmt(rec["rel_error_inf"]),
                        _fmt(rec["wall_time"]), rec.get("event", "")])


def read_trace(path):
    tr = ConvergenceTrace()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise DataFormatError(f"{path}: missing trace header")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(TRACE_HEADER):
            raise DataFormatError(f"{path}:{lineno}: expected {len(TRACE_HEADER)} fields, got {len(row)}")
        tr.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), row[4])
    return tr


def _parse_matrix(lines, path, start=1):
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(lines), start=start):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            col = next(j for j, c in enumerate(row, start=1) if not _is_float(c))
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell {row[col - 1]!r} in column {col}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataFormatError(f"{path}:{lineno}: ragged row with {len(vals)} fields, expected {width}")
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def ingest_matrix_csv(path):
    """Rectangular numeric CSV to a float matrix; errors name the line (and column) at fault."""
    with open(path, newline="") as fh:
        return _parse_matrix(fh, path)


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def export_matrix_csv(path, X):
    X = np.asarray(X, dtype=float)
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def export_tensor_csv(path, T):
    """Mode-1 unfolding with a ``# dims n1 n2 n3`` header line."""
    T = np.asarray(T, dtype=float)
    with open(path, "w") as fh:
        fh.write("# dims " + " ".join(str(d) for d in T.shape) + "\n")
        for row in matricize(T, 1):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def ingest_tensor_csv(path):
    with open(path, newline="") as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "dims"] or len(header) != 5:
            raise DataFormatError(f"{path}:1: expected '# dims n1 n2 n3' header")
        dims = tuple(int(x) for x in header[2:])
        M = _parse_matrix(fh, path, start=2)
    return tensorize(M, 1, dims)
