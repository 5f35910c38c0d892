"""CSV ingestion and writers.

All numeric fields are written with ``repr(float)`` so a write/read cycle
is bit-exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import MalformedCSV, NonContiguousTime


def ingest_csv(path) -> np.ndarray:
    """Read observations from a ``t,y`` file with ``t = 1..T`` in order."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MalformedCSV(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "y"]:
            raise MalformedCSV(f"{path}: expected header 't,y', got {header}")
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise MalformedCSV(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                t = int(row[0])
                y = float(row[1])
            except ValueError:
                raise MalformedCSV(f"{path}:{lineno}: cannot parse {row}") from None
            if not np.isfinite(y):
                raise MalformedCSV(f"{path}:{lineno}: non-finite observation")
            if t != len(values) + 1:
                raise NonContiguousTime(f"{path}:{lineno}: expected t={len(values) + 1}, got {t}")
            values.append(y)
    if not values:
        raise MalformedCSV(f"{path}: no observations")
    return np.array(values)


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_observations(path, y) -> Path:
    return write_rows(path, ["t", "y"], ((t, float(v)) for t, v in enumerate(y, start=1)))


def read_rows(path) -> list:
    """Rows of a CSV as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
