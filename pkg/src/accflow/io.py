"""CSV and JSON output with fixed schemas.

Floats are written with ``repr``-exact ``.17g`` formatting and integers as
integers, so a file read back with ``read_csv`` reproduces the written
values bit for bit and two runs with equal inputs give equal bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from accflow.events import EventLog

# column name -> type, per output kind
SCHEMAS: dict[str, tuple[tuple[str, type], ...]] = {
    "trajectory": (("t", float), ("vehicle_index", int), ("position", float)),
    "accidents": (("t", float), ("event", str), ("j", int), ("p", float), ("s", float), ("c", float)),
    "density": (("t", float), ("cell_center", float), ("rho", float)),
    "joint": (("t", float), ("x", float), ("rho_micro", float), ("rho_macro", float)),
    "report": (
        ("N", int), ("dx", float),
        ("err1", float), ("err2", float), ("err3", float), ("err4", float),
        ("se1", float), ("se2", float), ("se3", float), ("se4", float),
    ),
    "rates": (("dx", float), ("metric", str), ("rate", float)),
    "series": (("t", float), ("log_err1", float), ("log_err2", float), ("log_err3", float), ("log_err4", float)),
}


def _fmt(value, kind: type) -> str:
    if kind is float:
        return format(float(value), ".17g")
    if kind is int:
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, schema: str, rows: Iterable[Sequence]) -> Path:
    """Write ``rows`` (tuples in column order) under the header of ``schema``."""
    cols = SCHEMAS[schema]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name for name, _ in cols])
        for row in rows:
            if len(row) != len(cols):
                raise ValueError(f"{schema} row has {len(row)} fields, expected {len(cols)}")
            w.writerow([_fmt(v, kind) for v, (_, kind) in zip(row, cols)])
    return path


def read_csv(path: str | Path, schema: str) -> list[tuple]:
    """Parse a file written by ``write_csv``; the header must match ``schema``."""
    cols = SCHEMAS[schema]
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != [name for name, _ in cols]:
            raise ValueError(f"{path}: header {header} does not match schema {schema!r}")
        return [tuple(kind(v) for v, (_, kind) in zip(row, cols)) for row in r]


def write_accident_log(path: str | Path, log: EventLog) -> Path:
    return write_csv(path, "accidents", ((e.t, e.event, e.j, e.p, e.s, e.c) for e in log))


def trajectory_rows(times: Sequence[float], snapshots: Sequence[tuple[np.ndarray, np.ndarray]]):
    """Rows ordered by time, then by vehicle index."""
    for t, (ids, x) in zip(times, snapshots):
        order = np.argsort(ids, kind="stable")
        for i in order:
            yield t, ids[i], x[i]


def density_rows(times: Sequence[float], centers: np.ndarray, snapshots: Sequence[np.ndarray]):
    for t, rho in zip(times, snapshots):
        for xc, r in zip(centers, rho):
            yield t, xc, r


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_plain) + "\n")
    return path
