"""CSV and JSON files used by the command line pipeline.

Every file written here starts with provenance: CSV files with a
``# seed=<s>, config_sha256=<h>`` comment line, JSON files with top-level
``seed`` and ``config_sha256`` keys. JSON is written with sorted keys so that
identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .sampling import SurvivalDataset

__all__ = [
    "SchemaError",
    "write_json",
    "read_json",
    "write_csv",
    "read_csv",
    "write_dataset_csv",
    "read_dataset_csv",
    "read_covariates_csv",
]


class SchemaError(ValueError):
    """Malformed input file; the message names the file, line and field."""


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_json(path, obj: dict, seed: int | None = None, config_sha256: str | None = None) -> None:
    out = dict(obj)
    if seed is not None:
        out["seed"] = seed
    if config_sha256 is not None:
        out["config_sha256"] = config_sha256
    Path(path).write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None


def _comment(meta: dict) -> str:
    return "# " + ", ".join(f"{k}={v}" for k, v in meta.items())


def write_csv(path, header: list[str], rows, meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_comment(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])


def read_csv(path) -> tuple[dict, list[str], list[tuple[int, list[str]]]]:
    """Returns (comment metadata, header, [(line number, fields)])."""
    meta: dict = {}
    header = None
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                for part in line[1:].split(","):
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k.strip()] = v.strip()
                continue
            if not line.strip():
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = [f.strip() for f in fields]
            else:
                rows.append((lineno, fields))
    if header is None:
        raise SchemaError(f"{path}: missing header line")
    return meta, header, rows


def _float(path, lineno, name, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: field {name!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise SchemaError(f"{path}: line {lineno}: field {name!r} is not finite")
    return v


def write_dataset_csv(path, ds: SurvivalDataset, meta: dict) -> None:
    header = [f"x{i}" for i in range(ds.covariate_dim)] + ["time", "event"]
    rows = ([*xr, t, int(e)] for xr, t, e in zip(ds.x, ds.time, ds.event))
    write_csv(path, header, rows, meta)


def _covariate_columns(path, header) -> list[int]:
    cols = [i for i, h in enumerate(header) if h.startswith("x")]
    expected = [f"x{i}" for i in range(len(cols))]
    if [header[i] for i in cols] != expected:
        raise SchemaError(f"{path}: line 1: covariate columns must be named x0..x{len(cols) - 1} in order")
    return cols


def read_dataset_csv(path, n_events: int | None = None) -> SurvivalDataset:
    meta, header, rows = read_csv(path)
    for name in ("time", "event"):
        if name not in header:
            raise SchemaError(f"{path}: header is missing field {name!r}")
    cols = _covariate_columns(path, header)
    ti, ei = header.index("time"), header.index("event")
    x = np.empty((len(rows), len(cols)))
    t = np.empty(len(rows))
    e = np.empty(len(rows), dtype=np.int64)
    for r, (lineno, f) in enumerate(rows):
        if len(f) != len(header):
            raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(f)}")
        for c, ci in enumerate(cols):
            x[r, c] = _float(path, lineno, header[ci], f[ci])
        t[r] = _float(path, lineno, "time", f[ti])
        if t[r] <= 0:
            raise SchemaError(f"{path}: line {lineno}: field 'time' must be positive")
        ev = _float(path, lineno, "event", f[ei])
        if ev != int(ev) or ev < 0:
            raise SchemaError(f"{path}: line {lineno}: field 'event' must be a nonnegative integer")
        e[r] = int(ev)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    k = int(e.max()) + 1 if n_events is None else n_events
    if int(e.max()) >= k:
        raise SchemaError(f"{path}: field 'event' exceeds {k - 1}")
    return SurvivalDataset(x, t, e, k, {"source": str(path), **meta})


def read_covariates_csv(path) -> np.ndarray:
    """Covariate matrix from any CSV with x0..x{D-1} columns (other columns ignored)."""
    _, header, rows = read_csv(path)
    cols = _covariate_columns(path, header)
    x = np.empty((len(rows), len(cols)))
    for r, (lineno, f) in enumerate(rows):
        if len(f) != len(header):
            raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(f)}")
        for c, ci in enumerate(cols):
            x[r, c] = _float(path, lineno, header[ci], f[ci])
    return x
