"""Deterministic writers: CSV tables, JSON reports and ``.fld`` snapshot files.

Floats are written with 17 significant digits so tables round-trip exactly.
Wall-clock data never enters a payload; it goes to the ``meta.json`` sidecar.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else str(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def write_series(path: Path, series: dict[str, np.ndarray]) -> Path:
    cols = list(series)
    return write_csv(path, cols, zip(*(series[c] for c in cols)))


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_meta(out: Path, command: str, started: float, extra: dict | None = None) -> Path:
    meta = {
        "command": command,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    meta.update(extra or {})
    return write_json(Path(out) / "meta.json", meta)


# ---------------------------------------------------------------------------
# snapshot files


def write_fld(path: Path, field: np.ndarray, t: float, name: str) -> Path:
    """One JSON header line, then little-endian float64 values in row-major order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(field, dtype="<f8")
    header = json.dumps({"shape": list(arr.shape), "t": float(t), "field": name}, sort_keys=True)
    with path.open("wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(arr.tobytes(order="C"))
    return path


def read_fld(path: Path) -> tuple[np.ndarray, dict]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = tuple(header["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload has {data.size} values, header shape {shape}")
    return data.reshape(shape).astype(float), header


def fld_to_csv(path: Path, out: Path | None = None) -> Path:
    """Companion CSV export (one row per radial node)."""
    field, _ = read_fld(path)
    out = Path(out) if out else Path(path).with_suffix(".csv")
    return write_csv(out, [f"j{j}" for j in range(field.shape[1])], field.tolist())
