"""CSV/JSON output helpers with a fixed, reproducible text format."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fmt(value: Any) -> str:
    """17 significant digits; ``None`` and NaN become an empty cell."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    if value == 0.0:
        # no "-0" in output
        return "0"
    return format(value, ".17g")


def write_grid_csv(path: "str | Path", header: Sequence[str], xs, ys, *columns) -> None:
    """Write a tensor-grid dataset row by row (``y`` outer, ``x`` inner).

    Each column is a 2-D array indexed ``[iy, ix]``.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                writer.writerow([fmt(x), fmt(y)] + [fmt(col[iy, ix]) for col in columns])


def write_rows_csv(path: "str | Path", header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: "str | Path", payload: Any) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def sha256_file(path: "str | Path") -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
