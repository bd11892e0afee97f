"""Lossless number formatting, JSON emission and atomic file writes."""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x):
    """Float with 17 significant digits (round-trips every double)."""
    return format(float(x), ".17g")


def _json_scalar(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "null"
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return fmt(v)
    if isinstance(v, str):
        import json

        return json.dumps(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps_json(obj, indent=2, _level=0):
    """JSON text with every float at 17 significant digits.

    NaN becomes ``null`` and infinities the strings ``"inf"``/``"-inf"``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_scalar(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json_scalar(v) for v in obj) + "]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _json_scalar(obj)


def parse_float(v):
    """Inverse of the sentinel encoding used by :func:`dumps_json`."""
    if v is None:
        return float("nan")
    if isinstance(v, str):
        return float(v)
    return float(v)


def sha256_bytes(data: bytes):
    return hashlib.sha256(data).hexdigest()


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return sha256_bytes(data)


def csv_text(columns, rows):
    """CSV with a header line and 17-digit floats; ``rows`` are dicts or sequences."""
    lines = [",".join(columns)]
    for r in rows:
        vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) and not isinstance(v, bool) else fmt(v) for v in vals))
    return "\n".join(lines) + "\n"
