"""Atomic file output and stable JSON/CSV serialization."""

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

__all__ = ["atomic_write_text", "atomic_write_bytes", "dumps_json", "rows_to_csv", "save_map", "load_map"]


def atomic_write_bytes(path, data):
    """Write ``data`` to a temporary file next to ``path`` and rename it over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        # JSON has no inf/nan; spell them out
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    return obj


def dumps_json(obj):
    """UTF-8 JSON with sorted keys, so equal inputs give identical bytes."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def rows_to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def save_map(path, P):
    """Save a map as ``.npy``; the format header records shape, dtype and byte order."""
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(P, dtype="<f8"))
    atomic_write_bytes(path, buf.getvalue())


def load_map(path):
    return np.load(path, allow_pickle=False)
