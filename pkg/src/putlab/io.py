"""Report emission: fixed float formatting, atomic writes, CSV/JSON layouts."""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    """Shortest round-trip text for a float (never more than 17 significant digits)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def write_atomic(path: str | os.PathLike, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.chmod(tmp, 0o666 & ~_umask())
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> Path:
    return write_atomic(path, csv_text(header, rows))


def jsonable(obj):
    """Plain JSON types; NaN and infinities become null, enums their value."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "as_dict"):
        return jsonable(obj.as_dict())
    if dataclasses.is_dataclass(obj):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def json_text(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return write_atomic(path, json_text(obj))


# layouts

SURFACE_HEADER = ("t", "x", "u", "active")
BOUNDARY_HEADER = ("T", "X_f", "t", "s", "source")
ASYMPTOTE_HEADER = ("tau", "X_evans", "X_extracted", "rel_gap")
FIELD_HEADER = ("t", "x", "w", "w_x", "w_xx", "w_xt", "v", "valid")


def surface_rows(surface, stride: int = 1):
    """Row-major by time level."""
    g = surface.grid
    x, t = g.x, g.t
    for n in range(0, g.nt, stride):
        for i in range(g.nx):
            yield (t[n], x[i], surface.u[n, i], int(surface.active[n, i]))


def boundary_rows(curve):
    """Ordered by calendar time, so the last row is the sample nearest expiry."""
    order = np.argsort(curve.T, kind="stable")
    T, X, t, s = curve.T[order], curve.X[order], curve.t[order], curve.s[order]
    return [(T[i], X[i], t[i], s[i], curve.source.value) for i in range(order.size)]


def asymptote_rows(profile):
    return list(zip(profile.tau, profile.X_evans, profile.X_extracted, profile.rel_gap))


def field_rows(field, stride: int = 1):
    v = field.v if field.v is not None else np.full_like(field.w, np.nan)
    for n in range(0, field.t.size, stride):
        for i in range(field.x.size):
            if not (field.x[i] > field.s[n] and field.x[i] < field.tp.d):
                continue
            yield (
                field.t[n],
                field.x[i],
                field.w[n, i],
                field.w_x[n, i],
                field.w_xx[n, i],
                field.w_xt[n, i],
                v[n, i],
                int(field.valid[n, i]),
            )
