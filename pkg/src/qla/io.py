"""CSV interchange for sample paths and atomic report writing."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .errors import FormatError, GridError
from .qlik import Observations


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and an atomic rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """Strict JSON (non-finite floats become null), sorted keys."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v) -> str:
    return repr(float(v))


def paths_csv(paths, long: bool = False) -> str:
    """CSV text for one path, or several in long format with a ``rep`` column."""
    paths = list(paths)
    first = paths[0]
    d, m = first.x.shape[1], first.y.shape[1]
    header = (["rep"] if long else []) + ["t"] + [f"x_{i + 1}" for i in range(d)] + [f"y_{i + 1}" for i in range(m)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for rep, p in enumerate(paths):
        for k in range(p.n + 1):
            row = [_fmt(p.t[k])] + [_fmt(v) for v in p.x[k]] + [_fmt(v) for v in p.y[k]]
            w.writerow(([rep] if long else []) + row)
    return buf.getvalue()


def ingest_csv(path, rep=None, rtol: float = 1e-9) -> Observations:
    """Read observations written by :func:`paths_csv` (or by hand).

    Requires a header with ``t``, ``x_1..x_d`` and ``y_1..y_m`` and a strictly
    increasing, equispaced time column. In long files ``rep`` picks the
    replicate (default: the first one present).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    xcols = sorted((c for c in header if c.startswith("x_")), key=lambda c: int(c[2:]))
    ycols = sorted((c for c in header if c.startswith("y_")), key=lambda c: int(c[2:]))
    if "t" not in header or not xcols or not ycols:
        raise FormatError(f"{path}: need columns t, x_1.., y_1..; got {header}")
    for cols, pre in ((xcols, "x"), (ycols, "y")):
        if [int(c[2:]) for c in cols] != list(range(1, len(cols) + 1)):
            raise FormatError(f"{path}: {pre} columns must be numbered 1..k")
    try:
        data = np.array([[float(v) for v in r] for r in rows], float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: ragged rows")
    idx = {c: i for i, c in enumerate(header)}
    if "rep" in idx:
        reps = data[:, idx["rep"]]
        pick = reps[0] if rep is None else float(rep)
        data = data[reps == pick]
        if len(data) == 0:
            raise FormatError(f"{path}: no rows for rep {rep}")
    if len(data) < 2:
        raise FormatError(f"{path}: need at least two observations")
    t = data[:, idx["t"]]
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise GridError(f"{path}: time column is not strictly increasing")
    n = len(t) - 1
    T = float(t[-1] - t[0])
    h = T / n
    if np.max(np.abs(dt - h)) > rtol * max(abs(h), 1.0) * 10 or np.max(np.abs(t - t[0] - np.arange(n + 1) * h)) > rtol * max(abs(T), 1.0):
        raise GridError(f"{path}: time grid is not equispaced")
    x = data[:, [idx[c] for c in xcols]]
    y = data[:, [idx[c] for c in ycols]]
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FormatError(f"{path}: non-finite values")
    return Observations(n, T, x, y, f"ingested({os.fspath(path)})")
