"""Deterministic CSV/JSON output.

Floats are written with ``repr`` (shortest round-tripping decimal), JSON
keys are sorted, and every file is written to a temporary sibling and then
renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import ChainSystem, ControlSchedule


def clean(obj):
    """Plain-JSON copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def pulse_rows(sys: ChainSystem, pulses: ControlSchedule, u_of_t, times: Sequence[float],
               u_names: Sequence[str], flag_channels: Sequence[str] = ("pump", "stokes")):
    """Header and rows for a pulse table.

    Flagged (infinite-amplitude) samples leave the amplitude empty and set
    the ``<channel>_unbounded`` column to 1.
    """
    chans = list(sys.channels)
    flagged = [c for c in flag_channels if c in chans]
    header = ["time"] + list(u_names) + chans + [f"{c}_unbounded" for c in flagged]
    rows = []
    for t in times:
        t = float(t)
        vals = pulses.evaluator(t) if pulses.evaluator is not None else pulses.at(t)
        us = u_of_t(t)
        amp = []
        for c in chans:
            amp.append(None if pulses.is_unbounded(c, t) else float(vals[c]))
        rows.append([t] + [float(u) for u in us] + amp
                    + [pulses.is_unbounded(c, t) for c in flagged])
    return header, rows


def kicks_table(pulses: ControlSchedule) -> list[dict]:
    return [{"time": q.time, "channel": q.channel, "area": q.area} for q in pulses.kicks]
