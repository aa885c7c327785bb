"""CSV and JSON artifact writers with deterministic number formatting."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from hardball.skorohod import ReflectionLedger, Trajectory


def fmt(v) -> str:
    """17 significant digits: round-trips every double exactly."""
    return format(float(v), ".17g")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    steps, n, d = traj.positions.shape
    cols = ["step", "time", "ball"] + [f"x{c}" for c in range(d)]
    lines = [",".join(cols)]
    for i in range(steps):
        t = fmt(traj.times[i])
        for j in range(n):
            lines.append(",".join([str(i), t, str(j)] + [fmt(v) for v in traj.positions[i, j]]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_ledger_csv(path, traj: Trajectory, ledger: ReflectionLedger) -> None:
    lines = ["step,time,j,k,dL,cumulative_L"]
    running: dict = {}
    for i, st in enumerate(ledger.steps):
        t = fmt(traj.times[i + 1])
        for (j, k), dl in zip(st.pairs, st.dL):
            if dl <= 0:
                continue
            key = (int(j), int(k))
            running[key] = running.get(key, 0.0) + float(dl)
            lines.append(f"{i + 1},{t},{key[0]},{key[1]},{fmt(dl)},{fmt(running[key])}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_histograms_csv(path, rows) -> None:
    lines = ["bin_left,bin_right,count_before,count_after"]
    lines += [f"{fmt(a)},{fmt(b)},{u},{v}" for a, b, u, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no infinities
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
