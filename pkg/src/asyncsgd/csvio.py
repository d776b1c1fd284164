"""CSV schemas shared by the engine, the CLI, and the plotting frontend.

Every file starts with a single `#`-prefixed comment line carrying the
full configuration as JSON, followed by a header row.  Readers skip any
leading comment lines.

Schemas:
  trace       epoch,steps,gap,epoch_seconds,max_delay,mean_delay
              (delay columns empty for threaded runs)
  replicates  replicate,n,coord_0..coord_{d-1}
              (rows are sqrt(n) * (x_bar - x_star); n is the averaged count)
  gap sweep   cores,epoch,gap_mean,gap_stderr
  speedup     cores,async_epoch_seconds_mean,async_epoch_seconds_stderr,
              async_speedup_mean,async_speedup_stderr,
              sync_epoch_seconds_mean,sync_epoch_seconds_stderr,
              sync_speedup_mean,sync_speedup_stderr
  batch sweep batch,cores,epoch_seconds_mean,epoch_seconds_stderr,
              speedup_mean,speedup_stderr
"""

from __future__ import annotations

import csv
import json

import numpy as np

__all__ = [
    "write_trace_csv",
    "read_trace_csv",
    "write_replicates_csv",
    "read_replicates_csv",
    "write_rows_csv",
    "read_rows_csv",
]

TRACE_HEADER = ["epoch", "steps", "gap", "epoch_seconds", "max_delay", "mean_delay"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace_csv(path, trace, config_note: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(config_note, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in trace:
            w.writerow([t.epoch, t.steps, _fmt(t.gap), _fmt(t.epoch_seconds),
                        _fmt(t.max_delay), _fmt(t.mean_delay)])


def _read_csv(path):
    """(header, rows, config_note) with leading comment lines stripped."""
    note = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            payload = ln.lstrip("#").strip()
            if payload.startswith("config:"):
                note = json.loads(payload[len("config:"):].strip())
            continue
        body.append(ln)
    rows = list(csv.reader(body))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return rows[0], rows[1:], note


def read_trace_csv(path):
    """(records, config_note) where records is a list of dicts."""
    header, rows, note = _read_csv(path)
    if header != TRACE_HEADER:
        raise ValueError(f"{path}: unexpected trace header {header}")
    out = []
    for r in rows:
        out.append({
            "epoch": int(r[0]), "steps": int(r[1]), "gap": float(r[2]),
            "epoch_seconds": float(r[3]),
            "max_delay": int(r[4]) if r[4] else None,
            "mean_delay": float(r[5]) if r[5] else None,
        })
    return out, note


def write_replicates_csv(path, errors: np.ndarray, n: int,
                         config_note: dict) -> None:
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    d = errors.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(config_note, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["replicate", "n"] + [f"coord_{j}" for j in range(d)])
        for i, row in enumerate(errors):
            w.writerow([i, n] + [repr(float(v)) for v in row])


def read_replicates_csv(path):
    """(errors R x d, n, config_note)."""
    header, rows, note = _read_csv(path)
    if header[:2] != ["replicate", "n"] or not header[2].startswith("coord_"):
        raise ValueError(f"{path}: unexpected replicate header {header}")
    errors = np.array([[float(v) for v in r[2:]] for r in rows])
    n = int(rows[0][1]) if rows else 0
    return errors, n, note


def write_rows_csv(path, header: list, rows: list, config_note: dict) -> None:
    """Generic writer for the aggregated sweep schemas."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(config_note, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_rows_csv(path):
    """(header, rows-as-string-lists, config_note)."""
    return _read_csv(path)
