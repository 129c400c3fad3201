"""Line-delimited record output with 17-significant-digit reals.

Records are JSON objects, one per line. Non-finite reals become ``null``.
"""

from __future__ import annotations

import json
import math

import numpy as np

ITERATION_FIELDS = (
    "record", "iter", "stage", "branch", "status", "losses", "soft_disparities", "hard_disparities",
    "slacks", "smf_loss", "smf_slack", "dir_sq_norm", "eta", "delta_l", "delta_g",
)
SUMMARY_FIELDS = ("record", "mode", "clients", "flags", "transition_iter", "iterations", "config", "seed", "code_version")


def _fmt(obj) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        text = format(x, ".17g")
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    return _fmt(obj)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def write_json(path, record) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(record))
        fh.write("\n")


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def validate(record: dict) -> dict:
    """Check a parsed record against the documented field lists."""
    kind = record.get("record")
    required = {"iteration": ITERATION_FIELDS, "summary": SUMMARY_FIELDS}.get(kind)
    if required is None:
        if kind in ("sweep", "comparison"):
            return record
        raise ValueError(f"unknown record kind {kind!r}")
    missing = [f for f in required if f not in record]
    if missing:
        raise ValueError(f"{kind} record lacks fields {missing}")
    return record
