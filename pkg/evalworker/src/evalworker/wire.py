"""Line protocol: one JSON object per line, sorted keys, no padding."""

from __future__ import annotations

import json

PROTOCOL_VERSION = 1
METRICS = ("auc_roc", "c_index")
STATUSES = ("ok", "failed", "timeout")


class WireError(ValueError):
    """A line that cannot be read as a protocol message."""


def encode(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def decode(line: str) -> dict:
    try:
        payload = json.loads(line)
    except (json.JSONDecodeError, RecursionError) as e:
        raise WireError(f"not valid JSON: {e}") from None
    if not isinstance(payload, dict) or "type" not in payload:
        raise WireError("message must be an object with a 'type' field")
    return payload


def hello(metrics, algorithms) -> dict:
    return {"type": "hello", "protocol_version": PROTOCOL_VERSION,
            "capabilities": {"metrics": sorted(metrics),
                             "algorithms": sorted(algorithms)}}


def result(request_id: str, status: str, fold_scores=(), message: str | None = None) -> dict:
    if status not in STATUSES:
        raise ValueError(f"unknown status {status!r}")
    return {"type": "result", "request_id": request_id, "status": status,
            "fold_scores": [float(s) for s in fold_scores], "message": message}
