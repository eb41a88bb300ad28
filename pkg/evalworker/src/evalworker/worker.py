"""The serve loop: hello on startup, then one result line per request line.

The worker handles a single request at a time, echoes request ids exactly,
and never exits on a bad line; only end-of-input (or a broken output pipe)
stops it.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Mapping

from . import wire
from .bindings import AlgorithmBinding, capabilities, default_bindings
from .datasets import DatasetCache
from .runner import evaluate


def _reply_for_line(line: str, bindings, cache) -> dict:
    try:
        payload = wire.decode(line)
    except wire.WireError as e:
        return wire.result("", "failed", (), f"unreadable request: {e}")
    request_id = str(payload.get("request_id", ""))
    if payload.get("type") != "eval":
        return wire.result(request_id, "failed", (),
                           f"unsupported message type {payload.get('type')!r}")
    try:
        outcome = evaluate(payload, bindings, cache)
    except Exception as e:  # must stay alive whatever the request contained
        return wire.result(request_id, "failed", (),
                           f"internal error: {type(e).__name__}: {e}")
    return wire.result(request_id, outcome.status, outcome.fold_scores,
                       outcome.message)


def serve(data_dir: Path,
          bindings: Mapping[str, AlgorithmBinding] | None = None,
          stdin=None, stdout=None) -> None:
    """Speak the line protocol on the given streams until end-of-input."""
    bindings = default_bindings() if bindings is None else dict(bindings)
    raw_in = sys.stdin.buffer if stdin is None else stdin
    out = sys.stdout if stdout is None else stdout
    cache = DatasetCache(data_dir)

    def emit(payload: dict) -> None:
        out.write(wire.encode(payload) + "\n")
        out.flush()

    emit(wire.hello(wire.METRICS, capabilities(bindings)))
    for raw in raw_in:
        line = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
        line = line.strip()
        if not line:
            continue
        emit(_reply_for_line(line, bindings, cache))
