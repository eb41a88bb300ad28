"""Cross-validated pipeline scoring: request/result types, metric
computations, and the dispatch wrapper that normalizes backend failures.

A backend is anything with run(request) -> EvaluationResult; the built-in
synthetic benchmark and the external worker process both satisfy it.
External workers speak a line-delimited JSON protocol over stdio: the
worker opens with a hello line announcing its capabilities, then answers
one eval request per line with one result line.
"""
from __future__ import annotations

import json
import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .space import PipelineConfig

METRICS = ("auc_roc", "c_index")
STATUSES = ("ok", "failed", "timeout")
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class EvaluationRequest:
    """One scoring job: a config, a dataset reference, and fold settings."""

    request_id: str
    config: PipelineConfig
    dataset_ref: str
    folds: int = 5
    fold_seed: int = 0
    metric: str = "auc_roc"
    time_budget_s: float = 60.0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not self.time_budget_s > 0:
            raise ValueError("time_budget_s must be positive")


@dataclass(frozen=True)
class EvaluationResult:
    """Outcome of one request; mean_score is the BO observation."""

    request_id: str
    status: str
    fold_scores: tuple[float, ...] = ()
    mean_score: float | None = None
    message: str | None = None

    @classmethod
    def ok(cls, request_id: str, fold_scores) -> "EvaluationResult":
        scores = tuple(float(s) for s in fold_scores)
        return cls(request_id, "ok", scores, float(np.mean(scores)))

    @classmethod
    def failure(cls, request_id: str, status: str, message: str) -> "EvaluationResult":
        return cls(request_id, status, (), None, message)


def evaluate(request: EvaluationRequest, backend) -> EvaluationResult:
    """Run a request on a backend and enforce the result contract."""
    try:
        result = backend.run(request)
    except TimeoutError as e:
        return EvaluationResult.failure(request.request_id, "timeout", str(e))
    except Exception as e:
        return EvaluationResult.failure(request.request_id, "failed", f"{type(e).__name__}: {e}")
    return conform_result(request, result)


def conform_result(request: EvaluationRequest, result: EvaluationResult) -> EvaluationResult:
    """Downgrade any malformed success (wrong fold count, scores outside
    [0,1], inconsistent mean) to status=failed so callers only ever see
    contract-conforming results."""
    if result.request_id != request.request_id:
        return EvaluationResult.failure(
            request.request_id, "failed",
            f"backend answered request {result.request_id!r}")
    if result.status != "ok":
        if result.status not in STATUSES:
            return EvaluationResult.failure(request.request_id, "failed",
                                            f"unknown status {result.status!r}")
        return result
    scores = result.fold_scores
    if len(scores) != request.folds:
        return EvaluationResult.failure(
            request.request_id, "failed",
            f"expected {request.folds} fold scores, got {len(scores)}")
    if not all(np.isfinite(s) and 0.0 <= s <= 1.0 for s in scores):
        return EvaluationResult.failure(
            request.request_id, "failed", f"fold scores outside [0,1]: {scores}")
    mean = float(np.mean(scores))
    if result.mean_score is None or abs(result.mean_score - mean) > 1e-9:
        result = EvaluationResult(request.request_id, "ok", scores, mean)
    return result


# -- metrics ------------------------------------------------------------------

def auc_roc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks handle ties as 0.5 credit
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def c_index(risk, time, event) -> float:
    """Fraction of comparable pairs where higher risk has the earlier event."""
    risk = np.asarray(risk, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if not risk.shape == time.shape == event.shape or risk.ndim != 1:
        raise ValueError("risk, time, event must be equal-length 1-d sequences")
    concordant = 0.0
    comparable = 0
    n = len(risk)
    for i in range(n):
        if event[i] != 1:
            continue
        for j in range(n):
            if time[i] < time[j]:  # i's event observed before j's time
                comparable += 1
                if risk[i] > risk[j]:
                    concordant += 1.0
                elif risk[i] == risk[j]:
                    concordant += 0.5
    if comparable == 0:
        raise ValueError("c_index needs at least one comparable pair")
    return float(concordant / comparable)


# -- wire protocol --------------------------------------------------------------

class ProtocolError(ValueError):
    """A wire message that does not follow the line protocol."""


def wire_line(payload: dict) -> str:
    """Canonical one-line encoding (sorted keys, no whitespace)."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def parse_wire_line(line: str, expected_type: str | None = None) -> dict:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"message is not valid JSON: {e}") from None
    if not isinstance(payload, dict) or "type" not in payload:
        raise ProtocolError("message must be an object with a 'type' field")
    if expected_type is not None and payload["type"] != expected_type:
        raise ProtocolError(
            f"expected a {expected_type!r} message, got {payload['type']!r}")
    return payload


def hello_payload(metrics, algorithms) -> dict:
    return {"type": "hello", "protocol_version": PROTOCOL_VERSION,
            "capabilities": {"metrics": sorted(metrics),
                             "algorithms": sorted(algorithms)}}


def request_to_wire(request: EvaluationRequest) -> dict:
    return {"type": "eval",
            "request_id": request.request_id,
            "dataset": request.dataset_ref,
            "metric": request.metric,
            "folds": request.folds,
            "seed": request.fold_seed,
            "pipeline": dict(request.config.choice),
            "hyperparams": {a: dict(v) for a, v in request.config.values.items()},
            "time_budget_s": request.time_budget_s}


def request_from_wire(payload: dict) -> EvaluationRequest:
    payload = dict(payload)
    if payload.pop("type", "eval") != "eval":
        raise ProtocolError("not an eval message")
    try:
        config = PipelineConfig(choice=dict(payload["pipeline"]),
                                values={a: dict(v) for a, v
                                        in payload.get("hyperparams", {}).items()})
        return EvaluationRequest(
            request_id=str(payload["request_id"]),
            config=config,
            dataset_ref=str(payload["dataset"]),
            folds=int(payload["folds"]),
            fold_seed=int(payload["seed"]),
            metric=str(payload["metric"]),
            time_budget_s=float(payload["time_budget_s"]))
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ProtocolError(f"malformed eval message: {e}") from None


def result_to_wire(result: EvaluationResult) -> dict:
    return {"type": "result",
            "request_id": result.request_id,
            "status": result.status,
            "fold_scores": [float(s) for s in result.fold_scores],
            "message": result.message}


def result_from_wire(payload: dict) -> EvaluationResult:
    if payload.get("type") != "result":
        raise ProtocolError("not a result message")
    try:
        status = str(payload["status"])
        scores = tuple(float(s) for s in payload.get("fold_scores") or ())
        message = payload.get("message")
        if status == "ok" and not scores:
            return EvaluationResult.failure(str(payload["request_id"]), "failed",
                                            "ok result carried no fold scores")
        if status == "ok":
            return EvaluationResult.ok(str(payload["request_id"]), scores)
        return EvaluationResult.failure(str(payload["request_id"]), status,
                                        str(message or ""))
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"malformed result message: {e}") from None


class ExternalBackend:
    """Evaluations delegated to a worker subprocess over the line protocol.

    The worker must print a hello line on startup; after that each request
    line is answered by exactly one result line. A worker that exits or
    stops answering fails the in-flight request and every later one.
    """

    def __init__(self, command, *, startup_timeout_s: float = 30.0,
                 response_grace_s: float = 30.0):
        self.command = [str(c) for c in command]
        self.response_grace_s = response_grace_s
        self._buf = b""
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            bufsize=0)
        kind, line = self._read_line(time.monotonic() + startup_timeout_s)
        if kind != "line":
            self.close()
            raise ProtocolError(f"worker {'exited' if kind == 'eof' else 'timed out'} "
                                "before the hello line")
        hello = parse_wire_line(line, "hello")
        if hello.get("protocol_version") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(
                f"worker speaks protocol {hello.get('protocol_version')!r}, "
                f"need {PROTOCOL_VERSION}")
        self.capabilities = hello.get("capabilities", {})

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def _read_line(self, deadline: float) -> tuple[str, str | None]:
        """Next line as ("line", text), or ("eof"|"timeout", None)."""
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return "timeout", None
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                return "timeout", None
            chunk = os.read(fd, 65536)
            if chunk == b"":
                return "eof", None
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return "line", line.decode("utf-8")

    def run(self, request: EvaluationRequest) -> EvaluationResult:
        if not self.alive:
            return EvaluationResult.failure(request.request_id, "failed",
                                            "worker is not running")
        line = wire_line(request_to_wire(request)) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return EvaluationResult.failure(request.request_id, "failed",
                                            "worker closed its input")
        deadline = time.monotonic() + request.time_budget_s + self.response_grace_s
        kind, reply = self._read_line(deadline)
        if kind != "line":
            message = ("worker exited without answering" if kind == "eof"
                       else "worker stopped answering")
            self.close()
            return EvaluationResult.failure(
                request.request_id, "failed" if kind == "eof" else "timeout", message)
        return result_from_wire(parse_wire_line(reply, "result"))

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass
        if proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "ExternalBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def fold_indices(n: int, folds: int, seed: int, labels=None) -> list[np.ndarray]:
    """Seeded J-fold split; stratified by label when labels are given."""
    from .rng import substream

    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, {n}], got {folds}")
    rng = substream(seed, "fold_split")
    assignment = np.empty(n, dtype=int)
    if labels is None:
        order = rng.permutation(n)
        assignment[order] = np.arange(n) % folds
    else:
        labels = np.asarray(labels)
        for value in np.unique(labels):
            idx = np.flatnonzero(labels == value)
            order = rng.permutation(len(idx))
            assignment[idx[order]] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == j) for j in range(folds)]
