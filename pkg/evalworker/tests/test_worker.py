import json
import time
from pathlib import Path

import numpy as np

from evalworker.bindings import capabilities, default_bindings
from evalworker.wire import METRICS, PROTOCOL_VERSION

from conftest import eval_request, spawn_worker

REPLAY_PATH = Path(__file__).parent / "data" / "replay.jsonl"


def test_handshake_matches_bindings(worker):
    _, chan = worker
    hello = chan.recv()
    assert hello["type"] == "hello"
    assert hello["protocol_version"] == PROTOCOL_VERSION
    caps = hello["capabilities"]
    assert caps["algorithms"] == capabilities(default_bindings())
    assert caps["metrics"] == sorted(METRICS)
    assert caps["algorithms"] == sorted(caps["algorithms"])


def test_replay_transcript_statuses_and_ids(worker):
    start = time.monotonic()
    proc, chan = worker
    chan.recv()  # hello
    records = [json.loads(line) for line in REPLAY_PATH.read_text().splitlines()]
    assert len(records) == 50
    for rec in records:
        chan.send_text(json.dumps(rec["send"]))
        reply = chan.recv()
        assert reply["type"] == "result"
        assert reply["request_id"] == rec["expect"]["request_id"]
        assert reply["status"] == rec["expect"]["status"]
    # one reply per request and nothing more: the stream goes quiet, then EOF
    proc.stdin.close()
    assert chan.at_eof(timeout=10)
    assert time.monotonic() - start < 240.0


def test_fold_scores_reproducible_across_processes():
    req = eval_request("repro-1",
                       pipeline={"imputation": "knn_impute",
                                 "feature_processing": "select_best",
                                 "prediction": "random_forest",
                                 "calibration": "sigmoid_calibration"},
                       hyperparams={"knn_impute": {"neighbors": 4},
                                    "select_best": {"k": 6},
                                    "random_forest": {"trees": 40, "max_depth": 5}},
                       seed=20260815)
    runs = []
    for _ in range(2):
        proc, chan = spawn_worker()
        try:
            chan.recv()
            chan.send_text(json.dumps(req))
            first = chan.recv()
            chan.send_text(json.dumps(req))
            second = chan.recv()
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)
        assert first["status"] == "ok"
        assert first["fold_scores"] == second["fold_scores"]
        runs.append(first["fold_scores"])
    assert runs[0] == runs[1]
    assert len(runs[0]) == req["folds"]


def _fuzz_lines(count: int) -> list[bytes]:
    rng = np.random.default_rng(99)
    fixed = [
        b"42", b'"hi"', b"[1,2,3]", b"null", b"true", b"NaN",
        b'{"a":1}', b'{"type":"shutdown"}', b'{"type":123}',
        b'{"type":"eval"}', b'{"type":"eval","request_id":"z"}',
        b'{"type":"eval","request_id":"z","dataset":12,"metric":"auc_roc",'
        b'"folds":3,"seed":1,"pipeline":{},"time_budget_s":5}',
        b'{"type":"eval","request_id":"z","dataset":"nope.csv","metric":"auc_roc",'
        b'"folds":"many","seed":1,"pipeline":{"prediction":"logistic"},"time_budget_s":5}',
        b'{"type":"eval","request_id":"z","dataset":"nope.csv","metric":"auc_roc",'
        b'"folds":NaN,"seed":1,"pipeline":{"prediction":"logistic"},"time_budget_s":5}',
        b'{"type":"eval","request_id":"z","dataset":"nope.csv","metric":"auc_roc",'
        b'"folds":3,"seed":null,"pipeline":[],"time_budget_s":-1}',
        b"[" * 4000,
        b"{" + b'"k":' * 2000,
        b"a" * 200_000,
        b"\x00\x00\x00",
        b"\xff\xfe{\"type\":\"eval\"}",
    ]
    lines = list(fixed)
    printable = np.frombuffer(bytes(range(33, 127)), dtype=np.uint8)
    while len(lines) < count:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            n = int(rng.integers(1, 60))
            lines.append(bytes(rng.choice(printable, size=n)))
        elif kind == 1:
            n = int(rng.integers(1, 80))
            raw = bytes(rng.integers(0, 256, size=n, dtype=np.uint8))
            raw = raw.replace(b"\n", b"?").replace(b"\r", b"?")
            lines.append(raw.strip() or b"?")
        else:
            junk = "".join(chr(int(c)) for c in rng.choice(printable, size=10))
            lines.append(json.dumps({"type": "eval", "request_id": junk,
                                     "garbage": junk}).encode())
    return lines[:count]


def test_fuzzing_never_kills_the_worker(worker):
    start = time.monotonic()
    proc, chan = worker
    chan.recv()
    for raw in _fuzz_lines(100):
        chan.send_raw(raw)
        reply = chan.recv(timeout=30.0)
        assert reply["type"] == "result"
        assert reply["status"] == "failed"
        assert proc.poll() is None
    # after the storm the worker still does real work
    chan.send_text(json.dumps(eval_request("after-fuzz")))
    reply = chan.recv()
    assert reply["request_id"] == "after-fuzz"
    assert reply["status"] == "ok"
    assert time.monotonic() - start < 120.0


def test_blank_lines_are_skipped(worker):
    _, chan = worker
    chan.recv()
    chan.send_text("   ")
    chan.send_text("")
    chan.send_text(json.dumps(eval_request("after-blanks")))
    reply = chan.recv()
    assert reply["request_id"] == "after-blanks"


def test_worker_exits_cleanly_on_eof():
    proc, chan = spawn_worker()
    chan.recv()
    proc.stdin.close()
    assert proc.wait(timeout=10) == 0
