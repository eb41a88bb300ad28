import json
import os
import select
import subprocess
import sys
import time
from importlib.resources import files
from pathlib import Path

import pytest

DATA_DIR = Path(str(files("evalworker") / "data"))


class LineChannel:
    """Byte-level line transport to a worker subprocess."""

    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        self.buf = b""

    def send_text(self, text: str) -> None:
        self.send_raw(text.encode("utf-8"))

    def send_raw(self, payload: bytes) -> None:
        self.proc.stdin.write(payload + b"\n")
        self.proc.stdin.flush()

    def recv(self, timeout: float = 120.0) -> dict:
        line = self.recv_line(timeout)
        return json.loads(line.decode("utf-8"))

    def recv_line(self, timeout: float) -> bytes:
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + timeout
        while b"\n" not in self.buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no reply line from worker")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise EOFError("worker closed stdout")
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return line

    def at_eof(self, timeout: float = 10.0) -> bool:
        try:
            self.recv_line(timeout)
        except EOFError:
            return True
        except TimeoutError:
            return False
        return False


def spawn_worker() -> tuple[subprocess.Popen, LineChannel]:
    proc = subprocess.Popen(
        [sys.executable, "-m", "evalworker", "--data", str(DATA_DIR)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL)
    return proc, LineChannel(proc)


@pytest.fixture
def worker():
    proc, chan = spawn_worker()
    try:
        yield proc, chan
    finally:
        if proc.poll() is None:
            proc.stdin.close()
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def eval_request(request_id: str, **overrides) -> dict:
    req = {
        "type": "eval",
        "request_id": request_id,
        "dataset": "toy.csv",
        "metric": "auc_roc",
        "folds": 3,
        "seed": 11,
        "pipeline": {"imputation": "mean_impute",
                     "feature_processing": "standardize",
                     "prediction": "logistic",
                     "calibration": "no_calibration"},
        "hyperparams": {"logistic": {"c": 1.0}},
        "time_budget_s": 60.0,
    }
    req.update(overrides)
    return req
