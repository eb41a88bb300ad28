"""Run artifacts: config files, history logs, checkpoints, and reports.

A run directory is laid out as:

    config.yaml      copy of the input configuration
    history.jsonl    one line per completed evaluation (deterministic bytes)
    timings.csv      wall-clock sidecar keyed by request id
    snapshots.jsonl  one line per iteration: MAP decomposition + pool summary
    checkpoint.json  resumable engine state, guarded by a content hash
    ensemble.json    final posterior-weighted ensemble
    report.txt       human-readable summary
    report.csv       per-evaluation incumbent trace

Everything except timings.csv is a pure function of the configuration and
seed, so rerunning a config reproduces the files byte for byte;
timestamps live only in the sidecar.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import ensembles, gp, structure
from .engine import AcquisitionConfig, EngineConfig, EvalRecord, RunState, new_state
from .objective import (EvaluationRequest, EvaluationResult, METRICS,
                        request_to_wire, result_to_wire)
from .partition import Decomposition
from .rng import stream_seed
from .space import PipelineConfig, SearchSpace, load_space_file

SCHEMA_VERSION = 1

HISTORY_FILE = "history.jsonl"
TIMINGS_FILE = "timings.csv"
SNAPSHOTS_FILE = "snapshots.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
ENSEMBLE_FILE = "ensemble.json"
REPORT_TEXT_FILE = "report.txt"
REPORT_CSV_FILE = "report.csv"
CONFIG_COPY_FILE = "config.yaml"


class ConfigError(ValueError):
    """A run configuration that fails field-level validation."""


class IntegrityError(ValueError):
    """A stored artifact whose content does not match its hash or schema."""


# -- canonical JSON --------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def canonical_json(payload) -> str:
    """Stable one-line encoding: sorted keys, no whitespace, ASCII."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      default=_json_default)


def content_digest(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- value serialization ----------------------------------------------------------

def config_to_dict(config: PipelineConfig) -> dict:
    return {"pipeline": dict(config.choice),
            "hyperparams": {a: dict(v) for a, v in config.values.items()}}


def config_from_dict(payload: dict) -> PipelineConfig:
    return PipelineConfig(choice=dict(payload["pipeline"]),
                          values={a: dict(v) for a, v
                                  in payload.get("hyperparams", {}).items()})


def z_to_dict(z: Decomposition) -> dict:
    return {"M": z.M, "assignment": [[s, a, m] for (s, a, m) in z.key()]}


def z_from_dict(payload: dict) -> Decomposition:
    assignment = {(s, a): int(m) for s, a, m in payload["assignment"]}
    return Decomposition(assignment, int(payload["M"]))


def z_digest(z: Decomposition) -> str:
    """Short stable identifier for a decomposition."""
    return content_digest(z_to_dict(z))[:12]


def params_to_dict(params: gp.KernelParams) -> dict:
    return {"signal_variance": [float(v) for v in params.signal_variance],
            "lengthscales": [[float(l) for l in ls] for ls in params.lengthscales],
            "categorical_similarity": [float(r) for r in params.categorical_similarity],
            "noise_variance": float(params.noise_variance),
            "mean": float(params.mean)}


def params_from_dict(payload: dict) -> gp.KernelParams:
    return gp.KernelParams(
        signal_variance=tuple(payload["signal_variance"]),
        lengthscales=tuple(tuple(ls) for ls in payload["lengthscales"]),
        categorical_similarity=tuple(payload["categorical_similarity"]),
        noise_variance=float(payload["noise_variance"]),
        mean=float(payload["mean"]))


def record_to_dict(record: EvalRecord) -> dict:
    return {"index": record.index,
            "iteration": record.iteration,
            "request_id": record.request_id,
            "config": config_to_dict(record.config),
            "status": record.status,
            "fold_scores": [float(s) for s in record.fold_scores],
            "mean_score": record.mean_score,
            "score": record.score}


def record_from_dict(payload: dict) -> EvalRecord:
    mean = payload.get("mean_score")
    return EvalRecord(
        index=int(payload["index"]), iteration=int(payload["iteration"]),
        request_id=str(payload["request_id"]),
        config=config_from_dict(payload["config"]), status=str(payload["status"]),
        fold_scores=tuple(float(s) for s in payload["fold_scores"]),
        mean_score=None if mean is None else float(mean),
        score=float(payload["score"]))


# -- run configuration -------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Validated contents of a run configuration file."""

    space_path: str
    seed: int
    budget: int
    batch_size: int
    folds: int
    metric: str
    artifacts_dir: str
    backend: dict
    prior: structure.StructurePrior | None = None
    acquisition: dict = field(default_factory=dict)
    engine: dict = field(default_factory=dict)
    meta: dict | None = None
    source_text: str = ""

    @property
    def digest(self) -> str:
        """Hash of the semantic content (not the file bytes)."""
        with open(self.space_path, "rb") as f:
            space_digest = hashlib.sha256(f.read()).hexdigest()
        return content_digest({
            "space": space_digest, "seed": self.seed,
            "budget": self.budget, "batch_size": self.batch_size,
            "folds": self.folds, "metric": self.metric,
            "backend": self.backend,
            "prior": None if self.prior is None else
                     {"M": self.prior.M, "gamma": list(self.prior.gamma)},
            "acquisition": self.acquisition, "engine": self.engine,
            "meta": self.meta})

    def acquisition_config(self) -> AcquisitionConfig:
        return AcquisitionConfig(batch_size=self.batch_size, **self.acquisition)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(folds=self.folds, metric=self.metric, **self.engine)


def _require(raw: dict, key: str, kind, where: str):
    if key not in raw:
        raise ConfigError(f"{where}: required field '{key}' is missing")
    value = raw[key]
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: field '{key}' must be an integer")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: field '{key}' must be {kind.__name__}, "
                          f"got {type(value).__name__}")
    return value


def _check_positive(value: int, key: str, where: str) -> int:
    if value < 1:
        raise ConfigError(f"{where}: field '{key}' must be >= 1, got {value}")
    return value


def parse_run_config(raw: dict, *, base_dir: str = ".",
                     source_text: str = "") -> RunConfig:
    where = "config"
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: the file must hold a mapping at top level")
    known = {"space", "seed", "budget", "batch_size", "folds", "metric",
             "artifacts", "backend", "prior", "acquisition", "engine", "meta"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where}: unknown field '{key}'")

    space_path = _require(raw, "space", str, where)
    if not os.path.isabs(space_path):
        space_path = os.path.join(base_dir, space_path)
    if not os.path.isfile(space_path):
        raise ConfigError(f"{where}: field 'space' points to a missing file: "
                          f"{space_path}")
    seed = _require(raw, "seed", int, where)
    budget = _check_positive(_require(raw, "budget", int, where), "budget", where)
    batch_size = raw.get("batch_size", 4)
    if not isinstance(batch_size, int) or isinstance(batch_size, bool):
        raise ConfigError(f"{where}: field 'batch_size' must be an integer")
    _check_positive(batch_size, "batch_size", where)
    folds = raw.get("folds", 5)
    if not isinstance(folds, int) or isinstance(folds, bool) or folds < 2:
        raise ConfigError(f"{where}: field 'folds' must be an integer >= 2")
    metric = raw.get("metric", "auc_roc")
    if metric not in METRICS:
        raise ConfigError(f"{where}: field 'metric' must be one of {METRICS}, "
                          f"got {metric!r}")
    artifacts = _require(raw, "artifacts", str, where)
    if not os.path.isabs(artifacts):
        artifacts = os.path.join(base_dir, artifacts)

    backend = _require(raw, "backend", dict, where)
    kind = backend.get("kind")
    if kind == "synthetic":
        for key, default in (("noise_sd", 0.02), ("subspaces", 3),
                             ("benchmark_seed", 0)):
            value = backend.get(key, default)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}: field 'backend.{key}' must be a number")
        if backend.get("noise_sd", 0.02) < 0:
            raise ConfigError(f"{where}: field 'backend.noise_sd' must be >= 0")
        if int(backend.get("subspaces", 3)) < 1:
            raise ConfigError(f"{where}: field 'backend.subspaces' must be >= 1")
    elif kind == "external":
        command = backend.get("command")
        if (not isinstance(command, list) or not command
                or not all(isinstance(c, str) for c in command)):
            raise ConfigError(f"{where}: field 'backend.command' must be a "
                              "non-empty list of strings")
    else:
        raise ConfigError(f"{where}: field 'backend.kind' must be 'synthetic' "
                          f"or 'external', got {kind!r}")

    prior = None
    if raw.get("prior") is not None:
        praw = _require(raw, "prior", dict, where)
        M = _check_positive(_require(praw, "subspaces", int, f"{where}.prior"),
                            "subspaces", f"{where}.prior")
        conc = praw.get("concentration", 1.0)
        try:
            if isinstance(conc, (int, float)) and not isinstance(conc, bool):
                prior = structure.StructurePrior.symmetric(M, float(conc))
            elif isinstance(conc, list):
                prior = structure.StructurePrior(M, tuple(float(g) for g in conc))
            else:
                raise ValueError("must be a number or a list of numbers")
        except ValueError as e:
            raise ConfigError(f"{where}.prior: field 'concentration' is invalid: {e}")

    acquisition = raw.get("acquisition") or {}
    if not isinstance(acquisition, dict):
        raise ConfigError(f"{where}: field 'acquisition' must be a mapping")
    engine = raw.get("engine") or {}
    if not isinstance(engine, dict):
        raise ConfigError(f"{where}: field 'engine' must be a mapping")
    try:
        AcquisitionConfig(batch_size=batch_size, **acquisition)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.acquisition: {e}")
    try:
        EngineConfig(folds=folds, metric=metric, **engine)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.engine: {e}")

    meta = raw.get("meta")
    if meta is not None:
        if not isinstance(meta, dict):
            raise ConfigError(f"{where}: field 'meta' must be a mapping")
        repo = _require(meta, "repository", str, f"{where}.meta")
        repo = repo if os.path.isabs(repo) else os.path.join(base_dir, repo)
        if not os.path.isdir(repo):
            raise ConfigError(f"{where}.meta: field 'repository' points to a "
                              f"missing directory: {repo}")
        meta = dict(meta, repository=repo)
        features = meta.get("features")
        if not isinstance(features, dict) or not features:
            raise ConfigError(f"{where}.meta: field 'features' must be a "
                              "non-empty mapping of name to value")

    return RunConfig(space_path=space_path, seed=seed, budget=budget,
                     batch_size=batch_size, folds=folds, metric=metric,
                     artifacts_dir=artifacts, backend=dict(backend), prior=prior,
                     acquisition=dict(acquisition), engine=dict(engine),
                     meta=meta, source_text=source_text)


def load_run_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        text = f.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: not parseable: {e}")
    return parse_run_config(raw, base_dir=os.path.dirname(os.path.abspath(path)),
                            source_text=text)


def build_backend(config: RunConfig, space: SearchSpace):
    from .benchmark import SyntheticBackend, make_benchmark
    from .objective import ExternalBackend
    from .partition import stage_aligned

    backend = config.backend
    if backend["kind"] == "synthetic":
        truth = stage_aligned(space, int(backend.get("subspaces", 3)))
        bench = make_benchmark(space, truth,
                               seed=int(backend.get("benchmark_seed", 0)),
                               noise_sd=float(backend.get("noise_sd", 0.02)))
        return SyntheticBackend(bench)
    return ExternalBackend(backend["command"])


# -- history log -------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryRecord:
    """One evaluation as it appears in the history log."""

    index: int
    iteration: int
    request: EvaluationRequest
    result: EvaluationResult
    score: float
    incumbent_index: int
    incumbent_score: float
    map_snapshot: str | None

    def to_line(self) -> str:
        result = result_to_wire(self.result)
        result.pop("type")
        result["mean_score"] = self.result.mean_score
        return canonical_json({
            "schema": SCHEMA_VERSION, "kind": "eval",
            "index": self.index, "iteration": self.iteration,
            "request": request_to_wire(self.request), "result": result,
            "score": self.score,
            "incumbent": {"index": self.incumbent_index,
                          "score": self.incumbent_score},
            "map_snapshot": self.map_snapshot})

    @classmethod
    def from_line(cls, line: str) -> "HistoryRecord":
        from .objective import request_from_wire

        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise IntegrityError(f"history line is not valid JSON: {e}")
        if payload.get("schema") != SCHEMA_VERSION:
            raise IntegrityError(f"history line has schema "
                                 f"{payload.get('schema')!r}, expected {SCHEMA_VERSION}")
        try:
            res = payload["result"]
            if res["status"] == "ok":
                result = EvaluationResult.ok(payload["request"]["request_id"],
                                             res["fold_scores"])
            else:
                result = EvaluationResult.failure(
                    payload["request"]["request_id"], res["status"],
                    res.get("message") or "")
            return cls(index=int(payload["index"]),
                       iteration=int(payload["iteration"]),
                       request=request_from_wire(payload["request"]),
                       result=result, score=float(payload["score"]),
                       incumbent_index=int(payload["incumbent"]["index"]),
                       incumbent_score=float(payload["incumbent"]["score"]),
                       map_snapshot=payload.get("map_snapshot"))
        except (KeyError, TypeError, ValueError) as e:
            raise IntegrityError(f"history line is malformed: {e}")


def read_history(artifacts_dir: str) -> list[HistoryRecord]:
    path = os.path.join(artifacts_dir, HISTORY_FILE)
    if not os.path.isfile(path):
        raise IntegrityError(f"history log not found: {path}")
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                records.append(HistoryRecord.from_line(line))
    for i, rec in enumerate(records):
        if rec.index != i:
            raise IntegrityError(f"history indices are not contiguous at line {i}")
        if i and rec.iteration < records[i - 1].iteration:
            raise IntegrityError(f"history iterations decrease at line {i}")
    return records


# -- checkpoints -------------------------------------------------------------------

def _key_to_list(key: tuple) -> list:
    return [[s, a, m] for (s, a, m) in key]


def _key_from_list(items) -> tuple:
    return tuple((s, a, int(m)) for s, a, m in items)


def checkpoint_payload(state: RunState, config_digest: str) -> dict:
    if state.acq.beta_schedule is not None:
        raise ValueError("a custom beta schedule cannot be checkpointed")
    acq = dataclasses.asdict(state.acq)
    acq.pop("beta_schedule")
    return {
        "schema": SCHEMA_VERSION,
        "config_digest": config_digest,
        "seed": state.seed,
        "dataset_ref": state.dataset_ref,
        "t": state.t,
        "finalized": state.finalized,
        "incumbent_index": state.incumbent_index,
        "prior": {"M": state.prior.M, "gamma": list(state.prior.gamma)},
        "acquisition": acq,
        "engine": dataclasses.asdict(state.engine),
        "records": [record_to_dict(r) for r in state.records],
        "z_chain": z_to_dict(state.z_chain),
        "map_z": None if state.map_z is None else z_to_dict(state.map_z),
        "map_params": (None if state.map_params is None
                       else params_to_dict(state.map_params)),
        "pool": [{"z": z_to_dict(e.z), "log_post": float(e.log_post),
                  "params": None if e.params is None else params_to_dict(e.params),
                  "order": e.order}
                 for e in state.pool.entries()],
        "cache": [{"key": _key_to_list(key), "params": params_to_dict(params),
                   "fit_size": state.cache.fit_sizes.get(key, 0)}
                  for key, params in sorted(state.cache.params.items())],
    }


def save_checkpoint(state: RunState, path: str, config_digest: str) -> None:
    payload = checkpoint_payload(state, config_digest)
    envelope = {"schema": SCHEMA_VERSION, "sha256": content_digest(payload),
                "payload": payload}
    _atomic_write(path, canonical_json(envelope) + "\n")


def load_checkpoint(path: str) -> dict:
    """Verified checkpoint payload; raises IntegrityError on any damage."""
    if not os.path.isfile(path):
        raise IntegrityError(f"checkpoint not found: {path}")
    with open(path) as f:
        text = f.read()
    try:
        envelope = json.loads(text)
    except json.JSONDecodeError as e:
        raise IntegrityError(f"checkpoint is not valid JSON: {e}")
    if not isinstance(envelope, dict) or envelope.get("schema") != SCHEMA_VERSION:
        raise IntegrityError("checkpoint has an unknown schema version")
    payload = envelope.get("payload")
    stored = envelope.get("sha256")
    if payload is None or stored is None:
        raise IntegrityError("checkpoint is missing its payload or hash")
    actual = content_digest(payload)
    if actual != stored:
        raise IntegrityError(
            f"checkpoint content hash mismatch: stored {stored[:12]}..., "
            f"recomputed {actual[:12]}...")
    return payload


def state_from_checkpoint(payload: dict, space: SearchSpace) -> RunState:
    try:
        prior = structure.StructurePrior(int(payload["prior"]["M"]),
                                         tuple(payload["prior"]["gamma"]))
        acq = AcquisitionConfig(**payload["acquisition"])
        engine = EngineConfig(**payload["engine"])
        state = RunState(space=space, seed=int(payload["seed"]), prior=prior,
                         acq=acq, engine=engine,
                         dataset_ref=str(payload["dataset_ref"]),
                         fold_seed=stream_seed(int(payload["seed"]), "fold_split"))
        state.t = int(payload["t"])
        state.finalized = bool(payload["finalized"])
        state.incumbent_index = (None if payload["incumbent_index"] is None
                                 else int(payload["incumbent_index"]))
        state.records = [record_from_dict(r) for r in payload["records"]]
        state.z_chain = z_from_dict(payload["z_chain"])
        if payload["map_z"] is not None:
            state.map_z = z_from_dict(payload["map_z"])
        if payload["map_params"] is not None:
            state.map_params = params_from_dict(payload["map_params"])
        state.pool.restore([
            structure.PoolEntry(
                z_from_dict(entry["z"]), float(entry["log_post"]),
                (None if entry["params"] is None
                 else params_from_dict(entry["params"])), int(entry["order"]))
            for entry in payload["pool"]])
        for item in payload["cache"]:
            key = _key_from_list(item["key"])
            state.cache.params[key] = params_from_dict(item["params"])
            state.cache.fit_sizes[key] = int(item["fit_size"])
    except IntegrityError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"checkpoint payload is malformed: {e}")
    if state.map_z is not None and state.map_params is not None and state.records:
        X, y, extra = state.data()
        state.surrogate = gp.Surrogate(space, state.map_z, state.map_params, X, y,
                                       extra)
    return state


# -- run recorder ------------------------------------------------------------------

class RunRecorder:
    """Engine hook that maintains the artifact directory.

    Evaluation lines are buffered per batch and flushed together with the
    iteration snapshot and the checkpoint, so the directory never holds a
    half-written iteration for longer than one crash window; `reconcile`
    trims any such orphan lines on resume.
    """

    def __init__(self, artifacts_dir: str, state: RunState, config_digest: str):
        self.dir = artifacts_dir
        self.state = state
        self.config_digest = config_digest
        self._pending: list[HistoryRecord] = []
        self._pending_times: list[tuple[int, str, float]] = []
        os.makedirs(artifacts_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def on_record(self, record: EvalRecord, result: EvaluationResult) -> None:
        state = self.state
        request = EvaluationRequest(
            request_id=record.request_id, config=record.config,
            dataset_ref=state.dataset_ref, folds=state.engine.folds,
            fold_seed=state.fold_seed, metric=state.engine.metric,
            time_budget_s=state.engine.eval_time_budget_s)
        self._pending.append(HistoryRecord(
            index=record.index, iteration=record.iteration, request=request,
            result=result, score=record.score,
            incumbent_index=state.incumbent_index,
            incumbent_score=state.records[state.incumbent_index].score,
            map_snapshot=None if state.map_z is None else z_digest(state.map_z)))
        self._pending_times.append((record.index, record.request_id, time.time()))

    def on_iteration(self, state: RunState) -> None:
        if self._pending:
            with open(self._path(HISTORY_FILE), "a") as f:
                for rec in self._pending:
                    f.write(rec.to_line() + "\n")
            new_file = not os.path.exists(self._path(TIMINGS_FILE))
            with open(self._path(TIMINGS_FILE), "a") as f:
                if new_file or os.path.getsize(self._path(TIMINGS_FILE)) == 0:
                    f.write("index,request_id,recorded_at\n")
                for index, rid, ts in self._pending_times:
                    f.write(f"{index},{rid},{ts:.6f}\n")
            self._pending.clear()
            self._pending_times.clear()
        with open(self._path(SNAPSHOTS_FILE), "a") as f:
            f.write(self._snapshot_line(state) + "\n")
        save_checkpoint(state, self._path(CHECKPOINT_FILE), self.config_digest)

    def _snapshot_line(self, state: RunState) -> str:
        map_entry = None
        if state.map_z is not None:
            map_entry = dict(z_to_dict(state.map_z), id=z_digest(state.map_z))
        pool = [{"id": z_digest(e.z), "log_post": float(e.log_post)}
                for e in state.pool.entries()]
        return canonical_json({
            "schema": SCHEMA_VERSION, "kind": "snapshot", "t": state.t,
            "n_records": len(state.records), "map": map_entry, "pool": pool})


def reconcile_artifacts(artifacts_dir: str, payload: dict) -> None:
    """Trim history/snapshot lines past the checkpointed iteration."""
    n = len(payload["records"])
    t = int(payload["t"])
    kept = _truncate_lines(os.path.join(artifacts_dir, HISTORY_FILE),
                           lambda p: p["index"] < n)
    if kept < n:
        raise IntegrityError(
            f"history log holds {kept} records but the checkpoint covers {n}")
    _truncate_lines(os.path.join(artifacts_dir, SNAPSHOTS_FILE),
                    lambda p: p["t"] <= t)


def _truncate_lines(path: str, keep) -> int:
    if not os.path.isfile(path):
        return 0
    kept, dropped = [], 0
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise IntegrityError(f"{os.path.basename(path)} holds a "
                                     f"non-JSON line: {e}")
            if keep(payload):
                kept.append(line if line.endswith("\n") else line + "\n")
            else:
                dropped += 1
    if dropped:
        _atomic_write(path, "".join(kept))
    return len(kept)


# -- ensemble artifact -------------------------------------------------------------

def ensemble_to_dict(model: ensembles.EnsembleModel) -> dict:
    return {"schema": SCHEMA_VERSION,
            "run_id": model.run_id,
            "n_samples": model.n_samples,
            "seed": model.seed,
            "members": [{"config": config_to_dict(c), "weight": float(w)}
                        for c, w in model.members]}


def ensemble_from_dict(payload: dict) -> ensembles.EnsembleModel:
    if payload.get("schema") != SCHEMA_VERSION:
        raise IntegrityError("ensemble file has an unknown schema version")
    try:
        members = tuple((config_from_dict(m["config"]), float(m["weight"]))
                        for m in payload["members"])
        return ensembles.EnsembleModel(members=members,
                                       run_id=str(payload["run_id"]),
                                       n_samples=int(payload["n_samples"]),
                                       seed=int(payload["seed"]))
    except (KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"ensemble file is malformed: {e}")


def write_ensemble(model: ensembles.EnsembleModel, artifacts_dir: str) -> None:
    _atomic_write(os.path.join(artifacts_dir, ENSEMBLE_FILE),
                  canonical_json(ensemble_to_dict(model)) + "\n")


def read_ensemble(artifacts_dir: str) -> ensembles.EnsembleModel:
    path = os.path.join(artifacts_dir, ENSEMBLE_FILE)
    if not os.path.isfile(path):
        raise IntegrityError(f"ensemble file not found: {path}")
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise IntegrityError(f"ensemble file is not valid JSON: {e}")
    return ensemble_from_dict(payload)


# -- report ------------------------------------------------------------------------

def _format_config(config: PipelineConfig, indent: str = "  ") -> list[str]:
    lines = []
    for stage, algo in config.choice.items():
        hps = config.values.get(algo, {})
        suffix = ""
        if hps:
            suffix = " (" + ", ".join(f"{k}={v:g}" if isinstance(v, float)
                                      else f"{k}={v}"
                                      for k, v in sorted(hps.items())) + ")"
        lines.append(f"{indent}{stage}: {algo}{suffix}")
    return lines


def render_report(artifacts_dir: str) -> tuple[str, str]:
    """(report text, incumbent trace CSV) regenerated from the artifacts."""
    records = read_history(artifacts_dir)
    if not records:
        raise IntegrityError("history log is empty; nothing to report")

    snapshots = []
    snap_path = os.path.join(artifacts_dir, SNAPSHOTS_FILE)
    if os.path.isfile(snap_path):
        with open(snap_path) as f:
            for line in f:
                if line.strip():
                    snapshots.append(json.loads(line))

    best = max(records, key=lambda r: (r.score, -r.index))
    out = io.StringIO()
    out.write("optimization report\n")
    out.write("===================\n")
    out.write(f"dataset: {records[0].request.dataset_ref}\n")
    out.write(f"metric: {records[0].request.metric}\n")
    out.write(f"evaluations: {len(records)}\n")
    statuses = sorted({r.result.status for r in records})
    counts = ", ".join(f"{s}={sum(1 for r in records if r.result.status == s)}"
                       for s in statuses)
    out.write(f"statuses: {counts}\n")
    out.write(f"best score: {best.score:.6f} "
              f"(evaluation {best.index}, iteration {best.iteration})\n")
    out.write("best pipeline:\n")
    out.write("\n".join(_format_config(best.request.config)) + "\n")

    out.write("\nincumbent trace (iteration, evaluations so far, best score):\n")
    by_iter: dict[int, HistoryRecord] = {}
    for rec in records:
        by_iter[rec.iteration] = rec
    for t in sorted(by_iter):
        rec = by_iter[t]
        out.write(f"  {t:4d}  {rec.index + 1:5d}  {rec.incumbent_score:.6f}\n")

    if snapshots and snapshots[-1].get("map"):
        snap = snapshots[-1]
        z = z_from_dict(snap["map"])
        pool = {p["id"]: p["log_post"] for p in snap.get("pool", [])}
        lp = pool.get(snap["map"]["id"])
        lp_text = "" if lp is None else f" (log posterior {lp:.3f})"
        out.write(f"\nsubspace partition{lp_text}:\n")
        for m in range(z.M):
            units = z.subspace_units(m)
            if units:
                listing = ", ".join(f"{s}/{a}" for s, a in units)
                out.write(f"  subspace {m}: {listing}\n")

    try:
        model = read_ensemble(artifacts_dir)
    except IntegrityError:
        model = None
    if model is not None:
        out.write("\nensemble members (posterior weight):\n")
        for config, w in sorted(model.members, key=lambda cw: -cw[1]):
            parts = ", ".join(f"{s}={a}" for s, a in config.choice.items())
            out.write(f"  {w:8.4f}  {parts}\n")

    csv_out = io.StringIO()
    csv_out.write("index,iteration,score,best_score\n")
    for rec in records:
        csv_out.write(f"{rec.index},{rec.iteration},{rec.score!r},"
                      f"{rec.incumbent_score!r}\n")
    return out.getvalue(), csv_out.getvalue()


def write_report(artifacts_dir: str) -> None:
    text, csv_text = render_report(artifacts_dir)
    _atomic_write(os.path.join(artifacts_dir, REPORT_TEXT_FILE), text)
    _atomic_write(os.path.join(artifacts_dir, REPORT_CSV_FILE), csv_text)


# -- whole-run drivers -------------------------------------------------------------

def prepare_state(config: RunConfig, space: SearchSpace) -> RunState:
    warmstart = None
    if config.meta is not None:
        from . import metalearn

        repository = read_repository(config.meta["repository"])
        meta = metalearn.MetaFeatureVector(
            {str(k): float(v) for k, v in config.meta["features"].items()})
        prior = metalearn.calibrate(
            meta, repository, mode=config.meta.get("mode", "similarity"),
            temperature=float(config.meta.get("temperature", 1.0)))
        warmstart = metalearn.warmstart(space, prior)
    dataset_ref = (config.backend.get("dataset", "synthetic")
                   if config.backend["kind"] == "external" else "synthetic")
    return new_state(space, config.seed, acq=config.acquisition_config(),
                     prior=config.prior, warmstart=warmstart,
                     engine_config=config.engine_config(),
                     dataset_ref=dataset_ref)


RUN_FILES = (HISTORY_FILE, TIMINGS_FILE, SNAPSHOTS_FILE, CHECKPOINT_FILE,
             ENSEMBLE_FILE, REPORT_TEXT_FILE, REPORT_CSV_FILE, CONFIG_COPY_FILE)


def clear_run_files(artifacts_dir: str) -> None:
    for name in RUN_FILES:
        path = os.path.join(artifacts_dir, name)
        if os.path.exists(path):
            os.unlink(path)


def execute_run(config: RunConfig, *, state: RunState | None = None,
                max_seconds: float | None = None,
                overwrite: bool = False) -> RunState:
    """Run (or continue) a configured optimization and write all artifacts."""
    from .engine import run

    space = load_space_file(config.space_path)
    os.makedirs(config.artifacts_dir, exist_ok=True)
    fresh = state is None
    if fresh:
        if os.path.exists(os.path.join(config.artifacts_dir, HISTORY_FILE)):
            if not overwrite:
                raise IntegrityError(
                    f"{config.artifacts_dir} already holds a run; resume it or "
                    "pass overwrite to start over")
            clear_run_files(config.artifacts_dir)
        state = prepare_state(config, space)
    copy_path = os.path.join(config.artifacts_dir, CONFIG_COPY_FILE)
    if config.source_text and not os.path.exists(copy_path):
        _atomic_write(copy_path, config.source_text)
    recorder = RunRecorder(config.artifacts_dir, state, config.digest)
    backend = build_backend(config, space)
    try:
        run(space, backend, config.budget, recorder=recorder, state=state,
            max_seconds=max_seconds)
    finally:
        if hasattr(backend, "close"):
            backend.close()
    if state.finalized:
        model = ensembles.ensemble_weights(state, seed=state.seed)
        write_ensemble(model, config.artifacts_dir)
        write_report(config.artifacts_dir)
    return state


def resume_run(config: RunConfig, *, max_seconds: float | None = None) -> RunState:
    """Continue an interrupted run from its last completed iteration."""
    payload = load_checkpoint(os.path.join(config.artifacts_dir, CHECKPOINT_FILE))
    if payload.get("config_digest") != config.digest:
        raise IntegrityError("checkpoint was written by a different configuration")
    space = load_space_file(config.space_path)
    state = state_from_checkpoint(payload, space)
    reconcile_artifacts(config.artifacts_dir, payload)
    if state.finalized and len(state.records) >= config.budget:
        return state
    return execute_run(config, state=state, max_seconds=max_seconds)


# -- meta repository on disk ---------------------------------------------------------

def record_to_file_dict(record) -> dict:
    from . import metalearn  # noqa: F401  (type lives there)

    return {"schema": SCHEMA_VERSION,
            "dataset_id": record.dataset_id,
            "meta": {"entries": dict(record.meta.entries),
                     "notes": list(record.meta.notes)},
            "M": record.M,
            "gamma": list(record.gamma),
            "mu": record.mu,
            "log_noise": record.log_noise,
            "log_signal_variance": list(record.log_signal_variance),
            "categorical_similarity": list(record.categorical_similarity),
            "dim_log_lengthscale": [[d, v] for d, v in record.dim_log_lengthscale],
            "z": z_to_dict(record.z)}


def record_from_file_dict(payload: dict):
    from . import metalearn

    if payload.get("schema") != SCHEMA_VERSION:
        raise IntegrityError("prior record has an unknown schema version")
    try:
        meta = metalearn.MetaFeatureVector(
            {str(k): float(v) for k, v in payload["meta"]["entries"].items()},
            notes=tuple(payload["meta"].get("notes", ())))
        return metalearn.PriorRecord(
            dataset_id=str(payload["dataset_id"]), meta=meta,
            M=int(payload["M"]), gamma=tuple(payload["gamma"]),
            mu=float(payload["mu"]), log_noise=float(payload["log_noise"]),
            log_signal_variance=tuple(payload["log_signal_variance"]),
            categorical_similarity=tuple(payload["categorical_similarity"]),
            dim_log_lengthscale=tuple((int(d), float(v)) for d, v
                                      in payload["dim_log_lengthscale"]),
            z=z_from_dict(payload["z"]))
    except (KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"prior record is malformed: {e}")


def calibrated_to_dict(prior) -> dict:
    return {"schema": SCHEMA_VERSION,
            "M": prior.M,
            "gamma": list(prior.gamma),
            "mu0": prior.mu0,
            "log_noise": prior.log_noise,
            "log_signal_variance": list(prior.log_signal_variance),
            "categorical_similarity": list(prior.categorical_similarity),
            "dim_log_lengthscale": [[d, v] for d, v in prior.dim_log_lengthscale],
            "z0": z_to_dict(prior.z0),
            "eta": [[d, w] for d, w in prior.eta]}


def calibrated_from_dict(payload: dict):
    from . import metalearn

    if payload.get("schema") != SCHEMA_VERSION:
        raise IntegrityError("calibrated prior has an unknown schema version")
    try:
        return metalearn.CalibratedPrior(
            M=int(payload["M"]), gamma=tuple(payload["gamma"]),
            mu0=float(payload["mu0"]), log_noise=float(payload["log_noise"]),
            log_signal_variance=tuple(payload["log_signal_variance"]),
            categorical_similarity=tuple(payload["categorical_similarity"]),
            dim_log_lengthscale=tuple((int(d), float(v)) for d, v
                                      in payload["dim_log_lengthscale"]),
            z0=z_from_dict(payload["z0"]),
            eta=tuple((str(d), float(w)) for d, w in payload["eta"]))
    except (KeyError, TypeError, ValueError) as e:
        raise IntegrityError(f"calibrated prior is malformed: {e}")


def write_repository_record(record, repository_dir: str) -> str:
    os.makedirs(repository_dir, exist_ok=True)
    safe = "".join(c if c.isalnum() or c in "-_." else "_"
                   for c in record.dataset_id)
    path = os.path.join(repository_dir, f"{safe}.json")
    _atomic_write(path, canonical_json(record_to_file_dict(record)) + "\n")
    return path


def read_repository(repository_dir: str) -> list:
    if not os.path.isdir(repository_dir):
        raise IntegrityError(f"repository directory not found: {repository_dir}")
    records = []
    for name in sorted(os.listdir(repository_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(repository_dir, name)) as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise IntegrityError(f"repository file {name} is not valid "
                                     f"JSON: {e}")
        records.append(record_from_file_dict(payload))
    if not records:
        raise IntegrityError(f"repository directory {repository_dir} holds no "
                             "records")
    return records
