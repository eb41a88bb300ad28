"""Builds the requested pipeline and scores it with seeded K-fold CV."""

from __future__ import annotations

import signal
import threading
import time as time_mod
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from sklearn.calibration import CalibratedClassifierCV
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import KFold, StratifiedKFold
from sklearn.pipeline import Pipeline

from .bindings import STAGES, AlgorithmBinding, Calibration
from .datasets import DatasetCache
from .survival import CoxPH, concordance_index
from .wire import METRICS


@dataclass(frozen=True)
class Outcome:
    status: str
    fold_scores: tuple[float, ...]
    message: str | None = None


class BudgetExceeded(Exception):
    """Raised when a request overruns its time budget."""


class _Deadline:
    """Interrupts long fits with an interval timer when possible.

    The timer only works in the main thread; elsewhere the caller falls back
    to the explicit `check` calls between folds.
    """

    def __init__(self, budget_s: float):
        self.budget_s = float(budget_s)
        self.start = time_mod.monotonic()
        self._armed = False

    def __enter__(self):
        if threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGALRM, self._fire)
            signal.setitimer(signal.ITIMER_REAL, max(self.budget_s, 1e-6))
            self._armed = True
        return self

    def __exit__(self, *exc):
        if self._armed:
            signal.setitimer(signal.ITIMER_REAL, 0.0)
            # a straggler alarm delivered after disarming must not kill the
            # process, so leave a no-op handler behind rather than SIG_DFL
            signal.signal(signal.SIGALRM, lambda *_: None)
        return False

    @staticmethod
    def _fire(signum, frame):
        raise BudgetExceeded()

    def check(self):
        if time_mod.monotonic() - self.start > self.budget_s:
            raise BudgetExceeded()


def _validated(payload: dict) -> dict:
    out = {}
    out["dataset"] = payload["dataset"]
    if not isinstance(out["dataset"], str):
        raise ValueError("dataset must be a string")
    out["metric"] = payload["metric"]
    if out["metric"] not in METRICS:
        raise ValueError(f"unknown metric {out['metric']!r}")
    out["folds"] = int(payload["folds"])
    if out["folds"] < 2:
        raise ValueError("folds must be at least 2")
    # scikit-learn accepts seeds in [0, 2**32); fold wider wire seeds in
    out["seed"] = int(payload["seed"]) % (2 ** 32)
    out["time_budget_s"] = float(payload["time_budget_s"])
    if not out["time_budget_s"] > 0:
        raise ValueError("time_budget_s must be positive")
    pipeline = payload["pipeline"]
    if not isinstance(pipeline, dict) or not pipeline:
        raise ValueError("pipeline must be a non-empty object")
    hyperparams = payload.get("hyperparams", {})
    if not isinstance(hyperparams, dict):
        raise ValueError("hyperparams must be an object")
    out["pipeline"] = pipeline
    out["hyperparams"] = hyperparams
    return out


def _resolve(pipeline: Mapping[str, str],
             bindings: Mapping[str, AlgorithmBinding]) -> dict[str, AlgorithmBinding]:
    chosen: dict[str, AlgorithmBinding] = {}
    for stage, algo in pipeline.items():
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        binding = bindings.get(algo)
        if binding is None:
            raise ValueError(f"unknown algorithm {algo!r}")
        if binding.stage != stage:
            raise ValueError(f"{algo!r} belongs to stage {binding.stage!r}, "
                             f"not {stage!r}")
        chosen[stage] = binding
    if "prediction" not in chosen:
        raise ValueError("pipeline names no prediction algorithm")
    return chosen


def _build_steps(chosen, hyperparams, seed):
    built = {}
    for stage, binding in chosen.items():
        values = hyperparams.get(binding.name, {})
        if not isinstance(values, dict):
            raise ValueError(f"hyperparams for {binding.name!r} must be an object")
        built[stage] = binding.build(values, seed)
    return built


def _fold_indices(metric, dataset, folds, seed):
    if metric == "auc_roc":
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        return list(splitter.split(dataset.features, dataset.target))
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(splitter.split(dataset.features))


def evaluate(payload: dict, bindings: Mapping[str, AlgorithmBinding],
             cache: DatasetCache) -> Outcome:
    """Score one eval request; never raises for bad requests, only returns."""
    try:
        req = _validated(payload)
        chosen = _resolve(req["pipeline"], bindings)
    except (KeyError, TypeError, ValueError) as e:
        detail = f"missing field {e}" if isinstance(e, KeyError) else str(e)
        return Outcome("failed", (), detail)

    predictor = chosen["prediction"]
    if predictor.survival and req["metric"] != "c_index":
        return Outcome("failed", (),
                       f"{predictor.name!r} supports only the c_index metric")

    scores: list[float] = []
    try:
        with _Deadline(req["time_budget_s"]) as deadline:
            dataset = cache.get(req["dataset"])
            if req["metric"] == "c_index" and not dataset.has_survival_columns:
                raise ValueError(f"dataset {dataset.name!r} declares no "
                                 "time/event columns")
            for train, test in _fold_indices(req["metric"], dataset,
                                             req["folds"], req["seed"]):
                deadline.check()
                built = _build_steps(chosen, req["hyperparams"], req["seed"])
                scores.append(_score_fold(req["metric"], dataset, built,
                                          train, test))
            deadline.check()
    except BudgetExceeded:
        return Outcome("timeout", tuple(scores), "time budget exceeded")
    except Exception as e:
        return Outcome("failed", (), f"{type(e).__name__}: {e}")
    if not all(np.isfinite(scores)):
        return Outcome("failed", (), "non-finite fold score")
    return Outcome("ok", tuple(scores))


def _score_fold(metric, dataset, built, train, test) -> float:
    X_tr, X_te = dataset.features[train], dataset.features[test]
    y_tr, y_te = dataset.target[train], dataset.target[test]

    transforms = [(stage, built[stage]) for stage in
                  ("imputation", "feature_processing") if stage in built]
    model = built["prediction"]
    calibration = built.get("calibration", Calibration(None))

    if isinstance(model, CoxPH):
        # survival path: transforms are fit against the event labels, the
        # model against (time, event); calibration is rank-preserving for a
        # concordance metric so it is skipped
        Z_tr, Z_te = X_tr, X_te
        for _, step in transforms:
            Z_tr = step.fit_transform(Z_tr, y_tr)
            Z_te = step.transform(Z_te)
        model.fit(Z_tr, dataset.time[train], dataset.event[train])
        risk = model.risk(Z_te)
        return concordance_index(dataset.time[test], dataset.event[test], risk)

    if calibration.method is not None:
        model = CalibratedClassifierCV(model, method=calibration.method, cv=3)
    chain = Pipeline(transforms + [("prediction", model)]) if transforms else model
    chain.fit(X_tr, y_tr)
    prob = chain.predict_proba(X_te)[:, 1]
    if metric == "auc_roc":
        return float(roc_auc_score(y_te, prob))
    return concordance_index(dataset.time[test], dataset.event[test], prob)
