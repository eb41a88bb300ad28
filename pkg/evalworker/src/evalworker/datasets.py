"""Tabular dataset loading: headered delimited text plus a JSON sidecar.

A dataset named `foo.csv` is described by `foo.meta.json` in the same
directory, which declares the target column and, for survival scoring, the
time and event columns:

    {"target": "outcome", "time": "time", "event": "event", "delimiter": ","}

Every column not named in the sidecar is a feature. Features must parse as
numbers; empty cells become NaN and are left for the imputation stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class Dataset:
    name: str
    features: np.ndarray
    feature_names: tuple[str, ...]
    target: np.ndarray
    time: np.ndarray | None
    event: np.ndarray | None

    @property
    def has_survival_columns(self) -> bool:
        return self.time is not None and self.event is not None


def load_dataset(data_dir: Path, name: str) -> Dataset:
    data_dir = Path(data_dir)
    if Path(name).name != name:
        raise ValueError(f"dataset name must be a plain file name, got {name!r}")
    path = data_dir / name
    if not path.is_file():
        raise FileNotFoundError(f"no dataset file {name!r} in {data_dir}")
    meta_path = data_dir / (path.stem + ".meta.json")
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing sidecar {meta_path.name!r}")
    meta = json.loads(meta_path.read_text())
    target_col = meta["target"]
    time_col = meta.get("time")
    event_col = meta.get("event")
    delimiter = meta.get("delimiter", ",")

    frame = pd.read_csv(path, sep=delimiter)
    for col in filter(None, (target_col, time_col, event_col)):
        if col not in frame.columns:
            raise ValueError(f"declared column {col!r} is not in {name!r}")

    special = {c for c in (target_col, time_col, event_col) if c}
    feature_names = tuple(c for c in frame.columns if c not in special)
    if not feature_names:
        raise ValueError(f"{name!r} has no feature columns")
    features = frame[list(feature_names)].to_numpy(dtype=float)

    target = frame[target_col].to_numpy()
    if np.isnan(target.astype(float)).any():
        raise ValueError("target column contains missing values")
    target = target.astype(int)

    time = event = None
    if time_col and event_col:
        time = frame[time_col].to_numpy(dtype=float)
        event = frame[event_col].to_numpy(dtype=float).astype(int)
        if np.isnan(time).any():
            raise ValueError("time column contains missing values")
    return Dataset(name, features, feature_names, target, time, event)


class DatasetCache:
    """Read-through cache; datasets are immutable once loaded."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self._loaded: dict[str, Dataset] = {}

    def get(self, name: str) -> Dataset:
        if name not in self._loaded:
            self._loaded[name] = load_dataset(self.data_dir, name)
        return self._loaded[name]
