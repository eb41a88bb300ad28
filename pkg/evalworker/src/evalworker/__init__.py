"""Evaluation worker: scores tabular ML pipelines over a line protocol."""

from .bindings import AlgorithmBinding, Hyperparam, capabilities, default_bindings
from .datasets import Dataset, DatasetCache, load_dataset
from .runner import Outcome, evaluate
from .survival import CoxPH, concordance_index
from .worker import serve

__all__ = [
    "AlgorithmBinding",
    "CoxPH",
    "Dataset",
    "DatasetCache",
    "Hyperparam",
    "Outcome",
    "capabilities",
    "concordance_index",
    "default_bindings",
    "evaluate",
    "load_dataset",
    "serve",
]
