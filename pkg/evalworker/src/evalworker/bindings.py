"""Registry mapping wire algorithm names onto scikit-learn constructors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from sklearn.decomposition import PCA
from sklearn.ensemble import (ExtraTreesClassifier, GradientBoostingClassifier,
                              RandomForestClassifier)
from sklearn.feature_selection import SelectKBest, f_classif
from sklearn.impute import KNNImputer, SimpleImputer
from sklearn.linear_model import LogisticRegression
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.preprocessing import MinMaxScaler, StandardScaler

from .survival import CoxPH

STAGES = ("imputation", "feature_processing", "prediction", "calibration")


@dataclass(frozen=True)
class Hyperparam:
    """One tunable knob: wire name, constructor keyword, value kind."""

    name: str
    kwarg: str
    kind: str  # "int" | "float" | "str"

    def coerce(self, value):
        if self.kind == "int":
            return int(round(float(value)))
        if self.kind == "float":
            return float(value)
        if self.kind == "str":
            if not isinstance(value, str):
                raise ValueError(f"{self.name} expects a string, got {value!r}")
            return value
        raise ValueError(f"unknown kind {self.kind!r}")


@dataclass(frozen=True)
class AlgorithmBinding:
    """How one advertised algorithm is constructed for a request."""

    name: str
    stage: str
    factory: Callable[..., object]
    hyperparams: tuple[Hyperparam, ...] = ()
    seeded: bool = False
    survival: bool = False

    def build(self, values: Mapping[str, object], seed: int):
        by_name = {hp.name: hp for hp in self.hyperparams}
        unknown = sorted(set(values) - set(by_name))
        if unknown:
            raise ValueError(f"{self.name} has no hyperparam {unknown[0]!r}")
        kwargs = {by_name[k].kwarg: by_name[k].coerce(v) for k, v in values.items()}
        if self.seeded:
            kwargs["random_state"] = int(seed)
        return self.factory(**kwargs)


class Calibration:
    """Marker produced by calibration-stage factories."""

    def __init__(self, method: str | None):
        self.method = method


def default_bindings() -> dict[str, AlgorithmBinding]:
    """The stock registry: every name here is advertised in the handshake."""
    table = [
        AlgorithmBinding("mean_impute", "imputation",
                         lambda: SimpleImputer(strategy="mean")),
        AlgorithmBinding("median_impute", "imputation",
                         lambda: SimpleImputer(strategy="median")),
        AlgorithmBinding("most_frequent_impute", "imputation",
                         lambda: SimpleImputer(strategy="most_frequent")),
        AlgorithmBinding("knn_impute", "imputation", KNNImputer,
                         (Hyperparam("neighbors", "n_neighbors", "int"),)),

        AlgorithmBinding("standardize", "feature_processing", StandardScaler),
        AlgorithmBinding("minmax_scale", "feature_processing", MinMaxScaler),
        AlgorithmBinding("pca_reduce", "feature_processing",
                         lambda **kw: PCA(svd_solver="full", **kw),
                         (Hyperparam("variance_kept", "n_components", "float"),)),
        AlgorithmBinding("select_best", "feature_processing",
                         lambda **kw: SelectKBest(f_classif, **kw),
                         (Hyperparam("k", "k", "int"),)),

        AlgorithmBinding("logistic", "prediction",
                         lambda **kw: LogisticRegression(max_iter=500, **kw),
                         (Hyperparam("c", "C", "float"),)),
        AlgorithmBinding("random_forest", "prediction", RandomForestClassifier,
                         (Hyperparam("trees", "n_estimators", "int"),
                          Hyperparam("max_depth", "max_depth", "int")),
                         seeded=True),
        AlgorithmBinding("gradient_boosting", "prediction", GradientBoostingClassifier,
                         (Hyperparam("trees", "n_estimators", "int"),
                          Hyperparam("learning_rate", "learning_rate", "float")),
                         seeded=True),
        AlgorithmBinding("extra_trees", "prediction", ExtraTreesClassifier,
                         (Hyperparam("trees", "n_estimators", "int"),),
                         seeded=True),
        AlgorithmBinding("knn_classifier", "prediction", KNeighborsClassifier,
                         (Hyperparam("neighbors", "n_neighbors", "int"),
                          Hyperparam("weights", "weights", "str"))),
        AlgorithmBinding("gaussian_nb", "prediction", GaussianNB,
                         (Hyperparam("var_smoothing", "var_smoothing", "float"),)),
        AlgorithmBinding("cox_ph", "prediction", CoxPH,
                         (Hyperparam("ridge", "ridge", "float"),),
                         survival=True),

        AlgorithmBinding("no_calibration", "calibration",
                         lambda: Calibration(None)),
        AlgorithmBinding("sigmoid_calibration", "calibration",
                         lambda: Calibration("sigmoid")),
        AlgorithmBinding("isotonic_calibration", "calibration",
                         lambda: Calibration("isotonic")),
    ]
    return {b.name: b for b in table}


def capabilities(bindings: Mapping[str, AlgorithmBinding]) -> list[str]:
    return sorted(bindings)
