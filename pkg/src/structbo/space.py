"""Conditional pipeline search space: stages, algorithms, hyperparameters.

A pipeline picks one algorithm per stage; only the chosen algorithms'
hyperparameters are relevant. Configurations encode to fixed-length
vectors: one categorical dimension per stage plus one dimension per
hyperparameter of every algorithm, with inactive dimensions carrying
the normalized default and a False activity flag.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .rng import substream

KINDS = ("continuous", "integer", "categorical")


class SpaceError(ValueError):
    """Raised for malformed space definitions or invalid configurations."""


@dataclass(frozen=True)
class HyperparamSpec:
    """One hyperparameter: numeric range or category list, plus a default."""

    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple | None = None
    default: object = None
    log_scale: bool = False

    def validate(self, where: str) -> None:
        if self.kind not in KINDS:
            raise SpaceError(f"{where}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise SpaceError(f"{where}: categorical hyperparam needs a non-empty category list")
            if len(set(self.categories)) != len(self.categories):
                raise SpaceError(f"{where}: duplicate categories")
            if self.default not in self.categories:
                raise SpaceError(f"{where}: default {self.default!r} not among categories")
            if self.log_scale:
                raise SpaceError(f"{where}: log_scale is only valid for continuous hyperparams")
            return
        if self.lower is None or self.upper is None:
            raise SpaceError(f"{where}: numeric hyperparam needs bounds [lo, hi]")
        if not self.lower < self.upper:
            raise SpaceError(f"{where}: bounds must satisfy lo < hi, got [{self.lower}, {self.upper}]")
        if self.kind == "integer":
            if self.log_scale:
                raise SpaceError(f"{where}: log_scale is only valid for continuous hyperparams")
            for b, label in ((self.lower, "lo"), (self.upper, "hi"), (self.default, "default")):
                if b != int(b):
                    raise SpaceError(f"{where}: integer hyperparam has non-integer {label} {b!r}")
        if self.log_scale and self.lower <= 0:
            raise SpaceError(f"{where}: log_scale needs a positive lower bound")
        if not self.lower <= self.default <= self.upper:
            raise SpaceError(f"{where}: default {self.default!r} outside [{self.lower}, {self.upper}]")

    def normalize(self, value) -> float:
        """Map a raw value to [0,1] (categories map to their index)."""
        if self.kind == "categorical":
            try:
                return float(self.categories.index(value))
            except ValueError:
                raise SpaceError(f"hyperparam {self.name}: unknown category {value!r}") from None
        v = float(value)
        if not self.lower <= v <= self.upper:
            raise SpaceError(f"hyperparam {self.name}: value {value!r} outside [{self.lower}, {self.upper}]")
        if self.log_scale:
            return (math.log(v) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (v - self.lower) / (self.upper - self.lower)

    def denormalize(self, x: float):
        """Inverse of normalize; integers round half-up, categories by index."""
        if self.kind == "categorical":
            idx = min(max(int(math.floor(x + 0.5)), 0), len(self.categories) - 1)
            return self.categories[idx]
        x = min(max(float(x), 0.0), 1.0)
        if self.log_scale:
            v = math.exp(math.log(self.lower) + x * (math.log(self.upper) - math.log(self.lower)))
            return min(max(v, self.lower), self.upper)
        v = self.lower + x * (self.upper - self.lower)
        if self.kind == "integer":
            return int(min(max(math.floor(v + 0.5), self.lower), self.upper))
        return v


@dataclass(frozen=True)
class AlgorithmSpec:
    """One algorithm at one stage, with its hyperparameter specs."""

    name: str
    stage: str
    hyperparams: tuple[HyperparamSpec, ...] = ()

    def validate(self) -> None:
        names = [h.name for h in self.hyperparams]
        if len(set(names)) != len(names):
            raise SpaceError(f"algorithm {self.stage}/{self.name}: duplicate hyperparam names")
        for h in self.hyperparams:
            h.validate(f"algorithm {self.stage}/{self.name}, hyperparam {h.name}")


@dataclass(frozen=True)
class DimInfo:
    """Metadata for one encoded dimension."""

    index: int
    kind: str                     # "stage" | "continuous" | "integer" | "categorical"
    stage: str
    algorithm: str | None = None  # None for stage-choice dims
    hp: HyperparamSpec | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """A point in the space: one algorithm per stage plus its hyperparam values."""

    choice: dict[str, str]            # stage -> algorithm name
    values: dict[str, dict[str, object]] = field(default_factory=dict)  # algo -> {hp -> value}

    def pipeline_key(self) -> tuple:
        return tuple(sorted(self.choice.items()))

    def __hash__(self):
        vals = tuple(sorted((a, tuple(sorted(d.items()))) for a, d in self.values.items()))
        return hash((self.pipeline_key(), vals))


@dataclass(frozen=True)
class EncodedPoint:
    """Fixed-length numeric view of a config plus its activity mask."""

    vector: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        self.vector.setflags(write=False)
        self.active.setflags(write=False)


class SearchSpace:
    """An ordered set of stages, each offering one or more algorithms."""

    def __init__(self, stages: list[str], algorithms: dict[str, list[AlgorithmSpec]]):
        if not stages:
            raise SpaceError("space needs at least one stage")
        if len(set(stages)) != len(stages):
            raise SpaceError("duplicate stage names")
        self.stages = list(stages)
        self.algorithms = {s: list(algorithms.get(s, [])) for s in self.stages}
        for s in self.stages:
            algos = self.algorithms[s]
            if not algos:
                raise SpaceError(f"stage {s}: no algorithms")
            names = [a.name for a in algos]
            if len(set(names)) != len(names):
                raise SpaceError(f"stage {s}: duplicate algorithm names")
            for a in algos:
                if a.stage != s:
                    raise SpaceError(f"algorithm {a.name}: declared stage {a.stage!r} but listed under {s!r}")
                a.validate()
        self._index()

    def _index(self) -> None:
        self.dims: list[DimInfo] = []
        self._stage_dim: dict[str, int] = {}
        self._algo_dims: dict[tuple[str, str], list[int]] = {}
        self._algo_by_name: dict[tuple[str, str], AlgorithmSpec] = {}
        for s in self.stages:
            self._stage_dim[s] = len(self.dims)
            self.dims.append(DimInfo(len(self.dims), "stage", s))
        for s in self.stages:
            for a in self.algorithms[s]:
                self._algo_by_name[(s, a.name)] = a
                idxs = []
                for h in a.hyperparams:
                    idxs.append(len(self.dims))
                    self.dims.append(DimInfo(len(self.dims), h.kind, s, a.name, h))
                self._algo_dims[(s, a.name)] = idxs
        # Config values and wire messages key hyperparams by algorithm name
        # alone, so a name carrying hyperparams may not repeat across stages.
        owner: dict[str, str] = {}
        for (s, name), a in self._algo_by_name.items():
            if name in owner and (a.hyperparams or self._algo_by_name[(owner[name], name)].hyperparams):
                raise SpaceError(
                    f"algorithm name {name!r} appears in stages {owner[name]!r} and {s!r} "
                    "with hyperparams; names with hyperparams must be unique across stages")
            owner.setdefault(name, s)
        self.dimension = len(self.dims)
        self._defaults = np.empty(self.dimension)
        for d in self.dims:
            self._defaults[d.index] = 0.0 if d.kind == "stage" else d.hp.normalize(d.hp.default)
        self._defaults.setflags(write=False)

    # -- arithmetic -------------------------------------------------------

    def pipeline_count(self) -> int:
        n = 1
        for s in self.stages:
            n *= len(self.algorithms[s])
        return n

    def stage_dim(self, stage: str) -> int:
        return self._stage_dim[stage]

    def algo(self, stage: str, name: str) -> AlgorithmSpec:
        try:
            return self._algo_by_name[(stage, name)]
        except KeyError:
            raise SpaceError(f"stage {stage}: unknown algorithm {name!r}") from None

    def algo_names(self, stage: str) -> list[str]:
        return [a.name for a in self.algorithms[stage]]

    def algo_index(self, stage: str, name: str) -> int:
        try:
            return self.algo_names(stage).index(name)
        except ValueError:
            raise SpaceError(f"stage {stage}: unknown algorithm {name!r}") from None

    def algo_dims(self, stage: str, name: str) -> list[int]:
        return self._algo_dims[(stage, name)]

    def units(self) -> list[tuple[str, str]]:
        """All (stage, algorithm) pairs in declaration order."""
        return [(s, a.name) for s in self.stages for a in self.algorithms[s]]

    # -- validation -------------------------------------------------------

    def validate_config(self, config: PipelineConfig) -> None:
        if set(config.choice) != set(self.stages):
            raise SpaceError(f"config stages {sorted(config.choice)} != space stages {sorted(self.stages)}")
        chosen = set()
        for s in self.stages:
            a = self.algo(s, config.choice[s])
            chosen.add(a.name)
            vals = config.values.get(a.name, {})
            expected = {h.name for h in a.hyperparams}
            if set(vals) != expected:
                raise SpaceError(
                    f"algorithm {s}/{a.name}: hyperparam values {sorted(vals)} != specs {sorted(expected)}")
            for h in a.hyperparams:
                h.normalize(vals[h.name])  # bounds check
        extra = set(config.values) - chosen
        if extra:
            raise SpaceError(f"config carries values for unchosen algorithms {sorted(extra)}")

    # -- encoding ---------------------------------------------------------

    def encode(self, config: PipelineConfig) -> EncodedPoint:
        self.validate_config(config)
        vec = self._defaults.copy()
        active = np.zeros(self.dimension, dtype=bool)
        for s in self.stages:
            name = config.choice[s]
            vec[self._stage_dim[s]] = float(self.algo_index(s, name))
            active[self._stage_dim[s]] = True
            a = self.algo(s, name)
            vals = config.values.get(name, {})
            for h, idx in zip(a.hyperparams, self._algo_dims[(s, name)]):
                vec[idx] = h.normalize(vals[h.name])
                active[idx] = True
        return EncodedPoint(vec, active)

    def encode_many(self, configs: list[PipelineConfig]) -> tuple[np.ndarray, np.ndarray]:
        pts = [self.encode(c) for c in configs]
        if not pts:
            return np.empty((0, self.dimension)), np.empty((0, self.dimension), dtype=bool)
        return np.array([p.vector for p in pts]), np.array([p.active for p in pts])

    def decode(self, vector: np.ndarray) -> PipelineConfig:
        if len(vector) != self.dimension:
            raise SpaceError(f"vector length {len(vector)} != dimension {self.dimension}")
        choice, values = {}, {}
        for s in self.stages:
            algos = self.algorithms[s]
            idx = min(max(int(math.floor(vector[self._stage_dim[s]] + 0.5)), 0), len(algos) - 1)
            a = algos[idx]
            choice[s] = a.name
            if a.hyperparams:
                values[a.name] = {
                    h.name: h.denormalize(vector[d])
                    for h, d in zip(a.hyperparams, self._algo_dims[(s, a.name)])
                }
        return PipelineConfig(choice, values)

    # -- sampling / enumeration --------------------------------------------

    def sample(self, rng: np.random.Generator) -> PipelineConfig:
        choice, values = {}, {}
        for s in self.stages:
            algos = self.algorithms[s]
            a = algos[rng.integers(len(algos))]
            choice[s] = a.name
            if a.hyperparams:
                values[a.name] = {h.name: _sample_hp(h, rng) for h in a.hyperparams}
        return PipelineConfig(choice, values)

    def is_discrete(self) -> bool:
        return all(d.kind != "continuous" for d in self.dims)

    def config_count(self) -> int:
        """Number of distinct configs; only meaningful for discrete spaces."""
        total = 0
        for combo in itertools.product(*(self.algorithms[s] for s in self.stages)):
            n = 1
            for a in combo:
                for h in a.hyperparams:
                    if h.kind == "categorical":
                        n *= len(h.categories)
                    elif h.kind == "integer":
                        n *= int(h.upper) - int(h.lower) + 1
                    else:
                        raise SpaceError("config_count undefined for continuous hyperparams")
            total += n
        return total

    def enumerate_configs(self, limit: int = 100_000) -> list[PipelineConfig]:
        """All configs of a fully discrete space, in deterministic order."""
        if not self.is_discrete():
            raise SpaceError("cannot enumerate a space with continuous hyperparams")
        n = self.config_count()
        if n > limit:
            raise SpaceError(f"space has {n} configs, more than limit {limit}")
        out = []
        for combo in itertools.product(*(self.algorithms[s] for s in self.stages)):
            choice = {a.stage: a.name for a in combo}
            hps = [(a, h) for a in combo for h in a.hyperparams]
            grids = []
            for _, h in hps:
                if h.kind == "categorical":
                    grids.append(list(h.categories))
                else:
                    grids.append(list(range(int(h.lower), int(h.upper) + 1)))
            for point in itertools.product(*grids) if grids else [()]:
                values: dict[str, dict[str, object]] = {}
                for (a, h), v in zip(hps, point):
                    values.setdefault(a.name, {})[h.name] = v
                out.append(PipelineConfig(dict(choice), values))
        return out


def config_fingerprint(config: PipelineConfig) -> str:
    """Canonical string form of a config; stable across processes."""
    import json

    return json.dumps({"choice": config.choice, "values": config.values},
                      sort_keys=True, separators=(",", ":"))


def _sample_hp(h: HyperparamSpec, rng: np.random.Generator):
    if h.kind == "categorical":
        return h.categories[rng.integers(len(h.categories))]
    if h.kind == "integer":
        return int(rng.integers(int(h.lower), int(h.upper) + 1))
    if h.log_scale:
        return float(math.exp(rng.uniform(math.log(h.lower), math.log(h.upper))))
    return float(rng.uniform(h.lower, h.upper))


def sample_config(space: SearchSpace, rng_seed: int) -> PipelineConfig:
    """One uniform random config, deterministic for a fixed seed."""
    return space.sample(substream(rng_seed, "sample_config"))


# -- definition files -------------------------------------------------------

def load_space(definition_text: str) -> SearchSpace:
    """Parse a YAML space definition.

    Schema: {stages: [{name, algorithms: [{name, hyperparams: [
    {name, kind, bounds|categories, default, log_scale?}]}]}]}.
    """
    try:
        doc = yaml.safe_load(definition_text)
    except yaml.YAMLError as e:
        raise SpaceError(f"space definition does not parse: {e}") from None
    if not isinstance(doc, dict) or "stages" not in doc:
        raise SpaceError("space definition must be a mapping with a 'stages' list")
    if not isinstance(doc["stages"], list):
        raise SpaceError("'stages' must be a list")
    stages, algorithms = [], {}
    for i, sdoc in enumerate(doc["stages"]):
        if not isinstance(sdoc, dict) or "name" not in sdoc:
            raise SpaceError(f"stages[{i}]: each stage needs a 'name'")
        sname = str(sdoc["name"])
        stages.append(sname)
        algos = []
        for j, adoc in enumerate(sdoc.get("algorithms") or []):
            if not isinstance(adoc, dict) or "name" not in adoc:
                raise SpaceError(f"stage {sname}, algorithms[{j}]: each algorithm needs a 'name'")
            hps = []
            for k, hdoc in enumerate(adoc.get("hyperparams") or []):
                where = f"stage {sname}, algorithm {adoc['name']}, hyperparams[{k}]"
                if not isinstance(hdoc, dict):
                    raise SpaceError(f"{where}: must be a mapping")
                for req in ("name", "kind", "default"):
                    if req not in hdoc:
                        raise SpaceError(f"{where}: missing field {req!r}")
                kind = hdoc["kind"]
                if kind == "categorical":
                    cats = hdoc.get("categories")
                    if not isinstance(cats, list):
                        raise SpaceError(f"{where}: categorical needs a 'categories' list")
                    hp = HyperparamSpec(str(hdoc["name"]), kind, categories=tuple(cats),
                                        default=hdoc["default"])
                else:
                    bounds = hdoc.get("bounds")
                    if not (isinstance(bounds, list) and len(bounds) == 2):
                        raise SpaceError(f"{where}: numeric kind needs 'bounds: [lo, hi]'")
                    hp = HyperparamSpec(str(hdoc["name"]), kind, lower=float(bounds[0]),
                                        upper=float(bounds[1]), default=hdoc["default"],
                                        log_scale=bool(hdoc.get("log_scale", False)))
                hp.validate(where)
                hps.append(hp)
            algos.append(AlgorithmSpec(str(adoc["name"]), sname, tuple(hps)))
        algorithms[sname] = algos
    return SearchSpace(stages, algorithms)


def load_space_file(path) -> SearchSpace:
    with open(path, encoding="utf-8") as f:
        return load_space(f.read())


def dump_space(space: SearchSpace) -> str:
    """YAML text for a space; inverse of load_space."""
    doc = {"stages": []}
    for stage in space.stages:
        algos = []
        for a in space.algorithms[stage]:
            adoc = {"name": a.name}
            if a.hyperparams:
                hps = []
                for h in a.hyperparams:
                    hdoc = {"name": h.name, "kind": h.kind, "default": h.default}
                    if h.kind == "categorical":
                        hdoc["categories"] = list(h.categories)
                    else:
                        hdoc["bounds"] = [h.lower, h.upper]
                        if h.log_scale:
                            hdoc["log_scale"] = True
                    hps.append(hdoc)
                adoc["hyperparams"] = hps
            algos.append(adoc)
        doc["stages"].append({"name": stage, "algorithms": algos})
    return yaml.safe_dump(doc, sort_keys=False)


def default_space() -> SearchSpace:
    """The reference four-stage space shipped with the package."""
    import importlib.resources as res

    text = res.files("structbo").joinpath("data/default_space.yaml").read_text("utf-8")
    return load_space(text)
