"""Synthetic pipeline-scoring benchmark with known additive structure.

The score of a config is an exact sum of per-subspace components. Each
component couples everything it owns through a joint choice pattern: the
pattern indexes both a lookup table (one independent value per pattern)
and the signs of smooth per-dimension bumps for the active
hyperparameters. Flipping bump signs with the pattern means no coarser
or finer grouping can reproduce the response, so the true decomposition
is identifiable from data, while the optimum stays exactly computable
and the cross-subspace interaction exactly zero.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .objective import EvaluationRequest, EvaluationResult
from .partition import Decomposition
from .rng import substream
from .space import (
    AlgorithmSpec,
    HyperparamSpec,
    PipelineConfig,
    SearchSpace,
    SpaceError,
    config_fingerprint,
)


@dataclass(frozen=True)
class _Bump:
    """Per-dimension score contribution with known extrema."""

    kind: str
    height: float = 0.0
    center: float = 0.0          # normalized location of the peak
    width: float = 0.3
    table: tuple[float, ...] = ()  # categorical: value per category index

    def value(self, x: float) -> float:
        if self.kind == "categorical":
            return self.table[int(math.floor(x + 0.5))]
        return self.height * math.exp(-(((x - self.center) / self.width) ** 2))

    def best(self, hp: HyperparamSpec, sign: float) -> tuple[object, float]:
        """(raw value, bump value) of the attainable maximum of sign * bump."""
        if self.kind == "categorical":
            vals = np.asarray(self.table)
            idx = int(np.argmax(sign * vals))
            return hp.categories[idx], float(vals[idx])
        if self.kind == "integer":
            span = int(hp.upper) - int(hp.lower)
            grid = np.arange(span + 1) / span
            k = int(np.argmax([sign * self.value(x) for x in grid]))
            return int(hp.lower) + k, self.value(grid[k])
        if sign > 0:
            raw = hp.denormalize(self.center)
            return raw, self.value(hp.normalize(raw))
        # minimizing a bump over [0, 1] lands on the endpoint far from the peak
        x = 0.0 if self.center >= 0.5 else 1.0
        raw = hp.denormalize(x)
        return raw, self.value(hp.normalize(raw))

    def max_value(self) -> float:
        if self.kind == "categorical":
            return max(self.table)
        return self.height


class SyntheticBenchmark:
    """Deterministic additive score function over a search space."""

    ALGO_BUDGET = 1.2  # shared per-algorithm total of bump maxima

    def __init__(self, space: SearchSpace, true_partition: Decomposition, seed: int,
                 noise_sd: float = 0.0, amp: float = 0.6,
                 perturb: tuple[int, float] | None = None):
        if noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if perturb is not None and not 0.0 <= perturb[1] <= 1.0:
            raise ValueError("perturbation scale must lie in [0, 1]")
        true_partition.validate_for(space)
        self.space = space
        self.true_partition = true_partition
        self.seed = int(seed)
        self.noise_sd = float(noise_sd)
        self.amp = float(amp)
        self.perturb = perturb
        M = true_partition.M
        w = substream(seed, "component_weights").dirichlet(np.full(M, 5.0))
        self.weights = w
        # bump parameters per owned hyperparam dimension; each algorithm's
        # bump heights are rescaled to a shared budget so response amplitude
        # is homogeneous across algorithms (heterogeneous amplitudes would
        # make the additive structure harder to identify for no gain)
        self._bumps: dict[int, _Bump] = {}
        self._owner: dict[int, int] = {}
        for s in space.stages:
            for a in space.algorithms[s]:
                m = true_partition.assignment[(s, a.name)]
                raw: list[tuple[int, _Bump]] = []
                for hp, idx in zip(a.hyperparams, space.algo_dims(s, a.name)):
                    self._owner[idx] = m
                    rng = substream(seed, f"bump:{s}:{a.name}:{hp.name}")
                    if hp.kind == "categorical":
                        table = tuple(rng.uniform(0.0, 1.0, len(hp.categories)).tolist())
                        raw.append((idx, _Bump("categorical", table=table)))
                    else:
                        raw.append((idx, _Bump(
                            hp.kind, height=float(rng.uniform(0.5, 1.0)),
                            center=float(rng.uniform(0.0, 1.0)),
                            width=float(rng.uniform(0.15, 0.4)))))
                # equal per-dim height ALGO_BUDGET/sqrt(n) keeps the response
                # variance comparable across algorithms with different
                # hyperparameter counts
                height = self.ALGO_BUDGET / math.sqrt(len(raw)) if raw else 0.0
                for idx, b in raw:
                    if b.kind == "categorical":
                        scale = height / max(b.table)
                        self._bumps[idx] = _Bump(
                            "categorical", table=tuple(v * scale for v in b.table))
                    else:
                        self._bumps[idx] = _Bump(
                            b.kind, height=height, center=b.center, width=b.width)
        # a perturbed variant keeps the partition and sign structure but
        # jitters bump placement, giving a family of related score functions
        if perturb is not None:
            pseed, pscale = perturb
            for idx in sorted(self._bumps):
                b = self._bumps[idx]
                prng = substream(self.seed, f"perturb:{pseed}", idx)
                if b.kind == "categorical":
                    f = 1.0 + pscale * (prng.uniform(size=len(b.table)) * 2.0 - 1.0)
                    self._bumps[idx] = _Bump(
                        "categorical", table=tuple(v * fi for v, fi in zip(b.table, f)))
                else:
                    c = min(1.0, max(0.0, b.center + pscale * (prng.uniform() * 2.0 - 1.0)))
                    h = b.height * (1.0 + pscale * (prng.uniform() * 2.0 - 1.0))
                    self._bumps[idx] = _Bump(b.kind, height=h, center=c, width=b.width)
        # stages each component owns at least one algorithm of
        self._owned_stages: list[list[str]] = [[] for _ in range(M)]
        for s in space.stages:
            owners = {true_partition.assignment[(s, a.name)] for a in space.algorithms[s]}
            for m in owners:
                self._owned_stages[m].append(s)
        self._dim_stage = {d.index: d.stage for d in space.dims if d.kind != "stage"}
        # per-dimension sign factors, one per value a co-owned stage can take
        # in the pattern; forced to vary across values so every dimension's
        # response genuinely depends on the other stages of its component
        self._tau: dict[tuple[int, str, int], dict[str, float]] = {}
        for m in range(M):
            dims_m = [i for i, o in self._owner.items() if o == m]
            for s in self._owned_stages[m]:
                owned = [a.name for a in space.algorithms[s]
                         if true_partition.assignment[(s, a.name)] == m]
                vals = sorted(owned)
                if len(owned) < len(space.algorithms[s]):
                    vals.append("~other")
                for d in dims_m:
                    if self._dim_stage[d] == s:
                        continue
                    draws = substream(seed, f"tau:{m}:{s}", d).uniform(size=len(vals))
                    signs = [1.0 if u < 0.5 else -1.0 for u in draws]
                    if len(signs) > 1 and len(set(signs)) == 1:
                        signs[-1] = -signs[-1]
                    self._tau[(m, s, d)] = dict(zip(vals, signs))
        self._base_cache: dict[tuple[int, tuple], float] = {}
        self.known_optimum = self._locate_optimum()

    # -- scoring ------------------------------------------------------------

    def _pattern(self, m: int, choice: dict[str, str]) -> tuple:
        out = []
        for s in self._owned_stages[m]:
            a = choice[s]
            out.append(a if self.true_partition.assignment[(s, a)] == m else "~other")
        return tuple(out)

    def _base(self, m: int, pattern: tuple) -> float:
        key = (m, pattern)
        if key not in self._base_cache:
            rng = substream(self.seed, f"base:{m}:{'|'.join(pattern)}")
            val = float(rng.uniform(0.0, 1.0))
            if self.perturb is not None:
                pseed, pscale = self.perturb
                prng = substream(self.seed, f"pbase:{pseed}:{m}:{'|'.join(pattern)}")
                val = (1.0 - pscale) * val + pscale * float(prng.uniform())
            self._base_cache[key] = val
        return self._base_cache[key]

    def _sign(self, m: int, pattern: tuple, dim: int) -> float:
        """Bump sign for dimension `dim`: product of per-stage factors over
        the component's other owned stages, so it flips with their choices."""
        out = 1.0
        for s, value in zip(self._owned_stages[m], pattern):
            if s == self._dim_stage[dim]:
                continue
            out *= self._tau[(m, s, dim)][value]
        return out

    def component_score(self, m: int, config: PipelineConfig) -> float:
        """Contribution of subspace m; depends only on m's slice of config."""
        if not 0 <= m < self.true_partition.M:
            raise IndexError(f"subspace index {m} outside [0, {self.true_partition.M})")
        pattern = self._pattern(m, config.choice)
        signed, budget = 0.0, 0.0
        for s in self._owned_stages[m]:
            a = config.choice[s]
            if self.true_partition.assignment[(s, a)] != m:
                continue
            spec = self.space.algo(s, a)
            for hp, idx in zip(spec.hyperparams, self.space.algo_dims(s, a)):
                x = hp.normalize(config.values[a][hp.name])
                signed += self._sign(m, pattern, idx) * self._bumps[idx].value(x)
                budget += self._bumps[idx].max_value()
        num = self._base(m, pattern) + self.amp * (signed + budget)
        return float(self.weights[m] * num / (1.0 + 2.0 * self.amp * budget))

    def score(self, config: PipelineConfig) -> float:
        self.space.validate_config(config)
        return float(sum(self.component_score(m, config)
                         for m in range(self.true_partition.M)))

    def fold_scores(self, config: PipelineConfig, fold_seed: int, folds: int) -> list[float]:
        s = self.score(config)
        if self.noise_sd == 0.0:
            return [s] * folds
        rng = substream(self.seed, f"fold_noise:{config_fingerprint(config)}", fold_seed)
        return [float(min(max(s + rng.normal(0.0, self.noise_sd), 0.0), 1.0))
                for _ in range(folds)]

    # -- optimum --------------------------------------------------------------

    def _locate_optimum(self) -> tuple[PipelineConfig, float]:
        best_config, best_value = None, -math.inf
        space = self.space
        for combo in itertools.product(*(space.algorithms[s] for s in space.stages)):
            choice = {a.stage: a.name for a in combo}
            patterns = [self._pattern(m, choice) for m in range(self.true_partition.M)]
            values: dict[str, dict[str, object]] = {}
            for a in combo:
                m = self.true_partition.assignment[(a.stage, a.name)]
                for hp, idx in zip(a.hyperparams, space.algo_dims(a.stage, a.name)):
                    sign = self._sign(m, patterns[m], idx)
                    raw, _ = self._bumps[idx].best(hp, sign)
                    values.setdefault(a.name, {})[hp.name] = raw
            config = PipelineConfig(choice, values)
            value = self.score(config)
            if value > best_value:
                best_config, best_value = config, value
        return best_config, best_value


class SyntheticBackend:
    """Objective backend over a SyntheticBenchmark."""

    def __init__(self, benchmark: SyntheticBenchmark):
        self.benchmark = benchmark

    def run(self, request: EvaluationRequest) -> EvaluationResult:
        scores = self.benchmark.fold_scores(request.config, request.fold_seed, request.folds)
        return EvaluationResult.ok(request.request_id, scores)


def make_benchmark(space: SearchSpace, partition: Decomposition, seed: int,
                   noise_sd: float = 0.0, amp: float = 0.6,
                   perturb: tuple[int, float] | None = None) -> SyntheticBenchmark:
    """Build a benchmark whose score is exactly additive across `partition`."""
    if not isinstance(partition, Decomposition):
        raise SpaceError("partition must be a Decomposition")
    partition.validate_for(space)
    return SyntheticBenchmark(space, partition, seed, noise_sd=noise_sd, amp=amp,
                              perturb=perturb)


# -- a compact space with a non-obvious ground-truth partition ---------------

def mini_space() -> SearchSpace:
    """Four stages, 11 algorithms, 15 hyperparameters, 40 pipelines."""
    c = HyperparamSpec
    algos = {
        "imputation": [
            AlgorithmSpec("fill_a", "imputation", (
                c("iters", "integer", 1, 20, default=5),)),
            AlgorithmSpec("fill_b", "imputation", (
                c("decay", "continuous", 0.01, 1.0, default=0.1, log_scale=True),)),
        ],
        "feature_processing": [
            AlgorithmSpec("proj_a", "feature_processing", (
                c("parts", "integer", 2, 30, default=10),
                c("smooth", "continuous", 0.0, 1.0, default=0.5))),
            AlgorithmSpec("proj_b", "feature_processing", (
                c("gain", "continuous", 0.1, 10.0, default=1.0, log_scale=True),)),
        ],
        "prediction": [
            AlgorithmSpec("model_a", "prediction", (
                c("trees", "integer", 10, 200, default=50),
                c("rate", "continuous", 0.01, 1.0, default=0.1, log_scale=True))),
            AlgorithmSpec("model_b", "prediction", (
                c("reg", "continuous", 0.001, 10.0, default=0.1, log_scale=True),)),
            AlgorithmSpec("model_c", "prediction", (
                c("k", "integer", 1, 40, default=5),
                c("bw", "continuous", 0.05, 2.0, default=0.5, log_scale=True))),
            AlgorithmSpec("model_d", "prediction", (
                c("cut", "continuous", 0.1, 0.9, default=0.5),)),
            AlgorithmSpec("model_e", "prediction", (
                c("steps", "integer", 5, 100, default=20),
                c("mom", "continuous", 0.5, 0.99, default=0.9))),
        ],
        "calibration": [
            AlgorithmSpec("cal_a", "calibration", (
                c("bins", "integer", 2, 20, default=10),)),
            AlgorithmSpec("cal_b", "calibration", (
                c("temp", "continuous", 0.1, 5.0, default=1.0, log_scale=True),)),
        ],
    }
    return SearchSpace(list(algos), algos)


def mini_partition(space: SearchSpace | None = None, M: int = 3) -> Decomposition:
    """Ground truth for mini_space. Each subspace spans two stages and the
    feature-processing and prediction stages are split across subspaces,
    so recovery requires genuinely cross-stage, per-algorithm grouping."""
    groups = {
        ("imputation", "fill_a"): 0, ("imputation", "fill_b"): 0,
        ("feature_processing", "proj_a"): 0, ("feature_processing", "proj_b"): 1,
        ("prediction", "model_a"): 1, ("prediction", "model_b"): 1,
        ("prediction", "model_c"): 1, ("prediction", "model_d"): 2,
        ("prediction", "model_e"): 2,
        ("calibration", "cal_a"): 2, ("calibration", "cal_b"): 2,
    }
    return Decomposition(groups, M)


# -- a wider space for transfer studies ---------------------------------------

def family_space() -> SearchSpace:
    """Three stages, twelve algorithms, 64 pipelines. Wide enough that a
    short run observes only a fraction of the algorithm combinations, so
    score estimates for unseen combinations must come from the learned
    additive structure rather than from direct memory."""
    c = HyperparamSpec
    algos = {
        "imputation": [
            AlgorithmSpec("imp_a", "imputation", (
                c("iters", "integer", 1, 20, default=5),)),
            AlgorithmSpec("imp_b", "imputation", (
                c("decay", "continuous", 0.01, 1.0, default=0.1, log_scale=True),)),
            AlgorithmSpec("imp_c", "imputation", (
                c("frac", "continuous", 0.0, 1.0, default=0.5),)),
            AlgorithmSpec("imp_d", "imputation", (
                c("k", "integer", 1, 15, default=3),)),
        ],
        "feature_processing": [
            AlgorithmSpec("feat_a", "feature_processing", (
                c("parts", "integer", 2, 30, default=10),)),
            AlgorithmSpec("feat_b", "feature_processing", (
                c("gain", "continuous", 0.1, 10.0, default=1.0, log_scale=True),)),
            AlgorithmSpec("feat_c", "feature_processing", (
                c("smooth", "continuous", 0.0, 1.0, default=0.5),)),
            AlgorithmSpec("feat_d", "feature_processing", (
                c("bw", "continuous", 0.05, 2.0, default=0.5, log_scale=True),)),
        ],
        "prediction": [
            AlgorithmSpec("pred_a", "prediction", (
                c("trees", "integer", 10, 200, default=50),)),
            AlgorithmSpec("pred_b", "prediction", (
                c("reg", "continuous", 0.001, 10.0, default=0.1, log_scale=True),)),
            AlgorithmSpec("pred_c", "prediction", (
                c("rate", "continuous", 0.01, 1.0, default=0.1, log_scale=True),)),
            AlgorithmSpec("pred_d", "prediction", (
                c("cut", "continuous", 0.1, 0.9, default=0.5),)),
        ],
    }
    return SearchSpace(list(algos), algos)


def family_partition() -> Decomposition:
    """Ground truth for family_space: every stage is split across two
    subspaces and every subspace spans two stages."""
    groups = {
        ("imputation", "imp_a"): 0, ("imputation", "imp_b"): 0,
        ("feature_processing", "feat_a"): 0, ("feature_processing", "feat_b"): 0,
        ("imputation", "imp_c"): 1, ("imputation", "imp_d"): 1,
        ("prediction", "pred_a"): 1, ("prediction", "pred_b"): 1,
        ("feature_processing", "feat_c"): 2, ("feature_processing", "feat_d"): 2,
        ("prediction", "pred_c"): 2, ("prediction", "pred_d"): 2,
    }
    return Decomposition(groups, 3)


def benchmark_family(k: int, *, seed: int = 42, noise_sd: float = 0.01,
                     amp: float = 0.8, scale: float = 0.35) -> SyntheticBenchmark:
    """Member k of a family of related score functions on family_space:
    all members share the true partition and sign structure; bump centers,
    heights, and base tables are jittered per member."""
    return make_benchmark(family_space(), family_partition(), seed=seed,
                          noise_sd=noise_sd, amp=amp, perturb=(k, scale))
