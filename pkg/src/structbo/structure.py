"""Online learning of the kernel decomposition.

A Dirichlet-Multinomial prior over subspace assignments is combined with
the GP evidence of the observation history. Collapsed Gibbs sweeps
resample one (stage, algorithm) unit at a time using the Gumbel-Max
trick; visited decompositions accumulate in a capacity-bounded pool from
which the maximum-a-posteriori decomposition is read off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import gp
from .partition import Decomposition
from .rng import stream_seed, substream
from .space import SearchSpace


@dataclass(frozen=True)
class StructurePrior:
    """Subspace count cap M and Dirichlet concentration vector."""

    M: int
    gamma: tuple[float, ...]

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if len(self.gamma) != self.M:
            raise ValueError(f"gamma has {len(self.gamma)} entries for M={self.M}")
        if any(not g > 0 for g in self.gamma):
            raise ValueError("all gamma entries must be positive")

    @classmethod
    def symmetric(cls, M: int, gamma: float = 1.0) -> "StructurePrior":
        return cls(M, (float(gamma),) * M)


def default_prior(space: SearchSpace, gamma: float = 1.0) -> StructurePrior:
    """M defaults to number of stages + 2."""
    return StructurePrior.symmetric(len(space.stages) + 2, gamma)


def dm_log_prior(z: Decomposition, prior: StructurePrior) -> float:
    """Log Dirichlet-Multinomial mass of the assignment counts."""
    if z.M != prior.M:
        raise ValueError(f"decomposition has M={z.M}, prior has M={prior.M}")
    counts = z.counts().astype(float)
    gamma = np.asarray(prior.gamma)
    total = counts.sum()
    return float(gammaln(counts + gamma).sum() - gammaln(gamma).sum()
                 + gammaln(gamma.sum()) - gammaln(total + gamma.sum()))


class ParamsCache:
    """Fitted kernel params per decomposition, with a per-history-size
    memo of evidence values. Keeps sweeps affordable: a cache hit costs
    one factorization instead of a full marginal-likelihood fit."""

    def __init__(self, fit_seed: int = 0, fit_maxiter: int = 25):
        self.fit_seed = fit_seed
        self.fit_maxiter = fit_maxiter
        self.params: dict[tuple, gp.KernelParams] = {}
        self.fit_sizes: dict[tuple, int] = {}
        self._lml_memo: dict[tuple[tuple, int], float] = {}

    def peek(self, z: Decomposition) -> gp.KernelParams | None:
        return self.params.get(z.key())

    def params_for(self, space: SearchSpace, z: Decomposition,
                   X: np.ndarray, y: np.ndarray, *, restarts: int = 1,
                   refit: bool = False, maxiter: int | None = None,
                   extra_noise: np.ndarray | None = None,
                   init: gp.KernelParams | None = None) -> gp.KernelParams:
        key = z.key()
        # refresh params fitted on a much shorter history: comparing
        # evidence across decompositions is only fair at similar fit quality
        stale = key in self.params and len(y) >= 2 * self.fit_sizes.get(key, len(y))
        if refit or stale or key not in self.params:
            inits = [p for p in (init, self.params.get(key)) if p is not None]
            seed = stream_seed(self.fit_seed, f"params_fit:{key}", len(y))
            self.params[key] = gp.fit_params(
                space, z, X, y, restarts=restarts, seed=seed,
                maxiter=maxiter or self.fit_maxiter, extra_noise=extra_noise,
                inits=inits or None)
            self.fit_sizes[key] = len(y)
            self._lml_memo = {k: v for k, v in self._lml_memo.items() if k[0] != key}
        return self.params[key]

    def log_likelihood(self, space: SearchSpace, z: Decomposition,
                       X: np.ndarray, y: np.ndarray,
                       extra_noise: np.ndarray | None = None,
                       init: gp.KernelParams | None = None) -> float:
        """GP evidence of (X, y) under z at cached (or freshly fit) params."""
        if len(y) == 0:
            return 0.0
        key = (z.key(), len(y))
        if key not in self._lml_memo:
            if len(y) < 2:
                params = gp.default_params(gp.KernelStructure(space, z), y)
            else:
                params = self.params_for(space, z, X, y, extra_noise=extra_noise,
                                         init=init)
            structure = gp.KernelStructure(space, z)
            value, _ = gp.lml_and_grad(structure, params, X, y, extra_noise)
            self._lml_memo[key] = float(value)
        return self._lml_memo[key]


def log_unnorm_posterior(space: SearchSpace, z: Decomposition, prior: StructurePrior,
                         X: np.ndarray, y: np.ndarray,
                         cache: ParamsCache | None = None,
                         extra_noise: np.ndarray | None = None) -> float:
    """log P(history | z) + log DM(z); prior-only when history is empty."""
    cache = cache or ParamsCache()
    return cache.log_likelihood(space, z, X, y, extra_noise) + dm_log_prior(z, prior)


def gibbs_sweep(space: SearchSpace, z: Decomposition, prior: StructurePrior,
                X: np.ndarray, y: np.ndarray, seed: int,
                cache: ParamsCache | None = None,
                extra_noise: np.ndarray | None = None) -> Decomposition:
    """One pass over all units in seeded random order.

    Each unit's subspace is resampled from
    P(z_unit = m | rest) proportional to GP evidence times
    (stage-mates already in m, excluding the unit itself) + gamma_m,
    realized as an argmax over Gumbel-perturbed log scores.
    """
    if z.M != prior.M:
        raise ValueError(f"decomposition has M={z.M}, prior has M={prior.M}")
    cache = cache or ParamsCache()
    rng = substream(seed, "gibbs_sweep")
    units = sorted(z.assignment)
    order = rng.permutation(len(units))
    current = z
    for site_idx in order:
        unit = units[site_idx]
        stage = unit[0]
        parent_params = cache.peek(current)
        scores = np.empty(prior.M)
        candidates = []
        for m in range(prior.M):
            candidate = current.with_assignment(unit, m)
            candidates.append(candidate)
            count = candidate.stage_count(stage, m, exclude=unit)
            init = None
            if parent_params is not None and cache.peek(candidate) is None:
                init = gp.carry_params(space, current, parent_params, candidate)
            try:
                ll = cache.log_likelihood(space, candidate, X, y, extra_noise,
                                          init=init)
            except gp.FactorizationError:
                scores[m] = -math.inf
                continue
            scores[m] = ll + math.log(count + prior.gamma[m])
        noisy = scores + rng.gumbel(0.0, 1.0, size=prior.M)
        current = candidates[int(np.argmax(noisy))]
    return current


@dataclass
class PoolEntry:
    z: Decomposition
    log_post: float
    params: gp.KernelParams | None
    order: int


class SamplePool:
    """Visited decompositions with scores; bounded, deduplicated by z."""

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: dict[tuple, PoolEntry] = {}
        self._next_order = 0

    def __len__(self) -> int:
        return len(self._entries)

    def insert(self, z: Decomposition, log_post: float,
               params: gp.KernelParams | None = None) -> None:
        if not math.isfinite(log_post):
            raise ValueError(f"log posterior must be finite, got {log_post}")
        key = z.key()
        if key in self._entries:
            entry = self._entries[key]
            entry.log_post = log_post
            if params is not None:
                entry.params = params
        else:
            self._entries[key] = PoolEntry(z, log_post, params, self._next_order)
            self._next_order += 1
        if len(self._entries) > self.capacity:
            worst = min(self._entries.items(),
                        key=lambda kv: (kv[1].log_post, -kv[1].order))
            del self._entries[worst[0]]

    def entries(self) -> list[PoolEntry]:
        return sorted(self._entries.values(), key=lambda e: e.order)

    def restore(self, entries: list[PoolEntry]) -> None:
        """Replace the contents wholesale (checkpoint loading)."""
        if len(entries) > self.capacity:
            raise ValueError(f"{len(entries)} entries exceed capacity {self.capacity}")
        self._entries = {e.z.key(): e for e in entries}
        self._next_order = 1 + max((e.order for e in entries), default=-1)

    def rescore(self, scorer) -> None:
        """Recompute every entry's score (e.g. after history grows)."""
        for entry in self._entries.values():
            entry.log_post = float(scorer(entry.z, entry.params))


def map_decomposition(pool: SamplePool) -> Decomposition:
    """Highest-scoring pool entry; ties go to the earliest insertion."""
    entries = pool.entries()
    if not entries:
        raise ValueError("sample pool is empty")
    best = max(entries, key=lambda e: (e.log_post, -e.order))
    return best.z


def map_entry(pool: SamplePool) -> PoolEntry:
    entries = pool.entries()
    if not entries:
        raise ValueError("sample pool is empty")
    return max(entries, key=lambda e: (e.log_post, -e.order))
