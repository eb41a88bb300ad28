"""Outer Bayesian-optimization loop.

Each iteration: resample the decomposition by Gibbs sweeps, pick the
maximum-a-posteriori decomposition from the pool, refit the surrogate,
propose a batch of configs by UCB with diversity constraints (distinct
prediction algorithms from distinct subspaces), evaluate them, and
append the results to the history.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp, structure
from .objective import EvaluationRequest, EvaluationResult, conform_result, evaluate
from .partition import Decomposition, stage_aligned
from .rng import stream_seed, substream
from .space import PipelineConfig, SearchSpace, config_fingerprint, _sample_hp


def beta_default(t: int, D: int) -> float:
    """UCB exploration weight: 2 log(D t^2 pi^2 / 6), at least 1."""
    if t < 1:
        raise ValueError(f"iteration must be >= 1, got {t}")
    return max(2.0 * math.log(D * t * t * math.pi ** 2 / 6.0), 1.0)


def ucb(model: gp.Surrogate, query, beta: float) -> float:
    """Posterior mean plus sqrt(beta) posterior standard deviations."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    mean, var = model.posterior(query)
    return float(mean + math.sqrt(beta) * math.sqrt(var))


@dataclass(frozen=True)
class AcquisitionConfig:
    batch_size: int = 4
    candidate_pool_size: int = 200
    local_search_steps: int = 30
    beta_schedule: object = None          # callable (t, D) -> beta
    exhaustive_limit: int = 400           # enumerate discrete spaces up to this size

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.candidate_pool_size < self.batch_size:
            raise ValueError("candidate_pool_size must be >= batch_size")

    def beta(self, t: int, D: int) -> float:
        fn = self.beta_schedule or beta_default
        return float(fn(t, D))


@dataclass(frozen=True)
class EngineConfig:
    folds: int = 5
    metric: str = "auc_roc"
    eval_time_budget_s: float = 60.0
    penalty_score: float = 0.0
    sweeps_per_iteration: int = 1
    pool_capacity: int = 64
    refit_restarts: int = 3
    refit_maxiter: int = 60
    cache_fit_maxiter: int = 25
    map_equalize_top: int = 8
    heteroscedastic: bool = False
    initial_design: int | None = None     # default max(2B, 10)


@dataclass(frozen=True)
class EvalRecord:
    """One completed evaluation as stored in the history."""

    index: int
    iteration: int
    request_id: str
    config: PipelineConfig
    status: str
    fold_scores: tuple[float, ...]
    mean_score: float | None
    score: float                          # effective observation (penalty applied)


@dataclass(frozen=True)
class BatchProposal:
    configs: tuple[PipelineConfig, ...]
    acquisition_values: tuple[float, ...]
    prediction_algorithms: tuple[str, ...]
    subspaces: tuple[int, ...]


@dataclass
class RunState:
    """Everything the loop carries between iterations."""

    space: SearchSpace
    seed: int
    prior: structure.StructurePrior
    acq: AcquisitionConfig
    engine: EngineConfig
    dataset_ref: str = "synthetic"
    records: list[EvalRecord] = field(default_factory=list)
    pool: structure.SamplePool = None
    cache: structure.ParamsCache = None
    z_chain: Decomposition = None
    map_z: Decomposition = None
    map_params: gp.KernelParams = None
    surrogate: gp.Surrogate = None
    t: int = 0
    incumbent_index: int | None = None
    fold_seed: int = 0
    finalized: bool = False

    def __post_init__(self):
        if self.pool is None:
            self.pool = structure.SamplePool(self.engine.pool_capacity)
        if self.cache is None:
            self.cache = structure.ParamsCache(
                fit_seed=stream_seed(self.seed, "cache_fits"),
                fit_maxiter=self.engine.cache_fit_maxiter)
        if self.z_chain is None:
            self.z_chain = stage_aligned(self.space, self.prior.M)

    # -- history views -----------------------------------------------------

    def data(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        X, _ = self.space.encode_many([r.config for r in self.records])
        y = np.array([r.score for r in self.records])
        extra = None
        if self.engine.heteroscedastic:
            extra = np.array([
                (np.var(r.fold_scores) / len(r.fold_scores)) if r.fold_scores else 0.0
                for r in self.records])
        return X, y, extra

    @property
    def incumbent(self) -> tuple[PipelineConfig, float] | None:
        if self.incumbent_index is None:
            return None
        rec = self.records[self.incumbent_index]
        return rec.config, rec.score

    def _absorb(self, record: EvalRecord) -> None:
        self.records.append(record)
        if self.incumbent_index is None or record.score > self.records[self.incumbent_index].score:
            self.incumbent_index = record.index


def new_state(space: SearchSpace, seed: int, acq: AcquisitionConfig | None = None,
              prior: structure.StructurePrior | None = None, warmstart=None,
              engine_config: EngineConfig | None = None,
              dataset_ref: str = "synthetic") -> RunState:
    acq = acq or AcquisitionConfig()
    engine_config = engine_config or EngineConfig()
    if warmstart is not None:
        prior = warmstart.prior
    prior = prior or structure.default_prior(space)
    state = RunState(space=space, seed=seed, prior=prior, acq=acq,
                     engine=engine_config, dataset_ref=dataset_ref,
                     fold_seed=stream_seed(seed, "fold_split"))
    if warmstart is not None:
        if getattr(warmstart, "init_z", None) is not None:
            warmstart.init_z.validate_for(space)
            state.z_chain = warmstart.init_z
        if getattr(warmstart, "init_params", None) is not None:
            state.cache.params[state.z_chain.key()] = warmstart.init_params
            # with no observations the structure posterior is the prior, so
            # its mode is the transferred decomposition
            state.map_z = state.z_chain
            state.map_params = warmstart.init_params
    return state


# -- candidate generation ------------------------------------------------------

def _mutate(space: SearchSpace, config: PipelineConfig, rng,
            stages: list[str] | None = None,
            stage_choices: dict[str, list[str]] | None = None,
            hp_whitelist=None) -> PipelineConfig:
    """One coordinate-wise move: resample a stage choice or one hyperparam."""
    stages = stages if stages is not None else space.stages
    active_hps = []
    for s in space.stages:
        a = space.algo(s, config.choice[s])
        for h in a.hyperparams:
            if hp_whitelist is None or (s, a.name) in hp_whitelist:
                active_hps.append((s, a.name, h))
    stage_moves = []
    for s in stages:
        options = stage_choices[s] if stage_choices else space.algo_names(s)
        options = [a for a in options if a != config.choice[s]]
        if options:
            stage_moves.append((s, options))
    n_moves = len(active_hps) + len(stage_moves)
    if n_moves == 0:
        return config
    pick = int(rng.integers(n_moves))
    if pick < len(active_hps):
        s, a, h = active_hps[pick]
        values = {k: dict(v) for k, v in config.values.items()}
        values[a][h.name] = _sample_hp(h, rng)
        return PipelineConfig(dict(config.choice), values)
    s, options = stage_moves[pick - len(active_hps)]
    new_algo = options[int(rng.integers(len(options)))]
    choice = dict(config.choice)
    old_algo = choice[s]
    choice[s] = new_algo
    values = {k: dict(v) for k, v in config.values.items() if k != old_algo}
    spec = space.algo(s, new_algo)
    if spec.hyperparams:
        values[new_algo] = {h.name: _sample_hp(h, rng) for h in spec.hyperparams}
    return PipelineConfig(choice, values)


def _hill_climb(space, start, score_fn, steps, rng, **mutate_kw):
    best, best_score = start, score_fn(start)
    for _ in range(steps):
        prop = _mutate(space, best, rng, **mutate_kw)
        s = score_fn(prop)
        if s > best_score:
            best, best_score = prop, s
    return best


def _candidate_set(state: RunState, acq: AcquisitionConfig, beta: float,
                   rng) -> list[PipelineConfig]:
    space, model = state.space, state.surrogate
    if space.is_discrete():
        try:
            if space.config_count() <= acq.exhaustive_limit:
                return space.enumerate_configs(acq.exhaustive_limit)
        except Exception:
            pass
    candidates = [space.sample(rng) for _ in range(acq.candidate_pool_size)]
    # coverage: one random config forced onto each prediction-stage algorithm
    div_stage = _diversity_stage(space)
    for name in space.algo_names(div_stage):
        c = space.sample(rng)
        if c.choice[div_stage] != name:
            choice = dict(c.choice)
            values = {k: dict(v) for k, v in c.values.items() if k != c.choice[div_stage]}
            choice[div_stage] = name
            spec = space.algo(div_stage, name)
            if spec.hyperparams:
                values[name] = {h.name: _sample_hp(h, rng) for h in spec.hyperparams}
            c = PipelineConfig(choice, values)
        candidates.append(c)
    if model is None or state.incumbent is None:
        return candidates
    inc_config, _ = state.incumbent
    sqrt_beta = math.sqrt(beta)

    def full_ucb(config):
        mean, var = model.posterior(space.encode(config))
        return mean + sqrt_beta * math.sqrt(var)

    candidates.append(_hill_climb(space, inc_config, full_ucb,
                                  acq.local_search_steps, rng))
    # decomposition-exploiting search: refine each component independently,
    # moving only that subspace's stage choices and hyperparams
    z = state.map_z
    for m in range(z.M):
        stage_choices = {}
        whitelist = set()
        for s in space.stages:
            owned = [a.name for a in space.algorithms[s]
                     if z.assignment[(s, a.name)] == m]
            if owned:
                stage_choices[s] = owned
            whitelist.update((s, a) for a in owned)
        if not whitelist:
            continue

        def comp_ucb(config, m=m):
            mean, var = model.component_posterior(m, space.encode(config))
            return mean + sqrt_beta * math.sqrt(var)

        refined = _hill_climb(space, inc_config, comp_ucb, acq.local_search_steps,
                              rng, stages=list(stage_choices), stage_choices=stage_choices,
                              hp_whitelist=whitelist)
        candidates.append(refined)
    return candidates


def _diversity_stage(space: SearchSpace) -> str:
    return "prediction" if "prediction" in space.stages else space.stages[-1]


def propose_batch(state: RunState, acq: AcquisitionConfig | None = None) -> BatchProposal:
    """Candidate generation, UCB scoring, and constrained greedy selection."""
    acq = acq or state.acq
    space = state.space
    if state.surrogate is None:
        raise ValueError("surrogate not fitted; run the initial design first")
    beta = acq.beta(max(state.t, 1), space.dimension)
    rng = substream(state.seed, "acquisition", state.t)
    candidates = _candidate_set(state, acq, beta, rng)
    seen, unique = set(), []
    for c in candidates:
        fp = config_fingerprint(c)
        if fp not in seen:
            seen.add(fp)
            unique.append(c)
    X, _ = space.encode_many(unique)
    mean, var = state.surrogate.posterior_batch(X)
    values = mean + math.sqrt(beta) * np.sqrt(var)
    order = np.argsort(-values, kind="stable")

    div_stage = _diversity_stage(space)
    z = state.map_z
    n_algos = len(space.algo_names(div_stage))
    pred_subspaces = {z.assignment[(div_stage, a)] for a in space.algo_names(div_stage)}
    B = min(acq.batch_size, n_algos)
    enforce_subspaces = len(pred_subspaces) >= B

    chosen: list[int] = []
    used_algos: set[str] = set()
    used_subspaces: set[int] = set()
    for idx in order:
        c = unique[idx]
        algo = c.choice[div_stage]
        sub = z.assignment[(div_stage, algo)]
        if algo in used_algos or sub in used_subspaces:
            continue
        chosen.append(int(idx))
        used_algos.add(algo)
        used_subspaces.add(sub)
        if len(chosen) == B:
            break
    if len(chosen) < B and not enforce_subspaces:
        # fewer prediction-bearing subspaces than B: fill on distinct algorithms
        for idx in order:
            c = unique[idx]
            algo = c.choice[div_stage]
            if algo in used_algos:
                continue
            chosen.append(int(idx))
            used_algos.add(algo)
            if len(chosen) == B:
                break
    configs = tuple(unique[i] for i in chosen)
    return BatchProposal(
        configs=configs,
        acquisition_values=tuple(float(values[i]) for i in chosen),
        prediction_algorithms=tuple(c.choice[div_stage] for c in configs),
        subspaces=tuple(z.assignment[(div_stage, c.choice[div_stage])] for c in configs),
    )


# -- evaluation dispatch -------------------------------------------------------

def _dispatch(requests: list[EvaluationRequest], backend) -> list[EvaluationResult]:
    if hasattr(backend, "run_batch"):
        raw = backend.run_batch(requests)
        by_id = {r.request_id: r for r in raw}
        out = []
        for req in requests:
            if req.request_id not in by_id:
                out.append(EvaluationResult.failure(req.request_id, "failed",
                                                    "backend returned no result"))
            else:
                out.append(conform_result(req, by_id[req.request_id]))
        return out
    return [evaluate(req, backend) for req in requests]


def _evaluate_configs(state: RunState, configs, backend, iteration: int,
                      recorder=None) -> None:
    ec = state.engine
    requests = []
    for config in configs:
        rid = f"eval-{len(state.records) + len(requests):05d}"
        requests.append(EvaluationRequest(
            request_id=rid, config=config, dataset_ref=state.dataset_ref,
            folds=ec.folds, fold_seed=state.fold_seed, metric=ec.metric,
            time_budget_s=ec.eval_time_budget_s))
    results = _dispatch(requests, backend)
    for req, res, config in zip(requests, results, configs):
        score = res.mean_score if res.status == "ok" else ec.penalty_score
        record = EvalRecord(
            index=len(state.records), iteration=iteration, request_id=req.request_id,
            config=config, status=res.status, fold_scores=tuple(res.fold_scores),
            mean_score=res.mean_score, score=float(score))
        state._absorb(record)
        if recorder is not None:
            recorder.on_record(record, res)


# -- structure + surrogate refresh ----------------------------------------------

def _equalize_pool_fits(state: RunState, X, y, extra, *, final: bool) -> None:
    """Refit stale params behind the leading pool entries.

    Evidence values are only comparable when the params behind them were
    fit on similar history lengths, so before reading off the MAP the top
    candidates are brought up to the current fit size. Mid-run only
    clearly stale fits are refreshed; the final refresh catches any gap.
    """
    n = len(y)
    top = sorted(state.pool.entries(), key=lambda e: -e.log_post)
    for entry in top[:state.engine.map_equalize_top]:
        fitted_at = state.cache.fit_sizes.get(entry.z.key(), 0)
        if fitted_at < n and (final or n >= 1.5 * fitted_at):
            entry.params = state.cache.params_for(
                state.space, entry.z, X, y, refit=True,
                maxiter=state.engine.refit_maxiter, extra_noise=extra)


def refresh_model(state: RunState, final: bool = False) -> None:
    """Gibbs sweeps, pool update, MAP selection, and a full refit."""
    X, y, extra = state.data()
    if len(y) < 2:
        return
    for k in range(state.engine.sweeps_per_iteration):
        sweep_seed = stream_seed(state.seed, "gibbs", state.t, k)
        state.z_chain = structure.gibbs_sweep(
            state.space, state.z_chain, state.prior, X, y, sweep_seed,
            cache=state.cache, extra_noise=extra)
        lp = structure.log_unnorm_posterior(
            state.space, state.z_chain, state.prior, X, y,
            cache=state.cache, extra_noise=extra)
        state.pool.insert(state.z_chain, lp,
                          state.cache.params.get(state.z_chain.key()))
    _equalize_pool_fits(state, X, y, extra, final=final)
    state.pool.rescore(lambda z, params: structure.log_unnorm_posterior(
        state.space, z, state.prior, X, y, cache=state.cache, extra_noise=extra))
    state.map_z = structure.map_decomposition(state.pool)
    state.map_params = state.cache.params_for(
        state.space, state.map_z, X, y, restarts=state.engine.refit_restarts,
        refit=True, maxiter=state.engine.refit_maxiter, extra_noise=extra)
    lp = structure.log_unnorm_posterior(
        state.space, state.map_z, state.prior, X, y, cache=state.cache,
        extra_noise=extra)
    state.pool.insert(state.map_z, lp, state.map_params)
    state.surrogate = gp.Surrogate(state.space, state.map_z, state.map_params,
                                   X, y, extra)


def run(space: SearchSpace, backend, budget: int,
        acq: AcquisitionConfig | None = None,
        prior: structure.StructurePrior | None = None,
        warmstart=None, seed: int = 0,
        engine_config: EngineConfig | None = None,
        recorder=None, state: RunState | None = None,
        max_seconds: float | None = None,
        dataset_ref: str = "synthetic") -> RunState:
    """Optimize until `budget` total evaluations (or the clock) runs out."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if state is None:
        state = new_state(space, seed, acq, prior, warmstart, engine_config,
                          dataset_ref)
    started = time.monotonic()

    def out_of_time():
        return max_seconds is not None and time.monotonic() - started >= max_seconds

    ec = state.engine
    n_init = ec.initial_design or max(2 * state.acq.batch_size, 10)
    if len(state.records) < min(n_init, budget):
        rng = substream(state.seed, "initial_design")
        configs = [state.space.sample(rng)
                   for _ in range(min(n_init, budget))][len(state.records):]
        _evaluate_configs(state, configs, backend, iteration=0, recorder=recorder)
        if recorder is not None:
            recorder.on_iteration(state)
    while len(state.records) < budget and not out_of_time():
        state.t += 1
        refresh_model(state)
        remaining = budget - len(state.records)
        if state.surrogate is None:
            rng = substream(state.seed, "fallback_random", state.t)
            configs = [state.space.sample(rng)
                       for _ in range(min(state.acq.batch_size, remaining))]
        else:
            proposal = propose_batch(state)
            configs = list(proposal.configs)[:remaining]
        if not configs:
            break
        _evaluate_configs(state, configs, backend, iteration=state.t,
                          recorder=recorder)
        if recorder is not None:
            recorder.on_iteration(state)
    if len(state.records) >= budget and not state.finalized and not out_of_time():
        # absorb the last batch into the structure posterior before reporting
        state.t += 1
        refresh_model(state, final=True)
        state.finalized = True
        if recorder is not None:
            recorder.on_iteration(state)
    return state
