"""Built-in benchmark suite: structure recovery and sample efficiency.

Both checks run the optimizer on the bundled synthetic benchmark with a
known subspace partition and a known optimum, so results need no external
data. The same runs serve both questions: does the learned decomposition
match the generator's (adjusted Rand index), and how many evaluations
does the optimizer need to get within 5% of the optimum compared to
seeded random search.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

from .benchmark import SyntheticBackend, make_benchmark, mini_partition, mini_space
from .engine import AcquisitionConfig, EngineConfig, new_state, run
from .partition import adjusted_rand_index
from .rng import substream
from .structure import StructurePrior


@dataclass(frozen=True)
class BenchmarkRun:
    """Outcome of one seeded optimizer run on the synthetic benchmark."""

    seed: int
    ari: float
    best_score: float
    optimum: float
    running_best: tuple[float, ...]
    seconds: float

    @property
    def optimum_fraction(self) -> float:
        return self.best_score / self.optimum


def _benchmark(seed: int, noise_sd: float = 0.01):
    space = mini_space()
    truth = mini_partition()
    return space, truth, make_benchmark(space, truth, seed=seed, amp=0.8,
                                        noise_sd=noise_sd)


def recovery_run(seed: int, *, budget: int = 150, batch_size: int = 5,
                 folds: int = 5, recorder=None) -> BenchmarkRun:
    """One optimizer run; ARI compares the MAP partition to the truth."""
    space, truth, bench = _benchmark(seed)
    started = time.monotonic()
    # concentration below 1 favors coarse partitions, countering the spurious
    # fragmentation that short histories otherwise reward
    state = new_state(space, seed=seed,
                      acq=AcquisitionConfig(batch_size=batch_size,
                                            candidate_pool_size=120,
                                            local_search_steps=20),
                      prior=StructurePrior.symmetric(6, 0.3),
                      engine_config=EngineConfig(folds=folds))
    state = run(space, SyntheticBackend(bench), budget=budget, state=state,
                recorder=recorder)
    seconds = time.monotonic() - started
    best = -math.inf
    trace = []
    for record in state.records:
        best = max(best, record.score)
        trace.append(best)
    return BenchmarkRun(seed=seed, ari=adjusted_rand_index(state.map_z, truth),
                        best_score=state.incumbent[1],
                        optimum=bench.known_optimum[1],
                        running_best=tuple(trace), seconds=seconds)


def recovery_suite(seeds=range(10), recorder_factory=None,
                   **kwargs) -> list[BenchmarkRun]:
    return [recovery_run(seed,
                         recorder=None if recorder_factory is None
                         else recorder_factory(seed), **kwargs)
            for seed in seeds]


def random_search_trace(seed: int, budget: int = 600) -> tuple[float, ...]:
    """Running best of seeded random sampling on the same benchmark."""
    space, _, bench = _benchmark(seed)
    rng = substream(seed, "random_search_baseline")
    best = -math.inf
    trace = []
    for i in range(budget):
        config = space.sample(rng)
        scores = bench.fold_scores(config, fold_seed=seed, folds=5)
        best = max(best, float(sum(scores) / len(scores)))
        trace.append(best)
    return tuple(trace)


def evaluations_to_target(running_best, target: float) -> float:
    """1-based count of evaluations until the running best reaches target;
    inf when the trace never gets there."""
    for i, value in enumerate(running_best):
        if value >= target:
            return float(i + 1)
    return math.inf


def efficiency_summary(runs: list[BenchmarkRun], *, margin: float = 0.05,
                       baseline_budget: int = 600) -> dict:
    """Median evaluations to reach within `margin` of the optimum, for the
    optimizer runs and for seeded random search on the same benchmarks."""
    bo, rs = [], []
    for r in runs:
        target = (1.0 - margin) * r.optimum
        bo.append(evaluations_to_target(r.running_best, target))
        rs.append(evaluations_to_target(random_search_trace(r.seed,
                                                            baseline_budget),
                                        target))
    return {"optimizer_median": statistics.median(bo),
            "random_median": statistics.median(rs),
            "optimizer_evals": bo, "random_evals": rs}


def format_suite(runs: list[BenchmarkRun], efficiency: dict | None = None,
                 ari_threshold: float = 0.8, min_passing: int = 8) -> str:
    lines = ["synthetic benchmark suite", "========================="]
    passing = 0
    for r in runs:
        ok = r.ari >= ari_threshold
        passing += ok
        lines.append(f"seed={r.seed}  ari={r.ari:.3f}  "
                     f"best/opt={r.optimum_fraction:.4f}  "
                     f"time={r.seconds:.1f}s  {'pass' if ok else 'FAIL'}")
    total = sum(r.seconds for r in runs)
    verdict = "pass" if passing >= min_passing else "FAIL"
    lines.append(f"recovery: {passing}/{len(runs)} seeds at ari>="
                 f"{ari_threshold} in {total:.0f}s  {verdict}")
    if efficiency is not None:
        bo = efficiency["optimizer_median"]
        rs = efficiency["random_median"]
        ok = bo <= 0.5 * rs
        lines.append(f"efficiency: median evals to 5% of optimum: "
                     f"optimizer={bo:g} random={rs:g}  "
                     f"{'pass' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
