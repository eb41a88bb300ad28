"""
Plugging in your own evaluation backend.

The optimizer never trains models itself: it sends each candidate config
to a backend and reads back per-fold scores. Any object with a
run(EvaluationRequest) -> EvaluationResult method works. This script
wires a tiny in-process backend (a made-up score over hyperparameter
values) and runs a short optimization against it.

For out-of-process evaluators, structbo.objective.ExternalBackend speaks
the same contract over a line-delimited JSON pipe; see the README.
"""
import math

from structbo.engine import AcquisitionConfig, EngineConfig, new_state, run
from structbo.objective import EvaluationRequest, EvaluationResult
from structbo.space import AlgorithmSpec, HyperparamSpec, SearchSpace


class ToyBackend:
    """Scores configs with a smooth function of their hyperparameters."""

    def run(self, request: EvaluationRequest) -> EvaluationResult:
        config = request.config
        algo = config.choice["prediction"]
        vals = config.values.get(algo, {})
        if algo == "slow_learner":
            # pretend this algorithm exceeds its time budget now and then
            if request.fold_seed % 7 == 3:
                return EvaluationResult.failure(request.request_id, "timeout",
                                                "training exceeded the budget")
            x = vals["rate"]
            base = 0.70 + 0.15 * math.exp(-((math.log10(x) + 2.0) ** 2))
        else:
            k = vals["neighbors"]
            base = 0.65 + 0.20 * math.exp(-((k - 17) / 8.0) ** 2)
        scores = [min(1.0, base + 0.01 * math.sin(31.7 * base + fold))
                  for fold in range(request.folds)]
        return EvaluationResult.ok(request.request_id, scores)


space = SearchSpace(["prediction"], {"prediction": [
    AlgorithmSpec("slow_learner", "prediction", (
        HyperparamSpec("rate", "continuous", 1e-4, 1.0, default=0.01,
                       log_scale=True),)),
    AlgorithmSpec("near_neighbors", "prediction", (
        HyperparamSpec("neighbors", "integer", 1, 60, default=5),)),
]})

state = new_state(space, seed=1, acq=AcquisitionConfig(batch_size=2),
                  engine_config=EngineConfig(folds=3, penalty_score=0.0))
run(space, ToyBackend(), budget=24, state=state)

config, score = state.incumbent
algo = config.choice["prediction"]
print(f"best score: {score:.4f} with {algo} {config.values.get(algo, {})}")
statuses = {}
for r in state.records:
    statuses[r.status] = statuses.get(r.status, 0) + 1
print(f"evaluation statuses: {statuses}")
print("failed or timed-out evaluations are kept in the history with the")
print("penalty score, so the surrogate learns to avoid that region.")
