"""Bayesian model averaging over evaluated pipelines.

Each evaluated config gets the posterior probability that it is the best
of the batch: decompositions are drawn from the sample pool, performance
vectors are drawn jointly from the GP posterior under each drawn
decomposition, and a config's weight is the fraction of draws in which
it attains the maximum. Joint sampling is what makes the weights
correlation-aware: near-duplicate configs split the probability mass a
diagonal approximation would hand them twice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp
from .engine import RunState
from .rng import substream
from .space import PipelineConfig, config_fingerprint


@dataclass(frozen=True)
class EnsembleModel:
    """Weighted pipeline configs plus provenance of the weighting run."""

    members: tuple[tuple[PipelineConfig, float], ...]
    run_id: str
    n_samples: int
    seed: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        total = 0.0
        for config, w in self.members:
            if w < 0:
                raise ValueError(f"negative weight {w} for {config.pipeline_key()}")
            total += w
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, expected 1 within 1e-9")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.members])

    @property
    def configs(self) -> list[PipelineConfig]:
        return [c for c, _ in self.members]


def _sample_cholesky(cov: np.ndarray) -> np.ndarray:
    n = cov.shape[0]
    scale = max(float(np.trace(cov)) / max(n, 1), 1e-18)
    for jit in (0.0,) + gp.JITTERS:
        try:
            return np.linalg.cholesky(cov + jit * scale * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise gp.FactorizationError("posterior covariance is not positive definite")


def argmax_fractions(mean: np.ndarray, cov: np.ndarray, n_samples: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Fraction of joint-normal draws in which each coordinate is largest."""
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
        raise ValueError("mean must be a vector and cov a matching square matrix")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    L = _sample_cholesky(np.asarray(cov, dtype=float))
    draws = mean + rng.standard_normal((n_samples, len(mean))) @ L.T
    counts = np.bincount(np.argmax(draws, axis=1), minlength=len(mean))
    return counts / n_samples


def ensemble_weights(state: RunState, n_z_samples: int = 20,
                     n_f_samples: int = 2500, seed: int = 0) -> EnsembleModel:
    """Posterior probability of being the best pipeline, per evaluated config.

    Decompositions are drawn from the pool with probability proportional
    to exp(log posterior), self-normalized over the pool; per drawn
    decomposition, performance at every observed config is sampled jointly
    from the GP posterior given the full history. Deterministic given seed.
    """
    if not state.records:
        raise ValueError("history is empty")
    entries = state.pool.entries()
    if not entries:
        raise ValueError("sample pool is empty")
    if n_z_samples < 1 or n_f_samples < 1:
        raise ValueError("sample counts must be >= 1")

    space = state.space
    members: list[PipelineConfig] = []
    seen: set[str] = set()
    for record in state.records:
        fp = config_fingerprint(record.config)
        if fp not in seen:
            seen.add(fp)
            members.append(record.config)
    Xq = np.array([space.encode(c).vector for c in members])

    log_post = np.array([e.log_post for e in entries])
    probs = np.exp(log_post - log_post.max())
    probs /= probs.sum()
    z_rng = substream(seed, "ensemble_z")
    z_draws = z_rng.choice(len(entries), size=n_z_samples, p=probs)

    X, y, extra = state.data()
    counts = np.zeros(len(members))
    posteriors: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for k, zi in enumerate(z_draws):
        zi = int(zi)
        if zi not in posteriors:
            entry = entries[zi]
            params = entry.params
            if params is None:
                params = state.cache.params_for(space, entry.z, X, y,
                                                extra_noise=extra)
            model = gp.Surrogate(space, entry.z, params, X, y, extra_noise=extra)
            posteriors[zi] = model.joint_posterior(Xq)
        mean, cov = posteriors[zi]
        f_rng = substream(seed, "ensemble_f", k)
        counts += argmax_fractions(mean, cov, n_f_samples, f_rng) * n_f_samples
    weights = counts / (n_z_samples * n_f_samples)
    weights = weights / weights.sum()

    return EnsembleModel(
        members=tuple(zip(members, weights.tolist())),
        run_id=f"{state.dataset_ref}:{state.seed}",
        n_samples=n_z_samples * n_f_samples,
        seed=seed,
    )


def ensemble_score(model: EnsembleModel, per_member_scores) -> float:
    """Weighted sum of member scores; scores keyed by config."""
    total = 0.0
    for config, w in model.members:
        if w == 0.0:
            continue
        if config not in per_member_scores:
            raise ValueError(f"missing score for member {config.pipeline_key()}")
        total += w * float(per_member_scores[config])
    return total


def truncate(model: EnsembleModel, k: int) -> EnsembleModel:
    """Keep the k largest weights and renormalize.

    Ordering ties are broken by history index (earlier members win), and
    kept members stay in history order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(model.members):
        return model
    order = sorted(range(len(model.members)),
                   key=lambda i: (-model.members[i][1], i))
    keep = sorted(order[:k])
    total = sum(model.members[i][1] for i in keep)
    if total <= 0:
        raise ValueError("all kept weights are zero")
    members = tuple((model.members[i][0], model.members[i][1] / total) for i in keep)
    return EnsembleModel(members, model.run_id, model.n_samples, model.seed)
