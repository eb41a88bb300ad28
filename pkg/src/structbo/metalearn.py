"""Warmstarting new runs from a repository of past runs.

A run on a dataset leaves behind a compact record: the dataset's
meta-features, the learned subspace count and assignment counts, and a
summary of the fitted kernel parameters. For a new dataset, records are
weighted by meta-feature similarity and averaged into a calibrated
prior: subspace labels are not comparable across runs, so per-subspace
quantities are aligned by descending subspace size before averaging,
and scale-like parameters are averaged in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import gp, structure
from .engine import RunState, refresh_model
from .partition import Decomposition


class MetaLearnError(ValueError):
    pass


@dataclass(frozen=True)
class MetaFeatureVector:
    """Named numeric dataset descriptors; arbitrary entries may be added."""

    entries: dict[str, float]
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.entries:
            raise MetaLearnError("meta-feature vector has no entries")
        for name, value in self.entries.items():
            if not isinstance(name, str) or not name:
                raise MetaLearnError(f"bad meta-feature name {name!r}")
            if not math.isfinite(value):
                raise MetaLearnError(f"meta-feature {name} is not finite: {value!r}")

    def __getitem__(self, name: str) -> float:
        return self.entries[name]

    @property
    def names(self) -> set[str]:
        return set(self.entries)


def _column_moments(col: np.ndarray) -> tuple[float, float, float, float, float]:
    """(std, iqr, |mean|, |skew|, kurtosis) of one column, missing excluded."""
    vals = col[~np.isnan(col)]
    if len(vals) == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    std = float(np.std(vals))
    iqr = float(np.percentile(vals, 75) - np.percentile(vals, 25))
    amean = abs(float(np.mean(vals)))
    if len(vals) < 3 or std == 0.0:
        return std, iqr, amean, 0.0, 0.0
    return (std, iqr, amean, abs(float(stats.skew(vals))),
            float(stats.kurtosis(vals)))


def _pairwise_corr(X: np.ndarray, cols: list[int]) -> tuple[float, float]:
    vals = []
    for i, a in enumerate(cols):
        for b in cols[i + 1:]:
            mask = ~(np.isnan(X[:, a]) | np.isnan(X[:, b]))
            if mask.sum() < 3:
                continue
            xa, xb = X[mask, a], X[mask, b]
            if np.std(xa) == 0 or np.std(xb) == 0:
                continue
            vals.append(abs(float(np.corrcoef(xa, xb)[0, 1])))
    if not vals:
        return 0.0, 0.0
    return float(np.mean(vals)), float(np.max(vals))


def meta_features(X, y, *, event=None, categorical: tuple[int, ...] = (),
                  extra: dict[str, float] | None = None) -> MetaFeatureVector:
    """Statistical descriptors of a tabular dataset (NaN marks missing).

    `categorical` lists integer-coded columns excluded from moment and
    correlation statistics; `event` is an observed-event indicator used
    for the censoring rate; `extra` adds caller-defined named entries.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise MetaLearnError("dataset must be a non-empty 2-d array")
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise MetaLearnError("target length does not match the sample count")
    n, d = X.shape
    bad = [c for c in categorical if not 0 <= c < d]
    if bad:
        raise MetaLearnError(f"categorical column indices out of range: {bad}")

    notes: list[str] = []
    missing = np.isnan(X)
    all_missing = [j for j in range(d) if missing[:, j].all()]
    for j in all_missing:
        notes.append(f"column {j} is entirely missing; its statistics are 0")

    _, counts = np.unique(y, return_counts=True)
    if len(counts) == 0:
        raise MetaLearnError("target has no values")
    probs = counts / counts.sum()
    entropy = float(-(probs * np.log(probs)).sum())

    numeric = [j for j in range(d) if j not in set(categorical)]
    moments = np.array([_column_moments(X[:, j]) for j in numeric]) \
        if numeric else np.zeros((0, 5))
    distinct = [len(np.unique(X[~missing[:, j], j])) for j in range(d)]
    mean_corr, max_corr = _pairwise_corr(X, numeric)

    y_code = np.unique(y, return_inverse=True)[1].astype(float)
    tcorr = []
    for j in numeric:
        mask = ~missing[:, j]
        if mask.sum() < 3 or np.std(X[mask, j]) == 0 or np.std(y_code[mask]) == 0:
            continue
        tcorr.append(abs(float(np.corrcoef(X[mask, j], y_code[mask])[0, 1])))

    entries = {
        "n_samples": float(n),
        "n_features": float(d),
        "log_n_samples": math.log(n),
        "log_n_features": math.log(d),
        "feature_sample_ratio": d / n,
        "missing_fraction": float(missing.mean()),
        "max_column_missing": float(missing.mean(axis=0).max()),
        "constant_fraction": sum(1 for k in distinct if k <= 1) / d,
        "binary_fraction": sum(1 for k in distinct if k == 2) / d,
        "categorical_fraction": len(set(categorical)) / d,
        "n_classes": float(len(counts)),
        "minority_fraction": float(counts.min() / n),
        "imbalance_ratio": float(counts.max() / counts.min()),
        "target_entropy": entropy,
        "censoring_rate": 0.0 if event is None
        else float(1.0 - np.mean(np.asarray(event, dtype=float))),
        "mean_feature_std": float(moments[:, 0].mean()) if numeric else 0.0,
        "mean_feature_iqr": float(moments[:, 1].mean()) if numeric else 0.0,
        "mean_abs_feature_mean": float(moments[:, 2].mean()) if numeric else 0.0,
        "mean_abs_skewness": float(moments[:, 3].mean()) if numeric else 0.0,
        "mean_kurtosis": float(moments[:, 4].mean()) if numeric else 0.0,
        "mean_pairwise_correlation": mean_corr,
        "max_pairwise_correlation": max_corr,
        "mean_target_correlation": float(np.mean(tcorr)) if tcorr else 0.0,
    }
    for name, value in (extra or {}).items():
        if name in entries:
            raise MetaLearnError(f"extra entry {name!r} collides with a built-in")
        entries[name] = float(value)
    return MetaFeatureVector(entries, tuple(notes))


# -- past-run records ----------------------------------------------------------

@dataclass(frozen=True)
class PriorRecord:
    """What one finished run contributes to future warmstarts.

    Per-subspace summaries (`gamma`, `log_signal_variance`,
    `categorical_similarity`) are in the decomposition's label order;
    `dim_log_lengthscale` maps encoded dimension index to log lengthscale.
    """

    dataset_id: str
    meta: MetaFeatureVector
    M: int
    gamma: tuple[float, ...]
    mu: float
    log_noise: float
    log_signal_variance: tuple[float, ...]
    categorical_similarity: tuple[float, ...]
    dim_log_lengthscale: tuple[tuple[int, float], ...]
    z: Decomposition

    def __post_init__(self):
        if self.M != self.z.M:
            raise MetaLearnError(f"M={self.M} but decomposition has {self.z.M}")
        if not (len(self.gamma) == len(self.log_signal_variance)
                == len(self.categorical_similarity) == self.M):
            raise MetaLearnError("per-subspace summaries must have length M")
        if any(not g > 0 for g in self.gamma):
            raise MetaLearnError("gamma entries must be positive")
        vals = ([self.mu, self.log_noise] + list(self.gamma)
                + list(self.log_signal_variance) + list(self.categorical_similarity)
                + [v for _, v in self.dim_log_lengthscale])
        if any(not math.isfinite(v) for v in vals):
            raise MetaLearnError("record contains non-finite values")


def fit_record(state: RunState, dataset_id: str,
               meta: MetaFeatureVector) -> PriorRecord:
    """Summarize a finished run: MAP decomposition, fitted params, and
    Dirichlet posterior-mean counts rescaled to the prior's total mass."""
    if len(state.records) < 10:
        raise MetaLearnError(
            f"need at least 10 evaluations to fit a record, have {len(state.records)}")
    if state.map_z is None or state.map_params is None:
        refresh_model(state)
    z, params = state.map_z, state.map_params
    counts = z.counts().astype(float)
    gamma = np.asarray(state.prior.gamma, dtype=float)
    post = (counts + gamma) * (gamma.sum() / (counts.sum() + gamma.sum()))

    kstruct = gp.KernelStructure(state.space, z)
    dim_ls = []
    for m in range(z.M):
        for dim, ls in zip(kstruct.numeric_dims[m], params.lengthscales[m]):
            dim_ls.append((int(dim), math.log(ls)))
    return PriorRecord(
        dataset_id=dataset_id,
        meta=meta,
        M=z.M,
        gamma=tuple(post.tolist()),
        mu=params.mean,
        log_noise=math.log(params.noise_variance),
        log_signal_variance=tuple(math.log(v) for v in params.signal_variance),
        categorical_similarity=tuple(params.categorical_similarity),
        dim_log_lengthscale=tuple(sorted(dim_ls)),
        z=z,
    )


# -- similarity weighting -------------------------------------------------------

def standardized_distances(new_meta: MetaFeatureVector,
                           repository: list[PriorRecord]) -> np.ndarray:
    """L1 distance to each record over shared entries, each entry scaled
    by the repository's per-entry IQR (scale 1 when the IQR is zero)."""
    if not repository:
        raise MetaLearnError("repository is empty")
    scales: dict[str, float] = {}
    for name in {n for rec in repository for n in rec.meta.names}:
        vals = [rec.meta[name] for rec in repository if name in rec.meta.names]
        iqr = float(np.percentile(vals, 75) - np.percentile(vals, 25))
        scales[name] = iqr if iqr > 0 else 1.0
    out = []
    for rec in repository:
        shared = new_meta.names & rec.meta.names
        if not shared:
            raise MetaLearnError(
                f"no meta-features shared with record {rec.dataset_id!r}")
        out.append(sum(abs(new_meta[n] - rec.meta[n]) / scales[n]
                       for n in sorted(shared)))
    return np.array(out)


def similarity_weights(distances: np.ndarray, mode: str = "similarity",
                       temperature: float = 1.0) -> np.ndarray:
    if mode == "similarity":
        if not temperature > 0:
            raise MetaLearnError("temperature must be positive")
        logits = -np.asarray(distances, dtype=float) / temperature
        w = np.exp(logits - logits.max())
        return w / w.sum()
    if mode == "distance_proportional":
        ell = np.asarray(distances, dtype=float)
        total = ell.sum()
        if total == 0:
            raise MetaLearnError(
                "all distances are zero; literal distance weighting is "
                "undefined here, use mode='similarity'")
        return ell / total
    raise MetaLearnError(f"unknown mode {mode!r}")


# -- the calibrated prior -------------------------------------------------------

@dataclass(frozen=True)
class CalibratedPrior:
    """Similarity-weighted average of past runs, ready to start a new one.

    Per-subspace vectors are indexed by rank (subspaces sorted by
    descending size); `z0` is relabeled into the same rank order.
    """

    M: int
    gamma: tuple[float, ...]
    mu0: float
    log_noise: float
    log_signal_variance: tuple[float, ...]
    categorical_similarity: tuple[float, ...]
    dim_log_lengthscale: tuple[tuple[int, float], ...]
    z0: Decomposition
    eta: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if any(w < 0 for _, w in self.eta):
            raise MetaLearnError("source weights must be non-negative")
        total = sum(w for _, w in self.eta)
        if abs(total - 1.0) > 1e-9:
            raise MetaLearnError(f"source weights sum to {total!r}, expected 1")
        if not (len(self.gamma) == len(self.log_signal_variance)
                == len(self.categorical_similarity) == self.M):
            raise MetaLearnError("per-subspace vectors must have length M")
        if self.z0.M != self.M:
            raise MetaLearnError("initial decomposition does not match M")


def _rank_order(z: Decomposition) -> list[int]:
    """Subspace labels sorted by descending unit count, ties by label."""
    counts = z.counts()
    return sorted(range(z.M), key=lambda m: (-counts[m], m))


def _rank_relabel(z: Decomposition, M: int) -> Decomposition:
    """Relabel subspaces into rank order, merging the smallest ones when
    the target count is below z.M (they join the last kept rank)."""
    order = _rank_order(z)
    rank_of = {label: r for r, label in enumerate(order)}
    assignment = {u: min(rank_of[m], M - 1) for u, m in z.assignment.items()}
    return Decomposition(assignment, M)


def calibrate(new_meta: MetaFeatureVector, repository: list[PriorRecord],
              mode: str = "similarity", temperature: float = 1.0) -> CalibratedPrior:
    """Weight records by meta-feature similarity and average their priors.

    mode="similarity" (default) uses eta proportional to exp(-distance /
    temperature); mode="distance_proportional" uses eta = distance / sum(distance),
    which weights dissimilar datasets more and is kept only for
    comparability with its printed source.
    """
    ell = standardized_distances(new_meta, repository)
    eta = similarity_weights(ell, mode=mode, temperature=temperature)

    M = int(math.floor(float(eta @ [rec.M for rec in repository]) + 0.5))
    M = max(M, 1)

    aligned_gamma = np.zeros(M)
    aligned_lsv = np.zeros(M)
    aligned_rho = np.zeros(M)
    rank_mass = np.zeros(M)
    for w, rec in zip(eta, repository):
        for r, label in enumerate(_rank_order(rec.z)[:M]):
            aligned_gamma[r] += w * rec.gamma[label]
            aligned_lsv[r] += w * rec.log_signal_variance[label]
            aligned_rho[r] += w * rec.categorical_similarity[label]
            rank_mass[r] += w
    for r in range(M):
        if rank_mass[r] == 0:
            # only zero-weight records reach this rank: average them evenly
            recs = [rec for rec in repository if rec.M > r]
            labels = [_rank_order(rec.z)[r] for rec in recs]
            aligned_gamma[r] = np.mean([rec.gamma[la] for rec, la in zip(recs, labels)])
            aligned_lsv[r] = np.mean(
                [rec.log_signal_variance[la] for rec, la in zip(recs, labels)])
            aligned_rho[r] = np.mean(
                [rec.categorical_similarity[la] for rec, la in zip(recs, labels)])
            rank_mass[r] = 1.0

    dim_num = {}
    dim_mass = {}
    for w, rec in zip(eta, repository):
        for dim, logls in rec.dim_log_lengthscale:
            dim_num[dim] = dim_num.get(dim, 0.0) + w * logls
            dim_mass[dim] = dim_mass.get(dim, 0.0) + w
    dim_ls = tuple(sorted(
        (dim, dim_num[dim] / dim_mass[dim] if dim_mass[dim] > 0
         else np.mean([v for r in repository for d, v in r.dim_log_lengthscale
                       if d == dim]))
        for dim in dim_num))

    best = max(range(len(repository)), key=lambda j: (eta[j], -j))
    z0 = _rank_relabel(repository[best].z, M)

    return CalibratedPrior(
        M=M,
        gamma=tuple((aligned_gamma / rank_mass).tolist()),
        mu0=float(eta @ [rec.mu for rec in repository]),
        log_noise=float(eta @ [rec.log_noise for rec in repository]),
        log_signal_variance=tuple((aligned_lsv / rank_mass).tolist()),
        categorical_similarity=tuple((aligned_rho / rank_mass).tolist()),
        dim_log_lengthscale=dim_ls,
        z0=z0,
        eta=tuple((rec.dataset_id, float(w)) for rec, w in zip(repository, eta)),
    )


# -- applying a calibrated prior ------------------------------------------------

@dataclass(frozen=True)
class Warmstart:
    """Drop-in start configuration for a new run."""

    prior: structure.StructurePrior
    init_z: Decomposition
    init_params: gp.KernelParams


def initial_kernel_params(space, prior: CalibratedPrior) -> gp.KernelParams:
    """Materialize kernel params for prior.z0 from the averaged summaries."""
    kstruct = gp.KernelStructure(space, prior.z0)
    ls_map = dict(prior.dim_log_lengthscale)
    lengthscales = []
    for m in range(prior.M):
        row = []
        for dim in kstruct.numeric_dims[m]:
            if dim not in ls_map:
                raise MetaLearnError(
                    f"calibrated prior has no lengthscale for dimension {dim}")
            row.append(math.exp(ls_map[dim]))
        lengthscales.append(tuple(row))
    rho = tuple(min(max(r, 0.0), 1.0 - 1e-9) for r in prior.categorical_similarity)
    params = gp.KernelParams(
        signal_variance=tuple(math.exp(v) for v in prior.log_signal_variance),
        lengthscales=tuple(lengthscales),
        categorical_similarity=rho,
        noise_variance=max(math.exp(prior.log_noise), gp.NOISE_FLOOR),
        mean=prior.mu0,
    )
    params.validate(kstruct)
    return params


def warmstart(space, prior: CalibratedPrior) -> Warmstart:
    prior.z0.validate_for(space)
    return Warmstart(
        prior=structure.StructurePrior(prior.M, prior.gamma),
        init_z=prior.z0,
        init_params=initial_kernel_params(space, prior),
    )
