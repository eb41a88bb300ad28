"""Rule-based explanation of model output.

Predicted risk scores are discretized into ordered strata; feature
conditions are mined level-wise (apriori-style) and each candidate rule
"conditions => stratum" is scored with a Beta-Binomial posterior over
its confidence. A rule is kept when the posterior probability that its
confidence exceeds the stratum's base rate clears a threshold, and the
survivors are ranked per stratum by posterior mean.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist


class RulesError(ValueError):
    pass


# -- conditions and strata -------------------------------------------------------

_OPS = ("<=", ">", "==")


@dataclass(frozen=True)
class Condition:
    """One Boolean test on a named feature."""

    feature: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise RulesError(f"unknown predicate {self.op!r}")

    def matches(self, column: np.ndarray) -> np.ndarray:
        """Row mask; missing values never match."""
        with np.errstate(invalid="ignore"):
            if self.op == "<=":
                return column <= self.value
            if self.op == ">":
                return column > self.value
            return column == self.value

    def __str__(self) -> str:
        return f"{self.feature} {self.op} {self.value:g}"


@dataclass(frozen=True)
class RiskStrata:
    """Ordered risk bands: k thresholds cut [0, 1] into k+1 labeled strata."""

    thresholds: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.thresholds) + 1:
            raise RulesError(
                f"{len(self.thresholds)} thresholds need {len(self.thresholds) + 1} "
                f"labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise RulesError("stratum labels must be unique")
        for a, b in zip(self.thresholds, self.thresholds[1:]):
            if not a < b:
                raise RulesError("thresholds must be strictly increasing")
        if self.thresholds and not (0.0 < self.thresholds[0]
                                    and self.thresholds[-1] < 1.0):
            raise RulesError("thresholds must lie strictly inside (0, 1)")

    @classmethod
    def tertiles(cls, scores,
                 labels: tuple[str, str, str] = ("low", "medium", "high")) -> "RiskStrata":
        scores = np.asarray(scores, dtype=float)
        t = tuple(float(v) for v in np.quantile(scores, [1 / 3, 2 / 3]))
        return cls(t, labels)

    def label_of(self, score: float) -> str:
        if not 0.0 <= score <= 1.0:
            raise RulesError(f"risk score {score!r} outside [0, 1]")
        return self.labels[int(np.searchsorted(self.thresholds, score, side="right"))]


def stratify(predictions, strata: RiskStrata) -> list[str]:
    """Stratum label per score: [t_k, t_{k+1}) bands, top stratum closed."""
    return [strata.label_of(float(p)) for p in np.asarray(predictions, dtype=float)]


# -- condition grid ---------------------------------------------------------------

def discretize_features(X, bins: int = 4, feature_names: list[str] | None = None,
                        categorical: tuple[int, ...] = ()) -> list[Condition]:
    """Quantile-threshold conditions per numeric feature, equality
    conditions per categorical (or binary) feature value. Constant
    features are skipped with a notice."""
    if bins < 2:
        raise RulesError("bins must be >= 2")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise RulesError("features must be a non-empty 2-d array")
    names = feature_names or [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1] or len(set(names)) != len(names):
        raise RulesError("feature names must be unique, one per column")

    out: list[Condition] = []
    for j, name in enumerate(names):
        col = X[:, j]
        vals = np.unique(col[~np.isnan(col)])
        if len(vals) <= 1:
            warnings.warn(f"feature {name} is constant; no conditions emitted")
            continue
        if j in set(categorical) or len(vals) == 2:
            out.extend(Condition(name, "==", float(v)) for v in vals)
            continue
        qs = np.quantile(col[~np.isnan(col)], np.arange(1, bins) / bins)
        for t in sorted(set(float(q) for q in qs)):
            if t >= float(vals[-1]):
                continue  # a threshold at the max makes "> t" empty
            out.append(Condition(name, "<=", t))
            out.append(Condition(name, ">", t))
    return out


# -- rules -------------------------------------------------------------------------

@dataclass(frozen=True)
class AssociationRule:
    """conditions => stratum, with Beta-Binomial posterior scoring.

    `support` counts rows matching the conditions; `hits` those also in
    the stratum; posterior is Beta(hits + a, support - hits + b).
    """

    conditions: tuple[Condition, ...]
    stratum: str
    support: int
    hits: int
    posterior_mean: float
    interval: tuple[float, float]
    lift: float
    prob_above_base: float

    def __post_init__(self):
        if not self.conditions:
            raise RulesError("rule needs at least one condition")
        if not 0 <= self.hits <= self.support:
            raise RulesError("hit count must lie in [0, support]")

    def __str__(self) -> str:
        cond = " AND ".join(str(c) for c in self.conditions)
        return (f"IF {cond} THEN {self.stratum}  "
                f"(posterior {self.posterior_mean:.3f} "
                f"[{self.interval[0]:.3f}, {self.interval[1]:.3f}], "
                f"support {self.support}, lift {self.lift:.2f})")


def _score(mask: np.ndarray, stratum_mask: np.ndarray, base: float,
           a: float, b: float) -> tuple[int, int, float, tuple[float, float], float, float]:
    n = int(mask.sum())
    s = int((mask & stratum_mask).sum())
    mean = (s + a) / (n + a + b)
    lo = float(beta_dist.ppf(0.025, s + a, n - s + b))
    hi = float(beta_dist.ppf(0.975, s + a, n - s + b))
    prob = float(beta_dist.sf(base, s + a, n - s + b))
    return n, s, mean, (lo, hi), mean / base, prob


def _rank_key(rule: AssociationRule):
    return (-rule.posterior_mean, len(rule.conditions),
            tuple(str(c) for c in rule.conditions))


def mine_rules(X, labels, *, min_support: int = 10, max_len: int = 2,
               prior: tuple[float, float] = (1.0, 1.0),
               min_posterior_confidence: float = 0.95, top_k: int = 10,
               bins: int = 4, feature_names: list[str] | None = None,
               categorical: tuple[int, ...] = (),
               conditions: list[Condition] | None = None) -> list[AssociationRule]:
    """Level-wise mining of stratum-association rules.

    Candidate condition sets combine distinct features only and must
    match at least `min_support` rows (support never grows when a
    condition is added, so every sub-rule of a survivor is frequent
    too). Survivors are scored against each stratum and kept when the
    posterior probability of beating the stratum base rate reaches
    `min_posterior_confidence`; the `top_k` per stratum are returned
    ranked by posterior mean, ties to shorter then lexicographically
    earlier rules.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise RulesError("features must be a non-empty 2-d array")
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise RulesError("labels must align with feature rows")
    if min_support < 1:
        raise RulesError("min_support must be >= 1")
    if not 1 <= max_len <= 4:
        raise RulesError("max_len must lie in [1, 4]")
    a, b = prior
    if not (a > 0 and b > 0):
        raise RulesError("prior pseudo-counts must be positive")

    strata_labels = [str(v) for v in np.unique(labels)]
    if len(strata_labels) < 2:
        warnings.warn("all rows fall in a single stratum; nothing to contrast")
        return []

    if conditions is None:
        conditions = discretize_features(X, bins=bins, feature_names=feature_names,
                                         categorical=categorical)
    names = feature_names or [f"x{j}" for j in range(X.shape[1])]
    col_of = {name: j for j, name in enumerate(names)}
    for c in conditions:
        if c.feature not in col_of:
            raise RulesError(f"condition on unknown feature {c.feature!r}")

    masks = [c.matches(X[:, col_of[c.feature]]) for c in conditions]
    frequent: list[tuple[tuple[int, ...], np.ndarray]] = []
    level = [((i,), masks[i]) for i in range(len(conditions))
             if int(masks[i].sum()) >= min_support]
    frequent.extend(level)
    for _ in range(2, max_len + 1):
        nxt = []
        for idxs, mask in level:
            used = {conditions[i].feature for i in idxs}
            for i in range(idxs[-1] + 1, len(conditions)):
                if conditions[i].feature in used:
                    continue
                joined = mask & masks[i]
                if int(joined.sum()) >= min_support:
                    nxt.append((idxs + (i,), joined))
        frequent.extend(nxt)
        level = nxt

    out: list[AssociationRule] = []
    for stratum in strata_labels:
        smask = labels.astype(str) == stratum
        base = float(smask.mean())
        kept = []
        for idxs, mask in frequent:
            n, s, mean, ci, lift, prob = _score(mask, smask, base, a, b)
            if prob >= min_posterior_confidence:
                kept.append(AssociationRule(
                    conditions=tuple(conditions[i] for i in idxs), stratum=stratum,
                    support=n, hits=s, posterior_mean=mean, interval=ci,
                    lift=lift, prob_above_base=prob))
        kept.sort(key=_rank_key)
        out.extend(kept[:top_k])
    return out


def format_rules(rules: list[AssociationRule]) -> str:
    """Human-readable boxed listing, one box per stratum."""
    if not rules:
        return "(no rules cleared the posterior threshold)"
    blocks = []
    for stratum in dict.fromkeys(r.stratum for r in rules):
        lines = [str(r) for r in rules if r.stratum == stratum]
        width = max(len(x) for x in lines + [f"stratum: {stratum}"])
        bar = "+" + "-" * (width + 2) + "+"
        body = [bar, f"| {f'stratum: {stratum}'.ljust(width)} |", bar]
        body += [f"| {x.ljust(width)} |" for x in lines]
        body.append(bar)
        blocks.append("\n".join(body))
    return "\n".join(blocks)


def rule_record(rule: AssociationRule) -> dict:
    """Machine-readable form of one rule."""
    return {
        "conditions": [{"feature": c.feature, "op": c.op, "value": c.value}
                       for c in rule.conditions],
        "stratum": rule.stratum,
        "support": rule.support,
        "hits": rule.hits,
        "posterior_mean": rule.posterior_mean,
        "interval": list(rule.interval),
        "lift": rule.lift,
        "prob_above_base": rule.prob_above_base,
    }
