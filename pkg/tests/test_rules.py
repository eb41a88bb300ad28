import itertools

import numpy as np
import pytest
from scipy.stats import beta as beta_dist

from structbo.rules import (
    AssociationRule,
    Condition,
    RiskStrata,
    RulesError,
    discretize_features,
    format_rules,
    mine_rules,
    rule_record,
    stratify,
)


class TestStrata:
    def strata(self):
        return RiskStrata((0.33, 0.66), ("low", "medium", "high"))

    def test_boundary_goes_up(self):
        assert stratify([0.66], self.strata()) == ["high"]
        assert stratify([0.33], self.strata()) == ["medium"]

    def test_extremes(self):
        s = self.strata()
        assert stratify([0.0], s) == ["low"]
        assert stratify([1.0], s) == ["high"]

    def test_score_outside_unit_interval_rejected(self):
        with pytest.raises(RulesError):
            stratify([1.2], self.strata())
        with pytest.raises(RulesError):
            stratify([-0.1], self.strata())

    def test_tertiles_split_uniform_scores_evenly(self):
        scores = (np.arange(300) + 0.5) / 300
        strata = RiskStrata.tertiles(scores)
        labels = stratify(scores, strata)
        for name in ("low", "medium", "high"):
            assert abs(labels.count(name) - 100) <= 1

    def test_validation(self):
        with pytest.raises(RulesError):
            RiskStrata((0.5, 0.5), ("a", "b", "c"))
        with pytest.raises(RulesError):
            RiskStrata((0.2,), ("a", "b", "c"))
        with pytest.raises(RulesError):
            RiskStrata((0.2, 0.4), ("a", "b", "a"))
        with pytest.raises(RulesError):
            RiskStrata((0.0, 0.4), ("a", "b", "c"))


class TestDiscretize:
    def test_binary_feature_gets_equality_conditions(self):
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        conds = discretize_features(X)
        assert conds == [Condition("x0", "==", 0.0), Condition("x0", "==", 1.0)]

    def test_uniform_feature_bins_two_gives_median_threshold(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(500, 1))
        conds = discretize_features(X, bins=2)
        assert [c.op for c in conds] == ["<=", ">"]
        assert conds[0].value == pytest.approx(np.median(X), abs=0.05)

    def test_constant_feature_skipped_with_notice(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.warns(UserWarning, match="constant"):
            conds = discretize_features(X, bins=2)
        assert all(c.feature == "x1" for c in conds)

    def test_declared_categorical_enumerates_values(self):
        X = np.array([[0.0], [1.0], [2.0], [2.0]])
        conds = discretize_features(X, categorical=(0,))
        assert conds == [Condition("x0", "==", 0.0), Condition("x0", "==", 1.0),
                         Condition("x0", "==", 2.0)]

    def test_missing_values_never_match(self):
        col = np.array([0.2, np.nan, 0.8])
        assert Condition("x0", "<=", 0.5).matches(col).tolist() == [True, False, False]
        assert Condition("x0", ">", 0.5).matches(col).tolist() == [False, False, True]

    def test_bad_arguments(self):
        with pytest.raises(RulesError):
            discretize_features(np.zeros((3, 1)), bins=1)
        with pytest.raises(RulesError):
            discretize_features(np.zeros((0, 2)))
        with pytest.raises(RulesError):
            Condition("x", "<", 0.1)


def brute_force(X, labels, conditions, min_support, max_len, a, b, min_conf, top_k):
    """Independent exhaustive enumeration with the same contract."""
    X = np.asarray(X, dtype=float)
    names = [f"x{j}" for j in range(X.shape[1])]
    out = []
    for stratum in [str(v) for v in np.unique(labels)]:
        smask = np.asarray(labels).astype(str) == stratum
        base = smask.mean()
        scored = []
        for size in range(1, max_len + 1):
            for combo in itertools.combinations(range(len(conditions)), size):
                feats = [conditions[i].feature for i in combo]
                if len(set(feats)) != size:
                    continue
                mask = np.ones(len(X), dtype=bool)
                for i in combo:
                    col = X[:, names.index(conditions[i].feature)]
                    mask &= conditions[i].matches(col)
                n = int(mask.sum())
                if n < min_support:
                    continue
                s = int((mask & smask).sum())
                prob = float(beta_dist.sf(base, s + a, n - s + b))
                if prob < min_conf:
                    continue
                mean = (s + a) / (n + a + b)
                scored.append((mean, combo, stratum, n, s))
        scored.sort(key=lambda t: (-t[0], len(t[1]),
                                   tuple(str(conditions[i]) for i in t[1])))
        out.extend(scored[:top_k])
    return [(tuple(conditions[i] for i in combo), stratum, n, s, mean)
            for mean, combo, stratum, n, s in out]


class TestMineRules:
    def test_beta_binomial_closed_form(self):
        X = np.array([[1.0]] * 10 + [[0.0]] * 30)
        labels = ["high"] * 8 + ["low"] * 2 + ["low"] * 25 + ["high"] * 5
        rules = mine_rules(X, labels, min_support=5, max_len=1,
                           min_posterior_confidence=0.5, top_k=5)
        r = next(r for r in rules if r.stratum == "high"
                 and r.conditions == (Condition("x0", "==", 1.0),))
        assert r.support == 10 and r.hits == 8
        assert r.posterior_mean == pytest.approx(9 / 12)

    def test_perfect_separator_ranks_first(self):
        rng = np.random.default_rng(1)
        flag = (rng.uniform(size=200) < 0.4).astype(float)
        noise = rng.uniform(size=200).round()
        labels = np.where(flag == 1.0, "high", "low")
        rules = mine_rules(np.column_stack([noise, flag]), labels,
                           min_support=10, max_len=2)
        high = [r for r in rules if r.stratum == "high"]
        assert high[0].conditions == (Condition("x1", "==", 1.0),)
        assert high[0].hits == high[0].support

    def test_matches_brute_force_on_binary_features(self):
        rng = np.random.default_rng(7)
        X = (rng.uniform(size=(120, 12)) < 0.5).astype(float)
        risk = (0.55 * X[:, 0] + 0.35 * X[:, 5] * X[:, 9]
                + 0.10 * rng.uniform(size=120))
        labels = np.where(risk > 0.6, "high", np.where(risk > 0.3, "mid", "low"))
        kw = dict(min_support=8, max_len=2, min_posterior_confidence=0.9, top_k=7)
        conds = discretize_features(X)
        got = mine_rules(X, labels, conditions=conds, **kw)
        want = brute_force(X, labels, conds, a=1.0, b=1.0,
                           min_conf=kw["min_posterior_confidence"],
                           min_support=kw["min_support"], max_len=kw["max_len"],
                           top_k=kw["top_k"])
        assert [(r.conditions, r.stratum, r.support, r.hits) for r in got] \
            == [(c, s, n, h) for c, s, n, h, _ in want]
        for r, (_, _, _, _, mean) in zip(got, want):
            assert r.posterior_mean == pytest.approx(mean)

    def test_planted_rule_recovered(self):
        rng = np.random.default_rng(3)
        X = (rng.uniform(size=(600, 6)) < 0.5).astype(float)
        planted = (X[:, 0] == 1.0) & (X[:, 2] == 1.0)
        u = rng.uniform(size=600)
        labels = np.where(planted & (u < 0.95), "high",
                          np.where(u < 0.5, "low", "medium"))
        rules = mine_rules(X, labels, min_support=20, max_len=2, top_k=5)
        high = [r for r in rules if r.stratum == "high"]
        target = (Condition("x0", "==", 1.0), Condition("x2", "==", 1.0))
        found = next(r for r in high if r.conditions == target)
        assert found.posterior_mean >= 0.9
        assert high[0].conditions == target

    def test_every_subrule_of_output_is_frequent(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(300, 5))
        labels = np.where(X[:, 0] + X[:, 1] > 1.0, "high", "low")
        min_support = 25
        rules = mine_rules(X, labels, min_support=min_support, max_len=3,
                           min_posterior_confidence=0.8, bins=3)
        assert rules
        names = [f"x{j}" for j in range(X.shape[1])]
        for r in rules:
            for k in range(1, len(r.conditions) + 1):
                for sub in itertools.combinations(r.conditions, k):
                    mask = np.ones(len(X), dtype=bool)
                    for c in sub:
                        mask &= c.matches(X[:, names.index(c.feature)])
                    assert int(mask.sum()) >= min_support

    def test_row_order_invariance(self):
        rng = np.random.default_rng(9)
        X = (rng.uniform(size=(150, 6)) < 0.5).astype(float)
        labels = np.where(X[:, 1] == 1.0, "high", "low")
        perm = rng.permutation(150)
        a = mine_rules(X, labels, min_support=10, max_len=2)
        b = mine_rules(X[perm], labels[perm], min_support=10, max_len=2)
        assert a == b

    def test_posterior_mean_strictly_inside_unit_interval(self):
        X = np.array([[1.0]] * 30 + [[0.0]] * 30)
        labels = ["high"] * 30 + ["low"] * 30
        rules = mine_rules(X, labels, min_support=5, max_len=1,
                           prior=(0.5, 2.0), min_posterior_confidence=0.5)
        assert rules
        for r in rules:
            assert 0.0 < r.posterior_mean < 1.0

    def test_single_stratum_returns_empty_with_notice(self):
        X = np.zeros((20, 2))
        X[:, 0] = np.arange(20)
        with pytest.warns(UserWarning, match="single stratum"):
            assert mine_rules(X, ["high"] * 20) == []

    def test_rejects_bad_inputs(self):
        X = np.ones((10, 1))
        with pytest.raises(RulesError):
            mine_rules(np.zeros((0, 1)), [])
        with pytest.raises(RulesError):
            mine_rules(X, ["a"] * 9)
        with pytest.raises(RulesError):
            mine_rules(X, ["a"] * 10, min_support=0)
        with pytest.raises(RulesError):
            mine_rules(X, ["a"] * 10, max_len=5)
        with pytest.raises(RulesError):
            mine_rules(X, ["a"] * 10, prior=(0.0, 1.0))

    def test_rule_validation(self):
        with pytest.raises(RulesError):
            AssociationRule((), "high", 5, 2, 0.5, (0.2, 0.8), 1.0, 0.9)
        with pytest.raises(RulesError):
            AssociationRule((Condition("x", "==", 1.0),), "high", 5, 7,
                            0.5, (0.2, 0.8), 1.0, 0.9)


class TestOutputFormats:
    def rules(self):
        X = np.array([[1.0]] * 12 + [[0.0]] * 28)
        labels = ["high"] * 10 + ["low"] * 2 + ["low"] * 28
        return mine_rules(X, labels, min_support=5, max_len=1, top_k=3)

    def test_boxed_text(self):
        text = format_rules(self.rules())
        assert "stratum: high" in text
        assert "IF x0 == 1 THEN high" in text
        assert text.splitlines()[0].startswith("+--")
        assert format_rules([]).startswith("(no rules")

    def test_machine_record_roundtrip(self):
        r = self.rules()[0]
        rec = rule_record(r)
        assert rec["stratum"] == r.stratum
        assert rec["support"] == r.support
        assert rec["conditions"][0] == {"feature": "x0", "op": "==", "value": 1.0}
        assert rec["posterior_mean"] == pytest.approx(r.posterior_mean)
