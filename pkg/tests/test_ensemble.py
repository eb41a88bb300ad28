import numpy as np
import pytest
from scipy.stats import norm

from structbo import gp
from structbo.benchmark import SyntheticBackend, make_benchmark, mini_partition, mini_space
from structbo.engine import EngineConfig, EvalRecord, new_state, refresh_model, run
from structbo.ensembles import (
    EnsembleModel,
    argmax_fractions,
    ensemble_score,
    ensemble_weights,
    truncate,
)
from structbo.gp import KernelParams, KernelStructure
from structbo.partition import stage_aligned
from structbo.rng import substream
from structbo.space import AlgorithmSpec, HyperparamSpec, PipelineConfig, SearchSpace


def one_algo_space():
    algos = {"prediction": [AlgorithmSpec("only", "prediction", (
        HyperparamSpec("a", "continuous", 0.0, 1.0, default=0.5),))]}
    return SearchSpace(["prediction"], algos)


def two_algo_space():
    algos = {"prediction": [
        AlgorithmSpec("alg_a", "prediction", (
            HyperparamSpec("a", "continuous", 0.0, 1.0, default=0.5),)),
        AlgorithmSpec("alg_b", "prediction", (
            HyperparamSpec("b", "continuous", 0.0, 1.0, default=0.5),)),
    ]}
    return SearchSpace(["prediction"], algos)


def pred_config(algo, **vals):
    return PipelineConfig({"prediction": algo}, {algo: vals})


def flat_params(structure, sv, ls, rho=0.1, noise=0.01, mean=0.5):
    """Constant params; sv may be a per-subspace tuple."""
    M = structure.M
    svs = sv if isinstance(sv, tuple) else tuple(sv for _ in range(M))
    return KernelParams(
        svs,
        tuple(tuple(ls for _ in structure.numeric_dims[m]) for m in range(M)),
        tuple(rho for _ in range(M)),
        noise, mean)


def seeded_state(space, scored_configs, z, params, seed=0):
    """State with a fixed history and a single pool entry holding params."""
    state = new_state(space, seed=seed, engine_config=EngineConfig(folds=3))
    for i, (config, score) in enumerate(scored_configs):
        state._absorb(EvalRecord(
            index=i, iteration=0, request_id=f"r{i:03d}", config=config,
            status="ok", fold_scores=(score,), mean_score=score, score=score))
    state.pool.insert(z, 0.0, params)
    return state


class TestArgmaxFractions:
    def test_symmetric_bivariate_splits_evenly(self):
        w = argmax_fractions(np.zeros(2), np.eye(2), 40_000, substream(0, "sym"))
        assert w[0] == pytest.approx(0.5, abs=0.015)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_bivariate_closed_form(self):
        mean = np.array([0.2, 0.0])
        cov = np.array([[0.04, 0.018], [0.018, 0.09]])
        exact = norm.cdf((mean[0] - mean[1])
                         / np.sqrt(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]))
        w = argmax_fractions(mean, cov, 50_000, substream(1, "pair"))
        assert w[0] == pytest.approx(exact, abs=0.01)

    def test_singular_covariance_uses_jitter(self):
        w = argmax_fractions(np.array([0.0, 0.5]), np.ones((2, 2)), 2_000,
                             substream(2, "sing"))
        assert w[1] > 0.95

    def test_indefinite_covariance_raises(self):
        cov = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(gp.FactorizationError):
            argmax_fractions(np.zeros(2), cov, 100, substream(3, "bad"))

    def test_rejects_bad_shapes_and_counts(self):
        with pytest.raises(ValueError):
            argmax_fractions(np.zeros((2, 2)), np.eye(2), 10, substream(4, "m"))
        with pytest.raises(ValueError):
            argmax_fractions(np.zeros(3), np.eye(2), 10, substream(4, "c"))
        with pytest.raises(ValueError):
            argmax_fractions(np.zeros(2), np.eye(2), 0, substream(4, "n"))


class TestModelValidation:
    def c(self, x):
        return pred_config("alg_a", a=x)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            EnsembleModel(((self.c(0.1), 0.5), (self.c(0.2), 0.4)), "r", 10, 0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            EnsembleModel(((self.c(0.1), 1.2), (self.c(0.2), -0.2)), "r", 10, 0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EnsembleModel((), "r", 10, 0)

    def test_accessors(self):
        model = EnsembleModel(((self.c(0.1), 0.75), (self.c(0.2), 0.25)), "r", 10, 7)
        assert model.weights.tolist() == [0.75, 0.25]
        assert model.configs == [self.c(0.1), self.c(0.2)]
        assert model.seed == 7


class TestPairWeights:
    def pair_state(self, y1, y2, seed=0):
        space = one_algo_space()
        z = stage_aligned(space, 1)
        params = flat_params(KernelStructure(space, z), sv=0.04, ls=0.5,
                             rho=0.1, noise=0.01, mean=0.5)
        configs = [(pred_config("only", a=0.2), y1), (pred_config("only", a=0.8), y2)]
        state = seeded_state(space, configs, z, params, seed=seed)
        return space, state, params, z

    def test_matches_closed_form_for_fixed_structure(self):
        space, state, params, z = self.pair_state(0.62, 0.50)
        X, y, _ = state.data()
        model = gp.Surrogate(space, z, params, X, y)
        mean, cov = model.joint_posterior(X)
        exact = norm.cdf((mean[0] - mean[1])
                         / np.sqrt(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]))
        assert 0.05 < exact < 0.95
        ens = ensemble_weights(state, n_z_samples=20, n_f_samples=2500, seed=3)
        assert ens.weights[0] == pytest.approx(exact, abs=0.01)
        assert ens.n_samples == 50_000

    def test_exchangeable_pair_splits_evenly(self):
        _, state, _, _ = self.pair_state(0.5, 0.5)
        ens = ensemble_weights(state, n_z_samples=20, n_f_samples=2500, seed=5)
        assert ens.weights[0] == pytest.approx(0.5, abs=0.01)
        assert ens.weights.sum() == pytest.approx(1.0, abs=1e-9)


class TestCorrelationAwareness:
    def test_near_duplicates_share_mass(self):
        space = two_algo_space()
        z = stage_aligned(space, 1)
        params = flat_params(KernelStructure(space, z), sv=0.04, ls=0.5,
                             rho=0.05, noise=0.005, mean=0.5)
        configs = [pred_config("alg_a", a=0.5), pred_config("alg_a", a=0.505),
                   pred_config("alg_b", b=0.5)]
        e = [space.encode(c) for c in configs]
        k12 = gp.kernel_value(space, z, params, e[0], e[1])
        k11 = gp.kernel_value(space, z, params, e[0], e[0])
        assert k12 / k11 > 0.99
        assert gp.kernel_value(space, z, params, e[0], e[2]) == pytest.approx(0.0)

        X = np.array([p.vector for p in e])
        y = np.full(3, 0.5)
        mean, cov = gp.Surrogate(space, z, params, X, y).joint_posterior(X)
        w_corr = argmax_fractions(mean, cov, 50_000, substream(6, "corr"))
        w_diag = argmax_fractions(mean, np.diag(np.diag(cov)), 50_000,
                                  substream(6, "diag"))
        assert w_corr[0] + w_corr[1] <= w_diag[0] + w_diag[1] + 0.01


class TestEnsembleWeights:
    def run_state(self, budget=12, seed=0):
        space = mini_space()
        bench = make_benchmark(space, mini_partition(), seed=seed, noise_sd=0.02)
        state = new_state(space, seed=seed,
                          engine_config=EngineConfig(folds=3))
        state = run(space, SyntheticBackend(bench), budget=budget, state=state)
        refresh_model(state)
        return state

    def test_weights_are_normalized_on_a_real_run(self):
        state = self.run_state()
        ens = ensemble_weights(state, n_z_samples=5, n_f_samples=400, seed=1)
        assert ens.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert (ens.weights >= 0).all()
        assert ens.run_id == "synthetic:0"
        assert ens.n_samples == 2000

    def test_members_are_distinct_in_history_order(self):
        state = self.run_state()
        ens = ensemble_weights(state, n_z_samples=3, n_f_samples=200, seed=1)
        fps = [c.pipeline_key() for c in ens.configs]
        seen, expected = set(), []
        for rec in state.records:
            if rec.config not in seen:
                seen.add(rec.config)
                expected.append(rec.config)
        assert ens.configs == expected
        assert len(fps) == len(ens.configs)

    def test_deterministic_given_seed(self):
        state = self.run_state()
        a = ensemble_weights(state, n_z_samples=4, n_f_samples=300, seed=9)
        b = ensemble_weights(state, n_z_samples=4, n_f_samples=300, seed=9)
        assert a.weights.tolist() == b.weights.tolist()
        c = ensemble_weights(state, n_z_samples=4, n_f_samples=300, seed=10)
        assert c.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_duplicate_evaluations_collapse_to_one_member(self):
        space = one_algo_space()
        z = stage_aligned(space, 1)
        params = flat_params(KernelStructure(space, z), sv=0.04, ls=0.5)
        c = pred_config("only", a=0.4)
        state = seeded_state(space, [(c, 0.6), (c, 0.64)], z, params)
        ens = ensemble_weights(state, n_z_samples=2, n_f_samples=50, seed=0)
        assert ens.configs == [c]
        assert ens.weights.tolist() == [1.0]

    def test_empty_history_rejected(self):
        space = one_algo_space()
        state = new_state(space, seed=0, engine_config=EngineConfig(folds=3))
        with pytest.raises(ValueError):
            ensemble_weights(state)

    def test_relabeled_structure_gives_same_weights(self):
        space = mini_space()
        z = stage_aligned(space, 2)
        perm = [1, 0]
        rng = substream(7, "hist")
        configs = [space.sample(rng) for _ in range(8)]
        scores = substream(7, "scores").uniform(0.3, 0.9, size=8)
        params = flat_params(KernelStructure(space, z), sv=(0.03, 0.07), ls=0.6)
        state_a = seeded_state(space, list(zip(configs, scores)), z, params, seed=5)
        state_b = seeded_state(space, list(zip(configs, scores)),
                               z.relabeled(perm), params.permuted(perm), seed=5)
        ens_a = ensemble_weights(state_a, n_z_samples=4, n_f_samples=500, seed=9)
        ens_b = ensemble_weights(state_b, n_z_samples=4, n_f_samples=500, seed=9)
        np.testing.assert_allclose(ens_a.weights, ens_b.weights, atol=1e-12)
        assert ens_a.configs == ens_b.configs


class TestScore:
    def model(self, weights):
        cs = [pred_config("alg_a", a=0.1 * (i + 1)) for i in range(len(weights))]
        return EnsembleModel(tuple(zip(cs, weights)), "r", 10, 0), cs

    def test_single_member(self):
        model, cs = self.model([1.0])
        assert ensemble_score(model, {cs[0]: 0.8}) == pytest.approx(0.8)

    def test_even_pair_averages(self):
        model, cs = self.model([0.5, 0.5])
        assert ensemble_score(model, {cs[0]: 0.6, cs[1]: 0.8}) == pytest.approx(0.7)

    def test_weighted_sum(self):
        model, cs = self.model([0.7, 0.2, 0.1])
        scores = {cs[0]: 0.5, cs[1]: 1.0, cs[2]: 0.0}
        assert ensemble_score(model, scores) == pytest.approx(0.55)

    def test_missing_member_score_raises(self):
        model, cs = self.model([0.5, 0.5])
        with pytest.raises(ValueError):
            ensemble_score(model, {cs[0]: 0.6})

    def test_zero_weight_member_may_be_missing(self):
        model, cs = self.model([1.0, 0.0])
        assert ensemble_score(model, {cs[0]: 0.9}) == pytest.approx(0.9)


class TestTruncate:
    def model(self, weights):
        cs = [pred_config("alg_a", a=0.1 * (i + 1)) for i in range(len(weights))]
        return EnsembleModel(tuple(zip(cs, weights)), "r", 10, 0), cs

    def test_reference_arithmetic(self):
        model, cs = self.model([0.7, 0.2, 0.1])
        out = truncate(model, 2)
        assert out.configs == cs[:2]
        assert out.weights[0] == pytest.approx(7 / 9)
        assert out.weights[1] == pytest.approx(2 / 9)

    def test_keeps_history_order(self):
        model, cs = self.model([0.1, 0.7, 0.2])
        out = truncate(model, 2)
        assert out.configs == [cs[1], cs[2]]
        assert out.weights[0] == pytest.approx(7 / 9)

    def test_tie_breaks_by_history_index(self):
        model, cs = self.model([0.4, 0.4, 0.2])
        out = truncate(model, 1)
        assert out.configs == [cs[0]]
        assert out.weights.tolist() == [1.0]

    def test_k_at_least_members_is_identity(self):
        model, _ = self.model([0.6, 0.4])
        assert truncate(model, 2) is model
        assert truncate(model, 5) is model

    def test_k_below_one_rejected(self):
        model, _ = self.model([1.0])
        with pytest.raises(ValueError):
            truncate(model, 0)

    def test_provenance_carried(self):
        model, _ = self.model([0.7, 0.2, 0.1])
        out = truncate(model, 2)
        assert (out.run_id, out.n_samples, out.seed) == ("r", 10, 0)
