import numpy as np
import pytest
from scipy.optimize import minimize

from evalworker.survival import CoxPH, concordance_index


def brute_concordance(time, event, risk):
    num = 0.0
    den = 0
    n = len(time)
    for i in range(n):
        for j in range(n):
            if event[i] == 1 and time[i] < time[j]:
                den += 1
                if risk[i] > risk[j]:
                    num += 1.0
                elif risk[i] == risk[j]:
                    num += 0.5
    return num / den


def test_concordance_hand_cases():
    assert concordance_index([1, 2, 3], [1, 1, 1], [3, 2, 1]) == 1.0
    assert concordance_index([1, 2, 3], [1, 1, 1], [1, 2, 3]) == 0.0
    assert concordance_index([1, 2, 3], [1, 1, 1], [2, 2, 1]) == pytest.approx(2.5 / 3)
    # a censored early subject contributes no pairs
    assert concordance_index([1, 2, 3], [0, 1, 1], [5, 2, 1]) == 1.0


def test_concordance_requires_comparable_pairs():
    with pytest.raises(ValueError):
        concordance_index([1, 2, 3], [0, 0, 1], [1, 2, 3])


def test_concordance_matches_brute_force():
    rng = np.random.default_rng(4)
    time = rng.integers(1, 15, size=50).astype(float)  # ties guaranteed
    event = rng.integers(0, 2, size=50)
    risk = np.round(rng.normal(size=50), 1)  # risk ties too
    assert concordance_index(time, event, risk) == pytest.approx(
        brute_concordance(time, event, risk))


def _survival_data(seed, n=140, d=3, tie_times=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    beta_true = np.array([1.0, -0.7, 0.4])
    t_event = rng.exponential(np.exp(-(X @ beta_true)))
    t_cens = rng.exponential(2.0, size=n)
    time = np.minimum(t_event, t_cens)
    if tie_times:
        time = np.ceil(time * 4) / 4  # coarse grid forces tied times
    event = (t_event <= t_cens).astype(int)
    return X, time, event


def _oracle_negloglik(beta, Z, time, event, ridge):
    # independent formulation: explicit risk sets per event time
    eta = Z @ beta
    total = 0.0
    grad = ridge * beta.copy()
    for i in np.flatnonzero(event):
        in_risk = time >= time[i]
        w = np.exp(eta[in_risk])
        total -= eta[i] - np.log(w.sum())
        grad -= Z[i] - (w @ Z[in_risk]) / w.sum()
    return total + 0.5 * ridge * float(beta @ beta), grad


@pytest.mark.parametrize("tie_times", [False, True])
def test_cox_matches_independent_optimizer(tie_times):
    X, time, event = _survival_data(11, tie_times=tie_times)
    ridge = 0.05
    model = CoxPH(ridge=ridge).fit(X, time, event)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    res = minimize(_oracle_negloglik, np.zeros(3), args=(Z, time, event, ridge),
                   jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": 500})
    assert np.linalg.norm(res.jac) < 1e-6
    assert np.allclose(model.coef_, res.x, atol=1e-4)


def test_cox_ranks_held_out_subjects():
    X, time, event = _survival_data(7)
    model = CoxPH(ridge=0.1).fit(X[:100], time[:100], event[:100])
    c = concordance_index(time[100:], event[100:], model.risk(X[100:]))
    assert c > 0.65


def test_cox_rejects_degenerate_inputs():
    X, time, event = _survival_data(3)
    with pytest.raises(ValueError):
        CoxPH(ridge=0.1).fit(X, time, np.zeros_like(event))
    with pytest.raises(ValueError):
        CoxPH(ridge=-1.0)
    with pytest.raises(RuntimeError):
        CoxPH(ridge=0.1).risk(X)
