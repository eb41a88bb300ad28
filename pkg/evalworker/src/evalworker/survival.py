"""Right-censored survival scoring: concordance index and a Cox PH model."""

from __future__ import annotations

import numpy as np


def concordance_index(time: np.ndarray, event: np.ndarray, risk: np.ndarray) -> float:
    """Fraction of comparable pairs ordered correctly by the risk score.

    A pair (i, j) is comparable when the earlier subject had an observed
    event. Tied risks count half. Raises if no pair is comparable.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    risk = np.asarray(risk, dtype=float)
    n = time.shape[0]
    num = 0.0
    den = 0
    for i in range(n):
        if event[i] != 1:
            continue
        later = time > time[i]
        den += int(later.sum())
        num += float((risk[later] < risk[i]).sum())
        num += 0.5 * float((risk[later] == risk[i]).sum())
    if den == 0:
        raise ValueError("no comparable pairs for the concordance index")
    return num / den


class CoxPH:
    """Cox proportional hazards fit by ridge-penalized Newton iterations.

    Uses the Breslow approximation for tied event times. Features are
    standardized internally; `risk` returns the linear predictor, so higher
    values mean earlier expected events.
    """

    def __init__(self, ridge: float = 0.1, max_iter: int = 60, tol: float = 1e-9):
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        self.ridge = float(ridge)
        self.max_iter = int(max_iter)
        self.tol = float(tol)
        self.coef_: np.ndarray | None = None
        self._center: np.ndarray | None = None
        self._scale: np.ndarray | None = None

    def fit(self, X: np.ndarray, time: np.ndarray, event: np.ndarray) -> "CoxPH":
        X = np.asarray(X, dtype=float)
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=int)
        if not np.isfinite(X).all():
            raise ValueError("features must be finite")
        if event.sum() == 0:
            raise ValueError("no observed events")
        self._center = X.mean(axis=0)
        scale = X.std(axis=0)
        self._scale = np.where(scale > 0, scale, 1.0)
        Z = (X - self._center) / self._scale
        order = np.argsort(time, kind="stable")
        Z, event, tsort = Z[order], event[order], time[order]
        # tied times share one risk set: map each row to its tie group start
        first = np.searchsorted(tsort, tsort, side="left")

        n, d = Z.shape
        beta = np.zeros(d)
        prev = -np.inf
        for _ in range(self.max_iter):
            ll, grad, hess = self._score(Z, event, first, beta)
            step = np.linalg.solve(hess + 1e-12 * np.eye(d), grad)
            # halve until the penalized likelihood stops decreasing
            scale_step = 1.0
            for _ in range(30):
                cand = beta + scale_step * step
                if self._score(Z, event, first, cand, value_only=True) >= ll - 1e-12:
                    break
                scale_step *= 0.5
            beta = beta + scale_step * step
            new = self._score(Z, event, first, beta, value_only=True)
            if abs(new - prev) < self.tol * (1.0 + abs(new)):
                break
            prev = new
        self.coef_ = beta
        return self

    def _score(self, Z, event, first, beta, value_only=False):
        eta = Z @ beta
        eta = np.clip(eta, -60.0, 60.0)
        w = np.exp(eta)
        # risk-set sums over subjects with time >= t_i: cumulate from the end
        s0 = np.cumsum(w[::-1])[::-1][first]
        ll = float(np.sum(event * (eta - np.log(s0))))
        ll -= 0.5 * self.ridge * float(beta @ beta)
        if value_only:
            return ll
        s1 = np.cumsum((w[:, None] * Z)[::-1], axis=0)[::-1][first]
        xbar = s1 / s0[:, None]
        grad = (event[:, None] * (Z - xbar)).sum(axis=0) - self.ridge * beta
        d = Z.shape[1]
        hess = self.ridge * np.eye(d)
        idx = np.flatnonzero(event)
        s2 = np.zeros((d, d))
        # accumulate S2 risk-set sums walking the sorted times backwards
        pos = len(Z)
        for i in idx[::-1]:
            while pos > first[i]:
                pos -= 1
                s2 += w[pos] * np.outer(Z[pos], Z[pos])
            hess += s2 / s0[i] - np.outer(xbar[i], xbar[i])
        return ll, grad, hess

    def risk(self, X: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise RuntimeError("model is not fitted")
        Z = (np.asarray(X, dtype=float) - self._center) / self._scale
        return Z @ self.coef_
