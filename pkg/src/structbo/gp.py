"""Gaussian-process surrogate with a sparse additive kernel.

The kernel is a sum over subspaces m of

    k_m(a, b) = sv_m * agree_m(a, b) * (rho_m + (1 - rho_m) * matern52(r)),

where agree_m is 1 only if a and b pick the same algorithm at every stage
whose chosen algorithm belongs to m in either point (and 1 vacuously when
neither point activates m at a stage), and r is the Euclidean distance over
m's lengthscale-normalized numeric dimensions. Inactive dimensions carry
their encoded defaults, so both-inactive dims contribute zero distance and
one-active dims are always masked by a zero agreement factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit, logit

from .partition import Decomposition
from .rng import substream
from .space import EncodedPoint, SearchSpace

NOISE_FLOOR = 1e-6
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
BOUNDS = {
    "signal_variance": (1e-4, 25.0),
    "lengthscale": (1e-2, 1e2),
    "categorical_similarity": (1e-3, 1.0 - 1e-3),
    "noise_variance": (NOISE_FLOOR, 1.0),
    "mean": (-2.0, 2.0),
}

SQRT5 = math.sqrt(5.0)


class FactorizationError(RuntimeError):
    """Kernel matrix stayed non-positive-definite through the jitter ladder."""


def matern52(r: np.ndarray) -> np.ndarray:
    """Matern-5/2 correlation as a function of scaled distance."""
    sr = SQRT5 * r
    return (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


@dataclass(frozen=True)
class KernelParams:
    """Per-subspace kernel hyperparameters plus global noise and mean."""

    signal_variance: tuple[float, ...]
    lengthscales: tuple[tuple[float, ...], ...]
    categorical_similarity: tuple[float, ...]
    noise_variance: float
    mean: float

    def validate(self, structure: "KernelStructure") -> None:
        M = structure.M
        if not (len(self.signal_variance) == len(self.lengthscales)
                == len(self.categorical_similarity) == M):
            raise ValueError(f"params sized for {len(self.signal_variance)} subspaces, structure has {M}")
        for m in range(M):
            if not self.signal_variance[m] > 0:
                raise ValueError(f"subspace {m}: signal variance must be positive")
            if not 0.0 <= self.categorical_similarity[m] < 1.0:
                raise ValueError(f"subspace {m}: categorical similarity must lie in [0,1)")
            if len(self.lengthscales[m]) != len(structure.numeric_dims[m]):
                raise ValueError(
                    f"subspace {m}: {len(self.lengthscales[m])} lengthscales for "
                    f"{len(structure.numeric_dims[m])} numeric dims")
            if any(not l > 0 for l in self.lengthscales[m]):
                raise ValueError(f"subspace {m}: lengthscales must be positive")
        if not self.noise_variance >= NOISE_FLOOR:
            raise ValueError(f"noise variance must be >= {NOISE_FLOOR}")

    def permuted(self, perm: list[int]) -> "KernelParams":
        """Reorder per-subspace entries to match a relabeled decomposition."""
        inv = [0] * len(perm)
        for old, new in enumerate(perm):
            inv[new] = old
        return KernelParams(
            tuple(self.signal_variance[inv[m]] for m in range(len(perm))),
            tuple(self.lengthscales[inv[m]] for m in range(len(perm))),
            tuple(self.categorical_similarity[inv[m]] for m in range(len(perm))),
            self.noise_variance, self.mean)


class KernelStructure:
    """Static per-(space, decomposition) indexing used by kernel evaluations."""

    def __init__(self, space: SearchSpace, z: Decomposition):
        z.validate_for(space)
        self.space = space
        self.z = z
        self.M = z.M
        self.stage_dims = np.array([space.stage_dim(s) for s in space.stages])
        # owned[m][v][algo_index] = True when stage v's algo belongs to m
        self.owned = [[np.zeros(len(space.algorithms[s]), dtype=bool)
                       for s in space.stages] for _ in range(z.M)]
        for (s, a), m in z.assignment.items():
            v = space.stages.index(s)
            self.owned[m][v][space.algo_index(s, a)] = True
        self.numeric_dims: list[np.ndarray] = []
        for m in range(z.M):
            dims = [d.index for d in space.dims
                    if d.kind in ("continuous", "integer")
                    and z.assignment[(d.stage, d.algorithm)] == m]
            self.numeric_dims.append(np.array(dims, dtype=int))

    def choices(self, X: np.ndarray) -> np.ndarray:
        return np.rint(np.atleast_2d(X)[:, self.stage_dims]).astype(int)

    def agreement(self, m: int, Ca: np.ndarray, Cb: np.ndarray) -> np.ndarray:
        """agree_m over all point pairs; shape (len(Ca), len(Cb))."""
        out = np.ones((Ca.shape[0], Cb.shape[0]), dtype=bool)
        for v in range(len(self.space.stages)):
            owned_v = self.owned[m][v]
            if not owned_v.any():
                continue
            own_a = owned_v[Ca[:, v]]
            own_b = owned_v[Cb[:, v]]
            eq = Ca[:, v][:, None] == Cb[:, v][None, :]
            neither = ~own_a[:, None] & ~own_b[None, :]
            out &= eq | neither
        return out

    def scaled_diffs(self, m: int, ls, Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
        """Per-dim lengthscale-scaled differences, shape (n_dims, na, nb)."""
        dims = self.numeric_dims[m]
        if len(dims) == 0:
            return np.zeros((0, Xa.shape[0], Xb.shape[0]))
        ls = np.asarray(ls)[:, None, None]
        return (Xa[:, dims].T[:, :, None] - Xb[:, dims].T[:, None, :]) / ls


def kernel_matrix(structure: KernelStructure, params: KernelParams,
                  Xa: np.ndarray, Xb: np.ndarray | None = None,
                  *, components: bool = False):
    """Gram matrix of the additive kernel (or the per-subspace stack)."""
    Xa = np.atleast_2d(Xa)
    Xb = Xa if Xb is None else np.atleast_2d(Xb)
    if Xa.shape[1] != structure.space.dimension or Xb.shape[1] != structure.space.dimension:
        raise ValueError("point dimension does not match the space")
    Ca, Cb = structure.choices(Xa), structure.choices(Xb)
    parts = []
    for m in range(structure.M):
        sv = params.signal_variance[m]
        rho = params.categorical_similarity[m]
        agree = structure.agreement(m, Ca, Cb)
        diffs = structure.scaled_diffs(m, params.lengthscales[m], Xa, Xb)
        r = np.sqrt(np.maximum((diffs ** 2).sum(axis=0), 0.0))
        parts.append(sv * agree * (rho + (1.0 - rho) * matern52(r)))
    if components:
        return np.array(parts)
    return sum(parts)


def kernel_value(space: SearchSpace, z: Decomposition, params: KernelParams,
                 a: EncodedPoint, b: EncodedPoint) -> float:
    """k(a, b) for two encoded points."""
    structure = KernelStructure(space, z)
    params.validate(structure)
    return float(kernel_matrix(structure, params,
                               a.vector[None, :], b.vector[None, :])[0, 0])


# -- transformed parameter vector ---------------------------------------------

class ParamPack:
    """Maps KernelParams to an unconstrained-ish bounded vector and back.

    Layout: log sv (M), log lengthscales (per m), logit rho (M),
    log noise, mean.
    """

    def __init__(self, structure: KernelStructure):
        self.structure = structure
        self.n_ls = [len(d) for d in structure.numeric_dims]
        self.size = 2 * structure.M + sum(self.n_ls) + 2

    def flatten(self, p: KernelParams) -> np.ndarray:
        out = [np.log(p.signal_variance)]
        for m in range(self.structure.M):
            out.append(np.log(np.asarray(p.lengthscales[m])))
        out.append(logit(np.asarray(p.categorical_similarity)))
        out.append([math.log(p.noise_variance), p.mean])
        return np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in out])

    def unflatten(self, theta: np.ndarray) -> KernelParams:
        M = self.structure.M
        i = 0
        sv = tuple(np.exp(theta[i:i + M])); i += M
        ls = []
        for m in range(M):
            ls.append(tuple(np.exp(theta[i:i + self.n_ls[m]])))
            i += self.n_ls[m]
        rho = tuple(expit(theta[i:i + M])); i += M
        noise = math.exp(theta[i]); mean = theta[i + 1]
        return KernelParams(sv, tuple(ls), rho, noise, mean)

    def bounds(self) -> list[tuple[float, float]]:
        lo_sv, hi_sv = np.log(BOUNDS["signal_variance"])
        lo_ls, hi_ls = np.log(BOUNDS["lengthscale"])
        lo_r, hi_r = logit(np.array(BOUNDS["categorical_similarity"]))
        lo_n, hi_n = np.log(BOUNDS["noise_variance"])
        out = [(lo_sv, hi_sv)] * self.structure.M
        out += [(lo_ls, hi_ls)] * sum(self.n_ls)
        out += [(lo_r, hi_r)] * self.structure.M
        out += [(lo_n, hi_n), BOUNDS["mean"]]
        return out


# -- likelihood ---------------------------------------------------------------

class PreparedData:
    """Parameter-independent kernel precomputations for one (z, X) pair.

    Caches the stage-agreement masks and the per-dimension squared
    differences so repeated likelihood evaluations during a fit only pay
    for the parameter-dependent arithmetic. Squared-difference stacks are
    stored only while the total size stays moderate; beyond that they are
    recomputed per call.
    """

    _MAX_CACHED_CELLS = 4_000_000

    def __init__(self, structure: KernelStructure, X: np.ndarray):
        self.structure = structure
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.n = self.X.shape[0]
        C = structure.choices(self.X)
        self.agree = [structure.agreement(m, C, C).astype(float)
                      for m in range(structure.M)]
        total = sum(len(d) for d in structure.numeric_dims) * self.n * self.n
        self._store = total <= self._MAX_CACHED_CELLS
        self._sq: dict[int, np.ndarray] = {}

    def sq(self, m: int) -> np.ndarray:
        """Squared per-dim differences for subspace m, shape (d_m, n, n)."""
        if m in self._sq:
            return self._sq[m]
        dims = self.structure.numeric_dims[m]
        if len(dims) == 0:
            out = np.zeros((0, self.n, self.n))
        else:
            cols = self.X[:, dims].T
            out = (cols[:, :, None] - cols[:, None, :]) ** 2
        if self._store:
            self._sq[m] = out
        return out


def _factorize(K_y: np.ndarray):
    """Cholesky with a trace-scaled jitter ladder."""
    n = K_y.shape[0]
    scale = max(np.trace(K_y) / n, 1e-12)
    try:
        return cho_factor(K_y, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    for jit in JITTERS:
        try:
            return cho_factor(K_y + jit * scale * np.eye(n), lower=True), jit * scale
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"kernel matrix of size {n} is not positive definite even with jitter "
        f"{JITTERS[-1] * scale:.2e}; conditioning problem")


def lml_and_grad(structure: KernelStructure, params: KernelParams,
                 X: np.ndarray, y: np.ndarray,
                 extra_noise: np.ndarray | None = None,
                 prepared: PreparedData | None = None) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in transformed coordinates."""
    n = len(y)
    if n == 0:
        raise ValueError("history is empty")
    prep = prepared if prepared is not None else PreparedData(structure, X)
    rhos = params.categorical_similarity
    svs = params.signal_variance
    materns, decays, rs, inv_sqs, parts = [], [], [], [], []
    for m in range(structure.M):
        sq = prep.sq(m)
        if sq.shape[0]:
            inv_sq = 1.0 / np.asarray(params.lengthscales[m]) ** 2
            r = np.sqrt(np.maximum(np.tensordot(inv_sq, sq, axes=1), 0.0))
        else:
            inv_sq = np.zeros(0)
            r = np.zeros((n, n))
        sr = SQRT5 * r
        decay = np.exp(-sr)
        mat = (1.0 + sr + sr * sr / 3.0) * decay
        materns.append(mat); decays.append(decay); rs.append(r); inv_sqs.append(inv_sq)
        parts.append(svs[m] * prep.agree[m] * (rhos[m] + (1.0 - rhos[m]) * mat))
    K_y = sum(parts) + params.noise_variance * np.eye(n)
    if extra_noise is not None:
        K_y = K_y + np.diag(extra_noise)
    factor, _ = _factorize(K_y)
    resid = y - params.mean
    alpha = cho_solve(factor, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    value = -0.5 * resid @ alpha - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)

    K_inv = cho_solve(factor, np.eye(n))
    W = np.outer(alpha, alpha) - K_inv

    grad_sv = np.empty(structure.M)
    grad_rho = np.empty(structure.M)
    grad_ls: list[np.ndarray] = []
    for m in range(structure.M):
        grad_sv[m] = 0.5 * float(np.sum(W * parts[m]))  # d/d log sv_m
        rho = rhos[m]
        base = W * (svs[m] * prep.agree[m])
        grad_rho[m] = 0.5 * float(np.sum(base * (1.0 - materns[m]))) * rho * (1.0 - rho)
        sq = prep.sq(m)
        if sq.shape[0]:
            # dK/d log l_d = sv*agree*(1-rho)*(5/3)(1+sqrt5 r)exp(-sqrt5 r)*u_d^2
            common = base * ((1.0 - rho) * (5.0 / 3.0)
                             * (1.0 + SQRT5 * rs[m]) * decays[m])
            g = 0.5 * inv_sqs[m] * np.tensordot(sq, common, axes=([1, 2], [0, 1]))
        else:
            g = np.zeros(0)
        grad_ls.append(g)
    grad_noise = 0.5 * params.noise_variance * float(np.trace(W))
    grad_mean = float(np.sum(alpha))
    grad = np.concatenate([grad_sv, *grad_ls, grad_rho, [grad_noise, grad_mean]])
    return float(value), grad


# -- fitted surrogate ---------------------------------------------------------

class Surrogate:
    """Immutable GP conditioned on encoded observations under one z."""

    def __init__(self, space: SearchSpace, z: Decomposition, params: KernelParams,
                 X: np.ndarray, y: np.ndarray, extra_noise: np.ndarray | None = None):
        self.space = space
        self.z = z
        self.structure = KernelStructure(space, z)
        params.validate(self.structure)
        self.params = params
        self.X = np.atleast_2d(np.asarray(X, dtype=float)).copy()
        self.y = np.asarray(y, dtype=float).copy()
        self.extra_noise = None if extra_noise is None else np.asarray(extra_noise, float).copy()
        n = len(self.y)
        if n:
            K_y = kernel_matrix(self.structure, params, self.X) \
                + params.noise_variance * np.eye(n)
            if self.extra_noise is not None:
                K_y = K_y + np.diag(self.extra_noise)
            self._factor, self._jitter = _factorize(K_y)
            self.alpha = cho_solve(self._factor, self.y - params.mean)
        else:
            self._factor, self._jitter, self.alpha = None, 0.0, np.zeros(0)
        for arr in (self.X, self.y, self.alpha):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.y)

    def log_marginal_likelihood(self) -> float:
        value, _ = lml_and_grad(self.structure, self.params, self.X, self.y,
                                self.extra_noise)
        return value

    def _query_matrix(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.space.dimension:
            raise ValueError("query dimension does not match the space")
        return Xq

    def posterior(self, query) -> tuple[float, float]:
        """(mean, variance) of f at one encoded point."""
        mean, var = self.posterior_batch(_as_matrix(query))
        return float(mean[0]), float(var[0])

    def posterior_batch(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = self._query_matrix(Xq)
        prior_var = float(sum(self.params.signal_variance))
        if self.n == 0:
            return (np.full(len(Xq), self.params.mean),
                    np.full(len(Xq), prior_var))
        K_star = kernel_matrix(self.structure, self.params, Xq, self.X)
        mean = self.params.mean + K_star @ self.alpha
        v = solve_triangular(self._factor[0], K_star.T, lower=True)
        var = np.maximum(prior_var - np.sum(v * v, axis=0), 0.0)
        return mean, var

    def joint_posterior(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean vector and full covariance over a query set."""
        Xq = self._query_matrix(Xq)
        K_qq = kernel_matrix(self.structure, self.params, Xq)
        if self.n == 0:
            return np.full(len(Xq), self.params.mean), K_qq
        K_star = kernel_matrix(self.structure, self.params, Xq, self.X)
        mean = self.params.mean + K_star @ self.alpha
        v = solve_triangular(self._factor[0], K_star.T, lower=True)
        cov = K_qq - v.T @ v
        return mean, cov

    def component_posterior(self, m: int, query) -> tuple[float, float]:
        """(mean, variance) of the additive component f_m at a point."""
        if not 0 <= m < self.structure.M:
            raise IndexError(f"subspace index {m} outside [0, {self.structure.M})")
        mean, var = self.component_posterior_batch(m, _as_matrix(query))
        return float(mean[0]), float(var[0])

    def component_posterior_batch(self, m: int, Xq) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= m < self.structure.M:
            raise IndexError(f"subspace index {m} outside [0, {self.structure.M})")
        Xq = self._query_matrix(Xq)
        sv = self.params.signal_variance[m]
        if self.n == 0:
            return np.zeros(len(Xq)), np.full(len(Xq), sv)
        K_m = kernel_matrix(self.structure, self.params, Xq, self.X,
                            components=True)[m]
        mean = K_m @ self.alpha
        solved = cho_solve(self._factor, K_m.T)
        var = np.maximum(sv - np.sum(K_m.T * solved, axis=0), 0.0)
        return mean, var


def _as_matrix(query) -> np.ndarray:
    if isinstance(query, EncodedPoint):
        return query.vector[None, :]
    q = np.asarray(query, dtype=float)
    return q[None, :] if q.ndim == 1 else q


# -- fitting -------------------------------------------------------------------

def default_params(structure: KernelStructure, y: np.ndarray) -> KernelParams:
    """Reasonable starting point scaled to the observations."""
    var = float(np.var(y)) if len(y) > 1 else 1.0
    var = min(max(var, 1e-3), BOUNDS["signal_variance"][1])
    M = structure.M
    sv = max(var / M, BOUNDS["signal_variance"][0] * 2)
    return KernelParams(
        signal_variance=(sv,) * M,
        lengthscales=tuple(tuple(0.3 for _ in structure.numeric_dims[m]) for m in range(M)),
        categorical_similarity=(0.1,) * M,
        noise_variance=max(0.05 * var, NOISE_FLOOR * 10),
        mean=float(np.mean(y)) if len(y) else 0.0,
    )


def carry_params(space: SearchSpace, z_from: Decomposition, params: KernelParams,
                 z_to: Decomposition) -> KernelParams:
    """Map fitted params onto a related decomposition with the same M.

    Per-dimension lengthscales follow their dimension; per-subspace signal
    variance and similarity follow the subspace label. Useful as a warm
    start when z_to differs from z_from at a few sites.
    """
    if z_from.M != z_to.M:
        raise ValueError("decompositions have different subspace counts")
    s_from = KernelStructure(space, z_from)
    s_to = KernelStructure(space, z_to)
    dim_ls = {int(d): float(l)
              for m in range(z_from.M)
              for d, l in zip(s_from.numeric_dims[m], params.lengthscales[m])}
    ls = tuple(tuple(dim_ls[int(d)] for d in s_to.numeric_dims[m])
               for m in range(z_to.M))
    return KernelParams(params.signal_variance, ls,
                        params.categorical_similarity,
                        params.noise_variance, params.mean)


def fit_params(space: SearchSpace, z: Decomposition, X: np.ndarray, y: np.ndarray,
               restarts: int = 3, seed: int = 0, maxiter: int = 60,
               extra_noise: np.ndarray | None = None,
               inits: list[KernelParams] | None = None) -> KernelParams:
    """Maximize the marginal likelihood from `restarts` seeded starts.

    Candidate starts are the warm starts in `inits`, the data-scaled
    defaults, and seeded perturbations of the defaults (enough to reach
    `restarts`); the `restarts` best-scoring candidates seed the ascents.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError(f"fitting needs at least 2 observations, got {len(y)}")
    structure = KernelStructure(space, z)
    pack = ParamPack(structure)
    bounds = np.array(pack.bounds())
    theta0 = pack.flatten(default_params(structure, y))
    theta0 = np.clip(theta0, bounds[:, 0], bounds[:, 1])
    starts = []
    for init in inits or []:
        init.validate(structure)
        starts.append(np.clip(pack.flatten(init), bounds[:, 0], bounds[:, 1]))
    starts.append(theta0)
    rng = substream(seed, "fit_params")
    prep = PreparedData(structure, X)

    def objective(theta):
        try:
            value, grad = lml_and_grad(structure, pack.unflatten(theta), X, y,
                                       extra_noise, prepared=prep)
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
        return -value, -grad

    restarts = max(restarts, 1)
    while len(starts) < restarts:
        starts.append(np.clip(theta0 + rng.normal(0.0, 0.7, size=len(theta0)),
                              bounds[:, 0], bounds[:, 1]))
    ranked = sorted(starts, key=lambda s: objective(s)[0])[:restarts]
    best_theta, best_value = None, math.inf
    for start in ranked:
        res = minimize(objective, start, jac=True, method="L-BFGS-B",
                       bounds=pack.bounds(), options={"maxiter": maxiter})
        if res.fun < best_value:
            best_theta, best_value = res.x, res.fun
    if best_theta is None or not math.isfinite(best_value) or best_value >= 1e25:
        raise FactorizationError("all restarts failed to factorize the kernel matrix")
    return pack.unflatten(best_theta)
