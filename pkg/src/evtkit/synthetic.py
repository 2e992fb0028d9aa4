"""Synthetic data with known truth, for recovery tests and demonstrations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .distributions import (DeltaLaplaceParams, GpdParams, delta_laplace_sample,
                            gpd_quantile, gumbel_quantile, laplace_to_gumbel)

# ---------------------------------------------------------------------------
# Univariate peaks-over-threshold regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotTruth:
    """Y | x: u(x) - Exp(body_scale) w.p. lam, else u(x) + GPD(sigma(x), xi).

    ``u(x) = u0 + u1.x``, ``log sigma(x) = s0 + s1.x`` and ``xi`` constant, so
    u(x) is exactly the conditional ``lam``-quantile.
    """

    lam: float = 0.9
    u0: float = 5.0
    u1: tuple = (1.0,)
    s0: float = 0.5
    s1: tuple = (0.3,)
    xi: float = 0.1
    body_scale: float = 1.0

    def u(self, X):
        return self.u0 + X @ np.asarray(self.u1, dtype=float)

    def sigma(self, X):
        return np.exp(self.s0 + X @ np.asarray(self.s1, dtype=float))

    def quantile(self, X, q):
        X = np.atleast_2d(X)
        z = np.log((1 - self.lam) / (1 - q))
        if abs(self.xi) < 1e-12:
            return self.u(X) + self.sigma(X) * z
        return self.u(X) + self.sigma(X) * np.expm1(self.xi * z) / self.xi

    def sample(self, X, rng):
        X = np.atleast_2d(X)
        n = X.shape[0]
        u, sig = self.u(X), self.sigma(X)
        tail = rng.random(n) >= self.lam
        body = u - rng.exponential(self.body_scale, n)
        exc = u + gpd_quantile(rng.random(n), GpdParams(1.0, self.xi)) * sig
        return np.where(tail, exc, body)


def pot_dataset(truth: PotTruth, n: int, rng, missing_rate: float = 0.0,
                names=None) -> tuple[Dataset, np.ndarray]:
    """Covariates iid U(-1, 1); optional missing-at-random covariate cells.

    Returns the dataset and the complete covariate matrix used to simulate.
    """
    k = len(truth.u1)
    names = names or [f"x{j + 1}" for j in range(k)]
    X = rng.uniform(-1, 1, (n, k))
    y = truth.sample(X, rng)
    cols = {"y": y}
    for j, nm in enumerate(names):
        col = X[:, j].copy()
        if missing_rate > 0:
            col[rng.random(n) < missing_rate] = np.nan
        cols[nm] = col
    return Dataset.from_arrays(cols, responses=["y"], covariates=names), X


def spliced_tail_sample(n: int, rng, tail_prob: float = 0.05, sigma: float = 1.0,
                        xi: float = 0.1) -> np.ndarray:
    """Sample whose top ``tail_prob`` is exactly GPD above its (1-tail_prob)
    quantile, at 0, and whose body is a Beta(4, 1)-shaped bump on [-3, 0].

    The body density rises steeply toward the threshold, so GPD fits at lower
    thresholds are misspecified.
    """
    tail = rng.random(n) < tail_prob
    body = -3.0 * (1.0 - rng.beta(4.0, 1.0, n))
    exc = gpd_quantile(rng.random(n), GpdParams(sigma, xi))
    return np.where(tail, exc, body)


# ---------------------------------------------------------------------------
# Conditional extremes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CondExTruth:
    """Exceedance model Y_{-i} = alpha(x) Y_i + Y_i^beta(x) Z given Y_i > u.

    ``alpha(x) = tanh(a0 + a1 x)``, ``beta(x) = logistic(b0 + b1 x)``; Z has a
    Gaussian copula with correlation ``rho`` and delta-Laplace margins.
    """

    a0: tuple = (0.6, 0.3)
    a1: tuple = ((0.3,), (-0.2,))
    b0: tuple = (-0.8, 0.0)
    b1: tuple = ((0.0,), (0.0,))
    rho: float = 0.2
    margins: tuple = (DeltaLaplaceParams(0.2, 0.8, 1.3), DeltaLaplaceParams(-0.1, 1.0, 1.7))

    def alpha(self, x):
        x = np.atleast_2d(x)
        return np.tanh(np.asarray(self.a0) + x @ np.asarray(self.a1).T)

    def beta(self, x):
        x = np.atleast_2d(x)
        return 1 / (1 + np.exp(-(np.asarray(self.b0) + x @ np.asarray(self.b1).T)))

    def sample_residuals(self, n, rng):
        from scipy.special import ndtr
        from .distributions import delta_laplace_quantile
        g = rng.standard_normal((n, 2))
        g[:, 1] = self.rho * g[:, 0] + np.sqrt(1 - self.rho ** 2) * g[:, 1]
        u = np.clip(ndtr(g), 1e-16, 1 - 1e-16)
        return np.column_stack([delta_laplace_quantile(u[:, j], self.margins[j]) for j in range(2)])


def condex_exceedances(truth: CondExTruth, n: int, u: float, i: int, rng,
                       covariate_sd: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``n`` draws of the trivariate Laplace-scale vector given Y_i > u.

    Returns (Y of shape (n, 3), covariates of shape (n, l)).
    """
    l = len(truth.a1[0])
    x = rng.normal(0.0, covariate_sd, (n, l))
    yi = u + rng.exponential(1.0, n)
    z = truth.sample_residuals(n, rng)
    rest = truth.alpha(x) * yi[:, None] + yi[:, None] ** truth.beta(x) * z
    Y = np.empty((n, 3))
    others = [j for j in range(3) if j != i]
    Y[:, i] = yi
    Y[:, others] = rest
    return Y, x


def gaussian_copula_gumbel(n: int, corr, rng) -> np.ndarray:
    """Rows with standard Gumbel margins and a Gaussian copula."""
    from scipy.special import log_ndtr
    corr = np.asarray(corr, dtype=float)
    L = np.linalg.cholesky(corr)
    g = rng.standard_normal((n, corr.shape[0])) @ L.T
    # Gumbel quantile of Phi(g): -log(-log Phi(g)), with log Phi computed stably
    return -np.log(-log_ndtr(g))


# ---------------------------------------------------------------------------
# Joint tails: blocks of comonotone/independent mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureBlocks:
    """Independent blocks; within a block of size d_b all components share one
    uniform with probability ``a`` and are independent otherwise.

    Then Pr(all U > 1 - phi in the block) = a phi + (1 - a) phi^d_b exactly,
    and weighted versions have closed forms too.
    """

    sizes: tuple = (2, 2)
    a: tuple = (0.5, 0.5)

    @property
    def d(self) -> int:
        return int(sum(self.sizes))

    @property
    def blocks(self) -> list:
        out, start = [], 0
        for s in self.sizes:
            out.append(list(range(start, start + s)))
            start += s
        return out

    def block_prob(self, b: int, phi: float, c=None) -> float:
        s = self.sizes[b]
        c = np.ones(s) if c is None else np.asarray(c, dtype=float)
        tail = np.minimum(c * phi, 1.0)
        return float(self.a[b] * tail.min() + (1 - self.a[b]) * np.prod(tail))

    def joint_prob(self, phi: float, c=None) -> float:
        c = np.ones(self.d) if c is None else np.asarray(c, dtype=float)
        return float(np.prod([self.block_prob(b, phi, c[idx])
                              for b, idx in enumerate(self.blocks)]))

    def sample_uniform(self, n: int, rng) -> np.ndarray:
        cols = []
        for s, a in zip(self.sizes, self.a):
            common = rng.random((n, 1))
            indep = rng.random((n, s))
            pick = rng.random((n, 1)) < a
            cols.append(np.where(pick, common, indep))
        return np.hstack(cols)

    def sample_gumbel(self, n: int, rng) -> np.ndarray:
        U = self.sample_uniform(n, rng)
        return gumbel_quantile(np.clip(U, 1e-300, 1 - 1e-16))
