"""Covariate-dependent conditional extremes for a trivariate vector.

For each conditioning index i, on Laplace margins and above a threshold u,

    Y_{-i} = alpha(x) Y_i + Y_i^beta(x) Z,

with tanh/logistic links linear in the covariates and Z a Gaussian copula
with delta-Laplace margins.  After fitting, Z is replaced by the empirical
residuals, and the three fits are combined by importance resampling into
draws of the whole vector.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import numopt
from .distributions import (GUMBEL_MEDIAN, DeltaLaplaceParams, delta_laplace_logpdf,
                            delta_laplace_normal_score, gumbel_to_laplace, laplace_quantile,
                            laplace_to_gumbel)
from .errors import DomainError, FitError, InputError

log = logging.getLogger(__name__)

DEFAULT_U = float(laplace_quantile(0.95))
MIN_EXCEEDANCES = 30
# a short simplex stage to leave the start basin; the gradient polish finishes
DEFAULT_SETTINGS = numopt.MinimizeSettings(max_iter=100, restarts=0)
WARM_SETTINGS = numopt.MinimizeSettings(max_iter=10, restarts=0)

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CondExParams:
    """Coefficients for the two non-conditioning components, on the original
    covariate scale.  Row k of ``alpha1``/``beta1`` belongs to the k-th
    remaining component (in increasing index order)."""

    alpha0: np.ndarray
    alpha1: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    rho: float
    margins: tuple

    def __post_init__(self):
        a1 = np.asarray(self.alpha1, dtype=float).reshape(2, -1)
        b1 = np.asarray(self.beta1, dtype=float).reshape(2, -1)
        if a1.shape != b1.shape:
            raise InputError("alpha1 and beta1 need the same covariate count")
        object.__setattr__(self, "alpha0", np.asarray(self.alpha0, dtype=float).reshape(2))
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=float).reshape(2))
        object.__setattr__(self, "alpha1", a1)
        object.__setattr__(self, "beta1", b1)
        if not -1 < self.rho < 1:
            raise DomainError("rho must lie in (-1, 1)")
        if len(self.margins) != 2:
            raise InputError("two residual margins are required")

    @property
    def n_covariates(self) -> int:
        return int(self.alpha1.shape[1])

    def alpha(self, X) -> np.ndarray:
        return np.tanh(self.alpha0 + _as_X(X, self.n_covariates) @ self.alpha1.T)

    def beta(self, X) -> np.ndarray:
        return expit(self.beta0 + _as_X(X, self.n_covariates) @ self.beta1.T)

    def as_dict(self) -> dict:
        return {
            "alpha0": self.alpha0.tolist(), "alpha1": self.alpha1.tolist(),
            "beta0": self.beta0.tolist(), "beta1": self.beta1.tolist(), "rho": float(self.rho),
            "margins": [{"mu": m.mu, "sigma": m.sigma, "delta": m.delta} for m in self.margins],
        }


def _as_X(X, l: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, l) if l else X.reshape(-1, 0)
    if X.shape[1] != l:
        raise InputError(f"expected {l} covariate columns, got {X.shape[1]}")
    return X


def _others(i: int) -> list:
    if i not in (0, 1, 2):
        raise InputError("conditioning index must be 0, 1 or 2")
    return [j for j in range(3) if j != i]


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def _copula_logdensity(s1, s2, rho):
    r2 = rho * rho
    return -0.5 * np.log1p(-r2) - (r2 * (s1 * s1 + s2 * s2) - 2 * rho * s1 * s2) / (2 * (1 - r2))


def _loglik_terms(alpha, beta, rho, margins, yi, yo):
    """Per-exceedance log-likelihood given per-row alpha, beta (n, 2)."""
    logy = np.log(yi)
    z = (yo - alpha * yi[:, None]) / np.exp(beta * logy[:, None])
    ll = np.zeros(yi.size)
    scores = []
    for k in range(2):
        ll += delta_laplace_logpdf(z[:, k], margins[k]) - beta[:, k] * logy
        scores.append(delta_laplace_normal_score(z[:, k], margins[k]))
    return ll + _copula_logdensity(scores[0], scores[1], rho)


def _nll(alpha, beta, rho, margins, yi, yo):
    total = float(_loglik_terms(alpha, beta, rho, margins, yi, yo).sum())
    return -total if np.isfinite(total) else np.inf


def _exceedances(yl, X, i, u):
    others = _others(i)
    yl = np.asarray(yl, dtype=float)
    if yl.ndim != 2 or yl.shape[1] != 3:
        raise InputError("data must have three columns")
    exc = yl[:, i] > u
    yi = yl[exc, i]
    if np.any(yi <= 0):
        raise DomainError("conditioning exceedances must be positive; use u > 0")
    return exc, yi, yl[exc][:, others], np.asarray(X, dtype=float)[exc]


def negloglik(params: CondExParams, yl, X, i: int, u: float) -> float:
    """Negative log-likelihood of the exceedances Y_i > u (Laplace margins)."""
    X = _as_X(X, params.n_covariates)
    exc, yi, yo, Xe = _exceedances(yl, X, i, u)
    if yi.size < MIN_EXCEEDANCES:
        raise InputError(f"only {yi.size} exceedances; need at least {MIN_EXCEEDANCES}")
    return _nll(params.alpha(Xe), params.beta(Xe), params.rho, params.margins, yi, yo)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CondExFit:
    params: CondExParams
    i: int
    u: float
    residuals: np.ndarray = field(repr=False)
    residual_times: np.ndarray = field(repr=False)
    homogeneous_beta: bool = False
    nll: float = float("nan")
    converged: bool = True
    covariate_center: np.ndarray = field(default=None, repr=False)
    covariate_scale: np.ndarray = field(default=None, repr=False)

    @property
    def n_exceedances(self) -> int:
        return int(self.residuals.shape[0])

    @property
    def n_parameters(self) -> int:
        l = self.params.n_covariates
        return 4 + 2 * l + (0 if self.homogeneous_beta else 2 * l) + 7

    @property
    def aic(self) -> float:
        return 2 * self.nll + 2 * self.n_parameters

    def summary(self) -> dict:
        return {"i": self.i, "u": self.u, "n_exceedances": self.n_exceedances,
                "homogeneous_beta": self.homogeneous_beta, "nll": self.nll, "aic": self.aic,
                "n_parameters": self.n_parameters, "converged": self.converged,
                "params": self.params.as_dict()}


def _pack(p: CondExParams, center, scale, homogeneous):
    """Free vector on the standardised-covariate scale."""
    a1s = p.alpha1 * scale
    b1s = p.beta1 * scale
    a0s = p.alpha0 + p.alpha1 @ center
    b0s = p.beta0 + p.beta1 @ center
    parts = [a0s, a1s.ravel(), b0s] + ([] if homogeneous else [b1s.ravel()])
    parts.append([p.rho])
    for m in p.margins:
        parts.append([m.mu, m.sigma, m.delta])
    return np.concatenate([np.asarray(v, dtype=float).ravel() for v in parts])


def _unpack(v, l, center, scale, homogeneous):
    v = np.asarray(v, dtype=float)
    pos = 0

    def take(n):
        nonlocal pos
        out = v[pos:pos + n]
        pos += n
        return out

    a0s = take(2)
    a1s = take(2 * l).reshape(2, l)
    b0s = take(2)
    b1s = np.zeros((2, l)) if homogeneous else take(2 * l).reshape(2, l)
    rho = float(take(1)[0])
    margins = tuple(DeltaLaplaceParams(*map(float, take(3))) for _ in range(2))
    # back to the original covariate scale
    a1 = a1s / scale
    b1 = b1s / scale
    return CondExParams(a0s - a1 @ center, a1, b0s - b1 @ center, b1, rho, margins)


def _transforms(l, homogeneous):
    t = [numopt.IDENTITY] * (4 + 2 * l + (0 if homogeneous else 2 * l))
    t.append(numopt.CORRELATION)
    t += [numopt.IDENTITY, numopt.POSITIVE, numopt.POSITIVE] * 2
    return t


def _start(yi, yo, l):
    alpha = np.clip(np.median(yo / yi[:, None], axis=0), -0.8, 0.8)
    beta = np.full(2, 0.2)
    z = (yo - alpha * yi[:, None]) / yi[:, None] ** beta
    rho = float(np.clip(np.corrcoef(z.T)[0, 1], -0.8, 0.8)) if yi.size > 2 else 0.0
    margins = tuple(DeltaLaplaceParams(float(np.mean(z[:, k])), float(np.std(z[:, k]) or 1.0), 1.5)
                    for k in range(2))
    return CondExParams(np.arctanh(alpha), np.zeros((2, l)), np.log(beta / (1 - beta)),
                        np.zeros((2, l)), rho, margins)


def fit_condex(y_gumbel, X, i: int, u: float = DEFAULT_U, homogeneous_beta: bool = False,
               start: Optional[CondExParams] = None,
               settings: Optional[numopt.MinimizeSettings] = None) -> CondExFit:
    """Maximum-likelihood fit for conditioning index ``i`` (0-based).

    ``y_gumbel`` is (n, 3) on standard Gumbel margins, ``X`` is (n, l).
    ``u`` is on the Laplace scale.  Covariates are centred and scaled for
    the optimiser; reported coefficients are on the original scale.
    """
    yl = gumbel_to_laplace(np.asarray(y_gumbel, dtype=float))
    return _fit_laplace(yl, X, i, u, homogeneous_beta, start, settings)


class _Objective:
    """Negative log-likelihood on the standardised-covariate free vector
    ``[a0, a1, b0, (b1), rho, mu1, s1, d1, mu2, s2, d2]`` with its gradient.

    The gradient is analytic except in the two delta-Laplace shapes, whose
    derivative through the incomplete gamma function is taken by central
    differences.
    """

    def __init__(self, yi, yo, Xs, homogeneous):
        self.yi, self.yo, self.Xs, self.hom = yi, yo, Xs, homogeneous
        self.logy = np.log(yi)
        self.l = Xs.shape[1]
        l = self.l
        self.i_b0 = 2 + 2 * l
        self.i_rho = self.i_b0 + 2 + (0 if homogeneous else 2 * l)
        self.size = self.i_rho + 7

    def split(self, v):
        l, p = self.l, self.i_rho
        a0, a1 = v[:2], v[2:2 + 2 * l].reshape(2, l)
        b0 = v[self.i_b0:self.i_b0 + 2]
        b1 = np.zeros((2, l)) if self.hom else v[self.i_b0 + 2:p].reshape(2, l)
        return a0, a1, b0, b1, v[p], v[p + 1:p + 4], v[p + 4:p + 7]

    def feasible(self, v):
        _, _, _, _, rho, m1, m2 = self.split(v)
        return -1 < rho < 1 and m1[1] > 0 and m1[2] > 0 and m2[1] > 0 and m2[2] > 0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if not self.feasible(v):
            return np.inf
        a0, a1, b0, b1, rho, m1, m2 = self.split(v)
        alpha = np.tanh(a0 + self.Xs @ a1.T)
        beta = expit(b0 + self.Xs @ b1.T)
        margins = (DeltaLaplaceParams(*m1), DeltaLaplaceParams(*m2))
        return _nll(alpha, beta, rho, margins, self.yi, self.yo)

    def gradient(self, v):
        v = np.asarray(v, dtype=float)
        a0, a1, b0, b1, rho, *mp = self.split(v)
        yi, logy, Xs = self.yi, self.logy, self.Xs
        alpha = np.tanh(a0 + Xs @ a1.T)
        beta = expit(b0 + Xs @ b1.T)
        scale_y = np.exp(beta * logy[:, None])
        z = (self.yo - alpha * yi[:, None]) / scale_y
        s = np.empty_like(z)
        dlogf_dz = np.empty_like(z)
        ds_dz = np.empty_like(z)
        dll_dmargin = []
        for k in range(2):
            mu, sig, dl = mp[k]
            m = DeltaLaplaceParams(mu, sig, dl)
            d = z[:, k] - mu
            x = (np.abs(d) / (m.k * sig)) ** dl
            s[:, k] = delta_laplace_normal_score(z[:, k], m)
            logf = delta_laplace_logpdf(z[:, k], m)
            with np.errstate(divide="ignore", invalid="ignore"):
                dlogf_dz[:, k] = np.where(d == 0, 0.0, -dl * x / d)
            # dPhi^{-1}(F)/dz = f / phi(s)
            ds_dz[:, k] = np.exp(logf + 0.5 * s[:, k] ** 2 + 0.5 * np.log(2 * np.pi))
            dll_dmargin.append((d, x, sig, dl))
        r2 = 1 - rho * rho
        dC_ds = np.column_stack([-(rho * rho * s[:, 0] - rho * s[:, 1]) / r2,
                                 -(rho * rho * s[:, 1] - rho * s[:, 0]) / r2])
        A = (s ** 2).sum(axis=1)
        B = s[:, 0] * s[:, 1]
        N, D = rho * rho * A - 2 * rho * B, 2 * r2
        dC_drho = rho / r2 - ((2 * rho * A - 2 * B) * D + 4 * rho * N) / D ** 2

        dll_dz = dlogf_dz + dC_ds * ds_dz
        g_eta_a = dll_dz * (-yi[:, None] / scale_y) * (1 - alpha ** 2)
        g_eta_b = (dll_dz * (-z * logy[:, None]) - logy[:, None]) * beta * (1 - beta)

        grad = np.empty(self.size)
        grad[:2] = g_eta_a.sum(axis=0)
        grad[2:self.i_b0] = (g_eta_a.T @ Xs).ravel()
        grad[self.i_b0:self.i_b0 + 2] = g_eta_b.sum(axis=0)
        if not self.hom:
            grad[self.i_b0 + 2:self.i_rho] = (g_eta_b.T @ Xs).ravel()
        grad[self.i_rho] = dC_drho.sum()
        for k in range(2):
            d, x, sig, dl = dll_dmargin[k]
            base = self.i_rho + 1 + 3 * k
            # F depends on (z - mu)/sigma: dF/dmu = -f, dF/dsigma = -f (z - mu)/sigma
            grad[base] = np.sum(-dlogf_dz[:, k] - dC_ds[:, k] * ds_dz[:, k])
            grad[base + 1] = np.sum(-1 / sig + dl * x / sig - dC_ds[:, k] * ds_dz[:, k] * d / sig)
        grad = -grad
        for k in range(2):
            j = self.i_rho + 3 + 3 * k
            h = 1e-6 * max(1.0, abs(v[j]))
            up, dn = v.copy(), v.copy()
            up[j] += h
            dn[j] -= h
            grad[j] = (self(up) - self(dn)) / (2 * h)
        return grad


def _fit_laplace(yl, X, i, u, homogeneous_beta=False, start=None, settings=None) -> CondExFit:
    yl = np.asarray(yl, dtype=float)
    X = np.asarray(X, dtype=float).reshape(yl.shape[0], -1)
    l = X.shape[1]
    if not np.all(np.isfinite(X)):
        raise InputError("covariates must be complete for conditional-extremes fits")
    exc, yi, yo, Xe = _exceedances(yl, X, i, u)
    if yi.size < MIN_EXCEEDANCES:
        raise InputError(f"only {yi.size} exceedances; need at least {MIN_EXCEEDANCES}")
    center = Xe.mean(axis=0) if l else np.zeros(0)
    scale = Xe.std(axis=0) if l else np.ones(0)
    scale = np.where(scale > 0, scale, 1.0)
    objective = _Objective(yi, yo, (Xe - center) / scale, homogeneous_beta)

    p0 = start if start is not None else _start(yi, yo, l)
    v0 = _pack(p0, center, scale, homogeneous_beta)
    if not np.isfinite(objective(v0)):
        v0 = _pack(_start(yi, yo, l), center, scale, homogeneous_beta)
    res = numopt.minimize(objective, v0, _transforms(l, homogeneous_beta),
                          settings or DEFAULT_SETTINGS, gradient=objective.gradient)
    if not res.converged:
        log.warning("conditional-extremes fit for index %d did not converge", i)
    params = _unpack(res.argmin, l, center, scale, homogeneous_beta)
    alpha, beta = params.alpha(Xe), params.beta(Xe)
    resid = (yo - alpha * yi[:, None]) / yi[:, None] ** beta
    return CondExFit(params, i, float(u), resid, np.flatnonzero(exc), homogeneous_beta,
                     float(res.objective_value), bool(res.converged), center, scale)


def total_aic(fits: Sequence[CondExFit]) -> float:
    """AIC summed over the per-index fits."""
    return float(sum(f.aic for f in fits))


def bootstrap_condex(y_gumbel, X, fit: CondExFit, B: int, rng) -> np.ndarray:
    """Parameter vectors (original scale) from B row-resampled refits, each
    started at ``fit``.  Rows are returned in the layout of ``param_vector``."""
    yl = gumbel_to_laplace(np.asarray(y_gumbel, dtype=float))
    X = np.asarray(X, dtype=float).reshape(yl.shape[0], -1)
    n = yl.shape[0]
    out = []
    for lane in numopt.spawn(rng, B):
        idx = lane.integers(0, n, n)
        try:
            f = _fit_laplace(yl[idx], X[idx], fit.i, fit.u, fit.homogeneous_beta, fit.params,
                             WARM_SETTINGS)
        except (FitError, InputError, DomainError) as exc:
            log.info("bootstrap refit failed: %s", exc)
            continue
        out.append(param_vector(f))
    if not out:
        raise FitError("every bootstrap refit failed")
    return np.vstack(out)


def param_vector(fit: CondExFit) -> np.ndarray:
    """alpha0, alpha1, beta0, [beta1], rho, (mu, sigma, delta) x 2."""
    l = fit.params.n_covariates
    return _pack(fit.params, np.zeros(l), np.ones(l), fit.homogeneous_beta)


def param_names(fit: CondExFit) -> list:
    o = [j + 1 for j in _others(fit.i)]
    l = fit.params.n_covariates
    names = [f"alpha0[Y{j}]" for j in o]
    names += [f"alpha1[Y{j},x{c + 1}]" for j in o for c in range(l)]
    names += [f"beta0[Y{j}]" for j in o]
    if not fit.homogeneous_beta:
        names += [f"beta1[Y{j},x{c + 1}]" for j in o for c in range(l)]
    names.append("rho")
    for j in o:
        names += [f"mu[Z{j}]", f"sigma[Z{j}]", f"delta[Z{j}]"]
    return names


def coefficient_table(fits: Sequence[CondExFit]) -> list:
    """Rows (i, j, alpha0, alpha1..., beta) mirroring a per-component layout;
    indices are 1-based."""
    rows = []
    for f in fits:
        for k, j in enumerate(_others(f.i)):
            row = {"i": f.i + 1, "j": j + 1, "alpha0": float(f.params.alpha0[k])}
            for c in range(f.params.n_covariates):
                row[f"alpha1_{c + 1}"] = float(f.params.alpha1[k, c])
            row["beta0"] = float(f.params.beta0[k])
            row["beta"] = float(expit(f.params.beta0[k])) if f.homogeneous_beta else None
            for c in range(f.params.n_covariates):
                row[f"beta1_{c + 1}"] = float(f.params.beta1[k, c])
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def simulate_conditional_batch(fit: CondExFit, X, times, rng) -> np.ndarray:
    """One draw per entry of ``times`` from the exceedance model of ``fit``
    (Laplace margins, shape (len(times), 3))."""
    if fit.residuals.shape[0] == 0:
        raise FitError("no empirical residuals to resample")
    times = np.asarray(times, dtype=np.int64)
    X = _as_X(X, fit.params.n_covariates)
    n = times.size
    yi = fit.u + rng.standard_exponential(n)
    z = fit.residuals[rng.integers(0, fit.residuals.shape[0], n)]
    Xt = X[times]
    rest = fit.params.alpha(Xt) * yi[:, None] + yi[:, None] ** fit.params.beta(Xt) * z
    out = np.empty((n, 3))
    out[:, fit.i] = yi
    out[:, _others(fit.i)] = rest
    return out


def simulate_conditional(fit: CondExFit, X, t: int, rng) -> np.ndarray:
    return simulate_conditional_batch(fit, X, [t], rng)[0]


PROVENANCE = ("conditional-simulated", "empirical-body")


@dataclass(frozen=True, eq=False)
class JointSample:
    """Rows on standard Gumbel margins; ``from_body[k]`` marks rows copied
    from the observed body rather than simulated."""

    rows: np.ndarray = field(repr=False)
    from_body: np.ndarray = field(repr=False)
    u: float = DEFAULT_U
    p0: float = 0.0

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def provenance(self) -> list:
        return [PROVENANCE[int(b)] for b in self.from_body]

    def laplace(self) -> np.ndarray:
        return gumbel_to_laplace(self.rows)


def importance_weights(draws_laplace, u: float) -> np.ndarray:
    """1 / (number of components above u), per row."""
    count = (np.asarray(draws_laplace) > u).sum(axis=1)
    if np.any(count == 0):
        raise DomainError("a conditional draw has no component above u")
    return 1.0 / count


def simulate_unconditional(fits: Sequence[CondExFit], y_gumbel, X, N: int,
                           N_prime: Optional[int] = None, rng=None) -> JointSample:
    """Importance-resampled draws of the whole vector, with body rows mixed in
    at the empirical rate of max(Y) < u, returned on Gumbel margins."""
    fits = sorted(fits, key=lambda f: f.i)
    if [f.i for f in fits] != [0, 1, 2]:
        raise InputError("one fit per conditioning index 0, 1, 2 is required")
    us = {f.u for f in fits}
    if len(us) != 1:
        raise InputError("the three fits must share one threshold")
    u = us.pop()
    N_prime = 3 * N if N_prime is None else int(N_prime)
    if N_prime <= N:
        raise InputError("N_prime must exceed N")
    yl = gumbel_to_laplace(np.asarray(y_gumbel, dtype=float))
    n = yl.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    g_idx, g_sim, g_pick, g_body = numopt.spawn(rng, 4)

    which = g_idx.integers(0, 3, N_prime)
    times = g_idx.integers(0, n, N_prime)
    draws = np.empty((N_prime, 3))
    sims = numopt.spawn(g_sim, 3)
    for f, lane in zip(fits, sims):
        sel = np.flatnonzero(which == f.i)
        draws[sel] = simulate_conditional_batch(f, X, times[sel], lane)
    w = importance_weights(draws, u)
    keep = g_pick.choice(N_prime, N, replace=True, p=w / w.sum())
    out = draws[keep]

    body_rows = yl[yl.max(axis=1) < u]
    p0 = body_rows.shape[0] / n
    from_body = g_body.random(N) < p0
    if from_body.any():
        if body_rows.shape[0] == 0:
            raise FitError("no body rows to resample")
        out[from_body] = body_rows[g_body.integers(0, body_rows.shape[0], int(from_body.sum()))]
    return JointSample(laplace_to_gumbel(out), from_body, float(u), float(p0))


# ---------------------------------------------------------------------------
# Probabilities and diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bound:
    component: int
    op: str
    value: float

    def holds(self, rows) -> np.ndarray:
        col = rows[:, self.component]
        return col > self.value if self.op == ">" else col < self.value


_BOUND_RE = re.compile(r"\s*Y(\d+)\s*([<>])\s*(\S+)\s*")


def parse_region(text: str) -> tuple:
    """``"Y1>6,Y2>6,Y3<m"`` -> Bounds; ``m`` is the standard Gumbel median and
    components are 1-based in the text."""
    if not text.strip():
        return ()
    out = []
    for part in text.split(","):
        mt = _BOUND_RE.fullmatch(part)
        if not mt:
            raise InputError(f"cannot parse region bound {part!r}")
        comp = int(mt.group(1)) - 1
        if comp not in (0, 1, 2):
            raise InputError(f"component Y{comp + 1} out of range")
        raw = mt.group(3)
        value = GUMBEL_MEDIAN if raw == "m" else float(raw)
        out.append(Bound(comp, mt.group(2), value))
    return tuple(out)


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    hits: int
    n: int

    @property
    def below_resolution(self) -> bool:
        return self.hits == 0

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.value * (1 - self.value) / self.n))

    def report(self) -> str:
        return f"<{1 / self.n:.3g}" if self.below_resolution else f"{self.value:.6g}"


def estimate_joint_probability(sample, region) -> ProbabilityEstimate:
    """Fraction of rows inside every bound (Gumbel scale)."""
    rows = sample.rows if isinstance(sample, JointSample) else np.asarray(sample, dtype=float)
    if rows.shape[0] == 0:
        raise InputError("empty sample")
    bounds = parse_region(region) if isinstance(region, str) else tuple(region)
    inside = np.ones(rows.shape[0], dtype=bool)
    for b in bounds:
        inside &= b.holds(rows)
    hits = int(inside.sum())
    return ProbabilityEstimate(hits / rows.shape[0], hits, int(rows.shape[0]))


DEFAULT_QQ_PROBS = tuple([0.5] + [round(0.9 + 0.001 * k, 3) for k in range(100)])


@dataclass(frozen=True, eq=False)
class QQTable:
    probs: np.ndarray
    simulated: np.ndarray
    observed: np.ndarray

    def max_gap(self, lo: float = 0.9, hi: float = 0.999) -> float:
        sel = (self.probs >= lo) & (self.probs <= hi)
        return float(np.max(np.abs(self.simulated[sel] - self.observed[sel])))

    def rows(self) -> list:
        return [{"p": float(p), "simulated": float(s), "observed": float(o)}
                for p, s, o in zip(self.probs, self.simulated, self.observed)]


def qq_aggregate(sample_laplace, data_laplace, probs=DEFAULT_QQ_PROBS) -> QQTable:
    """Type-1 quantiles of R = Y1 + Y2 + Y3 for simulated and observed rows."""
    from .distributions import type1_quantile
    probs = np.asarray(probs, dtype=float)
    rs = np.asarray(sample_laplace, dtype=float).sum(axis=1)
    ro = np.asarray(data_laplace, dtype=float).sum(axis=1)
    return QQTable(probs, np.asarray(type1_quantile(rs, probs)), np.asarray(type1_quantile(ro, probs)))
