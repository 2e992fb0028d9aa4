"""Covariate-dependent peaks-over-threshold regression.

The threshold u(x) is an additive quantile regression at level ``lam``;
exceedances Y - u(x) are GPD with log-linear scale and linear shape, both
additive in linear and B-spline terms.  Missing covariates contribute zero
to the linear predictor of the affected term only.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from . import numopt
from .dataset import Dataset
from .distributions import (XI_ZERO_TOL, EmpiricalDistribution, GpdParams,
                            empirical_quantile, exp_quantile, gpd_logpdf)
from .errors import DomainError, FitError, InputError

log = logging.getLogger(__name__)

XI_BOX = (-0.5, 1.0)
RIDGE_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)
MIN_THRESHOLD_ROWS = 50
MIN_EXCEEDANCES = 30

# ---------------------------------------------------------------------------
# Formulae and designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    covariate: str
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "smooth"):
            raise InputError(f"term kind must be linear or smooth, got {self.kind!r}")

    @classmethod
    def parse(cls, text) -> "Term":
        if isinstance(text, Term):
            return text
        m = re.fullmatch(r"\s*s\(\s*([^)\s]+)\s*\)\s*", text)
        if m:
            return cls(m.group(1), "smooth")
        return cls(text.strip(), "linear")

    def __str__(self):
        return f"s({self.covariate})" if self.kind == "smooth" else self.covariate


def _terms(seq) -> tuple:
    if isinstance(seq, str):
        seq = [t for t in seq.split("+") if t.strip()]
    return tuple(Term.parse(t) for t in seq)


@dataclass(frozen=True)
class ModelFormula:
    """Terms for the threshold, the GPD log-scale and the GPD shape.

    Terms may be given as strings: ``"wind"`` is linear, ``"s(wind)"`` smooth,
    and a single string may join several with ``+``.
    """

    response: str
    threshold: tuple = ()
    scale: tuple = ()
    shape: tuple = ()

    def __post_init__(self):
        for name in ("threshold", "scale", "shape"):
            terms = _terms(getattr(self, name))
            covs = [t.covariate for t in terms]
            if len(set(covs)) != len(covs):
                raise InputError(f"covariate repeated in {name} terms: {covs}")
            object.__setattr__(self, name, terms)

    @property
    def covariates(self) -> tuple:
        seen = []
        for t in self.threshold + self.scale + self.shape:
            if t.covariate not in seen:
                seen.append(t.covariate)
        return tuple(seen)

    def as_dict(self) -> dict:
        return {"response": self.response,
                "threshold": [str(t) for t in self.threshold],
                "scale": [str(t) for t in self.scale],
                "shape": [str(t) for t in self.shape]}


@dataclass(frozen=True)
class TermEncoding:
    term: Term
    center: float = 0.0
    basis: Optional[numopt.SplineBasis] = None
    column_means: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def names(self) -> tuple:
        if self.basis is None:
            return (self.term.covariate,)
        return tuple(f"s({self.term.covariate})[{j}]" for j in range(self.basis.n_basis - 1))

    def encode(self, x: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return np.where(np.isfinite(x), x - self.center, 0.0)[:, None]
        block = numopt.spline_design(x, self.basis, self.column_means).matrix
        # centred columns sum to zero; drop one for identifiability
        return block[:, :-1]


@dataclass(frozen=True)
class Design:
    """Frozen encoding of a term list: intercept plus centred term columns."""

    encodings: tuple = ()

    @classmethod
    def build(cls, terms: Sequence[Term], data: Dataset, n_knots: int = 8) -> "Design":
        encs = []
        for t in terms:
            x = data.column(t.covariate)
            ok = np.isfinite(x)
            if not ok.any():
                raise InputError(f"covariate {t.covariate!r} is entirely missing")
            if t.kind == "linear":
                encs.append(TermEncoding(t, center=float(x[ok].mean())))
            else:
                basis = numopt.SplineBasis.from_data(x[ok], n_interior=n_knots)
                means = numopt.spline_design(x, basis).column_means
                encs.append(TermEncoding(t, basis=basis, column_means=means))
        return cls(tuple(encs))

    @property
    def column_names(self) -> tuple:
        names = ["(intercept)"]
        for e in self.encodings:
            names.extend(e.names)
        return tuple(names)

    @property
    def smooth_mask(self) -> np.ndarray:
        mask = [False]
        for e in self.encodings:
            mask.extend([e.basis is not None] * len(e.names))
        return np.array(mask)

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def apply(self, data: Dataset) -> np.ndarray:
        cols = [np.ones((data.n_rows, 1))]
        for e in self.encodings:
            cols.append(e.encode(data.column(e.term.covariate)))
        return np.hstack(cols)


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise InputError(f"design has {X.shape[1]} columns but only {X.shape[0]} rows")
    _, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 1.0) * 1e3
    bad = piv[d <= tol]
    if bad.size:
        cols = ", ".join(names[i] for i in sorted(bad))
        raise InputError(f"design is rank deficient; collinear columns: {cols}")


# ---------------------------------------------------------------------------
# Threshold: additive quantile regression
# ---------------------------------------------------------------------------


def smoothed_pinball(r, tau: float, h: float):
    """Pinball loss with a quadratic patch on |r| <= h, and its derivative."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) <= h
    loss = np.where(inside, r * r / (4 * h) + r * (tau - 0.5) + h / 4,
                    r * (tau - (r < 0)))
    deriv = np.where(inside, r / (2 * h) + tau - 0.5, tau - (r < 0))
    return loss, deriv


@dataclass(frozen=True)
class ThresholdFit:
    lam: float
    coefficients: np.ndarray
    design: Design = field(repr=False)
    ridge: float = 0.0
    bic: float = float("nan")

    def __post_init__(self):
        if not 0 < self.lam < 0.9999:
            raise DomainError("threshold level must lie in (0, 0.9999)")

    def predict(self, data: Dataset) -> np.ndarray:
        return self.design.apply(data) @ self.coefficients


def _pinball_fit(X, y, tau, h, penalty, start):
    def f(beta):
        r = y - X @ beta
        loss, d = smoothed_pinball(r, tau, h)
        pb = penalty * beta
        return loss.sum() + 0.5 * beta @ pb, -(X.T @ d) + pb

    res = optimize.minimize(f, start, jac=True, method="L-BFGS-B",
                            options=dict(maxiter=5000, ftol=1e-15, gtol=1e-10))
    return np.asarray(res.x)


def fit_threshold(data: Dataset, formula: ModelFormula, lam: float,
                  ridge: Optional[float] = None) -> ThresholdFit:
    """Additive quantile regression for the ``lam``-quantile of the response.

    The smoothed pinball loss (half-width 1e-3 IQR) is minimised by L-BFGS
    after a coarse-bandwidth warm start.  When smooth terms are present and
    ``ridge`` is None, the ridge weight on spline coefficients is chosen from
    ``RIDGE_GRID`` by a quantile-regression BIC.
    """
    if not 0 < lam < 1:
        raise DomainError("lam must lie in (0, 1)")
    y_all = data.column(formula.response)
    keep = np.isfinite(y_all)
    if keep.sum() < MIN_THRESHOLD_ROWS:
        raise InputError(f"need at least {MIN_THRESHOLD_ROWS} non-missing responses")
    d = data.take(np.flatnonzero(keep))
    y = y_all[keep]
    design = Design.build(formula.threshold, d)
    X = design.apply(d)
    _check_rank(X, design.column_names)

    sd = float(np.std(y)) or 1.0
    q75, q25 = np.percentile(y, [75, 25])
    h = 1e-3 * ((q75 - q25) or sd)
    smooth = design.smooth_mask
    grid = RIDGE_GRID if (ridge is None and smooth.any()) else (ridge or 0.0,)

    beta0 = np.linalg.lstsq(X, y, rcond=None)[0]
    beta0[0] += np.quantile(y - X @ beta0, lam)
    n = y.size
    best = None
    for kappa in grid:
        penalty = np.where(smooth, kappa / sd, 0.0)
        beta = _pinball_fit(X, y, lam, 100 * h, penalty, beta0)
        beta = _pinball_fit(X, y, lam, h, penalty, beta)
        r = y - X @ beta
        mean_loss = float(np.mean(r * (lam - (r < 0))))
        # edf of the linearised smoother with a local residual density weight
        band = 0.1 * sd
        dens = max(np.mean(np.abs(r) < band) / (2 * band), 1e-12)
        xtx = dens * (X.T @ X)
        edf = float(np.trace(np.linalg.solve(xtx + np.diag(penalty), xtx)))
        bic = 2 * n * np.log(max(mean_loss, 1e-300)) + edf * np.log(n)
        if best is None or bic < best[0]:
            best = (bic, kappa, beta)
    bic, kappa, beta = best
    return ThresholdFit(lam, beta, design, float(kappa), float(bic))


# ---------------------------------------------------------------------------
# GPD regression
# ---------------------------------------------------------------------------


def _log1p_ratio(a):
    """log1p(a)/a, continuous at a = 0."""
    small = np.abs(a) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, 1.0 - a / 2, np.log1p(safe) / safe)


def gpd_loglik_terms(r, eta, xi):
    """Per-exceedance log-likelihood and its derivatives in (log-scale, shape).

    Returns ``(ll, d_eta, d_xi)``; ``ll`` is ``-inf`` where the excess is
    outside the support.
    """
    r, eta, xi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, eta, xi)))
    s = r * np.exp(-eta)
    a = xi * s
    valid = (1.0 + a > 0) & (r >= 0)
    a = np.where(valid, a, 0.0)
    w = 1.0 + a
    l1p = np.log1p(a)
    ll = -eta - s * _log1p_ratio(a) - l1p
    d_eta = -1.0 + (xi + 1.0) * s / w
    small = np.abs(a) < 1e-3
    xis = np.where(small, 1.0, xi)
    direct = (l1p - a / w) / xis ** 2 - s / w
    series = s * s * (0.5 - 2 * a / 3 + 0.75 * a * a - 0.8 * a ** 3) - s / w
    d_xi = np.where(small, series, direct)
    ll = np.where(valid, ll, -np.inf)
    return ll, d_eta, d_xi


@dataclass(frozen=True)
class GpdRegressionFit:
    formula: ModelFormula
    threshold: ThresholdFit
    sigma_coeffs: np.ndarray
    xi_coeffs: np.ndarray
    scale_design: Design = field(repr=False)
    shape_design: Design = field(repr=False)
    loglik: float = float("nan")
    n_exceedances: int = 0
    edf: float = float("nan")
    ridge: float = 0.0
    body_residuals: Optional[EmpiricalDistribution] = field(default=None, repr=False)
    log_link: bool = True
    converged: bool = True

    @property
    def lam(self) -> float:
        return self.threshold.lam

    @property
    def n_coefficients(self) -> int:
        return int(self.sigma_coeffs.size + self.xi_coeffs.size)

    def u(self, data: Dataset) -> np.ndarray:
        return self.threshold.predict(data)

    def sigma(self, data: Dataset) -> np.ndarray:
        return np.exp(self.scale_design.apply(data) @ self.sigma_coeffs)

    def xi(self, data: Dataset) -> np.ndarray:
        return self.shape_design.apply(data) @ self.xi_coeffs

    def summary(self) -> dict:
        return {
            "formula": self.formula.as_dict(),
            "lambda": self.lam,
            "threshold_coefficients": dict(zip(self.threshold.design.column_names,
                                               map(float, self.threshold.coefficients))),
            "log_scale_coefficients": dict(zip(self.scale_design.column_names,
                                               map(float, self.sigma_coeffs))),
            "shape_coefficients": dict(zip(self.shape_design.column_names,
                                           map(float, self.xi_coeffs))),
            "loglik": self.loglik, "n_exceedances": self.n_exceedances,
            "edf": self.edf, "ridge": self.ridge, "converged": self.converged,
        }


def _fisher_scoring(r, Xs, Xx, penalty, b0, max_iter=300):
    ps = Xs.shape[1]

    def split(b):
        return Xs @ b[:ps], Xx @ b[ps:]

    def pen_ll(b):
        eta, xi = split(b)
        if np.any(xi <= XI_BOX[0]) or np.any(xi >= XI_BOX[1]):
            return -np.inf
        ll = gpd_loglik_terms(r, eta, xi)[0].sum()
        return ll - 0.5 * b @ (penalty * b)

    b = b0.copy()
    cur = pen_ll(b)
    if not np.isfinite(cur):
        raise FitError("GPD regression start point is infeasible")
    converged = False
    for _ in range(max_iter):
        eta, xi = split(b)
        _, de, dx = gpd_loglik_terms(r, eta, xi)
        xc = np.maximum(xi, XI_BOX[0] + 0.01)
        wee = 1 / (1 + 2 * xc)
        wex = 1 / ((1 + xc) * (1 + 2 * xc))
        wxx = 2 * wex
        info = np.block([[Xs.T @ (wee[:, None] * Xs), Xs.T @ (wex[:, None] * Xx)],
                         [Xx.T @ (wex[:, None] * Xs), Xx.T @ (wxx[:, None] * Xx)]])
        grad = np.concatenate([Xs.T @ de, Xx.T @ dx]) - penalty * b
        step = np.linalg.solve(info + np.diag(penalty), grad)
        t = 1.0
        while t > 1e-12:
            cand = b + t * step
            new = pen_ll(cand)
            if new >= cur - 1e-12 * abs(cur):
                break
            t /= 2
        else:
            converged = True
            break
        delta = new - cur
        b, cur = cand, new
        if abs(delta) < 1e-11 * (1 + abs(cur)) and np.max(np.abs(t * step)) < 1e-7:
            converged = True
            break
    eta, xi = split(b)
    xc = np.maximum(xi, XI_BOX[0] + 0.01)
    wee, wex = 1 / (1 + 2 * xc), 1 / ((1 + xc) * (1 + 2 * xc))
    info = np.block([[Xs.T @ (wee[:, None] * Xs), Xs.T @ (wex[:, None] * Xx)],
                     [Xx.T @ (wex[:, None] * Xs), Xx.T @ (2 * wex[:, None] * Xx)]])
    return b, converged, info


def _constant_gpd_start(r):
    def nll(t):
        return -float(np.sum(gpd_logpdf(r, GpdParams(t[0], t[1]))))

    # only seeds Fisher scoring, so a coarse simplex is enough
    start = [float(np.mean(r)), 0.05]
    res = numopt.minimize(nll, start, [numopt.POSITIVE, numopt.bounded(*XI_BOX)],
                          numopt.MinimizeSettings(restarts=0, polish=False, xatol=1e-4, fatol=1e-6))
    return res.argmin


def fit_gpd_regression(data: Dataset, formula: ModelFormula, threshold: ThresholdFit,
                       ridge: Optional[float] = None) -> GpdRegressionFit:
    """Maximum-likelihood GPD regression for exceedances of ``threshold``.

    Penalised Fisher scoring with step halving; a step that would leave the
    shape box (-0.5, 1) on any exceedance, or put an excess outside its
    support, is rejected.  Smooth-term ridge weights are chosen by BIC when
    ``ridge`` is None.
    """
    y_all = data.column(formula.response)
    keep = np.isfinite(y_all)
    d = data.take(np.flatnonzero(keep))
    y = y_all[keep]
    u = threshold.predict(d)
    exc = y > u
    n_exc = int(exc.sum())
    if n_exc < MIN_EXCEEDANCES:
        raise FitError(f"only {n_exc} exceedances; need at least {MIN_EXCEEDANCES}")
    scale_design = Design.build(formula.scale, d)
    shape_design = Design.build(formula.shape, d)
    de = d.take(np.flatnonzero(exc))
    Xs, Xx = scale_design.apply(de), shape_design.apply(de)
    _check_rank(Xs, [f"scale:{c}" for c in scale_design.column_names])
    _check_rank(Xx, [f"shape:{c}" for c in shape_design.column_names])
    r = (y - u)[exc]

    sig0, xi0 = _constant_gpd_start(r)
    b0 = np.zeros(Xs.shape[1] + Xx.shape[1])
    b0[0] = np.log(sig0)
    b0[Xs.shape[1]] = xi0
    smooth = np.concatenate([scale_design.smooth_mask, shape_design.smooth_mask])
    grid = RIDGE_GRID if (ridge is None and smooth.any()) else (ridge or 0.0,)
    best = None
    for kappa in grid:
        penalty = np.where(smooth, kappa, 0.0)
        b, conv, info = _fisher_scoring(r, Xs, Xx, penalty, b0)
        eta, xi = Xs @ b[:Xs.shape[1]], Xx @ b[Xs.shape[1]:]
        ll = float(gpd_loglik_terms(r, eta, xi)[0].sum())
        edf = float(np.trace(np.linalg.solve(info + np.diag(penalty), info)))
        crit = -2 * ll + edf * np.log(n_exc)
        if best is None or crit < best[0]:
            best = (crit, kappa, b, conv, ll, edf)
    _, kappa, b, conv, ll, edf = best
    body = (y - u)[~exc]
    return GpdRegressionFit(
        formula, threshold, b[:Xs.shape[1]], b[Xs.shape[1]:], scale_design, shape_design,
        loglik=ll, n_exceedances=n_exc, edf=edf, ridge=float(kappa),
        body_residuals=EmpiricalDistribution(body) if body.size else None, converged=conv)


def fit_marginal(data: Dataset, formula: ModelFormula, lam: float,
                 ridge: Optional[float] = None) -> GpdRegressionFit:
    """Threshold then GPD regression in one call."""
    return fit_gpd_regression(data, formula, fit_threshold(data, formula, lam, ridge), ridge)


def bic(fit: GpdRegressionFit, data: Optional[Dataset] = None) -> float:
    """-2 loglik + p log(n_exceedances); p is the coefficient count
    (effective degrees of freedom when smooth terms are penalised)."""
    p = fit.n_coefficients if fit.ridge == 0 else fit.edf
    if p <= 0:
        raise FitError("model has no estimated coefficients")
    ll = fit.loglik
    n = fit.n_exceedances
    if data is not None:
        ll, n = _loglik_on(fit, data)
    return float(-2 * ll + p * np.log(n))


def _loglik_on(fit: GpdRegressionFit, data: Dataset):
    y = data.column(fit.formula.response)
    keep = np.isfinite(y)
    d = data.take(np.flatnonzero(keep))
    y = y[keep]
    u = fit.u(d)
    exc = y > u
    de = d.take(np.flatnonzero(exc))
    ll = gpd_loglik_terms((y - u)[exc], np.log(fit.sigma(de)), fit.xi(de))[0]
    return float(ll.sum()), int(exc.sum())


# ---------------------------------------------------------------------------
# Standardisation and threshold selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialMargins:
    values: np.ndarray
    rows: np.ndarray
    n_excluded: int


def transform_to_exponential(fit: GpdRegressionFit, data: Dataset) -> ExponentialMargins:
    """Map responses to standard exponential margins through the fitted model.

    Per row the CDF is ``lam * Fbody(y - u(x))`` below the threshold, with
    ``Fbody`` the empirical CDF of training residuals below u(x), and
    ``lam + (1 - lam) H(y - u(x))`` above it.  Rows with a missing response
    or covariate are excluded and counted.
    """
    y = data.column(fit.formula.response)
    ok = np.isfinite(y)
    for c in fit.formula.covariates:
        ok &= np.isfinite(data.column(c))
    rows = np.flatnonzero(ok)
    d = data.take(rows)
    y = y[ok]
    r = y - fit.u(d)
    lam = fit.lam
    out = np.empty(y.size)
    above = r > 0
    if fit.body_residuals is not None:
        body = fit.body_residuals
        fb = np.searchsorted(body.sorted_values, r[~above], side="right") / body.n
    else:
        fb = np.ones((~above).sum())
    out[~above] = -np.log1p(-lam * fb)
    da = d.take(np.flatnonzero(above))
    sig, xi = fit.sigma(da), fit.xi(da)
    ra = r[above]
    s = ra / sig
    # -log(1 - F) = -log(1-lam) - log(H-bar)
    a = xi * s
    with np.errstate(divide="ignore", invalid="ignore"):
        log_sf = np.where(np.abs(xi) < XI_ZERO_TOL, -s,
                          -np.log1p(np.maximum(a, -1.0)) / np.where(xi == 0, 1.0, xi))
    log_sf = np.where(1 + a <= 0, -np.inf, log_sf)
    out[above] = -np.log1p(-lam) - log_sf
    return ExponentialMargins(out, rows, int(data.n_rows - rows.size))


def twsmad(std_data, lambda_star: float = 0.99, n_grid: int = 1000) -> float:
    """Tail-weighted standardised mean absolute deviance from Exp(1).

    The grid is lambda_i = i/(n+1), i = 1..n, so that lambda_n = 1 - (lambda_2 -
    lambda_1).  Weights are proportional to the Exp(1) quantile on grid points
    above ``lambda_star`` and sum to one there.
    """
    if n_grid < 100:
        raise InputError("twsMAD grid needs at least 100 points")
    if not 0 < lambda_star < 1:
        raise DomainError("lambda_star must lie in (0, 1)")
    x = np.asarray(std_data, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise InputError("no standardised data")
    grid = np.arange(1, n_grid + 1) / (n_grid + 1)
    theo = exp_quantile(grid)
    w = np.where(grid > lambda_star, theo, 0.0)
    if w.sum() == 0:
        raise InputError("no grid points above lambda_star")
    w = w / w.sum()
    emp = empirical_quantile(EmpiricalDistribution(x), grid)
    return float(np.mean(w * np.abs(emp - theo)))


def twsmad_scan(data: Dataset, formula: ModelFormula, candidate_lambdas: Sequence[float],
                lambda_star: float = 0.99, n_grid: int = 1000,
                ridge: Optional[float] = None) -> list:
    """(lambda, score or None, error message or None) per candidate."""
    rows = []
    for lam in sorted(float(v) for v in candidate_lambdas):
        if not lam < lambda_star:
            raise DomainError("candidate thresholds must be below lambda_star")
        try:
            fit = fit_marginal(data, formula, lam, ridge)
            score = twsmad(transform_to_exponential(fit, data).values, lambda_star, n_grid)
            rows.append((lam, score, None))
        except (FitError, InputError, DomainError, np.linalg.LinAlgError) as exc:
            log.info("threshold candidate %.4f failed: %s", lam, exc)
            rows.append((lam, None, str(exc)))
    return rows


def select_threshold(data: Dataset, formula: ModelFormula, candidate_lambdas: Sequence[float],
                     lambda_star: float = 0.99, n_grid: int = 1000,
                     ridge: Optional[float] = None) -> float:
    """Candidate level with the smallest twsMAD (ties go to the smaller level)."""
    rows = twsmad_scan(data, formula, candidate_lambdas, lambda_star, n_grid, ridge)
    ok = [(s, lam) for lam, s, _ in rows if s is not None]
    if not ok:
        raise FitError("every candidate threshold failed: "
                       + "; ".join(f"{lam}: {e}" for lam, _, e in rows))
    best = min(s for s, _ in ok)
    return min(lam for s, lam in ok if s == best)


# ---------------------------------------------------------------------------
# Prediction and bootstrap
# ---------------------------------------------------------------------------


def _quantile_formula(u, sigma, xi, lam, q):
    z = np.log((1 - lam) / (1 - q))  # >= 0
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < XI_ZERO_TOL
    xs = np.where(small, 1.0, xi)
    excess = np.where(small, sigma * z, sigma * np.expm1(xi * z) / xs)
    return u + excess


def predict_quantiles(fit: GpdRegressionFit, newdata: Dataset, q: float) -> np.ndarray:
    """Conditional ``q``-quantile for every row of ``newdata`` (q >= lam)."""
    if not (fit.lam <= q < 1):
        raise DomainError(f"q must satisfy lam={fit.lam} <= q < 1")
    return _quantile_formula(fit.u(newdata), fit.sigma(newdata), fit.xi(newdata), fit.lam, q)


def conditional_quantile(fit: GpdRegressionFit, x: Mapping[str, Optional[float]], q: float) -> float:
    """Conditional ``q``-quantile at one covariate row; missing entries
    (absent, None or NaN) contribute zero."""
    cols = {}
    for c in fit.formula.covariates:
        v = x.get(c)
        cols[c] = [np.nan if v is None else float(v)]
    cols.setdefault(fit.formula.response, [np.nan])
    return float(predict_quantiles(fit, Dataset.from_arrays(cols), q)[0])


@dataclass(frozen=True)
class BootstrapQuantiles:
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    n_success: int
    n_failed: int
    degenerate: bool


def bootstrap_quantiles(data: Dataset, formula: ModelFormula, lam: float, x_set: Dataset,
                        q: float, B: int, rng: np.random.Generator,
                        interval_level: float = 0.5, ridge: Optional[float] = None
                        ) -> BootstrapQuantiles:
    """Non-parametric bootstrap of conditional quantiles at the rows of ``x_set``.

    Returns the empirical (0.5 -/+ level/2) and 0.5 quantiles across refits.
    ``B`` below 50 is allowed but flagged ``degenerate``.
    """
    if not 0 <= interval_level < 1:
        raise DomainError("interval_level must lie in [0, 1)")
    if B < 1:
        raise InputError("B must be positive")
    n = data.n_rows
    preds = []
    failed = 0
    for lane in numopt.spawn(rng, B):
        idx = lane.integers(0, n, n)
        try:
            fit = fit_marginal(data.take(idx), formula, lam, ridge)
            preds.append(predict_quantiles(fit, x_set, q))
        except (FitError, InputError, DomainError, np.linalg.LinAlgError) as exc:
            log.debug("bootstrap refit failed: %s", exc)
            failed += 1
    if failed > 0.2 * B:
        raise FitError(f"{failed} of {B} bootstrap refits failed")
    P = np.vstack(preds)
    lo, hi = 0.5 - interval_level / 2, 0.5 + interval_level / 2
    lower, median, upper = (np.quantile(P, p, axis=0) for p in (lo, 0.5, hi))
    return BootstrapQuantiles(lower, median, upper, len(preds), failed,
                              degenerate=B < 50 or len(preds) < 2)
