"""Univariate laws used throughout the toolkit.

Everything here is vectorised over numpy arrays and stateless.  Samplers take
an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, InputError

# Below this |xi| the exponential branch of the GPD is used.
XI_ZERO_TOL = 1e-9

GUMBEL_MEDIAN = -np.log(np.log(2.0))


def _as_float(x):
    return np.asarray(x, dtype=float)


def _unwrap(out, like):
    return float(out) if np.ndim(like) == 0 else out


def _check_open_prob(prob, name="prob"):
    p = _as_float(prob)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError(f"{name} must lie in (0, 1)")
    return p


# ---------------------------------------------------------------------------
# Generalised Pareto
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"GPD scale must be positive, got {self.sigma}")
        if not np.isfinite(self.xi):
            raise DomainError("GPD shape must be finite")

    @property
    def upper_endpoint(self) -> float:
        if self.xi < 0:
            return -self.sigma / self.xi
        return np.inf


def gpd_cdf(y, p: GpdParams, strict: bool = True):
    """Distribution function of GPD(sigma, xi) at excess ``y``.

    With ``strict`` (default) values outside the support raise; otherwise
    they are clipped to 0 or 1.
    """
    y = _as_float(y)
    upper = p.upper_endpoint
    outside = (y < 0) | (y > upper)
    if strict and np.any(outside):
        raise DomainError("excess outside GPD support")
    yy = np.clip(y, 0.0, upper if np.isfinite(upper) else None)
    s = yy / p.sigma
    if abs(p.xi) < XI_ZERO_TOL:
        out = -np.expm1(-s)
    else:
        with np.errstate(divide="ignore"):
            out = -np.expm1(-np.log1p(p.xi * s) / p.xi)
    out = np.where(y >= upper, 1.0, out)
    return _unwrap(out, y)


def gpd_sf(y, p: GpdParams):
    y = _as_float(y)
    s = np.clip(y, 0.0, None) / p.sigma
    if abs(p.xi) < XI_ZERO_TOL:
        out = np.exp(-s)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(-np.log1p(p.xi * s) / p.xi)
        out = np.where(y >= p.upper_endpoint, 0.0, out)
    return _unwrap(out, y)


def gpd_logpdf(y, p: GpdParams):
    """Log density; ``-inf`` outside the support."""
    y = _as_float(y)
    s = y / p.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(p.xi) < XI_ZERO_TOL:
            out = -np.log(p.sigma) - s
        else:
            out = -np.log(p.sigma) - (1.0 + 1.0 / p.xi) * np.log1p(p.xi * s)
    bad = (y < 0) | (y > p.upper_endpoint) | ~np.isfinite(out)
    out = np.where(bad, -np.inf, out)
    return _unwrap(out, y)


def gpd_quantile(prob, p: GpdParams):
    prob = _as_float(prob)
    if np.any(~((prob >= 0) & (prob < 1))):
        raise DomainError("GPD quantile level must lie in [0, 1)")
    lg = np.log1p(-prob)
    if abs(p.xi) < XI_ZERO_TOL:
        out = -p.sigma * lg
    else:
        out = p.sigma * np.expm1(-p.xi * lg) / p.xi
    return _unwrap(out, prob)


def gpd_sample(p: GpdParams, size, rng: np.random.Generator):
    return gpd_quantile(rng.random(size), p)


# ---------------------------------------------------------------------------
# Standard Gumbel and Laplace, and the maps between them
# ---------------------------------------------------------------------------


def gumbel_cdf(y):
    y = _as_float(y)
    return _unwrap(np.exp(-np.exp(-y)), y)


def gumbel_sf(y):
    y = _as_float(y)
    return _unwrap(-np.expm1(-np.exp(-y)), y)


def gumbel_quantile(prob):
    p = _check_open_prob(prob)
    return _unwrap(-np.log(-np.log(p)), p)


def gumbel_sample(size, rng: np.random.Generator):
    return gumbel_quantile(rng.random(size))


def laplace_cdf(y):
    y = _as_float(y)
    with np.errstate(over="ignore"):
        out = np.where(y < 0, 0.5 * np.exp(np.minimum(y, 0.0)),
                       1.0 - 0.5 * np.exp(-np.maximum(y, 0.0)))
    return _unwrap(out, y)


def laplace_quantile(prob):
    p = _check_open_prob(prob)
    with np.errstate(divide="ignore"):
        out = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    return _unwrap(out, p)


def laplace_sample(size, rng: np.random.Generator):
    return laplace_quantile(rng.random(size))


def gumbel_to_laplace(y):
    """Probability-integral transform from standard Gumbel to standard Laplace.

    Both tails are evaluated without forming probabilities near 0 or 1, so the
    map stays accurate far into the tails.
    """
    y = _as_float(y)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        t = np.exp(-y)
        lower = np.log(2.0) - t
        # log Pr(Y > y) = -y + log((1 - exp(-t)) / t)
        ratio = np.where(t > 0, -np.expm1(-t) / np.where(t > 0, t, 1.0), 1.0)
        log_sf = -y + np.log(ratio)
        upper = -np.log(2.0) - log_sf
    out = np.where(t > np.log(2.0), lower, upper)
    return _unwrap(out, y)


def laplace_to_gumbel(z):
    z = _as_float(z)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        neg = -np.log(np.log(2.0) - np.minimum(z, 0.0))
        zp = np.maximum(z, 0.0)
        s = 0.5 * np.exp(-zp)
        # -log(-log1p(-s)) = -log(s) - log(-log1p(-s)/s), finite as s -> 0
        ratio = np.where(s > 0, -np.log1p(-s) / np.where(s > 0, s, 1.0), 1.0)
        pos = zp + np.log(2.0) - np.log(ratio)
    out = np.where(z < 0, neg, pos)
    return _unwrap(out, z)


# ---------------------------------------------------------------------------
# delta-Laplace (generalised Gaussian)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaLaplaceParams:
    mu: float
    sigma: float
    delta: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise DomainError("delta-Laplace location must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"delta-Laplace scale must be positive, got {self.sigma}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise DomainError(f"delta-Laplace shape must be positive, got {self.delta}")

    @property
    def k(self) -> float:
        return float(np.exp(0.5 * (special.gammaln(1 / self.delta)
                                   - special.gammaln(3 / self.delta))))


def _dl_standardise(z, p: DeltaLaplaceParams):
    z = _as_float(z)
    d = z - p.mu
    x = (np.abs(d) / (p.k * p.sigma)) ** p.delta
    return z, d, x


def delta_laplace_logpdf(z, p: DeltaLaplaceParams):
    z, _, x = _dl_standardise(z, p)
    const = (np.log(p.delta) - np.log(2.0 * p.k * p.sigma)
             - special.gammaln(1.0 / p.delta))
    return _unwrap(const - x, z)


def delta_laplace_pdf(z, p: DeltaLaplaceParams):
    z = _as_float(z)
    return _unwrap(np.exp(delta_laplace_logpdf(z, p)), z)


def delta_laplace_cdf(z, p: DeltaLaplaceParams):
    """CDF via the regularised incomplete gamma function.

    |Z - mu|^delta / (k sigma)^delta is Gamma(1/delta, 1) distributed, so the
    CDF is 1/2 -/+ P(1/delta, x)/2 on either side of the location.  The tail
    half uses the complementary function to keep relative accuracy.
    """
    z, d, x = _dl_standardise(z, p)
    half_q = 0.5 * special.gammaincc(1.0 / p.delta, x)
    out = np.where(d < 0, half_q, 1.0 - half_q)
    return _unwrap(out, z)


def delta_laplace_normal_score(z, p: DeltaLaplaceParams):
    """``Phi^{-1}(F(z))`` evaluated from the nearer tail for accuracy."""
    z, d, x = _dl_standardise(z, p)
    half_q = 0.5 * special.gammaincc(1.0 / p.delta, x)
    with np.errstate(divide="ignore"):
        out = np.where(d < 0, special.ndtri(half_q), -special.ndtri(half_q))
    return _unwrap(out, z)


def delta_laplace_quantile(prob, p: DeltaLaplaceParams):
    prob = _check_open_prob(prob)
    a = 1.0 / p.delta
    tail = np.where(prob < 0.5, 2.0 * prob, 2.0 * (1.0 - prob))
    r = special.gammainccinv(a, tail) ** (1.0 / p.delta)
    out = p.mu + np.where(prob < 0.5, -1.0, 1.0) * p.k * p.sigma * r
    return _unwrap(out, prob)


def delta_laplace_sample(p: DeltaLaplaceParams, size, rng: np.random.Generator):
    # Gamma representation avoids inverting the incomplete gamma per draw.
    g = rng.gamma(1.0 / p.delta, 1.0, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return p.mu + sign * p.k * p.sigma * g ** (1.0 / p.delta)


# ---------------------------------------------------------------------------
# Empirical distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Step-function distribution of a finite sample."""

    sorted_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.sort(np.asarray(self.sorted_values, dtype=float).ravel())
        if v.size == 0:
            raise InputError("empirical distribution needs at least one value")
        if not np.all(np.isfinite(v)):
            raise InputError("empirical distribution values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "sorted_values", v)

    @property
    def n(self) -> int:
        return self.sorted_values.size


def empirical_cdf(dist: EmpiricalDistribution, y):
    y = _as_float(y)
    out = np.searchsorted(dist.sorted_values, y, side="right") / dist.n
    return _unwrap(out, y)


def empirical_quantile(dist: EmpiricalDistribution, prob):
    """Left-continuous inverse of the step CDF (type-1 sample quantile)."""
    prob = _as_float(prob)
    if np.any(~((prob >= 0) & (prob <= 1))):
        raise DomainError("quantile level must lie in [0, 1]")
    idx = np.clip(np.ceil(dist.n * prob).astype(np.int64) - 1, 0, dist.n - 1)
    out = dist.sorted_values[idx]
    return _unwrap(out, prob)


def empirical_sample(dist: EmpiricalDistribution, size, rng: np.random.Generator):
    return dist.sorted_values[rng.integers(0, dist.n, size)]


def type1_quantile(values, prob):
    """Type-1 sample quantile of an unsorted array (no copy kept)."""
    return empirical_quantile(EmpiricalDistribution(values), prob)


def exp_quantile(prob):
    prob = _as_float(prob)
    return _unwrap(-np.log1p(-prob), prob)
