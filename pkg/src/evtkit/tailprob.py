"""Joint tail probabilities in high dimension without covariates.

Pairwise extremal dependence (EDM) on a heavy-tailed scale, average-linkage
clustering of components into blocks, a two-parameter model for the law of
the weighted maximum of ``1 - U`` below a level ``phi_star``, and products
over blocks assumed independent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from . import numopt
from .distributions import gumbel_cdf
from .errors import DomainError, FitError, InputError

log = logging.getLogger(__name__)

EDM_MAX = {"L2": 0.5, "L1": 0.25}
MIN_EXCEEDANCES = 20
MIN_BELOW = 50
WEIGHTED_CAVEAT = ("weighted maxima use the unweighted tail form as a working model; "
                   "no asymptotic justification is available")

# ---------------------------------------------------------------------------
# Extremal dependence measure and clustering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdmConfig:
    norm: str = "L2"
    alpha: float = 2.0
    threshold_prob: float = 0.99

    def __post_init__(self):
        if self.norm not in EDM_MAX:
            raise InputError("norm must be 'L1' or 'L2'")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError("alpha must be positive")
        if not 0.5 < self.threshold_prob < 1:
            raise DomainError("threshold_prob must lie in (0.5, 1)")

    @property
    def edm_max(self) -> float:
        return EDM_MAX[self.norm]


def gumbel_to_frechet(y, alpha: float = 2.0):
    """Standard Gumbel to Frechet with tail index ``alpha``: exp(y / alpha)."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    return np.exp(np.asarray(y, dtype=float) / alpha)


def _angles(y1, y2, norm):
    if norm == "L2":
        r = np.hypot(y1, y2)
    else:
        r = y1 + y2
    with np.errstate(invalid="ignore", divide="ignore"):
        prod = np.where(r > 0, (y1 / r) * (y2 / r), 0.0)
    return r, prod


def edm_pair(y1, y2, cfg: EdmConfig = EdmConfig()) -> float:
    """Mean of w1 w2 over rows whose radius exceeds its ``threshold_prob``
    quantile, with w the angular components under ``cfg.norm``."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape or y1.ndim != 1:
        raise InputError("edm_pair needs two 1-d samples of equal length")
    if np.any(y1 < 0) or np.any(y2 < 0) or not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
        raise DomainError("edm_pair inputs must be finite and nonnegative")
    r, prod = _angles(y1, y2, cfg.norm)
    u = np.quantile(r, cfg.threshold_prob)
    exc = r > u
    if exc.sum() < MIN_EXCEEDANCES:
        raise InputError(f"only {int(exc.sum())} radial exceedances; need {MIN_EXCEEDANCES}")
    return float(prod[exc].mean())


def edm_matrix(data, cfg: EdmConfig = EdmConfig()) -> np.ndarray:
    """Symmetric matrix of pairwise EDMs; the diagonal holds ``cfg.edm_max``."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise InputError("edm_matrix needs at least two columns")
    d = data.shape[1]
    out = np.full((d, d), cfg.edm_max)
    for a in range(d):
        for b in range(a + 1, d):
            out[a, b] = out[b, a] = edm_pair(data[:, a], data[:, b], cfg)
    return out


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Disjoint blocks of 0-based column indices covering 0..d-1."""

    blocks: tuple
    k: Optional[int] = None
    height_cut: Optional[float] = None
    linkage: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(j) for j in b)) for b in self.blocks)
        if any(len(b) == 0 for b in blocks):
            raise InputError("blocks must be non-empty")
        flat = sorted(j for b in blocks for j in b)
        if flat != list(range(len(flat))):
            raise InputError("blocks must partition 0..d-1")
        object.__setattr__(self, "blocks", tuple(sorted(blocks)))

    @property
    def d(self) -> int:
        return sum(len(b) for b in self.blocks)

    def labels(self) -> np.ndarray:
        out = np.empty(self.d, dtype=int)
        for n, b in enumerate(self.blocks):
            out[list(b)] = n
        return out

    def merges(self) -> list:
        """Dendrogram as (left, right, height, size) rows, scipy numbering."""
        if self.linkage is None:
            return []
        return [{"left": int(a), "right": int(b), "height": float(h), "size": int(s)}
                for a, b, h, s in self.linkage]


def cluster_edm(matrix, k: Optional[int] = None, height: Optional[float] = None,
                norm: str = "L2") -> BlockPartition:
    """Average-linkage clustering on ``EDM_max - EDM``, cut into ``k`` blocks
    or at a merge height."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise InputError("EDM matrix must be square with d >= 2")
    if not np.allclose(m, m.T):
        raise InputError("EDM matrix must be symmetric")
    if (k is None) == (height is None):
        raise InputError("give exactly one of k or height")
    d = m.shape[0]
    if k is not None and not 1 <= k <= d:
        raise InputError(f"k must lie in 1..{d}")
    dis = np.clip(EDM_MAX[norm] - m, 0.0, None)
    np.fill_diagonal(dis, 0.0)
    Z = hierarchy.linkage(squareform(dis, checks=False), method="average")
    if k is not None:
        labels = hierarchy.fcluster(Z, k, criterion="maxclust")
    else:
        labels = hierarchy.fcluster(Z, height, criterion="distance")
    blocks = [np.flatnonzero(labels == lab) for lab in np.unique(labels)]
    return BlockPartition(tuple(blocks), k, height, Z)


# ---------------------------------------------------------------------------
# Weighted maxima and the sub-threshold model
# ---------------------------------------------------------------------------


def u_max(U, c=None) -> np.ndarray:
    """Row-wise max_i (1 - U_i) / c_i."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if np.any((U <= 0) | (U >= 1)):
        raise DomainError("uniform margins must lie strictly inside (0, 1)")
    c = np.ones(U.shape[1]) if c is None else np.asarray(c, dtype=float)
    if c.shape != (U.shape[1],):
        raise InputError("one weight per column is required")
    if np.any(c <= 0):
        raise DomainError("weights must be positive")
    return np.max((1.0 - U) / c, axis=1)


def to_uniform(y_gumbel, ranks: bool = False) -> np.ndarray:
    """Standard Gumbel margins to uniforms, exactly or by ranks/(n+1)."""
    y = np.asarray(y_gumbel, dtype=float)
    if ranks:
        order = np.argsort(np.argsort(y, axis=0, kind="stable"), axis=0, kind="stable")
        return (order + 1.0) / (y.shape[0] + 1.0)
    return np.clip(gumbel_cdf(y), 1e-300, 1 - 1e-16)


@dataclass(frozen=True)
class TailModelFit:
    k1: float
    eta: float
    phi_star: float
    p_phi_star_hat: float
    n_below: int
    boundary: bool = False
    loglik: float = float("nan")

    @property
    def k2(self) -> float:
        with np.errstate(over="ignore"):
            return float((1.0 - self.k1 * self.phi_star) * np.exp(-np.log(self.phi_star) / self.eta))

    # both written through (phi / phi_star)^(1/eta) so small eta cannot overflow k2
    def conditional_cdf(self, phi):
        r = np.asarray(phi, dtype=float) / self.phi_star
        return self.k1 * self.phi_star * r + (1.0 - self.k1 * self.phi_star) * r ** (1.0 / self.eta)

    def conditional_density(self, phi):
        r = np.asarray(phi, dtype=float) / self.phi_star
        rest = (1.0 - self.k1 * self.phi_star) / (self.eta * self.phi_star)
        return self.k1 + rest * r ** (1.0 / self.eta - 1.0)


def _tail_loglik(k1, eta, phi_star, logv):
    m = k1 * phi_star
    lr = logv - np.log(phi_star)
    with np.errstate(divide="ignore"):
        second = np.log1p(-m) - np.log(eta * phi_star) + (1.0 / eta - 1.0) * lr
    with np.errstate(divide="ignore"):
        first = np.log(k1) if k1 > 0 else -np.inf
    return float(np.logaddexp(first, second).sum())


# eta within this distance of 1 sits on the flat ridge where every k1 gives the
# uniform conditional law; the fit is reported in its pure-linear form
ETA_ONE_TOL = 1e-3
BOUNDARY_LR_CUT = 2.71  # 5% point of the 0.5 chi2_0 + 0.5 chi2_1 mixture


def fit_tail_model(umax, phi_star: float) -> TailModelFit:
    """MLE of (k1, eta) from the values of ``umax`` below ``phi_star``."""
    umax = np.asarray(umax, dtype=float)
    if not 0 < phi_star < 1:
        raise DomainError("phi_star must lie in (0, 1)")
    v = umax[umax < phi_star]
    if v.size < MIN_BELOW:
        raise FitError(f"only {v.size} values below phi_star; need {MIN_BELOW}")
    v = np.maximum(v, 1e-300)
    logv = np.log(v)
    kmax = 1.0 / phi_star

    def negll(theta):
        k1, eta = theta
        if not (0 <= k1 < kmax and 0 < eta <= 1):
            return np.inf
        return -_tail_loglik(k1, eta, phi_star, logv)

    # start from a moment-style eta (log-log slope of the empirical CDF)
    s = np.sort(v)
    ecdf = np.arange(1, s.size + 1) / s.size
    keep = ecdf < 0.5
    slope = np.polyfit(np.log(s[keep] / phi_star), np.log(ecdf[keep]), 1)[0] if keep.sum() > 5 else 1.5
    eta0 = float(np.clip(1.0 / max(slope, 1.0), 0.05, 0.95))
    best = None
    for k0 in (0.05 * kmax, 0.5 * kmax, 0.95 * kmax):
        res = numopt.minimize(negll, [k0, eta0], [numopt.bounded(0.0, kmax), numopt.bounded(0.0, 1.0)],
                              numopt.MinimizeSettings(restarts=1, polish=False))
        if best is None or res.objective_value < best.objective_value:
            best = res
    k1, eta = map(float, best.argmin)
    loglik = -float(best.objective_value)
    # eta = 1 is the uniform law for every k1; keep that nested boundary model
    # (reported as k1 = 1/phi_star) unless the free fit beats it by the 5%
    # boundary likelihood-ratio cut-off
    uniform = -v.size * np.log(phi_star)
    if eta > 1 - ETA_ONE_TOL or 2 * (loglik - uniform) < BOUNDARY_LR_CUT:
        k1, eta, loglik = kmax, 1.0, uniform
    boundary = eta == 1.0 or k1 < 1e-6 * kmax or k1 > (1 - 1e-6) * kmax
    fit = TailModelFit(k1, eta, float(phi_star), v.size / umax.size, int(v.size), boundary, loglik)
    _check_tail_fit(fit)
    return fit


def _check_tail_fit(fit: TailModelFit):
    if not abs(fit.conditional_cdf(fit.phi_star) - 1.0) < 1e-9:
        raise FitError("fitted conditional CDF does not reach 1 at phi_star")
    grid = np.linspace(fit.phi_star * 1e-6, fit.phi_star, 257)
    if np.any(fit.conditional_density(grid) < 0):
        raise FitError("fitted conditional density is negative")


def estimate_p(fit: TailModelFit, phi) -> np.ndarray:
    """p-hat(phi) = conditional CDF at phi times the empirical p-hat(phi_star)."""
    phi = np.asarray(phi, dtype=float)
    if np.any((phi <= 0) | (phi >= fit.phi_star)):
        raise DomainError("phi must lie in (0, phi_star)")
    out = np.clip(fit.conditional_cdf(phi), 0.0, 1.0) * fit.p_phi_star_hat
    return out if out.ndim else float(out)


def log_estimate_p(fit: TailModelFit, phi: float) -> float:
    """Natural log of estimate_p, computed without underflow."""
    if not 0 < phi < fit.phi_star:
        raise DomainError("phi must lie in (0, phi_star)")
    lr = np.log(phi / fit.phi_star)
    m = fit.k1 * fit.phi_star
    with np.errstate(divide="ignore"):
        a = np.log(m) + lr if m > 0 else -np.inf
        b = np.log1p(-m) + lr / fit.eta if m < 1 else -np.inf
    return float(np.logaddexp(a, b) + np.log(fit.p_phi_star_hat))


# ---------------------------------------------------------------------------
# Threshold stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityRow:
    phi_star: float
    log_p: float
    error: str = ""


@dataclass(frozen=True)
class StabilityScan:
    rows: tuple
    phi_target: float
    suggestion: Optional[float]
    tolerance: float

    def table(self) -> list:
        return [{"phi_star": r.phi_star, "log_p": r.log_p, "error": r.error} for r in self.rows]


def stability_scan(umax, phi_grid, phi_target: float, tolerance: float = 0.2) -> StabilityScan:
    """Refit at each phi_star in the grid and record log p-hat(phi_target).

    The suggestion is the smallest phi_star whose estimate lies within
    ``tolerance`` (natural log) of every successful larger grid point.
    """
    grid = np.sort(np.asarray(phi_grid, dtype=float))
    umax = np.asarray(umax, dtype=float)
    if grid.size == 0:
        raise InputError("empty grid")
    if np.any(grid <= phi_target) or np.any(grid >= umax.max()):
        raise InputError("grid must lie within (phi_target, max umax)")
    rows = []
    for ps in grid:
        try:
            rows.append(StabilityRow(float(ps), log_estimate_p(fit_tail_model(umax, ps), phi_target)))
        except (FitError, DomainError) as exc:
            rows.append(StabilityRow(float(ps), float("nan"), str(exc)))
    ok = [r for r in rows if not r.error]
    suggestion = None
    for n, r in enumerate(ok):
        later = np.array([q.log_p for q in ok[n:]])
        if np.all(np.abs(later - r.log_p) <= tolerance):
            suggestion = r.phi_star
            break
    return StabilityScan(tuple(rows), float(phi_target), suggestion, float(tolerance))


# ---------------------------------------------------------------------------
# Blocks, pipeline, bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockProduct:
    log_p: float

    @property
    def log10_p(self) -> float:
        return self.log_p / np.log(10.0)

    @property
    def p(self) -> float:
        return float(np.exp(self.log_p))


def block_product(partition: BlockPartition, estimates) -> BlockProduct:
    """Product of per-block probabilities, accumulated in log space.

    ``estimates`` are probabilities, or a ``("log", values)`` pair of natural
    logs when the probabilities themselves would underflow.
    """
    if isinstance(estimates, tuple) and len(estimates) == 2 and estimates[0] == "log":
        logs = np.asarray(estimates[1], dtype=float)
    else:
        p = np.asarray(estimates, dtype=float)
        if np.any(~(p > 0)):
            raise DomainError("every block estimate must be positive")
        logs = np.log(p)
    if logs.size != len(partition.blocks):
        raise InputError("one estimate per block is required")
    if not np.all(np.isfinite(logs)):
        raise DomainError("block log-estimates must be finite")
    return BlockProduct(float(logs.sum()))


@dataclass(frozen=True, eq=False)
class TailPipeline:
    partition: BlockPartition
    phi: float
    phi_star: float
    weights: Optional[np.ndarray] = None
    ranks: bool = False

    @property
    def weighted(self) -> bool:
        return self.weights is not None and not np.all(np.asarray(self.weights) == 1)

    def block_weights(self, b) -> np.ndarray:
        w = np.ones(self.partition.d) if self.weights is None else np.asarray(self.weights, float)
        return w[list(b)]


def pipeline_log_estimate(y_gumbel, cfg: TailPipeline) -> tuple:
    """(block product, per-block fits) for data on Gumbel margins."""
    U = to_uniform(y_gumbel, cfg.ranks)
    if U.shape[1] != cfg.partition.d:
        raise InputError("data width does not match the partition")
    fits, logs = [], []
    for b in cfg.partition.blocks:
        fit = fit_tail_model(u_max(U[:, list(b)], cfg.block_weights(b)), cfg.phi_star)
        fits.append(fit)
        logs.append(log_estimate_p(fit, cfg.phi))
    return block_product(cfg.partition, ("log", logs)), fits


@dataclass(frozen=True, eq=False)
class TailBootstrap:
    median_log: float
    lower_log: float
    upper_log: float
    estimates: np.ndarray = field(repr=False)
    failures: int
    level: float
    flagged: bool


def bootstrap_tailprob(y_gumbel, cfg: TailPipeline, B: int, rng, level: float = 0.95) -> TailBootstrap:
    """Row-resampling bootstrap of the block-product log-estimate with the
    partition held fixed; percentile interval in log space."""
    if B < 1:
        raise InputError("B must be positive")
    y = np.asarray(y_gumbel, dtype=float)
    n = y.shape[0]
    logs, failures = [], 0
    for lane in numopt.spawn(rng, B):
        idx = lane.integers(0, n, n)
        try:
            logs.append(pipeline_log_estimate(y[idx], cfg)[0].log_p)
        except (FitError, DomainError) as exc:
            failures += 1
            log.info("bootstrap replicate failed: %s", exc)
    if failures > 0.2 * B:
        raise FitError(f"{failures} of {B} bootstrap replicates failed")
    est = np.asarray(logs)
    a = (1 - level) / 2
    lo, med, hi = np.quantile(est, [a, 0.5, 1 - a])
    flagged = B < 50
    if flagged:
        log.warning("bootstrap with B=%d < 50 replicates; interval is unreliable", B)
    return TailBootstrap(float(med), float(lo), float(hi), est, failures, level, flagged)
