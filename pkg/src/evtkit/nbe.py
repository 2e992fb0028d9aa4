"""Neural Bayes estimation of one extreme unconditional quantile.

A DeepSets network maps a set of replicates to a quantile estimate.  It is
trained by Adam on simulated (replicates, quantile) pairs to minimise an
asymmetric loss that punishes underestimation nine times harder than
overestimation.  Forward and backward passes are written out by hand in numpy.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import numopt
from .dataset import Dataset
from .distributions import (EmpiricalDistribution, empirical_quantile,
                            empirical_sample)
from .errors import DomainError, FitError, InputError

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"EVTNBE01"
PAIRS_MAGIC = b"EVTPAIR1"

# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def asymmetric_loss(theta, theta_hat):
    """Zero within 1% of theta; slope 0.9 below the band and 0.1 above it."""
    theta = np.asarray(theta, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if np.any(theta <= 0):
        raise DomainError("asymmetric loss needs theta > 0")
    lo, hi = 0.99 * theta, 1.01 * theta
    out = np.where(theta_hat < lo, 0.9 * (lo - theta_hat),
                   np.where(theta_hat > hi, 0.1 * (theta_hat - hi), 0.0))
    return float(out) if out.ndim == 0 else out


def _loss_slope(theta, theta_hat):
    return np.where(theta_hat < 0.99 * theta, -0.9, np.where(theta_hat > 1.01 * theta, 0.1, 0.0))


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

PARAM_NAMES = ("psi1_w", "psi1_b", "psi2_w", "psi2_b", "phi1_w", "phi1_b", "phi2_w", "phi2_b")


@dataclass(frozen=True, eq=False)
class DeepSetsNetwork:
    """psi: 1 -> width -> width (ReLU), mean over replicates, phi: width -> width
    (ReLU) -> 1 (identity).

    With ``shared_input_bias`` the first layer has one bias shared by all
    units, so a width-48 network has 4802 trainable parameters.
    """

    params: tuple = field(repr=False)
    input_mean: float = 0.0
    input_sd: float = 1.0
    trained: bool = False

    @property
    def width(self) -> int:
        return int(self.params[0].shape[0])

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params))

    def with_params(self, params) -> "DeepSetsNetwork":
        return replace(self, params=tuple(np.array(p, dtype=float) for p in params))


def init_network(rng, width: int = 48, shared_input_bias: bool = True) -> DeepSetsNetwork:
    """Glorot-uniform weights, zero biases."""
    def glorot(fan_in, fan_out, shape):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, shape)

    params = (
        glorot(1, width, (width,)), np.zeros(1 if shared_input_bias else width),
        glorot(width, width, (width, width)), np.zeros(width),
        glorot(width, width, (width, width)), np.zeros(width),
        glorot(width, 1, (width,)), np.zeros(1),
    )
    return DeepSetsNetwork(params)


def zero_network(width: int = 48) -> DeepSetsNetwork:
    net = init_network(numopt.make_rng(0), width)
    return net.with_params([np.zeros_like(p) for p in net.params])


def _prepare(net: DeepSetsNetwork, Y) -> np.ndarray:
    """Sorted, standardised replicates as a (batch, m) array.

    Sorting fixes the summation order of the mean, which makes the output
    bit-identical under any permutation of the replicates.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape[-1] == 0:
        raise InputError("forward needs at least one replicate")
    if not np.all(np.isfinite(Y)):
        raise InputError("replicates must be finite")
    return (np.sort(Y, axis=1) - net.input_mean) / net.input_sd


def _forward_std(params, X, keep=False):
    w1, b1, w2, b2, w3, b3, w4, b4 = params
    pre1 = np.multiply.outer(X, w1)
    pre1 += b1
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ w2
    pre2 += b2
    h2 = np.maximum(pre2, 0.0)
    t = h2.mean(axis=1)
    pre3 = t @ w3 + b3
    g = np.maximum(pre3, 0.0)
    out = g @ w4 + b4[0]
    if keep:
        return out, (X, pre1, h1, pre2, t, pre3, g)
    return out


def forward(net: DeepSetsNetwork, Y) -> np.ndarray | float:
    """Estimate for one set (1-d input) or a batch of equal-size sets (2-d)."""
    single = np.ndim(Y) == 1
    out = _forward_std(net.params, _prepare(net, Y))
    return float(out[0]) if single else out


def _backward(params, cache, dout):
    w1, b1, w2, b2, w3, b3, w4, b4 = params
    X, pre1, h1, pre2, t, pre3, g = cache
    m = X.shape[1]
    d_w4 = g.T @ dout
    d_b4 = np.array([dout.sum()])
    dpre3 = np.outer(dout, w4) * (pre3 > 0)
    d_w3 = t.T @ dpre3
    d_b3 = dpre3.sum(axis=0)
    dt = dpre3 @ w3.T
    width = w2.shape[0]
    dpre2 = np.multiply(pre2 > 0, (dt / m)[:, None, :])
    d_w2 = h1.reshape(-1, width).T @ dpre2.reshape(-1, width)
    d_b2 = dpre2.sum(axis=(0, 1))
    dpre1 = dpre2 @ w2.T
    dpre1 *= pre1 > 0
    d_w1 = X.reshape(-1) @ dpre1.reshape(-1, width)
    d_b1 = dpre1.sum(axis=(0, 1))
    if b1.size == 1:
        d_b1 = np.array([d_b1.sum()])
    return (d_w1, d_b1, d_w2, d_b2, d_w3, d_b3, d_w4, d_b4)


def risk_and_gradient(net: DeepSetsNetwork, Y, theta):
    """Mean asymmetric loss over a batch and its gradient in every parameter."""
    theta = np.asarray(theta, dtype=float)
    out, cache = _forward_std(net.params, _prepare(net, Y), keep=True)
    risk = float(np.mean(asymmetric_loss(theta, out)))
    dout = _loss_slope(theta, out) / theta.size
    return risk, _backward(net.params, cache, dout)


def flatten(params) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in params])


def unflatten(vec, like) -> tuple:
    out, i = [], 0
    for p in like:
        out.append(np.asarray(vec[i:i + p.size], dtype=float).reshape(p.shape))
        i += p.size
    return tuple(out)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def save_network(net: DeepSetsNetwork, path) -> None:
    """Header: magic, version, trained flag, array count, then per array its
    rank and dims (uint32).  Body: float64 arrays in row-major order, then
    the input mean and sd.  Everything little-endian."""
    with Path(path).open("wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", 1, int(net.trained), len(net.params)))
        for p in net.params:
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        fh.write(struct.pack("<dd", net.input_mean, net.input_sd))


def load_network(path) -> DeepSetsNetwork:
    try:
        return _parse_network(Path(path).read_bytes(), path)
    except (struct.error, ValueError) as exc:
        raise InputError(f"{path}: truncated or corrupt weights file ({exc})") from None


def _parse_network(raw: bytes, path) -> DeepSetsNetwork:
    if raw[:8] != WEIGHTS_MAGIC:
        raise InputError(f"{path}: not a network weights file")
    pos = 8
    version, trained, count = struct.unpack_from("<III", raw, pos)
    pos += 12
    if version != 1:
        raise InputError(f"{path}: unsupported weights version {version}")
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shapes.append(struct.unpack_from(f"<{ndim}I", raw, pos))
        pos += 4 * ndim
    params = []
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(np.frombuffer(raw, "<f8", size, pos).reshape(shape).astype(float))
        pos += 8 * size
    mean, sd = struct.unpack_from("<dd", raw, pos)
    if pos + 16 != len(raw):
        raise InputError(f"{path}: trailing or truncated data")
    return DeepSetsNetwork(tuple(params), mean, sd, bool(trained))


# ---------------------------------------------------------------------------
# Prior and training data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PriorPool:
    """Parameter triples (u, sigma, xi), one per covariate row."""

    u: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float).ravel() for a in (self.u, self.sigma, self.xi)]
        if len({a.size for a in arrs}) != 1:
            raise InputError("prior triples must have equal lengths")
        if arrs[0].size == 0:
            raise InputError("prior pool is empty")
        if np.any(arrs[1] <= 0):
            raise DomainError("prior scales must be positive")
        for name, a in zip(("u", "sigma", "xi"), arrs):
            object.__setattr__(self, name, a)

    @property
    def size(self) -> int:
        return int(self.u.size)

    @property
    def triples(self) -> np.ndarray:
        return np.column_stack([self.u, self.sigma, self.xi])


def permute_prior(pool: PriorPool, rng) -> PriorPool:
    """Permute each coordinate independently across the triples."""
    return PriorPool(rng.permutation(pool.u), rng.permutation(pool.sigma),
                     rng.permutation(pool.xi))


@dataclass(frozen=True)
class TrainingConfig:
    K: int = 5000
    J: int = 1
    m: int = 2000
    M: int = 1_000_000
    batch_size: int = 32
    patience: int = 10
    learning_rate: float = 1e-3
    q: float = 0.999
    lam: float = 0.6
    max_epochs: int = 200
    validation_fraction: float = 0.2
    permute: bool = True
    compute_dtype: str = "float32"

    def __post_init__(self):
        if self.J < 1 or self.m < 1 or self.K < 1:
            raise InputError("K, J and m must be at least 1")
        if not 0 < self.q < 1:
            raise DomainError("q must lie in (0, 1)")
        if not 0 <= self.lam <= 1:
            raise DomainError("lam must lie in [0, 1]")
        if self.M <= self.m:
            raise InputError("M must exceed m")
        if self.compute_dtype not in ("float32", "float64"):
            raise InputError("compute_dtype must be float32 or float64")

    @property
    def n_validation(self) -> int:
        return max(1, int(round(self.K * self.validation_fraction)))


@dataclass(frozen=True, eq=False)
class TrainingPair:
    replicates: np.ndarray
    theta: float


def _mixture_draws(pool: PriorPool, lam: float, body: EmpiricalDistribution, M: int, rng):
    """M iid mixture draws, body draws first and tail draws after them."""
    n_tail = int(rng.binomial(M, 1.0 - lam))
    y = np.empty(M)
    if M > n_tail:
        y[:M - n_tail] = empirical_sample(body, M - n_tail, rng)
    j = rng.integers(0, pool.size, n_tail)
    xi = pool.xi[j]
    small = np.abs(xi) < 1e-9
    xs = np.where(small, 1.0, xi)
    z = rng.standard_exponential(n_tail)
    exc = np.where(small, z, np.expm1(xs * z) / xs) * pool.sigma[j]
    y[M - n_tail:] = pool.u[j] + exc
    return y


def _type1(y, q):
    """Type-1 sample quantile by partial sort; same value as a full sort."""
    k = min(max(int(np.ceil(y.size * q)) - 1, 0), y.size - 1)
    return float(np.partition(y, k)[k])


def simulate_training_pair(pool: PriorPool, cfg: TrainingConfig, body: EmpiricalDistribution,
                           M: Optional[int], rng) -> TrainingPair:
    """Draw M values from the pool's mixture, take their q-quantile as theta,
    and keep m of them as the replicates.

    The draws are stored body-first, so the replicates are a uniform
    subsample without replacement.
    """
    M = cfg.M if M is None else int(M)
    if M <= cfg.m:
        raise InputError("M must exceed m")
    if M * (1 - cfg.q) < 100:
        warnings.warn(f"only {M * (1 - cfg.q):.0f} draws above the q-quantile; "
                      "theta will be noisy", RuntimeWarning, stacklevel=2)
    y = _mixture_draws(pool, cfg.lam, body, M, rng)
    reps = y[rng.choice(M, cfg.m, replace=False)]
    return TrainingPair(np.sort(reps), _type1(y, cfg.q))


def mixture_cdf(y, pool: PriorPool, lam: float, body: EmpiricalDistribution):
    """Exact CDF of one draw from the pool's mixture."""
    fb = np.searchsorted(body.sorted_values, y, side="right") / body.n
    r = y - pool.u
    s = np.maximum(r, 0.0) / pool.sigma
    xi = pool.xi
    small = np.abs(xi) < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        base = np.maximum(1 + xi * s, 0.0)
        hbar = np.where(small, np.exp(-s), base ** (-1 / np.where(small, 1.0, xi)))
    h = np.where(r <= 0, 0.0, 1 - hbar)
    return lam * fb + (1 - lam) * float(np.mean(h))


def mixture_quantile(q: float, pool: PriorPool, lam: float, body: EmpiricalDistribution) -> float:
    """q-quantile of the mixture by bracketing and bisection."""
    from scipy.optimize import brentq
    if lam >= q:
        # mass below the GPD part already reaches q
        return float(empirical_quantile(body, q / lam if lam > 0 else 0.0))
    lo = float(min(pool.u.min(), body.sorted_values[0]))
    hi = float(pool.u.max()) + 1.0
    while mixture_cdf(hi, pool, lam, body) < q:
        hi = hi + 2 * (hi - lo)
    return brentq(lambda v: mixture_cdf(v, pool, lam, body) - q, lo, hi, xtol=1e-12, rtol=1e-12)


def make_training_data(prior: Sequence[PriorPool], cfg: TrainingConfig,
                       body: EmpiricalDistribution, n: int, rng):
    """(replicates of shape (n, m), theta of shape (n,)); one stream per pair."""
    prior = [prior] if isinstance(prior, PriorPool) else list(prior)
    if not prior:
        raise InputError("prior has no pools")
    Y = np.empty((n * cfg.J, cfg.m))
    theta = np.empty(n * cfg.J)
    row = 0
    for lane in numopt.spawn(rng, n):
        pool = prior[int(lane.integers(0, len(prior)))]
        if cfg.permute:
            pool = permute_prior(pool, lane)
        # J replicate sets share one theta
        y = _mixture_draws(pool, cfg.lam, body, cfg.M, lane)
        subs = [y[lane.choice(cfg.M, cfg.m, replace=False)] for _ in range(cfg.J)]
        th = _type1(y, cfg.q)
        for sub in subs:
            Y[row] = np.sort(sub)
            theta[row] = th
            row += 1
    return Y, theta


def save_pairs(path, Y, theta) -> None:
    """Magic then records of (m as uint64, m float64 replicates, float64 theta)."""
    with Path(path).open("wb") as fh:
        fh.write(PAIRS_MAGIC)
        for y, th in zip(Y, theta):
            fh.write(struct.pack("<Q", y.size))
            fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", th))


def load_pairs(path):
    try:
        return _parse_pairs(Path(path).read_bytes(), path)
    except (struct.error, ValueError) as exc:
        raise InputError(f"{path}: truncated or corrupt pair cache ({exc})") from None


def _parse_pairs(raw: bytes, path):
    if raw[:8] != PAIRS_MAGIC:
        raise InputError(f"{path}: not a training-pair cache")
    pos, rows, thetas = 8, [], []
    while pos < len(raw):
        (m,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        rows.append(np.frombuffer(raw, "<f8", m, pos).astype(float))
        pos += 8 * m
        thetas.append(struct.unpack_from("<d", raw, pos)[0])
        pos += 8
    if len({r.size for r in rows}) > 1:
        raise InputError(f"{path}: records have differing m")
    return np.vstack(rows), np.array(thetas)


def build_prior(data: Dataset, formula, lam: float, n_boot: int, rng):
    """Pools from bootstrap refits of the marginal model, and the body law.

    Each refit is evaluated at every row of ``data``; the body law is the
    empirical distribution of responses at or below their fitted threshold.
    """
    from . import marginal
    fit = marginal.fit_marginal(data, formula, lam)
    y = data.column(formula.response)
    ok = np.isfinite(y)
    body = EmpiricalDistribution(y[ok][y[ok] <= fit.u(data)[ok]])
    pools = []
    for lane in numopt.spawn(rng, n_boot):
        idx = lane.integers(0, data.n_rows, data.n_rows)
        try:
            f = marginal.fit_marginal(data.take(idx), formula, lam)
        except (FitError, InputError, DomainError, np.linalg.LinAlgError) as exc:
            log.info("prior refit failed: %s", exc)
            continue
        pools.append(PriorPool(f.u(data), f.sigma(data), f.xi(data)))
    if not pools:
        raise FitError("every prior refit failed")
    return pools, body


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainResult:
    network: DeepSetsNetwork
    train_risk: tuple
    val_risk: tuple
    best_epoch: int
    stopped_early: bool


def _risk(net, X, theta, dtype, chunk=256):
    """Mean loss on pre-standardised sets, in ``dtype`` arithmetic."""
    P = tuple(p.astype(dtype) for p in net.params)
    out = np.concatenate([_forward_std(P, X[i:i + chunk]) for i in range(0, len(X), chunk)])
    return float(np.mean(asymmetric_loss(theta, out.astype(float))))


def fit_network(net: DeepSetsNetwork, cfg: TrainingConfig, train_data, val_data, rng
                ) -> TrainResult:
    """Adam on mini-batches, early stopping on validation risk.

    Forward and backward passes run in ``cfg.compute_dtype``; weights and
    Adam moments stay in float64.  Index 0 of both risk traces is the
    network before any update.  The returned network carries the
    best-validation weights.
    """
    Y, theta = (np.asarray(a, dtype=float) for a in train_data)
    Yv, thv = (np.asarray(a, dtype=float) for a in val_data)
    mean, sd = float(Y.mean()), float(Y.std())
    if not sd > 0:
        raise InputError("training replicates are constant")
    params = list(net.params)
    if not net.trained:
        params[-1] = np.array([float(theta.mean())])
    net = replace(net, params=tuple(params), input_mean=mean, input_sd=sd, trained=True)
    dtype = np.dtype(cfg.compute_dtype)
    X = _prepare(net, Y).astype(dtype)
    Xv = _prepare(net, Yv).astype(dtype)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m1 = [np.zeros_like(p) for p in net.params]
    m2 = [np.zeros_like(p) for p in net.params]
    step = 0
    train_trace = [_risk(net, X, theta, dtype)]
    val_trace = [_risk(net, Xv, thv, dtype)]
    best, best_epoch, since = net, 0, 0
    n = len(X)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            P = tuple(p.astype(dtype) for p in net.params)
            out, cache = _forward_std(P, X[rows], keep=True)
            out = out.astype(float)
            risk = float(np.mean(asymmetric_loss(theta[rows], out)))
            if not np.isfinite(risk):
                raise FitError(f"non-finite loss at epoch {epoch}, batch {b}")
            dout = (_loss_slope(theta[rows], out) / rows.size).astype(dtype)
            grads = _backward(P, cache, dout)
            total += risk * rows.size
            step += 1
            new = []
            for i, (p, g) in enumerate(zip(net.params, grads)):
                g = g.astype(float)
                m1[i] = beta1 * m1[i] + (1 - beta1) * g
                m2[i] = beta2 * m2[i] + (1 - beta2) * g * g
                mh = m1[i] / (1 - beta1 ** step)
                vh = m2[i] / (1 - beta2 ** step)
                new.append(p - cfg.learning_rate * mh / (np.sqrt(vh) + eps))
            net = replace(net, params=tuple(new))
        train_trace.append(total / n)
        val_trace.append(_risk(net, Xv, thv, dtype))
        log.info("epoch %d train %.5g val %.5g", epoch, train_trace[-1], val_trace[-1])
        if val_trace[-1] < val_trace[best_epoch]:
            best, best_epoch, since = net, epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                return TrainResult(best, tuple(train_trace), tuple(val_trace), best_epoch, True)
    return TrainResult(best, tuple(train_trace), tuple(val_trace), best_epoch, False)


def train(net: DeepSetsNetwork, cfg: TrainingConfig, prior, body: EmpiricalDistribution,
          rng) -> TrainResult:
    """Simulate K training and K/5 validation pairs, then fit."""
    gen_train, gen_val, gen_fit = numopt.spawn(rng, 3)
    train_data = make_training_data(prior, cfg, body, cfg.K, gen_train)
    val_data = make_training_data(prior, cfg, body, cfg.n_validation, gen_val)
    return fit_network(net, cfg, train_data, val_data, gen_fit)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BootstrapEstimate:
    point: float
    lower: float
    upper: float
    estimates: np.ndarray = field(repr=False)
    level: float = 0.95


def estimate(net: DeepSetsNetwork, data) -> float:
    if not net.trained:
        raise FitError("network has not been trained")
    return forward(net, np.asarray(data, dtype=float).ravel())


def bootstrap_estimate(net: DeepSetsNetwork, data, B: int, rng, level: float = 0.95
                       ) -> BootstrapEstimate:
    """Resample the data with replacement and re-apply the network only."""
    if B < 1:
        raise InputError("B must be positive")
    if not 0 <= level < 1:
        raise DomainError("level must lie in [0, 1)")
    y = np.asarray(data, dtype=float).ravel()
    point = estimate(net, y)
    ests = np.array([forward(net, y[lane.integers(0, y.size, y.size)])
                     for lane in numopt.spawn(rng, B)])
    lo, hi = np.quantile(ests, [(1 - level) / 2, (1 + level) / 2])
    return BootstrapEstimate(point, float(lo), float(hi), ests, level)
