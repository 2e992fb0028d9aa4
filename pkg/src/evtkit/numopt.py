"""Shared numerical machinery.

Optimisation with box transforms, central finite differences, B-spline design
matrices and the random-generator contract used by every stochastic routine.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import BSpline

from .errors import DomainError, InputError

# ---------------------------------------------------------------------------
# Random generators
# ---------------------------------------------------------------------------


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator from an integer seed or SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """``n`` independent child streams, deterministic given the parent state."""
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [make_rng(int(s)) for s in seeds]


# ---------------------------------------------------------------------------
# Parameter transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamTransform:
    """Map between a constrained parameter and the real line.

    ``forward`` takes the constrained value to the unconstrained one and
    ``inverse`` goes back.
    """

    kind: str = "identity"
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "log", "logit", "atanh"):
            raise DomainError(f"unknown transform kind {self.kind!r}")
        if self.kind == "logit" and not self.lower < self.upper:
            raise DomainError("logit transform needs lower < upper")

    def forward(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "identity":
            return theta
        if self.kind == "log":
            return np.log(theta)
        if self.kind == "atanh":
            return np.arctanh(theta)
        p = (theta - self.lower) / (self.upper - self.lower)
        return np.log(p) - np.log1p(-p)

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return u
        if self.kind == "log":
            return np.exp(u)
        if self.kind == "atanh":
            return np.tanh(u)
        return self.lower + (self.upper - self.lower) * _expit(u)


IDENTITY = ParamTransform("identity")
POSITIVE = ParamTransform("log")
CORRELATION = ParamTransform("atanh")


def bounded(lower: float, upper: float) -> ParamTransform:
    return ParamTransform("logit", lower, upper)


def _expit(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


# ---------------------------------------------------------------------------
# Minimisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinimizeSettings:
    max_iter: int = 5000
    xatol: float = 1e-8
    fatol: float = 1e-10
    initial_step: float = 0.25
    restarts: int = 2
    polish: bool = True
    fd_step: float = 1e-6


@dataclass(frozen=True)
class OptimResult:
    argmin: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    message: str = ""


def fd_gradient(objective: Callable[[np.ndarray], float], point, step: float = 1e-6):
    """Central-difference gradient with per-coordinate step ``step*max(1,|x|)``."""
    x = np.asarray(point, dtype=float).copy()
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xi = x[i]
        x[i] = xi + h
        fp = objective(x)
        x[i] = xi - h
        fm = objective(x)
        x[i] = xi
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"objective not finite near coordinate {i} (x[{i}]={xi!r})")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def minimize(objective: Callable[[np.ndarray], float], start: Sequence[float],
             transforms: Optional[Sequence[ParamTransform]] = None,
             settings: MinimizeSettings = MinimizeSettings(),
             gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> OptimResult:
    """Minimise ``objective`` over a box-transformed parameter vector.

    Nelder--Mead (with restarts from the incumbent) runs in the unconstrained
    coordinates, then an optional L-BFGS polish uses either ``gradient`` (in
    constrained coordinates) or central finite differences.  The returned
    point is never worse than ``start``.  ``converged`` reports the simplex
    stage, or a successful polish when an analytic gradient was supplied.
    """
    start = np.asarray(start, dtype=float)
    if transforms is None:
        transforms = [IDENTITY] * start.size
    if len(transforms) != start.size:
        raise InputError("one transform per parameter is required")

    def to_theta(u):
        return np.array([t.inverse(ui) for t, ui in zip(transforms, u)])

    def f_free(u):
        try:
            v = float(objective(to_theta(u)))
        except (FloatingPointError, DomainError, OverflowError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    u0 = np.array([t.forward(s) for t, s in zip(transforms, start)])
    f0 = f_free(u0)
    if not np.all(np.isfinite(u0)) or not np.isfinite(f0):
        raise InputError("objective is not finite at the start point")

    best_u, best_f = u0, f0
    iterations = 0
    converged = False
    k = u0.size
    for _ in range(settings.restarts + 1):
        simplex = np.vstack([best_u] + [best_u + settings.initial_step * e for e in np.eye(k)])
        res = optimize.minimize(
            f_free, best_u, method="Nelder-Mead",
            options=dict(maxiter=settings.max_iter, maxfev=settings.max_iter * 2,
                         xatol=settings.xatol, fatol=settings.fatol,
                         initial_simplex=simplex, adaptive=k > 4))
        iterations += int(res.nit)
        improved = best_f - res.fun
        if res.fun <= best_f:
            best_u, best_f = np.asarray(res.x, dtype=float), float(res.fun)
        converged = bool(res.success)
        if converged and improved < 10 * settings.fatol:
            break

    if settings.polish:
        if gradient is not None:
            def g_free(u):
                theta = to_theta(u)
                dtheta = np.array([_dinverse(t, ui) for t, ui in zip(transforms, u)])
                return np.asarray(gradient(theta), dtype=float) * dtheta
        else:
            def g_free(u):
                try:
                    return fd_gradient(f_free, u, settings.fd_step)
                except DomainError:
                    return np.full(u.size, np.nan)
        with np.errstate(all="ignore"):
            try:
                res = optimize.minimize(f_free, best_u, jac=g_free, method="L-BFGS-B",
                                        options=dict(maxiter=500))
                iterations += int(res.nit)
                if np.isfinite(res.fun) and res.fun <= best_f:
                    best_u, best_f = np.asarray(res.x, dtype=float), float(res.fun)
                    # a gradient-based stop at an analytic gradient is convergence
                    converged = converged or (gradient is not None and bool(res.success))
            except (ValueError, FloatingPointError):
                pass

    return OptimResult(argmin=to_theta(best_u), objective_value=best_f,
                       converged=converged, iterations=iterations,
                       message="ok" if converged else "iteration cap reached")


def _dinverse(t: ParamTransform, u: float) -> float:
    if t.kind == "identity":
        return 1.0
    if t.kind == "log":
        return float(np.exp(u))
    if t.kind == "atanh":
        return float(1.0 - np.tanh(u) ** 2)
    s = float(_expit(u))
    return (t.upper - t.lower) * s * (1.0 - s)


# ---------------------------------------------------------------------------
# B-spline bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplineBasis:
    interior_knots: tuple
    boundary_knots: tuple
    degree: int = 3

    def __post_init__(self):
        lo, hi = self.boundary_knots
        inner = tuple(float(k) for k in self.interior_knots)
        if not lo < hi:
            raise DomainError("boundary knots must satisfy lower < upper")
        if any(not (lo < k < hi) for k in inner) or list(inner) != sorted(inner):
            raise DomainError("interior knots must be sorted and strictly inside the boundary")
        object.__setattr__(self, "interior_knots", inner)
        object.__setattr__(self, "boundary_knots", (float(lo), float(hi)))

    @classmethod
    def from_data(cls, x, n_interior: int = 8, degree: int = 3) -> "SplineBasis":
        """Interior knots at equally spaced quantiles of the observed ``x``."""
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        if x.size < 2 or x.min() == x.max():
            raise InputError("need at least two distinct covariate values for a spline basis")
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        knots = np.unique(np.quantile(x, probs))
        knots = knots[(knots > x.min()) & (knots < x.max())]
        return cls(tuple(knots), (float(x.min()), float(x.max())), degree)

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary_knots
        k = self.degree
        return np.concatenate([[lo] * (k + 1), self.interior_knots, [hi] * (k + 1)])

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    def evaluate(self, x) -> np.ndarray:
        """Uncentred basis rows for in-range, non-missing ``x``."""
        x = np.asarray(x, dtype=float)
        return BSpline.design_matrix(x, self.knot_vector, self.degree).toarray()


@dataclass(frozen=True)
class SplineDesign:
    matrix: np.ndarray = field(repr=False)
    column_means: np.ndarray = field(repr=False)
    n_clamped: int = 0

    @property
    def clamped(self) -> bool:
        return self.n_clamped > 0


def spline_design(x, basis: SplineBasis, column_means=None) -> SplineDesign:
    """Centred B-spline design block; missing ``x`` gives an all-zero row.

    Columns are centred over the non-missing rows unless ``column_means`` from
    a training design is supplied (prediction on new rows).  Values outside the
    boundary knots are clamped and counted in ``n_clamped``.
    """
    x = np.asarray(x, dtype=float).ravel()
    ok = np.isfinite(x)
    lo, hi = basis.boundary_knots
    xc = np.clip(x[ok], lo, hi)
    n_clamped = int(np.sum((x[ok] < lo) | (x[ok] > hi)))
    raw = basis.evaluate(xc)
    if column_means is None:
        column_means = raw.mean(axis=0) if raw.shape[0] else np.zeros(basis.n_basis)
    column_means = np.asarray(column_means, dtype=float)
    out = np.zeros((x.size, basis.n_basis))
    out[ok] = raw - column_means
    return SplineDesign(out, column_means, n_clamped)
