import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evtkit import numopt as N
from evtkit.distributions import GpdParams, gpd_logpdf, gpd_sample
from evtkit.errors import DomainError, InputError


def rosenbrock(x):
    return 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2


def test_minimize_quadratic():
    r = N.minimize(lambda x: (x[0] - 3) ** 2, [0.0])
    assert r.argmin[0] == pytest.approx(3, abs=1e-5)
    assert r.converged


def test_minimize_rosenbrock():
    r = N.minimize(rosenbrock, [-1.2, 1.0])
    assert np.allclose(r.argmin, [1, 1], atol=1e-3)
    assert r.objective_value <= rosenbrock([-1.2, 1.0])


def test_minimize_gpd_mle_with_log_transform():
    y = gpd_sample(GpdParams(2.0, 0.2), 10_000, N.make_rng(11))
    nll = lambda t: -np.sum(gpd_logpdf(y, GpdParams(t[0], t[1])))
    r = N.minimize(nll, [1.0, 0.0], [N.POSITIVE, N.IDENTITY])
    assert r.argmin[0] == pytest.approx(2.0, rel=0.05)


def test_minimize_rejects_nonfinite_start():
    with pytest.raises(InputError):
        N.minimize(lambda x: np.inf, [0.0])


def test_minimize_iteration_cap_flags_nonconvergence():
    r = N.minimize(rosenbrock, [-1.2, 1.0],
                   settings=N.MinimizeSettings(max_iter=5, restarts=0, polish=False))
    assert not r.converged
    assert r.objective_value <= rosenbrock([-1.2, 1.0])


def test_minimize_deterministic():
    a = N.minimize(rosenbrock, [-1.2, 1.0])
    b = N.minimize(rosenbrock, [-1.2, 1.0])
    assert np.array_equal(a.argmin, b.argmin)
    assert a.objective_value == b.objective_value


def test_minimize_uses_analytic_gradient_in_polish():
    f = lambda x: (x[0] - 2) ** 2 + 3 * (x[1] + 1) ** 2
    g = lambda x: np.array([2 * (x[0] - 2), 6 * (x[1] + 1)])
    r = N.minimize(f, [0.5, 0.5], [N.POSITIVE, N.IDENTITY], gradient=g)
    assert np.allclose(r.argmin, [2, -1], atol=1e-6)


@pytest.mark.parametrize("t", [N.IDENTITY, N.POSITIVE, N.CORRELATION, N.bounded(-0.5, 1.0)])
def test_transform_round_trip(t):
    if t.kind == "identity":
        pts = np.linspace(-50, 50, 100)
    elif t.kind == "log":
        pts = np.geomspace(1e-4, 1e4, 100)
    elif t.kind == "atanh":
        pts = np.linspace(-0.99, 0.99, 100)
    else:
        pts = np.linspace(-0.49, 0.99, 100)
    assert np.max(np.abs(t.inverse(t.forward(pts)) - pts)) < 1e-10


@given(st.floats(-20, 20))
def test_bounded_inverse_stays_in_box(u):
    t = N.bounded(-0.5, 1.0)
    v = t.inverse(u)
    assert -0.5 <= v <= 1.0


def test_fd_gradient_examples():
    assert N.fd_gradient(lambda x: x[0] ** 2, [2.0])[0] == pytest.approx(4, abs=1e-6)
    assert np.array_equal(N.fd_gradient(lambda x: 7.0, [1.0, 2.0]), [0.0, 0.0])
    assert np.allclose(N.fd_gradient(lambda x: x[0] * x[1], [2.0, 3.0]), [3, 2], atol=1e-6)


def test_fd_gradient_names_bad_coordinate():
    # finite at the point itself, but the backward step on x[1] leaves the domain
    f = lambda x: np.sqrt(x[1]) + x[0] if x[1] >= 0 else np.nan
    with pytest.raises(DomainError, match="coordinate 1"):
        N.fd_gradient(f, [1.0, 0.0])


def test_spline_partition_of_unity_and_centring():
    rng = N.make_rng(0)
    x = rng.normal(size=500)
    basis = N.SplineBasis.from_data(x)
    assert basis.n_basis == 12
    assert np.allclose(basis.evaluate(np.sort(x)).sum(axis=1), 1.0, atol=1e-12)
    assert np.all(basis.evaluate(x) >= 0)
    d = N.spline_design(x, basis)
    assert np.max(np.abs(d.matrix.mean(axis=0))) < 1e-12
    assert not d.clamped


def test_spline_missing_rows_are_zero():
    rng = N.make_rng(1)
    x = rng.uniform(size=100)
    x[[3, 17]] = np.nan
    basis = N.SplineBasis.from_data(x)
    d = N.spline_design(x, basis)
    assert np.all(d.matrix[[3, 17]] == 0)
    ok = np.isfinite(x)
    assert np.max(np.abs(d.matrix[ok].mean(axis=0))) < 1e-12


def test_spline_clamps_out_of_range():
    basis = N.SplineBasis.from_data(np.linspace(0, 1, 50))
    d = N.spline_design(np.array([-1.0, 0.5, 2.0]), basis, column_means=np.zeros(basis.n_basis))
    assert d.n_clamped == 2
    assert np.allclose(d.matrix.sum(axis=1), 1.0)


def test_spawn_is_deterministic_and_independent():
    a = [g.random() for g in N.spawn(N.make_rng(5), 3)]
    b = [g.random() for g in N.spawn(N.make_rng(5), 3)]
    assert a == b
    assert len(set(a)) == 3
