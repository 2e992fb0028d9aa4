import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evtkit import tailprob as tp
from evtkit.errors import DomainError, FitError, InputError
from evtkit.numopt import make_rng
from evtkit.synthetic import MixtureBlocks


# --- EDM -------------------------------------------------------------------------

def test_edm_comonotone_and_axis_mass():
    y = make_rng(1).pareto(2.0, 5000) + 1
    assert tp.edm_pair(y, y) == 0.5
    assert tp.edm_pair(y, y, tp.EdmConfig(norm="L1")) == 0.25
    a = np.where(np.arange(5000) % 2 == 0, y, 0.0)
    b = np.where(np.arange(5000) % 2 == 1, y, 0.0)
    assert tp.edm_pair(a, b) == 0.0


def test_edm_independent_frechet_is_small():
    rng = make_rng(2)
    # unit Frechet
    y = tp.gumbel_to_frechet(rng.gumbel(size=(100_000, 2)), 1.0)
    assert tp.edm_pair(y[:, 0], y[:, 1]) < 0.05


def test_edm_errors_and_config():
    with pytest.raises(InputError):
        tp.edm_pair(np.ones(100), np.ones(100))  # no row is strictly above the 0.99 quantile
    with pytest.raises(DomainError):
        tp.edm_pair(-np.ones(3000), np.ones(3000))
    with pytest.raises(DomainError):
        tp.EdmConfig(threshold_prob=0.4)
    with pytest.raises(InputError):
        tp.EdmConfig(norm="Linf")


@given(st.floats(0.01, 100), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_edm_symmetric_and_scale_invariant(scale, seed):
    y = tp.gumbel_to_frechet(make_rng(seed).gumbel(size=(3000, 2)))
    e = tp.edm_pair(y[:, 0], y[:, 1])
    assert tp.edm_pair(y[:, 1], y[:, 0]) == pytest.approx(e, abs=1e-15)
    assert tp.edm_pair(scale * y[:, 0], scale * y[:, 1]) == pytest.approx(e, abs=1e-12)
    assert 0 <= e <= 0.5


def test_edm_matrix_blocks_and_equivariance():
    mb = MixtureBlocks(sizes=(5, 5), a=(0.9, 0.9))
    y = tp.gumbel_to_frechet(mb.sample_gumbel(20_000, make_rng(3)), 1.0)
    m = tp.edm_matrix(y)
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 0.5)
    within = m[:5, :5][~np.eye(5, dtype=bool)]
    across = m[:5, 5:]
    assert within.min() > 0.4 and across.max() < 0.05
    # the default alpha = 2 scale separates the blocks too
    m2 = tp.edm_matrix(tp.gumbel_to_frechet(mb.sample_gumbel(20_000, make_rng(3))))
    assert tp.cluster_edm(m2, k=2).blocks == ((0, 1, 2, 3, 4), (5, 6, 7, 8, 9))
    assert tp.edm_matrix(y[:, :2])[0, 1] == tp.edm_pair(y[:, 0], y[:, 1])
    perm = make_rng(4).permutation(10)
    assert np.array_equal(tp.edm_matrix(y[:, perm]), m[np.ix_(perm, perm)])
    # exact two-block recovery, equivariant under relabelling
    part = tp.cluster_edm(m, k=2)
    assert part.blocks == ((0, 1, 2, 3, 4), (5, 6, 7, 8, 9))
    relabelled = tp.cluster_edm(m[np.ix_(perm, perm)], k=2)
    assert {tuple(sorted(perm[list(b)])) for b in relabelled.blocks} == set(part.blocks)
    assert len(part.merges()) == 9


def test_cluster_extremes_and_errors():
    m = tp.edm_matrix(tp.gumbel_to_frechet(make_rng(5).gumbel(size=(5000, 4))))
    assert tp.cluster_edm(m, k=4).blocks == ((0,), (1,), (2,), (3,))
    assert tp.cluster_edm(m, k=1).blocks == ((0, 1, 2, 3),)
    assert tp.cluster_edm(m, height=1.0).blocks == ((0, 1, 2, 3),)
    with pytest.raises(InputError):
        tp.cluster_edm(m, k=5)
    with pytest.raises(InputError):
        tp.cluster_edm(m)
    with pytest.raises(InputError):
        tp.BlockPartition(((0, 1), (1, 2)))


# --- weighted maxima --------------------------------------------------------------

def test_u_max_examples():
    U = np.array([[0.999, 0.5]])
    assert tp.u_max(U, [1, 12])[0] == pytest.approx(max(0.001, 0.5 / 12), abs=1e-15)
    assert tp.u_max(U)[0] == pytest.approx(0.5)
    assert tp.u_max(np.array([0.3, 0.8]), [2.0])[0] == pytest.approx(0.35)
    with pytest.raises(DomainError):
        tp.u_max(U, [1, 0])
    with pytest.raises(DomainError):
        tp.u_max(np.array([[1.0, 0.5]]))


@given(arrays(float, (20, 4), elements=st.floats(1e-6, 1 - 1e-6)), st.floats(1e-4, 0.9))
def test_u_max_probability_identity(U, phi):
    assert np.array_equal(tp.u_max(U) < phi, np.all(U > 1 - phi, axis=1))


# --- tail model -------------------------------------------------------------------

def test_tail_model_independent_oracle():
    U = make_rng(6).random((100_000, 2))
    fit = tp.fit_tail_model(tp.u_max(U), 0.25)
    assert fit.eta == pytest.approx(0.5, abs=0.05)
    assert fit.k1 == pytest.approx(0.0, abs=0.05)
    assert tp.estimate_p(fit, 0.025) == pytest.approx(0.025 ** 2, rel=0.25)
    assert fit.conditional_cdf(fit.phi_star) == pytest.approx(1.0, abs=1e-12)


def test_tail_model_comonotone_oracle():
    V = make_rng(7).random(100_000)
    fit = tp.fit_tail_model(tp.u_max(np.column_stack([V, V])), 0.25)
    assert fit.k1 == pytest.approx(1 / 0.25, rel=0.05)
    assert tp.estimate_p(fit, 0.025) == pytest.approx(0.025, rel=0.1)
    assert fit.boundary


def test_tail_model_errors():
    with pytest.raises(FitError):
        tp.fit_tail_model(np.linspace(0.3, 0.9, 1000), 0.25)
    fit = tp.fit_tail_model(make_rng(8).random(5000), 0.25)
    with pytest.raises(DomainError):
        tp.estimate_p(fit, 0.25)


@given(st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_estimate_p_monotone_bounded_and_limit(k1_frac, eta):
    fit = tp.TailModelFit(k1_frac * 4.0, eta, 0.25, 0.1, 100)
    phis = np.linspace(1e-4, 0.25 - 1e-9, 200)
    p = tp.estimate_p(fit, phis)
    assert np.all(np.diff(p) >= -1e-15)
    assert np.all((p >= 0) & (p <= fit.p_phi_star_hat + 1e-15))
    assert p[-1] == pytest.approx(0.1, rel=1e-6)
    assert np.all(fit.conditional_density(phis) >= 0)
    assert np.exp(tp.log_estimate_p(fit, 0.01)) == pytest.approx(tp.estimate_p(fit, 0.01), rel=1e-10)


def test_estimate_p_continuous_at_eta_one():
    a = tp.TailModelFit(1.5, 1.0, 0.25, 0.1, 100)
    b = tp.TailModelFit(1.5, 1.0 - 1e-9, 0.25, 0.1, 100)
    assert tp.estimate_p(a, 0.03) == pytest.approx(tp.estimate_p(b, 0.03), rel=1e-7)


def test_weighted_maxima_against_counting():
    U = make_rng(9).random((100_000, 2))
    um = tp.u_max(U, [1, 12])
    fit = tp.fit_tail_model(um, 0.06)
    count = np.mean(um < 0.02)
    se = np.sqrt(count * (1 - count) / um.size)
    assert abs(tp.estimate_p(fit, 0.02) - count) < 3 * se


# --- stability scan -----------------------------------------------------------------

def test_stability_scan():
    mb = MixtureBlocks(sizes=(3,), a=(0.4,))
    um = tp.u_max(mb.sample_uniform(50_000, make_rng(10)))
    grid = np.linspace(0.1, 0.4, 7)
    scan = tp.stability_scan(um, grid, 1 / 300)
    logs = np.array([r.log_p for r in scan.rows])
    assert np.all(np.isfinite(logs))
    assert np.ptp(logs[len(grid) // 2:]) < 0.5
    assert scan.suggestion in grid
    single = tp.stability_scan(um, [0.25], 1 / 300)
    assert len(single.rows) == 1 and single.suggestion == 0.25
    with pytest.raises(InputError):
        tp.stability_scan(um, [0.001], 1 / 300)


def test_stability_scan_records_failures():
    um = np.concatenate([np.full(30, 0.05), np.linspace(0.3, 0.9, 1000)])
    scan = tp.stability_scan(um, [0.1, 0.5], 0.01)
    assert scan.rows[0].error and not scan.rows[1].error


# --- blocks -------------------------------------------------------------------------

def test_block_product():
    one = tp.BlockPartition(((0, 1),))
    assert tp.block_product(one, [0.3]).p == pytest.approx(0.3)
    five = tp.BlockPartition(tuple((2 * k, 2 * k + 1) for k in range(5)))
    res = tp.block_product(five, [1e-12] * 5)
    assert res.log10_p == pytest.approx(-60.0)
    assert res.p == pytest.approx(1e-60, rel=1e-9)
    assert tp.block_product(five, ("log", [-400.0] * 5)).log_p == -2000.0
    with pytest.raises(DomainError):
        tp.block_product(five, [1e-12, 0, 1, 1, 1])
    with pytest.raises(InputError):
        tp.block_product(five, [0.1])


def test_pipeline_on_mixture_blocks():
    mb = MixtureBlocks(sizes=(2, 3), a=(0.5, 0.4))
    part = tp.BlockPartition(tuple(mb.blocks))
    cfg = tp.TailPipeline(part, 1 / 300, 0.25)
    res, fits = tp.pipeline_log_estimate(mb.sample_gumbel(100_000, make_rng(11)), cfg)
    assert len(fits) == 2
    assert res.log_p == pytest.approx(np.log(mb.joint_prob(1 / 300)), abs=0.3)
    ranked = tp.TailPipeline(part, 1 / 300, 0.25, ranks=True)
    assert tp.pipeline_log_estimate(mb.sample_gumbel(100_000, make_rng(11)), ranked)[0].log_p \
        == pytest.approx(res.log_p, abs=0.1)


def test_bootstrap_tailprob():
    mb = MixtureBlocks(sizes=(2,), a=(0.5,))
    cfg = tp.TailPipeline(tp.BlockPartition(((0, 1),)), 1 / 300, 0.25)
    y = mb.sample_gumbel(5000, make_rng(12))
    two = tp.bootstrap_tailprob(y, cfg, 2, make_rng(13))
    assert two.flagged and two.lower_log <= two.median_log <= two.upper_log
    again = tp.bootstrap_tailprob(y, cfg, 2, make_rng(13))
    assert np.array_equal(two.estimates, again.estimates)
    bad = tp.TailPipeline(tp.BlockPartition(((0, 1),)), 1e-4, 1e-3)
    with pytest.raises(FitError):
        tp.bootstrap_tailprob(y, bad, 5, make_rng(14))
