import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import matrix_normal, multivariate_normal

from kdlab.numcore import (BallPerturbation, MatrixNormalParams, NumericError, ParameterError,
                           as_pd, dv_check, kl_gaussian, kl_gaussian_same_cov, kl_matrix_normal,
                           logdet_pd, make_stream, sample_ball_uniform, sample_matrix_normal,
                           solve_pd)
from kdlab.verify import random_pd


def mn(mean, col, row=None):
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    row = np.eye(mean.shape[0]) if row is None else row
    return MatrixNormalParams(mean, row, np.atleast_2d(np.asarray(col, dtype=float)))


# -- streams ------------------------------------------------------------------

def test_streams_are_counter_based():
    a = make_stream(7, 3, "x").standard_normal(5)
    b = make_stream(7, 3, "x").standard_normal(5)
    assert np.array_equal(a, b)
    for other in (make_stream(7, 4, "x"), make_stream(7, 3, "y"), make_stream(8, 3, "x")):
        assert not np.array_equal(a, other.standard_normal(5))


def test_stream_rejects_negative_seed():
    with pytest.raises(ParameterError):
        make_stream(-1)


# -- PD helpers ---------------------------------------------------------------

def test_as_pd_symmetrizes_within_tolerance():
    a = np.array([[2.0, 1.0 + 1e-13], [1.0, 2.0]])
    out = as_pd(a)
    assert np.array_equal(out, out.T)


@pytest.mark.parametrize("bad", [np.array([[1.0, 2.0], [0.0, 1.0]]), -np.eye(2), np.zeros((2, 2)),
                                 np.ones((2, 3)), np.array([[np.nan]])])
def test_as_pd_rejects(bad):
    with pytest.raises(ParameterError):
        as_pd(bad)


def test_logdet_matches_slogdet_without_overflow():
    a = np.diag(np.full(400, 1e3))
    assert logdet_pd(a) == pytest.approx(400 * math.log(1e3), rel=1e-12)
    rng = np.random.default_rng(0)
    s = random_pd(rng, 5)
    assert logdet_pd(s) == pytest.approx(np.linalg.slogdet(s)[1], rel=1e-12)


def test_solve_pd():
    rng = np.random.default_rng(1)
    s = random_pd(rng, 4)
    b = rng.standard_normal((4, 2))
    assert np.allclose(s @ solve_pd(s, b), b, atol=1e-12)


def test_cholesky_failure_is_numeric_error():
    with pytest.raises(NumericError):
        logdet_pd(np.array([[1.0, 1.0], [1.0, 1.0]]))


# -- matrix normal sampling ---------------------------------------------------

def test_matrix_normal_params_validation():
    with pytest.raises(ParameterError):
        MatrixNormalParams(np.zeros((2, 3)), np.eye(3), np.eye(3))
    with pytest.raises(ParameterError):
        MatrixNormalParams(np.zeros((2, 2)), np.eye(2), -np.eye(2))


def test_standard_matrix_normal_zero_mean():
    draws = sample_matrix_normal(mn(np.zeros((2, 2)), np.eye(2)), make_stream(0), size=100_000)
    z = draws.mean(axis=0) / (draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0]))
    assert np.all(np.abs(z) < 4)


def test_matrix_normal_translation():
    m = np.array([[1.0, -2.0, 3.0]])
    draws = sample_matrix_normal(mn(m, np.diag([1.0, 2.0, 0.5])), make_stream(1), size=100_000)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - m) < 4 * se)


def _cov_z(flat, target):
    """z-scores of the empirical covariance against ``target``."""
    c = flat - flat.mean(axis=0)
    prods = c[:, :, None] * c[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(flat.shape[0])
    return np.abs(prods.mean(axis=0) - target) / np.maximum(se, 1e-15)


def test_matrix_normal_vec_covariance_is_kronecker():
    rng = np.random.default_rng(2)
    u, v = random_pd(rng, 2), random_pd(rng, 3)
    p = MatrixNormalParams(rng.standard_normal((2, 3)), u, v)
    draws = sample_matrix_normal(p, make_stream(2), size=100_000)
    flat = draws.transpose(0, 2, 1).reshape(draws.shape[0], -1)  # column-stacking vec
    assert np.all(_cov_z(flat, np.kron(v, u)) < 4.5)


def test_matrix_normal_agrees_with_scipy_logpdf():
    rng = np.random.default_rng(3)
    p = MatrixNormalParams(rng.standard_normal((2, 3)), random_pd(rng, 2), random_pd(rng, 3))
    x = sample_matrix_normal(p, make_stream(3), size=5)
    ours = multivariate_normal(p.mean.ravel(order="F"), p.vec_cov()).logpdf(
        x.transpose(0, 2, 1).reshape(5, -1))
    ref = matrix_normal(p.mean, p.row_cov, p.col_cov).logpdf(x)
    assert np.allclose(ours, ref, rtol=1e-10)


def test_single_draw_shape():
    x = sample_matrix_normal(mn(np.zeros((2, 3)), np.eye(3)), make_stream(0))
    assert x.shape == (2, 3)


# -- ball sampling ------------------------------------------------------------

def test_ball_zero_radius():
    u = sample_ball_uniform(BallPerturbation(0.0, 4), make_stream(0), size=100)
    assert not np.any(u)


def test_ball_1d_second_moment():
    u = sample_ball_uniform(BallPerturbation(1.0, 1), make_stream(1), size=1_000_000)[:, 0]
    sq = u ** 2
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    assert abs(sq.mean() - 1 / 3) < 3 * se


@pytest.mark.parametrize("m,r", [(2, 1.0), (3, 0.7), (6, 2.5)])
def test_ball_second_moment_against_rejection_sampler(m, r):
    p = BallPerturbation(r, m)
    u = sample_ball_uniform(p, make_stream(2, m), size=200_000)
    sq = np.sum(u ** 2, axis=1)
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    assert abs(sq.mean() - r * r * m / (m + 2)) < 3 * se
    assert p.second_moment() == pytest.approx(r * r * m / (m + 2))
    # independent oracle: rejection from the cube
    rng = np.random.default_rng(m)
    cube = rng.uniform(-r, r, size=(400_000, m))
    keep = cube[np.sum(cube ** 2, axis=1) <= r * r]
    ks = np.sum(keep ** 2, axis=1)
    se2 = math.hypot(se, ks.std(ddof=1) / math.sqrt(ks.size))
    assert abs(sq.mean() - ks.mean()) < 4 * se2


@given(r=st.floats(1e-300, 1e300), m=st.integers(1, 50), seed=st.integers(0, 2 ** 32))
@settings(max_examples=200, deadline=None)
def test_ball_never_exceeds_radius(r, m, seed):
    u = sample_ball_uniform(BallPerturbation(r, m), make_stream(seed), size=50)
    norms = r * np.linalg.norm(u / r, axis=1) if r > 1e150 or r < 1e-150 else np.linalg.norm(u, axis=1)
    assert np.all(norms <= r)
    assert np.all(norms > 0)


def test_ball_bound_holds_over_many_draws():
    r = 0.1
    u = sample_ball_uniform(BallPerturbation(r, 3), make_stream(5), size=100_000)
    assert np.linalg.norm(u, axis=1).max() <= r


@pytest.mark.parametrize("r,m", [(-1.0, 2), (math.inf, 2), (1.0, 0)])
def test_ball_params_invalid(r, m):
    with pytest.raises(ParameterError):
        BallPerturbation(r, m)


# -- KL -----------------------------------------------------------------------

def _mc_kl(m1, c1, m0, c0, samples, seed):
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(m1, c1, size=samples)
    r = multivariate_normal(m1, c1).logpdf(x) - multivariate_normal(m0, c0).logpdf(x)
    return r.mean(), r.std(ddof=1) / math.sqrt(samples)


def test_kl_same_cov_equal_means():
    assert kl_gaussian_same_cov([1.0, 2.0], [1.0, 2.0], np.eye(2)) == 0.0


@pytest.mark.parametrize("delta,cov,expected", [
    ([1.0, 1.0], np.eye(2), 1.0),
    ([2.0, 0.0], np.diag([4.0, 1.0]), 0.5),
])
def test_kl_same_cov_examples(delta, cov, expected):
    kl = kl_gaussian_same_cov(np.array(delta), np.zeros(2), cov)
    assert kl == pytest.approx(expected, abs=1e-14)
    est, se = _mc_kl(np.array(delta), cov, np.zeros(2), cov, 1_000_000, 11)
    assert abs(est - expected) < 3 * se


def test_kl_scalar_covariance_example():
    expected = 0.5 * (2 - 1 + math.log(0.5))
    assert expected == pytest.approx(0.153426, abs=1e-6)
    qs, qt = mn([[0.0]], [[2.0]]), mn([[0.0]], [[1.0]])
    assert kl_matrix_normal(qs, qt) == pytest.approx(expected, abs=1e-15)
    assert kl_gaussian(np.zeros(1), np.array([[2.0]]), np.zeros(1), np.eye(1)) == pytest.approx(expected)


def test_kl_matrix_normal_identical_is_zero():
    rng = np.random.default_rng(4)
    p = mn(rng.standard_normal((2, 3)), random_pd(rng, 3))
    assert kl_matrix_normal(p, p) == pytest.approx(0.0, abs=1e-12)


def test_kl_matrix_normal_mean_gap_collapses():
    rng = np.random.default_rng(5)
    s = random_pd(rng, 3)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    got = kl_matrix_normal(mn(a, s), mn(b, s))
    ref = kl_gaussian_same_cov(a.ravel(order="F"), b.ravel(order="F"), np.kron(s, np.eye(2)))
    assert got == pytest.approx(ref, rel=1e-12)


def test_kl_matrix_normal_requires_identity_rows():
    p = MatrixNormalParams(np.zeros((2, 2)), 2 * np.eye(2), np.eye(2))
    with pytest.raises(ParameterError):
        kl_matrix_normal(p, mn(np.zeros((2, 2)), np.eye(2)))
    with pytest.raises(ParameterError):
        kl_matrix_normal(mn(np.zeros((1, 2)), np.eye(2)), mn(np.zeros((2, 2)), np.eye(2)))


@given(seed=st.integers(0, 2 ** 32), k=st.integers(1, 3), d=st.integers(1, 4))
@settings(max_examples=100, deadline=None)
def test_kl_matrix_normal_matches_vectorized(seed, k, d):
    rng = np.random.default_rng(seed)
    qs = mn(rng.standard_normal((k, d)), random_pd(rng, d))
    qt = mn(rng.standard_normal((k, d)), random_pd(rng, d))
    got = kl_matrix_normal(qs, qt)
    ref = kl_gaussian(qs.mean.ravel(order="F"), qs.vec_cov(), qt.mean.ravel(order="F"), qt.vec_cov())
    assert got >= 0
    assert abs(got - ref) <= 1e-9 * max(1.0, abs(ref))


def test_kl_one_dim_against_quadrature():
    m1, s1, m0, s0 = 0.3, 1.7, -0.4, 0.9
    f = lambda x: (multivariate_normal(m1, s1).pdf(x)
                   * (multivariate_normal(m1, s1).logpdf(x) - multivariate_normal(m0, s0).logpdf(x)))
    ref, _ = integrate.quad(f, -40, 40, limit=200)
    assert kl_gaussian([m1], [[s1]], [m0], [[s0]]) == pytest.approx(ref, abs=1e-9)


def test_kl_dimension_mismatch():
    with pytest.raises(ParameterError):
        kl_gaussian_same_cov(np.zeros(2), np.zeros(3), np.eye(2))


# -- Donsker-Varadhan ---------------------------------------------------------

def test_dv_equal_distributions_constant_g():
    p = np.array([0.2, 0.3, 0.5])
    assert dv_check(p, p, np.full(3, 7.0)) == pytest.approx(0.0, abs=1e-15)


def test_dv_two_point_exhaustive():
    p, q, g = np.array([0.5, 0.5]), np.array([0.75, 0.25]), np.array([1.0, 0.0])
    kl = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    slack = kl + math.log(0.5 * math.e + 0.5) - 0.75
    assert dv_check(p, q, g) == pytest.approx(slack, abs=1e-15)
    assert slack >= 0


def test_dv_optimizer_is_tight():
    p, q = np.array([0.1, 0.6, 0.3]), np.array([0.5, 0.25, 0.25])
    assert abs(dv_check(p, q, np.log(q / p))) <= 1e-12


@given(seed=st.integers(0, 2 ** 32), m=st.integers(1, 8))
@settings(max_examples=300, deadline=None)
def test_dv_slack_nonnegative(seed, m):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
    assert dv_check(p, q, rng.normal(scale=5.0, size=m)) >= -1e-12


def test_dv_large_g_is_stable():
    p, q = np.array([0.5, 0.5]), np.array([0.5, 0.5])
    assert math.isfinite(dv_check(p, q, np.array([800.0, -800.0])))


def test_dv_support_violation():
    with pytest.raises(ParameterError):
        dv_check(np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.zeros(2))
