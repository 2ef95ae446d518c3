import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kdlab.divergence import (apx_term, assemble_ledger, bias_term, cov_term, dataset_shift_bound,
                              ledger_row, spread_term, var_term)
from kdlab.numcore import MatrixNormalParams, kl_matrix_normal, make_stream
from kdlab.processes import (GibbsPosterior, ProblemSpec, StudentConfig, TeacherConfig,
                             draw_dataset, fit_teacher_posterior, sample_teacher)
from kdlab.verify import random_pd


def post_of(mean, cov):
    return GibbsPosterior(np.atleast_2d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)))


def fitted(seed=0, d=3, k=2, n=12, nu=0.5, lam=1.0, beta=1.0):
    spec = ProblemSpec(d, k, n, np.random.default_rng(seed).standard_normal((k, d)), nu)
    data = draw_dataset(spec, make_stream(seed))
    return spec, data, fit_teacher_posterior(data, TeacherConfig(lam, beta), spec)


def z_of(vals, target):
    return abs(vals.mean() - target) / (vals.std(ddof=1) / math.sqrt(vals.size))


# -- bias / var ---------------------------------------------------------------

def test_bias_zero_at_truth():
    w = np.array([[1.0, 2.0]])
    assert bias_term(post_of(w, np.eye(2)), w, np.ones((2, 3))) == 0.0


def test_bias_scalar_hand_case():
    assert bias_term(post_of([[1.0]], [[1.0]]), np.zeros((1, 1)), np.array([[1.0, 2.0]])) == 5.0


def test_bias_orthogonal_invariance():
    rng = np.random.default_rng(1)
    post = post_of(rng.standard_normal((2, 3)), np.eye(3))
    X, w = rng.standard_normal((3, 7)), rng.standard_normal((2, 3))
    q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
    assert abs(bias_term(post, w, X) - bias_term(post, w, X @ q)) <= 1e-10


def test_var_examples():
    assert var_term(post_of(np.zeros((1, 2)), np.eye(2)), np.zeros((2, 3))) == 0.0
    assert var_term(post_of(np.zeros((1, 2)), np.eye(2)), np.eye(2)) == 2.0


def test_var_mc_identity():
    _, data, post = fitted(seed=2)
    w = sample_teacher(post, make_stream(2, 0, "v"), size=100_000)
    vals = np.sum(((w - post.mean) @ data.X) ** 2, axis=(1, 2)) / post.k
    assert z_of(vals, var_term(post, data.X)) < 3


def test_bias_variance_split_mc():
    spec, data, post = fitted(seed=3)
    w = sample_teacher(post, make_stream(3, 0, "bv"), size=100_000)
    vals = np.sum(((w - spec.w_star) @ data.X) ** 2, axis=(1, 2))
    target = bias_term(post, spec.w_star, data.X) + spec.k * var_term(post, data.X)
    assert z_of(vals, target) < 3


# -- dataset shift ------------------------------------------------------------

def test_dataset_shift_examples():
    assert dataset_shift_bound(0.0, 0.0, 3, 1.0) == 0.0
    assert dataset_shift_bound(5.0, 2.0, 2, 1.0) == 4.5
    assert dataset_shift_bound(5.0, 2.0, 2, 2.0) == pytest.approx(4.5 / 4, rel=1e-15)


# -- apx ----------------------------------------------------------------------

def test_apx_no_bottleneck_is_zero():
    _, data, post = fitted(seed=4, d=3, k=2)
    est, se = apx_term(post, data.X, 2, 1.0, 1.0, 0.5, make_stream(4), 200)
    assert abs(est) < 1e-9 and se < 1e-9


def test_apx_deterministic_hand_case():
    post = post_of(np.diag([3.0, 1.0]), 1e-16 * np.eye(2))
    est, se = apx_term(post, np.eye(2), 1, 1.0, 1.0, 1.0, make_stream(5), 200)
    assert est == pytest.approx(2.0, abs=1e-6)
    assert se < 1e-6


def test_apx_two_streams_agree():
    _, data, post = fitted(seed=6, d=4, k=3)
    a, sa = apx_term(post, data.X, 1, 1.0, 1.0, 0.5, make_stream(6, 0, "a"), 2000)
    b, sb = apx_term(post, data.X, 1, 1.0, 1.0, 0.5, make_stream(6, 0, "b"), 2000)
    assert abs(a - b) < 4 * math.hypot(sa, sb)


def test_apx_matches_independent_projector():
    _, data, post = fitted(seed=7, d=4, k=3)
    X = data.X
    est, se = apx_term(post, X, 1, 0.8, 1.2, 0.5, make_stream(7, 0, "apx"), 500)
    w = sample_teacher(post, make_stream(7, 0, "apx"), size=500)
    vals = []
    for wi in w:
        # top eigenvector of the prediction Gram matrix spans the rank-1 projector
        _, vec = np.linalg.eigh((wi @ X) @ (wi @ X).T)
        r = wi - np.outer(vec[:, -1], vec[:, -1]) @ wi
        vals.append(0.8 * np.sum(r ** 2) + 1.2 / 0.25 * np.sum((r @ X) ** 2))
    assert est == pytest.approx(np.mean(vals), rel=1e-9)


def test_apx_sample_floor():
    _, data, post = fitted()
    with pytest.raises(ValueError):
        apx_term(post, data.X, 1, 1.0, 1.0, 0.5, make_stream(0), 50)


# -- cov / spread -------------------------------------------------------------

def test_cov_examples():
    s = random_pd(np.random.default_rng(8), 3)
    assert cov_term(s, s, 2) == pytest.approx(0.0, abs=1e-12)
    assert cov_term(np.array([[2.0]]), np.array([[1.0]]), 1) == pytest.approx(
        0.5 * (2 - 1 + math.log(0.5)), abs=1e-15)


@given(seed=st.integers(0, 2 ** 32), d=st.integers(1, 4), k=st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_cov_is_k_times_kl(seed, d, k):
    rng = np.random.default_rng(seed)
    ss, st_ = random_pd(rng, d), random_pd(rng, d)
    zero = np.zeros((1, d))
    kl = kl_matrix_normal(MatrixNormalParams(zero, np.eye(1), ss), MatrixNormalParams(zero, np.eye(1), st_))
    val = cov_term(ss, st_, k)
    assert val >= 0
    assert abs(val - k * kl) <= 1e-10


def test_spread_examples():
    post = post_of(np.zeros((1, 2)), np.eye(2))
    assert spread_term(post, np.eye(2), 1, 1.0, 1.0, 1.0) == 4.0
    tiny = post_of(np.zeros((1, 2)), 1e-16 * np.eye(2))
    assert spread_term(tiny, np.eye(2), 1, 1.0, 1.0, 1.0) < 1e-15


def test_spread_mc_identity():
    _, data, post = fitted(seed=9)
    lam, scale = 1.0, 1.0 / 0.25
    w = sample_teacher(post, make_stream(9, 0, "sp"), size=100_000)
    dev = w - post.mean
    vals = lam * np.sum(dev ** 2, axis=(1, 2)) + scale * np.sum((dev @ data.X) ** 2, axis=(1, 2))
    assert z_of(vals, spread_term(post, data.X, post.k, lam, 1.0, 0.5)) < 3


# -- ledger -------------------------------------------------------------------

def demo_spec(nu=0.5, n=20, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((5, 2)))
    return ProblemSpec(5, 2, n, q.T, nu)


def test_ledger_identities():
    L = assemble_ledger(demo_spec(), TeacherConfig(1.0, 1.0), StudentConfig(1), 30, 100, 11)
    assert all(v <= 1e-12 * max(1.0, L.kn_upper_doubled) for v in L.identity_residuals().values())
    assert L.kn_upper == L.dataset_shift + L.algo_shift
    assert L.algo_shift == L.apx + L.cov + L.spread
    assert L.algo_shift_doubled == 2 * L.apx + L.cov + 2 * L.spread
    for r in L.rows:
        assert abs(r.kn_upper - (r.dataset_shift + r.algo_shift)) <= 1e-12 * max(1.0, r.kn_upper)
        assert min(r.bias, r.var, r.cov, r.spread, r.dataset_shift) >= 0
        assert r.apx >= -3 * r.apx_std_err
    assert L.cov == pytest.approx(0.0, abs=1e-12)  # match-teacher


def test_ledger_degenerate_configuration():
    spec = demo_spec()
    L = assemble_ledger(spec, TeacherConfig(1.0, 1e-12), StudentConfig(2), 10, 100, 12)
    assert abs(L.apx) < 1e-9
    assert abs(L.cov) < 1e-12
    # with beta -> 0 the posterior is the prior lam^-1 I, spread = k lam tr(I/lam)
    assert L.spread == pytest.approx(spec.k * spec.d, rel=1e-9)


def test_ledger_nu_scaling():
    base = assemble_ledger(demo_spec(0.5), TeacherConfig(1.0, 1.0), StudentConfig(1), 50, 100, 13)
    wide = assemble_ledger(demo_spec(1.0), TeacherConfig(1.0, 1.0), StudentConfig(1), 50, 100, 13)
    # same streams for both noise levels: compare per dataset
    diff = np.array([a.dataset_shift - b.dataset_shift for a, b in zip(base.rows, wide.rows)])
    assert diff.mean() > 3 * diff.std(ddof=1) / math.sqrt(diff.size)


def test_ledger_sample_size_study():
    cfg = TeacherConfig(1.0, 1.0)
    shifts, raw = [], []
    for n in (10, 100, 1000):
        spec = demo_spec(n=n)
        rows = [ledger_row(t, spec, cfg, StudentConfig(1), 100, 14) for t in range(20)]
        shifts.append(np.mean([r.dataset_shift for r in rows]))
        res = []
        for t in range(20):
            data = draw_dataset(spec, make_stream(14, t, "ledger-data"))
            post = fit_teacher_posterior(data, cfg, spec)
            res.append(np.sum((data.Y - post.mean @ data.X) ** 2))
        raw.append(np.mean(res))
    assert max(shifts) / min(shifts) < 3.0
    assert raw[2] / raw[0] > 50


def test_ledger_worker_invariance():
    args = (demo_spec(), TeacherConfig(1.0, 1.0), StudentConfig(1), 12, 100, 15)
    a, b = assemble_ledger(*args, workers=1), assemble_ledger(*args, workers=4)
    assert a.to_dict() == b.to_dict()


def test_ledger_explicit_student_covariance():
    spec = demo_spec()
    L = assemble_ledger(spec, TeacherConfig(1.0, 1.0), StudentConfig(1, 0.3 * np.eye(5)), 10, 100, 16)
    assert L.cov > 0


def test_ledger_trial_floor():
    with pytest.raises(ValueError):
        assemble_ledger(demo_spec(), TeacherConfig(1.0, 1.0), StudentConfig(1), 5, 100, 0)
