"""Randomized invariant suites with fixed internal seeds.

Each ``suite_*`` function returns a :class:`SuiteResult` with the number of
cases, failures and the worst observed slack (or residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from . import bounds as B
from .divergence import bias_term, cov_term, spread_term, var_term
from .estimators import (empirical_sharpness_closed_form, estimate_sharpness_empirical,
                         mgf_subgaussian_check, symmetric_grid)
from .numcore import (BallPerturbation, MatrixNormalParams, dv_check, kl_gaussian,
                      kl_matrix_normal, sample_matrix_normal)
from .processes import Dataset, GibbsPosterior, ProblemSpec, TeacherConfig, fit_teacher_posterior

SUITES = ("dv", "kl", "posterior", "ledger", "proxies", "rho0", "sharpness", "mgf")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    cases: int
    failures: int
    worst: float
    criterion: str

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"{status} {self.name:<10} cases={self.cases:<5} failures={self.failures:<4} "
                f"worst={self.worst:.3e}  ({self.criterion})")


def random_pd(rng, d: int, jitter: float = 0.1) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T / d + jitter * np.eye(d)


def suite_dv(cases: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 1])
    worst = math.inf
    failures = 0
    for _ in range(cases):
        m = int(rng.integers(1, 9))
        p = rng.dirichlet(np.ones(m))
        q = rng.dirichlet(np.ones(m))
        g = rng.normal(scale=3.0, size=m)
        slack = dv_check(p, q, g)
        opt = abs(dv_check(p, q, np.log(q / p)))
        worst = min(worst, slack)
        failures += (slack < -1e-12) or (opt > 1e-10)
    return SuiteResult("dv", cases, failures, worst, "slack >= -1e-12, optimizer |slack| <= 1e-10")


def suite_kl(cases: int = 100, samples: int = 20000, seed: int = 0) -> SuiteResult:
    """Closed-form matrix-normal KL vs its vectorized form and a log-ratio MC estimate.

    The CLI uses a reduced sample count; the acceptance tests run 10^6.
    """
    rng = np.random.default_rng([seed, 2])
    failures = 0
    worst = 0.0
    for _ in range(cases):
        k, d = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        qs = MatrixNormalParams(rng.standard_normal((k, d)), np.eye(k), random_pd(rng, d))
        qt = MatrixNormalParams(rng.standard_normal((k, d)), np.eye(k), random_pd(rng, d))
        closed = kl_matrix_normal(qs, qt)
        vec = kl_gaussian(qs.mean.ravel(order="F"), qs.vec_cov(), qt.mean.ravel(order="F"), qt.vec_cov())
        draws = sample_matrix_normal(qs, rng, size=samples).transpose(0, 2, 1).reshape(samples, -1)
        ratio = (multivariate_normal(qs.mean.ravel(order="F"), qs.vec_cov()).logpdf(draws)
                 - multivariate_normal(qt.mean.ravel(order="F"), qt.vec_cov()).logpdf(draws))
        se = ratio.std(ddof=1) / math.sqrt(samples)
        z = abs(ratio.mean() - closed) / max(se, 1e-300)
        rel = abs(closed - vec) / max(1.0, abs(vec))
        worst = max(worst, z)
        failures += (z > 4.0) or (rel > 1e-9)
    return SuiteResult("kl", cases, failures, worst, "MC within 4 SE, vectorized within 1e-9 rel")


def suite_posterior(cases: int = 200, seed: int = 0) -> SuiteResult:
    """Normal-equation residual and prior domination of the Gibbs posterior."""
    rng = np.random.default_rng([seed, 3])
    failures = 0
    worst = 0.0
    for _ in range(cases):
        d, k, n = (int(v) for v in rng.integers(1, 6, size=3))
        spec = ProblemSpec(d, k, n, rng.standard_normal((k, d)), float(rng.uniform(0.2, 2.0)))
        cfg = TeacherConfig(float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.1, 3.0)))
        X = rng.standard_normal((d, n))
        data = Dataset(X, spec.w_star @ X + spec.nu * rng.standard_normal((k, n)))
        post = fit_teacher_posterior(data, cfg, spec)
        lhs = np.linalg.solve(post.col_cov, post.mean.T)
        rhs = cfg.beta_t / spec.nu ** 2 * X @ data.Y.T
        rel = np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))
        top = np.linalg.eigvalsh(post.col_cov)[-1]
        worst = max(worst, rel)
        failures += (rel > 1e-8) or (top > 1.0 / cfg.lam + 1e-9)
    return SuiteResult("posterior", cases, failures, worst, "normal equations within 1e-8 rel")


def suite_ledger(cases: int = 200, seed: int = 0) -> SuiteResult:
    """Closed-form ledger terms: nonnegativity and Cov = k x matrix-normal KL."""
    rng = np.random.default_rng([seed, 4])
    failures = 0
    worst = 0.0
    for _ in range(cases):
        d, k, n = (int(v) for v in rng.integers(1, 5, size=3))
        st, ss = random_pd(rng, d), random_pd(rng, d)
        post = GibbsPosterior(rng.standard_normal((k, d)), st)
        X = rng.standard_normal((d, n))
        cv = cov_term(ss, st, k)
        one = kl_matrix_normal(MatrixNormalParams(np.zeros((1, d)), np.eye(1), ss),
                               MatrixNormalParams(np.zeros((1, d)), np.eye(1), st))
        err = abs(cv - k * one)
        terms = (bias_term(post, rng.standard_normal((k, d)), X), var_term(post, X), cv,
                 spread_term(post, X, k, 1.0, 1.0, 1.0))
        worst = max(worst, err)
        failures += (err > 1e-10) or any(t < 0 for t in terms)
    return SuiteResult("ledger", cases, failures, worst, "Cov = k KL within 1e-10, terms >= 0")


def random_constants(rng) -> B.SharpnessConstants:
    a = float(rng.uniform(0, 5))
    return B.SharpnessConstants(a, a + float(rng.uniform(0, 5)), *(float(v) for v in rng.uniform(0, 10, 5)),
                                int(rng.integers(1, 1000)), float(rng.uniform(0, 5)))


def suite_proxies(cases: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 5])
    worst = 0.0
    failures = 0
    for _ in range(cases):
        r = abs(B.sigma_gap_identity_check(random_constants(rng)))
        worst = max(worst, r)
        failures += r >= 1e-12
    return SuiteResult("proxies", cases, failures, worst, "gap identity residual < 1e-12")


def suite_rho0(cases: int = 1000, seed: int = 0) -> SuiteResult:
    """Root substitution residual and strict improvement inside ``(0, rho0)``."""
    rng = np.random.default_rng([seed, 6])
    worst = 0.0
    failures = 0
    for _ in range(cases):
        c = random_constants(rng)
        kn = float(rng.uniform(0, 10))
        r0 = B.rho_zero(c, kn)
        if r0 is None:
            failures += c.flatness_gap > 0 and kn > 0
            continue
        c0, c1, c2 = B.tightening_coefficients(c, kn)
        # relative to the magnitude of the quadratic's terms
        res = abs(c2 * r0 ** 2 + c1 * r0 - c0) / max(1.0, c0)
        worst = max(worst, res)
        inside = [B.b_std_vs_b_sh(c.at(r), 0.0, kn).improved for r in r0 * np.array([0.01, 0.5, 0.99])]
        failures += (res >= 1e-10) or not all(inside)
    return SuiteResult("rho0", cases, failures, worst, "substitution residual < 1e-10")


def suite_sharpness(cases: int = 50, samples: int = 100_000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 7])
    worst = 0.0
    failures = 0
    for _ in range(cases):
        d, k, n = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 51))
        X = rng.standard_normal((d, n))
        W = rng.standard_normal((k, d))
        data = Dataset(X, W @ X + rng.standard_normal((k, n)))
        rho = float(rng.uniform(0.1, 2.0))
        mc = estimate_sharpness_empirical(W, data, BallPerturbation(rho, k * d), samples, rng)
        z = abs(mc.mean - empirical_sharpness_closed_form(X, k, rho)) / mc.std_err
        worst = max(worst, z)
        failures += z > 4.0
    return SuiteResult("sharpness", cases, failures, worst, "MC within 4 SE of closed form")


def suite_mgf(cases: int = 100, samples: int = 2000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 8])
    worst = math.inf
    failures = 0
    for i in range(cases):
        mu, sigma = float(rng.normal()), float(rng.uniform(0.2, 3.0))
        h = rng.normal(mu, sigma, size=samples)
        chk = mgf_subgaussian_check(h, sigma ** 2, symmetric_grid(3 / sigma), seed=i)
        z = chk.slack / chk.std_err if chk.std_err > 0 else 0.0
        worst = min(worst, z)
        failures += z < -4.0
    return SuiteResult("mgf", cases, failures, worst, "slack >= -4 bootstrap SE (worst in SE units)")


def run_suites(selector: str = "all", seed: int = 0) -> list[SuiteResult]:
    names = SUITES if selector == "all" else (selector,)
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown suite {selector!r}; choose from {', '.join(SUITES + ('all',))}")
    return [globals()[f"suite_{n}"](seed=seed) for n in names]
