"""Distillation-divergence ledger for the linear Gaussian model.

The process-level divergence ``K_n`` is bounded by

    E_D[ (Bias + k Var) / (2 nu^2) ]  +  E_D[ Apx + Cov + Spread ]
         dataset shift                     algorithm shift

All per-dataset terms are closed form except ``Apx``, which averages the
rank-bottleneck residual over teacher draws.  ``knUpper`` is an upper
bound on ``K_n``; the exact mixture divergence is never computed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .numcore import logdet_pd, make_stream, solve_pd
from .processes import (GibbsPosterior, ProblemSpec, StudentConfig, TeacherConfig,
                        draw_dataset, fit_teacher_posterior, rank_project,
                        resolve_sigma_s, sample_teacher)


def bias_term(post: GibbsPosterior, w_star: np.ndarray, X: np.ndarray) -> float:
    """``||(W_bar - W_star) X||_F^2``."""
    return float(np.sum(((post.mean - w_star) @ X) ** 2))


def var_term(post: GibbsPosterior, X: np.ndarray) -> float:
    """``tr(X^T Sigma_T X)``; the factor ``k`` is applied by the caller."""
    return float(np.sum(X * (post.col_cov @ X)))


def dataset_shift_bound(bias: float, var: float, k: int, nu: float) -> float:
    return (bias + k * var) / (2.0 * nu ** 2)


def _apx_draws(post, X, kappa, lam, scale, rng, mc_samples):
    values = np.empty(mc_samples)
    ties = 0
    for i, w in enumerate(sample_teacher(post, rng, size=mc_samples)):
        theta, tie = rank_project(w, X, kappa, return_degenerate=True)
        resid = w - theta
        values[i] = lam * float(np.sum(resid ** 2)) + scale * float(np.sum((resid @ X) ** 2))
        ties += tie
    return values, ties


def apx_term(post: GibbsPosterior, X: np.ndarray, kappa: int, lam: float, beta_t: float,
             nu: float, rng: np.random.Generator, mc_samples: int = 1000):
    """Monte Carlo estimate of the rank-bottleneck cost.

    Averages ``lam ||W - Theta(W)||^2 + beta_T/nu^2 ||(W - Theta(W)) X||^2``
    over ``W ~ q_T``.  Returns ``(estimate, std_error)``.
    """
    if mc_samples < 100:
        raise ValueError("apx_term needs at least 100 posterior samples")
    vals, _ = _apx_draws(post, X, kappa, lam, beta_t / nu ** 2, rng, mc_samples)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(mc_samples))


def cov_term(sigma_s: np.ndarray, sigma_t: np.ndarray, k: int) -> float:
    """``k/2 (tr(St^-1 Ss) - d + log det St - log det Ss)``."""
    d = sigma_t.shape[0]
    val = 0.5 * k * (float(np.trace(solve_pd(sigma_t, sigma_s, "Sigma_T"))) - d
                     + logdet_pd(sigma_t, "Sigma_T") - logdet_pd(sigma_s, "Sigma_S"))
    return max(0.0, val)


def spread_term(post: GibbsPosterior, X: np.ndarray, k: int, lam: float, beta_t: float,
                nu: float) -> float:
    return k * (lam * float(np.trace(post.col_cov)) + beta_t / nu ** 2 * var_term(post, X))


@dataclass
class LedgerRow:
    """Per-dataset terms."""

    trial: int
    bias: float
    var: float
    dataset_shift: float
    apx: float
    apx_std_err: float
    cov: float
    spread: float
    algo_shift: float
    kn_upper: float
    algo_shift_doubled: float
    kn_upper_doubled: float
    degenerate: bool = False


@dataclass
class DivergenceLedger:
    """Dataset-averaged ledger.

    ``algo_shift = apx + cov + spread`` and ``kn_upper = dataset_shift +
    algo_shift``.  The ``*_doubled`` fields carry the looser variant with
    ``Apx`` and ``Spread`` each multiplied by two.
    """

    k: int
    nu: float
    bias: float
    var: float
    dataset_shift: float
    apx: float
    cov: float
    spread: float
    algo_shift: float
    kn_upper: float
    algo_shift_doubled: float
    kn_upper_doubled: float
    std_err: dict = field(default_factory=dict)
    trials: int = 0
    degenerate_trials: int = 0
    rows: list = field(default_factory=list, repr=False)

    def identity_residuals(self) -> dict:
        return {
            "datasetShift": abs(self.dataset_shift - dataset_shift_bound(self.bias, self.var, self.k, self.nu)),
            "knUpper": abs(self.kn_upper - (self.dataset_shift + self.algo_shift)),
            "knUpperDoubled": abs(self.kn_upper_doubled - (self.dataset_shift + self.algo_shift_doubled)),
        }

    def to_dict(self, include_rows: bool = False) -> dict:
        out = {
            "bias": self.bias, "var": self.var, "datasetShift": self.dataset_shift,
            "apx": self.apx, "cov": self.cov, "spread": self.spread,
            "algoShift": self.algo_shift, "knUpper": self.kn_upper,
            "algoShiftDoubled": self.algo_shift_doubled, "knUpperDoubled": self.kn_upper_doubled,
            "stdErr": dict(self.std_err), "trials": self.trials,
            "degenerateTrials": self.degenerate_trials,
        }
        if include_rows:
            out["rows"] = [asdict(r) for r in self.rows]
        return out


def ledger_row(trial: int, spec: ProblemSpec, tcfg: TeacherConfig, scfg: StudentConfig,
               posterior_samples: int, seed: int) -> LedgerRow:
    """Terms for one fresh dataset drawn from the ``(trial, "ledger-*")`` streams."""
    data = draw_dataset(spec, make_stream(seed, trial, "ledger-data"))
    post = fit_teacher_posterior(data, tcfg, spec)
    X, k = data.X, spec.k
    b = bias_term(post, spec.w_star, X)
    v = var_term(post, X)
    ds = dataset_shift_bound(b, v, k, spec.nu)
    if posterior_samples < 100:
        raise ValueError("apx_term needs at least 100 posterior samples")
    vals, ties = _apx_draws(post, X, scfg.rank, tcfg.lam, tcfg.beta_t / spec.nu ** 2,
                            make_stream(seed, trial, "ledger-apx"), posterior_samples)
    apx, apx_se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
    cv = cov_term(resolve_sigma_s(scfg, post), post.col_cov, k)
    sp = spread_term(post, X, k, tcfg.lam, tcfg.beta_t, spec.nu)
    degenerate = ties > 0
    alg = apx + cv + sp
    alg2 = 2.0 * apx + cv + 2.0 * sp
    return LedgerRow(trial, b, v, ds, apx, apx_se, cv, sp, alg, ds + alg, alg2, ds + alg2, degenerate)


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def assemble_ledger(spec: ProblemSpec, tcfg: TeacherConfig, scfg: StudentConfig,
                    dataset_trials: int, posterior_samples: int, seed: int,
                    workers: int = 1) -> DivergenceLedger:
    """Average every term over ``dataset_trials`` fresh datasets.

    Trials are independent and may be evaluated by a thread pool; the
    reduction runs in trial order so the result does not depend on
    ``workers``.
    """
    if dataset_trials < 10:
        raise ValueError("assemble_ledger needs at least 10 dataset trials")
    scfg.check_dims(spec.k, spec.d)

    def run(t):
        return ledger_row(t, spec, tcfg, scfg, posterior_samples, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, range(dataset_trials)))
    else:
        rows = [run(t) for t in range(dataset_trials)]

    col = {name: np.array([getattr(r, name) for r in rows])
           for name in ("bias", "var", "apx", "cov", "spread", "kn_upper", "kn_upper_doubled",
                        "dataset_shift", "algo_shift")}
    bias, var = float(col["bias"].mean()), float(col["var"].mean())
    apx, cv, sp = float(col["apx"].mean()), float(col["cov"].mean()), float(col["spread"].mean())
    ds = dataset_shift_bound(bias, var, spec.k, spec.nu)
    alg = apx + cv + sp
    alg2 = 2.0 * apx + cv + 2.0 * sp
    std_err = {
        "bias": _se(col["bias"]), "var": _se(col["var"]), "datasetShift": _se(col["dataset_shift"]),
        "apx": _se(col["apx"]), "cov": _se(col["cov"]), "spread": _se(col["spread"]),
        "algoShift": _se(col["algo_shift"]), "knUpper": _se(col["kn_upper"]),
        "knUpperDoubled": _se(col["kn_upper_doubled"]),
    }
    return DivergenceLedger(spec.k, spec.nu, bias, var, ds, apx, cv, sp, alg, ds + alg, alg2, ds + alg2,
                            std_err, dataset_trials, sum(r.degenerate for r in rows), rows)
