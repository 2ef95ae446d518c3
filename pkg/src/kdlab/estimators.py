"""Monte Carlo estimators for generalization gaps, sharpness and tail checks.

The loss is ``||y - W x||^2`` (no 1/2 factor).  With ``x ~ N(0, I_d)`` and
``y = W_star x + e``, ``e ~ N(0, nu^2 I_k)``, the population risk is
``k nu^2 + ||W - W_star||_F^2``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .numcore import BallPerturbation, make_stream, sample_ball_uniform, sample_matrix_normal
from .processes import (Dataset, ProblemSpec, StudentConfig, TeacherConfig, draw_dataset,
                        fit_teacher_posterior, generate_pseudo_labels, rank_project,
                        sample_teacher, student_kernel_params)

BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True)
class McSummary:
    mean: float
    std_err: float
    count: int
    min: float
    max: float

    @classmethod
    def from_values(cls, values) -> "McSummary":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("a summary needs at least two values")
        return cls(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), int(v.size),
                   float(v.min()), float(v.max()))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stdErr": self.std_err, "count": self.count,
                "min": self.min, "max": self.max}


@dataclass(frozen=True)
class GapSample:
    value: float
    trial: int


def population_risk(w: np.ndarray, spec: ProblemSpec) -> float:
    return spec.k * spec.nu ** 2 + float(np.sum((w - spec.w_star) ** 2))


def empirical_risk(w: np.ndarray, data: Dataset) -> float:
    return float(np.sum((data.Y - w @ data.X) ** 2)) / data.n


def population_risk_mc(w: np.ndarray, spec: ProblemSpec, samples: int, rng) -> McSummary:
    """Fresh-sample average of the loss; the oracle for :func:`population_risk`."""
    x = rng.standard_normal((spec.d, samples))
    y = spec.w_star @ x + spec.nu * rng.standard_normal((spec.k, samples))
    return McSummary.from_values(np.sum((y - w @ x) ** 2, axis=0))


def _map_trials(fn, trials: int, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def teacher_gap(trial: int, spec: ProblemSpec, tcfg: TeacherConfig, seed: int) -> float:
    data = draw_dataset(spec, make_stream(seed, trial, "teacher-data"))
    post = fit_teacher_posterior(data, tcfg, spec)
    w_t = sample_teacher(post, make_stream(seed, trial, "teacher-draw"))
    return population_risk(w_t, spec) - empirical_risk(w_t, data)


def student_gap(trial: int, spec: ProblemSpec, tcfg: TeacherConfig, scfg: StudentConfig,
                seed: int) -> float:
    data = draw_dataset(spec, make_stream(seed, trial, "student-data"))
    post = fit_teacher_posterior(data, tcfg, spec)
    w_t = sample_teacher(post, make_stream(seed, trial, "student-teacher-draw"))
    pseudo = generate_pseudo_labels(w_t, data, spec, make_stream(seed, trial, "student-pseudo"))
    theta0 = rank_project(w_t, data.X, scfg.rank)
    theta = sample_matrix_normal(student_kernel_params(theta0, scfg, post),
                                 make_stream(seed, trial, "student-draw"))
    return population_risk(theta, spec) - empirical_risk(theta, pseudo)


def estimate_gen_teacher(spec: ProblemSpec, tcfg: TeacherConfig, trials: int, seed: int,
                         workers: int = 1):
    """Teacher gap ``L_P(W_T) - L_D(W_T)`` over ``trials`` independent pipelines.

    Each trial owns the streams ``(seed, trial, "teacher-*")``, so the
    samples are bit-identical for any ``workers``.
    Returns ``(McSummary, list[GapSample])``.
    """
    if trials < 30:
        raise ValueError("estimate_gen_teacher needs at least 30 trials")
    vals = _map_trials(lambda t: teacher_gap(t, spec, tcfg, seed), trials, workers)
    return McSummary.from_values(vals), [GapSample(v, t) for t, v in enumerate(vals)]


def estimate_gen_student(spec: ProblemSpec, tcfg: TeacherConfig, scfg: StudentConfig,
                         trials: int, seed: int, workers: int = 1):
    """Student gap ``L_P(Theta) - L_{D_hat}(Theta)`` along the full distillation chain."""
    if trials < 30:
        raise ValueError("estimate_gen_student needs at least 30 trials")
    scfg.check_dims(spec.k, spec.d)
    vals = _map_trials(lambda t: student_gap(t, spec, tcfg, scfg, seed), trials, workers)
    return McSummary.from_values(vals), [GapSample(v, t) for t, v in enumerate(vals)]


# -- sharpness ----------------------------------------------------------------

def empirical_sharpness_closed_form(X: np.ndarray, k: int, rho: float) -> float:
    """``E_U L_D(W+U) - L_D(W) = rho^2 k tr(X X^T) / (n (kd + 2))`` for squared loss."""
    d, n = X.shape
    return rho ** 2 * k * float(np.sum(X * X)) / (n * (k * d + 2))


def population_sharpness_closed_form(k: int, d: int, rho: float) -> float:
    """``rho^2 k d / (kd + 2)`` under standard normal features."""
    return rho ** 2 * k * d / (k * d + 2)


def _ball_matrices(w: np.ndarray, p: BallPerturbation, samples: int, rng) -> np.ndarray:
    k, d = w.shape
    u = sample_ball_uniform(BallPerturbation(p.radius, k * d), rng, size=samples)
    return u.reshape(samples, k, d)


def estimate_sharpness_empirical(w: np.ndarray, data: Dataset, p: BallPerturbation,
                                 mc_samples: int, rng) -> McSummary:
    """MC estimate of ``E_U[L_D(W + U)] - L_D(W)`` with ``U`` uniform on the ball in R^{k d}."""
    u = _ball_matrices(w, p, mc_samples, rng)
    resid = data.Y - w @ data.X
    base = float(np.sum(resid ** 2)) / data.n
    pert = resid[None] - u @ data.X
    vals = np.sum(pert ** 2, axis=(1, 2)) / data.n - base
    return McSummary.from_values(vals)


def estimate_sharpness_population(w: np.ndarray, spec: ProblemSpec, p: BallPerturbation,
                                  mc_samples: int, rng) -> McSummary:
    """MC estimate of ``E_U[L_P(W + U)] - L_P(W)`` using the closed-form risk per draw."""
    u = _ball_matrices(w, p, mc_samples, rng)
    diff = (w - spec.w_star)[None] + u
    base = float(np.sum((w - spec.w_star) ** 2))
    vals = np.sum(diff ** 2, axis=(1, 2)) - base
    return McSummary.from_values(vals)


# -- tail checks --------------------------------------------------------------

def _values(samples) -> np.ndarray:
    return np.asarray([s.value if isinstance(s, GapSample) else s for s in samples], dtype=float)


def log_mgf(h: np.ndarray, lam) -> np.ndarray:
    """Empirical ``log mean exp(lam h)`` for each ``lam``, via shifted log-sum-exp."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return logsumexp(np.outer(lam, h), axis=1) - np.log(h.size)


def symmetric_grid(half_width: float, points: int = 41) -> np.ndarray:
    """``points`` evenly spaced values on ``[-half_width, half_width]`` with the zero dropped.

    Built from exact multiples so the grid is symmetric and never contains
    a near-zero rounding residue.
    """
    m = points // 2
    pos = half_width * np.arange(1, m + 1) / m
    return np.concatenate([-pos[::-1], pos])


def default_lambda_grid(h: np.ndarray, width: float = 3.0, points: int = 41) -> np.ndarray:
    """Symmetric grid on ``[-width/sd, width/sd]`` without zero."""
    sd = float(np.std(h, ddof=1)) if h.size > 1 else 0.0
    if sd == 0:
        sd = 1.0
    return symmetric_grid(width / sd, points)


@dataclass(frozen=True)
class MgfCheck:
    """Worst slack over the grid, where it occurs, and its bootstrap SE."""

    slack: float
    lam: float
    std_err: float
    slacks: np.ndarray


def _mgf_slacks(h, sigma2, grid):
    return grid * h.mean() + grid ** 2 * sigma2 / 2.0 - log_mgf(h, grid)


def _bootstrap(h: np.ndarray, stat, resamples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, h.size, size=(resamples, h.size))
    vals = np.array([stat(h[i]) for i in idx])
    return float(vals.std(ddof=1))


def mgf_subgaussian_check(samples, sigma2: float, lambda_grid=None,
                          bootstrap: int = BOOTSTRAP_RESAMPLES, seed: int = 0,
                          min_samples: int = 1000) -> MgfCheck:
    """Sub-Gaussian MGF slack ``lam mean + lam^2 sigma2/2 - log E[exp(lam H)]``.

    The minimum over ``lambda_grid`` is returned together with a bootstrap
    standard error of the slack at the minimizing ``lam``.
    """
    h = _values(samples)
    if h.size < min_samples:
        raise ValueError(f"mgf_subgaussian_check needs at least {min_samples} samples")
    grid = default_lambda_grid(h) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    slacks = _mgf_slacks(h, sigma2, grid)
    i = int(np.argmin(slacks))
    lam = grid[i:i + 1]
    se = _bootstrap(h, lambda x: _mgf_slacks(x, sigma2, lam)[0], bootstrap, seed) if bootstrap else 0.0
    return MgfCheck(float(slacks[i]), float(grid[i]), se, slacks)


def fit_sigma(samples, lambda_grid=None) -> float:
    """Smallest ``sigma`` with nonnegative MGF slack at every grid point.

    The slack is increasing in ``sigma^2`` at each ``lam != 0``, so the
    minimal value is ``max_lam 2 (log M(lam) - lam mean) / lam^2`` exactly.
    """
    h = _values(samples)
    grid = default_lambda_grid(h) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    grid = grid[grid != 0]
    need = 2.0 * (log_mgf(h, grid) - grid * h.mean()) / grid ** 2
    return float(np.sqrt(max(0.0, float(need.max()))))


def central_condition_check(samples, cc, bootstrap: int = BOOTSTRAP_RESAMPLES,
                            seed: int = 0) -> tuple[float, float]:
    """Slack ``-c eta mean - log E[exp(-eta H)]`` and its bootstrap SE."""
    h = _values(samples)

    def stat(x):
        return float(-cc.c * cc.eta * x.mean() - log_mgf(x, -cc.eta)[0])

    se = _bootstrap(h, stat, bootstrap, seed) if bootstrap and h.size > 1 else 0.0
    return stat(h), se
