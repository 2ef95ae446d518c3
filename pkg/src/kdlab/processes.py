"""Teacher and student processes in the linear Gaussian model.

Teacher: ``D_n -> Gibbs posterior -> W_T``.
Student: ``W_T -> pseudo labels -> rank-kappa projection -> Theta``.

Features are column-stacked, ``X`` is ``d x n`` with i.i.d. ``N(0, I_d)``
columns, labels ``Y`` are ``k x n`` and parameters ``W`` are ``k x d``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .numcore import MatrixNormalParams, ParameterError, cholesky_lower, as_pd, sample_matrix_normal

MATCH_TEACHER = "match-teacher"
COND_WARN = 1e12
SVD_TIE_TOL = 1e-10


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Generative world: ``Y = W_star X + E`` with ``E ~ MN(0, I_k, nu^2 I_n)``."""

    d: int
    k: int
    n: int
    w_star: np.ndarray
    nu: float

    def __post_init__(self):
        for name in ("d", "k", "n"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        w = np.atleast_2d(np.asarray(self.w_star, dtype=float))
        if w.shape != (self.k, self.d):
            raise ParameterError(f"w_star must be {self.k}x{self.d}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ParameterError("w_star has non-finite entries")
        if not self.nu > 0:
            raise ParameterError(f"nu must be > 0, got {self.nu}")
        object.__setattr__(self, "w_star", w)


@dataclass(frozen=True)
class TeacherConfig:
    lam: float
    beta_t: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError(f"lambda must be > 0, got {self.lam}")
        if not self.beta_t > 0:
            raise ParameterError(f"betaT must be > 0, got {self.beta_t}")


@dataclass(frozen=True)
class StudentConfig:
    """Student capacity and sampling geometry.

    ``sigma_s`` is either a PD ``d x d`` matrix or ``"match-teacher"``,
    which resolves to the teacher's ``Sigma_T`` for every dataset.
    """

    rank: int
    sigma_s: Union[np.ndarray, Literal["match-teacher"]] = MATCH_TEACHER

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ParameterError(f"rankKappa must be >= 1, got {self.rank}")
        if isinstance(self.sigma_s, str):
            if self.sigma_s != MATCH_TEACHER:
                raise ParameterError(f"unknown sigma_s mode {self.sigma_s!r}")
        else:
            object.__setattr__(self, "sigma_s", as_pd(self.sigma_s, "sigma_s"))

    def check_dims(self, k: int, d: int):
        if not 1 <= self.rank <= min(k, d):
            raise ParameterError(f"rankKappa must lie in [1, {min(k, d)}], got {self.rank}")
        if not isinstance(self.sigma_s, str) and self.sigma_s.shape != (d, d):
            raise ParameterError(f"sigma_s must be {d}x{d}, got {self.sigma_s.shape}")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    kind: Literal["real", "pseudo"] = "real"

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[1] != self.Y.shape[1]:
            raise ParameterError(f"incompatible shapes X{self.X.shape} Y{self.Y.shape}")
        if self.kind not in ("real", "pseudo"):
            raise ParameterError(f"unknown dataset kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GibbsPosterior:
    """``q_T(W | D_n) = MN(mean, I_k, col_cov)``."""

    mean: np.ndarray
    col_cov: np.ndarray

    @property
    def k(self) -> int:
        return self.mean.shape[0]

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    def as_matrix_normal(self) -> MatrixNormalParams:
        return MatrixNormalParams(self.mean, np.eye(self.k), self.col_cov)


def draw_dataset(spec: ProblemSpec, rng: np.random.Generator) -> Dataset:
    X = rng.standard_normal((spec.d, spec.n))
    E = spec.nu * rng.standard_normal((spec.k, spec.n))
    return Dataset(X, spec.w_star @ X + E, "real")


def fit_teacher_posterior(data: Dataset, cfg: TeacherConfig, spec: ProblemSpec) -> GibbsPosterior:
    """Closed-form Gibbs posterior.

    ``Sigma_T = (lam I + beta_T/nu^2 X X^T)^{-1}`` and
    ``W_bar = beta_T/nu^2 Y X^T Sigma_T``.  A condition number above 1e12
    triggers an :class:`IllConditionedWarning`; the result is still returned.
    """
    if data.kind != "real":
        raise ParameterError("teacher is fitted on real data only")
    X, Y = data.X, data.Y
    if X.shape[0] != spec.d or Y.shape[0] != spec.k:
        raise ParameterError("dataset dims do not match the problem spec")
    scale = cfg.beta_t / spec.nu ** 2
    precision = cfg.lam * np.eye(spec.d) + scale * (X @ X.T)
    precision = 0.5 * (precision + precision.T)
    cond = np.linalg.cond(precision)
    if cond > COND_WARN:
        warnings.warn(f"teacher precision has condition number {cond:.3e}",
                      IllConditionedWarning, stacklevel=2)
    chol = cholesky_lower(precision, "teacher precision")
    linv = solve_triangular(chol, np.eye(spec.d), lower=True)
    sigma_t = linv.T @ linv
    sigma_t = 0.5 * (sigma_t + sigma_t.T)
    # W_bar^T = Sigma_T (scale X Y^T), solved against the precision directly
    mean = cho_solve((chol, True), scale * (X @ Y.T)).T
    return GibbsPosterior(mean, sigma_t)


def sample_teacher(post: GibbsPosterior, rng: np.random.Generator, size: int | None = None):
    return sample_matrix_normal(post.as_matrix_normal(), rng, size=size)


def generate_pseudo_labels(w_t: np.ndarray, data: Dataset, spec: ProblemSpec,
                           rng: np.random.Generator) -> Dataset:
    """Relabel the real features through the noisy channel with ``W_T``."""
    if data.kind != "real":
        raise ParameterError("pseudo labels are generated from a real dataset")
    noise = spec.nu * rng.standard_normal((spec.k, data.n))
    return Dataset(data.X, w_t @ data.X + noise, "pseudo")


def rank_project(w_t: np.ndarray, X: np.ndarray, kappa: int, return_degenerate: bool = False):
    """Best rank-``kappa`` approximation of ``W_T`` in prediction space.

    Returns ``Theta = U_k U_k^T W_T`` with ``U_k`` the top-``kappa`` left
    singular vectors of ``W_T X``, so ``Theta X`` is the Eckart-Young
    optimum among rank-``kappa`` predictions.

    With ``return_degenerate=True`` a second value flags a tie between the
    ``kappa``-th and ``(kappa+1)``-th singular values (projector not unique).
    """
    w_t = np.atleast_2d(np.asarray(w_t, dtype=float))
    k, d = w_t.shape
    if not 1 <= int(kappa) <= min(k, d):
        raise ParameterError(f"kappa must lie in [1, {min(k, d)}], got {kappa}")
    u, s, _ = np.linalg.svd(w_t @ X, full_matrices=False)
    uk = u[:, :kappa]
    theta = uk @ (uk.T @ w_t)
    if not return_degenerate:
        return theta
    degenerate = bool(kappa < s.size and s[kappa - 1] - s[kappa] <= SVD_TIE_TOL * max(1.0, s[0]))
    return theta, degenerate


def student_kernel_params(theta0: np.ndarray, scfg: StudentConfig,
                          post: GibbsPosterior) -> MatrixNormalParams:
    sigma_s = post.col_cov if isinstance(scfg.sigma_s, str) else scfg.sigma_s
    return MatrixNormalParams(theta0, np.eye(theta0.shape[0]), sigma_s)


def resolve_sigma_s(scfg: StudentConfig, post: GibbsPosterior) -> np.ndarray:
    return post.col_cov if isinstance(scfg.sigma_s, str) else scfg.sigma_s
