"""Distribution primitives and closed-form divergences.

Matrix-normal sampling, uniform-ball perturbations, Gaussian KL
divergences and a discrete Donsker-Varadhan slack evaluator.  Everything
here is pure given its inputs; random draws come from an explicitly passed
``numpy.random.Generator``.

Vectorization is column-major throughout: ``vec(A)`` stacks the columns of
``A``, so ``A ~ MN(M, U, V)`` means ``vec(A) ~ N(vec(M), kron(V, U))``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

PD_TOL = 1e-10


class ParameterError(ValueError):
    """Invalid distribution or model parameters."""


class NumericError(ArithmeticError):
    """A computation hit a singular or badly conditioned matrix."""


# ---------------------------------------------------------------------------
# random streams


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def make_stream(seed: int, trial: int = 0, tag: str = "") -> np.random.Generator:
    """Counter-based random stream.

    The pair ``(trial, tag)`` together with the 64-bit master ``seed``
    fully determines the stream, so trials can be evaluated in any order or
    on any number of workers and still see identical draws.
    """
    if not 0 <= int(seed) < 2**64 or int(trial) < 0:
        raise ParameterError(f"seed must be a 64-bit unsigned integer and trial >= 0, got {seed}, {trial}")
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=(int(trial), _tag_key(tag)))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# PD helpers


def as_pd(a, name: str = "matrix", tol: float = PD_TOL) -> np.ndarray:
    """Return a symmetrized copy of ``a`` after checking positive definiteness."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > tol * scale:
        raise ParameterError(f"{name} is not symmetric")
    a = 0.5 * (a + a.T)
    lo = float(np.linalg.eigvalsh(a)[0])
    if lo <= 0.0:
        raise ParameterError(f"{name} is not positive definite (min eigenvalue {lo:.3e})")
    return a


def cholesky_lower(a: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericError(f"{name} is singular or indefinite "
                           f"(condition number {np.linalg.cond(a):.3e})") from None


def logdet_pd(a: np.ndarray, name: str = "matrix") -> float:
    """Log-determinant of a PD matrix through its Cholesky factor."""
    chol = cholesky_lower(np.asarray(a, dtype=float), name)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def solve_pd(a: np.ndarray, b: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Solve ``a x = b`` for PD ``a`` using two triangular solves."""
    chol = cholesky_lower(np.asarray(a, dtype=float), name)
    return cho_solve((chol, True), b)


# ---------------------------------------------------------------------------
# matrix normal


@dataclass(frozen=True)
class MatrixNormalParams:
    """Parameters of ``MN(mean, row_cov, col_cov)``.

    Covariances are checked for positive definiteness (tolerance 1e-10) and
    symmetrized on construction.
    """

    mean: np.ndarray
    row_cov: np.ndarray
    col_cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        if not np.all(np.isfinite(mean)):
            raise ParameterError("mean has non-finite entries")
        row = as_pd(self.row_cov, "row_cov")
        col = as_pd(self.col_cov, "col_cov")
        if mean.shape != (row.shape[0], col.shape[0]):
            raise ParameterError(
                f"mean shape {mean.shape} inconsistent with covariances "
                f"{row.shape[0]}x{row.shape[0]} and {col.shape[0]}x{col.shape[0]}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "row_cov", row)
        object.__setattr__(self, "col_cov", col)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    def vec_cov(self) -> np.ndarray:
        """Covariance of ``vec(A)``, i.e. ``kron(col_cov, row_cov)``."""
        return np.kron(self.col_cov, self.row_cov)


def sample_matrix_normal(params: MatrixNormalParams, rng: np.random.Generator,
                         size: int | None = None) -> np.ndarray:
    """Draw from a matrix normal distribution.

    Uses ``A = M + L_U Z L_V^T`` with ``U = L_U L_U^T`` and ``V = L_V L_V^T``.

    Parameters
    ----------
    params : MatrixNormalParams
    rng : numpy.random.Generator
    size : int, optional
        Number of independent draws.  When given the result has shape
        ``(size, k, n)``; otherwise a single ``(k, n)`` matrix is returned.
    """
    k, n = params.shape
    lu = cholesky_lower(params.row_cov, "row_cov")
    lv = cholesky_lower(params.col_cov, "col_cov")
    if size is None:
        z = rng.standard_normal((k, n))
        return params.mean + lu @ z @ lv.T
    z = rng.standard_normal((size, k, n))
    return params.mean + np.einsum("ij,sjl,ml->sim", lu, z, lv, optimize=True)


# ---------------------------------------------------------------------------
# ball perturbations


@dataclass(frozen=True)
class BallPerturbation:
    radius: float
    dim: int

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ParameterError(f"radius must be a finite nonnegative number, got {self.radius}")
        if int(self.dim) < 1:
            raise ParameterError(f"dim must be >= 1, got {self.dim}")

    def second_moment(self) -> float:
        """``E||u||^2`` for the uniform law on the ball."""
        return self.radius ** 2 * self.dim / (self.dim + 2)


def sample_ball_uniform(p: BallPerturbation, rng: np.random.Generator,
                        size: int | None = None) -> np.ndarray:
    """Uniform draws from the closed Euclidean ball of radius ``p.radius``.

    Direction is a normalized isotropic Gaussian, radius is ``r * V**(1/m)``
    with ``V ~ U(0, 1)``.  The result is rescaled onto the sphere if
    rounding ever pushes a norm above ``r``, so ``||u|| <= r`` holds exactly.
    """
    m = int(p.dim)
    shape = (m,) if size is None else (size, m)
    if p.radius == 0:
        return np.zeros(shape)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    # a zero gaussian vector has probability zero; guard anyway
    norms = np.where(norms == 0, 1.0, norms)
    radial = p.radius * rng.random(shape[:-1] + (1,)) ** (1.0 / m)
    u = g / norms * radial
    over = _ball_norm(u, p.radius)
    while np.any(over > p.radius):
        u = np.where(over > p.radius, u * (p.radius / over) * (1.0 - 2.0 ** -52), u)
        over = _ball_norm(u, p.radius)
    return u


def _ball_norm(u: np.ndarray, r: float) -> np.ndarray:
    # squares over/underflow outside this range; measure in units of r there
    if 1e-150 < r < 1e150:
        return np.linalg.norm(u, axis=-1, keepdims=True)
    return r * np.linalg.norm(u / r, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# KL divergences


def kl_gaussian_same_cov(m1, m0, cov) -> float:
    """``KL(N(m1, cov) || N(m0, cov)) = 0.5 (m1-m0)^T cov^{-1} (m1-m0)``."""
    m1 = np.asarray(m1, dtype=float).ravel()
    m0 = np.asarray(m0, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if m1.shape != m0.shape or cov.shape != (m1.size, m1.size):
        raise ParameterError(f"dimension mismatch: {m1.shape}, {m0.shape}, {cov.shape}")
    diff = m1 - m0
    return max(0.0, 0.5 * float(diff @ solve_pd(cov, diff, "cov")))


def kl_gaussian(m1, cov1, m0, cov0) -> float:
    """KL divergence between two full-covariance multivariate Gaussians."""
    m1 = np.asarray(m1, dtype=float).ravel()
    m0 = np.asarray(m0, dtype=float).ravel()
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    d = m1.size
    diff = m1 - m0
    tr = float(np.trace(solve_pd(cov0, cov1, "cov0")))
    maha = float(diff @ solve_pd(cov0, diff, "cov0"))
    val = 0.5 * (tr - d + maha + logdet_pd(cov0, "cov0") - logdet_pd(cov1, "cov1"))
    return max(0.0, val)


def kl_matrix_normal(qs: MatrixNormalParams, qt: MatrixNormalParams) -> float:
    """Closed-form ``KL(qs || qt)`` for matrix normals with identity row covariance.

    Equals ``k/2 (tr(St^-1 Ss) - d + log det St - log det Ss)
    + 1/2 tr((Ms - Mt) St^-1 (Ms - Mt)^T)``.
    """
    if qs.shape != qt.shape:
        raise ParameterError(f"shape mismatch {qs.shape} vs {qt.shape}")
    k, d = qs.shape
    eye = np.eye(k)
    if not (np.allclose(qs.row_cov, eye, atol=PD_TOL) and np.allclose(qt.row_cov, eye, atol=PD_TOL)):
        raise ParameterError("kl_matrix_normal requires identity row covariances")
    s_s, s_t = qs.col_cov, qt.col_cov
    cov_part = 0.5 * k * (float(np.trace(solve_pd(s_t, s_s, "Sigma_T"))) - d
                          + logdet_pd(s_t, "Sigma_T") - logdet_pd(s_s, "Sigma_S"))
    gap = qs.mean - qt.mean
    mean_part = 0.5 * float(np.sum(gap * solve_pd(s_t, gap.T, "Sigma_T").T))
    return max(0.0, cov_part + mean_part)


# ---------------------------------------------------------------------------
# Donsker-Varadhan


def dv_check(p, q, g) -> float:
    """Slack of the Donsker-Varadhan inequality on a finite space.

    Returns ``KL(Q||P) + log E_P[exp g] - E_Q[g]``, which is nonnegative
    whenever ``Q << P``; it vanishes exactly at ``g = log(dQ/dP) + const``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (p.shape == q.shape == g.shape) or p.ndim != 1:
        raise ParameterError("p, q and g must be 1-d arrays of equal length")
    if np.any(p < 0) or np.any(q < 0) or not np.all(np.isfinite(g)):
        raise ParameterError("probabilities must be nonnegative and g finite")
    p = p / p.sum()
    q = q / q.sum()
    if np.any((q > 0) & (p == 0)):
        raise ParameterError("Q is not absolutely continuous with respect to P")
    sq = q > 0
    kl = float(np.sum(q[sq] * (np.log(q[sq]) - np.log(p[sq]))))
    sp = p > 0
    gmax = float(np.max(g[sp]))
    log_mgf = gmax + float(np.log(np.sum(p[sp] * np.exp(g[sp] - gmax))))
    return kl + log_mgf - float(np.sum(q[sq] * g[sq]))
