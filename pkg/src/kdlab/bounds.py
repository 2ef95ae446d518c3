"""Generalization bounds for the distilled student.

Upper bound (sub-Gaussian teacher gap), linear lower bound (central
condition), the sharpness-aware upper bound with its proxy constants, and
the tightening radius below which the sharpness-aware bound beats the
global-Lipschitz one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional


class DegenerateRootWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SharpnessConstants:
    """Constants entering the sharpness proxies.

    ``a, b`` loss range, ``L`` global Lipschitz constant, ``g0`` local
    gradient bound, ``alpha`` local smoothness, ``stab_kappa`` parameter
    stability, ``tau_op`` population curvature bound, ``n`` sample size and
    ``rho`` the perturbation radius.  ``g0 > L`` is allowed and simply
    yields no tightening interval.
    """

    a: float
    b: float
    L: float
    g0: float
    alpha: float
    stab_kappa: float
    tau_op: float
    n: int
    rho: float = 0.0

    def __post_init__(self):
        if self.b < self.a:
            raise ValueError(f"need b >= a, got a={self.a}, b={self.b}")
        for name in ("alpha", "stab_kappa", "tau_op", "rho", "g0", "L"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def flatness_gap(self) -> float:
        return self.L - self.g0

    def at(self, rho: float) -> "SharpnessConstants":
        return replace(self, rho=rho)


@dataclass(frozen=True)
class CentralCondition:
    eta: float
    c: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 < self.c <= 1:
            raise ValueError(f"c must lie in (0, 1], got {self.c}")


def stability_proxy(beta: float, a: float, b: float, n: int) -> float:
    """Variance proxy ``n/4 (2 beta + (b - a)/n)^2`` of a beta-uniformly-stable learner."""
    if beta < 0 or b < a or n < 1:
        raise ValueError("need beta >= 0, b >= a, n >= 1")
    return n / 4.0 * (2.0 * beta + (b - a) / n) ** 2


def upper_bound_thm1(gen_t: float, sigma: float, kn_upper: float) -> float:
    """``gen_T + sigma sqrt(2 K)``."""
    if sigma < 0 or kn_upper < 0:
        raise ValueError("sigma and kn_upper must be >= 0")
    return gen_t + sigma * math.sqrt(2.0 * kn_upper)


def lower_bound_thm2(gen_t: float, cc: CentralCondition, kn_upper: float) -> float:
    """``c gen_T - K / eta``."""
    return cc.c * gen_t - kn_upper / cc.eta


def central_from_subgaussian(sigma2: float, gen_t: float, eta: float) -> Optional[CentralCondition]:
    """Largest admissible ``c`` for a given ``eta`` when the gap is sub-Gaussian.

    Returns ``None`` when ``eta >= 2 gen_T / sigma^2`` (the boundary is
    excluded).  Raises ``ValueError`` if ``gen_T <= 0``.
    """
    if gen_t <= 0:
        raise ValueError("conversion requires gen_T > 0")
    if sigma2 < 0 or eta <= 0:
        raise ValueError("need sigma2 >= 0 and eta > 0")
    if sigma2 > 0 and not eta < 2.0 * gen_t / sigma2:
        return None
    return CentralCondition(eta, 1.0 - eta * sigma2 / (2.0 * gen_t))


# -- sharpness proxies --------------------------------------------------------

def proxy_sigma0(c: SharpnessConstants) -> float:
    return (c.stab_kappa * c.L + (c.b - c.a) / 2.0) / math.sqrt(c.n)


def proxy_sigma_u(c: SharpnessConstants) -> float:
    return (c.stab_kappa * (c.g0 + c.alpha * c.rho) + (c.b - c.a) / 2.0) / math.sqrt(c.n)


def proxy_nu(c: SharpnessConstants) -> float:
    r = c.rho
    return (c.alpha * c.stab_kappa * r / 2.0 + c.g0 * r + c.alpha * r * r / 2.0) / math.sqrt(c.n)


def proxy_sp_bound(c: SharpnessConstants) -> float:
    """Curvature bound ``tau_op rho^2 / 2`` on the expected population sharpness."""
    return 0.5 * c.tau_op * c.rho ** 2


def sharp_bound_thm3(gen_t: float, sp_bound: float, sigma_u: float, nu_rho: float,
                     kn_upper: float) -> float:
    return gen_t + sp_bound + (sigma_u + nu_rho) * math.sqrt(2.0 * kn_upper)


def a_coefficients(c: SharpnessConstants) -> tuple[float, float, float]:
    a0 = c.stab_kappa * c.flatness_gap
    a1 = 1.5 * c.alpha * c.stab_kappa + c.g0
    a2 = c.alpha / 2.0
    return a0, a1, a2


def sigma_gap_identity_check(c: SharpnessConstants) -> float:
    """Residual of ``sigma0 - sigma_u - nu = (A0 - A1 rho - A2 rho^2)/sqrt(n)``."""
    a0, a1, a2 = a_coefficients(c)
    lhs = proxy_sigma0(c) - proxy_sigma_u(c) - proxy_nu(c)
    rhs = (a0 - a1 * c.rho - a2 * c.rho ** 2) / math.sqrt(c.n)
    return lhs - rhs


def tightening_coefficients(c: SharpnessConstants, kn_upper: float) -> tuple[float, float, float]:
    s = math.sqrt(2.0 * kn_upper)
    a0, a1, a2 = a_coefficients(c)
    return a0 * s, a1 * s, a2 * s + 0.5 * c.tau_op * math.sqrt(c.n)


def positive_root(c0: float, c1: float, c2: float) -> Optional[float]:
    """Positive root of ``c2 r^2 + c1 r - c0`` for ``c0 > 0``, ``c1, c2 >= 0``.

    Uses the cancellation-free form ``2 c0 / (c1 + sqrt(c1^2 + 4 c2 c0))``,
    algebraically equal to ``(-c1 + sqrt(c1^2 + 4 c2 c0)) / (2 c2)``.
    """
    if c0 <= 0:
        return None
    if c1 == 0 and c2 == 0:
        return None
    return 2.0 * c0 / (c1 + math.sqrt(c1 * c1 + 4.0 * c2 * c0))


def rho_zero(c: SharpnessConstants, kn_upper: float) -> Optional[float]:
    """Radius below which the sharpness-aware bound is strictly tighter.

    ``None`` means no tightening interval: either the flatness gap
    ``L - g0`` is not positive, or ``kn_upper`` is zero.  When the whole
    quadratic vanishes (no curvature, no smoothness, ``g0 = 0``) the
    improvement holds for every radius and a :class:`DegenerateRootWarning`
    is emitted alongside ``None``.
    """
    if kn_upper < 0:
        raise ValueError("kn_upper must be >= 0")
    if c.flatness_gap <= 0:
        return None
    c0, c1, c2 = tightening_coefficients(c, kn_upper)
    if c0 > 0 and c1 == 0 and c2 == 0:
        warnings.warn("tightening quadratic is degenerate (c1 = c2 = 0)", DegenerateRootWarning,
                      stacklevel=2)
        return None
    return positive_root(c0, c1, c2)


@dataclass(frozen=True)
class BoundComparison:
    b_std: float
    b_sh: float
    improved: bool
    sigma0: float
    sigma_u: float
    nu: float
    sp_bound: float


def b_std_vs_b_sh(c: SharpnessConstants, gen_t: float, kn_upper: float,
                  sp_bound: float | None = None) -> BoundComparison:
    """Standard vs sharpness-aware bound at radius ``c.rho``.

    ``sp_bound`` defaults to the curvature proxy ``tau_op rho^2 / 2``.
    """
    if sp_bound is None:
        sp_bound = proxy_sp_bound(c)
    s0, su, nu = proxy_sigma0(c), proxy_sigma_u(c), proxy_nu(c)
    b_std = upper_bound_thm1(gen_t, s0, kn_upper)
    b_sh = sharp_bound_thm3(gen_t, sp_bound, su, nu, kn_upper)
    return BoundComparison(b_std, b_sh, bool(b_sh < b_std), s0, su, nu, sp_bound)


def rho_sweep(c: SharpnessConstants, gen_t: float, kn_upper: float, grid) -> list[dict]:
    """One row per radius in ``grid`` plus a trailing row at ``rho0`` when it exists."""
    rows = []
    for r in grid:
        cmp = b_std_vs_b_sh(c.at(float(r)), gen_t, kn_upper)
        rows.append({"row": "grid", "rho": float(r), "sigmaU": cmp.sigma_u, "nu": cmp.nu,
                     "spBound": cmp.sp_bound, "bStd": cmp.b_std, "bSh": cmp.b_sh,
                     "improved": cmp.improved})
    r0 = rho_zero(c, kn_upper)
    if r0 is not None:
        cmp = b_std_vs_b_sh(c.at(r0), gen_t, kn_upper)
        rows.append({"row": "rho0", "rho": r0, "sigmaU": cmp.sigma_u, "nu": cmp.nu,
                     "spBound": cmp.sp_bound, "bStd": cmp.b_std, "bSh": cmp.b_sh,
                     "improved": cmp.improved})
    return rows


@dataclass
class BoundReport:
    """Bound values for one run.

    ``sigma_source`` records which variance proxy fed the upper bound.
    Margins are ``bound - gen_S`` for upper bounds and ``gen_S - bound``
    for the lower bound, so a nonnegative margin means the inequality holds.
    """

    gen_t: float
    gen_t_se: float
    gen_s: float
    gen_s_se: float
    sigma: float
    sigma_source: str
    kn_upper: float
    kn_upper_se: float
    upper_bound: float
    upper_margin: float
    upper_margin_se: float
    lower_bound: Optional[float] = None
    lower_margin: Optional[float] = None
    lower_margin_se: Optional[float] = None
    central: Optional[CentralCondition] = None
    sharp_bound: Optional[float] = None
    b_std: Optional[float] = None
    b_sh: Optional[float] = None
    improved: Optional[bool] = None
    rho0: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "genT": self.gen_t, "genTStdErr": self.gen_t_se,
            "genS": self.gen_s, "genSStdErr": self.gen_s_se,
            "sigma": self.sigma, "sigmaSource": self.sigma_source,
            "knUpper": self.kn_upper, "knUpperStdErr": self.kn_upper_se,
            "upperBound": self.upper_bound, "upperMargin": self.upper_margin,
            "upperMarginStdErr": self.upper_margin_se,
            "lowerBound": self.lower_bound, "lowerMargin": self.lower_margin,
            "lowerMarginStdErr": self.lower_margin_se,
            "central": None if self.central is None else {"eta": self.central.eta, "c": self.central.c},
            "sharpBound": self.sharp_bound, "bStd": self.b_std, "bSh": self.b_sh,
            "improved": self.improved, "rho0": self.rho0,
        }


def build_bound_report(gen_t, gen_t_se, gen_s, gen_s_se, sigma, kn_upper, kn_upper_se,
                       sigma_source="mgf-fit", sharp: SharpnessConstants | None = None) -> BoundReport:
    """Evaluate the upper, lower and (optionally) sharpness-aware bounds.

    Standard errors of the margins combine the MC errors of ``gen_T``,
    ``gen_S`` and ``kn_upper`` in quadrature; ``kn_upper`` enters through
    the delta method.  The lower bound uses ``eta = gen_T / sigma^2``
    (so ``c = 1/2``) when ``gen_T > 0`` and ``sigma > 0``.
    """
    ub = upper_bound_thm1(gen_t, sigma, kn_upper)
    dk = sigma / math.sqrt(2.0 * kn_upper) if kn_upper > 0 else 0.0
    up_se = math.sqrt(gen_t_se ** 2 + gen_s_se ** 2 + (dk * kn_upper_se) ** 2)
    rep = BoundReport(gen_t, gen_t_se, gen_s, gen_s_se, sigma, sigma_source, kn_upper, kn_upper_se,
                      ub, ub - gen_s, up_se)
    if gen_t > 0 and sigma > 0:
        cc = central_from_subgaussian(sigma ** 2, gen_t, gen_t / sigma ** 2)
        if cc is not None:
            lb = lower_bound_thm2(gen_t, cc, kn_upper)
            rep.central = cc
            rep.lower_bound = lb
            rep.lower_margin = gen_s - lb
            rep.lower_margin_se = math.sqrt((cc.c * gen_t_se) ** 2 + gen_s_se ** 2
                                            + (kn_upper_se / cc.eta) ** 2)
    if sharp is not None:
        cmp = b_std_vs_b_sh(sharp, gen_t, kn_upper)
        rep.sharp_bound = cmp.b_sh
        rep.b_std, rep.b_sh, rep.improved = cmp.b_std, cmp.b_sh, cmp.improved
        rep.rho0 = rho_zero(sharp, kn_upper)
    return rep
