"""Tube-formula tail probabilities for the maximum of the chi-square process."""

import math
from typing import TYPE_CHECKING, Literal, Optional

import numpy as np
from scipy import optimize, special, stats

from tubeband.core.logging import get_logger
from tubeband.models.specs import TubeFormulaParams
from tubeband.utils.exceptions import DomainError, PreconditionError, SolverError

if TYPE_CHECKING:
    from tubeband.services.geometry import CurveGeometry

logger = get_logger(__name__)

BRACKET = (1.0, 50.0)
QUADRATURE_NODES = 64
QUADRATURE_TAIL = 1e-16

StudentizedMethod = Literal["closed", "quadrature"]


def chi2_upper_tail(m: int, t: float) -> float:
    """Upper chi-square tail; m = 0 is the point mass at zero."""
    if m < 0:
        raise DomainError(f"degrees of freedom must be >= 0, got {m}")
    if t < 0:
        raise DomainError(f"chi-square tail needs t >= 0, got {t}")
    if m == 0:
        return 1.0 if t == 0 else 0.0
    return float(special.gammaincc(m / 2.0, t / 2.0))


def _f_upper_tail(m: int, nu: int, b2: float) -> float:
    """E[chi2_upper_tail(m, b2 * tau^2)] for tau^2 ~ chi2_nu / nu."""
    if m == 0:
        return 1.0 if b2 == 0 else 0.0
    return float(stats.f.sf(b2 / m, m, nu))


def _check_b(b: float) -> None:
    if b < 0 or not math.isfinite(b):
        raise DomainError(f"threshold b must be finite and >= 0, got {b}")


def tube_tail_probability(params: TubeFormulaParams, b: float) -> float:
    """lead |Gamma| (G_k(b^2) - G_{k-2}(b^2)) + chi G_{k-1}(b^2), unclipped."""
    _check_b(b)
    k, b2 = params.k, b * b
    weight = params.lead_coeff * params.gamma_length
    return weight * (chi2_upper_tail(k, b2) - chi2_upper_tail(k - 2, b2)) + (
        params.euler_char * chi2_upper_tail(k - 1, b2)
    )


def _studentized_quadrature(params: TubeFormulaParams, b: float) -> float:
    nu = params.nu
    lo = math.sqrt(stats.chi2.ppf(QUADRATURE_TAIL, nu) / nu)
    hi = math.sqrt(stats.chi2.isf(QUADRATURE_TAIL, nu) / nu)
    nodes, weights = special.roots_legendre(QUADRATURE_NODES)
    tau = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    density = 2.0 * tau * nu * stats.chi2.pdf(nu * tau**2, nu)
    known = params.known_variance()
    values = np.array([tube_tail_probability(known, b * t) for t in tau])
    return float(0.5 * (hi - lo) * np.sum(weights * values * density))


def studentized_tube_tail(
    params: TubeFormulaParams, b: float, method: StudentizedMethod = "closed"
) -> float:
    """Tube approximation averaged over tau^2 ~ chi2_nu / nu.

    The closed form swaps every chi-square tail G_m(b^2) for the F(m, nu) tail at b^2/m.
    ``method="quadrature"`` integrates over the density of tau instead and serves as a check.
    """
    if params.nu is None:
        raise PreconditionError("studentized tail needs degrees of freedom nu")
    _check_b(b)
    if method == "quadrature":
        return _studentized_quadrature(params, b)
    if method != "closed":
        raise DomainError(f"unknown studentized method {method!r}")

    k, nu, b2 = params.k, params.nu, b * b
    weight = params.lead_coeff * params.gamma_length
    return weight * (_f_upper_tail(k, nu, b2) - _f_upper_tail(k - 2, nu, b2)) + (
        params.euler_char * _f_upper_tail(k - 1, nu, b2)
    )


def tail_probability(params: TubeFormulaParams, b: float) -> float:
    """Known-variance or studentized tail depending on whether nu is set."""
    if params.nu is None:
        return tube_tail_probability(params, b)
    return studentized_tube_tail(params, b)


def critical_value(params: TubeFormulaParams, alpha: float) -> float:
    """b with tail_probability(params, b) = alpha, searched on [1, 50]."""
    if not 0.0 < alpha <= 0.5:
        raise DomainError(f"alpha must lie in (0, 0.5], got {alpha}")

    def excess(b: float) -> float:
        return tail_probability(params, b) - alpha

    lo, hi = BRACKET
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo < 0 or f_hi > 0:
        raise SolverError(
            f"no sign change on [{lo}, {hi}]: tail-alpha = {f_lo:.3e}, {f_hi:.3e}"
        )
    b, info = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, full_output=True)
    if not info.converged:
        raise SolverError(f"root finder stopped after {info.iterations} iterations: {info.flag}")
    logger.debug(
        "Critical value solved",
        extra={"alpha": alpha, "b": b, "iterations": info.iterations, "nu": params.nu},
    )
    return float(b)


def tube_volume_fraction(params: TubeFormulaParams, p: int, theta: float) -> float:
    """Volume of the theta-tube about M as a fraction of the sphere S^{n-1}, n = p(k-1)."""
    if not 0.0 < theta <= math.pi / 2:
        raise DomainError(f"theta must lie in (0, pi/2], got {theta}")
    k = params.k
    n = p * (k - 1)
    if p < 2 or n <= k:
        raise DomainError(f"need p(k-1) > k, got p={p}, k={k}")

    c = math.cos(theta) ** 2
    weight = params.lead_coeff * params.gamma_length
    value = weight * stats.beta.sf(c, k / 2.0, (n - k) / 2.0)
    if k > 2:
        value -= weight * stats.beta.sf(c, (k - 2) / 2.0, (n - k + 2) / 2.0)
    value += params.euler_char * stats.beta.sf(c, (k - 1) / 2.0, (n - k + 1) / 2.0)
    return float(value)


def tube_params_from_geometry(
    geometry: "CurveGeometry", k: int, nu: Optional[int] = None
) -> TubeFormulaParams:
    return TubeFormulaParams(
        k=k, gamma_length=geometry.gamma_length, euler_char=geometry.euler_char, nu=nu
    )


def tube_error_order(params: TubeFormulaParams, p: int, b: float, theta_c: float) -> float:
    """Size of G_n(b^2 (1 + tan^2 theta_c)), the order of the tube-formula remainder."""
    _check_b(b)
    if not 0.0 < theta_c <= math.pi / 2:
        raise DomainError(f"theta_c must lie in (0, pi/2], got {theta_c}")
    n = p * (params.k - 1)
    if theta_c == math.pi / 2:
        return 0.0
    return chi2_upper_tail(n, b * b * (1.0 + math.tan(theta_c) ** 2))
