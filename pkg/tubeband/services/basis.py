"""Regression basis evaluation: polynomial, trigonometric and equally spaced B-splines."""

import math
from typing import Union

import numpy as np

from tubeband.models.specs import MAX_BSPLINE_DEGREE, BasisFamily, BasisSpec
from tubeband.utils.exceptions import DomainError, UnsupportedError

ArrayLike = Union[float, np.ndarray]

SQRT2 = math.sqrt(2.0)


def _truncated_power(
    z: np.ndarray, exponent: int, right_limit: bool, left: np.ndarray
) -> np.ndarray:
    """(z)_+^e; for e = 0 the step at z = 0 follows the limit side in x."""
    if exponent == 0:
        if not right_limit:
            return (z >= 0).astype(float)
        return np.where(left, z >= 0, z > 0).astype(float)
    return np.where(z > 0, z, 0.0) ** exponent


def bspline_values(
    degree: int, t: ArrayLike, order: int = 0, left: Union[bool, np.ndarray] = False
) -> np.ndarray:
    """Cardinal B-spline B_d (or its derivative) from the truncated power expansion.

    B_d(t) = sum_{r=0}^{d+1} (-1)^{d+1-r} C(d+1, r) (r - t)_+^d / d!

    Derivatives lower the exponent; at knots they take the limit from the right, or from the left
    where ``left`` is set.
    """
    if degree < 0:
        raise DomainError(f"B-spline degree must be nonnegative, got {degree}")
    if degree > MAX_BSPLINE_DEGREE:
        raise DomainError(f"B-spline degree {degree} exceeds {MAX_BSPLINE_DEGREE}")
    if order > degree:
        raise UnsupportedError(f"derivative of order {order} needs degree >= {order}, got {degree}")

    t = np.asarray(t, dtype=float)
    left = np.broadcast_to(np.asarray(left, dtype=bool), t.shape)
    exponent = degree - order
    scale = (-1.0) ** order / math.factorial(exponent)
    total = np.zeros_like(t)
    for r in range(degree + 2):
        weight = (-1) ** (degree + 1 - r) * math.comb(degree + 1, r)
        total = total + weight * _truncated_power(r - t, exponent, order > 0, left)
    total = scale * total

    if order == 0:
        support = (t > 0) & (t < degree + 1)
    else:
        support = np.where(left, (t > 0) & (t <= degree + 1), (t >= 0) & (t < degree + 1))
    return np.where(support, total, 0.0)


def bspline_scalar(d: int, x: float) -> float:
    """B_d(x) at a single point; zero outside (0, d+1)."""
    return float(bspline_values(d, x))


def _check_bspline_domain(spec: BasisSpec, xs: np.ndarray) -> np.ndarray:
    a, b = spec.domain_map  # type: ignore[misc]
    tol = 1e-12 * (b - a)
    if np.any(~np.isfinite(xs)) or np.any(xs < a - tol) or np.any(xs > b + tol):
        bad = xs[(xs < a - tol) | (xs > b + tol) | ~np.isfinite(xs)]
        raise DomainError(f"x={bad[0]!r} outside bspline domain [{a}, {b}]")
    return np.clip(xs, a, b)


def basis_matrix(spec: BasisSpec, xs: ArrayLike, order: int = 0) -> np.ndarray:
    """Rows f^{(order)}(x) for every x in ``xs``; shape (len(xs), p)."""
    if order not in (0, 1, 2):
        raise DomainError(f"derivative order must be 0, 1 or 2, got {order}")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))

    if spec.family is BasisFamily.BSPLINE:
        xs = _check_bspline_domain(spec, xs)
        a, b = spec.domain_map  # type: ignore[misc]
        m, d = spec.p, spec.degree
        rate = (m - d) / (b - a)
        u = (xs - a)[:, None] * rate - (np.arange(1, m + 1) - d - 1)[None, :]
        # derivatives at the right end use the last in-domain piece
        at_end = (xs >= b)[:, None]
        return bspline_values(d, u, order, left=at_end) * rate**order

    if np.any(~np.isfinite(xs)):
        raise DomainError("basis evaluated at a non-finite x")

    if spec.family is BasisFamily.POLYNOMIAL:
        powers = np.arange(spec.p)
        coeff = np.ones(spec.p)
        for q in range(order):
            coeff = coeff * np.maximum(powers - q, 0)
        exps = np.maximum(powers - order, 0)
        return coeff[None, :] * xs[:, None] ** exps[None, :]

    # trigonometric: (1, sqrt2 cos x, sqrt2 sin x, ..., sqrt2 cos mx, sqrt2 sin mx)
    out = np.zeros((xs.size, spec.p))
    out[:, 0] = 1.0 if order == 0 else 0.0
    for h in range(1, spec.harmonics + 1):  # type: ignore[operator]
        hx = h * xs
        if order == 0:
            cos_part, sin_part = np.cos(hx), np.sin(hx)
        elif order == 1:
            cos_part, sin_part = -h * np.sin(hx), h * np.cos(hx)
        else:
            cos_part, sin_part = -(h**2) * np.cos(hx), -(h**2) * np.sin(hx)
        out[:, 2 * h - 1] = SQRT2 * cos_part
        out[:, 2 * h] = SQRT2 * sin_part
    return out


def eval_basis(spec: BasisSpec, x: float) -> np.ndarray:
    """f(x) as a length-p vector."""
    return basis_matrix(spec, x)[0]


def eval_basis_deriv(spec: BasisSpec, x: float, order: int) -> np.ndarray:
    """Exact first or second derivative of f at x."""
    if order not in (1, 2):
        raise DomainError(f"derivative order must be 1 or 2, got {order}")
    return basis_matrix(spec, x, order)[0]
