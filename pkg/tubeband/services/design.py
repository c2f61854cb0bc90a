"""Information matrix, its square-root factor and the normalized spherical curve psi(x)."""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from tubeband.core.logging import get_logger
from tubeband.models.specs import BasisSpec
from tubeband.services.basis import basis_matrix
from tubeband.utils.exceptions import (
    DegenerateCurveError,
    DomainError,
    FactorizationError,
    SingularDesignError,
)

logger = get_logger(__name__)

Interval = Tuple[float, float]
VectorMap = Callable[[np.ndarray, int], np.ndarray]

DEGENERATE_NORM = 1e-12
CLOSURE_TOL = 1e-8
INJECTIVITY_TOL = 1e-10
INJECTIVITY_GRID = 2001


@dataclass(frozen=True)
class DesignInfo:
    """Design points, variances, Sigma and an upper factor A with A^T A = Sigma."""

    points: Optional[np.ndarray]
    variance: Optional[np.ndarray]
    sigma: np.ndarray
    sigma_sqrt: np.ndarray

    @classmethod
    def from_sigma(cls, sigma: np.ndarray) -> "DesignInfo":
        """Build from a directly given Sigma (no design points)."""
        sigma = np.asarray(sigma, dtype=float)
        return cls(points=None, variance=None, sigma=sigma, sigma_sqrt=sqrt_factor(sigma))

    @property
    def p(self) -> int:
        return self.sigma.shape[0]


def information_matrix(spec: BasisSpec, points: Sequence[float], variance: Sequence[float]) -> np.ndarray:
    """Sigma = (sum_j f(x_j) f(x_j)^T / sigma(x_j)^2)^{-1}."""
    points = np.asarray(points, dtype=float)
    variance = np.broadcast_to(np.asarray(variance, dtype=float), points.shape)
    if np.any(variance <= 0):
        raise DomainError("variances must be positive")

    X = basis_matrix(spec, points)
    rank = int(np.linalg.matrix_rank(X))
    if rank < spec.p:
        raise SingularDesignError(rank=rank, expected=spec.p)

    info = X.T @ (X / variance[:, None])
    try:
        factor = linalg.cho_factor(info, lower=False)
        sigma = linalg.cho_solve(factor, np.eye(spec.p))
    except linalg.LinAlgError as e:
        raise SingularDesignError(rank=rank, expected=spec.p) from e
    return 0.5 * (sigma + sigma.T)


def sqrt_factor(sigma: np.ndarray) -> np.ndarray:
    """Upper-triangular A with A^T A = Sigma (Cholesky)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise FactorizationError(f"Sigma must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise FactorizationError("Sigma is not symmetric")
    try:
        return linalg.cholesky(sigma, lower=False)
    except linalg.LinAlgError as e:
        raise FactorizationError(f"Sigma is not positive definite: {e}") from e


def design_info(spec: BasisSpec, points: Sequence[float], variance: Sequence[float]) -> DesignInfo:
    """DesignInfo from design points and per-point variances."""
    points = np.asarray(points, dtype=float)
    if np.any(np.diff(points) <= 0):
        raise DomainError("design points must be strictly increasing")
    variance = np.broadcast_to(np.asarray(variance, dtype=float), points.shape).copy()
    sigma = information_matrix(spec, points, variance)
    return DesignInfo(points=points, variance=variance, sigma=sigma, sigma_sqrt=sqrt_factor(sigma))


def refactor(info: DesignInfo, rotation: np.ndarray) -> DesignInfo:
    """Replace the factor A by Q A for an orthogonal Q."""
    return DesignInfo(
        points=info.points,
        variance=info.variance,
        sigma=info.sigma,
        sigma_sqrt=np.asarray(rotation) @ info.sigma_sqrt,
    )


@dataclass(frozen=True)
class SphericalCurve:
    """psi(x) = v(x)/||v(x)|| on a union of closed intervals, with exact derivatives.

    ``vector_map(xs, order)`` returns the order-th derivative of the unnormalized v at every x
    as an array of shape (len(xs), p).
    """

    vector_map: VectorMap
    domain: Tuple[Interval, ...]
    closed_curve: bool = False
    breakpoints: Tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.domain:
            raise DomainError("curve domain needs at least one interval")
        ordered = sorted(self.domain)
        for (lo, hi), (next_lo, _) in zip(ordered, ordered[1:]):
            if hi >= next_lo:
                raise DomainError(f"domain intervals overlap near x={hi}")
        for lo, hi in ordered:
            if lo > hi:
                raise DomainError(f"interval [{lo}, {hi}] is reversed")
        object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in ordered))
        if self.closed_curve and len(self.domain) != 1:
            raise DomainError("only a single-interval curve can be closed")

    @property
    def span(self) -> float:
        """Total length of the domain intervals."""
        return float(sum(hi - lo for lo, hi in self.domain))

    @property
    def dim(self) -> int:
        lo, _ = self.domain[0]
        return self.vector_map(np.array([lo]), 0).shape[1]

    def grid(self, n: int) -> np.ndarray:
        """About n points spread over all intervals proportionally to their length."""
        if n < 2:
            raise DomainError(f"grid needs at least 2 points, got {n}")
        span = self.span
        pieces: List[np.ndarray] = []
        for lo, hi in self.domain:
            if hi == lo:
                pieces.append(np.array([lo]))
                continue
            count = max(2, int(round(n * (hi - lo) / span))) if span > 0 else 2
            pieces.append(np.linspace(lo, hi, count))
        return np.concatenate(pieces)

    def endpoints(self) -> List[Tuple[float, int]]:
        """Boundary points with orientation +1 (left end) or -1 (right end)."""
        if self.closed_curve:
            return []
        out: List[Tuple[float, int]] = []
        for lo, hi in self.domain:
            out.append((lo, 1))
            if hi > lo:
                out.append((hi, -1))
        return out

    def derivatives(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """psi, psi_x and psi_xx at every x (quotient rule on v / ||v||)."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        v = self.vector_map(xs, 0)
        v1 = self.vector_map(xs, 1)
        v2 = self.vector_map(xs, 2)

        s = np.einsum("ij,ij->i", v, v)
        norm = np.sqrt(s)
        if np.any(norm < DEGENERATE_NORM):
            bad = xs[norm < DEGENERATE_NORM][0]
            raise DegenerateCurveError(f"||A f(x)|| vanishes at x={bad!r}")
        ds = 2.0 * np.einsum("ij,ij->i", v, v1)
        dds = 2.0 * (np.einsum("ij,ij->i", v1, v1) + np.einsum("ij,ij->i", v, v2))

        inv1 = (1.0 / norm)[:, None]
        inv3 = (1.0 / (norm * s))[:, None]
        inv5 = (1.0 / (norm * s * s))[:, None]
        psi = v * inv1
        psi_x = v1 * inv1 - 0.5 * v * inv3 * ds[:, None]
        psi_xx = (
            v2 * inv1
            - v1 * inv3 * ds[:, None]
            + 0.75 * v * inv5 * (ds**2)[:, None]
            - 0.5 * v * inv3 * dds[:, None]
        )
        return psi, psi_x, psi_xx

    def psi(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        v = self.vector_map(xs, 0)
        norm = np.linalg.norm(v, axis=1)
        if np.any(norm < DEGENERATE_NORM):
            raise DegenerateCurveError(f"||A f(x)|| vanishes at x={xs[norm < DEGENERATE_NORM][0]!r}")
        return v / norm[:, None]

    def psi_x(self, xs: np.ndarray) -> np.ndarray:
        return self.derivatives(xs)[1]

    def psi_xx(self, xs: np.ndarray) -> np.ndarray:
        return self.derivatives(xs)[2]

    def is_closable(self) -> bool:
        """psi(a) = +/- psi(b) at the ends of a single-interval domain."""
        if len(self.domain) != 1:
            return False
        lo, hi = self.domain[0]
        ends = self.psi(np.array([lo, hi]))
        return bool(
            min(np.linalg.norm(ends[0] - ends[1]), np.linalg.norm(ends[0] + ends[1])) < CLOSURE_TOL
        )


def check_injective(curve: SphericalCurve, grid_n: int = INJECTIVITY_GRID) -> float:
    """Smallest min(||psi(x) - psi(x~)||, ||psi(x) + psi(x~)||) over non-adjacent grid pairs.

    A pair closer than 3/4 of the local grid step means the curve revisits itself (or its
    antipode) between grid points, which raises DegenerateCurveError.
    """
    xs = curve.grid(grid_n)
    if xs.size < 3:
        return float("inf")
    psi = curve.psi(xs)
    idx = np.arange(xs.size)
    offset = np.abs(idx[:, None] - idx[None, :])
    separated = offset > 1
    if curve.closed_curve:
        # the two ends are identified; neighbors across the seam are not separated
        separated &= xs.size - 1 - offset > 1
    if not separated.any():
        return float("inf")

    steps = np.linalg.norm(np.diff(psi, axis=0), axis=1)
    local = np.minimum(np.concatenate([steps[:1], steps]), np.concatenate([steps, steps[-1:]]))
    # distance to the nearer of psi(x~) and -psi(x~)
    distance = np.sqrt(np.maximum(2.0 - 2.0 * np.abs(psi @ psi.T), 0.0))
    threshold = 0.75 * np.maximum(local[:, None], local[None, :]) + INJECTIVITY_TOL
    collapsed = separated & (distance < threshold)
    gap = float(distance[separated].min())
    if collapsed.any():
        i, j = np.argwhere(collapsed)[0]
        raise DegenerateCurveError(
            f"psi is not one-to-one or meets an antipodal point near x={xs[i]!r}, {xs[j]!r} "
            f"(separation {distance[i, j]:.3e})"
        )
    return gap


def spherical_curve(
    spec: BasisSpec,
    info: DesignInfo,
    domain: Sequence[Interval],
    closed_curve: bool = False,
    validate: bool = True,
) -> SphericalCurve:
    """psi(x) = A f(x) / ||A f(x)|| for the basis ``spec`` and factor ``info.sigma_sqrt``."""
    A = info.sigma_sqrt
    if A.shape != (spec.p, spec.p):
        raise DomainError(f"factor shape {A.shape} does not match basis dimension {spec.p}")

    def vector_map(xs: np.ndarray, order: int) -> np.ndarray:
        return basis_matrix(spec, xs, order) @ A.T

    curve = SphericalCurve(
        vector_map=vector_map,
        domain=tuple(tuple(iv) for iv in domain),  # type: ignore[misc]
        closed_curve=closed_curve,
        breakpoints=tuple(spec.knots()),
    )
    # evaluate once on a grid so degenerate points surface here
    curve.psi(curve.grid(INJECTIVITY_GRID))

    if validate:
        closable = curve.is_closable()
        if closed_curve and not closable:
            raise DegenerateCurveError("curve declared closed but psi(a) != +/- psi(b)")
        if closable and not closed_curve:
            logger.warning(
                "Curve endpoints coincide up to sign but closed_curve is not set",
                extra={"domain": curve.domain},
            )
        check_injective(curve)
    return curve
