"""Length, Euler characteristic, curvature and critical radii of the curve psi."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import integrate

from tubeband.config import settings
from tubeband.core.logging import get_logger
from tubeband.services.design import SphericalCurve
from tubeband.utils.exceptions import DomainError, StationaryPointError

logger = get_logger(__name__)

ARC_DISCREPANCY_TOL = 1e-3
KAPPA_CLAMP = 1e-9
MIN_SPEED_SQ = 1e-20
DENOM_FLOOR = 1e-12
SKIPPED_WARN_FRACTION = 0.5
ROW_BLOCK = 256
PAIR_CHUNK = 20_000


@dataclass(frozen=True)
class ArcLengthResult:
    """Quadrature length, polyline length and how far they disagree."""

    length: float
    polyline: float
    discrepancy: float
    warning: bool


@dataclass(frozen=True)
class GlobalRadiusResult:
    """Critical radius with the branch and grid pair that attained it."""

    theta: float
    tan2: float
    local_tan2: float
    branch: str
    pair: Optional[Tuple[float, float]]
    skipped_fraction: float
    skipped_warning: bool


@dataclass(frozen=True)
class CurveGeometry:
    curve: SphericalCurve
    gamma_length: float
    euler_char: int
    kappa_max: float
    theta_loc: float
    theta_c: float
    arc: Optional[ArcLengthResult] = None
    radius: Optional[GlobalRadiusResult] = None


def _speed(curve: SphericalCurve, x: float) -> float:
    psi_x = curve.psi_x(np.array([x]))[0]
    return float(np.linalg.norm(psi_x))


def arc_length(curve: SphericalCurve, n_segments: int = 100_000) -> ArcLengthResult:
    """|Gamma| by adaptive quadrature of ||psi_x||, cross-checked with an inscribed polyline."""
    if n_segments < 2:
        raise DomainError(f"n_segments must be >= 2, got {n_segments}")

    quad_total = 0.0
    for lo, hi in curve.domain:
        if hi == lo:
            continue
        inner = [k for k in curve.breakpoints if lo < k < hi]
        value, _ = integrate.quad(
            lambda x: _speed(curve, x),
            lo,
            hi,
            points=inner or None,
            limit=max(200, 4 * len(inner) + 50),
            epsabs=1e-12,
            epsrel=1e-11,
        )
        quad_total += value

    polyline = 0.0
    span = curve.span
    for lo, hi in curve.domain:
        if hi == lo:
            continue
        segments = max(1, int(round(n_segments * (hi - lo) / span)))
        psi = curve.psi(np.linspace(lo, hi, segments + 1))
        polyline += float(np.linalg.norm(np.diff(psi, axis=0), axis=1).sum())

    discrepancy = abs(quad_total - polyline)
    warning = discrepancy > ARC_DISCREPANCY_TOL
    if warning:
        logger.warning(
            "Arc length estimates disagree",
            extra={"quadrature": quad_total, "polyline": polyline, "discrepancy": discrepancy},
        )
    return ArcLengthResult(
        length=quad_total, polyline=polyline, discrepancy=discrepancy, warning=warning
    )


def euler_characteristic(curve: SphericalCurve) -> int:
    """0 for a closed curve, otherwise the number of domain intervals."""
    return 0 if curve.closed_curve else len(curve.domain)


def kappa_values(curve: SphericalCurve, xs: np.ndarray) -> np.ndarray:
    """kappa(x) = eta/g^2 - gamma^2/g^3 - 1 at every x."""
    _, psi_x, psi_xx = curve.derivatives(xs)
    g = np.einsum("ij,ij->i", psi_x, psi_x)
    if np.any(g < MIN_SPEED_SQ):
        bad = np.atleast_1d(xs)[g < MIN_SPEED_SQ][0]
        raise StationaryPointError(f"psi_x vanishes at x={bad!r}")
    gam = np.einsum("ij,ij->i", psi_xx, psi_x)
    eta = np.einsum("ij,ij->i", psi_xx, psi_xx)
    values = eta / g**2 - gam**2 / g**3 - 1.0
    tiny = (values < 0) & (values >= -KAPPA_CLAMP)
    return np.where(tiny, 0.0, values)


def kappa(curve: SphericalCurve, x: float) -> float:
    return float(kappa_values(curve, np.array([x], dtype=float))[0])


def _local_tan2(kappas: np.ndarray) -> float:
    branch = np.where(kappas <= 2.0, 1.0 - kappas / 4.0, 1.0 / np.maximum(kappas, 2.0))
    return float(branch.min())


def local_critical_radius(curve: SphericalCurve, grid_n: int = 2001) -> float:
    """arctan of sqrt(min(1 - kappa/4 for kappa <= 2, 1/kappa for kappa >= 2))."""
    kappas = kappa_values(curve, curve.grid(grid_n))
    return float(np.arctan(np.sqrt(_local_tan2(kappas))))


class _PairSearch:
    """Grid data shared by the interior and boundary branches of the global search."""

    def __init__(self, curve: SphericalCurve, grid_n: int, alpha_grid_n: int) -> None:
        self.xs = curve.grid(grid_n)
        psi, psi_x, _ = curve.derivatives(self.xs)
        speed = np.linalg.norm(psi_x, axis=1)
        if np.any(speed**2 < MIN_SPEED_SQ):
            raise StationaryPointError("psi_x vanishes on the search grid")
        self.psi = psi
        self.tangent = psi_x / speed[:, None]
        self.alphas = np.linspace(-1.0, 1.0, alpha_grid_n)
        self.abs_alphas = np.sort(np.abs(self.alphas))
        self.window = 2.0 * curve.span / grid_n
        self.closed = curve.closed_curve
        self.span = curve.span

        # boundary rows: left ends point inward with +1, right ends with -1, isolated points 0
        self.orientation = np.zeros(self.xs.size)
        self.is_boundary = np.zeros(self.xs.size, dtype=bool)
        if not curve.closed_curve:
            start = 0
            for lo, hi in curve.domain:
                count = int(np.count_nonzero((self.xs >= lo) & (self.xs <= hi)))
                end = start + count - 1
                self.is_boundary[start] = self.is_boundary[end] = True
                if hi > lo:
                    self.orientation[start] = 1.0
                    self.orientation[end] = -1.0
                start += count

    def separated(self, rows: np.ndarray) -> np.ndarray:
        dist = np.abs(self.xs[rows][:, None] - self.xs[None, :])
        if self.closed:
            dist = np.minimum(dist, self.span - dist)
        return dist > self.window

    def st(self, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        s = np.clip(self.psi[rows] @ self.psi.T, -1.0, 1.0)
        t = self.tangent[rows] @ self.psi.T
        return s, t

    def grid_minimum(
        self, s: np.ndarray, t: np.ndarray, eps: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """min over the alpha grid of the ratio for each (s, t); inf when every denominator is skipped."""
        a = self.alphas[None, :]
        num = (1.0 - a * s[:, None]) ** 2
        at = a * t[:, None]
        if eps is not None:
            at = np.maximum(0.0, eps[:, None] * at)
        den = (1.0 - s**2)[:, None] - at**2
        ratio = np.where(den > DENOM_FLOOR, num / np.where(den > DENOM_FLOOR, den, 1.0), np.inf)
        return ratio.min(axis=1)

    def skipped_count(self, s: np.ndarray, t: np.ndarray) -> int:
        """Number of (pair, alpha) grid cells whose interior denominator is <= the floor."""
        base = 1.0 - s**2 - DENOM_FLOOR
        t2 = t**2
        with np.errstate(divide="ignore", invalid="ignore"):
            limit = np.where(t2 > 0, np.sqrt(np.maximum(base, 0.0) / t2), np.inf)
        limit = np.where(base > 0, limit, -1.0)
        kept = np.searchsorted(self.abs_alphas, limit, side="left")
        return int(s.size * self.alphas.size - kept.sum())


def interior_lower_bound(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Exact minimum over alpha in [-1, 1] of (1 - a s)^2 / (1 - s^2 - a^2 t^2) on its feasible set.

    The ratio is continuous on the closed feasible interval and its only critical point there is
    a* = s (1 - s^2) / t^2, so checking a* (clipped) and both interval ends is exact. This bounds
    every alpha-grid value from below.
    """
    base = 1.0 - s**2
    t2 = t**2
    feasible = base > DENOM_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(t2 > 0, np.sqrt(np.maximum(base - DENOM_FLOOR, 0.0) / t2), np.inf)
        limit = np.minimum(limit, 1.0)
        star = np.where(t2 > 0, s * base / t2, 0.0)
    star = np.clip(star, -limit, limit)

    best = np.full(s.shape, np.inf)
    for a in (star, limit, -limit):
        den = base - a**2 * t2
        ok = feasible & (den > 0)
        value = np.where(ok, (1.0 - a * s) ** 2 / np.where(ok, den, 1.0), np.inf)
        best = np.minimum(best, value)
    return best


def _interior_block(
    search: _PairSearch, rows: np.ndarray, threshold: float
) -> Tuple[float, Optional[Tuple[int, int]], int, int]:
    """Best interior ratio in a row block, with the pair attaining it and skip counts."""
    s, t = search.st(rows)
    mask = search.separated(rows) & ~search.is_boundary[rows][:, None]
    r_idx, c_idx = np.nonzero(mask)
    s_flat, t_flat = s[r_idx, c_idx], t[r_idx, c_idx]
    skipped = search.skipped_count(s_flat, t_flat)
    considered = s_flat.size

    bound = interior_lower_bound(s_flat, t_flat)
    survivors = np.nonzero(bound < threshold)[0]
    best, where = np.inf, None
    for start in range(0, survivors.size, PAIR_CHUNK):
        chunk = survivors[start : start + PAIR_CHUNK]
        values = search.grid_minimum(s_flat[chunk], t_flat[chunk])
        j = int(np.argmin(values))
        if values[j] < best:
            best = float(values[j])
            where = (int(rows[r_idx[chunk[j]]]), int(c_idx[chunk[j]]))
    return best, where, skipped, considered


def global_critical_radius(
    curve: SphericalCurve,
    grid_n: int = 2001,
    alpha_grid_n: int = 401,
    threads: Optional[int] = None,
) -> GlobalRadiusResult:
    """Critical radius from the double infimum over grid pairs, boundary rows and the local bound."""
    search = _PairSearch(curve, grid_n, alpha_grid_n)
    local_tan2 = _local_tan2(kappa_values(curve, search.xs))

    best, branch, where = local_tan2, "local", None

    boundary_rows = np.nonzero(search.is_boundary)[0]
    if boundary_rows.size:
        s, t = search.st(boundary_rows)
        mask = search.separated(boundary_rows)
        for r, row in enumerate(boundary_rows):
            cols = np.nonzero(mask[r])[0]
            if cols.size == 0:
                continue
            eps = np.full(cols.size, search.orientation[row])
            values = search.grid_minimum(s[r, cols], t[r, cols], eps)
            j = int(np.argmin(values))
            if values[j] < best:
                best, branch, where = float(values[j]), "boundary", (int(row), int(cols[j]))

    n = search.xs.size
    blocks = [np.arange(i, min(i + ROW_BLOCK, n)) for i in range(0, n, ROW_BLOCK)]
    workers = max(1, threads or settings.threads)
    threshold = best
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results: List[Tuple[float, Optional[Tuple[int, int]], int, int]] = list(
            pool.map(lambda rows: _interior_block(search, rows, threshold), blocks)
        )

    skipped = sum(r[2] for r in results)
    considered = sum(r[3] for r in results)
    for value, pair, _, _ in results:
        if pair is not None and value < best:
            best, branch, where = value, "interior", pair

    cells = considered * search.alphas.size
    skipped_fraction = skipped / cells if cells else 0.0
    skipped_warning = skipped_fraction > SKIPPED_WARN_FRACTION
    if skipped_warning:
        logger.warning(
            "Most pair denominators were nonpositive in the critical radius search",
            extra={"skipped_fraction": skipped_fraction},
        )

    pair = None if where is None else (float(search.xs[where[0]]), float(search.xs[where[1]]))
    logger.debug(
        "Global critical radius",
        extra={"tan2": best, "branch": branch, "local_tan2": local_tan2, "workers": workers},
    )
    return GlobalRadiusResult(
        theta=float(np.arctan(np.sqrt(best))),
        tan2=best,
        local_tan2=local_tan2,
        branch=branch,
        pair=pair,
        skipped_fraction=skipped_fraction,
        skipped_warning=skipped_warning,
    )


def curve_geometry(
    curve: SphericalCurve,
    grid_n: int = 2001,
    alpha_grid_n: int = 401,
    arc_segments: int = 100_000,
    threads: Optional[int] = None,
) -> CurveGeometry:
    """|Gamma|, chi, kappa max and both critical radii in one pass."""
    arc = arc_length(curve, arc_segments)
    radius = global_critical_radius(curve, grid_n, alpha_grid_n, threads)
    kappas = kappa_values(curve, curve.grid(grid_n))
    geometry = CurveGeometry(
        curve=curve,
        gamma_length=arc.length,
        euler_char=euler_characteristic(curve),
        kappa_max=float(kappas.max()),
        theta_loc=float(np.arctan(np.sqrt(radius.local_tan2))),
        theta_c=radius.theta,
        arc=arc,
        radius=radius,
    )
    logger.info(
        "Curve geometry computed",
        extra={
            "gamma_length": geometry.gamma_length,
            "euler_char": geometry.euler_char,
            "theta_c": geometry.theta_c,
            "theta_loc": geometry.theta_loc,
        },
    )
    return geometry
