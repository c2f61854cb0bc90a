"""Group fits, contrast bands, the chi-square scan and basis selection."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tubeband.core.logging import get_logger
from tubeband.models.specs import BasisSpec
from tubeband.services.basis import basis_matrix
from tubeband.services.design import DesignInfo, design_info
from tubeband.utils.exceptions import ContractError, DomainError, PreconditionError

logger = get_logger(__name__)

CONTRAST_TOL = 1e-10


@dataclass(frozen=True)
class GroupSample:
    """Per-point means of one group, optionally with standard errors."""

    group_id: str
    r: int
    x: np.ndarray
    y: np.ndarray
    se: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.r < 1:
            raise DomainError(f"group {self.group_id}: replication count must be >= 1")
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise DomainError(f"group {self.group_id}: x and y must be equal-length vectors")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.se is not None:
            se = np.asarray(self.se, dtype=float)
            if se.shape != x.shape or np.any(se < 0):
                raise DomainError(f"group {self.group_id}: se must be nonnegative, one per point")
            object.__setattr__(self, "se", se)


@dataclass(frozen=True)
class GroupFit:
    """Coefficients of every group under one basis and design."""

    spec: BasisSpec
    info: DesignInfo
    group_ids: Tuple[str, ...]
    beta: np.ndarray
    r: np.ndarray
    rss: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def k(self) -> int:
        return len(self.group_ids)

    @property
    def sigma(self) -> np.ndarray:
        return self.info.sigma


@dataclass(frozen=True)
class ContrastBand:
    """center(x) +/- halfwidth(x) for one contrast c."""

    contrast: np.ndarray
    x: np.ndarray
    center: np.ndarray
    halfwidth: np.ndarray
    b: float

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidth

    def excludes_zero(self) -> np.ndarray:
        """Grid points where the band does not contain 0."""
        return (self.lower > 0) | (self.upper < 0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"x": self.x, "center": self.center, "lower": self.lower, "upper": self.upper}
        )


@dataclass(frozen=True)
class ScanResult:
    x: np.ndarray
    chi2: np.ndarray
    threshold: Optional[float] = None

    @property
    def reject(self) -> np.ndarray:
        if self.threshold is None:
            return np.zeros(self.x.shape, dtype=bool)
        return self.chi2 > self.threshold

    def to_frame(self) -> pd.DataFrame:
        threshold = np.full(self.x.shape, np.nan if self.threshold is None else self.threshold)
        return pd.DataFrame({"x": self.x, "chi2": self.chi2, "threshold": threshold})


@dataclass(frozen=True)
class SelectionRow:
    degree: int
    m: int
    loss: float
    aic: float
    bic: float


@dataclass(frozen=True)
class ModelSelection:
    """AIC and BIC rankings; ``selected`` is set only when both agree."""

    rows: List[SelectionRow]
    aic_ranking: List[Tuple[int, int]]
    bic_ranking: List[Tuple[int, int]]

    @property
    def selected(self) -> Optional[Tuple[int, int]]:
        if self.aic_ranking and self.aic_ranking[0] == self.bic_ranking[0]:
            return self.aic_ranking[0]
        return None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows])


def _weighted_fit(X: np.ndarray, sigma: np.ndarray, variance: np.ndarray, y: np.ndarray) -> np.ndarray:
    return sigma @ (X.T @ (y / variance))


def fit_group(spec: BasisSpec, info: DesignInfo, sample: GroupSample) -> np.ndarray:
    """Weighted least squares beta = Sigma sum_j f(x_j) y_j / sigma(x_j)^2."""
    if info.points is None or info.variance is None:
        raise PreconditionError("fitting needs design points and variances")
    if sample.x.shape != info.points.shape or not np.allclose(sample.x, info.points):
        raise DomainError(f"group {sample.group_id} is not observed on the shared design points")
    X = basis_matrix(spec, info.points)
    return _weighted_fit(X, info.sigma, info.variance, sample.y)


def fit_groups(spec: BasisSpec, info: DesignInfo, samples: Sequence[GroupSample]) -> GroupFit:
    """Fit every group; all groups must share the design points."""
    if not samples:
        raise DomainError("at least one group is required")
    ids = [s.group_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DomainError(f"duplicate group ids: {ids}")

    X = basis_matrix(spec, info.points) if info.points is not None else None
    betas, rss = [], []
    for sample in samples:
        beta = fit_group(spec, info, sample)
        resid = sample.y - X @ beta  # type: ignore[operator]
        betas.append(beta)
        rss.append(sample.r * float(np.sum(resid**2 / info.variance)))  # type: ignore[operator]

    fit = GroupFit(
        spec=spec,
        info=info,
        group_ids=tuple(ids),
        beta=np.vstack(betas),
        r=np.array([s.r for s in samples], dtype=float),
        rss=np.array(rss),
    )
    logger.info("Fitted groups", extra={"groups": ids, "p": spec.p, "loss": float(fit.rss.sum())})
    return fit


def pooled_variance(samples: Sequence[GroupSample]) -> np.ndarray:
    """sigma^2(x_j) = sum_i r_i^2 se_ij^2 / sum_i (r_i - 1)."""
    if any(s.se is None for s in samples):
        raise PreconditionError("pooled variance needs standard errors for every group")
    dof = sum(s.r - 1 for s in samples)
    if dof <= 0:
        raise DomainError("pooled variance undefined: every group has a single replicate")
    total = sum(s.r**2 * s.se**2 for s in samples)  # type: ignore[operator]
    return np.asarray(total, dtype=float) / dof


def studentized_df(samples: Sequence[GroupSample], n: Optional[int] = None) -> int:
    """Default residual degrees of freedom sum_i (r_i - 1) * n."""
    n = n if n is not None else samples[0].x.size
    nu = sum(s.r - 1 for s in samples) * n
    if nu < 1:
        raise DomainError("no residual degrees of freedom for a studentized band")
    return int(nu)


def reduce_replicates(frame: pd.DataFrame) -> List[GroupSample]:
    """Raw rows (group, x, y) to per-point means with se = sqrt(sum (y - ybar)^2) / r."""
    missing = {"group", "x", "y"} - set(frame.columns)
    if missing:
        raise DomainError(f"replicate table lacks columns {sorted(missing)}")

    samples: List[GroupSample] = []
    for group_id, rows in frame.groupby("group", sort=False):
        stats = rows.groupby("x", sort=True)["y"].agg(
            mean="mean", count="count", ss=lambda v: float(((v - v.mean()) ** 2).sum())
        )
        counts = stats["count"].unique()
        if counts.size != 1:
            raise DomainError(f"group {group_id}: unequal replicate counts across x")
        r = int(counts[0])
        samples.append(
            GroupSample(
                group_id=str(group_id),
                r=r,
                x=stats.index.to_numpy(dtype=float),
                y=stats["mean"].to_numpy(dtype=float),
                se=np.sqrt(stats["ss"].to_numpy(dtype=float)) / r,
            )
        )
    return samples


def model_selection(
    candidates: Sequence[Tuple[int, int]],
    samples: Sequence[GroupSample],
    variance: np.ndarray,
    domain: Tuple[float, float],
) -> ModelSelection:
    """Rank B-spline bases f_{d,m} by AIC = L + 2km and BIC = L + m sum_i ln(r_i n)."""
    points = samples[0].x
    n, k = points.size, len(samples)
    bic_weight = sum(math.log(s.r * n) for s in samples)

    rows: List[SelectionRow] = []
    for degree, m in candidates:
        if m > n:
            raise DomainError(f"candidate (d={degree}, m={m}) has more functions than points ({n})")
        spec = BasisSpec.bspline(degree, m, domain[0], domain[1])
        info = design_info(spec, points, variance)
        fit = fit_groups(spec, info, samples)
        loss = float(fit.rss.sum())
        rows.append(
            SelectionRow(
                degree=degree, m=m, loss=loss, aic=loss + 2 * k * m, bic=loss + bic_weight * m
            )
        )

    aic_ranking = [(r.degree, r.m) for r in sorted(rows, key=lambda r: r.aic)]
    bic_ranking = [(r.degree, r.m) for r in sorted(rows, key=lambda r: r.bic)]
    result = ModelSelection(rows=rows, aic_ranking=aic_ranking, bic_ranking=bic_ranking)
    if result.selected is None and rows:
        logger.warning(
            "AIC and BIC disagree; no basis selected",
            extra={"aic_best": aic_ranking[0], "bic_best": bic_ranking[0]},
        )
    return result


def h_matrix(r: Sequence[float]) -> np.ndarray:
    """k x (k-1) matrix with orthonormal columns orthogonal to (sqrt r_1, ..., sqrt r_k)."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("h_matrix needs at least two groups")
    if np.any(r <= 0):
        raise DomainError("replication counts must be positive")

    k = r.size
    R = np.cumsum(r)
    H = np.zeros((k, k - 1))
    for c in range(k - 1):
        scale = math.sqrt(R[c] * R[c + 1])
        H[: c + 1, c] = np.sqrt(r[: c + 1] * r[c + 1]) / scale
        H[c + 1, c] = -R[c] / scale
    return H


def _check_contrast(c: Sequence[float], k: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (k,):
        raise ContractError(f"contrast must have {k} entries, got shape {c.shape}")
    if not np.any(c != 0):
        raise ContractError("contrast must be nonzero")
    if abs(c.sum()) > CONTRAST_TOL:
        raise ContractError(f"contrast entries must sum to zero, got {c.sum():.3e}")
    return c


def pairwise_contrast(k: int, i: int, j: int) -> np.ndarray:
    """e_i - e_j (0-based group indices)."""
    if i == j or not (0 <= i < k and 0 <= j < k):
        raise ContractError(f"invalid pair ({i}, {j}) for {k} groups")
    c = np.zeros(k)
    c[i], c[j] = 1.0, -1.0
    return c


def merged_contrast(r: Sequence[float], i: int, j: int, l: int) -> np.ndarray:
    """Groups i and j pooled by their replication weights against group l."""
    r = np.asarray(r, dtype=float)
    if len({i, j, l}) != 3:
        raise ContractError("merged contrast needs three distinct groups")
    c = np.zeros(r.size)
    c[i] = r[i] / (r[i] + r[j])
    c[j] = r[j] / (r[i] + r[j])
    c[l] = -1.0
    return c


def _variance_profile(fit: GroupFit, F: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", F, fit.sigma, F)


def contrast_band(fit: GroupFit, c: Sequence[float], b: float, grid: Sequence[float]) -> ContrastBand:
    """sum c_i beta_i^T f(x) +/- b sqrt((sum c_i^2 / r_i) f(x)^T Sigma f(x))."""
    c = _check_contrast(c, fit.k)
    if b < 0:
        raise DomainError(f"band multiplier must be >= 0, got {b}")
    xs = np.asarray(grid, dtype=float)
    F = basis_matrix(fit.spec, xs)
    center = F @ (fit.beta.T @ c)
    scale = float(np.sum(c**2 / fit.r))
    halfwidth = b * np.sqrt(scale * _variance_profile(fit, F))
    return ContrastBand(contrast=c, x=xs, center=center, halfwidth=halfwidth, b=float(b))


def chi2_scan(fit: GroupFit, grid: Sequence[float], b: Optional[float] = None) -> ScanResult:
    """chi^2(x) for H0: all group curves agree at x; rejects where chi^2(x) > b^2."""
    if fit.k < 2:
        raise DomainError("the scan compares at least two groups")
    xs = np.asarray(grid, dtype=float)
    F = basis_matrix(fit.spec, xs)
    values = F @ fit.beta.T  # (grid, k)
    mean = values @ fit.r / fit.r.sum()
    spread = ((values - mean[:, None]) ** 2) @ fit.r
    chi2 = spread / _variance_profile(fit, F)
    return ScanResult(x=xs, chi2=chi2, threshold=None if b is None else float(b) ** 2)
