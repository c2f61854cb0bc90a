"""Seeded Monte Carlo oracles and the deterministic misspecification study.

Random numbers come from numpy's counter-based Philox generator. A run with seed s and P partitions
spawns P child seeds from ``SeedSequence(s)`` and gives partition j the j-th contiguous block of
replications, so results depend only on (seed, partitions) and never on the worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from tubeband.config import settings
from tubeband.core.logging import get_logger
from tubeband.core.metrics import record_replications
from tubeband.models.specs import BasisSpec, SimulationConfig, TrueModel, TubeFormulaParams
from tubeband.services.basis import basis_matrix
from tubeband.services.design import SphericalCurve, design_info, spherical_curve
from tubeband.services.geometry import arc_length, euler_characteristic
from tubeband.services.tube import critical_value, tube_tail_probability
from tubeband.utils.exceptions import DomainError

logger = get_logger(__name__)

CHUNK = 512
WIDTH_ARC_SEGMENTS = 100_000

_MODEL1_BASIS = BasisSpec.bspline(2, 5, 0.0, 1.0)
_MODEL1_COEFFS = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 1.0, 1.0],
        [0.0, 0.0, 4.0 / 3.0, 0.0, 0.0],
    ]
)


# ---------------------------------------------------------------------------
# Partitioned RNG
# ---------------------------------------------------------------------------


def partition_sizes(reps: int, partitions: int) -> List[int]:
    """Contiguous block sizes; earlier blocks take the remainder."""
    base, extra = divmod(reps, partitions)
    return [base + (1 if j < extra else 0) for j in range(partitions)]


def run_partitioned(
    kind: str,
    reps: int,
    seed: int,
    partitions: int,
    worker: Callable[[np.random.Generator, int], np.ndarray],
) -> np.ndarray:
    """Run ``worker(rng, size)`` per partition and concatenate in partition order."""
    if reps < 1:
        raise DomainError(f"replications must be >= 1, got {reps}")
    if partitions < 1:
        raise DomainError(f"partitions must be >= 1, got {partitions}")
    children = np.random.SeedSequence(seed).spawn(partitions)
    sizes = partition_sizes(reps, partitions)

    def run(job: Tuple[np.random.SeedSequence, int]) -> np.ndarray:
        child, size = job
        if size == 0:
            return np.zeros(0)
        out = worker(np.random.Generator(np.random.Philox(child)), size)
        record_replications(kind, size)
        return out

    workers = max(1, min(settings.threads, partitions))
    logger.info(
        "Monte Carlo run started",
        extra={"kind": kind, "reps": reps, "seed": seed, "partitions": partitions, "workers": workers},
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        blocks = list(pool.map(run, zip(children, sizes)))
    return np.concatenate(blocks)


def _chunks(size: int) -> Iterable[int]:
    done = 0
    while done < size:
        step = min(CHUNK, size - done)
        yield step
        done += step


def binomial_stderr(estimate: float, reps: int) -> float:
    return math.sqrt(max(estimate * (1.0 - estimate), 0.0) / reps)


# ---------------------------------------------------------------------------
# Maximum of the chi-square process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxProcessResult:
    """Sorted maxima of Y(x) = sum_i (xi_i^T psi(x))^2 over the grid."""

    maxima: np.ndarray
    grid: np.ndarray
    pointwise_mean: np.ndarray
    reps: int
    seed: int
    partitions: int

    def tail_probability(self, b: float) -> Tuple[float, float]:
        """Empirical Pr(max Y >= b^2) with its binomial standard error."""
        count = self.maxima.size - np.searchsorted(self.maxima, b * b, side="left")
        estimate = count / self.reps
        return float(estimate), binomial_stderr(estimate, self.reps)


def simulate_max_process(
    curve: SphericalCurve,
    k: int,
    reps: int,
    grid_n: int = 201,
    seed: int = 0,
    partitions: int = 8,
) -> MaxProcessResult:
    """Draw xi_1..xi_{k-1} ~ N(0, I_p) and record max_x Y(x) per replication."""
    if k < 2:
        raise DomainError(f"k must be >= 2, got {k}")
    grid = curve.grid(grid_n)
    psi = curve.psi(grid)
    p = psi.shape[1]

    def worker(rng: np.random.Generator, size: int) -> np.ndarray:
        # block layout: the size maxima, then the per-grid-point sums of Y
        maxima = np.empty(size)
        totals = np.zeros(grid.size)
        pos = 0
        for step in _chunks(size):
            xi = rng.standard_normal((step, k - 1, p))
            y = np.sum((xi @ psi.T) ** 2, axis=1)
            maxima[pos : pos + step] = y.max(axis=1)
            totals += y.sum(axis=0)
            pos += step
        return np.concatenate([maxima, totals])

    raw = run_partitioned("max_process", reps, seed, partitions, worker)

    maxima, totals, pos = [], np.zeros(grid.size), 0
    for size in partition_sizes(reps, partitions):
        if size == 0:
            continue
        maxima.append(raw[pos : pos + size])
        totals += raw[pos + size : pos + size + grid.size]
        pos += size + grid.size

    return MaxProcessResult(
        maxima=np.sort(np.concatenate(maxima)),
        grid=grid,
        pointwise_mean=totals / reps,
        reps=reps,
        seed=seed,
        partitions=partitions,
    )


@dataclass(frozen=True)
class TubeVolumeEstimate:
    theta: float
    estimate: float
    stderr: float


def simulate_tube_volume(
    curve: SphericalCurve,
    k: int,
    thetas: Sequence[float],
    points: int,
    seed: int = 0,
    partitions: int = 8,
    grid_n: int = 2001,
) -> List[TubeVolumeEstimate]:
    """Fraction of uniform points on S^{p(k-1)-1} within distance theta of the index manifold.

    A point reshaped to V ((k-1) x p) lies at distance arccos(max_x ||V psi(x)||) from M.
    """
    if k < 2:
        raise DomainError(f"k must be >= 2, got {k}")
    grid = curve.grid(grid_n)
    psi = curve.psi(grid)
    p = psi.shape[1]

    def worker(rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        pos = 0
        for step in _chunks(size):
            z = rng.standard_normal((step, (k - 1) * p))
            z /= np.linalg.norm(z, axis=1)[:, None]
            v = z.reshape(step, k - 1, p)
            proj = np.linalg.norm(v @ psi.T, axis=1)
            out[pos : pos + step] = np.minimum(proj.max(axis=1), 1.0)
            pos += step
        return out

    closeness = run_partitioned("tube_volume", points, seed, partitions, worker)
    estimates = []
    for theta in thetas:
        frac = float(np.mean(closeness >= math.cos(theta)))
        estimates.append(
            TubeVolumeEstimate(theta=float(theta), estimate=frac, stderr=binomial_stderr(frac, points))
        )
    return estimates


# ---------------------------------------------------------------------------
# Misspecification study
# ---------------------------------------------------------------------------


def true_curves(model: TrueModel, amplitude: float, x: np.ndarray, k: int = 3) -> np.ndarray:
    """g_i(x) for every group; shape (k, len(x))."""
    x = np.asarray(x, dtype=float)
    if model is TrueModel.IN_BASIS:
        return np.zeros((k, x.size))
    if model is TrueModel.MODEL1:
        return amplitude * (_MODEL1_COEFFS @ basis_matrix(_MODEL1_BASIS, x).T)
    if model is TrueModel.MODEL2:
        return amplitude * np.vstack([np.zeros_like(x), np.sin(np.pi * x / 2), np.sin(np.pi * x)])
    rise = (np.exp(-x / 2) - np.exp(-x)) / (math.exp(-0.5) - math.exp(-1.0))
    bowl = (np.cosh(x - 0.5) - 1.0) / (math.cosh(0.5) - 1.0)
    return amplitude * np.vstack([np.zeros_like(x), rise, bowl])


@lru_cache(maxsize=64)
def _study_critical_value(
    spec: BasisSpec, points: Tuple[float, ...], k: int, alpha: float
) -> Tuple[float, TubeFormulaParams]:
    info = design_info(spec, np.array(points), 1.0)
    domain = spec.domain_map or (0.0, 1.0)
    curve = spherical_curve(spec, info, [domain], validate=False)
    params = TubeFormulaParams(
        k=k,
        gamma_length=arc_length(curve, WIDTH_ARC_SEGMENTS).length,
        euler_char=euler_characteristic(curve),
    )
    return critical_value(params, alpha), params


def study_critical_value(config: SimulationConfig) -> Tuple[float, TubeFormulaParams]:
    """Tube critical value for the assumed basis under the study design (unit variance)."""
    points = tuple(float(v) for v in config.design_points())
    return _study_critical_value(config.assumed_basis, points, config.k, config.alpha)


@dataclass(frozen=True)
class _StudyMatrices:
    grid: np.ndarray
    smoother: np.ndarray  # F Sigma X^T, (grid, n)
    profile: np.ndarray  # diag(F Sigma F^T)
    bias: np.ndarray  # P g_i(x_j) - g_i(grid), (k, grid)


def _study_matrices(config: SimulationConfig) -> _StudyMatrices:
    spec = config.assumed_basis
    points = config.design_points()
    if spec.p > points.size:
        raise DomainError(f"basis of size {spec.p} cannot be fitted to {points.size} points")
    info = design_info(spec, points, 1.0)
    a, b = config.domain
    grid = np.linspace(a, b, config.grid_n)
    X = basis_matrix(spec, points)
    F = basis_matrix(spec, grid)
    smoother = F @ info.sigma @ X.T
    profile = np.einsum("ij,jk,ik->i", F, info.sigma, F)
    g_points = true_curves(config.true_model, config.amplitude, points, config.k)
    g_grid = true_curves(config.true_model, config.amplitude, grid, config.k)
    bias = g_points @ smoother.T - g_grid
    return _StudyMatrices(grid=grid, smoother=smoother, profile=profile, bias=bias)


def _centered_statistic(d: np.ndarray, profile: np.ndarray) -> np.ndarray:
    """max over the grid of sum_i (d_i - mean d)^2 / q; d has groups on axis -2."""
    centered = d - d.mean(axis=-2, keepdims=True)
    return (np.sum(centered**2, axis=-2) / profile).max(axis=-1)


def bias_delta(config: SimulationConfig) -> float:
    """max_x sqrt(sum_i (d_i - mean d)^2 / f^T Sigma f) with d_i = beta_i*^T f - g_i."""
    m = _study_matrices(config)
    return float(math.sqrt(_centered_statistic(m.bias, m.profile)))


def coverage_bias_bound(config: SimulationConfig, delta: float, b: Optional[float] = None) -> float:
    """max(alpha - P(b + delta), P(b - delta) - alpha) for the tube tail P."""
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    b_crit, params = study_critical_value(config)
    b = b_crit if b is None else b
    # P depends on b only through b^2
    upper = config.alpha - tube_tail_probability(params, b + delta)
    lower = tube_tail_probability(params, abs(b - delta)) - config.alpha
    return float(max(upper, lower))


@dataclass(frozen=True)
class CoverageResult:
    estimate: float
    stderr: float
    reps: int
    seed: int
    partitions: int
    b: float


def coverage_simulation(config: SimulationConfig) -> CoverageResult:
    """Fraction of replications whose simultaneous band covers every true contrast."""
    m = _study_matrices(config)
    b, _ = study_critical_value(config)
    limit = b * b
    n = m.smoother.shape[1]

    def worker(rng: np.random.Generator, size: int) -> np.ndarray:
        hits = np.empty(size, dtype=float)
        pos = 0
        for step in _chunks(size):
            eps = rng.standard_normal((step, config.k, n))
            d = m.bias[None, :, :] + eps @ m.smoother.T
            hits[pos : pos + step] = _centered_statistic(d, m.profile) <= limit
            pos += step
        return hits

    hits = run_partitioned("coverage", config.replications, config.seed, config.partitions, worker)
    estimate = float(hits.mean())
    result = CoverageResult(
        estimate=estimate,
        stderr=binomial_stderr(estimate, config.replications),
        reps=config.replications,
        seed=config.seed,
        partitions=config.partitions,
        b=b,
    )
    logger.info(
        "Coverage simulated",
        extra={"model": config.true_model.value, "m": config.assumed_basis.p, "coverage": estimate},
    )
    return result


def average_band_width(config: SimulationConfig) -> Tuple[float, float]:
    """(b, W) with W = b * integral over the domain of sqrt(f^T Sigma f)."""
    spec = config.assumed_basis
    info = design_info(spec, config.design_points(), 1.0)
    b, _ = study_critical_value(config)
    a, hi = config.domain

    def sd(x: float) -> float:
        f = basis_matrix(spec, x)[0]
        return math.sqrt(float(f @ info.sigma @ f))

    inner = [kn for kn in spec.knots() if a < kn < hi]
    integral, _ = integrate.quad(sd, a, hi, points=inner or None, limit=200, epsabs=1e-12)
    return b, b * integral / (hi - a)


# ---------------------------------------------------------------------------
# Tables and plotted series
# ---------------------------------------------------------------------------


def tail_curve(result: MaxProcessResult, params: TubeFormulaParams, bs: Sequence[float]) -> pd.DataFrame:
    """Tube tail against the Monte Carlo tail at every b."""
    rows = []
    for b in bs:
        mc, se = result.tail_probability(b)
        rows.append({"b": float(b), "tube": tube_tail_probability(params, b), "monte_carlo": mc, "stderr": se})
    return pd.DataFrame(rows)


def confidence_coefficient_curve(
    result: MaxProcessResult, params: TubeFormulaParams, levels: Sequence[float]
) -> pd.DataFrame:
    """Actual confidence coefficient Pr(max Y < b^2) of tube critical values at each nominal level."""
    rows = []
    for level in levels:
        b = critical_value(params, 1.0 - level)
        tail, se = result.tail_probability(b)
        rows.append({"nominal": float(level), "b": b, "actual": 1.0 - tail, "stderr": se})
    return pd.DataFrame(rows)


def coverage_table(
    base: SimulationConfig,
    models: Sequence[TrueModel],
    amplitudes: Sequence[float],
    ms: Sequence[int],
    simulate: bool = True,
) -> pd.DataFrame:
    """delta, Delta and (optionally) simulated coverage for every (model, K, m)."""
    a, b = base.domain
    degree = base.assumed_basis.degree
    rows = []
    for model in models:
        for amplitude in amplitudes:
            for m in ms:
                config = base.model_copy(
                    update={
                        "true_model": model,
                        "amplitude": amplitude,
                        "assumed_basis": BasisSpec.bspline(degree, m, a, b),
                    }
                )
                delta = bias_delta(config)
                row = {
                    "model": model.value,
                    "K": amplitude,
                    "m": m,
                    "delta": delta,
                    "Delta": coverage_bias_bound(config, delta),
                }
                if simulate:
                    cov = coverage_simulation(config)
                    row.update({"coverage": cov.estimate, "stderr": cov.stderr})
                rows.append(row)
    return pd.DataFrame(rows)


def width_table(base: SimulationConfig, ms: Sequence[int]) -> pd.DataFrame:
    """Critical value and average band width for every basis size m."""
    a, hi = base.domain
    degree = base.assumed_basis.degree
    rows = []
    for m in ms:
        config = base.model_copy(update={"assumed_basis": BasisSpec.bspline(degree, m, a, hi)})
        b, width = average_band_width(config)
        rows.append({"m": m, "b": b, "W": width})
    return pd.DataFrame(rows)
