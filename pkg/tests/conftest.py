"""Pytest configuration and fixtures."""

from pathlib import Path
from typing import Callable, List

import numpy as np
import pandas as pd
import pytest

from tubeband.config import Settings
from tubeband.models.specs import BasisSpec
from tubeband.services.design import DesignInfo, SphericalCurve, spherical_curve

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

QUAD_SIGMA = np.array(
    [
        [1.0, 0.0, 2.0 / 3.0],
        [0.0, 2.0 / 3.0, 0.0],
        [2.0 / 3.0, 0.0, 1.0],
    ]
)


@pytest.fixture
def test_settings() -> Settings:
    """Create test settings."""
    return Settings(environment="testing", log_level="DEBUG", log_format="text")


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def quad_spec() -> BasisSpec:
    """Quadratic polynomial basis (1, x, x^2)."""
    return BasisSpec.polynomial(3)


@pytest.fixture
def quad_info() -> DesignInfo:
    return DesignInfo.from_sigma(QUAD_SIGMA)


@pytest.fixture
def quad_curve(quad_spec: BasisSpec, quad_info: DesignInfo) -> SphericalCurve:
    """Worked example: constant curvature functional 5 on [-1, 1]."""
    return spherical_curve(quad_spec, quad_info, [(-1.0, 1.0)])


def _circle_map(xs: np.ndarray, order: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    zero = np.zeros_like(xs)
    if order == 0:
        return np.column_stack([np.cos(xs), np.sin(xs), zero])
    if order == 1:
        return np.column_stack([-np.sin(xs), np.cos(xs), zero])
    return np.column_stack([-np.cos(xs), -np.sin(xs), zero])


@pytest.fixture
def circle_map() -> Callable[[np.ndarray, int], np.ndarray]:
    """Unit-speed great circle in the first two coordinates of R^3."""
    return _circle_map


@pytest.fixture
def quarter_circle() -> SphericalCurve:
    return SphericalCurve(vector_map=_circle_map, domain=((0.0, np.pi / 2),))


@pytest.fixture
def full_circle() -> SphericalCurve:
    return SphericalCurve(vector_map=_circle_map, domain=((0.0, 2 * np.pi),), closed_curve=True)


@pytest.fixture
def growth_frame() -> pd.DataFrame:
    """Synthetic growth-style data: three strains, weeks 2..20, r = (12, 24, 12)."""
    weeks = np.arange(2.0, 21.0, 2.0)
    curves = {
        "B6": 10.0 + 20.0 * (1.0 - np.exp(-weeks / 6.0)),
        "B6-17": 10.5 + 20.0 * (1.0 - np.exp(-weeks / 6.0)),
        "B6-XT": 9.0 + 16.0 * (1.0 - np.exp(-weeks / 5.0)),
    }
    reps = {"B6": 12, "B6-17": 24, "B6-XT": 12}
    rows: List[dict] = []
    for group, means in curves.items():
        for x, y in zip(weeks, means):
            rows.append(
                {"group": group, "x": x, "y": y, "se": 0.4 + 0.02 * x, "r": reps[group]}
            )
    return pd.DataFrame(rows)


@pytest.fixture
def growth_csv(tmp_path: Path, growth_frame: pd.DataFrame) -> Path:
    path = tmp_path / "growth.csv"
    growth_frame.to_csv(path, index=False)
    return path


@pytest.fixture
def growth_config(tmp_path: Path, growth_csv: Path) -> Path:
    """Run configuration for the synthetic growth data."""
    path = tmp_path / "growth.cfg"
    path.write_text(
        "\n".join(
            [
                "[basis]",
                "family = bspline",
                "degree = 2",
                "p = 5",
                "a = 2",
                "b = 20",
                "",
                "[design]",
                f"data = {growth_csv}",
                "",
                "[variance]",
                "mode = pooled",
                "",
                "[inference]",
                "alpha = 0.05",
                "contrast = 1, 0, -1",
                "",
                "[grids]",
                "band_grid_n = 91",
                "arc_segments = 10000",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return path
