"""Pydantic models for basis, tube-formula and simulation specifications."""

import math
from enum import Enum
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gammaln

MAX_BSPLINE_DEGREE = 20


class BasisFamily(str, Enum):
    """Regression basis families."""

    POLYNOMIAL = "polynomial"
    TRIGONOMETRIC = "trigonometric"
    BSPLINE = "bspline"


class BasisSpec(BaseModel):
    """A regression basis f(x) of dimension p."""

    model_config = ConfigDict(frozen=True)

    family: BasisFamily
    p: int = Field(ge=1)
    degree: int = Field(default=0, ge=0)
    domain_map: Optional[Tuple[float, float]] = None
    harmonics: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_family(self) -> "BasisSpec":
        """Family-specific invariants."""
        if self.family is BasisFamily.BSPLINE:
            if self.domain_map is None:
                raise ValueError("bspline basis requires domain_map (a, b)")
            a, b = self.domain_map
            if not a < b:
                raise ValueError(f"bspline domain_map needs a < b, got ({a}, {b})")
            if self.degree > MAX_BSPLINE_DEGREE:
                raise ValueError(f"bspline degree {self.degree} exceeds {MAX_BSPLINE_DEGREE}")
            if self.p < self.degree + 1:
                raise ValueError(f"bspline requires p >= degree + 1, got p={self.p}")
        elif self.family is BasisFamily.TRIGONOMETRIC:
            if self.harmonics is None or self.p != 2 * self.harmonics + 1:
                raise ValueError("trigonometric basis requires p = 2 * harmonics + 1")
        return self

    @classmethod
    def polynomial(cls, p: int) -> "BasisSpec":
        return cls(family=BasisFamily.POLYNOMIAL, p=p)

    @classmethod
    def trigonometric(cls, harmonics: int) -> "BasisSpec":
        return cls(family=BasisFamily.TRIGONOMETRIC, p=2 * harmonics + 1, harmonics=harmonics)

    @classmethod
    def bspline(cls, degree: int, m: int, a: float, b: float) -> "BasisSpec":
        """The equally spaced basis f_{d,m,a,b}."""
        return cls(family=BasisFamily.BSPLINE, p=m, degree=degree, domain_map=(a, b))

    @property
    def knot_spacing(self) -> float:
        """Distance between adjacent bspline knots in x units."""
        a, b = self.domain_map  # type: ignore[misc]
        return (b - a) / (self.p - self.degree)

    def knots(self) -> List[float]:
        """Interior breakpoints of a bspline basis (empty for smooth families)."""
        if self.family is not BasisFamily.BSPLINE or self.p == self.degree:
            return []
        a, _ = self.domain_map  # type: ignore[misc]
        return [a + j * self.knot_spacing for j in range(1, self.p - self.degree)]


class TubeFormulaParams(BaseModel):
    """Everything the k-curve tube formula needs."""

    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=2)
    gamma_length: float = Field(gt=0)
    euler_char: int = Field(ge=0)
    nu: Optional[int] = Field(default=None, ge=1)

    @property
    def lead_coeff(self) -> float:
        """Gamma(k/2) / (sqrt(pi) Gamma((k-1)/2))."""
        return math.exp(gammaln(self.k / 2) - gammaln((self.k - 1) / 2)) / math.sqrt(math.pi)

    def known_variance(self) -> "TubeFormulaParams":
        """Same geometry with the studentization removed."""
        return self.model_copy(update={"nu": None})


class TrueModel(str, Enum):
    """True regression curves of the misspecification study."""

    MODEL1 = "model1"
    MODEL2 = "model2"
    MODEL3 = "model3"
    IN_BASIS = "in-basis"


class SimulationConfig(BaseModel):
    """Drives the coverage, bias and width studies."""

    model_config = ConfigDict(frozen=True)

    true_model: TrueModel = TrueModel.MODEL1
    amplitude: float = Field(default=1.0, gt=0)
    assumed_basis: BasisSpec = Field(default_factory=lambda: BasisSpec.bspline(2, 5, 0.0, 1.0))
    k: int = Field(default=3, ge=2)
    n_points: int = Field(default=11, ge=2)
    design: Literal["literal", "endpoint"] = "literal"
    replications: int = Field(default=100_000, ge=1)
    seed: int = Field(default=20240601, ge=0, lt=2**64)
    partitions: int = Field(default=8, ge=1)
    grid_n: int = Field(default=2001, ge=2)
    alpha: float = 0.05

    @field_validator("alpha")
    @classmethod
    def check_alpha(cls, v: float) -> float:
        if not 0.0 < v <= 0.5:
            raise ValueError("alpha must lie in (0, 0.5]")
        return v

    @model_validator(mode="after")
    def check_models(self) -> "SimulationConfig":
        if self.true_model is not TrueModel.IN_BASIS and self.k != 3:
            raise ValueError(f"{self.true_model.value} defines exactly 3 group curves")
        return self

    def design_points(self) -> np.ndarray:
        """x_j = (j-1)/n (literal) or (j-1)/(n-1) (endpoint), j = 1..n."""
        j = np.arange(self.n_points, dtype=float)
        denom = self.n_points if self.design == "literal" else self.n_points - 1
        return j / denom

    @property
    def domain(self) -> Tuple[float, float]:
        return self.assumed_basis.domain_map or (0.0, 1.0)
