"""Application configuration management."""

import configparser
import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tubeband.utils.exceptions import ConfigError


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="TUBEBAND_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    environment: str = Field(default="development")
    app_name: str = Field(default="tubeband")
    app_version: str = Field(default="0.1.0")

    # Logging
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json")
    log_file_path: Optional[str] = Field(default=None)

    # Workers
    threads: int = Field(default=1, ge=1)

    # Monitoring
    metrics_textfile: Optional[str] = Field(default=None)

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Only json and text formatters exist."""
        if v not in ("json", "text"):
            raise ValueError("log_format must be 'json' or 'text'")
        return v


settings = Settings()


# ---------------------------------------------------------------------------
# Run configuration (INI file, one section per module)
# ---------------------------------------------------------------------------


def parse_number(token: str) -> float:
    """Parse a float, accepting exact fractions such as ``2/3``."""
    token = token.strip()
    try:
        return float(Fraction(token))
    except (ValueError, ZeroDivisionError):
        try:
            return float(token)
        except ValueError as e:
            raise ValueError(f"Not a number: {token!r}") from e


def parse_vector(value: Any) -> List[float]:
    """Parse ``"1, 2/3, 0"`` into a list of floats."""
    if isinstance(value, str):
        return [parse_number(t) for t in value.replace(";", ",").split(",") if t.strip()]
    return [float(v) for v in value]


def parse_rows(value: Any) -> List[List[float]]:
    """Parse ``"1,0; 0,1"`` into a list of rows."""
    if isinstance(value, str):
        return [parse_vector(row) for row in value.split(";") if row.strip()]
    return [parse_vector(row) for row in value]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BasisSection(_Section):
    family: Literal["polynomial", "trigonometric", "bspline"] = "bspline"
    p: Optional[int] = Field(default=None, ge=1)
    degree: int = Field(default=2, ge=0)
    a: Optional[float] = None
    b: Optional[float] = None
    harmonics: Optional[int] = Field(default=None, ge=1)


class DomainSection(_Section):
    intervals: List[Tuple[float, float]] = Field(default_factory=list)
    closed: bool = False

    @field_validator("intervals", mode="before")
    @classmethod
    def parse_intervals(cls, v: Any) -> Any:
        if isinstance(v, str):
            rows = parse_rows(v)
            if any(len(r) != 2 for r in rows):
                raise ValueError("each domain interval needs exactly two endpoints")
            return [tuple(r) for r in rows]
        return v

    @field_validator("intervals")
    @classmethod
    def check_ordered(cls, v: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        for lo, hi in v:
            if lo > hi:
                raise ValueError(f"interval [{lo}, {hi}] is reversed")
        return v


class DesignSection(_Section):
    sigma: Optional[List[List[float]]] = None
    points: Optional[List[float]] = None
    variance: Optional[List[float]] = None
    data: Optional[Path] = None
    groups: Optional[List[str]] = None

    @field_validator("sigma", mode="before")
    @classmethod
    def parse_sigma(cls, v: Any) -> Any:
        return parse_rows(v) if v is not None else v

    @field_validator("points", "variance", mode="before")
    @classmethod
    def parse_vectors(cls, v: Any) -> Any:
        return parse_vector(v) if v is not None else v

    @field_validator("groups", mode="before")
    @classmethod
    def parse_groups(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [g.strip() for g in v.split(",") if g.strip()]
        return v


class VarianceSection(_Section):
    mode: Literal["known", "pooled"] = "known"
    nu: Optional[int] = Field(default=None, ge=1)
    studentize: bool = False


class TubeSection(_Section):
    k: Optional[int] = Field(default=None, ge=2)
    gamma_length: Optional[float] = Field(default=None, gt=0)
    euler_char: Optional[int] = Field(default=None, ge=0)
    nu: Optional[int] = Field(default=None, ge=1)
    b: Optional[float] = Field(default=None, ge=0)


class InferenceSection(_Section):
    alpha: float = 0.05
    contrast: Optional[List[float]] = None
    degrees: List[int] = Field(default_factory=lambda: [2, 3, 4])
    candidates: Optional[List[Tuple[int, int]]] = None

    @field_validator("alpha")
    @classmethod
    def check_alpha(cls, v: float) -> float:
        if not 0.0 < v <= 0.5:
            raise ValueError("alpha must lie in (0, 0.5]")
        return v

    @field_validator("contrast", "degrees", mode="before")
    @classmethod
    def parse_lists(cls, v: Any) -> Any:
        return parse_vector(v) if isinstance(v, str) else v

    @field_validator("candidates", mode="before")
    @classmethod
    def parse_candidates(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [(int(d), int(m)) for d, m in parse_rows(v)]
        return v


class GridSection(_Section):
    x_grid_n: int = Field(default=2001, ge=2)
    alpha_grid_n: int = Field(default=401, ge=2)
    arc_segments: int = Field(default=100_000, ge=2)
    band_grid_n: int = Field(default=201, ge=2)


class SimulationSection(_Section):
    model: Literal["model1", "model2", "model3", "in-basis"] = "model1"
    amplitude: float = Field(default=1.0, gt=0)
    k: int = Field(default=3, ge=2)
    m: int = Field(default=5, ge=1)
    m_values: List[int] = Field(default_factory=lambda: list(range(3, 11)))
    n_points: int = Field(default=11, ge=2)
    design: Literal["literal", "endpoint"] = "literal"
    replications: int = Field(default=100_000, ge=1)
    seed: int = Field(default=20240601, ge=0, lt=2**64)
    partitions: int = Field(default=8, ge=1)
    grid_n: int = Field(default=2001, ge=2)
    b_values: List[float] = Field(default_factory=lambda: [1.0 + 0.25 * i for i in range(13)])

    @field_validator("m_values", "b_values", mode="before")
    @classmethod
    def parse_lists(cls, v: Any) -> Any:
        return parse_vector(v) if isinstance(v, str) else v


class OutputSection(_Section):
    directory: Optional[Path] = None


class RunConfig(_Section):
    """Validated run configuration; every CLI flag overrides one key."""

    basis: BasisSection = Field(default_factory=BasisSection)
    domain: DomainSection = Field(default_factory=DomainSection)
    design: DesignSection = Field(default_factory=DesignSection)
    variance: VarianceSection = Field(default_factory=VarianceSection)
    tube: TubeSection = Field(default_factory=TubeSection)
    inference: InferenceSection = Field(default_factory=InferenceSection)
    grids: GridSection = Field(default_factory=GridSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def default_domain(self) -> "RunConfig":
        """A bspline basis without explicit intervals covers its own [a, b]."""
        if not self.domain.intervals and self.basis.a is not None and self.basis.b is not None:
            self.domain.intervals = [(self.basis.a, self.basis.b)]
        return self

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON dump of this configuration."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Return a copy with dotted ``section.key`` values replaced (``None`` values skipped)."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, key = dotted.split(".", 1)
            data[section][key] = value
        return RunConfig.model_validate(data)


def load_run_config(path: Optional[Path]) -> RunConfig:
    """Load a RunConfig from an INI file (or defaults when ``path`` is None)."""
    if path is None:
        return RunConfig()

    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"Malformed config {path}: {e}") from e

    raw: Dict[str, Dict[str, str]] = {
        section: dict(parser.items(section)) for section in parser.sections()
    }
    return RunConfig.model_validate(raw)
