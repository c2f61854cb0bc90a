"""Run orchestration: turns a RunConfig into service calls, CSV artifacts and a JSON summary."""

import math
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from tubeband.config import RunConfig
from tubeband.core.logging import get_logger
from tubeband.core.metrics import record_command
from tubeband.models.specs import BasisSpec, SimulationConfig, TrueModel, TubeFormulaParams
from tubeband.services.design import (
    DesignInfo,
    SphericalCurve,
    design_info,
    spherical_curve,
)
from tubeband.services.geometry import (
    CurveGeometry,
    arc_length,
    curve_geometry,
    euler_characteristic,
    kappa_values,
)
from tubeband.services.inference import (
    GroupFit,
    GroupSample,
    chi2_scan,
    contrast_band,
    fit_groups,
    model_selection,
    pooled_variance,
    studentized_df,
)
from tubeband.services.montecarlo import (
    bias_delta,
    confidence_coefficient_curve,
    coverage_bias_bound,
    coverage_simulation,
    coverage_table,
    simulate_max_process,
    tail_curve,
    width_table,
)
from tubeband.services.tables import load_group_csv, write_table
from tubeband.services.tube import critical_value, tail_probability
from tubeband.utils.exceptions import ConfigError

logger = get_logger(__name__)

STUDY_AMPLITUDES = (1.0, 3.0, 9.0)
CONFIDENCE_LEVELS = (0.80, 0.85, 0.90, 0.95, 0.99)


class RunOrchestrator:
    """Executes one CLI command against a validated configuration."""

    def __init__(self, config: RunConfig, table: bool = False, simulate: bool = True) -> None:
        self.config = config
        self.table = table
        self.simulate = simulate
        self.artifacts: List[str] = []

    # -- building blocks ---------------------------------------------------

    def basis_spec(self) -> BasisSpec:
        """BasisSpec from the [basis] section."""
        section = self.config.basis
        if section.family == "trigonometric":
            if section.harmonics is None:
                raise ConfigError("trigonometric basis needs basis.harmonics")
            return BasisSpec.trigonometric(section.harmonics)
        if section.p is None:
            raise ConfigError(f"{section.family} basis needs basis.p")
        if section.family == "polynomial":
            return BasisSpec.polynomial(section.p)
        if section.a is None or section.b is None:
            raise ConfigError("bspline basis needs basis.a and basis.b")
        return BasisSpec.bspline(section.degree, section.p, section.a, section.b)

    def domain(self) -> List[Tuple[float, float]]:
        if not self.config.domain.intervals:
            raise ConfigError("no domain intervals configured (domain.intervals)")
        return list(self.config.domain.intervals)

    def samples(self) -> List[GroupSample]:
        data = self.config.design.data
        if data is None:
            raise ConfigError("this command needs group data (design.data)")
        samples = load_group_csv(data)
        wanted = self.config.design.groups
        if wanted:
            by_id = {s.group_id: s for s in samples}
            unknown = [g for g in wanted if g not in by_id]
            if unknown:
                raise ConfigError(f"unknown groups in design.groups: {unknown}")
            samples = [by_id[g] for g in wanted]
        return samples

    def variance_for(self, samples: Optional[List[GroupSample]], n: int) -> np.ndarray:
        """Per-point variances: configured (known) or pooled from the standard errors."""
        if self.config.variance.mode == "pooled":
            if samples is None:
                raise ConfigError("pooled variance needs group data")
            return pooled_variance(samples)
        configured = self.config.design.variance
        if configured is None:
            return np.ones(n)
        if len(configured) == 1:
            return np.full(n, configured[0])
        if len(configured) != n:
            raise ConfigError(f"design.variance has {len(configured)} entries for {n} points")
        return np.asarray(configured, dtype=float)

    def nu(self, samples: Optional[List[GroupSample]]) -> Optional[int]:
        """Degrees of freedom for a studentized band; None treats the variance as known."""
        variance = self.config.variance
        if variance.nu is not None or variance.mode != "pooled" or not variance.studentize:
            return variance.nu
        return studentized_df(samples) if samples else None

    def design(self, spec: BasisSpec, samples: Optional[List[GroupSample]] = None) -> DesignInfo:
        section = self.config.design
        if section.sigma is not None:
            return DesignInfo.from_sigma(np.asarray(section.sigma, dtype=float))
        if section.points is not None:
            points = np.asarray(section.points, dtype=float)
        elif samples is not None:
            points = samples[0].x
        else:
            raise ConfigError("design needs design.sigma, design.points or design.data")
        return design_info(spec, points, self.variance_for(samples, points.size))

    def curve(self, samples: Optional[List[GroupSample]] = None) -> Tuple[BasisSpec, DesignInfo, SphericalCurve]:
        spec = self.basis_spec()
        info = self.design(spec, samples)
        curve = spherical_curve(spec, info, self.domain(), self.config.domain.closed)
        return spec, info, curve

    def geometry(self, curve: SphericalCurve) -> CurveGeometry:
        grids = self.config.grids
        return curve_geometry(curve, grids.x_grid_n, grids.alpha_grid_n, grids.arc_segments)

    def tube_params(self, k: Optional[int] = None, nu: Optional[int] = None) -> TubeFormulaParams:
        """Explicit [tube] parameters, or |Gamma| and chi measured on the configured curve."""
        tube = self.config.tube
        k = tube.k if tube.k is not None else k
        if k is None:
            raise ConfigError("number of groups unknown (tube.k)")
        nu = tube.nu if tube.nu is not None else nu
        if tube.gamma_length is not None:
            return TubeFormulaParams(
                k=k,
                gamma_length=tube.gamma_length,
                euler_char=1 if tube.euler_char is None else tube.euler_char,
                nu=nu,
            )
        _, _, curve = self.curve()
        return TubeFormulaParams(
            k=k,
            gamma_length=arc_length(curve, self.config.grids.arc_segments).length,
            euler_char=euler_characteristic(curve),
            nu=nu,
        )

    def simulation_config(self, m: Optional[int] = None) -> SimulationConfig:
        sim = self.config.simulation
        a = 0.0 if self.config.basis.a is None else self.config.basis.a
        b = 1.0 if self.config.basis.b is None else self.config.basis.b
        return SimulationConfig(
            true_model=TrueModel(sim.model),
            amplitude=sim.amplitude,
            assumed_basis=BasisSpec.bspline(self.config.basis.degree, m or sim.m, a, b),
            k=sim.k,
            n_points=sim.n_points,
            design=sim.design,
            replications=sim.replications,
            seed=sim.seed,
            partitions=sim.partitions,
            grid_n=sim.grid_n,
            alpha=self.config.inference.alpha,
        )

    def write(self, name: str, frame: Any) -> None:
        directory = self.config.output.directory
        if directory is None:
            return
        path = write_table(frame, Path(directory) / name)
        self.artifacts.append(str(path))

    def fit(self, samples: List[GroupSample]) -> GroupFit:
        spec = self.basis_spec()
        info = self.design(spec, samples)
        return fit_groups(spec, info, samples)

    def group_critical_value(self, fit: GroupFit, samples: List[GroupSample]) -> float:
        if self.config.tube.b is not None:
            return self.config.tube.b
        curve = spherical_curve(fit.spec, fit.info, self.domain(), self.config.domain.closed)
        params = TubeFormulaParams(
            k=fit.k,
            gamma_length=arc_length(curve, self.config.grids.arc_segments).length,
            euler_char=euler_characteristic(curve),
            nu=self.nu(samples),
        )
        return critical_value(params, self.config.inference.alpha)

    def band_grid(self) -> np.ndarray:
        n = self.config.grids.band_grid_n
        return np.concatenate([np.linspace(lo, hi, n) for lo, hi in self.domain()])

    # -- commands ----------------------------------------------------------

    def run(self, command: str) -> Dict[str, Any]:
        """Dispatch ``command`` and wrap the result with reproducibility metadata."""
        handlers = {
            "tailprob": self.cmd_tailprob,
            "critical": self.cmd_critical,
            "geometry": self.cmd_geometry,
            "fit": self.cmd_fit,
            "band": self.cmd_band,
            "scan": self.cmd_scan,
            "sim-max": self.cmd_sim_max,
            "sim-coverage": self.cmd_sim_coverage,
            "widths": self.cmd_widths,
        }
        if command not in handlers:
            raise ConfigError(f"unknown command {command!r}")

        start = time.time()
        result = handlers[command]()
        duration = time.time() - start
        record_command(command, duration)
        logger.info("Command finished", extra={"command": command, "duration": duration})
        return {
            "command": command,
            "fingerprint": self.config.fingerprint(),
            "seed": self.config.simulation.seed,
            **result,
            "artifacts": self.artifacts,
        }

    def cmd_tailprob(self) -> Dict[str, Any]:
        if self.config.tube.b is None:
            raise ConfigError("tailprob needs a threshold (tube.b)")
        params = self.tube_params()
        b = self.config.tube.b
        return {"b": b, "tail": tail_probability(params, b), **_params_dict(params)}

    def cmd_critical(self) -> Dict[str, Any]:
        params = self.tube_params()
        alpha = self.config.inference.alpha
        return {"alpha": alpha, "b": critical_value(params, alpha), **_params_dict(params)}

    def cmd_geometry(self) -> Dict[str, Any]:
        _, _, curve = self.curve()
        geometry = self.geometry(curve)
        xs = curve.grid(self.config.grids.x_grid_n)
        self.write("kappa.csv", _frame({"x": xs, "kappa": kappa_values(curve, xs)}))
        arc, radius = geometry.arc, geometry.radius
        return {
            "gamma_length": geometry.gamma_length,
            "gamma_length_polyline": arc.polyline,  # type: ignore[union-attr]
            "arc_warning": arc.warning,  # type: ignore[union-attr]
            "euler_char": geometry.euler_char,
            "kappa_max": geometry.kappa_max,
            "theta_loc": geometry.theta_loc,
            "theta_loc_over_pi": geometry.theta_loc / math.pi,
            "theta_c": geometry.theta_c,
            "theta_c_over_pi": geometry.theta_c / math.pi,
            "theta_c_branch": radius.branch,  # type: ignore[union-attr]
            "skipped_fraction": radius.skipped_fraction,  # type: ignore[union-attr]
            "skipped_warning": radius.skipped_warning,  # type: ignore[union-attr]
        }

    def cmd_fit(self) -> Dict[str, Any]:
        samples = self.samples()
        points = samples[0].x
        variance = self.variance_for(samples, points.size)
        a, b = self.domain()[0][0], self.domain()[-1][1]
        candidates = self.config.inference.candidates or [
            (d, m) for d in self.config.inference.degrees for m in range(d + 1, points.size + 1)
        ]
        selection = model_selection(candidates, samples, variance, (a, b))
        self.write("selection.csv", selection.to_frame())

        summary: Dict[str, Any] = {
            "groups": [s.group_id for s in samples],
            "aic_best": list(selection.aic_ranking[0]),
            "bic_best": list(selection.bic_ranking[0]),
            "selected": None if selection.selected is None else list(selection.selected),
            "variance": variance.tolist(),
        }
        if self.config.basis.p is not None:
            fit = self.fit(samples)
            columns = {"group": list(fit.group_ids)}
            for j in range(fit.spec.p):
                columns[f"beta{j + 1}"] = fit.beta[:, j]
            self.write("coefficients.csv", _frame(columns))
            summary["loss"] = float(fit.rss.sum())
        return summary

    def cmd_band(self) -> Dict[str, Any]:
        contrast = self.config.inference.contrast
        if contrast is None:
            raise ConfigError("band needs a contrast (inference.contrast)")
        samples = self.samples()
        fit = self.fit(samples)
        b = self.group_critical_value(fit, samples)
        band = contrast_band(fit, contrast, b, self.band_grid())
        self.write("band.csv", band.to_frame())
        outside = band.excludes_zero()
        return {
            "b": b,
            "contrast": list(band.contrast),
            "nu": self.nu(samples),
            "points_excluding_zero": int(outside.sum()),
            "max_halfwidth": float(band.halfwidth.max()),
        }

    def cmd_scan(self) -> Dict[str, Any]:
        samples = self.samples()
        fit = self.fit(samples)
        b = self.group_critical_value(fit, samples)
        scan = chi2_scan(fit, self.band_grid(), b)
        self.write("scan.csv", scan.to_frame())
        rejected = scan.x[scan.reject]
        return {
            "b": b,
            "threshold": scan.threshold,
            "max_chi2": float(scan.chi2.max()),
            "rejected_points": int(rejected.size),
            "rejected_range": None if rejected.size == 0 else [float(rejected[0]), float(rejected[-1])],
        }

    def cmd_sim_max(self) -> Dict[str, Any]:
        sim = self.config.simulation
        _, _, curve = self.curve()
        params = self.tube_params(k=sim.k)
        result = simulate_max_process(
            curve, params.k, sim.replications, sim.grid_n, sim.seed, sim.partitions
        )
        tails = tail_curve(result, params, sim.b_values)
        self.write("tail_curve.csv", tails)
        self.write(
            "confidence_curve.csv", confidence_coefficient_curve(result, params, CONFIDENCE_LEVELS)
        )
        return {
            "reps": result.reps,
            "partitions": result.partitions,
            "gamma_length": params.gamma_length,
            "tail_curve": tails.to_dict(orient="records"),
        }

    def cmd_sim_coverage(self) -> Dict[str, Any]:
        config = self.simulation_config()
        simulate = self.simulate
        if self.table:
            frame = coverage_table(
                config,
                [TrueModel.MODEL1, TrueModel.MODEL2, TrueModel.MODEL3],
                STUDY_AMPLITUDES,
                self.config.simulation.m_values,
                simulate=simulate,
            )
            self.write("coverage_table.csv", frame)
            return {"rows": frame.to_dict(orient="records")}

        delta = bias_delta(config)
        summary: Dict[str, Any] = {
            "model": config.true_model.value,
            "K": config.amplitude,
            "m": config.assumed_basis.p,
            "design": config.design,
            "delta": delta,
            "Delta": coverage_bias_bound(config, delta),
        }
        if simulate:
            coverage = coverage_simulation(config)
            summary.update(
                {
                    "estimate": coverage.estimate,
                    "stderr": coverage.stderr,
                    "reps": coverage.reps,
                    "partitions": coverage.partitions,
                    "b": coverage.b,
                }
            )
        return summary

    def cmd_widths(self) -> Dict[str, Any]:
        frame = width_table(self.simulation_config(), self.config.simulation.m_values)
        self.write("widths.csv", frame)
        return {"rows": frame.to_dict(orient="records")}


def _params_dict(params: TubeFormulaParams) -> Dict[str, Any]:
    return {
        "k": params.k,
        "gamma_length": params.gamma_length,
        "euler_char": params.euler_char,
        "nu": params.nu,
    }


def _frame(columns: Dict[str, Any]) -> pd.DataFrame:
    return pd.DataFrame(columns)
