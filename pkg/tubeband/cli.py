"""Command-line entry point: ``tubeband <command> [flags]``."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from tubeband.config import load_run_config, settings
from tubeband.core.logging import get_logger, setup_logging
from tubeband.core.metrics import export_textfile
from tubeband.services.orchestrator import RunOrchestrator
from tubeband.utils.exceptions import ContractError, NumericalError

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONTRACT = 2

# flag dest -> RunConfig key
OVERRIDES: Dict[str, str] = {
    "output": "output.directory",
    "k": "tube.k",
    "gamma_length": "tube.gamma_length",
    "euler": "tube.euler_char",
    "nu": "tube.nu",
    "b": "tube.b",
    "alpha": "inference.alpha",
    "contrast": "inference.contrast",
    "data": "design.data",
    "variance_mode": "variance.mode",
    "variance_nu": "variance.nu",
    "studentize": "variance.studentize",
    "grid_n": "grids.x_grid_n",
    "alpha_grid_n": "grids.alpha_grid_n",
    "arc_segments": "grids.arc_segments",
    "band_grid_n": "grids.band_grid_n",
    "model": "simulation.model",
    "amplitude": "simulation.amplitude",
    "m": "simulation.m",
    "m_values": "simulation.m_values",
    "design": "simulation.design",
    "reps": "simulation.replications",
    "seed": "simulation.seed",
    "partitions": "simulation.partitions",
    "sim_k": "simulation.k",
    "sim_grid_n": "simulation.grid_n",
}


def _add_tube_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help="number of groups")
    parser.add_argument("--gamma-length", type=float, help="curve length |Gamma|")
    parser.add_argument("--euler", type=int, help="Euler characteristic of the curve")
    parser.add_argument("--nu", type=int, help="degrees of freedom of the variance estimate")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, help="group CSV (group,x,y[,se,r])")
    parser.add_argument("--variance-mode", choices=["known", "pooled"])
    parser.add_argument("--variance-nu", type=int, help="override the pooled degrees of freedom")
    parser.add_argument(
        "--studentize", action="store_const", const=True, help="treat the pooled variance as estimated"
    )
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--b", type=float, help="use this critical value instead of solving")
    parser.add_argument("--band-grid-n", type=int)


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--reps", type=int, help="Monte Carlo replications")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--partitions", type=int, help="RNG partitions (fixes the random streams)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubeband",
        description="Simultaneous confidence bands for contrasts among regression curves",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--output", type=Path, help="directory for CSV artifacts")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tailprob", parents=[common], help="tube tail probability at b")
    _add_tube_flags(p)
    p.add_argument("--b", type=float)

    p = sub.add_parser("critical", parents=[common], help="critical value for alpha")
    _add_tube_flags(p)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("geometry", parents=[common], help="length, curvature and critical radius")
    p.add_argument("--grid-n", type=int)
    p.add_argument("--alpha-grid-n", type=int)
    p.add_argument("--arc-segments", type=int)

    p = sub.add_parser("fit", parents=[common], help="fit groups and rank bases by AIC/BIC")
    _add_data_flags(p)

    p = sub.add_parser("band", parents=[common], help="simultaneous band for one contrast")
    _add_data_flags(p)
    p.add_argument(
        "--contrast",
        type=str,
        help="comma separated contrast, e.g. 1,-1,0 (write --contrast=-1,1,0 when it starts with a minus)",
    )

    p = sub.add_parser("scan", parents=[common], help="chi-square scan over x")
    _add_data_flags(p)

    p = sub.add_parser("sim-max", parents=[common], help="Monte Carlo maximum of the chi-square process")
    _add_sim_flags(p)
    p.add_argument("--k", dest="sim_k", type=int)
    p.add_argument("--grid-n", dest="sim_grid_n", type=int)

    p = sub.add_parser("sim-coverage", parents=[common], help="coverage under a misspecified model")
    _add_sim_flags(p)
    p.add_argument("--model", choices=["model1", "model2", "model3", "in-basis"])
    p.add_argument("--amplitude", type=float)
    p.add_argument("--m", type=int, help="number of B-spline functions assumed")
    p.add_argument("--design", choices=["literal", "endpoint"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--grid-n", dest="sim_grid_n", type=int)
    p.add_argument("--table", action="store_true", help="full model x K x m table")
    p.add_argument("--no-simulate", action="store_true", help="bias columns only")

    p = sub.add_parser("widths", parents=[common], help="average band width per basis size")
    p.add_argument("--m-values", type=str, help="comma separated m values")
    p.add_argument("--design", choices=["literal", "endpoint"])
    p.add_argument("--alpha", type=float)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values keyed by config path; list flags stay strings for the section validators."""
    values = vars(args)
    return {key: values[dest] for dest, key in OVERRIDES.items() if values.get(dest) is not None}


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()

    try:
        config = load_run_config(args.config).with_overrides(_overrides(args))
        orchestrator = RunOrchestrator(
            config,
            table=getattr(args, "table", False),
            simulate=not getattr(args, "no_simulate", False),
        )
        summary = orchestrator.run(args.command)
    except ValidationError as e:
        print(f"tubeband: invalid configuration: {_first_error(e)}", file=sys.stderr)
        return EXIT_CONTRACT
    except ContractError as e:
        print(f"tubeband: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericalError as e:
        logger.error("Numerical failure", extra={"command": args.command, "error": str(e)})
        print(f"tubeband: {e}", file=sys.stderr)
        return EXIT_NUMERICAL

    print(json.dumps(summary, default=_json_default))
    if settings.metrics_textfile:
        export_textfile(settings.metrics_textfile)
    return EXIT_OK


def _first_error(error: ValidationError) -> str:
    errors: List[Dict[str, Any]] = error.errors()  # type: ignore[assignment]
    if not errors:
        return str(error).splitlines()[0]
    first = errors[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    return f"{location}: {first.get('msg', '')}" if location else str(first.get("msg", ""))


if __name__ == "__main__":
    sys.exit(main())
