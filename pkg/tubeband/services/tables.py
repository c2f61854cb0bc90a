"""CSV ingestion of group data and emission of band, scan and study tables."""

from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from tubeband.core.logging import get_logger
from tubeband.services.inference import GroupSample, reduce_replicates
from tubeband.utils.exceptions import ConfigError, DomainError

logger = get_logger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV with exact float round-tripping."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as e:
        raise ConfigError(f"Data file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"Malformed CSV {path}: {e}") from e


def write_table(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write with 17 significant digits so a re-read reproduces every float."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("Wrote table", extra={"path": str(path), "rows": len(frame)})
    return path


def load_group_csv(path: PathLike) -> List[GroupSample]:
    """Groups from ``group,x,y[,se,r]`` rows, or raw replicates ``group,x,y`` with repeated x."""
    frame = read_table(path)
    missing = {"group", "x", "y"} - set(frame.columns)
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    frame["group"] = frame["group"].astype(str)

    repeated = frame.duplicated(subset=["group", "x"]).any()
    if repeated:
        if "se" in frame.columns:
            raise DomainError(f"{path}: repeated (group, x) rows cannot carry se")
        samples = reduce_replicates(frame)
    else:
        samples = []
        for group_id, rows in frame.groupby("group", sort=False):
            rows = rows.sort_values("x")
            r = 1
            if "r" in rows.columns:
                counts = rows["r"].dropna().unique()
                if counts.size > 1:
                    raise DomainError(f"group {group_id}: r must be constant within a group")
                r = int(counts[0]) if counts.size else 1
            se = rows["se"].to_numpy(dtype=float) if "se" in rows.columns else None
            samples.append(
                GroupSample(
                    group_id=str(group_id),
                    r=r,
                    x=rows["x"].to_numpy(dtype=float),
                    y=rows["y"].to_numpy(dtype=float),
                    se=se,
                )
            )

    reference = samples[0].x
    for sample in samples[1:]:
        if sample.x.shape != reference.shape or not np.allclose(sample.x, reference):
            raise DomainError(f"group {sample.group_id} is not observed on the shared design points")
    logger.info(
        "Loaded group data",
        extra={"path": str(path), "groups": len(samples), "points": int(reference.size)},
    )
    return samples
