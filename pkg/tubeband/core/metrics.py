"""Prometheus metrics for batch runs (textfile export)."""

from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

registry = CollectorRegistry()

# Metrics
replications_total = Counter(
    "tubeband_replications_total",
    "Total number of Monte Carlo replications drawn",
    ["kind"],
    registry=registry,
)

partitions_total = Counter(
    "tubeband_partitions_total",
    "Total number of RNG partitions executed",
    ["kind"],
    registry=registry,
)

command_duration_seconds = Histogram(
    "tubeband_command_duration_seconds",
    "Duration of CLI commands in seconds",
    ["command"],
    buckets=[0.1, 0.5, 1, 5, 10, 30, 60, 120, 300, 600],
    registry=registry,
)


def record_replications(kind: str, count: int) -> None:
    """Record replications drawn by one partition."""
    replications_total.labels(kind=kind).inc(count)
    partitions_total.labels(kind=kind).inc()


def record_command(command: str, duration: float) -> None:
    """Record a finished CLI command."""
    command_duration_seconds.labels(command=command).observe(duration)


def replications_recorded(kind: str) -> float:
    """Current replication count for ``kind``."""
    value = registry.get_sample_value("tubeband_replications_total", {"kind": kind})
    return value or 0.0


def export_textfile(path: Union[str, Path]) -> None:
    """Write the registry in the node-exporter textfile format."""
    write_to_textfile(str(path), registry)
