"""
Solver metrics for batch denoising runs.
Prometheus counters and histograms on a private registry, written out in the
text exposition format for a node-exporter textfile collector.
"""
import os
import sys
import time
from pathlib import Path
from types import TracebackType
from typing import Dict, Optional, Type, Union

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, Info, write_to_textfile

from tensor_denoise.logger import get_logger

logger = get_logger(__name__)

# ================================
# PROMETHEUS METRICS
# ================================

# Create custom registry for isolation
metrics_registry = CollectorRegistry()

ista_iterations_total = Counter(
    "tdn_ista_iterations_total",
    "Total coefficient-solver iterations",
    registry=metrics_registry,
)

ista_backtracks_total = Counter(
    "tdn_ista_backtracks_total",
    "Total step-size backtracking steps",
    registry=metrics_registry,
)

newton_iterations_total = Counter(
    "tdn_newton_iterations_total",
    "Total Newton iterations on the dictionary dual",
    registry=metrics_registry,
)

newton_fallbacks_total = Counter(
    "tdn_newton_fallbacks_total",
    "Dictionary dual solves that fell back to bisection",
    registry=metrics_registry,
)

atoms_reseeded_total = Counter(
    "tdn_atoms_reseeded_total",
    "Dead dictionary atoms re-seeded from poorly fitted patches",
    registry=metrics_registry,
)

phase_duration_seconds = Histogram(
    "tdn_phase_duration_seconds",
    "Wall-clock duration of pipeline phases",
    ["phase"],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0, 900.0),
    registry=metrics_registry,
)

process_memory_bytes = Gauge(
    "tdn_process_resident_memory_bytes",
    "Resident set size of the denoising process",
    registry=metrics_registry,
)

app_info = Info(
    "tdn_app",
    "Application information",
    registry=metrics_registry,
)

app_info.info({
    "environment": os.getenv("ENVIRONMENT", "development"),
    "python_version": f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
})


def record_ista(iterations: int, backtracks: int) -> None:
    ista_iterations_total.inc(iterations)
    ista_backtracks_total.inc(backtracks)


def record_newton(iterations: int, degraded: bool) -> None:
    newton_iterations_total.inc(iterations)
    if degraded:
        newton_fallbacks_total.inc()


def record_reseed(count: int) -> None:
    if count:
        atoms_reseeded_total.inc(count)


def sample_memory() -> int:
    """Update the RSS gauge and return the sampled value"""
    rss = psutil.Process().memory_info().rss
    process_memory_bytes.set(rss)
    return rss


class PhaseTimer:
    """
    Context manager timing one pipeline phase.

    The duration is observed in the phase histogram and, when a sink is
    given, accumulated under the phase name (seconds).
    """

    def __init__(self, phase: str, sink: Optional[Dict[str, float]] = None):
        self.phase = phase
        self.sink = sink
        self.elapsed = 0.0
        self._start = 0.0

    def __enter__(self) -> "PhaseTimer":
        self._start = time.perf_counter()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        self.elapsed = time.perf_counter() - self._start
        phase_duration_seconds.labels(phase=self.phase).observe(self.elapsed)
        if self.sink is not None:
            self.sink[self.phase] = self.sink.get(self.phase, 0.0) + self.elapsed


def write_metrics(path: Union[str, Path]) -> None:
    """Write the registry in the Prometheus text format"""
    sample_memory()
    write_to_textfile(str(path), metrics_registry)
    logger.info(f"Metrics written to {path}")
