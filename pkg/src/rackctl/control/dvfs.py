"""Per-job frequency selection over the profiled frequency set."""

from __future__ import annotations

from dataclasses import dataclass

from ..gpu_models import dvfs_metrics

CLASS_BUCKETS = {"S": 935, "M": 2373, "L": 3047}


@dataclass(frozen=True)
class FrequencyChoice:
    freq: int
    selection: tuple
    power: float
    latency: float
    feasible: bool = True


def default_latency_limits(tables, factor=1.10, class_buckets=CLASS_BUCKETS):
    """Per-class latency bound: ``factor`` times the fastest profiled latency."""
    f_max = max(tables.freqs)
    return {c: factor * tables.dvfs[(f_max, b)][0] for c, b in class_buckets.items()}


def select_frequency(job, class_latency_limit, tables, theta_gpu_max, freqs=None):
    """Lowest-power frequency meeting the latency bound and GPU temperature cap.

    Ties go to the lower frequency.  When nothing is feasible the highest
    frequency is returned with ``feasible=False``.
    """
    freqs = tuple(sorted(freqs or tables.freqs))
    best = None
    for f in freqs:
        m = dvfs_metrics(f, job.context_tokens, tables)
        if m.latency <= class_latency_limit and m.temp <= theta_gpu_max:
            if best is None or m.power < best[1].power:
                best = (f, m)
    feasible = best is not None
    if not feasible:
        f = freqs[-1]
        best = (f, dvfs_metrics(f, job.context_tokens, tables))
    f, m = best
    return FrequencyChoice(f, tuple(int(x == f) for x in freqs), m.power, m.latency, feasible)
