"""Cluster layer: how many servers to keep powered for the next 30 minutes."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ClusterPlan:
    n_servers: int
    forecast_tokens: float
    reference_capacity: float


def size_cluster(forecast, reference_capacity, min_servers=1, max_servers=None):
    """Ceiling of forecast over one server's 30-minute capacity, clamped."""
    if not reference_capacity > 0:
        raise ValueError("reference capacity must be positive")
    n = math.ceil(max(forecast, 0.0) / reference_capacity) if forecast > 0 else 0
    n = max(n, min_servers)
    if max_servers is not None:
        n = min(n, max_servers)
    return ClusterPlan(int(n), float(forecast), float(reference_capacity))
