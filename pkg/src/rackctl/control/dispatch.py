"""Capacity-proportional deterministic dispatch of a window's jobs to pools."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class DispatchPlan:
    pool_ids: tuple
    shares: tuple
    quotas: tuple
    schedule: tuple
    mapping: tuple

    def quota_of(self, pool_id):
        return self.quotas[self.pool_ids.index(pool_id)]


def largest_remainder(shares, total, ids):
    """Integer quotas summing to ``total``; leftover units go to the largest
    fractional parts, ties to the smaller pool id."""
    exact = [s * total for s in shares]
    quotas = [math.floor(x) for x in exact]
    left = total - sum(quotas)
    order = sorted(range(len(shares)), key=lambda k: (-(exact[k] - quotas[k]), ids[k]))
    for k in order[:left]:
        quotas[k] += 1
    return quotas


def interleave(ids, quotas):
    """Smooth weighted round robin: each pool appears exactly its quota times
    and no prefix strays more than one job from its proportional count."""
    total = sum(quotas)
    current = [0] * len(ids)
    out = []
    for _ in range(total):
        for k, q in enumerate(quotas):
            current[k] += q
        pick = max(range(len(ids)), key=lambda k: (current[k], -k))
        current[pick] -= total
        out.append(ids[pick])
    return out


def dispatch(pools, jobs):
    """Assign ``jobs`` (in arrival order) to ``pools`` given as (id, capacity)."""
    if not pools:
        raise ValueError("dispatch needs at least one pool")
    ids = [p[0] for p in pools]
    caps = [float(p[1]) for p in pools]
    if any(c <= 0 for c in caps):
        raise ValueError("pool capacities must be positive")
    total_cap = math.fsum(caps)
    shares = [c / total_cap for c in caps]
    n_jobs = len(jobs)
    quotas = largest_remainder(shares, n_jobs, ids)
    schedule = interleave(ids, quotas)
    return DispatchPlan(tuple(ids), tuple(shares), tuple(quotas), tuple(schedule), tuple(schedule))
