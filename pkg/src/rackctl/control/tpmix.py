"""Window layer: choose how many pools of each TP mode to run.

The integer program minimises profiled pool power subject to token coverage,
the GPU budget and a per-mode temperature cap.  The window forecast is split
evenly over the selected pools, so a pool's profiled metrics depend on the
total pool count.  The search space is tiny (at most ``ceil(G/m)+1`` values per
mode), so it is solved exactly by depth-first enumeration with bound pruning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import InfeasibleError
from ..gpu_models import tp_metrics

COST_DIGITS = 9


@dataclass(frozen=True)
class TpMix:
    counts: dict
    window: int = 0
    cost: float = 0.0

    @property
    def gpus(self):
        return sum(m * y for m, y in self.counts.items())

    @property
    def n_pools(self):
        return sum(self.counts.values())

    def pools(self):
        """Pool modes, largest first (the GPU packing order)."""
        return [m for m in sorted(self.counts, reverse=True) for _ in range(self.counts[m])]


def evaluate_mix(counts, forecast, g_max, tables, theta_c, theta_gpu_max):
    """Cost and constraint violations of one candidate.

    Returns ``(cost, violations)`` where ``violations`` maps constraint name
    to a non-negative amount (0 when satisfied).
    """
    n_pools = sum(counts.values())
    gpus = sum(m * y for m, y in counts.items())
    cap = sum(tables.capacity[m][0] * y for m, y in counts.items())
    shift = theta_c - tables.inlet_reference
    cost = 0.0
    thermal = 0.0
    if n_pools:
        per_pool = forecast / n_pools
        for m in sorted(counts):
            if counts[m]:
                met = tp_metrics(m, per_pool, tables)
                cost += counts[m] * met.power
                thermal = max(thermal, met.temp + shift - theta_gpu_max)
    return cost, {"coverage": max(0.0, forecast - cap), "gpu_budget": max(0, gpus - g_max),
                  "thermal": max(0.0, thermal)}


def tie_key(cost, counts):
    """Lower cost, then fewer GPUs, then less use of the larger modes."""
    gpus = sum(m * y for m, y in counts.items())
    return (round(cost, COST_DIGITS), gpus, tuple(counts[m] for m in sorted(counts, reverse=True)))


def select_tp_mix(forecast, g_max, tables, theta_c, theta_gpu_max, window=0, min_pools=0):
    """Exact optimum of the window pool-mix program.

    ``min_pools`` forces at least that many pools (the engine keeps one pool
    up to absorb stragglers even when no demand is forecast).
    """
    modes = tables.modes
    bounds = [math.ceil(g_max / m) for m in modes]
    floor = {m: float(tables.tp_rows[m][:, 3].min()) for m in modes}
    best = [None, None]
    closest = [None, math.inf]

    def visit(k, counts, gpus, bound):
        # every pool costs at least its mode's cheapest profiled power
        if best[0] is not None and round(bound, COST_DIGITS) > best[0][0]:
            return
        if k == len(modes):
            if sum(counts.values()) < min_pools:
                return
            cost, viol = evaluate_mix(counts, forecast, g_max, tables, theta_c, theta_gpu_max)
            if all(v == 0 for v in viol.values()):
                key = tie_key(cost, counts)
                if best[0] is None or key < best[0]:
                    best[0], best[1] = key, (dict(counts), cost)
            else:
                scale = {"coverage": max(forecast, 1.0), "gpu_budget": 1.0,
                         "thermal": 1.0}
                size = sum(v / scale[c] for c, v in viol.items())
                if size < closest[1]:
                    name = max(viol, key=lambda c: viol[c] / scale[c])
                    closest[0], closest[1] = (name, viol[name]), size
            return
        m = modes[k]
        for y in range(bounds[k] + 1):
            if gpus + m * y > g_max:
                break  # larger counts only use more GPUs
            counts[m] = y
            visit(k + 1, counts, gpus + m * y, bound + y * floor[m])
        counts[m] = 0

    visit(0, {m: 0 for m in modes}, 0, 0.0)
    if best[1] is None:
        name, amount = closest[0] or ("gpu_budget", float(min_pools))
        raise InfeasibleError(name, amount, f"forecast {forecast:.0f} tokens, G_max {g_max}")
    counts, cost = best[1]
    return TpMix(counts, window, cost)
