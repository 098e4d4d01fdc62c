"""Receding-horizon cooling controller.

For a fixed airflow the rack equations are linear, and so is the explicit GPU
temperature update, so one sampling period of the RK4 plant is an exact affine
map of the augmented state ``[theta_c, theta_s, theta_h, theta_gpu]`` and the
inputs ``[theta_rcu, server powers, GPU powers, 1]``.  The planner builds that
map once per candidate airflow and evaluates whole grids of supply
temperatures in one matrix product.

The search is a deterministic coarse-to-fine grid: a ``grid x grid`` lattice
over the (theta_rcu, phi_rcu) box for every decision block, then repeated
refinement around the incumbent.  The command is held for the control period,
so the horizon is split into blocks of ``hold_steps`` sampling periods that
share one command (move blocking).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..gpu_models import GpuThermalCoefficients
from ..thermo import (
    CoolingCommand,
    CoolingPowerCoefficients,
    ThermalCoefficients,
    cop,
    derive_flows,
    fan_power,
    linear_rack,
    server_fan_flows,
)

COST_DIGITS = 9


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 2
    ts: float = 30.0
    control_period: float = 60.0
    theta_rcu_min: float = 18.0
    theta_rcu_max: float = 27.0
    phi_min: float = 0.009
    phi_max: float = 0.03
    theta_c_max: float = 30.0
    theta_ret_max: float = 70.0
    theta_gpu_max: float = 50.0
    grid: int = 7
    refinements: int = 3
    margin: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if not (self.ts > 0 and self.control_period > 0):
            raise ValueError("sampling and control periods must be positive")
        if self.grid < 2:
            raise ValueError("grid needs at least two points per axis")

    @property
    def hold_steps(self):
        return max(1, round(self.control_period / self.ts))

    def blocks(self):
        """Step indices of each decision block."""
        steps = list(range(self.horizon))
        h = self.hold_steps
        return [steps[i:i + h] for i in range(0, len(steps), h)]


@dataclass
class ThermalContext:
    thermal: ThermalCoefficients
    cooling: CoolingPowerCoefficients
    gpu: GpuThermalCoefficients | None = None
    fan_flow: object = "track"
    substep: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class Disturbance:
    """Forecast inputs over the horizon.

    ``server_powers`` is (steps, n) or (n,) held constant; ``gpu_powers`` is
    (steps, G) or (G,).  ``gpu_server[g]`` is the server housing GPU ``g`` and
    ``theta_gpu`` the current GPU temperatures.
    """

    server_powers: np.ndarray
    gpu_powers: np.ndarray | None = None
    gpu_server: tuple = ()
    theta_gpu: np.ndarray | None = None


@dataclass(frozen=True)
class MpcResult:
    command: CoolingCommand
    cost: float
    fallback: bool
    plan: tuple
    predicted_ret: float
    predicted_gpu_max: float


def _period_map(ctx, phi, n, gpu_server, dt):
    """Exact affine map of one sampling period at airflow ``phi``."""
    key = (round(phi, 15), n, tuple(gpu_server), dt)
    hit = ctx._cache.get(key)
    if hit is not None:
        return hit
    thermal = ctx.thermal if ctx.thermal.n_servers == n else ctx.thermal.resized(n)
    cmd = CoolingCommand(0.0, phi)
    flows = derive_flows(thermal, cmd, server_fan_flows(thermal, cmd, ctx.fan_flow))
    k = max(1, math.ceil(dt / ctx.substep - 1e-12))
    h = dt / k
    lin = linear_rack(thermal, phi, flows, h)
    G = len(gpu_server)
    D = 3 * n + G
    M = np.zeros((D, D))
    N = np.zeros((D, 1 + n + G + 1))
    M[:3 * n, :3 * n] = lin.T
    N[:3 * n, :1 + n] = lin.G
    if G:
        co = ctx.gpu
        decay = 1.0 - h * co.beta2 if co.form == "relaxed" else 1.0
        for g, srv in enumerate(gpu_server):
            M[3 * n + g, 3 * n + g] = decay
            M[3 * n + g, srv] = h * co.beta0
            N[3 * n + g, 1 + n + g] = h * co.beta1
            N[3 * n + g, -1] = h * co.gamma
    Mk = np.eye(D)
    Nk = np.zeros_like(N)
    for _ in range(k):
        Nk = M @ Nk + N
        Mk = M @ Mk
    if len(ctx._cache) > 4096:
        ctx._cache.clear()
    ctx._cache[key] = (Mk, Nk)
    return Mk, Nk


def _per_step(arr, steps, width):
    if arr is None:
        return np.zeros((steps, width))
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = np.broadcast_to(a, (steps, len(a)))
    if a.shape[0] < steps:
        a = np.vstack([a, np.repeat(a[-1:], steps - a.shape[0], axis=0)])
    return a[:steps]


class _Problem:
    def __init__(self, state, dist, cfg, ctx):
        self.cfg, self.ctx = cfg, ctx
        self.n = state.n_active
        self.gpu_server = tuple(int(s) for s in dist.gpu_server) if ctx.gpu is not None else ()
        G = len(self.gpu_server)
        theta_gpu = np.zeros(G) if G == 0 else np.asarray(dist.theta_gpu, dtype=float)
        self.z0 = np.concatenate([state.as_vector(), theta_gpu])
        P = _per_step(dist.server_powers, cfg.horizon, self.n)
        Pg = _per_step(dist.gpu_powers, cfg.horizon, G)
        # input columns other than theta_rcu
        self.rest = [np.concatenate([P[k], Pg[k], [1.0]]) for k in range(cfg.horizon)]
        self.rho_cp = ctx.thermal.rho_cp

    def evaluate(self, grids):
        """Cost and feasibility for every combination of per-block candidates.

        ``grids[j]`` is a pair (thetas, phis) for block ``j``.  Returns arrays
        over the flattened candidate product plus the candidate list.
        """
        cfg, n = self.cfg, self.n
        Z = self.z0[:, None]
        cost = np.zeros(1)
        ok = np.ones(1, dtype=bool)
        ret_max = np.full(1, -np.inf)
        gpu_max = np.full(1, -np.inf)
        cands = [()]
        for block, (thetas, phis) in zip(cfg.blocks(), grids):
            nz, ncost, nok, nret, ngpu, ncand = [], [], [], [], [], []
            for phi in phis:
                Mk, Nk = _period_map(self.ctx, phi, n, self.gpu_server, cfg.ts)
                # states: (D, K, T) for K prior candidates and T supply temps
                Zb = np.repeat(Z[:, :, None], len(thetas), axis=2)
                c = np.repeat(cost[:, None], len(thetas), axis=1)
                f = np.repeat(ok[:, None], len(thetas), axis=1)
                r = np.repeat(ret_max[:, None], len(thetas), axis=1)
                gm = np.repeat(gpu_max[:, None], len(thetas), axis=1)
                p_fan = fan_power(phi, self.ctx.cooling)
                cop_t = np.array([cop(t, self.ctx.cooling) for t in thetas])
                for k in block:
                    drive = Nk[:, 1:] @ self.rest[k]
                    Zb = np.einsum("ij,jkt->ikt", Mk, Zb) + (Nk[:, 0][:, None] * thetas[None, :])[:, None, :] \
                        + drive[:, None, None]
                    th = Zb[2 * n:3 * n]
                    ret = th.mean(axis=0)
                    q = self.rho_cp * phi * (ret - thetas[None, :])
                    c = c + np.maximum(q, 0.0) / cop_t[None, :] + p_fan
                    r = np.maximum(r, ret)
                    f &= Zb[:n].max(axis=0) <= cfg.theta_c_max - cfg.margin
                    f &= ret <= cfg.theta_ret_max - cfg.margin
                    if len(self.gpu_server):
                        g = Zb[3 * n:].max(axis=0)
                        gm = np.maximum(gm, g)
                        f &= g <= cfg.theta_gpu_max - cfg.margin
                K = Zb.shape[1]
                nz.append(Zb.reshape(Zb.shape[0], -1))
                ncost.append(c.reshape(-1))
                nok.append(f.reshape(-1))
                nret.append(r.reshape(-1))
                ngpu.append(gm.reshape(-1))
                ncand.extend(cands[i] + ((float(t), float(phi)),)
                             for i in range(K) for t in thetas)
            Z = np.concatenate(nz, axis=1)
            cost = np.concatenate(ncost)
            ok = np.concatenate(nok)
            ret_max = np.concatenate(nret)
            gpu_max = np.concatenate(ngpu)
            cands = ncand
        return cost, ok, ret_max, gpu_max, cands


def _key(cost, cand):
    # equal cost: prefer warmer supply, then less airflow
    return (round(float(cost), COST_DIGITS),) + tuple(
        v for t, p in cand for v in (-t, p))


def _axis(lo, hi, center, half, count, bound_lo, bound_hi):
    a = max(bound_lo, center - half) if center is not None else lo
    b = min(bound_hi, center + half) if center is not None else hi
    return np.linspace(a, b, count)


def plan_cooling(state, disturbance, cfg, ctx):
    """Cheapest admissible command sequence; returns the first command.

    Falls back to maximum cooling (coldest supply, most airflow) with
    ``fallback=True`` when no lattice point of the coarse grid is feasible.
    """
    prob = _Problem(state, disturbance, cfg, ctx)
    n_blocks = len(cfg.blocks())
    span_t = cfg.theta_rcu_max - cfg.theta_rcu_min
    span_p = cfg.phi_max - cfg.phi_min
    half_t = span_t / (cfg.grid - 1)
    half_p = span_p / (cfg.grid - 1)
    best = None
    centers = [None] * n_blocks
    for level in range(cfg.refinements + 1):
        grids = []
        for j in range(n_blocks):
            ct, cp_ = centers[j] if centers[j] is not None else (None, None)
            grids.append((
                _axis(cfg.theta_rcu_min, cfg.theta_rcu_max, ct, half_t, cfg.grid,
                      cfg.theta_rcu_min, cfg.theta_rcu_max),
                _axis(cfg.phi_min, cfg.phi_max, cp_, half_p, cfg.grid, cfg.phi_min, cfg.phi_max)))
        cost, ok, ret_max, gpu_max, cands = prob.evaluate(grids)
        idx = np.flatnonzero(ok)
        if idx.size:
            i = min(idx, key=lambda i: _key(cost[i], cands[i]))
            entry = (_key(cost[i], cands[i]), float(cost[i]), cands[i], float(ret_max[i]), float(gpu_max[i]))
            if best is None or entry[0] < best[0]:
                best = entry
        if best is None:
            break
        centers = list(best[2])
        if level < cfg.refinements:
            half_t *= 2.0 / (cfg.grid - 1)
            half_p *= 2.0 / (cfg.grid - 1)
    if best is None:
        fb = ((cfg.theta_rcu_min, cfg.phi_max),) * n_blocks
        cost, _, ret_max, gpu_max, _ = prob.evaluate([(np.array([t]), np.array([p])) for t, p in fb])
        return MpcResult(CoolingCommand(*fb[0]), float(cost[0]), True,
                         tuple(CoolingCommand(*u) for u in fb), float(ret_max[0]), float(gpu_max[0]))
    _, cost, cand, ret, gpu = best
    return MpcResult(CoolingCommand(*cand[0]), cost, False,
                     tuple(CoolingCommand(*u) for u in cand), ret, gpu)


def horizon_cost(state, disturbance, cfg, ctx, commands):
    """Cost, feasibility, max return and max GPU temperature of a fixed sequence
    (one command per decision block)."""
    prob = _Problem(state, disturbance, cfg, ctx)
    cost, ok, ret, gpu, _ = prob.evaluate(
        [(np.array([c.theta_rcu]), np.array([c.phi_rcu])) for c in commands])
    return float(cost[0]), bool(ok[0]), float(ret[0]), float(gpu[0])
