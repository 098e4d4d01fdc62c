"""Multi-rate closed loop: cluster sizing, pool mix, cooling, per-job clocks.

Every ``cluster_period`` the 30-minute forecast sets the number of powered
servers; every ``window_period`` a 5-minute forecast picks the pool mix and
the window's jobs are dispatched; every ``cooling_period`` the cooling
controller picks a command, and the plant is advanced in ``substep`` seconds
of RK4 (rack) and explicit Euler (GPUs).  Jobs take their clock at start.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import (
    MpcConfig,
    PidState,
    ThermalContext,
    Disturbance,
    default_latency_limits,
    dispatch,
    pid_step,
    plan_cooling,
    select_frequency,
    select_tp_mix,
    size_cluster,
)
from .control.tpmix import TpMix
from .errors import HorizonMismatchError, InfeasibleError, RackctlError
from .forecast import ForecastModel, forecast_next, naive_model
from .gpu_models import (
    GpuPowerCoefficients,
    GpuThermalCoefficients,
    ProfileTables,
    dvfs_metrics,
    gpu_power,
    gpu_temp_step,
)
from .thermo import (
    THERMAL_CSV_COLUMNS,
    CoolingCommand,
    CoolingPowerCoefficients,
    RackState,
    ThermalCoefficients,
    cooling_power,
    derive_flows,
    return_temperature,
    server_fan_flows,
    step_rack,
    thermal_load,
    zone_records,
)
from .workload import GeneratedTokensPredictor, aggregate

SAFETY_TOL = 1e-9

log = logging.getLogger(__name__)

# hardware measurements for context only; not reproducible by this simulator
HARDWARE_TABLE = (
    ("computing_energy_wh_per_gpu", 54.8, 41.6, 24.2),
    ("cooling_energy_wh_per_gpu", 291.0, 202.2, 31.2),
    ("mean_gpu_temp_c", 50.1, 41.6, 17.0),
    ("mean_latency_s", 2.31, 2.28, 0.0),
)


@dataclass
class SimConfig:
    jobs: list
    tables: ProfileTables
    power: GpuPowerCoefficients
    gpu_thermal: GpuThermalCoefficients
    thermal: ThermalCoefficients
    cooling: CoolingPowerCoefficients
    mpc: MpcConfig
    forecaster: ForecastModel = field(default_factory=naive_model)
    history30: list = field(default_factory=list)
    history5: list = field(default_factory=list)
    duration: float = 86400.0
    cluster_period: float = 1800.0
    window_period: float = 300.0
    cooling_period: float = 60.0
    substep: float = 1.0
    policy: str = "hierarchical"
    cooling_mode: str = "mpc"
    baseline_cooling: str = "pid"
    seed: int = 0
    b_preset: str = "uniform"
    fan_flow: object = "track"
    gpus_per_server: int = 8
    f_min: int = 1000
    f_max: int = 1800
    predictor: str = "oracle"
    pid: PidState = field(default_factory=PidState)
    constant_command: CoolingCommand = CoolingCommand(18.0, 0.03)
    latency_factor: float = 1.10
    tp_headroom: float = 1.25
    min_servers: int = 1
    max_servers: int = 1
    theta_gpu_max: float = 50.0
    theta_ret_max: float = 70.0
    theta_c_max: float = 30.0
    inflight_seconds: float = 10.0
    blackout: float = 0.0
    infeasible_policy: str = "fallback"
    disturbance: str = "persistence"
    theta_init: float = 24.0
    export_thermal: bool = True
    trace_digest: str = ""

    def __post_init__(self):
        cp, wp, cl = self.cooling_period, self.window_period, self.cluster_period
        if not (cp > 0 and _divides(cp, wp) and _divides(wp, cl)):
            raise ValueError("periods must nest: cluster a multiple of window, window of cooling")
        if not (self.duration > 0 and _divides(cp, self.duration) and _divides(self.substep, cp)):
            raise ValueError("duration must be a multiple of the cooling period, which the substep divides")
        if self.gpus_per_server % 8:
            raise ValueError("gpus_per_server must be a multiple of 8 so a TP8 pool fits one server")
        if self.policy not in ("hierarchical", "baseline"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.cooling_mode not in ("mpc", "pid", "constant"):
            raise ValueError(f"unknown cooling mode {self.cooling_mode!r}")
        if not self.trace_digest:
            self.trace_digest = trace_digest(self.jobs)


def _divides(a, b):
    q = b / a
    return abs(q - round(q)) < 1e-9


def trace_digest(jobs):
    h = hashlib.sha256()
    for j in jobs:
        h.update(f"{j.arrival!r},{j.context_tokens},{j.generated_tokens};".encode())
    return h.hexdigest()[:16]


@dataclass
class SimReport:
    series: dict
    jobs: list
    decisions: list
    thermal: list
    aggregates: dict


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    baseline: float
    controlled: float
    improvement: float
    delta: float


@dataclass(frozen=True)
class ComparisonSummary:
    rows: tuple

    def row(self, metric):
        for r in self.rows:
            if r.metric == metric:
                return r
        raise KeyError(metric)


SERIES_COLUMNS = (
    "tick", "time", "n_servers", "y2", "y4", "y8", "theta_rcu", "phi_rcu", "it_power",
    "cooling_power", "p_src", "p_fan", "q_load", "theta_ret", "theta_ret_max", "theta_c_max",
    "theta_gpu_mean", "theta_gpu_max", "jobs", "mean_latency", "forecast_30", "forecast_5",
    "mpc_fallback", "mix_fallback",
)
JOB_COLUMNS = ("job", "arrival", "context_tokens", "generated_tokens", "job_class", "pool",
               "tp_mode", "freq", "latency", "wait", "slo_violation")
DECISION_COLUMNS = ("tick", "time", "layer", "n_servers", "y2", "y4", "y8", "forecast",
                    "theta_rcu", "phi_rcu", "cost", "fallback", "job_freqs")


@dataclass
class _Pool:
    pid: int
    mode: int
    gpus: np.ndarray
    rate: float
    backlog: float = 0.0
    last: float = 0.0
    tokens: float = 0.0
    freq_tokens: float = 0.0


def _trapezoid(y, x):
    f = getattr(np, "trapezoid", None) or np.trapz
    return float(f(y, x))


def energy_wh(power, time, duration):
    """Trapezoidal energy of a tick-average power series, in Wh.

    Samples sit at tick midpoints; the first and last values are held out to
    ``0`` and ``duration`` so the integral spans the whole horizon.
    """
    p = np.asarray(power, dtype=float)
    t = np.asarray(time, dtype=float)
    if not len(p):
        return 0.0
    p = np.concatenate([p[:1], p, p[-1:]])
    t = np.concatenate([[0.0], t, [float(duration)]])
    return _trapezoid(p, t) / 3600.0


def _history(prev, today, upto):
    return list(prev) + list(today[:upto])


def _reference_mix(n_servers, gpus_per_server):
    return TpMix({2: 0, 4: 0, 8: n_servers * gpus_per_server // 8})


class _Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.limits = default_latency_limits(cfg.tables, cfg.latency_factor)
        self.predictor = GeneratedTokensPredictor(cfg.predictor)
        self.pid = replace(cfg.pid)
        self.contexts = {}
        self.freq_cache = {}
        self.today30 = aggregate(cfg.jobs, cfg.cluster_period, cfg.duration)
        self.today5 = aggregate(cfg.jobs, cfg.window_period, cfg.duration)
        self.n = 0
        self.state = None
        self.theta_gpu = np.zeros(0)
        self.cmd = CoolingCommand(cfg.mpc.theta_rcu_max, cfg.mpc.phi_max)
        self.pools = []
        self.mix = None
        self.mapping = {}
        self.blackout_until = -math.inf
        self.prev_powers = None
        self.f30 = float("nan")
        self.f5 = float("nan")
        self.mix_fallback = False
        self.counts = {"infeasible_windows": 0, "mpc_fallbacks": 0}

    @property
    def baseline(self):
        return self.cfg.policy == "baseline"

    def thermal_for(self, n):
        ctx = self.contexts.get(n)
        if ctx is None:
            cfg = self.cfg
            th = cfg.thermal if cfg.thermal.n_servers == n else cfg.thermal.resized(n, cfg.b_preset)
            ctx = ThermalContext(th, cfg.cooling, cfg.gpu_thermal, cfg.fan_flow, cfg.substep)
            self.contexts[n] = ctx
        return ctx

    # cluster layer
    def resize(self, n):
        cfg = self.cfg
        if self.state is None:
            self.state = RackState.uniform(n, cfg.theta_init)
            self.theta_gpu = np.full(n * cfg.gpus_per_server, cfg.theta_init)
        elif n != self.n:
            keep = min(n, self.n)
            fill = self.cmd.theta_rcu
            parts = []
            for arr in (self.state.theta_c, self.state.theta_s, self.state.theta_h):
                parts.append(np.concatenate([arr[:keep], np.full(n - keep, fill)]))
            self.state = RackState(*parts)
            g = keep * cfg.gpus_per_server
            self.theta_gpu = np.concatenate(
                [self.theta_gpu[:g], np.full((n - keep) * cfg.gpus_per_server, fill)])
        self.n = n
        self.gpu_server = np.repeat(np.arange(n), self.cfg.gpus_per_server)

    def cluster_step(self, t):
        cfg = self.cfg
        if self.baseline:
            self.f30 = float("nan")
            self.resize(cfg.max_servers)
            return
        k = int(round(t / cfg.cluster_period))
        hist = _history(cfg.history30, self.today30, k)
        model = cfg.forecaster if len(hist) >= cfg.forecaster.lookback else naive_model()
        if hist:
            self.f30 = forecast_next(model, hist)
            ref = cfg.tables.capacity[8][1] * cfg.gpus_per_server / 8
            ref *= cfg.cluster_period / 1800.0
            plan = size_cluster(self.f30 * cfg.tp_headroom, ref, cfg.min_servers, cfg.max_servers)
            self.resize(plan.n_servers)
        else:
            self.f30 = float("nan")
            self.resize(cfg.max_servers)

    # pool layer
    def window_step(self, t, tick, decisions):
        cfg = self.cfg
        w = int(round(t / cfg.window_period))
        g_max = self.n * cfg.gpus_per_server
        self.mix_fallback = False
        if self.baseline:
            mix = _reference_mix(self.n, cfg.gpus_per_server)
            self.f5 = float("nan")
        else:
            hist = _history(cfg.history5, self.today5, w)
            if not hist:
                mix = _reference_mix(self.n, cfg.gpus_per_server)
                self.f5 = float("nan")
            else:
                self.f5 = forecast_next(naive_model(), hist)
                theta_c = float(self.state.theta_c.max())
                try:
                    mix = select_tp_mix(self.f5 * cfg.tp_headroom, g_max, cfg.tables, theta_c,
                                        cfg.theta_gpu_max, window=w, min_pools=1)
                except InfeasibleError:
                    if cfg.infeasible_policy == "error":
                        raise
                    mix = _reference_mix(self.n, cfg.gpus_per_server)
                    self.mix_fallback = True
                    self.counts["infeasible_windows"] += 1
        changed = self.mix is not None and (
            self.mix.counts != mix.counts or self.mix.gpus != mix.gpus)
        if changed and cfg.blackout > 0:
            self.blackout_until = t + cfg.blackout
        old_backlog = sum(p.backlog for p in self.pools)
        self.mix = mix
        pools, cursor = [], 0
        for j, m in enumerate(mix.pools()):
            cap = cfg.tables.capacity[m][0] * cfg.window_period / 300.0
            pools.append(_Pool(j, m, np.arange(cursor, cursor + m), cap / cfg.window_period, last=t))
            cursor += m
        total_rate = sum(p.rate for p in pools)
        for p in pools:
            p.backlog = old_backlog * p.rate / total_rate
        self.pools = pools
        window_jobs = [i for i, j in enumerate(cfg.jobs) if t <= j.arrival < t + cfg.window_period]
        self.mapping = {}
        if window_jobs:
            plan = dispatch([(p.pid, p.rate) for p in pools], window_jobs)
            self.mapping = dict(zip(window_jobs, plan.mapping))
        decisions.append({
            "tick": tick, "time": t, "layer": "pool", "n_servers": self.n,
            "y2": mix.counts.get(2, 0), "y4": mix.counts.get(4, 0), "y8": mix.counts.get(8, 0),
            "forecast": self.f5, "theta_rcu": "", "phi_rcu": "", "cost": mix.cost,
            "fallback": int(self.mix_fallback), "job_freqs": ""})

    # per-job clocks
    def frequency_for(self, job):
        cfg = self.cfg
        if self.baseline:
            return cfg.f_max, dvfs_metrics(cfg.f_max, job.context_tokens, cfg.tables).latency
        bucket = dvfs_metrics(cfg.f_max, job.context_tokens, cfg.tables).bucket
        key = (bucket, job.job_class)
        hit = self.freq_cache.get(key)
        if hit is None:
            ch = select_frequency(job, self.limits[job.job_class], cfg.tables, cfg.theta_gpu_max)
            hit = (ch.freq, ch.latency)
            self.freq_cache[key] = hit
        return hit

    def run_jobs(self, lo, hi, records):
        cfg = self.cfg
        for p in self.pools:
            p.tokens = 0.0
            p.freq_tokens = 0.0
        lats = []
        while self.next_job < len(cfg.jobs) and cfg.jobs[self.next_job].arrival < hi:
            i = self.next_job
            self.next_job += 1
            job = self.predictor.classify(cfg.jobs[i])
            f, lat = self.frequency_for(job)
            pool = self.pools[self.mapping.get(i, 0)]
            # fluid FIFO queue: the pool drains at its token rate, with a few
            # seconds of work allowed in flight before jobs start waiting
            pool.backlog = max(0.0, pool.backlog - pool.rate * (job.arrival - pool.last))
            pool.last = job.arrival
            wait = max(0.0, pool.backlog - pool.rate * cfg.inflight_seconds) / pool.rate
            wait = max(wait, self.blackout_until - job.arrival)
            pool.backlog += job.total_tokens
            pool.tokens += job.total_tokens
            pool.freq_tokens += f * job.total_tokens
            latency = lat + wait
            lats.append(latency)
            records.append({
                "job": i, "arrival": job.arrival, "context_tokens": job.context_tokens,
                "generated_tokens": job.generated_tokens, "job_class": job.job_class,
                "pool": pool.pid, "tp_mode": pool.mode, "freq": f, "latency": latency,
                "wait": wait, "slo_violation": int(latency > self.limits[job.job_class])})
            self.predictor.observe(job)
        return lats

    def gpu_powers(self):
        cfg = self.cfg
        idle = cfg.f_max if self.baseline else cfg.f_min
        p = np.full(self.n * cfg.gpus_per_server, gpu_power(cfg.f_min, 0.0, cfg.power))
        window_cap = cfg.cooling_period / cfg.window_period
        for pool in self.pools:
            cap = pool.rate * cfg.window_period * window_cap
            u = min(1.0, pool.tokens / cap)
            f = pool.freq_tokens / pool.tokens if pool.tokens > 0 else idle
            p[pool.gpus] = gpu_power(f, u, cfg.power)
        return p

    # cooling layer
    def cooling_step(self, gpu_p, server_p):
        cfg = self.cfg
        fallback = False
        if cfg.cooling_mode == "mpc":
            if cfg.disturbance == "persistence" and self.prev_powers is not None \
                    and len(self.prev_powers[0]) == len(gpu_p):
                dg, ds = self.prev_powers
            else:
                dg, ds = gpu_p, server_p
            dist = Disturbance(ds, dg, tuple(self.gpu_server), self.theta_gpu)
            res = plan_cooling(self.state, dist, cfg.mpc, self.thermal_for(self.n))
            cmd, fallback = res.command, res.fallback
            self.counts["mpc_fallbacks"] += int(fallback)
        elif cfg.cooling_mode == "pid":
            cmd = pid_step(return_temperature(self.state), self.pid, cfg.cooling_period)
        else:
            cmd = cfg.constant_command
        self.cmd = cmd
        return fallback


def run_simulation(cfg):
    """Run the closed loop described by ``cfg`` and return the full report."""
    run = _Run(cfg)
    run.next_job = 0
    n_ticks = int(round(cfg.duration / cfg.cooling_period))
    n_sub = int(round(cfg.cooling_period / cfg.substep))
    series = {c: [] for c in SERIES_COLUMNS}
    jobs, decisions, thermal_rows = [], [], []
    dt = cfg.substep
    for tick in range(n_ticks):
        t = tick * cfg.cooling_period
        try:
            if _divides(cfg.cluster_period, t) or tick == 0:
                run.cluster_step(t)
            if _divides(cfg.window_period, t) or tick == 0:
                run.window_step(t, tick, decisions)
            first_job = len(jobs)
            lats = run.run_jobs(t, t + cfg.cooling_period, jobs)
            gpu_p = run.gpu_powers()
            server_p = np.bincount(run.gpu_server, weights=gpu_p, minlength=run.n)
            mpc_fallback = run.cooling_step(gpu_p, server_p)
            run.prev_powers = (gpu_p, server_p)
            cmd = run.cmd
            ctx = run.thermal_for(run.n)
            flows = derive_flows(ctx.thermal, cmd, server_fan_flows(ctx.thermal, cmd, cfg.fan_flow))
            ret_max = theta_c_max = gpu_max = -math.inf
            gpu_sum = p_src_sum = p_fan_sum = q_sum = 0.0
            state, tg = run.state, run.theta_gpu
            for _ in range(n_sub):
                tg = gpu_temp_step(tg, state.theta_c[run.gpu_server], gpu_p, cfg.gpu_thermal, dt)
                state = step_rack(state, cmd, server_p, ctx.thermal, dt, flows=flows, max_substep=dt)
                ret = return_temperature(state)
                q = thermal_load(state, cmd, ctx.thermal)
                p_src, p_fan, _ = cooling_power(q, cmd, cfg.cooling)
                ret_max = max(ret_max, ret)
                theta_c_max = max(theta_c_max, float(state.theta_c.max()))
                gpu_max = max(gpu_max, float(tg.max()))
                gpu_sum += float(tg.mean())
                p_src_sum += p_src
                p_fan_sum += p_fan
                q_sum += q
            run.state, run.theta_gpu = state, tg
            decisions.append({
                "tick": tick, "time": t, "layer": "cooling", "n_servers": run.n, "y2": "", "y4": "",
                "y8": "", "forecast": "", "theta_rcu": cmd.theta_rcu, "phi_rcu": cmd.phi_rcu,
                "cost": "", "fallback": int(mpc_fallback),
                # job:MHz for every job started this tick
                "job_freqs": ";".join(f"{r['job']}:{r['freq']}" for r in jobs[first_job:])})
            row = {
                "tick": tick, "time": t + 0.5 * cfg.cooling_period, "n_servers": run.n,
                "y2": run.mix.counts.get(2, 0), "y4": run.mix.counts.get(4, 0),
                "y8": run.mix.counts.get(8, 0), "theta_rcu": cmd.theta_rcu, "phi_rcu": cmd.phi_rcu,
                "it_power": float(gpu_p.sum()), "cooling_power": (p_src_sum + p_fan_sum) / n_sub,
                "p_src": p_src_sum / n_sub, "p_fan": p_fan_sum / n_sub, "q_load": q_sum / n_sub,
                "theta_ret": return_temperature(state), "theta_ret_max": ret_max,
                "theta_c_max": theta_c_max, "theta_gpu_mean": gpu_sum / n_sub,
                "theta_gpu_max": gpu_max, "jobs": len(lats),
                "mean_latency": float(np.mean(lats)) if lats else float("nan"),
                "forecast_30": run.f30, "forecast_5": run.f5, "mpc_fallback": int(mpc_fallback),
                "mix_fallback": int(run.mix_fallback)}
            for c in SERIES_COLUMNS:
                series[c].append(row[c])
            if cfg.export_thermal:
                thermal_rows.extend(zone_records(tick, state, cmd, ctx.thermal, cfg.cooling))
        except RackctlError as exc:
            # keep the type (the CLI maps it to an exit code) and add where it happened
            exc.tick, exc.time = tick, t
            log.error("tick %d (t=%.0f s): %s", tick, t, exc)
            raise
    aggregates = compute_aggregates(series, jobs, cfg, run.counts)
    return SimReport(series, jobs, decisions, thermal_rows, aggregates)


def run_baseline(cfg):
    """Fixed reference policy: every server powered, one TP8 pool per 8 GPUs,
    top clock for every job, cooling from ``baseline_cooling``."""
    return run_simulation(replace(cfg, policy="baseline", cooling_mode=cfg.baseline_cooling))


def compute_aggregates(series, jobs, cfg, counts=None):
    """Headline metrics; energies are trapezoidal integrals of the power series."""
    t = series["time"]
    gpus = cfg.max_servers * cfg.gpus_per_server
    it_wh = energy_wh(series["it_power"], t, cfg.duration)
    cool_wh = energy_wh(series["cooling_power"], t, cfg.duration)
    lats = [j["latency"] for j in jobs]
    ret_bad = sum(v > cfg.theta_ret_max + SAFETY_TOL for v in series["theta_ret_max"])
    gpu_bad = sum(v > cfg.theta_gpu_max + SAFETY_TOL for v in series["theta_gpu_max"])
    agg = {
        "policy": cfg.policy,
        "cooling": cfg.cooling_mode,
        "seed": cfg.seed,
        "duration_s": cfg.duration,
        "trace_digest": cfg.trace_digest,
        "n_jobs": len(jobs),
        "gpus_installed": gpus,
        "computing_energy_wh": it_wh,
        "cooling_energy_wh": cool_wh,
        "computing_energy_wh_per_gpu": it_wh / gpus,
        "cooling_energy_wh_per_gpu": cool_wh / gpus,
        "mean_gpu_temp_c": float(np.mean(series["theta_gpu_mean"])),
        "max_gpu_temp_c": float(np.max(series["theta_gpu_max"])),
        "max_theta_ret_c": float(np.max(series["theta_ret_max"])),
        "max_theta_c_c": float(np.max(series["theta_c_max"])),
        "mean_latency_s": float(np.mean(lats)) if lats else 0.0,
        "slo_violations": int(sum(j["slo_violation"] for j in jobs)),
        "theta_ret_violations": int(ret_bad),
        "theta_gpu_violations": int(gpu_bad),
        "theta_c_violations": int(sum(v > cfg.theta_c_max + SAFETY_TOL for v in series["theta_c_max"])),
        "mean_active_servers": float(np.mean(series["n_servers"])),
    }
    agg.update(counts or {})
    return agg


def safety_violations(report):
    a = report.aggregates
    return a["theta_ret_violations"] + a["theta_gpu_violations"]


COMPARED = ("computing_energy_wh_per_gpu", "cooling_energy_wh_per_gpu", "mean_gpu_temp_c",
            "mean_latency_s")


def improvement(baseline, controlled):
    """Relative reduction in percent; zero when the baseline is zero."""
    if baseline == 0:
        return 0.0
    return (baseline - controlled) / baseline * 100.0


def compare(a, b):
    """``a`` is the baseline report, ``b`` the controlled one.

    Energy and temperature rows carry the relative improvement in percent;
    latency carries the absolute change (controlled minus baseline, seconds)
    in ``delta`` and the relative change in ``improvement``.
    """
    aa, bb = (a.aggregates if isinstance(a, SimReport) else a,
              b.aggregates if isinstance(b, SimReport) else b)
    for key in ("duration_s", "trace_digest"):
        if aa.get(key) != bb.get(key):
            raise HorizonMismatchError(f"reports differ in {key}: {aa.get(key)!r} vs {bb.get(key)!r}")
    rows = []
    for m in COMPARED:
        x, y = float(aa[m]), float(bb[m])
        rows.append(MetricComparison(m, x, y, improvement(x, y), y - x))
    return ComparisonSummary(tuple(rows))


def format_summary(summary):
    lines = [f"{'metric':<30}{'baseline':>12}{'controlled':>12}{'improvement':>14}"]
    for r in summary.rows:
        if r.metric == "mean_latency_s":
            imp = f"{r.delta:+.3f} s"
        else:
            imp = f"{r.improvement:.1f}%"
        lines.append(f"{r.metric:<30}{r.baseline:>12.3f}{r.controlled:>12.3f}{imp:>14}")
    lines.append("")
    lines.append("Reference: measured on 8x V100 hardware (context only, not reproduced here)")
    for name, b, c, imp in HARDWARE_TABLE:
        text = "~0" if name == "mean_latency_s" else f"{imp:.1f}%"
        lines.append(f"{name:<30}{b:>12.2f}{c:>12.2f}{text:>14}")
    lines.append("note: the printed cooling values 291 -> 202.2 give 30.5%; 31.2% is as published")
    return "\n".join(lines)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(report.series["tick"])
    rows = [{c: report.series[c][i] for c in SERIES_COLUMNS} for i in range(n)]
    _write_csv(out / "series.csv", SERIES_COLUMNS, rows)
    _write_csv(out / "jobs.csv", JOB_COLUMNS, report.jobs)
    _write_csv(out / "decisions.csv", DECISION_COLUMNS, report.decisions)
    if report.thermal:
        _write_csv(out / "thermal.csv", THERMAL_CSV_COLUMNS, report.thermal)
    write_aggregates(report.aggregates, out / "aggregates.json")


def write_aggregates(aggregates, path):
    with open(path, "w") as fh:
        json.dump(aggregates, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_aggregates(out_dir):
    with open(Path(out_dir) / "aggregates.json") as fh:
        return json.load(fh)


def read_series(out_dir):
    with open(Path(out_dir) / "series.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: [float(r[c]) for r in rows] for c in (rows[0].keys() if rows else ())}


def build_sim_config(conf, seed=None):
    """Turn a resolved configuration dict into a :class:`SimConfig`.

    Synthetic scenarios draw ``history_days`` of prior traffic from the same
    diurnal profile (seed + 1) to train the 30-minute forecaster; a trace file
    runs without history, so the first windows use the reference mix.
    """
    from .forecast import load_model, train_forecaster
    from .gpu_models import fit_power_coeffs, dvfs_power_samples, fit_thermal_coeffs, load_tables
    from .thermo import fan_coefficients_for
    from .workload import DiurnalSpec, parse_trace, synth_trace

    th, gp, wl, ctl, eng = (conf[s] for s in ("thermo", "gpu", "workload", "control", "engine"))
    seed = eng["seed"] if seed is None else seed
    tables = load_tables(gp["tp_csv"] or None, gp["dvfs_csv"] or None, gp["capacity_csv"] or None,
                         gp["inlet_reference"])
    if gp["power_coeffs"]:
        power = GpuPowerCoefficients(*gp["power_coeffs"])
    else:
        power = fit_power_coeffs(dvfs_power_samples(tables)).coeffs
    if gp["thermal_coeffs"]:
        b0, b1, gm, b2 = gp["thermal_coeffs"]
        gpu_thermal = GpuThermalCoefficients(b0, b1, gm, b2, gp["thermal_form"])
    else:
        gpu_thermal = fit_thermal_coeffs(tables, power, gp["thermal_tau"], gp["f_max"]).coeffs
    n_max = ctl["max_servers"]
    gps = gp["gpus_per_server"]
    if th["delta"]:
        delta = tuple(th["delta"])
    else:
        peak_it = n_max * gps * gpu_power(gp["f_max"], 1.0, power)
        delta = fan_coefficients_for(peak_it, ctl["phi_max"], th["fan_fraction"])
    thermal = ThermalCoefficients(th["rho"], th["cp"], th["vc"], th["vh"], th["cth"], th["phi_l"],
                                  (1.0,)).resized(n_max, th["b_preset"])
    duration = eng["duration"]
    spec = DiurnalSpec(wl["base_rate"], wl["peak_rate"], wl["period"], duration, wl["peak_time"],
                       tuple(wl["class_mix"]))
    history = []
    if wl["trace"]:
        with open(wl["trace"], newline="") as fh:
            jobs = [j for j in parse_trace(fh) if j.arrival < duration]
    else:
        jobs = synth_trace(spec, seed)
        if wl["history_days"]:
            hist_len = wl["history_days"] * wl["period"]
            history = synth_trace(replace(spec, duration=hist_len), seed + 1)
    hist30 = hist5 = []
    model = naive_model()
    if history:
        hist_len = wl["history_days"] * wl["period"]
        hist30 = aggregate(history, eng["cluster_period"], hist_len)
        hist5 = aggregate(history, eng["window_period"], hist_len)
    if wl["forecaster"] == "lstm":
        if wl["model_path"] and Path(wl["model_path"]).is_file():
            model = load_model(wl["model_path"])
        elif len(hist30) > wl["lookback"] + 1:
            model = train_forecaster(hist30, wl["lookback"], wl["hidden"], wl["epochs"], wl["lr"],
                                     seed=seed)
    mpc = MpcConfig(ctl["horizon"], ctl["ts"], eng["cooling_period"], ctl["theta_rcu_min"],
                    ctl["theta_rcu_max"], ctl["phi_min"], ctl["phi_max"], ctl["theta_c_max"],
                    ctl["theta_ret_max"], ctl["theta_gpu_max"], ctl["grid"], ctl["refinements"],
                    ctl["margin"])
    pid = PidState(ctl["kp"], ctl["ki"], ctl["kd"], ctl["pid_setpoint"], ctl["theta_rcu_min"],
                   ctl["theta_rcu_max"], ctl["pid_phi"])
    return SimConfig(
        jobs=jobs, tables=tables, power=power, gpu_thermal=gpu_thermal, thermal=thermal,
        cooling=CoolingPowerCoefficients(tuple(th["alpha"]), delta), mpc=mpc, forecaster=model,
        history30=hist30, history5=hist5, duration=duration,
        cluster_period=eng["cluster_period"], window_period=eng["window_period"],
        cooling_period=eng["cooling_period"], substep=th["substep"], policy=eng["policy"],
        cooling_mode=eng["cooling"], baseline_cooling=eng["baseline_cooling"], seed=seed,
        b_preset=th["b_preset"], fan_flow=th["fan_flow"], gpus_per_server=gps,
        f_min=gp["f_min"], f_max=gp["f_max"], predictor=wl["predictor"], pid=pid,
        constant_command=CoolingCommand(ctl["constant_theta"], ctl["constant_phi"]),
        latency_factor=ctl["latency_factor"], tp_headroom=ctl["tp_headroom"],
        min_servers=ctl["min_servers"], max_servers=n_max, theta_gpu_max=ctl["theta_gpu_max"],
        theta_ret_max=ctl["theta_ret_max"], theta_c_max=ctl["theta_c_max"],
        inflight_seconds=eng["inflight_seconds"], blackout=eng["blackout"],
        infeasible_policy=eng["infeasible_policy"], disturbance=ctl["disturbance"],
        theta_init=th["theta_init"], export_thermal=bool(eng["export_thermal"]))
