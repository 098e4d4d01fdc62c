"""GPU power and temperature models and the profiled performance tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import FitError, ProfileError

log = logging.getLogger(__name__)

TP_MODES = (2, 4, 8)
FREQUENCIES = (1000, 1200, 1400, 1600, 1800)
WINDOW_SECONDS = 300
CLUSTER_SECONDS = 1800

TP_COLUMNS = ("tokens",) + tuple(
    f"{kind}_tp{m}" for kind in ("latency", "temp", "power") for m in TP_MODES)
CAPACITY_COLUMNS = ("tp_mode", "tokens_per_5min", "tokens_per_30min")


@dataclass(frozen=True)
class GpuPowerCoefficients:
    a0: float
    a1: float
    a2: float
    a3: float

    def as_tuple(self):
        return (self.a0, self.a1, self.a2, self.a3)


@dataclass(frozen=True)
class GpuThermalCoefficients:
    beta0: float
    beta1: float
    gamma: float
    beta2: float = 0.0
    form: str = "relaxed"

    def __post_init__(self):
        if self.beta2 < 0:
            raise ValueError("beta2 must be non-negative")
        if self.form not in ("relaxed", "open"):
            raise ValueError(f"unknown thermal form {self.form!r}")
        if self.form == "relaxed" and self.beta2 == 0:
            raise ValueError("relaxed form needs beta2 > 0")

    def fixed_point(self, theta_c, p_gpu):
        """Steady temperature of the relaxed form."""
        return (self.beta0 * theta_c + self.beta1 * p_gpu + self.gamma) / self.beta2


@dataclass(frozen=True)
class GpuOperatingPoint:
    freq: float
    util: float
    theta_gpu: float

    def __post_init__(self):
        if not 0.0 <= self.util <= 1.0:
            raise ValueError("utilization must lie in [0, 1]")


@dataclass(frozen=True)
class TpMetrics:
    latency: float
    temp: float
    power: float
    extrapolated: bool = False


@dataclass(frozen=True)
class DvfsMetrics:
    latency: float
    power: float
    temp: float
    bucket: int


@dataclass(frozen=True)
class ProfileTables:
    """Profiled maps used by the planners.

    ``tp_rows`` maps TP mode to an array with columns (tokens, latency, temp,
    power) sorted by tokens.  ``dvfs`` maps (freq, bucket) to (latency, power,
    temp).  ``capacity`` maps TP mode to (tokens per 5 min, tokens per 30 min).
    Table temperatures were taken at cold-aisle temperature ``inlet_reference``.
    """

    tp_rows: dict
    dvfs: dict
    capacity: dict
    inlet_reference: float = 27.0
    buckets: tuple = field(init=False)
    freqs: tuple = field(init=False)

    def __post_init__(self):
        for m, rows in self.tp_rows.items():
            tokens = rows[:, 0]
            if np.any(np.diff(tokens) <= 0):
                raise ProfileError(f"TP{m} rows are not sorted and duplicate-free")
        object.__setattr__(self, "buckets", tuple(sorted({k[1] for k in self.dvfs})))
        object.__setattr__(self, "freqs", tuple(sorted({k[0] for k in self.dvfs})))

    @property
    def modes(self):
        return tuple(sorted(self.tp_rows))


def _read_text(name):
    return resources.files("rackctl").joinpath("data", name).read_text()


def parse_tp_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TP_COLUMNS:
        raise ProfileError(f"TP profile header must be {','.join(TP_COLUMNS)}")
    per_mode = {m: [] for m in TP_MODES}
    for row in reader:
        for m in TP_MODES:
            per_mode[m].append([float(row["tokens"]), float(row[f"latency_tp{m}"]),
                                float(row[f"temp_tp{m}"]), float(row[f"power_tp{m}"])])
    out = {}
    for m, rows in per_mode.items():
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        out[m] = arr[np.argsort(arr[:, 0], kind="stable")]
    return out


def parse_dvfs_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    names = tuple(reader.fieldnames or ())
    if not names or names[0] != "freq_mhz" or (len(names) - 1) % 3:
        raise ProfileError("DVFS profile header must be freq_mhz then latency_/power_/temp_ per bucket")
    buckets = []
    for i in range(1, len(names), 3):
        triple = names[i:i + 3]
        bucket = triple[0].split("_", 1)[-1]
        if triple != (f"latency_{bucket}", f"power_{bucket}", f"temp_{bucket}") or not bucket.isdigit():
            raise ProfileError(f"bad DVFS column group {triple}")
        buckets.append(int(bucket))
    table = {}
    for row in reader:
        f = int(float(row["freq_mhz"]))
        for bkt in buckets:
            key = (f, bkt)
            if key in table:
                raise ProfileError(f"duplicate DVFS row for {f} MHz")
            table[key] = (float(row[f"latency_{bkt}"]), float(row[f"power_{bkt}"]),
                          float(row[f"temp_{bkt}"]))
    return table


def parse_capacity_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CAPACITY_COLUMNS:
        raise ProfileError(f"capacity header must be {','.join(CAPACITY_COLUMNS)}")
    return {int(r["tp_mode"]): (float(r["tokens_per_5min"]), float(r["tokens_per_30min"]))
            for r in reader}


def derive_capacity(tp_rows):
    """Token capacity per pool from the TP profile.

    The heaviest per-GPU load in the profile (total tokens over GPUs in the
    pool, maximised over rows and modes) is taken as what one GPU sustains in
    a 5-minute window.  A TPm pool gets ``m`` times that, and six windows make
    the 30-minute figure.
    """
    per_gpu = max(float(rows[:, 0].max()) / m for m, rows in tp_rows.items())
    return {m: (m * per_gpu, m * per_gpu * CLUSTER_SECONDS / WINDOW_SECONDS)
            for m in sorted(tp_rows)}


def capacity_csv(capacity):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CAPACITY_COLUMNS)
    for m in sorted(capacity):
        c5, c30 = capacity[m]
        w.writerow([m, f"{c5:.0f}", f"{c30:.0f}"])
    return buf.getvalue()


def load_tables(tp_path=None, dvfs_path=None, capacity_path=None, inlet_reference=27.0):
    """Load profile tables; missing paths fall back to the bundled data."""
    tp_text = _read_text("tp_profile.csv") if tp_path is None else open(tp_path).read()
    dvfs_text = _read_text("dvfs_profile.csv") if dvfs_path is None else open(dvfs_path).read()
    tp_rows = parse_tp_csv(tp_text)
    if capacity_path is None:
        capacity = parse_capacity_csv(_read_text("capacity.csv"))
    else:
        capacity = parse_capacity_csv(open(capacity_path).read())
    return ProfileTables(tp_rows, parse_dvfs_csv(dvfs_text), capacity, inlet_reference)


def gpu_power(f, u, coeffs):
    """Per-GPU power ``a3*f*u + a2*f + a1*u + a0``, never below zero."""
    if not 0.0 <= u <= 1.0:
        raise ValueError("utilization must lie in [0, 1]")
    p = coeffs.a3 * f * u + coeffs.a2 * f + coeffs.a1 * u + coeffs.a0
    if p < 0:
        log.warning("power model negative at f=%s u=%s; clamped to 0", f, u)
        return 0.0
    return p


def gpu_temp_step(point, theta_c, p_gpu, coeffs, dt):
    """One explicit step of the GPU temperature model.

    ``point`` is a :class:`GpuOperatingPoint` or a temperature (scalar or
    array).  The open form integrates ``beta0*theta_c + beta1*P + gamma``;
    the relaxed form subtracts ``beta2*theta``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    theta = point.theta_gpu if isinstance(point, GpuOperatingPoint) else point
    rate = coeffs.beta0 * theta_c + coeffs.beta1 * p_gpu + coeffs.gamma
    if coeffs.form == "relaxed":
        rate = rate - coeffs.beta2 * theta
    return theta + dt * rate


def _interp(x, xs, ys):
    return float(np.interp(x, xs, ys))


def tp_metrics(mode, total_tokens, tables):
    """Latency, temperature and power of one TPm pool serving ``total_tokens``.

    Linear interpolation between profiled rows; outside the profiled range the
    end row is used and ``extrapolated`` is set.
    """
    if mode not in tables.tp_rows:
        raise ProfileError(f"unknown TP mode {mode!r}")
    rows = tables.tp_rows[mode]
    xs = rows[:, 0]
    extrapolated = bool(total_tokens < xs[0] or total_tokens > xs[-1])
    return TpMetrics(_interp(total_tokens, xs, rows[:, 1]), _interp(total_tokens, xs, rows[:, 2]),
                     _interp(total_tokens, xs, rows[:, 3]), extrapolated)


def nearest_bucket(tokens, buckets):
    """Closest profiled bucket; halfway values go to the smaller bucket."""
    return min(buckets, key=lambda b: (abs(tokens - b), b))


def dvfs_metrics(f, tokens, tables):
    if f not in tables.freqs:
        raise ProfileError(f"frequency {f!r} MHz is not in the profiled set {tables.freqs}")
    bucket = nearest_bucket(tokens, tables.buckets)
    lat, power, temp = tables.dvfs[(f, bucket)]
    return DvfsMetrics(lat, power, temp, bucket)


@dataclass(frozen=True)
class PowerFit:
    coeffs: GpuPowerCoefficients
    rms: float
    max_abs: float


def fit_power_coeffs(samples):
    """Least squares of power on the basis ``{f*u, f, u, 1}``.

    ``samples`` is an iterable of ``(f, u, power)``.
    """
    data = np.asarray(list(samples), dtype=float).reshape(-1, 3)
    f, u, p = data[:, 0], data[:, 1], data[:, 2]
    X = np.column_stack([np.ones_like(f), u, f, f * u])
    if len(data) < 4 or np.linalg.matrix_rank(X) < 4:
        raise FitError("power fit needs at least four linearly independent samples")
    scale = np.abs(X).max(axis=0)
    sol, *_ = np.linalg.lstsq(X / scale, p, rcond=None)
    a = sol / scale
    resid = X @ a - p
    return PowerFit(GpuPowerCoefficients(*(float(v) for v in a)),
                    float(np.sqrt(np.mean(resid ** 2))), float(np.abs(resid).max()))


def dvfs_power_samples(tables):
    """``(f, u, power)`` rows from the DVFS table.

    Utilization is proxied by bucket size over the largest bucket.
    """
    top = max(tables.buckets)
    return [(f, b / top, tables.dvfs[(f, b)][1]) for f in tables.freqs for b in tables.buckets]


def tp_utilization(mode, tokens, tables):
    """Per-GPU utilization of a TPm pool carrying ``tokens`` in a 5-minute window."""
    return utilization_from_load(tokens, tables.capacity[mode][0])


@dataclass(frozen=True)
class ThermalFit:
    coeffs: GpuThermalCoefficients
    rms: float
    resistance: float
    offset: float


def fit_thermal_coeffs(tables, power, tau=60.0, f_ref=1800):
    """Fit the relaxed GPU temperature model to the TP profile temperatures.

    The steady state is ``theta_c + R*P + c0``; each profiled row gives
    ``P = gpu_power(f_ref, u)`` with ``u`` from :func:`tp_utilization`, at
    cold-aisle temperature ``tables.inlet_reference``.  ``tau`` sets the
    relaxation rate ``beta2 = 1/tau`` and ``beta0 = beta2`` keeps unit gain
    from the cold aisle.
    """
    ps, temps = [], []
    for m, rows in tables.tp_rows.items():
        for tokens, _, temp, _ in rows:
            ps.append(gpu_power(f_ref, tp_utilization(m, tokens, tables), power))
            temps.append(temp - tables.inlet_reference)
    X = np.column_stack([ps, np.ones(len(ps))])
    (r, c0), *_ = np.linalg.lstsq(X, np.asarray(temps), rcond=None)
    rms = float(np.sqrt(np.mean((X @ np.array([r, c0]) - temps) ** 2)))
    beta2 = 1.0 / tau
    co = GpuThermalCoefficients(beta0=beta2, beta1=float(r) * beta2, gamma=float(c0) * beta2,
                                beta2=beta2)
    return ThermalFit(co, rms, float(r), float(c0))


def utilization_from_load(tokens_in_window, capacity):
    if not capacity > 0:
        raise ValueError("capacity must be positive")
    return min(1.0, max(0.0, tokens_in_window) / capacity)


_DEFAULTS = {}


def default_tables():
    if "tables" not in _DEFAULTS:
        _DEFAULTS["tables"] = load_tables()
    return _DEFAULTS["tables"]


def default_power_fit():
    if "power" not in _DEFAULTS:
        _DEFAULTS["power"] = fit_power_coeffs(dvfs_power_samples(default_tables()))
    return _DEFAULTS["power"]


def default_thermal_fit():
    if "thermal" not in _DEFAULTS:
        _DEFAULTS["thermal"] = fit_thermal_coeffs(default_tables(), default_power_fit().coeffs)
    return _DEFAULTS["thermal"]
