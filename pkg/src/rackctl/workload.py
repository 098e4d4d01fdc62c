"""Inference traces: parsing, interval aggregation, job classes, synthetic traces."""

from __future__ import annotations

import csv
import io
import math
import re
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from .errors import ClassificationError, TraceParseError

CLASSES = ("S", "M", "L")
CONTEXT_LIMIT = 8192
# first matching row wins: (class, context below, generated below)
CLASS_THRESHOLDS = (("S", 256, 100), ("M", 1024, 350))

# token ranges used by the synthetic generator, chosen to land inside each class
SYNTH_RANGES = {
    "S": ((16, 255), (1, 99)),
    "M": ((256, 1023), (100, 349)),
    "L": ((1024, 8191), (350, 1023)),
}


@dataclass(frozen=True)
class Job:
    arrival: float
    context_tokens: int
    generated_tokens: int
    job_class: str | None = None

    def __post_init__(self):
        if self.context_tokens < 1:
            raise ValueError("context_tokens must be at least 1")
        if self.generated_tokens < 0:
            raise ValueError("generated_tokens must be non-negative")

    @property
    def total_tokens(self):
        return self.context_tokens + self.generated_tokens


@dataclass(frozen=True)
class IntervalLoad:
    index: int
    n_t: float
    g_t: float
    interval_len: float

    @property
    def total(self):
        return self.n_t + self.g_t


def _parse_timestamp(text):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    # fromisoformat wants exactly 3 or 6 fractional digits before 3.11
    text = re.sub(r"\.(\d+)", lambda m: "." + (m.group(1) + "000000")[:6], text, count=1)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _norm(name):
    return name.strip().lower().replace("_", "")


def parse_trace(source):
    """Read a ``timestamp,context_tokens,generated_tokens`` CSV.

    ``source`` is a text stream or a string.  Timestamps may be epoch seconds
    or ISO-8601; arrivals are returned relative to the earliest one.  Header
    names are matched case-insensitively with underscores ignored, so the
    public Azure trace columns are accepted as they are.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        return []
    names = [_norm(h) for h in header]
    try:
        cols = [names.index(k) for k in ("timestamp", "contexttokens", "generatedtokens")]
    except ValueError:
        raise TraceParseError(1, "header must name timestamp, context_tokens, generated_tokens")
    raw = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ts = _parse_timestamp(row[cols[0]])
            ctx = int(row[cols[1]])
            gen = int(row[cols[2]])
        except (ValueError, IndexError) as exc:
            raise TraceParseError(lineno, f"malformed row: {exc}") from None
        if ctx < 1 or gen < 0 or not math.isfinite(ts):
            raise TraceParseError(lineno, "token counts must be non-negative (context at least 1)")
        raw.append((ts, ctx, gen))
    if not raw:
        return []
    stamps = [r[0] for r in raw]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        warnings.warn("trace timestamps are not monotone; rows re-sorted", stacklevel=2)
        raw.sort(key=lambda r: r[0])
    t0 = raw[0][0]
    return [Job(ts - t0, ctx, gen) for ts, ctx, gen in raw]


def write_trace(jobs, stream, start=0.0):
    """Write jobs in the trace CSV schema with epoch-second timestamps."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["timestamp", "context_tokens", "generated_tokens"])
    for j in jobs:
        w.writerow([f"{start + j.arrival:.6f}", j.context_tokens, j.generated_tokens])


def aggregate(jobs, interval_len, horizon=None):
    """Sum context and generated tokens per fixed bin starting at t=0.

    ``horizon`` fixes the covered span; by default it reaches the last
    arrival.  Empty bins are emitted as zeros.
    """
    if not interval_len > 0:
        raise ValueError("interval_len must be positive")
    last = max((j.arrival for j in jobs), default=0.0)
    if horizon is None:
        n_bins = int(last // interval_len) + 1 if jobs else 0
    else:
        n_bins = max(math.ceil(horizon / interval_len - 1e-12), 0)
        if jobs and last >= n_bins * interval_len:
            n_bins = int(last // interval_len) + 1
    n = np.zeros(n_bins)
    g = np.zeros(n_bins)
    for j in jobs:
        k = int(j.arrival // interval_len)
        n[k] += j.context_tokens
        g[k] += j.generated_tokens
    return [IntervalLoad(k, float(n[k]), float(g[k]), float(interval_len)) for k in range(n_bins)]


def classify_job(context_tokens, predicted_generated):
    """Class S/M/L by the token thresholds, first matching row wins."""
    if context_tokens >= CONTEXT_LIMIT:
        raise ClassificationError(f"context of {context_tokens} tokens is outside the classified range")
    for name, ctx_max, gen_max in CLASS_THRESHOLDS:
        if context_tokens < ctx_max and predicted_generated < gen_max:
            return name
    return "L"


class GeneratedTokensPredictor:
    """Stand-in for an output-length predictor.

    ``oracle`` returns the recorded generated-token count.  ``median`` returns
    the median generated length of previously completed jobs in the same
    context band (<256, <1024, rest), starting from the class-boundary
    midpoints before any job has completed.
    """

    PRIORS = (50.0, 225.0, 500.0)

    def __init__(self, mode="oracle"):
        if mode not in ("oracle", "median"):
            raise ValueError(f"unknown predictor mode {mode!r}")
        self.mode = mode
        self._history = ([], [], [])

    @staticmethod
    def _band(context_tokens):
        if context_tokens < 256:
            return 0
        return 1 if context_tokens < 1024 else 2

    def predict(self, job):
        if self.mode == "oracle":
            return job.generated_tokens
        hist = self._history[self._band(job.context_tokens)]
        return float(np.median(hist)) if hist else self.PRIORS[self._band(job.context_tokens)]

    def observe(self, job):
        if self.mode == "median":
            self._history[self._band(job.context_tokens)].append(job.generated_tokens)

    def classify(self, job):
        """Return ``job`` with its class set (context clipped below the limit)."""
        ctx = min(job.context_tokens, CONTEXT_LIMIT - 1)
        return replace(job, job_class=classify_job(ctx, self.predict(job)))


@dataclass(frozen=True)
class DiurnalSpec:
    """Sinusoidal arrival rate peaking at ``peak_time``.

    ``rate(t) = base + (peak - base) * (1 + cos(2*pi*(t - peak_time)/period)) / 2``
    in jobs per second.
    """

    base_rate: float = 0.1
    peak_rate: float = 0.3
    period: float = 86400.0
    duration: float = 86400.0
    peak_time: float = 50400.0
    class_mix: tuple = (0.35, 0.45, 0.2)

    def validate(self):
        if not (self.base_rate >= 0 and self.peak_rate >= self.base_rate and self.peak_rate > 0):
            raise ValueError("need 0 <= base_rate <= peak_rate and peak_rate > 0")
        if not (self.period > 0 and self.duration > 0):
            raise ValueError("period and duration must be positive")
        mix = tuple(self.class_mix)
        if len(mix) != 3 or any(x < 0 for x in mix) or not sum(mix) > 0:
            raise ValueError("class_mix needs three non-negative weights with a positive sum")

    def rate(self, t):
        phase = 2 * np.pi * (np.asarray(t) - self.peak_time) / self.period
        return self.base_rate + (self.peak_rate - self.base_rate) * 0.5 * (1 + np.cos(phase))


def synth_trace(spec, seed):
    """Poisson arrivals with the diurnal rate, by thinning a peak-rate process."""
    spec.validate()
    rng = np.random.default_rng(seed)
    expected = spec.peak_rate * spec.duration
    n_draw = int(expected + 10 * math.sqrt(expected) + 10)
    gaps = rng.exponential(1.0 / spec.peak_rate, size=n_draw)
    times = np.cumsum(gaps)
    while times[-1] < spec.duration:
        more = np.cumsum(rng.exponential(1.0 / spec.peak_rate, size=n_draw)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times < spec.duration]
    keep = rng.random(len(times)) * spec.peak_rate < spec.rate(times)
    times = times[keep]
    mix = np.asarray(spec.class_mix, dtype=float)
    classes = rng.choice(3, size=len(times), p=mix / mix.sum())
    u_ctx = rng.random(len(times))
    u_gen = rng.random(len(times))
    jobs = []
    for t, c, a, b in zip(times, classes, u_ctx, u_gen):
        (c_lo, c_hi), (g_lo, g_hi) = SYNTH_RANGES[CLASSES[c]]
        ctx = c_lo + int(a * (c_hi - c_lo + 1))
        gen = g_lo + int(b * (g_hi - g_lo + 1))
        jobs.append(Job(float(t), ctx, gen))
    return jobs
