"""Zonal rack thermal model.

Each active server ``i`` owns three lumped air/metal zones: the cold zone in
front of it (``theta_c``), the server body and exhaust (``theta_s``) and the hot
zone behind it (``theta_h``).  The rack cooling unit (RCU) supplies air at
``theta_rcu`` with volumetric flow ``phi_rcu``; a fraction ``b[i]`` of it enters
cold zone ``i``.  Cold zones are chained front to back by coupling flows
``phi_oc`` and hot zones by recirculation flows ``phi_oh``.  Leakage ``phi_L``
carries hot air back into each cold zone.

Server 0 sits next to the RCU.  All temperatures are in degrees Celsius, flows
in m^3/s and powers in watts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    IntegrationError,
    InvalidCoefficientsError,
    UndefinedReturnError,
)

log = logging.getLogger(__name__)

MAX_SUBSTEP = 1.0
THERMAL_CSV_COLUMNS = (
    "step", "server_index", "theta_c", "theta_s", "theta_h",
    "theta_ret", "q_load", "p_src", "p_fan",
)


def supply_fractions(n, preset="uniform"):
    """RCU supply split over ``n`` servers.

    ``uniform`` gives every server ``1/n``.  ``linear-decay`` gives the server
    nearest the RCU the largest share, falling linearly to the far end
    (weights ``n, n-1, ..., 1``).
    """
    if n < 1:
        raise ValueError("need at least one server")
    if preset == "uniform":
        w = np.ones(n)
    elif preset == "linear-decay":
        w = np.arange(n, 0, -1, dtype=float)
    else:
        raise ValueError(f"unknown supply preset {preset!r}")
    return w / w.sum()


@dataclass(frozen=True)
class ThermalCoefficients:
    rho: float = 1.19
    cp: float = 1005.0
    Vc: float = 0.1
    Vh: float = 0.1
    Cth: float = 5000.0
    phi_L: float = 0.0
    b: tuple = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in np.atleast_1d(self.b)))
        for name in ("rho", "cp", "Vc", "Vh", "Cth"):
            if not getattr(self, name) > 0:
                raise InvalidCoefficientsError(f"{name} must be positive")
        if self.phi_L < 0:
            raise InvalidCoefficientsError("phi_L must be non-negative")
        if any(x < 0 for x in self.b):
            raise InvalidCoefficientsError("supply fractions must be non-negative")
        if abs(math.fsum(self.b) - 1.0) > 1e-9:
            raise InvalidCoefficientsError(f"supply fractions sum to {math.fsum(self.b)!r}, not 1")

    @property
    def n_servers(self):
        return len(self.b)

    @property
    def rho_cp(self):
        return self.rho * self.cp

    def resized(self, n, preset="uniform"):
        """Same air properties with a fresh supply split over ``n`` servers."""
        return ThermalCoefficients(self.rho, self.cp, self.Vc, self.Vh, self.Cth,
                                   self.phi_L, tuple(supply_fractions(n, preset)))


@dataclass(frozen=True)
class RackState:
    theta_c: np.ndarray
    theta_s: np.ndarray
    theta_h: np.ndarray

    def __post_init__(self):
        for name in ("theta_c", "theta_s", "theta_h"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.theta_c) == len(self.theta_s) == len(self.theta_h)):
            raise DimensionError("zone vectors must have equal length")
        for name in ("theta_c", "theta_s", "theta_h"):
            bad = np.flatnonzero(~np.isfinite(getattr(self, name)))
            if bad.size:
                raise IntegrationError(name, int(bad[0]))

    @property
    def n_active(self):
        return len(self.theta_c)

    @classmethod
    def uniform(cls, n, theta):
        t = np.full(n, float(theta))
        return cls(t, t, t)

    def as_vector(self):
        return np.concatenate([self.theta_c, self.theta_s, self.theta_h])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        n = len(x) // 3
        return cls(x[:n], x[n:2 * n], x[2 * n:])


@dataclass(frozen=True)
class FlowField:
    phi_s: np.ndarray
    phi_oc: np.ndarray
    phi_oh: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        for name in ("phi_s", "phi_oc", "phi_oh"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class CoolingCommand:
    theta_rcu: float
    phi_rcu: float


@dataclass(frozen=True)
class CoolingPowerCoefficients:
    alpha: tuple = (0.458, 0.0008, 0.0068)
    delta: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        if len(self.alpha) != 3 or len(self.delta) != 3:
            raise InvalidCoefficientsError("alpha and delta need three entries each")


def fan_coefficients_for(it_power, phi_max, fraction=0.15):
    """Pure quadratic fan law drawing ``fraction * it_power`` at ``phi_max``."""
    return (0.0, 0.0, fraction * it_power / phi_max ** 2)


@dataclass(frozen=True)
class RackRates:
    """Time derivatives of the three zone temperatures (K/s)."""

    d_theta_c: np.ndarray
    d_theta_s: np.ndarray
    d_theta_h: np.ndarray

    def as_vector(self):
        return np.concatenate([self.d_theta_c, self.d_theta_s, self.d_theta_h])

    def norm(self):
        return float(np.linalg.norm(self.as_vector()))


def server_fan_flows(coeffs, cmd, fan_flow="track"):
    """Per-server fan flow.

    ``"track"`` lets each server draw its supply share plus the leakage, which
    keeps every cold zone locally balanced.  A number gives every server that
    constant flow.
    """
    if fan_flow == "track":
        return np.asarray(coeffs.b) * cmd.phi_rcu + coeffs.phi_L
    return np.full(coeffs.n_servers, float(fan_flow))


def derive_flows(coeffs, cmd, fan_flows):
    """Close the per-zone mass balances for the coupling flows.

    Walking from the RCU end, cold zone ``i`` receives ``b_i*phi_rcu`` plus the
    upstream coupling flow plus leakage and passes on whatever its server does
    not draw; hot zone ``i`` collects the server exhaust plus upstream
    recirculation and loses the leakage.  Negative closures are clamped at zero
    and reported through ``FlowField.clamped``.
    """
    phi_s = np.asarray(fan_flows, dtype=float).reshape(-1)
    b = np.asarray(coeffs.b)
    if len(b) != len(phi_s):
        raise DimensionError(f"supply fractions have {len(b)} entries for {len(phi_s)} servers")
    if np.any(phi_s < 0):
        raise ValueError("fan flows must be non-negative")
    n = len(phi_s)
    oc = np.empty(n)
    oh = np.empty(n)
    prev_c = prev_h = 0.0
    clamped = False
    for i in range(n):
        c = prev_c + b[i] * cmd.phi_rcu + coeffs.phi_L - phi_s[i]
        h = prev_h + phi_s[i] - coeffs.phi_L
        # round-off below the balance tolerance is not a real deficit
        if c < 0:
            clamped |= c < -1e-12
            c = 0.0
        if h < 0:
            clamped |= h < -1e-12
            h = 0.0
        oc[i], oh[i] = c, h
        prev_c, prev_h = c, h
    if clamped:
        log.warning("flow closure went negative; coupling flows clamped at zero")
    return FlowField(phi_s, oc, oh, clamped)


def _upstream(v):
    out = np.empty_like(v)
    out[0] = 0.0
    out[1:] = v[:-1]
    return out


def _rates(tc, ts, th, theta_rcu, phi_rcu, b, phi_s, oc, oh, oc_up, oh_up, power, co):
    tc_up = _upstream(tc)
    th_up = _upstream(th)
    dc = (b * phi_rcu * theta_rcu + oc_up * tc_up + co.phi_L * th - (oc + phi_s) * tc) / co.Vc
    ds = (phi_s * co.rho_cp * (tc - ts) + power) / co.Cth
    dh = (phi_s * ts - co.phi_L * th + oh_up * th_up - oh * th) / co.Vh
    return dc, ds, dh


def _check_dims(state, flows, powers, coeffs):
    n = state.n_active
    if not (len(flows.phi_s) == len(powers) == coeffs.n_servers == n):
        raise DimensionError(
            f"state has {n} servers, flows {len(flows.phi_s)}, powers {len(powers)}, "
            f"supply fractions {coeffs.n_servers}")


def rack_derivatives(state, cmd, flows, server_powers, coeffs):
    """Zone temperature derivatives for the given inputs.

    Cold zone: supply share, upstream coupling air and leakage mix in, the
    server fan and downstream coupling flow draw out.  Exhaust: the server
    heats its fan flow by ``rho*cp*phi_s*(theta_c - theta_s)`` plus its power.
    Hot zone: exhaust and upstream recirculation mix in, leakage and
    downstream recirculation leave.  Server 0 has no upstream neighbour.
    """
    powers = np.asarray(server_powers, dtype=float).reshape(-1)
    _check_dims(state, flows, powers, coeffs)
    if np.any(powers < 0):
        raise ValueError("server powers must be non-negative")
    dc, ds, dh = _rates(state.theta_c, state.theta_s, state.theta_h, cmd.theta_rcu,
                        cmd.phi_rcu, np.asarray(coeffs.b), flows.phi_s, flows.phi_oc,
                        flows.phi_oh, _upstream(flows.phi_oc), _upstream(flows.phi_oh),
                        powers, coeffs)
    return RackRates(dc, ds, dh)


def step_rack(state, cmd, server_powers, coeffs, dt, flows=None, fan_flow="track",
              max_substep=MAX_SUBSTEP):
    """Advance the rack by ``dt`` seconds with classical RK4.

    The interval is split into equal sub-steps no longer than ``max_substep``.
    Inputs are held constant across the call.  ``flows`` defaults to
    ``derive_flows`` with :func:`server_fan_flows` under ``fan_flow``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    powers = np.asarray(server_powers, dtype=float).reshape(-1)
    if flows is None:
        flows = derive_flows(coeffs, cmd, server_fan_flows(coeffs, cmd, fan_flow))
    _check_dims(state, flows, powers, coeffs)
    n_sub = max(1, math.ceil(dt / max_substep - 1e-12))
    h = dt / n_sub
    args = (cmd.theta_rcu, cmd.phi_rcu, np.asarray(coeffs.b), flows.phi_s, flows.phi_oc,
            flows.phi_oh, _upstream(flows.phi_oc), _upstream(flows.phi_oh), powers, coeffs)
    tc = state.theta_c.copy()
    ts = state.theta_s.copy()
    th = state.theta_h.copy()
    for _ in range(n_sub):
        k1 = _rates(tc, ts, th, *args)
        k2 = _rates(tc + 0.5 * h * k1[0], ts + 0.5 * h * k1[1], th + 0.5 * h * k1[2], *args)
        k3 = _rates(tc + 0.5 * h * k2[0], ts + 0.5 * h * k2[1], th + 0.5 * h * k2[2], *args)
        k4 = _rates(tc + h * k3[0], ts + h * k3[1], th + h * k3[2], *args)
        tc = tc + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        ts = ts + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th = th + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    for name, arr in (("theta_c", tc), ("theta_s", ts), ("theta_h", th)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise IntegrationError(name, int(bad[0]))
    return RackState(tc, ts, th)


def return_temperature(state):
    """Mean hot-zone temperature seen by the RCU intake."""
    if state.n_active < 1:
        raise UndefinedReturnError("return temperature needs at least one active server")
    return float(np.mean(state.theta_h))


def thermal_load(state, cmd, coeffs):
    """Heat removed by the RCU; negative while the return is colder than supply."""
    return coeffs.rho * cmd.phi_rcu * coeffs.cp * (return_temperature(state) - cmd.theta_rcu)


def cop(theta_rcu, coeffs):
    a0, a1, a2 = coeffs.alpha
    value = a0 + a1 * theta_rcu + a2 * theta_rcu * theta_rcu
    if not value > 0:
        raise InvalidCoefficientsError(f"COP {value!r} is not positive at {theta_rcu} C")
    return value


def fan_power(phi_rcu, coeffs):
    d0, d1, d2 = coeffs.delta
    return d0 + d1 * phi_rcu + d2 * phi_rcu * phi_rcu


def cooling_power(q_load, cmd, coeffs):
    """Return ``(p_src, p_fan, total)``; negative loads cost no chiller power."""
    p_src = max(q_load, 0.0) / cop(cmd.theta_rcu, coeffs)
    p_fan = fan_power(cmd.phi_rcu, coeffs)
    return p_src, p_fan, p_src + p_fan


@dataclass
class LinearRack:
    """Affine form ``dx/dt = A x + B w`` of the rack for one fixed airflow.

    ``x`` stacks ``theta_c, theta_s, theta_h``; ``w`` is ``[theta_rcu,
    P_0..P_{n-1}]``.  With fixed flows the zonal equations are linear, so the
    RK4 update over a sub-step of length ``h`` is exactly ``x+ = T x + G w``.
    """

    A: np.ndarray
    B: np.ndarray
    h: float = 1.0
    T: np.ndarray = field(init=False)
    G: np.ndarray = field(init=False)

    def __post_init__(self):
        ha = self.h * self.A
        eye = np.eye(len(self.A))
        ha2 = ha @ ha
        ha3 = ha2 @ ha
        self.T = eye + ha + ha2 / 2 + ha3 / 6 + ha3 @ ha / 24
        self.G = self.h * (eye + ha / 2 + ha2 / 6 + ha3 / 24) @ self.B


def linear_rack(coeffs, phi_rcu, flows, h=1.0):
    """Build :class:`LinearRack` for airflow ``phi_rcu`` and the given flows."""
    n = coeffs.n_servers
    b = np.asarray(coeffs.b)
    co = coeffs
    A = np.zeros((3 * n, 3 * n))
    B = np.zeros((3 * n, n + 1))
    c, s, hz = 0, n, 2 * n
    for i in range(n):
        A[c + i, c + i] = -(flows.phi_oc[i] + flows.phi_s[i]) / co.Vc
        A[c + i, hz + i] = co.phi_L / co.Vc
        if i > 0:
            A[c + i, c + i - 1] = flows.phi_oc[i - 1] / co.Vc
            A[hz + i, hz + i - 1] = flows.phi_oh[i - 1] / co.Vh
        B[c + i, 0] = b[i] * phi_rcu / co.Vc
        k = flows.phi_s[i] * co.rho_cp / co.Cth
        A[s + i, c + i] = k
        A[s + i, s + i] = -k
        B[s + i, 1 + i] = 1.0 / co.Cth
        A[hz + i, s + i] = flows.phi_s[i] / co.Vh
        A[hz + i, hz + i] = -(co.phi_L + flows.phi_oh[i]) / co.Vh
    return LinearRack(A, B, h)


def zone_records(step, state, cmd, thermal, cooling):
    """One CSV-ready dict per server for the thermal export."""
    ret = return_temperature(state)
    q = thermal_load(state, cmd, thermal)
    p_src, p_fan, _ = cooling_power(q, cmd, cooling)
    return [
        {"step": step, "server_index": i, "theta_c": float(state.theta_c[i]),
         "theta_s": float(state.theta_s[i]), "theta_h": float(state.theta_h[i]),
         "theta_ret": ret, "q_load": q, "p_src": p_src, "p_fan": p_fan}
        for i in range(state.n_active)
    ]
