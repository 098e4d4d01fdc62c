"""Independent reference computations used by the tests.

Nothing here calls the solver or integrator under test; each oracle is a
direct, slow restatement of the quantity it checks.
"""

import itertools

import numpy as np


def zonal_rates(tc, ts, th, theta_rcu, phi_rcu, b, phi_s, oc, oh, co):
    """Zone balances evaluated row-wise for a batch of racks.

    Temperatures are (batch, n); flows are (batch, n) or (n,).
    """
    rc = co.rho * co.cp
    zero = np.zeros(tc.shape[:-1] + (1,))
    tc_up = np.concatenate([zero, tc[..., :-1]], axis=-1)
    th_up = np.concatenate([zero, th[..., :-1]], axis=-1)
    oc_up = np.concatenate([np.zeros_like(oc[..., :1]), oc[..., :-1]], axis=-1)
    oh_up = np.concatenate([np.zeros_like(oh[..., :1]), oh[..., :-1]], axis=-1)
    dc = (b * phi_rcu[..., None] * theta_rcu[..., None] + oc_up * tc_up + co.phi_L * th
          - (oc + phi_s) * tc) / co.Vc
    ds = (phi_s * rc * (tc - ts)) / co.Cth
    dh = (phi_s * ts + oh_up * th_up - (co.phi_L + oh) * th) / co.Vh
    return dc, ds, dh


def euler_batch(tc, ts, th, theta_rcu, phi_rcu, b, phi_s, oc, oh, power, co, t_end, dt):
    steps = int(round(t_end / dt))
    for _ in range(steps):
        dc, ds, dh = zonal_rates(tc, ts, th, theta_rcu, phi_rcu, b, phi_s, oc, oh, co)
        ds = ds + power / co.Cth
        tc, ts, th = tc + dt * dc, ts + dt * ds, th + dt * dh
    return tc, ts, th


def mix_candidates(g_max, modes=(2, 4, 8)):
    ranges = [range(g_max // m + 1) for m in modes]
    for ys in itertools.product(*ranges):
        counts = dict(zip(modes, ys))
        if sum(m * y for m, y in counts.items()) <= g_max:
            yield counts


def brute_force_mix(forecast, g_max, tables, theta_c, theta_gpu_max, min_pools=0):
    """Cheapest feasible mix by listing every candidate.

    Tie-break: cost (to 1e-9), then total GPUs, then pool counts from the
    largest mode down.
    """
    best = None
    shift = theta_c - tables.inlet_reference
    for counts in mix_candidates(g_max):
        pools = sum(counts.values())
        if pools < min_pools:
            continue
        cap = sum(tables.capacity[m][0] * y for m, y in counts.items())
        if cap < forecast:
            continue
        cost, ok = 0.0, True
        if pools:
            load = forecast / pools
            for m, y in counts.items():
                if not y:
                    continue
                rows = tables.tp_rows[m]
                temp = np.interp(load, rows[:, 0], rows[:, 2]) + shift
                cost += y * np.interp(load, rows[:, 0], rows[:, 3])
                ok &= temp <= theta_gpu_max
        if not ok:
            continue
        gpus = sum(m * y for m, y in counts.items())
        key = (round(cost, 9), gpus, counts[8], counts[4], counts[2])
        if best is None or key < best[0]:
            best = (key, counts, cost)
    return best


def brute_force_frequency(tokens, lat_max, theta_max, tables):
    bucket = min(tables.buckets, key=lambda b: (abs(tokens - b), b))
    rows = [(f,) + tables.dvfs[(f, bucket)] for f in sorted(tables.freqs)]
    feasible = [r for r in rows if r[1] <= lat_max and r[3] <= theta_max]
    if not feasible:
        return rows[-1][0], False
    return min(feasible, key=lambda r: (r[2], r[0]))[0], True


def rank(values):
    """Average ranks (ties share the mean rank)."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def spearman(x, y):
    return float(np.corrcoef(rank(x), rank(y))[0, 1])


def expm(M):
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    norm = max(np.abs(M).sum(axis=1).max(), 1e-16)
    s = max(0, int(np.ceil(np.log2(norm))) + 4)
    A = M / 2 ** s
    E = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, 30):
        term = term @ A / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def rk4_batch(tc, ts, th, theta_rcu, phi_rcu, b, phi_s, oc, oh, power, co, t_end, dt=1.0):
    def f(x):
        dc, ds, dh = zonal_rates(*x, theta_rcu, phi_rcu, b, phi_s, oc, oh, co)
        return dc, ds + power / co.Cth, dh

    x = (tc, ts, th)
    for _ in range(int(round(t_end / dt))):
        k1 = f(x)
        k2 = f(tuple(a + 0.5 * dt * k for a, k in zip(x, k1)))
        k3 = f(tuple(a + 0.5 * dt * k for a, k in zip(x, k2)))
        k4 = f(tuple(a + dt * k for a, k in zip(x, k3)))
        x = tuple(a + dt / 6 * (p + 2 * q + 2 * r + s)
                  for a, p, q, r, s in zip(x, k1, k2, k3, k4))
    return x


def dense_cooling_grid(state, power, co, cool, ts, thetas, phis, theta_c_max, theta_ret_max):
    """One-step cooling cost over a dense (theta_rcu, phi_rcu) lattice.

    Servers draw their supply share plus leakage, so the cold chain carries
    no coupling flow and the hot chain accumulates ``phi_rcu * cumsum(b)``.
    Returns cost and feasibility arrays shaped (len(phis), len(thetas)).
    """
    b = np.asarray(co.b)
    cost = np.empty((len(phis), len(thetas)))
    ok = np.empty_like(cost, dtype=bool)
    rep = lambda v: np.tile(np.asarray(v, dtype=float), (len(thetas), 1))  # noqa: E731
    for i, phi in enumerate(phis):
        phi_s = b * phi + co.phi_L
        oc = np.zeros_like(b)
        oh = phi * np.cumsum(b)
        tc, ts_, th = rk4_batch(rep(state.theta_c), rep(state.theta_s), rep(state.theta_h),
                                np.asarray(thetas, dtype=float), np.full(len(thetas), phi),
                                b, phi_s, oc, oh, np.asarray(power, dtype=float), co, ts)
        ret = th.mean(axis=1)
        q = co.rho * co.cp * phi * (ret - thetas)
        a0, a1, a2 = cool.alpha
        d0, d1, d2 = cool.delta
        cost[i] = np.maximum(q, 0) / (a0 + a1 * thetas + a2 * thetas ** 2) + d0 + d1 * phi + d2 * phi ** 2
        ok[i] = (tc.max(axis=1) <= theta_c_max) & (ret <= theta_ret_max)
    return cost, ok
