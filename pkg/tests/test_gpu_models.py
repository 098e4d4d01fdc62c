import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rackctl.errors import FitError, ProfileError
from rackctl.gpu_models import (
    FREQUENCIES,
    GpuOperatingPoint,
    GpuPowerCoefficients,
    GpuThermalCoefficients,
    capacity_csv,
    default_power_fit,
    default_thermal_fit,
    derive_capacity,
    dvfs_metrics,
    dvfs_power_samples,
    fit_power_coeffs,
    gpu_power,
    gpu_temp_step,
    nearest_bucket,
    parse_capacity_csv,
    parse_dvfs_csv,
    parse_tp_csv,
    tp_metrics,
    tp_utilization,
    utilization_from_load,
)


def test_constant_power_model():
    co = GpuPowerCoefficients(120.0, 0, 0, 0)
    for f in FREQUENCIES:
        for u in (0.0, 0.3, 1.0):
            assert gpu_power(f, u, co) == 120.0


def test_power_affine_in_frequency():
    co = default_power_fit().coeffs
    u = 0.4
    p = [gpu_power(f, u, co) for f in (1000, 1400, 1800)]
    slope = co.a3 * u + co.a2
    assert p[1] - p[0] == pytest.approx(400 * slope)
    assert p[2] - p[1] == pytest.approx(400 * slope)


def test_power_clamped_at_zero():
    assert gpu_power(1000, 0.0, GpuPowerCoefficients(-10.0, 0, 0, 0)) == 0.0
    with pytest.raises(ValueError):
        gpu_power(1000, 1.5, GpuPowerCoefficients(0, 0, 0, 0))


def test_fitted_power_reproduces_profiled_row(tables):
    fit = default_power_fit()
    u = 3047 / max(tables.buckets)
    assert abs(gpu_power(1000, u, fit.coeffs) - 87.71) <= fit.max_abs


def test_fitted_power_frozen(tables):
    fit = default_power_fit()
    assert fit.coeffs.as_tuple() == pytest.approx((-71.1797, 35.1347, 0.124106, 0.0283035),
                                                  rel=1e-4)
    assert fit.rms == pytest.approx(22.92, abs=0.01)
    # predicted power stays non-negative over the whole operating range
    for f in np.linspace(1000, 1800, 9):
        for u in np.linspace(0, 1, 11):
            co = fit.coeffs
            assert co.a3 * f * u + co.a2 * f + co.a1 * u + co.a0 >= 0


def test_fit_recovers_exact_coefficients():
    rng = np.random.default_rng(0)
    true = (12.0, -3.5, 0.07, 0.011)
    samples = []
    for _ in range(40):
        f, u = rng.uniform(1000, 1800), rng.uniform(0, 1)
        samples.append((f, u, true[3] * f * u + true[2] * f + true[1] * u + true[0]))
    got = fit_power_coeffs(samples).coeffs.as_tuple()
    assert np.allclose(got, true, rtol=1e-9, atol=1e-9)


def test_fit_needs_four_samples():
    with pytest.raises(FitError):
        fit_power_coeffs([(1000, 0.1, 50), (1200, 0.5, 80), (1400, 0.9, 120)])


def test_fit_self_consistent_within_residual(tables):
    fit = default_power_fit()
    for f, u, p in dvfs_power_samples(tables):
        assert abs(gpu_power(f, u, fit.coeffs) - p) <= fit.max_abs + 1e-9


def test_temperature_unchanged_with_zero_coefficients():
    co = GpuThermalCoefficients(0.0, 0.0, 0.0, form="open")
    assert gpu_temp_step(GpuOperatingPoint(1400, 0.5, 41.0), 25.0, 200.0, co, 5.0) == 41.0


def test_open_form_integrates():
    co = GpuThermalCoefficients(0.01, 0.001, -0.2, form="open")
    got = gpu_temp_step(40.0, 25.0, 100.0, co, 2.0)
    assert got == pytest.approx(40.0 + 2.0 * (0.25 + 0.1 - 0.2))


def test_relaxed_form_converges_to_fixed_point():
    co = GpuThermalCoefficients(0.02, 0.002, -0.1, beta2=0.02)
    target = co.fixed_point(25.0, 300.0)
    assert target == pytest.approx((0.5 + 0.6 - 0.1) / 0.02)
    theta = 20.0
    for _ in range(2000):
        theta = gpu_temp_step(theta, 25.0, 300.0, co, 1.0)
    assert abs(theta - target) < 0.1


def test_thermal_fit_matches_profiled_tp4_temperature(tables):
    fit = default_thermal_fit()
    u = tp_utilization(4, 150000, tables)
    p = gpu_power(1800, u, default_power_fit().coeffs)
    steady = fit.coeffs.fixed_point(tables.inlet_reference, p)
    assert steady == pytest.approx(49.0, abs=1.0)
    assert fit.resistance == pytest.approx(0.118041, rel=1e-4)
    assert fit.coeffs.beta0 == fit.coeffs.beta2 == pytest.approx(1 / 60)


def test_thermal_coefficients_validation():
    with pytest.raises(ValueError):
        GpuThermalCoefficients(0.1, 0.1, 0.0, beta2=-1.0)
    with pytest.raises(ValueError):
        GpuThermalCoefficients(0.1, 0.1, 0.0)
    with pytest.raises(ValueError):
        GpuOperatingPoint(1400, 1.2, 40.0)
    with pytest.raises(ValueError):
        gpu_temp_step(40.0, 25.0, 100.0, GpuThermalCoefficients(0, 0, 0, form="open"), 0.0)


@pytest.mark.parametrize("mode, tokens, expected", [
    (2, 195000, (0.473, 54.7, 145)),
    (8, 150000, (0.233, 46.6, 581)),
])
def test_tp_table_rows(tables, mode, tokens, expected):
    m = tp_metrics(mode, tokens, tables)
    assert (m.latency, m.temp, m.power) == pytest.approx(expected)
    assert not m.extrapolated


def test_tp_interpolates_between_rows(tables):
    m = tp_metrics(4, 159000, tables)
    assert m.latency == pytest.approx((0.279 + 0.355) / 2)
    assert m.temp == pytest.approx((49.0 + 49.5) / 2)


def test_tp_midpoint_of_later_rows(tables):
    # 13500 of the 18000 tokens between the 150k and 168k rows
    m = tp_metrics(4, 163500, tables)
    assert m.latency == pytest.approx(0.279 + 0.75 * (0.355 - 0.279))


def test_tp_clamps_outside_range(tables):
    low = tp_metrics(8, 10000, tables)
    high = tp_metrics(8, 900000, tables)
    assert low.extrapolated and high.extrapolated
    assert low.latency == 0.233 and high.latency == 0.365
    with pytest.raises(ProfileError):
        tp_metrics(3, 150000, tables)


@pytest.mark.parametrize("f, tokens, expected", [
    (1400, 3047, (3.780, 204.46, 45)),
    (1800, 935, (3.463, 156.58, 43)),
    (1000, 2373, (3.673, 68.90, 42)),
])
def test_dvfs_table_rows(tables, f, tokens, expected):
    m = dvfs_metrics(f, tokens, tables)
    assert (m.latency, m.power, m.temp) == pytest.approx(expected)


def test_dvfs_nearest_bucket(tables):
    assert nearest_bucket(100, tables.buckets) == 935
    assert nearest_bucket(2710, tables.buckets) == 2373
    assert nearest_bucket(9000, tables.buckets) == 3047
    # halfway goes to the smaller bucket
    assert nearest_bucket((935 + 2373) / 2, tables.buckets) == 935
    with pytest.raises(ProfileError):
        dvfs_metrics(1300, 935, tables)


def test_exact_values_at_abscissae(tables):
    for m, rows in tables.tp_rows.items():
        for tokens, lat, temp, power in rows:
            got = tp_metrics(m, tokens, tables)
            assert (got.latency, got.temp, got.power) == (lat, temp, power)
    for (f, b), row in tables.dvfs.items():
        got = dvfs_metrics(f, b, tables)
        assert (got.latency, got.power, got.temp) == row


def test_dvfs_monotone_in_frequency(tables):
    for b in tables.buckets:
        lat = [tables.dvfs[(f, b)][0] for f in tables.freqs]
        temp = [tables.dvfs[(f, b)][2] for f in tables.freqs]
        assert all(x >= y for x, y in zip(lat, lat[1:]))
        assert all(x <= y for x, y in zip(temp, temp[1:]))


def test_bundled_tables_cover_modes_and_frequencies(tables):
    assert tables.modes == (2, 4, 8)
    assert tables.freqs == FREQUENCIES


def test_capacity_derived_from_profile(tables):
    cap = derive_capacity(tables.tp_rows)
    assert cap == {2: (195000, 1170000), 4: (390000, 2340000), 8: (780000, 4680000)}
    assert parse_capacity_csv(capacity_csv(cap)) == tables.capacity


def test_utilization_from_load():
    assert utilization_from_load(0, 100) == 0
    assert utilization_from_load(100, 100) == 1
    assert utilization_from_load(200, 100) == 1
    with pytest.raises(ValueError):
        utilization_from_load(10, 0)


def test_malformed_profiles_rejected():
    with pytest.raises(ProfileError):
        parse_tp_csv("tokens,latency\n1,2\n")
    with pytest.raises(ProfileError):
        parse_dvfs_csv("freq_mhz,latency_935,power_935\n1000,1,2\n")
    with pytest.raises(ProfileError):
        parse_dvfs_csv("freq_mhz,latency_935,power_935,temp_935\n1000,1,2,3\n1000,1,2,3\n")
    with pytest.raises(ProfileError):
        parse_capacity_csv("mode,cap\n")


@settings(max_examples=40, deadline=None)
@given(theta_c=st.lists(st.floats(15, 35), min_size=1, max_size=30),
       power=st.lists(st.floats(0, 400), min_size=1, max_size=30),
       theta0=st.floats(10, 90))
def test_relaxed_model_stays_bounded(theta_c, power, theta0):
    co = default_thermal_fit().coeffs
    points = [co.fixed_point(c, p) for c in (min(theta_c), max(theta_c))
              for p in (min(power), max(power))]
    lo, hi = min(points + [theta0]), max(points + [theta0])
    theta = theta0
    for k in range(300):
        theta = gpu_temp_step(theta, theta_c[k % len(theta_c)], power[k % len(power)], co, 1.0)
        assert lo - 1 <= theta <= hi + 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(1000, 1800), st.floats(0, 1)), min_size=8, max_size=40,
                unique_by=lambda t: (round(t[0], 3), round(t[1], 3))),
       st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(-0.2, 0.2),
                 st.floats(-0.1, 0.1)))
def test_fit_round_trip(points, true):
    fu = np.array(points)
    X = np.column_stack([np.ones(len(fu)), fu[:, 1], fu[:, 0], fu[:, 0] * fu[:, 1]])
    if np.linalg.cond(X / np.abs(X).max(axis=0)) > 1e6:
        return
    samples = [(f, u, true[3] * f * u + true[2] * f + true[1] * u + true[0]) for f, u in points]
    got = fit_power_coeffs(samples).coeffs.as_tuple()
    assert np.allclose(got, true, rtol=1e-9, atol=1e-7)
