import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expm
from rackctl.errors import (
    DimensionError,
    IntegrationError,
    InvalidCoefficientsError,
    UndefinedReturnError,
)
from rackctl.thermo import (
    CoolingCommand,
    CoolingPowerCoefficients,
    FlowField,
    RackState,
    ThermalCoefficients,
    cooling_power,
    cop,
    derive_flows,
    fan_coefficients_for,
    fan_power,
    linear_rack,
    rack_derivatives,
    return_temperature,
    server_fan_flows,
    step_rack,
    supply_fractions,
    thermal_load,
    zone_records,
)


def coeffs(n=1, phi_L=0.0, preset="uniform"):
    return ThermalCoefficients(phi_L=phi_L).resized(n, preset)


def test_supply_fraction_presets_sum_to_one():
    for n in (1, 2, 5, 9):
        for preset in ("uniform", "linear-decay"):
            b = supply_fractions(n, preset)
            assert abs(b.sum() - 1) < 1e-12
            assert np.all(b >= 0)
    decay = supply_fractions(4, "linear-decay")
    assert np.all(np.diff(decay) < 0)


def test_coefficients_reject_bad_supply_split():
    with pytest.raises(InvalidCoefficientsError):
        ThermalCoefficients(b=(0.5, 0.4))
    with pytest.raises(InvalidCoefficientsError):
        ThermalCoefficients(Cth=0.0)


def test_derive_flows_single_server_balanced():
    fl = derive_flows(coeffs(1), CoolingCommand(20, 0.02), [0.02])
    assert fl.phi_oc.tolist() == [0.0]
    # the last hot-chain entry is the return stream back to the RCU
    assert fl.phi_oh.tolist() == [0.02]
    assert not fl.clamped


def test_derive_flows_two_servers_by_hand():
    fl = derive_flows(coeffs(2), CoolingCommand(20, 0.02), [0.008, 0.012])
    assert np.allclose(fl.phi_oc, [0.002, 0.0], atol=1e-15)
    assert np.allclose(fl.phi_oh, [0.008, 0.02], atol=1e-15)


def test_derive_flows_rejects_wrong_length():
    with pytest.raises(DimensionError):
        derive_flows(coeffs(2), CoolingCommand(20, 0.02), [0.01])


def test_derive_flows_clamps_and_flags(caplog):
    fl = derive_flows(coeffs(2), CoolingCommand(20, 0.02), [0.015, 0.015])
    assert fl.clamped
    assert np.all(fl.phi_oc >= 0)
    assert "clamped" in caplog.text


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 6), phi=st.floats(0.009, 0.03), leak=st.floats(0.0, 0.002),
       preset=st.sampled_from(["uniform", "linear-decay"]))
def test_mass_balance_holds_for_tracking_fans(n, phi, leak, preset):
    co = coeffs(n, leak, preset)
    cmd = CoolingCommand(20.0, phi)
    fl = derive_flows(co, cmd, server_fan_flows(co, cmd))
    b = np.asarray(co.b)
    up_oc = np.concatenate([[0.0], fl.phi_oc[:-1]])
    up_oh = np.concatenate([[0.0], fl.phi_oh[:-1]])
    cold_in = b * phi + up_oc + leak
    cold_out = fl.phi_oc + fl.phi_s
    hot_in = fl.phi_s + up_oh
    hot_out = leak + fl.phi_oh
    assert np.all(np.abs(cold_in - cold_out) < 1e-9)
    assert np.all(np.abs(hot_in - hot_out) < 1e-9)
    # locally balanced fans leave nothing for the cold chain
    assert np.all(np.abs(fl.phi_oc) < 1e-12)


def test_zero_leak_balanced_fans_give_no_coupling():
    co = coeffs(3)
    cmd = CoolingCommand(22, 0.024)
    fl = derive_flows(co, cmd, np.asarray(co.b) * 0.024)
    assert np.all(np.abs(fl.phi_oc) < 1e-15)
    assert np.all(fl.phi_oh >= 0)


def test_uniform_equilibrium_has_zero_derivative():
    co = coeffs(4, 0.0003)
    cmd = CoolingCommand(21.5, 0.02)
    state = RackState.uniform(4, 21.5)
    fl = derive_flows(co, cmd, server_fan_flows(co, cmd))
    rates = rack_derivatives(state, cmd, fl, np.zeros(4), co)
    assert rates.norm() < 1e-9


def test_zero_flows_heat_only_the_server():
    co = coeffs(2)
    state = RackState(np.array([20.0, 21.0]), np.array([30.0, 35.0]), np.array([40.0, 41.0]))
    fl = FlowField(np.zeros(2), np.zeros(2), np.zeros(2))
    rates = rack_derivatives(state, CoolingCommand(20, 0.0), fl, np.array([500.0, 800.0]), co)
    assert np.allclose(rates.d_theta_s, [0.1, 0.16])
    assert np.allclose(rates.d_theta_c, 0)
    assert np.allclose(rates.d_theta_h, 0)


def test_exhaust_rate_by_hand():
    co = coeffs(1)
    state = RackState(np.array([20.0]), np.array([40.0]), np.array([40.0]))
    fl = FlowField(np.array([0.02]), np.zeros(1), np.zeros(1))
    rates = rack_derivatives(state, CoolingCommand(20, 0.02), fl, np.array([600.0]), co)
    assert rates.d_theta_s[0] == pytest.approx(0.024324, abs=1e-9)


def test_rack_derivatives_dimension_mismatch():
    co = coeffs(2)
    state = RackState.uniform(2, 20)
    fl = derive_flows(co, CoolingCommand(20, 0.02), [0.01, 0.01])
    with pytest.raises(DimensionError):
        rack_derivatives(state, CoolingCommand(20, 0.02), fl, np.zeros(3), co)


def test_step_keeps_equilibrium():
    co = coeffs(3, 0.0002)
    cmd = CoolingCommand(19.0, 0.015)
    s = step_rack(RackState.uniform(3, 19.0), cmd, np.zeros(3), co, 30.0)
    assert np.abs(s.as_vector() - 19.0).max() < 1e-9


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step_rack(RackState.uniform(1, 20), CoolingCommand(20, 0.02), [0.0], coeffs(1), 0.0)


def test_step_names_the_zone_on_blowup():
    co = coeffs(1)
    with pytest.raises(IntegrationError) as exc, np.errstate(all="ignore"):
        step_rack(RackState.uniform(1, 20), CoolingCommand(20, 0.02), [np.inf], co, 1.0)
    assert exc.value.zone in ("theta_c", "theta_s", "theta_h")


def test_state_rejects_non_finite():
    with pytest.raises(IntegrationError) as exc:
        RackState(np.array([np.nan]), np.array([1.0]), np.array([1.0]))
    assert exc.value.zone == "theta_c"


def test_rk4_matches_matrix_exponential():
    rng = np.random.default_rng(3)
    co = coeffs(3, 0.0002)
    for _ in range(5):
        phi = rng.uniform(0.009, 0.03)
        cmd = CoolingCommand(rng.uniform(18, 27), phi)
        fl = derive_flows(co, cmd, server_fan_flows(co, cmd))
        x = np.concatenate([rng.uniform(18, 45, 3), rng.uniform(20, 70, 3), rng.uniform(20, 70, 3)])
        P = rng.uniform(0, 2000, 3)
        lin = linear_rack(co, phi, fl)
        M = np.zeros((10, 10))
        M[:9, :9] = lin.A
        M[:9, 9] = lin.B @ np.concatenate([[cmd.theta_rcu], P])
        exact = (expm(30 * M) @ np.concatenate([x, [1.0]]))[:9]
        fine = step_rack(RackState.from_vector(x), cmd, P, co, 30.0, max_substep=0.1)
        assert np.abs(fine.as_vector() - exact).max() < 1e-8
        # fourth order: halving the sub-step shrinks the error about sixteenfold
        e1 = np.abs(step_rack(RackState.from_vector(x), cmd, P, co, 30.0).as_vector() - exact).max()
        e2 = np.abs(step_rack(RackState.from_vector(x), cmd, P, co, 30.0, max_substep=0.5)
                    .as_vector() - exact).max()
        assert 8 < e1 / e2 < 32


def test_linear_map_equals_rk4_step():
    rng = np.random.default_rng(5)
    co = coeffs(4, 0.0002)
    cmd = CoolingCommand(23.0, 0.021)
    fl = derive_flows(co, cmd, server_fan_flows(co, cmd))
    lin = linear_rack(co, cmd.phi_rcu, fl, 1.0)
    x = rng.uniform(20, 60, 12)
    P = rng.uniform(0, 1500, 4)
    direct = step_rack(RackState.from_vector(x), cmd, P, co, 1.0, flows=fl).as_vector()
    mapped = lin.T @ x + lin.G @ np.concatenate([[cmd.theta_rcu], P])
    assert np.abs(direct - mapped).max() < 1e-9


def test_return_temperature_examples():
    assert return_temperature(RackState(np.zeros(3), np.zeros(3), np.array([40.0, 40, 40]))) == 40
    assert return_temperature(RackState(np.zeros(2), np.zeros(2), np.array([30.0, 50]))) == 40
    assert return_temperature(RackState(np.zeros(1), np.zeros(1), np.array([47.4]))) == 47.4
    with pytest.raises(UndefinedReturnError):
        return_temperature(RackState(np.zeros(0), np.zeros(0), np.zeros(0)))


def test_thermal_load_examples():
    co = coeffs(1)
    hot = RackState(np.zeros(1), np.zeros(1), np.array([30.0]))
    assert thermal_load(hot, CoolingCommand(30.0, 0.02), co) == 0
    assert thermal_load(hot, CoolingCommand(20.0, 0.02), co) == pytest.approx(239.19, abs=1e-9)
    assert thermal_load(hot, CoolingCommand(20.0, 0.04), co) == pytest.approx(2 * 239.19, abs=1e-9)


def test_cop_examples():
    assert cop(22.0, CoolingPowerCoefficients(alpha=(3, 0, 0))) == 3
    default = CoolingPowerCoefficients()
    assert cop(18.0, default) == pytest.approx(2.6756, abs=1e-12)
    assert cop(27.0, default) == pytest.approx(0.458 + 0.0008 * 27 + 0.0068 * 27**2, abs=1e-12)
    with pytest.raises(InvalidCoefficientsError):
        cop(20.0, CoolingPowerCoefficients(alpha=(-1, 0, 0)))


def test_cooling_power_examples():
    zero = CoolingPowerCoefficients()
    assert cooling_power(0.0, CoolingCommand(18, 0.02), zero)[2] == 0
    p_src, _, _ = cooling_power(239.19, CoolingCommand(18, 0.02), zero)
    assert p_src == pytest.approx(239.19 / 2.6756, rel=1e-12)
    assert p_src == pytest.approx(89.397, abs=5e-4)
    # negative load costs no chiller power
    assert cooling_power(-50.0, CoolingCommand(18, 0.02), zero)[0] == 0


def test_fan_power_grows_with_airflow():
    co = CoolingPowerCoefficients(delta=fan_coefficients_for(2000.0, 0.03))
    assert fan_power(0.03, co) == pytest.approx(0.15 * 2000.0)
    totals = [cooling_power(500.0, CoolingCommand(20, p), co)[2] for p in np.linspace(0.009, 0.03, 8)]
    assert np.all(np.diff(totals) > 0)


@pytest.mark.parametrize("n, leak", [(1, 0.0002), (3, 0.0), (4, 0.0002)])
def test_steady_state_heat_balance(n, leak):
    co = coeffs(n, leak)
    cmd = CoolingCommand(22.0, 0.025)
    P = np.full(n, 500.0)
    state = RackState.uniform(n, 22.0)
    for _ in range(200):
        state = step_rack(state, cmd, P, co, 60.0)
    fl = derive_flows(co, cmd, server_fan_flows(co, cmd))
    assert rack_derivatives(state, cmd, fl, P, co).norm() < 1e-6
    assert thermal_load(state, cmd, co) == pytest.approx(P.sum(), rel=0.02)


def test_uneven_load_conserves_energy_through_last_hot_zone():
    # the averaged return understates the load when hot zones differ;
    # the stream leaving the last hot zone carries exactly the heat
    co = coeffs(3, 0.0002)
    cmd = CoolingCommand(22.0, 0.025)
    P = np.array([400.0, 600.0, 500.0])
    state = RackState.uniform(3, 22.0)
    for _ in range(200):
        state = step_rack(state, cmd, P, co, 60.0)
    carried = co.rho_cp * cmd.phi_rcu * (state.theta_h[-1] - cmd.theta_rcu)
    assert carried == pytest.approx(P.sum(), rel=1e-6)
    assert thermal_load(state, cmd, co) < P.sum()


def test_downstream_servers_run_no_cooler():
    co = coeffs(4, 0.0)
    cmd = CoolingCommand(20.0, 0.02)
    P = np.full(4, 400.0)
    # servers draw less than their supply share, so spill air and recirculation move downstream
    fans = np.full(4, 0.004)
    state = RackState.uniform(4, 20.0)
    fl = derive_flows(co, cmd, fans)
    for _ in range(300):
        state = step_rack(state, cmd, P, co, 60.0, flows=fl)
    assert np.all(np.diff(state.theta_s) >= -1e-9)


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, 2), extra=st.floats(1.0, 500.0))
def test_more_power_never_cools_the_exhaust(i, extra):
    co = coeffs(3, 0.0002)
    cmd = CoolingCommand(21.0, 0.02)
    state = RackState(np.array([22.0, 23, 24]), np.array([35.0, 38, 40]), np.array([40.0, 42, 45]))
    P = np.array([300.0, 300, 300])
    Q = P.copy()
    Q[i] += extra
    a = step_rack(state, cmd, P, co, 1.0)
    b = step_rack(state, cmd, Q, co, 1.0)
    assert b.theta_s[i] >= a.theta_s[i]


def test_zone_records_columns():
    co = coeffs(2)
    rows = zone_records(7, RackState.uniform(2, 25.0), CoolingCommand(20, 0.02), co,
                        CoolingPowerCoefficients())
    assert [r["server_index"] for r in rows] == [0, 1]
    assert set(rows[0]) == {"step", "server_index", "theta_c", "theta_s", "theta_h", "theta_ret",
                            "q_load", "p_src", "p_fan"}
