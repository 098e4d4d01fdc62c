"""A rack heating up under a constant load, and what cooling it costs.

A four-server rack starts at room temperature with every server drawing
500 W.  The rack cooling unit supplies 22 C air at 0.12 m^3/s.  Stepping the
zonal model shows the hot aisle climbing until the heat the unit removes
matches the heat the servers produce.
"""

import numpy as np

from rackctl.thermo import (CoolingCommand, CoolingPowerCoefficients, RackState,
                            ThermalCoefficients, cooling_power, return_temperature,
                            step_rack, supply_fractions, thermal_load)

n = 4
thermal = ThermalCoefficients(b=tuple(supply_fractions(n)))
cooling = CoolingPowerCoefficients(delta=(0.0, 0.0, 2000.0))
cmd = CoolingCommand(theta_rcu=22.0, phi_rcu=0.12)
power = np.full(n, 500.0)

state = RackState.uniform(n, 22.0)
print(f"{'t (min)':>8}{'return C':>10}{'Q_load W':>10}{'cooling W':>11}")
for minute in range(0, 31, 2):
    q = thermal_load(state, cmd, thermal)
    _, _, total = cooling_power(q, cmd, cooling)
    print(f"{minute:>8}{return_temperature(state):>10.2f}{q:>10.1f}{total:>11.1f}")
    state = step_rack(state, cmd, power, thermal, 120.0)

state = step_rack(state, cmd, power, thermal, 3600.0)

# In steady state the removed heat equals the 2 kW the servers dissipate.
print(f"\nsteady-state heat balance: {thermal_load(state, cmd, thermal):.1f} W vs {power.sum():.0f} W")

# A colder supply costs more per watt removed: the COP falls with temperature.
for theta in (18.0, 22.0, 27.0):
    c = CoolingCommand(theta, 0.12)
    p_src, _, _ = cooling_power(power.sum(), c, cooling)
    print(f"supply {theta:.0f} C: chiller {p_src:6.1f} W to remove 2 kW")
