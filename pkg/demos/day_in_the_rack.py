"""Half a day of the reference scenario under both policies.

The hierarchical controller sizes the cluster, splits it into tensor-parallel
pools, plans cooling with the MPC and picks a clock per job.  The baseline
keeps every GPU in TP8 at the top clock with PID cooling.  Both runs replay
the same synthetic trace, so their energy and temperature can be compared
directly.  The full 24 h run is what ``rackctl compare`` and the acceptance
suite use; 12 h keeps this demo under half a minute.
"""

from dataclasses import replace

from rackctl.config import load_config, scenario_path
from rackctl.engine import (build_sim_config, compare, format_summary, run_baseline,
                            run_simulation, safety_violations)

conf, _ = load_config(scenario_path("reference.ini"))
cfg = replace(build_sim_config(conf), duration=12 * 3600)

controlled = run_simulation(cfg)
baseline = run_baseline(cfg)

agg = controlled.aggregates
print(f"jobs served: {agg['n_jobs']}")
print(f"max return temperature: {agg['max_theta_ret_c']:.2f} C (limit 70)")
print(f"max GPU temperature: {agg['max_gpu_temp_c']:.2f} C (limit 50)")
print(f"safety violations: {safety_violations(controlled)}\n")
print(format_summary(compare(baseline, controlled)))
