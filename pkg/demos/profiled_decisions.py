"""How the compute layers turn profiling tables into decisions.

Two choices happen before any heat is simulated: how many tensor-parallel
pools of each size to run for a 5-minute window, and which clock each job
runs at.  Both read the bundled profiling tables and pick the cheapest
option that keeps the GPUs under their temperature cap.
"""

from rackctl.control.dvfs import select_frequency
from rackctl.control.tpmix import evaluate_mix, select_tp_mix
from rackctl.gpu_models import default_tables, dvfs_metrics
from rackctl.workload import Job

tables = default_tables()
theta_c = tables.inlet_reference

# A window forecast of 150k tokens on one 8-GPU server.  Every candidate mix
# is scored by profiled pool power; TP2 would run at 53.2 C, so it is out.
print("150k tokens, 8 GPUs, GPU cap 50 C")
for counts in ({2: 1}, {4: 1}, {8: 1}, {4: 2}):
    cost, bad = evaluate_mix(counts, 150000, 8, tables, theta_c, 50.0)
    status = "ok" if not any(bad.values()) else f"violates {[k for k, v in bad.items() if v]}"
    print(f"  {counts}: {cost:6.1f} W  {status}")
mix = select_tp_mix(150000, 8, tables, theta_c, 50.0)
print(f"  chosen: {mix.counts} at {mix.cost:.0f} W\n")

# Tighten the cap to 48 C and TP4 (49 C at this load) drops out as well,
# leaving the larger and hungrier TP8 pool.
mix = select_tp_mix(150000, 8, tables, theta_c, 48.0)
print(f"same load, GPU cap 48 C: {mix.counts} at {mix.cost:.0f} W\n")

# Per job, the DVFS layer walks the clock table for the job's token bucket
# and keeps the lowest-power clock that meets the latency bound.
job = Job(arrival=0.0, context_tokens=3047, generated_tokens=0)
print("3047-token job, latency bound 3.8 s, GPU cap 50 C")
for f in tables.freqs:
    m = dvfs_metrics(f, job.context_tokens, tables)
    print(f"  {f} MHz: {m.latency:.3f} s  {m.power:7.2f} W  {m.temp:.0f} C")
choice = select_frequency(job, 3.8, tables, 50.0)
print(f"  chosen: {choice.freq} MHz at {choice.power:.2f} W")
