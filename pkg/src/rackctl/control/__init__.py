"""Controller layers: cluster sizing, pool mix, dispatch, cooling and DVFS."""

from .dispatch import DispatchPlan, dispatch
from .dvfs import FrequencyChoice, default_latency_limits, select_frequency
from .mpc import Disturbance, MpcConfig, MpcResult, ThermalContext, plan_cooling
from .pid import PidState, pid_step
from .sizing import ClusterPlan, size_cluster
from .tpmix import TpMix, select_tp_mix

__all__ = [
    "ClusterPlan", "DispatchPlan", "Disturbance", "FrequencyChoice", "MpcConfig", "MpcResult",
    "PidState", "ThermalContext", "TpMix", "default_latency_limits", "dispatch", "pid_step",
    "plan_cooling", "select_frequency", "select_tp_mix", "size_cluster",
]
