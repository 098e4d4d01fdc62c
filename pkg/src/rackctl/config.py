"""Run configuration: INI-style key-value file with one section per module.

Values are read as JSON when possible (numbers, lists, booleans, ``null``) and
as plain strings otherwise.  Every key has a default; unknown sections or keys
are rejected so typos surface as errors that name the offending key.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import io
import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    "thermo": {
        "rho": 1.19, "cp": 1005.0, "vc": 0.1, "vh": 0.1, "cth": 5000.0, "phi_l": 0.0002,
        "b_preset": "uniform", "fan_flow": "track",
        "alpha": [0.458, 0.0008, 0.0068],
        # empty list: fit so the fan draws fan_fraction of peak rack IT power at max airflow
        "delta": [], "fan_fraction": 0.15,
        "theta_init": 24.0, "substep": 1.0,
    },
    "gpu": {
        "gpus_per_server": 8, "f_min": 1000, "f_max": 1800,
        # empty list: least-squares fit to the DVFS profile
        "power_coeffs": [],
        # empty list: fit to the TP profile temperatures
        "thermal_coeffs": [], "thermal_tau": 60.0, "thermal_form": "relaxed",
        "inlet_reference": 27.0,
        "tp_csv": "", "dvfs_csv": "", "capacity_csv": "",
    },
    "workload": {
        "trace": "", "base_rate": 0.1, "peak_rate": 0.3, "period": 86400.0,
        "peak_time": 50400.0, "class_mix": [0.35, 0.45, 0.2],
        "history_days": 7, "predictor": "oracle",
        "forecaster": "lstm", "lookback": 16, "hidden": 32, "epochs": 300, "lr": 0.01,
        "model_path": "",
    },
    "control": {
        "theta_rcu_min": 18.0, "theta_rcu_max": 27.0, "phi_min": 0.009, "phi_max": 0.03,
        "theta_c_max": 30.0, "theta_ret_max": 70.0, "theta_gpu_max": 50.0,
        "horizon": 2, "ts": 30.0, "grid": 7, "refinements": 3, "margin": 3.0,
        "disturbance": "persistence",
        "kp": 4.5, "ki": 0.18, "kd": 0.1, "pid_setpoint": 65.0, "pid_phi": 0.03,
        "constant_theta": 18.0, "constant_phi": 0.03,
        "latency_factor": 1.10, "tp_headroom": 1.25, "min_servers": 1, "max_servers": 1,
    },
    "engine": {
        "duration": 86400.0, "cluster_period": 1800.0, "window_period": 300.0,
        "cooling_period": 60.0, "policy": "hierarchical", "cooling": "mpc",
        "baseline_cooling": "pid", "inflight_seconds": 10.0, "blackout": 0.0,
        "seed": 0, "infeasible_policy": "fallback", "export_thermal": True,
    },
}


def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _format_value(value):
    return value if isinstance(value, str) else json.dumps(value)


def parse_config_text(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}", source) from None
    out = {}
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError("unknown section", section)
        out[section] = {}
        for key, raw in cp.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            out[section][key] = _parse_value(raw)
    return out


def merge(base, overrides):
    cfg = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in cfg:
            raise ConfigError("unknown section", section)
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            cfg[section][key] = value
    return cfg


def parse_assignment(text):
    """``section.key=value`` to ``(section, key, value)``."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"expected section.key=value, got {text!r}")
    lhs, rhs = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key, _parse_value(rhs)


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides`` (nested dict).

    Returns ``(config, text)`` where ``text`` is the file content used for the
    manifest hash (empty when no file was given).
    """
    text = ""
    file_cfg = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("configuration file not found", str(path))
        text = p.read_text()
        file_cfg = parse_config_text(text, str(path))
        base_dir = p.resolve().parent
        # relative data paths are relative to the config file
        for section, key in (("workload", "trace"), ("workload", "model_path"), ("gpu", "tp_csv"),
                             ("gpu", "dvfs_csv"), ("gpu", "capacity_csv")):
            val = file_cfg.get(section, {}).get(key)
            if isinstance(val, str) and val and not Path(val).is_absolute():
                file_cfg[section][key] = str(base_dir / val)
    cfg = merge(DEFAULTS, file_cfg)
    if overrides:
        cfg = merge(cfg, overrides)
    validate(cfg)
    return cfg, text


def _require(cond, key, message):
    if not cond:
        raise ConfigError(message, key)


def validate(cfg):
    th, gpu, wl, ctl, eng = (cfg[s] for s in ("thermo", "gpu", "workload", "control", "engine"))
    for k in ("rho", "cp", "vc", "vh", "cth", "substep"):
        _require(isinstance(th[k], (int, float)) and th[k] > 0, f"thermo.{k}", "must be a positive number")
    _require(th["phi_l"] >= 0, "thermo.phi_l", "must be non-negative")
    _require(th["b_preset"] in ("uniform", "linear-decay"), "thermo.b_preset",
             "must be uniform or linear-decay")
    _require(th["fan_flow"] == "track" or isinstance(th["fan_flow"], (int, float)),
             "thermo.fan_flow", "must be 'track' or a flow in m3/s")
    _require(len(th["alpha"]) == 3, "thermo.alpha", "needs three coefficients")
    _require(len(th["delta"]) in (0, 3), "thermo.delta", "needs three coefficients or none")
    _require(gpu["gpus_per_server"] in (8, 16), "gpu.gpus_per_server", "must be 8 or 16")
    _require(len(gpu["power_coeffs"]) in (0, 4), "gpu.power_coeffs", "needs a0, a1, a2, a3 or none")
    _require(len(gpu["thermal_coeffs"]) in (0, 4), "gpu.thermal_coeffs",
             "needs beta0, beta1, gamma, beta2 or none")
    _require(gpu["thermal_form"] in ("relaxed", "open"), "gpu.thermal_form", "must be relaxed or open")
    _require(wl["forecaster"] in ("naive", "lstm"), "workload.forecaster", "must be naive or lstm")
    _require(wl["predictor"] in ("oracle", "median"), "workload.predictor", "must be oracle or median")
    _require(isinstance(wl["history_days"], int) and wl["history_days"] >= 0,
             "workload.history_days", "must be a non-negative integer")
    _require(len(wl["class_mix"]) == 3, "workload.class_mix", "needs three weights")
    _require(ctl["theta_rcu_min"] < ctl["theta_rcu_max"], "control.theta_rcu_max",
             "must exceed theta_rcu_min")
    _require(0 < ctl["phi_min"] < ctl["phi_max"], "control.phi_max", "must exceed phi_min > 0")
    _require(1 <= ctl["min_servers"] <= ctl["max_servers"], "control.max_servers",
             "need 1 <= min_servers <= max_servers")
    _require(ctl["disturbance"] in ("persistence", "oracle"), "control.disturbance",
             "must be persistence or oracle")
    _require(eng["policy"] in ("hierarchical", "baseline"), "engine.policy",
             "must be hierarchical or baseline")
    for k in ("cooling", "baseline_cooling"):
        _require(eng[k] in ("mpc", "pid", "constant"), f"engine.{k}", "must be mpc, pid or constant")
    _require(eng["infeasible_policy"] in ("fallback", "error"), "engine.infeasible_policy",
             "must be fallback or error")
    cp_, wp, cl = eng["cooling_period"], eng["window_period"], eng["cluster_period"]
    _require(cp_ > 0 and wp % cp_ == 0 and cl % wp == 0, "engine.cluster_period",
             "periods must nest: cluster a multiple of window, window a multiple of cooling")
    _require(eng["duration"] > 0 and eng["duration"] % cp_ == 0, "engine.duration",
             "must be a positive multiple of cooling_period")
    _require(cp_ % th["substep"] == 0, "thermo.substep", "must divide the cooling period")


def dump_config(cfg):
    """Render a full configuration in the file format."""
    cp = configparser.ConfigParser(interpolation=None)
    for section, values in cfg.items():
        cp[section] = {k: _format_value(v) for k, v in values.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg):
    """SHA-256 of the fully resolved configuration (stable key order)."""
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def scenario_path(name):
    """Path of a bundled scenario file such as ``reference.ini``."""
    return Path(str(resources.files("rackctl").joinpath("scenarios", name)))
