"""Command-line entry points.

Exit codes: 0 ok, 2 configuration or input error, 3 safety limit exceeded
during the run, 4 infeasible pool mix (with ``infeasible_policy = error``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    config_hash,
    dump_config,
    load_config,
    parse_assignment,
    scenario_path,
)
from .errors import ConfigError, InfeasibleError, RackctlError
from .forecast import forecast_series, naive_model, score, train_forecaster
from .workload import DiurnalSpec, aggregate, parse_trace, synth_trace, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_SAFETY, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("rackctl")

FIG4_PANELS = (
    ("latency", "mean_latency"),
    ("gpu_temp", "theta_gpu_mean"),
    ("gpu_power", "it_power"),
    ("cooling_power", "cooling_power"),
)


def _overrides(args):
    out = {}

    def put(section, key, value):
        out.setdefault(section, {})[key] = value

    for text in getattr(args, "set", None) or []:
        put(*parse_assignment(text))
    if getattr(args, "seed", None) is not None:
        put("engine", "seed", args.seed)
    if getattr(args, "trace", None):
        put("workload", "trace", str(Path(args.trace).resolve()))
    return out


def _resolve(args, extra=None):
    overrides = _overrides(args)
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update(values)
    path = args.config
    if path is None and getattr(args, "scenario", None):
        path = scenario_path(args.scenario + ".ini")
    cfg, text = load_config(path, overrides)
    return cfg, text, path


def write_manifest(out_dir, command, config_path, cfg, text):
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else "",
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "config_hash": hashlib.sha256(text.encode()).hexdigest(),
        "resolved_config_hash": config_hash(cfg),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    (out / "config.ini").write_text(dump_config(cfg))
    return manifest


def _simulate_one(cfg, out_dir, baseline):
    from .engine import build_sim_config, run_baseline, run_simulation, safety_violations, write_report

    sim = build_sim_config(cfg)
    report = run_baseline(sim) if baseline else run_simulation(sim)
    write_report(report, out_dir)
    return report.aggregates, safety_violations(report)


def _print_run(agg):
    from .engine import HARDWARE_TABLE

    print(f"policy={agg['policy']} cooling={agg['cooling']} jobs={agg['n_jobs']}")
    for name, *_ in HARDWARE_TABLE:
        print(f"  {name:<30}{agg[name]:>12.3f}")
    print(f"  max return {agg['max_theta_ret_c']:.2f} C, max GPU {agg['max_gpu_temp_c']:.2f} C, "
          f"violations ret={agg['theta_ret_violations']} gpu={agg['theta_gpu_violations']}")


def _sweep_values(text):
    if "=" not in text:
        raise ConfigError(f"--sweep expects section.key=v1,v2,..., got {text!r}")
    lhs, rhs = text.split("=", 1)
    section, key, _ = parse_assignment(lhs + "=0")
    return section, key, [parse_assignment(f"{lhs}={v}")[2] for v in rhs.split(",") if v.strip()]


def _sweep_job(item):
    cfg, out_dir, baseline = item
    try:
        agg, bad = _simulate_one(cfg, out_dir, baseline)
        return EXIT_SAFETY if bad else EXIT_OK
    except InfeasibleError:
        return EXIT_INFEASIBLE


def cmd_simulate(args, baseline=False):
    command = "baseline" if baseline else "simulate"
    out = Path(args.out)
    if args.sweep:
        section, key, values = _sweep_values(args.sweep)
        items = []
        for v in values:
            cfg, text, path = _resolve(args, {section: {key: v}})
            sub = out / f"{section}.{key}={v}"
            write_manifest(sub, command, path, cfg, text)
            items.append((cfg, sub, baseline))
        with ProcessPoolExecutor(max_workers=min(len(items), args.jobs or len(items))) as ex:
            codes = list(ex.map(_sweep_job, items))
        for (cfg, sub, _), code in zip(items, codes):
            print(f"{sub}: exit {code}")
        return max(codes, default=EXIT_OK)
    cfg, text, path = _resolve(args)
    write_manifest(out, command, path, cfg, text)
    agg, bad = _simulate_one(cfg, out, baseline)
    _print_run(agg)
    if bad:
        print(f"safety limits exceeded on {bad} ticks", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


def cmd_compare(args):
    from .engine import compare, format_summary, read_aggregates, read_series

    a_dir, b_dir = Path(args.baseline_dir), Path(args.controlled_dir)
    for d in (a_dir, b_dir):
        if not (d / "aggregates.json").is_file():
            raise ConfigError("report directory has no aggregates.json", str(d))
    summary = compare(read_aggregates(a_dir), read_aggregates(b_dir))
    print(format_summary(summary))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"metric": r.metric, "baseline": r.baseline, "controlled": r.controlled,
             "improvement_pct": r.improvement, "delta": r.delta} for r in summary.rows]
    with open(out / "comparison.json", "w") as fh:
        json.dump(rows, fh, sort_keys=True, indent=2)
        fh.write("\n")
    sa, sb = read_series(a_dir), read_series(b_dir)
    for panel, column in FIG4_PANELS:
        with open(out / f"fig4_{panel}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "baseline", "controlled"])
            for t, x, y in zip(sa["time"], sa[column], sb[column]):
                w.writerow([repr(t), repr(x), repr(y)])
    manifest = {"command": "compare", "config_path": "", "output_dir": str(out),
                "tool_version": __version__, "config_hash": "",
                "inputs": [str(a_dir), str(b_dir)]}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_fit(args):
    from .gpu_models import dvfs_power_samples, fit_power_coeffs, fit_thermal_coeffs, load_tables

    cfg, text, path = _resolve(args)
    gp = cfg["gpu"]
    tables = load_tables(args.tp_csv or gp["tp_csv"] or None, args.dvfs_csv or gp["dvfs_csv"] or None,
                         args.capacity_csv or gp["capacity_csv"] or None, gp["inlet_reference"])
    pf = fit_power_coeffs(dvfs_power_samples(tables))
    tf = fit_thermal_coeffs(tables, pf.coeffs, gp["thermal_tau"], gp["f_max"])
    c = tf.coeffs
    fragment = "\n".join([
        "# fitted from the profile tables",
        f"# power fit: rms {pf.rms:.4f} W, max residual {pf.max_abs:.4f} W",
        f"# thermal fit: rms {tf.rms:.4f} C, R {tf.resistance:.6f} K/W, offset {tf.offset:.4f} K",
        "[gpu]",
        "power_coeffs = " + json.dumps(list(pf.coeffs.as_tuple())),
        "thermal_coeffs = " + json.dumps([c.beta0, c.beta1, c.gamma, c.beta2]),
        f"thermal_form = {c.form}",
        "",
    ])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit.ini").write_text(fragment)
    result = {"power_coeffs": list(pf.coeffs.as_tuple()), "power_rms_w": pf.rms,
              "power_max_abs_w": pf.max_abs,
              "thermal_coeffs": [c.beta0, c.beta1, c.gamma, c.beta2],
              "thermal_rms_c": tf.rms, "thermal_resistance_k_per_w": tf.resistance,
              "thermal_offset_k": tf.offset}
    with open(out / "fit.json", "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(out, "fit", path, cfg, text)
    print(fragment, end="")
    return EXIT_OK


def forecast_eval(series, lookback, hidden, epochs, lr, seed, holdout=0.2):
    """Train on the head of ``series`` and score one-step forecasts on the tail."""
    n_test = max(1, int(round(len(series) * holdout)))
    split = len(series) - n_test
    if split <= lookback + 1:
        raise ConfigError(f"need more than {lookback + 1 + n_test} intervals, got {len(series)}",
                          "workload.trace")
    model = train_forecaster(series[:split], lookback, hidden, epochs, lr, seed=seed)
    actual = np.array([s.total for s in series[split:]])
    lstm = forecast_series(model, series[split - lookback:])
    naive = forecast_series(naive_model(lookback), series[split - lookback:])
    ls, ns = score(lstm, actual), score(naive, actual)
    return {"intervals": len(series), "test_intervals": n_test,
            "lstm": {"mae": ls.mae, "mape": ls.mape, "final_train_loss": model.train_loss[-1]},
            "naive": {"mae": ns.mae, "mape": ns.mape}}


def cmd_forecast_eval(args):
    cfg, text, path = _resolve(args)
    wl, eng = cfg["workload"], cfg["engine"]
    seed = eng["seed"]
    if wl["trace"]:
        with open(wl["trace"], newline="") as fh:
            jobs = parse_trace(fh)
        horizon = None
    else:
        days = max(wl["history_days"], 1) + 1
        horizon = days * wl["period"]
        spec = DiurnalSpec(wl["base_rate"], wl["peak_rate"], wl["period"], horizon, wl["peak_time"],
                           tuple(wl["class_mix"]))
        jobs = synth_trace(spec, seed)
    series = aggregate(jobs, args.interval, horizon)
    metrics = forecast_eval(series, wl["lookback"], wl["hidden"], wl["epochs"], wl["lr"], seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(out, "forecast-eval", path, cfg, text)
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_synth(args):
    cfg, text, path = _resolve(args)
    wl = cfg["workload"]
    spec = DiurnalSpec(wl["base_rate"], wl["peak_rate"], wl["period"], cfg["engine"]["duration"],
                       wl["peak_time"], tuple(wl["class_mix"]))
    try:
        jobs = synth_trace(spec, cfg["engine"]["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc), "workload") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        write_trace(jobs, fh)
    write_manifest(out, "synth", path, cfg, text)
    print(f"{len(jobs)} jobs written to {out / 'trace.csv'}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (INI with module sections)")
    common.add_argument("--scenario", help="bundled scenario name when --config is absent, e.g. reference")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="overrides engine.seed")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rackctl", description="Joint compute and cooling control simulator")
    p.add_argument("--version", action="version", version=f"rackctl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "baseline"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--trace", help="trace CSV; overrides workload.trace")
        s.add_argument("--sweep", metavar="SECTION.KEY=V1,V2",
                       help="run one simulation per value in parallel, each in its own subdirectory")
        s.add_argument("--jobs", type=int, default=0, help="parallel workers for --sweep")
    c = sub.add_parser("compare", parents=[common])
    c.add_argument("baseline_dir")
    c.add_argument("controlled_dir")
    f = sub.add_parser("fit", parents=[common])
    f.add_argument("--tp-csv")
    f.add_argument("--dvfs-csv")
    f.add_argument("--capacity-csv")
    e = sub.add_parser("forecast-eval", parents=[common])
    e.add_argument("--trace", help="trace CSV; overrides workload.trace")
    e.add_argument("--interval", type=float, default=1800.0, help="aggregation interval in seconds")
    sub.add_parser("synth", parents=[common])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "simulate": lambda a: cmd_simulate(a, baseline=False),
        "baseline": lambda a: cmd_simulate(a, baseline=True),
        "compare": cmd_compare,
        "fit": cmd_fit,
        "forecast-eval": cmd_forecast_eval,
        "synth": cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RackctlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
