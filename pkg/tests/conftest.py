import sys
import time
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from rackctl.config import load_config, scenario_path  # noqa: E402
from rackctl.engine import build_sim_config, run_baseline, run_simulation  # noqa: E402
from rackctl.gpu_models import default_tables  # noqa: E402


@pytest.fixture(scope="session")
def tables():
    return default_tables()


@pytest.fixture(scope="session")
def reference_runs():
    """The three 24 h reference runs shared by the closed-loop tests.

    ``mpc_runtime`` covers building the scenario (trace synthesis and
    forecaster training) plus the full hierarchical+MPC run.
    """
    t0 = time.perf_counter()
    conf, _ = load_config(scenario_path("reference.ini"))
    cfg = build_sim_config(conf)
    mpc = run_simulation(cfg)
    runtime = time.perf_counter() - t0
    return {
        "config": cfg,
        "mpc": mpc,
        "mpc_runtime": runtime,
        "baseline": run_baseline(cfg),
        "pid": run_simulation(replace(cfg, cooling_mode="pid")),
    }


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record a criterion's outcome so the run ends with one line per criterion."""

    def record(number, title, ok, detail):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:>2}. {'PASS' if ok else 'FAIL'}  {title}: {detail}")
