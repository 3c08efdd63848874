"""Shared runs and the acceptance summary.

Tests marked ``@pytest.mark.criterion(n)`` are collected into one summary line
per criterion, printed at the end of the session together with the values
they recorded through ``record_property``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from nschtherm.config import load_config
from nschtherm.ledger import Ledger
from nschtherm.solver import SchemeControls, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOOTH_DTS = (1e-3, 5e-4, 2.5e-4)

# property tests draw the same examples on every run
settings.register_profile("repro", derandomize=True, database=None)
settings.load_profile("repro")

_outcomes: dict[int, list[tuple[str, str, list]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "XFAIL" if rep.skipped else "XPASS"
        else:
            status = rep.outcome.upper()
        _outcomes.setdefault(mark.args[0], []).append((item.name, status, item.user_properties))


def _verdict(statuses):
    if any(s in ("FAILED", "XPASS") for s in statuses):
        return "FAIL"
    if all(s == "PASSED" for s in statuses):
        return "PASS"
    if any(s == "PASSED" for s in statuses):
        return "PASS (partial, see xfail)"
    return "XFAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        entries = _outcomes[n]
        tr.write_line(f"criterion {n:2d}: {_verdict([s for _, s, _ in entries])}")
        for name, status, props in entries:
            vals = "  ".join(f"{k}={_fmt(v)}" for k, v in props)
            tr.write_line(f"    {status:7s} {name}  {vals}")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# ---------------------------------------------------------------------------
# Shared runs


@pytest.fixture(scope="session")
def spinodal_run():
    """Ledger of the 64x64 spinodal run (500 steps) and its final state."""
    cfg = load_config(CONFIGS / "spinodal.ini")
    led = Ledger(cfg.params)
    states = run(cfg.initial_state(), cfg.params, cfg.controls, callback=led, keep=False)
    return cfg, led.rows, states


@pytest.fixture(scope="session")
def smooth_initial():
    cfg = load_config(CONFIGS / "smooth.ini")
    return cfg, cfg.initial_state()


@pytest.fixture(scope="session")
def smooth_runs(smooth_initial):
    """Ledgers of the prepared smooth run to t = 0.1 at three step sizes."""
    cfg, st0 = smooth_initial
    out = {}
    for dt in SMOOTH_DTS:
        led = Ledger(cfg.params)
        run(st0, cfg.params, SchemeControls(dt=dt, t_end=0.1), callback=led, keep=False)
        out[dt] = led.rows
    return cfg, out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
