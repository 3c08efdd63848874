import dataclasses
import math

import numpy as np
import pytest

from nschtherm import solver as S
from nschtherm import thermo
from nschtherm.grid import Grid, integrate
from nschtherm.ledger import (CertTolerances, Ledger, LedgerRow, build_ledger, certify,
                              energy_parts, entropy_production_density, total_energy,
                              total_entropy, total_mass, write_csv)
from nschtherm.thermo import PhysParams

P = PhysParams()


def test_energy_parts_uniform():
    g = Grid(8, 8)
    st = S.make_state(g, 0.5, 2.0, params=P)
    parts = energy_parts(st, P)
    assert parts["kinetic"] == 0 and parts["interface"] == 0
    assert parts["potential"] == pytest.approx(thermo.F(0.5) / P.eps)
    assert parts["thermal"] == pytest.approx(2.0)
    assert total_energy(st, P) == pytest.approx(sum(parts.values()))
    assert total_entropy(st, P) == pytest.approx(-thermo.f_prime(2.0) + 0.5)
    assert total_mass(st) == pytest.approx(0.5)


def test_nonpositive_temperature_gives_nan():
    g = Grid(8, 8)
    st = S.make_state(g, 0.0, 1.0, params=P)
    st.theta[0, 0] = -1.0
    assert math.isnan(total_entropy(st, P))
    assert math.isnan(energy_parts(st, P)["thermal"])


def test_production_density(rng):
    g = Grid(12, 12)
    st = S.smooth_state(g, P)
    d = entropy_production_density(st, P)
    assert np.all(d >= 0)
    with pytest.raises(ValueError):
        entropy_production_density(st, P, mu_source="other")
    with pytest.raises(ValueError):
        Ledger(P, mu_source="other")


def test_shear_dissipation_oracle():
    # u = (sin^2 pi x sin^2 pi y, 0), theta = 1, nu = 1, phi uniform:
    # the production density integrates to 9 pi^2 / 32; second order in h
    exact = 9 * np.pi**2 / 32
    err = []
    for n in (32, 64):
        g = Grid(n, n)
        x, y = g.centers()
        s = lambda z: np.sin(np.pi * z) ** 2  # noqa: E731
        st = S.make_state(g, 0.3, 1.0, np.stack([s(x) * s(y), 0 * x]), P)
        err.append(exact - integrate(g, entropy_production_density(st, P)))
    assert err[1] < 0.01 * exact
    assert np.log2(err[0] / err[1]) > 1.9


def test_ledger_rows_stationary():
    g = Grid(8, 8)
    st = S.uniform_state(g, P, 1.0, 1.0)
    rows = build_ledger(S.run(st, P, S.SchemeControls(dt=1e-3, t_end=5e-3)), P)
    assert len(rows) == 6
    for r in rows:
        assert r.energy_drift == 0.0 and r.entropy_slack == 0.0
        assert r.dissipation_increment == 0.0


def test_ledger_mu_sources_differ():
    g = Grid(12, 12)
    st = S.smooth_state(g, P)
    states = S.run(st, P, S.SchemeControls(dt=1e-3, t_end=3e-3))
    a = build_ledger(states, P, "state")
    b = build_ledger(states, P, "flux")
    assert [r.energy for r in a] == [r.energy for r in b]
    assert a[1].dissipation_increment != b[1].dissipation_increment


def test_csv(tmp_path):
    g = Grid(8, 8)
    rows = build_ledger(S.run(S.smooth_state(g, P), P, S.SchemeControls(dt=1e-3, t_end=2e-3)), P)
    write_csv(rows, tmp_path / "ledger.csv")
    lines = (tmp_path / "ledger.csv").read_text().splitlines()
    assert lines[0].split(",") == LedgerRow.header()
    assert len(lines) == 4
    assert lines[1].split(",")[0] == "0"


def _rows_with_clip(n_steps, clip_at):
    """Prepared smooth 16x16 run whose temperature is clipped at its median after step ``clip_at``."""
    g = Grid(16, 16)
    st = S.prepare(S.smooth_state(g, P), P, 0.02, 1e-4)
    led = Ledger(P)
    led(st)
    ctrl = S.SchemeControls(dt=1e-3)
    for k in range(1, n_steps + 1):
        st = S.step(st, P, ctrl)
        if k == clip_at:
            st.theta = np.minimum(st.theta, np.median(st.theta))
            st.mu = S.chemical_potential(g, st.phi, st.theta, P)
        led(st)
    return led.rows


def test_certify_passes_and_flags_fault():
    clean = certify(_rows_with_clip(6, None))
    assert clean.passed
    assert [c.name for c in clean.certificates] == ["energy", "entropy", "mass", "positivity"]
    bad = certify(_rows_with_clip(6, 3))
    assert not bad["entropy"].passed
    assert bad["entropy"].worst_step == 3
    assert bad["entropy"].worst_value < 0
    assert "FAIL" in bad.summary()


def test_certify_other_faults():
    rows = _rows_with_clip(3, None)
    neg = [dataclasses.replace(r) for r in rows]
    neg[2] = dataclasses.replace(neg[2], min_theta=-1e-3)
    rep = certify(neg)
    assert not rep["positivity"].passed and rep["positivity"].worst_step == 2
    leak = [dataclasses.replace(r) for r in rows]
    leak[1] = dataclasses.replace(leak[1], mass=leak[1].mass + 1e-6)
    assert not certify(leak)["mass"].passed
    drift = [dataclasses.replace(r) for r in rows]
    drift[3] = dataclasses.replace(drift[3], energy_drift=0.5)
    assert not certify(drift)["energy"].passed
    nan = [dataclasses.replace(r) for r in rows]
    nan[1] = dataclasses.replace(nan[1], entropy_slack=float("nan"))
    assert certify(nan)["entropy"].worst_step == 1
    assert certify([]).passed


def test_entropy_tolerance_scales_with_dt():
    rows = _rows_with_clip(3, None)
    slack = [dataclasses.replace(r, entropy_slack=-1e-4) if r.step else r for r in rows]
    # 1e-4 is within 2000 dt^2 = 2e-3 but not within a dt-free tolerance
    assert certify(slack)["entropy"].passed
    assert not certify(slack, CertTolerances(entropy_c=0.0))["entropy"].passed
