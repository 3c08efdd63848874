import numpy as np
import pytest

from nschtherm import generic as G
from nschtherm import solver as S
from nschtherm import thermo
from nschtherm.errors import BudgetExceeded, DomainError
from nschtherm.grid import Grid, face_density, integrate
from nschtherm.ledger import sym_grad_sq
from nschtherm.thermo import PhysParams

P = PhysParams()
G8 = Grid(8, 8)


@pytest.fixture(scope="module")
def prepared8():
    return S.prepare(S.smooth_state(G8, P), P, 0.02, 1e-4)


@pytest.fixture(scope="module")
def brackets8():
    q = G.random_generic_state(G8, P, np.random.default_rng(0))
    return q, G.assemble_J(q), G.assemble_K(q, P)


def test_generic_state_roundtrip(prepared8):
    q = G.GenericState.from_state(prepared8, P)
    assert np.allclose(q.theta, prepared8.theta)
    assert q.flat().shape == (4 * G8.size,)
    bad = G.GenericState(G8, np.full(G8.shape, 1e3), np.zeros(G8.shape), np.zeros((2, 8, 8)), 0.5)
    assert np.all(bad.theta > 0)
    with pytest.raises(DomainError):
        G.GenericState(G8, np.full(G8.shape, -1e3), np.zeros(G8.shape), np.zeros((2, 8, 8))).theta


def test_budget():
    q = G.random_generic_state(Grid(16, 20), P, np.random.default_rng(0))
    with pytest.raises(BudgetExceeded):
        G.assemble_J(q)


def test_bracket_structure(brackets8):
    q, j, k = brackets8
    assert G.antisymmetry_residual(j) <= 1e-12
    assert G.symmetry_residual(k) <= 1e-12
    assert np.linalg.eigvalsh(k)[0] >= -1e-10 * np.linalg.norm(k)
    nj, nk = G.check_noninteraction(q, P, j, k)
    assert nj <= 1e-12
    assert nk < 1e-4


def test_entropy_rate_nonnegative(brackets8):
    q, j, k = brackets8
    de_rate, ds_rate = G.check_rates(q, P, j, k)
    assert ds_rate > 0
    # energy rate is the K DE consistency error only
    assert abs(de_rate) < 1e-4 * ds_rate


def test_ds_target(brackets8):
    q, _, k = brackets8
    assert np.allclose(k @ G.gradient_S(q), G.ds_target(q, P), atol=1e-9 * np.linalg.norm(k))
    mm = G.ds_target_mismatch(q, P, k)
    assert mm["phase_row"] < 1e-12
    # the s row uses face fluxes, the ledger central ones: O(h^2) apart
    assert mm["entropy_production"] < 1e-2


def test_displayed_block_is_not_symmetric(brackets8):
    q, _, _ = brackets8
    assert G.symmetry_residual(G.displayed_phase_block(q)) > 0.1


def test_noninteraction_converges():
    res, rate = G.noninteraction_rate(P)
    assert res[1] < res[0]
    assert rate == pytest.approx(4.7188, rel=1e-3)


def test_bracket_report_rows():
    rep = G.check_brackets(G8, P, np.random.default_rng(1), 50)
    names = [n for n, _ in rep.rows()]
    assert names[:3] == ["n", "J_antisymmetry", "K_symmetry"]
    assert rep.n == 64


def _entropy_rate_gap(s0, dts, **kw):
    q0 = G.GenericState.from_state(s0, P)
    qdot = G.assemble_J(q0) @ G.gradient_E(q0, P) + G.assemble_K(q0, P) @ G.gradient_S(q0)
    lhs = G8.cell_area * G.gradient_S(q0) @ qdot
    out = []
    for dt in dts:
        s1 = S.step(s0, P, S.SchemeControls(dt=dt, **kw), dt)
        rhs = (integrate(G8, G.GenericState.from_state(s1, P).s) - integrate(G8, q0.s)) / dt
        out.append(rhs - lhs)
    return lhs, np.array(out)


def test_chain_rule_fluid_at_rest(prepared8):
    # <DS, J DE + K DS> matches the scheme's entropy rate to O(dt)
    rest = S.make_state(G8, prepared8.phi, prepared8.theta, None, P)
    lhs, gap = _entropy_rate_gap(rest, [1e-4, 5e-5, 2.5e-5], freeze_velocity=True)
    rel = np.abs(gap) / lhs
    assert rel[-1] < 0.011
    assert np.all(rel[:-1] / rel[1:] > 1.9)


def test_chain_rule_viscous_gap(prepared8):
    # with flow the scheme heats with nu |grad u|^2, the bracket with
    # nu |(grad u)_sym|^2; the rate mismatch tends to the integrated difference
    s0 = prepared8
    nu = thermo.nu(s0.theta, P)
    full = face_density(G8, s0.u[0], "dirichlet0", nu) + face_density(G8, s0.u[1], "dirichlet0", nu)
    visc = integrate(G8, (full - nu * sym_grad_sq(G8, s0.u)) / s0.theta)
    assert visc == pytest.approx(0.114214, rel=1e-5)
    _, gap = _entropy_rate_gap(s0, [1e-4, 5e-5, 2.5e-5, 1.25e-5])
    err = np.abs(gap - visc)
    assert np.all(np.diff(err) < 0)
    assert err[-1] < 0.02 * visc
