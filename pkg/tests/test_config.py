import numpy as np
import pytest

from nschtherm import solver as S
from nschtherm.config import (load_config, load_state, parse_config, read_snapshot, snapshot_name,
                              write_snapshot)
from nschtherm.errors import ConfigError
from nschtherm.grid import Grid
from nschtherm.thermo import PhysParams

from .conftest import CONFIGS


def test_defaults():
    cfg = parse_config("")
    assert cfg.grid == Grid(64, 64)
    assert cfg.params == PhysParams()
    assert cfg.ic_kind == "random_phi"
    assert cfg.controls.dt == 1e-3


def test_full_config():
    cfg = parse_config("""
[domain]
nx = 16
ny = 8
lx = 2.0
[physics]
epsilon = 0.05   # interface width
M = auto
lambda = 1.5
[scheme]
dt = 5e-4
t_end = 0.01
seed = 3
[ic]
kind = uniform
phi = 0.2
[certify]
entropy_c = 100
""")
    assert cfg.grid == Grid(16, 8, 2.0, 1.0)
    assert cfg.params.eps == 0.05 and cfg.params.lam == 1.5 and cfg.params.M is None
    assert cfg.controls.seed == 3
    assert cfg.certify == {"entropy_c": 100.0}
    st = cfg.initial_state()
    assert np.all(st.phi == 0.2) and np.all(st.theta == 1.0)


@pytest.mark.parametrize("text", [
    "[mesh]\nnx = 8",
    "[domain]\nnz = 8",
    "[domain]\nnx = eight",
    "[domain]\nnx = 2",
    "[physics]\nepsilon = -1",
    "[physics]\nepsilon = nan",
    "[physics]\nkappa2 = 1",
    "[scheme]\ndt = 0",
    "[scheme]\ndt = 1e-2\nt_end = 1e-3",
    "[ic]\nkind = vortex",
    "[ic]\nkind = uniform\namplitude = 1",
    "[ic]\nkind = file",
    "[certify]\nenergy = 1",
    "not an ini file",
])
def test_invalid(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.ini")


def test_shipped_configs():
    for name in ("spinodal", "smooth", "relative"):
        cfg = load_config(CONFIGS / f"{name}.ini")
        assert cfg.params.delta == 0.0


def test_random_ic_is_seeded():
    a = parse_config("[domain]\nnx=8\nny=8\n[scheme]\nseed=4").initial_state()
    b = parse_config("[domain]\nnx=8\nny=8\n[scheme]\nseed=4").initial_state()
    c = parse_config("[domain]\nnx=8\nny=8\n[scheme]\nseed=5").initial_state()
    assert np.array_equal(a.phi, b.phi) and not np.array_equal(a.phi, c.phi)


def test_snapshot_roundtrip(tmp_path):
    p = PhysParams()
    g = Grid(8, 6, 1.0, 0.75)
    st = S.run(S.smooth_state(g, p), p, S.SchemeControls(dt=1e-3, t_end=2e-3))[-1]
    paths = write_snapshot(st, tmp_path)
    assert [x.name for x in paths] == [snapshot_name(f, 2) for f in ("phi", "theta", "mu", "ux", "uy")]
    assert paths[0].name == "PHI_000002.dat"
    arr, meta = read_snapshot(paths[0])
    assert np.array_equal(arr, st.phi)
    assert meta == (8, 6, 1.0, 0.75, st.time)
    back = load_state(tmp_path, 2, p)
    assert np.array_equal(back.theta, st.theta) and np.array_equal(back.u, st.u)
    assert np.allclose(back.mu, st.mu)
    with pytest.raises(ConfigError):
        load_state(tmp_path, 2, p, Grid(8, 8))
    with pytest.raises(ConfigError):
        load_state(tmp_path, 3, p)


def test_file_ic(tmp_path):
    p = PhysParams()
    g = Grid(8, 8)
    write_snapshot(S.smooth_state(g, p), tmp_path)
    cfg = parse_config(f"[domain]\nnx=8\nny=8\n[ic]\nkind=file\ndir={tmp_path}\nstep=0\n")
    st = cfg.initial_state()
    assert st.time == 0.0 and np.all(st.theta > 0)


def test_bad_snapshot(tmp_path):
    (tmp_path / "PHI_000000.dat").write_text("8 8 1.0\n")
    with pytest.raises(ConfigError):
        read_snapshot(tmp_path / "PHI_000000.dat")
    (tmp_path / "PHI_000000.dat").write_text("2 2 1.0 1.0 0.0\n1 2 3\n4 5 6\n")
    with pytest.raises(ConfigError):
        read_snapshot(tmp_path / "PHI_000000.dat")
