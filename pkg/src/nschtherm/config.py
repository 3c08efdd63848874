"""Sectioned plain-text run configuration.

Example::

    [domain]
    nx = 64
    ny = 64

    [physics]
    epsilon = 0.1

    [scheme]
    dt = 1e-3
    t_end = 0.5
    seed = 7

    [ic]
    kind = random_phi
    amplitude = 0.05

Every key is optional; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .grid import Grid
from .solver import SchemeControls, State, make_state, prepare, random_phi_state, smooth_state
from .thermo import PhysParams

DOMAIN_KEYS = {"nx": int, "ny": int, "lx": float, "ly": float}
PHYSICS_KEYS = {"epsilon": "eps", "delta": "delta", "beta": "beta", "kappa0": "kappa0",
                "kappa1": "kappa1", "nu0": "nu0", "nu1": "nu1", "lambda": "lam", "M": "M",
                "gamma": "gamma", "p_reg": "p_reg"}
SCHEME_KEYS = {"dt": float, "t_end": float, "linear_tol": float, "div_tol": float,
               "snapshot_every": int, "seed": int, "max_positivity_retries": int}
IC_KEYS = {
    "uniform": {"phi": float, "theta": float},
    "random_phi": {"amplitude": float, "mean": float, "theta": float},
    "manufactured": {"a_phi": float, "a_theta": float, "a_u": float, "theta0": float,
                     "phi0": float, "t_prep": float, "dt_prep": float},
    "file": {"dir": str, "step": int},
}
CERTIFY_KEYS = {"energy_rel": float, "entropy_slack": float, "entropy_c": float, "mass": float}
SECTIONS = ("domain", "physics", "scheme", "ic", "certify")

SNAPSHOT_FIELDS = ("phi", "theta", "mu", "ux", "uy")


@dataclass
class RunConfig:
    grid: Grid
    params: PhysParams
    controls: SchemeControls
    ic_kind: str = "random_phi"
    ic: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)
    source: str = ""

    def initial_state(self) -> State:
        g, p, ic = self.grid, self.params, self.ic
        if self.ic_kind == "uniform":
            return make_state(g, ic.get("phi", 1.0), ic.get("theta", 1.0), params=p)
        if self.ic_kind == "random_phi":
            rng = np.random.default_rng(self.controls.seed)
            return random_phi_state(g, p, rng, ic.get("amplitude", 0.05), ic.get("mean", 0.0),
                                    ic.get("theta", 1.0))
        if self.ic_kind == "manufactured":
            st = smooth_state(g, p, ic.get("a_phi", 0.5), ic.get("a_theta", 0.1), ic.get("a_u", 0.1),
                              ic.get("theta0", 1.0), ic.get("phi0", 0.0))
            return prepare(st, p, ic.get("t_prep", 0.0), ic.get("dt_prep", 1e-4))
        if self.ic_kind == "file":
            return load_state(Path(ic["dir"]), ic.get("step", 0), p, g)
        raise ConfigError(f"unknown ic kind {self.ic_kind!r}")


def _convert(section, key, raw, typ):
    try:
        if typ is int:
            val = int(raw)
        elif typ is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
        else:
            val = raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return val


def _section(cp, name):
    return dict(cp.items(name)) if cp.has_section(name) else {}


def _typed(section, items, schema):
    out = {}
    for k, raw in items.items():
        if k not in schema:
            raise ConfigError(f"[{section}] unknown key {k!r}")
        out[k] = _convert(section, k, raw, schema[k])
    return out


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep the case of "M"
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")

    dom = _typed("domain", _section(cp, "domain"), DOMAIN_KEYS)
    phys_raw = _section(cp, "physics")
    phys = {}
    for k, raw in phys_raw.items():
        if k not in PHYSICS_KEYS:
            raise ConfigError(f"[physics] unknown key {k!r}")
        if k == "M" and raw.strip().lower() in ("auto", "none"):
            phys["M"] = None
            continue
        phys[PHYSICS_KEYS[k]] = _convert("physics", k, raw, float)
    sch = _typed("scheme", _section(cp, "scheme"), SCHEME_KEYS)
    ic_raw = _section(cp, "ic")
    kind = ic_raw.pop("kind", "random_phi")
    if kind not in IC_KEYS:
        raise ConfigError(f"[ic] unknown kind {kind!r}")
    ic = _typed("ic", ic_raw, IC_KEYS[kind])
    if kind == "file" and "dir" not in ic:
        raise ConfigError("[ic] kind = file needs dir")
    cert = _typed("certify", _section(cp, "certify"), CERTIFY_KEYS)

    try:
        grid = Grid(dom.get("nx", 64), dom.get("ny", 64), dom.get("lx", 1.0), dom.get("ly", 1.0))
        params = PhysParams(**phys)
        controls = SchemeControls(**sch)
    except (DomainError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if controls.t_end and controls.t_end < controls.dt:
        raise ConfigError("t_end must be 0 or at least dt")
    return RunConfig(grid, params, controls, kind, ic, cert, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# Field snapshots


def snapshot_name(fieldname: str, step: int) -> str:
    return f"{fieldname.upper()}_{step:06d}.dat"


def write_snapshot(state: State, outdir: Path) -> list[Path]:
    """One file per field: header ``nx ny lx ly time``, then one row per x index."""
    outdir = Path(outdir)
    g = state.grid
    data = {"phi": state.phi, "theta": state.theta, "mu": state.mu, "ux": state.u[0],
            "uy": state.u[1]}
    paths = []
    for name in SNAPSHOT_FIELDS:
        path = outdir / snapshot_name(name, state.step)
        with open(path, "w") as fh:
            fh.write(f"{g.nx} {g.ny} {g.lx!r} {g.ly!r} {state.time!r}\n")
            np.savetxt(fh, data[name], fmt="%.17g")
        paths.append(path)
    return paths


def read_snapshot(path) -> tuple[np.ndarray, tuple[int, int, float, float, float]]:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 5:
            raise ConfigError(f"{path}: bad snapshot header")
        nx, ny = int(head[0]), int(head[1])
        lx, ly, t = (float(v) for v in head[2:])
        arr = np.loadtxt(fh, ndmin=2)
    if arr.shape != (nx, ny):
        raise ConfigError(f"{path}: expected {nx}x{ny} values, got {arr.shape}")
    return arr, (nx, ny, lx, ly, t)


def load_state(directory: Path, step: int, params: PhysParams, grid: Grid | None = None) -> State:
    """Rebuild a state from snapshot files; ``mu`` is recomputed."""
    fields = {}
    meta = None
    for name in ("phi", "theta", "ux", "uy"):
        path = Path(directory) / snapshot_name(name, step)
        try:
            fields[name], meta = read_snapshot(path)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    nx, ny, lx, ly, t = meta
    g = Grid(nx, ny, lx, ly)
    if grid is not None and (grid.nx, grid.ny, grid.lx, grid.ly) != (nx, ny, lx, ly):
        raise ConfigError(f"snapshot grid {nx}x{ny} does not match [domain]")
    if not np.all(fields["theta"] > 0):
        raise ConfigError("snapshot temperature is not positive")
    st = make_state(g, fields["phi"], fields["theta"], np.stack([fields["ux"], fields["uy"]]),
                    params, time=0.0)
    return st
