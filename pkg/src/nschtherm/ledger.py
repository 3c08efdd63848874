"""Energy, entropy and mass bookkeeping with per-step certificates."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from . import thermo
from .grid import face_density, face_gradients, grad, integrate
from .solver import State, div_norm
from .thermo import PhysParams


@dataclass
class LedgerRow:
    step: int
    time: float
    energy: float
    entropy: float
    mass: float
    kinetic: float
    interface: float
    potential: float
    thermal: float
    dissipation_increment: float
    energy_drift: float
    entropy_slack: float
    min_theta: float
    div_u_norm: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[str]:
        return [str(v) if isinstance(v, int) else repr(float(v)) for v in astuple(self)]


def energy_parts(state: State, params: PhysParams) -> dict[str, float]:
    g = state.grid
    eps = params.eps
    parts = {
        "kinetic": 0.5 * integrate(g, state.u * state.u),
        "interface": 0.5 * eps * integrate(g, face_density(g, state.phi, "neumann")),
        "potential": integrate(g, thermo.F(state.phi)) / eps,
    }
    if np.all(state.theta > 0):
        parts["thermal"] = integrate(g, thermo.Q(state.theta, params.delta))
    else:
        parts["thermal"] = math.nan
    return parts


def total_energy(state: State, params: PhysParams) -> float:
    """``integral |u|^2/2 + eps|grad phi|^2/2 + F(phi)/eps + Q(theta)``."""
    p = energy_parts(state, params)
    return p["kinetic"] + p["interface"] + p["potential"] + p["thermal"]


def total_entropy(state: State, params: PhysParams) -> float:
    """``integral -f'(theta) + phi``; NaN if the temperature is not positive."""
    if not np.all(state.theta > 0):
        return math.nan
    return integrate(state.grid, -thermo.f_prime(state.theta, params.delta) + state.phi)


def total_mass(state: State) -> float:
    return integrate(state.grid, state.phi)


def sym_grad_sq(grid, u) -> np.ndarray:
    """``|(grad u)_sym|^2`` pointwise, central differences with no-slip ghosts."""
    gu = grad(grid, u[0], "dirichlet0")
    gv = grad(grid, u[1], "dirichlet0")
    off = 0.5 * (gu[1] + gv[0])
    return gu[0] ** 2 + gv[1] ** 2 + 2.0 * off**2


MU_SOURCES = ("state", "flux")


def entropy_production_density(state: State, params: PhysParams, theta=None,
                               mu_source: str = "state") -> np.ndarray:
    """Pointwise ``kappa|grad log theta|^2 + nu|(grad u)_sym|^2/theta + |grad mu|^2/theta``.

    ``theta`` defaults to the state's temperature; the ledger passes the
    temperature of the previous level, which is the one the heat step divides
    by.  With ``mu_source="state"`` the chemical potential is the state's
    ``mu = chemical_potential(phi, theta)``; ``"flux"`` uses the potential
    that drove the last phase flux (``state.mu_flux``) when the state records
    it.  Heat conduction uses face differences ``(theta_j - theta_i)^2 /
    (theta_i theta_j)``, the discrete form of ``|grad log theta|^2`` that the
    implicit diffusion produces.
    """
    if mu_source not in MU_SOURCES:
        raise ValueError(f"mu_source must be one of {MU_SOURCES}")
    g = state.grid
    th = state.theta if theta is None else theta
    gx, gy = face_gradients(g, th, "neumann")
    k = thermo.kappa(th, params)
    kx = np.concatenate([k[:1], 0.5 * (k[:-1] + k[1:]), k[-1:]], axis=0)
    ky = np.concatenate([k[:, :1], 0.5 * (k[:, :-1] + k[:, 1:]), k[:, -1:]], axis=1)
    px = np.concatenate([th[:1] ** 2, th[:-1] * th[1:], th[-1:] ** 2], axis=0)
    py = np.concatenate([th[:, :1] ** 2, th[:, :-1] * th[:, 1:], th[:, -1:] ** 2], axis=1)
    qx, qy = kx * gx * gx / px, ky * gy * gy / py
    heat = 0.5 * (qx[:-1] + qx[1:]) + 0.5 * (qy[:, :-1] + qy[:, 1:])
    visc = thermo.nu(th, params) * sym_grad_sq(g, state.u) / th
    mu = state.mu_flux if mu_source == "flux" and state.mu_flux is not None else state.mu
    diff = face_density(g, mu, "neumann") / th
    return heat + visc + diff


def dissipation_increment(state: State, params: PhysParams, dt: float, theta=None,
                          mu_source: str = "state") -> float:
    return dt * integrate(state.grid, entropy_production_density(state, params, theta, mu_source))


def ledger_row(state: State, params: PhysParams, prev: State | None = None,
               prev_row: "LedgerRow | None" = None, e0: float | None = None,
               mu_source: str = "state") -> LedgerRow:
    parts = energy_parts(state, params)
    energy = sum(parts.values())
    entropy = total_entropy(state, params)
    if prev is None:
        dis, slack = 0.0, 0.0
        e0 = energy if e0 is None else e0
    else:
        theta_prev = prev.theta if np.all(prev.theta > 0) else None
        if theta_prev is None or not np.all(state.theta > 0):
            dis = math.nan
        else:
            dis = dissipation_increment(state, params, state.dt, theta_prev, mu_source)
        s_prev = prev_row.entropy if prev_row is not None else total_entropy(prev, params)
        slack = entropy - s_prev - dis
    return LedgerRow(state.step, state.time, energy, entropy, total_mass(state), parts["kinetic"],
                     parts["interface"], parts["potential"], parts["thermal"], dis,
                     energy - e0, slack, float(state.theta.min()), div_norm(state.grid, state.u))


class Ledger:
    """Accumulates one :class:`LedgerRow` per accepted state."""

    def __init__(self, params: PhysParams, mu_source: str = "state"):
        if mu_source not in MU_SOURCES:
            raise ValueError(f"mu_source must be one of {MU_SOURCES}")
        self.params = params
        self.mu_source = mu_source
        self.rows: list[LedgerRow] = []
        self._prev: State | None = None

    def __call__(self, state: State) -> LedgerRow:
        if self._prev is None:
            row = ledger_row(state, self.params)
        else:
            row = ledger_row(state, self.params, self._prev, self.rows[-1],
                             e0=self.rows[0].energy, mu_source=self.mu_source)
        self.rows.append(row)
        self._prev = state
        return row


def build_ledger(states, params: PhysParams, mu_source: str = "state") -> list[LedgerRow]:
    led = Ledger(params, mu_source)
    for st in states:
        led(st)
    return led.rows


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LedgerRow.header())
        for r in rows:
            w.writerow(r.values())


# ---------------------------------------------------------------------------
# Certificates


@dataclass(frozen=True)
class CertTolerances:
    """``energy_rel`` bounds ``|E_n - E_0| / max(1, |E_0|)``; a step passes the
    entropy check when its slack is at least ``-(entropy_slack + entropy_c dt^2)``,
    the second term admitting the scheme's second-order consistency error;
    ``mass`` bounds ``|m_n - m_0| / (1 + |m_0|)``."""

    energy_rel: float = 1e-2
    entropy_slack: float = 1e-12
    entropy_c: float = 2000.0
    mass: float = 1e-10


@dataclass
class Certificate:
    name: str
    passed: bool
    worst_step: int
    worst_value: float


@dataclass
class CertificateReport:
    certificates: list[Certificate] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates)

    def __getitem__(self, name) -> Certificate:
        for c in self.certificates:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        return "\n".join(f"{c.name:10s} {'PASS' if c.passed else 'FAIL'}  worst step {c.worst_step}"
                         f"  value {c.worst_value:.6e}" for c in self.certificates)


def _worst(values, bad):
    """Index of the worst entry; NaN counts as worst."""
    v = np.asarray(values, dtype=float)
    key = np.where(np.isnan(v), np.inf, bad(v))
    k = int(np.argmax(key))
    return k, float(v[k])


def certify(rows, tol: CertTolerances = CertTolerances()) -> CertificateReport:
    """Pass/fail verdicts for energy drift, entropy slack, mass and positivity."""
    rep = CertificateReport()
    if not rows:
        return rep
    e0, m0 = rows[0].energy, rows[0].mass
    steps = [r.step for r in rows]

    drift = [r.energy_drift / max(1.0, abs(e0)) for r in rows]
    k, v = _worst(drift, np.abs)
    rep.certificates.append(Certificate("energy", bool(np.all(np.abs(drift) <= tol.energy_rel)),
                                        steps[k], v))

    slack = np.array([r.entropy_slack for r in rows], dtype=float)
    dts = np.diff([r.time for r in rows], prepend=rows[0].time)
    allowed = tol.entropy_slack + tol.entropy_c * dts**2
    k, v = _worst(slack / allowed, lambda s: -s)
    ok = bool(np.all(slack >= -allowed))
    rep.certificates.append(Certificate("entropy", ok, steps[k], float(slack[k])))

    mass = [(r.mass - m0) / (1.0 + abs(m0)) for r in rows]
    k, v = _worst(mass, np.abs)
    rep.certificates.append(Certificate("mass", bool(np.all(np.abs(mass) <= tol.mass)), steps[k], v))

    mins = [r.min_theta for r in rows]
    k, v = _worst(mins, lambda s: -s)
    rep.certificates.append(Certificate("positivity", bool(np.all(np.asarray(mins) > 0)), steps[k], v))
    return rep
