"""Relative energy, relative dissipation and a per-step Gronwall verifier.

All quantities are evaluated on a common grid from two trajectories ``q``
(the candidate) and ``qt`` (the reference).  Time derivatives of the
reference are backward differences between consecutive snapshots.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import thermo
from .errors import GridMismatch, TimeMismatch
from .grid import (Grid, advect, check_same_grid, face_density, grad, inner, integrate, l2,
                   laplace, linf, poisson_neumann, restrict, w1d_proxy)
from .ledger import sym_grad_sq
from .solver import (SchemeControls, State, capillary_force, chemical_potential, heating,
                     make_state, prepare, project, run, skew_convection, smooth_state)
from .thermo import PhysParams


# ---------------------------------------------------------------------------
# Dual norm


def dual_norm_surrogate(grid: Grid, f: np.ndarray, tol: float = 1e-12) -> float:
    """``|grad Phi|_{L1}`` for ``-lap Phi = f`` (Neumann, mean zero).

    Stand-in for the norm of ``f`` in the dual of ``W^{1,inf}``.  Raises
    :class:`IncompatibleRHS` if ``f`` does not have zero mean.
    """
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        return 0.0
    phi = poisson_neumann(grid, f, tol=tol)
    g = grad(grid, phi, "neumann")
    return integrate(grid, np.hypot(g[0], g[1]))


def _zero_mean(f):
    return f - f.mean()


def calibrate_M(grid: Grid, params: PhysParams, rng: np.random.Generator | None = None,
                samples: int = 100) -> float:
    """Twice the largest ``M`` needed for

        (lam/eps) |psi|^2 <= (eps/4) |grad psi|^2 + (M/2) |psi|_*^2

    over ``samples`` random smooth mean-zero fields ``psi``.  The weights are
    those with which the three terms enter the relative energy.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    eps, lam = params.eps, params.lam
    need = 0.0
    for _ in range(samples):
        psi = _zero_mean(thermo.smooth_random_field(grid, rng))
        s = dual_norm_surrogate(grid, psi)
        if s == 0.0:
            continue
        gap = lam / eps * integrate(grid, psi * psi) - 0.25 * eps * integrate(
            grid, face_density(grid, psi, "neumann"))
        need = max(need, 2.0 * gap / s**2)
    return 2.0 * need


@lru_cache(maxsize=16)
def _default_M(grid: Grid, params: PhysParams) -> float:
    return calibrate_M(grid, params)


def resolve_M(grid: Grid, params: PhysParams) -> float:
    """``params.M`` if set, else the calibrated default for ``grid``."""
    return _default_M(grid, params) if params.M is None else float(params.M)


# ---------------------------------------------------------------------------
# Relative energy and dissipation


def relative_energy_parts(q: State, qt: State, params: PhysParams, M: float | None = None
                          ) -> dict[str, float]:
    """The five nonnegative summands of ``R(q|qt)``."""
    g = q.grid
    check_same_grid(g, qt.grid)
    eps, lam = params.eps, params.lam
    dphi = q.phi - qt.phi
    M = resolve_M(g, params) if M is None else M
    bregman = thermo.G(q.phi, lam) - thermo.G(qt.phi, lam) - thermo.G_prime(qt.phi, lam) * dphi
    du = q.u - qt.u
    parts = {
        "interface": 0.5 * eps * integrate(g, face_density(g, dphi, "neumann")),
        "potential": integrate(g, bregman) / eps,
        "kinetic": 0.5 * integrate(g, du * du),
        "thermal": integrate(g, thermo.Lambda(q.theta, qt.theta, params.delta)),
        "dual": 0.0,
    }
    if M and np.any(dphi):
        parts["dual"] = 0.5 * M * dual_norm_surrogate(g, _zero_mean(dphi)) ** 2
    return parts


def relative_energy(q: State, qt: State, params: PhysParams, M: float | None = None) -> float:
    """``R(q|qt)``; zero exactly when the states coincide."""
    return sum(relative_energy_parts(q, qt, params, M).values())


def _sym(grid, u):
    gu = grad(grid, u[0], "dirichlet0")
    gv = grad(grid, u[1], "dirichlet0")
    off = 0.5 * (gu[1] + gv[0])
    return gu[0], off, gv[1]


def relative_dissipation_density(q: State, qt: State, params: PhysParams,
                                 kappa1_factor: float = 1.0) -> np.ndarray:
    """Pointwise integrand of the relative dissipation.

    ``kappa1_factor = 2`` selects the variant with ``2 kappa1/beta^2``.
    """
    g = q.grid
    check_same_grid(g, qt.grid)
    th, tt = q.theta, qt.theta
    out = np.zeros(g.shape)
    if params.kappa0:
        d = grad(g, np.log(th) - np.log(tt), "neumann")
        out += params.kappa0 * tt * (d[0] ** 2 + d[1] ** 2)
    a, b = np.sqrt(tt / th), np.sqrt(th / tt)
    s, st = _sym(g, q.u), _sym(g, qt.u)
    dxx, dxy, dyy = (a * s[k] - b * st[k] for k in range(3))
    out += 0.5 * thermo.nu(th, params) * (dxx**2 + 2 * dxy**2 + dyy**2)
    if params.kappa1:
        h = 0.5 * params.beta
        d = grad(g, th**h - tt**h, "neumann")
        out += kappa1_factor * params.kappa1 / params.beta**2 * tt * (d[0] ** 2 + d[1] ** 2)
    gm, gmt = grad(g, q.mu, "neumann"), grad(g, qt.mu, "neumann")
    out += (a * gm[0] - b * gmt[0]) ** 2 + (a * gm[1] - b * gmt[1]) ** 2
    return out


def relative_dissipation_increment(q: State, qt: State, params: PhysParams, dt: float,
                                   kappa1_factor: float = 1.0) -> float:
    return dt * integrate(q.grid, relative_dissipation_density(q, qt, params, kappa1_factor))


# ---------------------------------------------------------------------------
# Regularity weight and residual operator


def _mu_tilde(st: State, params: PhysParams) -> np.ndarray:
    return chemical_potential(st.grid, st.phi, st.theta, params)


def regularity_terms(qt: State, qt_prev: State, params: PhysParams) -> dict[str, float]:
    """The norms that make up the regularity weight ``K`` (without the constant)."""
    g = qt.grid
    check_same_grid(g, qt_prev.grid)
    dt = qt.time - qt_prev.time
    if not dt > 0:
        raise TimeMismatch("regularity weight needs increasing snapshot times")
    eps = params.eps
    phi, th, u = qt.phi, qt.theta, qt.u
    mu = _mu_tilde(qt, params)
    gmu = grad(g, mu, "neumann")
    s = _sym(g, u)
    out = {
        "transport_phi": linf(g, (phi - qt_prev.phi) / dt + advect(g, u, phi)),
        "interface_force": w1d_proxy(g, eps * laplace(g, phi) - thermo.F_prime(phi) / eps),
        "transport_log_theta": linf(g, (np.log(th) - np.log(qt_prev.theta)) / dt
                                    + advect(g, u, np.log(th))),
        "grad_mu_inf": linf(g, np.hypot(gmu[0], gmu[1])) ** 2,
        "sym_grad_u": float(np.max(s[0] ** 2 + 2 * s[1] ** 2 + s[2] ** 2)),
        "lap_theta": params.kappa0 * linf(g, laplace(g, th)),
        "theta_beta": 0.0,
        "grad_mu_l2": l2(g, gmu),
    }
    if params.kappa1:
        tb = th ** (0.5 * params.beta)
        gtb = grad(g, tb, "neumann")
        out["theta_beta"] = params.kappa1 * (linf(g, np.hypot(gtb[0], gtb[1])) ** 2
                                             + linf(g, laplace(g, tb)))
    return out


def regularity_weight(qt: State, qt_prev: State, params: PhysParams, k_scale: float = 1.0) -> float:
    """``K(qt) = k_scale * (sum of regularity norms)``."""
    return k_scale * sum(regularity_terms(qt, qt_prev, params).values())


def operator_A_residual(qt: State, qt_prev: State, params: PhysParams, viscous: str = "full"):
    """Residuals of the momentum, entropy and phase equations for the reference.

    Spatial operators are the ones the solver uses.  Row 1 is returned after
    the discrete Leray projection (it is only ever paired with divergence
    free fields).  ``viscous="full"`` uses ``nu |grad u|^2`` in the entropy row,
    matching the viscous operator ``div(nu grad u)`` of row 1; ``"sym"`` uses
    ``nu |(grad u)_sym|^2``.
    """
    if viscous not in ("full", "sym"):
        raise ValueError("viscous must be 'full' or 'sym'")
    g = qt.grid
    check_same_grid(g, qt_prev.grid)
    dt = qt.time - qt_prev.time
    if not dt > 0:
        raise TimeMismatch("residual needs increasing snapshot times")
    phi, th, u = qt.phi, qt.theta, qt.u
    mu = _mu_tilde(qt, params)
    nu = thermo.nu(th, params)

    r1 = (u - qt_prev.u) / dt + skew_convection(g, u) - capillary_force(g, phi, mu, th)
    for k in range(2):
        r1[k] -= laplace(g, u[k], "dirichlet0", coef=nu)
    r1, _ = project(g, r1)

    s_new, s_old = np.log(th) + phi, np.log(qt_prev.theta) + qt_prev.phi
    src = heating(g, u, mu, th, params)
    if viscous == "sym":
        src = src - face_density(g, u[0], "dirichlet0", nu) - face_density(g, u[1], "dirichlet0", nu)
        src = src + nu * sym_grad_sq(g, u)
    r2 = (-(s_new - s_old) / dt - advect(g, u, s_new)
          + laplace(g, th, "neumann", coef=thermo.kappa_gamma(th, params)) / th + src / th)

    r3 = (phi - qt_prev.phi) / dt + advect(g, u, phi) - laplace(g, mu)
    return r1, r2, r3


def residual_norms(traj: list[State], params: PhysParams, viscous: str = "full") -> np.ndarray:
    """Time-averaged discrete L2 norms of the three residual rows, shape ``(3,)``."""
    acc = np.zeros(3)
    total = 0.0
    for prev, cur in zip(traj[:-1], traj[1:]):
        dt = cur.time - prev.time
        rows = operator_A_residual(cur, prev, params, viscous)
        acc += dt * np.array([l2(cur.grid, r) ** 2 for r in rows])
        total += dt
    return np.sqrt(acc / total)


# ---------------------------------------------------------------------------
# Gronwall verifier


@dataclass
class RelativeEnergyReport:
    time: np.ndarray
    R_value: np.ndarray
    W_increment: np.ndarray
    K_weight: np.ndarray
    A_pairing: np.ndarray
    dual_norm: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    k_scale: float = 1.0
    k_min: float = math.nan
    M: float = 0.0
    extra: dict = field(default_factory=dict)

    FIELDS = ("time", "R_value", "W_increment", "K_weight", "A_pairing", "dual_norm", "lhs",
              "rhs", "slack")

    @property
    def max_R(self) -> float:
        return float(np.max(self.R_value))

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slack))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for row in zip(*(getattr(self, n) for n in self.FIELDS)):
                w.writerow([repr(float(v)) for v in row])


def _check_trajectories(q, qt):
    if len(q) != len(qt):
        raise TimeMismatch(f"trajectories have {len(q)} and {len(qt)} snapshots")
    if len(q) < 2:
        raise TimeMismatch("need at least two snapshots")
    for a, b in zip(q, qt):
        check_same_grid(a.grid, b.grid)
        if abs(a.time - b.time) > 1e-12 * max(1.0, abs(a.time)):
            raise TimeMismatch(f"time levels differ: {a.time!r} vs {b.time!r}")


def _assemble(R, W, P, Kraw, dts, k):
    """LHS and RHS of the discrete inequality for weight ``k * Kraw``.

    ``int K`` is accumulated with the trapezoidal rule; the contribution of
    step ``m`` is weighted at the step midpoint.
    """
    n = len(R)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dts * (Kraw[:-1] + Kraw[1:]))]) * k
    mid = 0.5 * (cum[:-1] + cum[1:])
    lhs, rhs = np.empty(n), np.empty(n)
    lhs[0], rhs[0] = R[0], R[0]
    for i in range(1, n):
        e = np.exp(cum[i] - mid[:i])
        lhs[i] = R[i] + np.dot(W[1:i + 1], e)
        rhs[i] = R[0] * np.exp(cum[i]) + np.dot(P[1:i + 1], e)
    return lhs, rhs


def minimal_k_scale(R, W, P, Kraw, dts, k_max: float = 1e6, rtol: float = 1e-3) -> float:
    """Smallest ``k >= 0`` (to ``rtol``) with all slacks nonnegative.

    Returns ``inf`` if no ``k`` up to ``k_max`` works; ``k_max`` is lowered so
    that ``exp(k int K)`` stays finite.
    """
    scale = max(np.max(np.abs(R)), np.sum(np.abs(W)), np.sum(np.abs(P)), 1e-300)
    floor = -1e-13 * scale
    total = float(np.sum(0.5 * dts * (Kraw[:-1] + Kraw[1:])))
    if total > 0:
        k_max = min(k_max, 600.0 / total)

    def ok(k):
        lhs, rhs = _assemble(R, W, P, Kraw, dts, k)
        return bool(np.all(rhs - lhs >= floor))

    if ok(0.0):
        return 0.0
    if not ok(k_max):
        return math.inf
    lo, hi = 0.0, k_max
    for k in np.logspace(-4, math.log10(k_max), 41):
        if ok(k):
            hi = k
            break
        lo = k
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def gronwall_verify(q: list[State], qt: list[State], params: PhysParams, k_scale: float = 1.0,
                    M: float | None = None, viscous: str = "full",
                    kappa1_factor: float = 1.0) -> RelativeEnergyReport:
    """Check the relative energy inequality step by step.

    ``q`` and ``qt`` are trajectories on a common grid and common time levels.
    Returns the per-step terms, the slack at ``k_scale`` and the smallest
    ``k_scale`` for which every slack is nonnegative.
    """
    _check_trajectories(q, qt)
    if params.delta != 0:
        raise ValueError("the relative energy inequality is stated for delta = 0")
    g = q[0].grid
    M = resolve_M(g, params) if M is None else M
    n = len(q)
    t = np.array([s.time for s in q])
    dts = np.diff(t)
    R = np.array([relative_energy(a, b, params, M) for a, b in zip(q, qt)])
    W = np.zeros(n)
    P = np.zeros(n)
    Kraw = np.zeros(n)
    dual = np.zeros(n)
    for i in range(1, n):
        a, b, b0 = q[i], qt[i], qt[i - 1]
        W[i] = relative_dissipation_increment(a, b, params, dts[i - 1], kappa1_factor)
        Kraw[i] = regularity_weight(b, b0, params)
        r1, r2, r3 = operator_A_residual(b, b0, params, viscous)
        mu_a = chemical_potential(g, a.phi, a.theta, params)
        pair = (inner(g, r1, b.u - a.u) + inner(g, r2, b.theta - a.theta)
                + inner(g, r3, _mu_tilde(b, params) - mu_a))
        dphi = a.phi - b.phi
        dual[i] = dual_norm_surrogate(g, _zero_mean(r3))
        if M and np.any(dphi):
            pair += M * dual_norm_surrogate(g, _zero_mean(dphi)) * dual[i]
        P[i] = dts[i - 1] * pair
    Kraw[0] = Kraw[1]
    lhs, rhs = _assemble(R, W, P, Kraw, dts, k_scale)
    k_min = minimal_k_scale(R, W, P, Kraw, dts)
    return RelativeEnergyReport(t, R, W, k_scale * Kraw, P, dual, lhs, rhs, rhs - lhs,
                                k_scale=k_scale, k_min=k_min, M=M)


# ---------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolution ladder for trajectory comparisons.

    Level ``r`` uses an ``(r*nx) x (r*ny)`` grid and step ``dt/r``; results are
    sampled at multiples of ``dt`` and block-averaged onto the ``nx x ny`` grid.
    Initial data is built once on the finest grid and restricted, so every
    level starts from the same cell averages.
    """

    nx: int = 16
    ny: int = 16
    dt: float = 1e-3
    t_end: float = 0.02
    params: PhysParams = PhysParams()
    a_phi: float = 0.5
    a_theta: float = 0.1
    a_u: float = 0.1
    lx: float = 1.0
    ly: float = 1.0
    t_prep: float = 0.0
    dt_prep: float = 1e-4


def initial_state(config: ExperimentConfig, level: int) -> State:
    """Smooth data on the level-``level`` grid, relaxed for ``t_prep`` if positive."""
    c = config
    return _initial_state(c.nx * level, c.ny * level, c.lx, c.ly, c.params, c.a_phi, c.a_theta,
                          c.a_u, c.t_prep, c.dt_prep).copy()


@lru_cache(maxsize=8)
def _initial_state(nx, ny, lx, ly, params, a_phi, a_theta, a_u, t_prep, dt_prep):
    st = smooth_state(Grid(nx, ny, lx, ly), params, a_phi, a_theta, a_u)
    return prepare(st, params, t_prep, dt_prep)


def _restrict(st: State, factor: int, params: PhysParams) -> State:
    if factor == 1:
        return st.copy()
    g = st.grid
    coarse = Grid(g.nx // factor, g.ny // factor, g.lx, g.ly)
    out = make_state(coarse, restrict(st.phi, factor), restrict(st.theta, factor),
                     restrict(st.u, factor), params, st.time)
    out.step, out.dt = st.step, st.dt
    return out


def level_trajectory(config: ExperimentConfig, level: int, finest: int | None = None) -> list[State]:
    """Run ladder level ``level`` and return snapshots on the base grid at base time levels.

    The initial data is that of level ``finest`` (default ``level``) restricted.
    """
    finest = level if finest is None else finest
    if finest % level:
        raise GridMismatch(f"level {level} does not divide {finest}")
    p = config.params
    init = _restrict(initial_state(config, finest), finest // level, p)
    ctrl = SchemeControls(dt=config.dt / level, t_end=config.t_end)
    nsteps = int(round(config.t_end / config.dt))
    base = Grid(config.nx, config.ny, config.lx, config.ly)
    return align_trajectory(run(init, p, ctrl), base, config.dt * np.arange(nsteps + 1), p)


def align_trajectory(traj: list[State], grid: Grid, times, params: PhysParams) -> list[State]:
    """Snapshots of ``traj`` at ``times``, block-averaged onto ``grid``.

    Raises :class:`GridMismatch` unless ``grid`` divides the trajectory grid
    by an integer factor and :class:`TimeMismatch` if a time level is missing.
    """
    g = traj[0].grid
    fx, fy = g.nx // grid.nx, g.ny // grid.ny
    if (fx != fy or fx < 1 or fx * grid.nx != g.nx or fy * grid.ny != g.ny
            or g.lx != grid.lx or g.ly != grid.ly):
        raise GridMismatch(f"cannot restrict {g.nx}x{g.ny} onto {grid.nx}x{grid.ny}")
    have = np.array([s.time for s in traj])
    out = []
    for t in times:
        k = int(np.argmin(np.abs(have - t)))
        if abs(have[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise TimeMismatch(f"no snapshot at t={t!r}")
        out.append(_restrict(traj[k], fx, params))
    return out


def weak_strong_experiment(config: ExperimentConfig, refine_factor: int, **kw) -> RelativeEnergyReport:
    """Compare ladder levels ``max(1, r/2)`` (candidate) and ``r`` (reference).

    Both start from the level-``r`` initial data, so ``R(0) = 0``; ``r = 1``
    compares a run with itself.  Keyword arguments go to :func:`gronwall_verify`.
    """
    r = int(refine_factor)
    if r < 1 or (r > 1 and r % 2):
        raise ValueError("refine_factor must be 1 or even")
    fine = level_trajectory(config, r)
    coarse = fine if r == 1 else level_trajectory(config, max(1, r // 2), finest=r)
    rep = gronwall_verify(coarse, fine, config.params, **kw)
    rep.extra["refine_factor"] = r
    return rep


def perturbed_experiment(config: ExperimentConfig, amplitude: float = 0.05, level: int = 1,
                         **kw) -> RelativeEnergyReport:
    """Same resolution, candidate started from mass-preserving perturbed data.

    The perturbation ``amplitude * cos(pi x) cos(pi y)`` of ``phi`` has zero
    mean, so ``R(0) > 0`` while the dual-norm term stays defined.
    """
    p = config.params
    base = _restrict(initial_state(config, level), level, p) if level > 1 else initial_state(config, 1)
    g = base.grid
    x, y = g.centers()
    bump = amplitude * np.cos(np.pi * x / g.lx) * np.cos(np.pi * y / g.ly)
    pert = make_state(g, base.phi + bump - bump.mean(), base.theta, base.u, p)
    ctrl = SchemeControls(dt=config.dt, t_end=config.t_end)
    ref, cand = run(base, p, ctrl), run(pert, p, ctrl)
    rep = gronwall_verify(cand, ref, p, **kw)
    rep.extra["amplitude"] = amplitude
    return rep
