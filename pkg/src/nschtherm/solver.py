"""Split time stepping for the non-isothermal Navier--Stokes--Cahn--Hilliard system.

One step advances momentum, then the phase field, then the temperature:

1. momentum: implicit viscosity with ``nu(theta^n)``, explicit skew-symmetric
   convection and capillary force, followed by a discrete Leray projection;
2. phase: linearised convex splitting for the coupled ``(phi, mu)`` system,
   conservative transport ``div(u phi)``;
3. heat: implicit diffusion, upwind transport and ``theta lap(mu)`` reaction,
   explicit dissipative heating.

Every sub-step solves for the increment over the old level, so a state whose
residuals vanish is reproduced bit for bit.  If the temperature would lose
positivity the whole composite step is retried with half the step size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import thermo
from .errors import NonConvergence, PositivityLoss
from .grid import (Grid, div, face_density, grad, grad_matrices, l2, laplace, laplace_matrix,
                   upwind_matrix)
from .thermo import PhysParams

log = logging.getLogger(__name__)


@dataclass
class State:
    grid: Grid
    phi: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    time: float = 0.0
    step: int = 0
    dt: float = 0.0  # size of the step that produced this state
    # chemical potential of the phase solve that produced this state; it
    # drives the phase flux and the heating, while ``mu`` is always
    # ``chemical_potential(phi, theta)``
    mu_flux: np.ndarray | None = None

    def copy(self) -> "State":
        return replace(self, phi=self.phi.copy(), theta=self.theta.copy(), u=self.u.copy(),
                       mu=self.mu.copy(), p=self.p.copy(),
                       mu_flux=None if self.mu_flux is None else self.mu_flux.copy())


@dataclass(frozen=True)
class SchemeControls:
    """Time-stepping controls.

    ``freeze_velocity`` keeps ``u`` at its initial value and ``freeze_theta``
    skips the heat step; together they give the isothermal Cahn--Hilliard
    sub-case.  ``incremental_pressure=False`` selects the non-incremental
    projection (no old pressure in the predictor).
    """

    dt: float = 1e-3
    t_end: float = 0.1
    linear_tol: float = 1e-12
    div_tol: float = 1e-8
    max_positivity_retries: int = 8
    snapshot_every: int = 0
    seed: int = 0
    freeze_velocity: bool = False
    freeze_theta: bool = False
    incremental_pressure: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")


def make_state(grid: Grid, phi, theta, u=None, params: PhysParams | None = None, time=0.0) -> State:
    """Assemble a state; ``mu`` is computed, ``u`` defaults to zero."""
    params = params or PhysParams()
    phi = np.asarray(phi, dtype=float) * np.ones(grid.shape)
    theta = np.asarray(theta, dtype=float) * np.ones(grid.shape)
    u = np.zeros((2,) + grid.shape) if u is None else np.asarray(u, dtype=float).copy()
    st = State(grid, phi, theta, u, np.zeros(grid.shape), np.zeros(grid.shape), time)
    st.mu = chemical_potential(grid, phi, theta, params)
    return st


def chemical_potential(grid: Grid, phi, theta, params: PhysParams) -> np.ndarray:
    """``mu = -eps lap(phi) + F'(phi)/eps - theta`` with Neumann data."""
    eps = params.eps
    return -eps * laplace(grid, phi, "neumann") + thermo.F_prime(phi) / eps - theta


# ---------------------------------------------------------------------------
# Projection


@lru_cache(maxsize=16)
def _projection_factor(grid: Grid):
    gx, gy = grad_matrices(grid, "neumann")
    a = (gx.T @ gx + gy.T @ gy).tolil()
    # the operator annihilates constants; pin one value (that equation is redundant)
    a[0, :] = 0.0
    a[0, 0] = 1.0
    return spla.splu(a.tocsc())


def project(grid: Grid, v: np.ndarray):
    """Discrete Leray projection: ``v - grad(q)`` with ``div(v - grad q) = 0``.

    Uses the same collocated gradient/divergence pair as the rest of the
    scheme, so the result is divergence free to solver round-off.  Returns the
    projected field and the mean-zero potential ``q``.
    """
    rhs = -div(grid, v).ravel()
    rhs[0] = 0.0
    q = _projection_factor(grid).solve(rhs).reshape(grid.shape)
    q -= q.mean()
    return v - grad(grid, q, "neumann"), q


def div_norm(grid: Grid, u: np.ndarray) -> float:
    return l2(grid, div(grid, u))


# ---------------------------------------------------------------------------
# Sub-steps


def skew_convection(grid: Grid, u: np.ndarray) -> np.ndarray:
    """``(1/2)[(u.grad)u + div(u (x) u)]``, energy neutral against ``u``."""
    out = np.empty_like(u)
    for k in range(2):
        g = grad(grid, u[k], "neumann")
        out[k] = 0.5 * (u[0] * g[0] + u[1] * g[1] + div(grid, u * u[k]))
    return out


def capillary_force(grid: Grid, phi, mu, theta) -> np.ndarray:
    """``-phi grad(mu + theta)``: equals ``(mu + theta) grad(phi)`` up to a gradient
    and is the exact adjoint of the conservative transport used for ``phi``."""
    return -phi * grad(grid, mu + theta, "neumann")


def step_momentum(state: State, params: PhysParams, dt: float, controls: SchemeControls | None = None):
    """Return ``(u_new, p_new)`` after the viscous predictor and projection.

    With ``controls.incremental_pressure`` (the default) the predictor carries
    ``-grad p^n`` and the projection only removes the pressure increment, so
    the viscous operator acts on a field that differs from ``u^{n+1}`` by
    ``O(dt^2)`` instead of ``dt grad p^{n+1}``.
    """
    grid = state.grid
    if controls is not None and controls.freeze_velocity:
        return state.u.copy(), state.p.copy()
    incremental = controls.incremental_pressure if controls is not None else True
    nu = thermo.nu(state.theta, params)
    a_nu = laplace_matrix(grid, "dirichlet0", coef=nu)
    rhs = capillary_force(grid, state.phi, state.mu, state.theta) - skew_convection(grid, state.u)
    if incremental:
        rhs = rhs - grad(grid, state.p, "neumann")
    mat = (sp.identity(grid.size, format="csc") / dt - a_nu).tocsc()
    lu = spla.splu(mat)
    u_star = np.empty_like(state.u)
    for k in range(2):
        r = rhs[k].ravel() + a_nu @ state.u[k].ravel()
        u_star[k] = state.u[k] + lu.solve(r).reshape(grid.shape)
    u_new, q = project(grid, u_star)
    div_tol = controls.div_tol if controls is not None else 1e-8
    dn = div_norm(grid, u_new)
    if dn > div_tol:
        raise NonConvergence(f"projection left |div u| = {dn:.3e} > {div_tol:g}")
    return u_new, (state.p + q / dt) if incremental else q / dt


class _PhasePreconditioner:
    """LU of the phase operator with the convex curvature frozen at a constant."""

    def __init__(self, grid, dt, eps, bbar):
        n = grid.size
        lap = laplace_matrix(grid, "neumann")
        ident = sp.identity(n, format="csc")
        self.key = (grid, dt, eps, bbar)
        mat = sp.bmat([[ident, -dt * lap], [eps * lap - (bbar / eps) * ident, ident]], format="csc")
        self.lu = spla.splu(mat)


@lru_cache(maxsize=8)
def _phase_preconditioner(grid, dt, eps, bbar):
    return _PhasePreconditioner(grid, dt, eps, bbar)


def step_phase(state: State, u: np.ndarray, params: PhysParams, dt: float,
               controls: SchemeControls | None = None):
    """Return ``(phi_new, mu_new)``.

    Linearised convex splitting: with ``b = G''(phi^n)``,

        phi' - phi^n + dt div(u phi^n) = dt lap(mu')
        mu' = -eps lap(phi') + (G'(phi^n) + b (phi' - phi^n) - 2 lam phi^n)/eps - theta^n

    The increment of ``phi`` is recovered from the first row, so mass is
    conserved to round-off whatever the linear tolerance.
    """
    grid = state.grid
    eps, lam = params.eps, params.lam
    tol = controls.linear_tol if controls is not None else 1e-12
    n = grid.size
    lap = laplace_matrix(grid, "neumann")
    b = thermo.G_second(state.phi, lam).ravel()
    r1 = dt * (laplace(grid, state.mu) - div(grid, u * state.phi)).ravel()
    r2 = (chemical_potential(grid, state.phi, state.theta, params) - state.mu).ravel()
    rhs = np.concatenate([r1, r2])
    if not np.any(rhs):
        return state.phi.copy(), state.mu.copy()

    ident = sp.identity(n, format="csr")
    mat = sp.bmat([[ident, -dt * lap], [eps * lap - sp.diags(b / eps), ident]], format="csr")
    # one significant digit of the mean curvature keys the cached preconditioner
    bbar = float(f"{np.mean(b):.1g}")
    prec = _phase_preconditioner(grid, dt, eps, bbar)
    m = spla.LinearOperator(mat.shape, prec.lu.solve)
    x, info = spla.gmres(mat, rhs, rtol=tol, atol=0.0, M=m, restart=60, maxiter=20)
    if info != 0:
        x = spla.splu(mat.tocsc()).solve(rhs)
    dmu = x[n:]
    dphi = r1 + dt * (lap @ dmu)
    return state.phi + dphi.reshape(grid.shape), state.mu + dmu.reshape(grid.shape)


def heating(grid: Grid, u, mu, theta_old, params: PhysParams) -> np.ndarray:
    """Dissipative heat source ``nu |grad u|^2 + |grad mu|^2 + gamma/theta^3``.

    The gradient terms are face densities of the viscous and diffusion
    operators, so their integrals equal the energy those operators remove.
    """
    nu = thermo.nu(theta_old, params)
    src = face_density(grid, u[0], "dirichlet0", nu) + face_density(grid, u[1], "dirichlet0", nu)
    src = src + face_density(grid, mu, "neumann")
    if params.gamma:
        src = src + params.gamma / theta_old**3
    return src


def step_heat(state: State, u, mu, params: PhysParams, dt: float) -> np.ndarray:
    """Return ``theta_new`` for velocity ``u`` and chemical potential ``mu`` of the new level.

    Raises:
        PositivityLoss: if ``dt lap(mu)^- >= c_H`` somewhere (sign structure
            lost) or the solution is not strictly positive.
    """
    grid = state.grid
    th = state.theta
    c = thermo.heat_capacity(th, params.delta)
    lap_mu = laplace(grid, mu)
    if np.any(c / dt + lap_mu <= 0):
        raise PositivityLoss("heat operator lost its M-matrix structure")
    kap = thermo.kappa_gamma(th, params)
    a_k = laplace_matrix(grid, "neumann", coef=kap)
    up = upwind_matrix(grid, u)
    cdiag = sp.diags(c.ravel())
    a_rest = cdiag @ up - a_k + sp.diags(lap_mu.ravel())
    src = heating(grid, u, mu, th, params).ravel()
    rhs = src - a_rest @ th.ravel()
    if not np.any(rhs):
        return th.copy()
    mat = (sp.diags((c / dt).ravel()) + a_rest).tocsc()
    new = th + spla.splu(mat).solve(rhs).reshape(grid.shape)
    if not np.all(new > 0):
        raise PositivityLoss(f"min theta = {new.min():.3e}")
    return new


def _composite(state: State, params: PhysParams, controls: SchemeControls, dt: float) -> State:
    u, p = step_momentum(state, params, dt, controls)
    phi, mu = step_phase(state, u, params, dt, controls)
    theta = state.theta.copy() if controls.freeze_theta else step_heat(state, u, mu, params, dt)
    new = State(state.grid, phi, theta, u, mu, p, state.time + dt, state.step + 1, dt, mu_flux=mu)
    new.mu = chemical_potential(state.grid, phi, theta, params)
    return new


def step(state: State, params: PhysParams, controls: SchemeControls, dt: float | None = None) -> State:
    """One composite step, halving ``dt`` on positivity loss (at most
    ``controls.max_positivity_retries`` times)."""
    dt = controls.dt if dt is None else dt
    for attempt in range(controls.max_positivity_retries + 1):
        try:
            return _composite(state, params, controls, dt)
        except PositivityLoss as exc:
            log.info("step %d: %s; retrying with dt=%g", state.step, exc, dt / 2)
            dt /= 2
    raise PositivityLoss(f"step {state.step}: positivity not recovered after "
                         f"{controls.max_positivity_retries} halvings")


def iterate(state: State, params: PhysParams, controls: SchemeControls) -> Iterator[State]:
    """Yield the initial state and every accepted state up to ``controls.t_end``."""
    yield state
    t_end = controls.t_end
    # guard against accumulated round-off in the final partial step
    while state.time < t_end - 1e-12 * max(1.0, t_end):
        dt = min(controls.dt, t_end - state.time)
        try:
            state = step(state, params, controls, dt)
        except (PositivityLoss, NonConvergence) as exc:
            exc.args = (f"at step {state.step + 1}: {exc}",)
            raise
        yield state


def run(state: State, params: PhysParams, controls: SchemeControls,
        callback: Callable[[State], None] | None = None, keep: bool = True) -> list[State]:
    """Advance to ``t_end``; returns every state (or first and last if ``keep`` is false)."""
    out = []
    last = None
    for st in iterate(state, params, controls):
        if callback is not None:
            callback(st)
        if keep or not out:
            out.append(st)
        last = st
    if not keep and last is not out[0]:
        out.append(last)
    return out


# ---------------------------------------------------------------------------
# Initial data


def uniform_state(grid: Grid, params: PhysParams, phi=1.0, theta=1.0) -> State:
    return make_state(grid, phi, theta, params=params)


def random_phi_state(grid: Grid, params: PhysParams, rng: np.random.Generator, amplitude=0.05,
                     mean=0.0, theta=1.0) -> State:
    """Spinodal initial data: ``phi`` uniform in ``mean +- amplitude``, fluid at rest."""
    phi = mean + rng.uniform(-amplitude, amplitude, grid.shape)
    return make_state(grid, phi, theta, params=params)


def smooth_state(grid: Grid, params: PhysParams, a_phi=0.5, a_theta=0.1, a_u=0.1, theta0=1.0,
                 phi0=0.0) -> State:
    """Smooth data built from cosines plus a projected stream-function flow.

    The velocity comes from ``psi = a_u sin^2(pi x) sin^2(pi y)`` (scaled to the
    box), which vanishes with its gradient on the walls, and is then made
    discretely divergence free.
    """
    x, y = grid.centers()
    sx, sy = np.pi * x / grid.lx, np.pi * y / grid.ly
    phi = phi0 + a_phi * np.cos(sx) * np.cos(sy) + 0.5 * a_phi * np.cos(2 * sx)
    theta = theta0 * (1.0 + a_theta * np.cos(sx) * np.cos(2 * sy))
    ux = a_u * 2 * np.pi / grid.ly * np.sin(sx) ** 2 * np.sin(sy) * np.cos(sy)
    uy = -a_u * 2 * np.pi / grid.lx * np.sin(sx) * np.cos(sx) * np.sin(sy) ** 2
    u, _ = project(grid, np.stack([ux, uy]))
    return make_state(grid, phi, theta, u, params)


def prepare(state: State, params: PhysParams, t_prep=0.02, dt=1e-4) -> State:
    """Relax ``state`` for ``t_prep`` with a small step and reset the clock.

    Cosine data sits off the slow manifold: the cubic nonlinearity feeds
    high wavenumbers whose Cahn-Hilliard relaxation rate far exceeds ``1/dt``.
    A short fine-step run damps that layer so per-step error constants
    measured afterwards reflect the smooth dynamics.
    """
    if t_prep <= 0:
        return state.copy()
    last = run(state, params, SchemeControls(dt=dt, t_end=t_prep), keep=False)[-1]
    out = last.copy()
    out.time, out.step, out.dt, out.mu_flux = 0.0, 0, 0.0, None
    return out


def restrict_state(state: State, factor: int, params: PhysParams) -> State:
    """Block-average a state onto a grid ``factor`` times coarser."""
    from .grid import restrict

    g = state.grid
    coarse = Grid(g.nx // factor, g.ny // factor, g.lx, g.ly)
    st = State(coarse, restrict(state.phi, factor), restrict(state.theta, factor),
               restrict(state.u, factor), np.zeros(coarse.shape), restrict(state.p, factor),
               state.time, state.step, state.dt)
    st.mu = restrict(state.mu, factor)
    return st
