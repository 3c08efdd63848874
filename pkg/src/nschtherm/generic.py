"""Dense discrete Poisson and dissipative brackets on small grids.

The state is ``q = (s, phi, u)`` with entropy density ``s``; the temperature
is the derived quantity ``theta = (f')^{-1}(phi - s)``.  Vectors are flattened
block-wise as ``[s, phi, u_x, u_y]`` with C-order cells.  Matrices act on
nodal vectors; the pairing is ``<a, b> = cell_area * a.b``.

The velocity blocks of both brackets are sandwiched by the discrete Leray
projector, so the brackets act on the discretely divergence-free subspace.

The dissipative bracket is assembled as ``B^T W B``: ``B`` maps a test
vector ``eta`` to the three generalised fluxes

    heat      grad(eta_1) - eta_1 grad(log theta)          weight kappa(theta)
    phase     grad(eta_2) - eta_1 grad(mu) / theta          weight theta
    viscous   sym grad(eta_3) - eta_1 sym grad(u) / theta   weight nu(theta) theta

Each flux vanishes on ``DE = (theta, mu, u)`` and reproduces the prescribed
``K DS``.  Heat and phase fluxes live on interior faces; the viscous flux is
cell centred.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import thermo
from .errors import BudgetExceeded, DomainError
from .grid import Grid, face_operators, grad_matrices, div_matrices, laplace
from .solver import State, chemical_potential, project
from .thermo import PhysParams

MAX_CELLS = 256
THETA_FLOOR = 1e-12


@dataclass
class GenericState:
    grid: Grid
    s: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    delta: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        y = self.phi - self.s
        if self.delta > 0:
            # the power-law inverse needs f' < 0; clamp at the floor temperature
            y = np.minimum(y, thermo.f_prime(THETA_FLOOR, self.delta))
        th = thermo.inv_f_prime(y, self.delta)
        if not np.all(np.isfinite(th) & (th > 0)):
            raise DomainError("derived temperature is not positive")
        return th

    @classmethod
    def from_state(cls, st: State, params: PhysParams) -> "GenericState":
        s = -thermo.f_prime(st.theta, params.delta) + st.phi
        return cls(st.grid, s, st.phi.copy(), st.u.copy(), params.delta)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.s.ravel(), self.phi.ravel(), self.u[0].ravel(),
                               self.u[1].ravel()])


def _check_budget(grid: Grid):
    if grid.size > MAX_CELLS:
        raise BudgetExceeded(f"dense brackets are limited to {MAX_CELLS} cells, got {grid.size}")


# ---------------------------------------------------------------------------
# Energy and entropy gradients


def gradient_E(q: GenericState, params: PhysParams) -> np.ndarray:
    """``DE = (theta, mu, u)`` with ``mu = -eps lap(phi) + F'(phi)/eps - theta``."""
    th = q.theta
    mu = chemical_potential(q.grid, q.phi, th, params)
    return np.concatenate([th.ravel(), mu.ravel(), q.u[0].ravel(), q.u[1].ravel()])


def gradient_S(q: GenericState) -> np.ndarray:
    """``DS = (1, 0, 0)``."""
    n = q.grid.size
    return np.concatenate([np.ones(n), np.zeros(3 * n)])


# ---------------------------------------------------------------------------
# Assembly helpers


@lru_cache(maxsize=8)
def leray_matrix(grid: Grid) -> np.ndarray:
    """Dense orthogonal projector onto discretely divergence-free fields, ``(2n, 2n)``."""
    _check_budget(grid)
    gx, gy = grad_matrices(grid, "neumann")
    g = sp.vstack([gx, gy]).toarray()
    a = g.T @ g
    p = np.eye(2 * grid.size) - g @ np.linalg.pinv(a, hermitian=True) @ g.T
    return 0.5 * (p + p.T)


def _pi(grid: Grid) -> np.ndarray:
    n = grid.size
    out = np.eye(4 * n)
    out[2 * n:, 2 * n:] = leray_matrix(grid)
    return out


def _face_average(grid: Grid):
    """Cell-to-interior-face averages (rows of wall faces are zero)."""

    def avg(n):
        m = sp.lil_matrix((n + 1, n))
        for k in range(1, n):
            m[k, k - 1] = m[k, k] = 0.5
        return m.tocsr()

    ix, iy = sp.identity(grid.nx), sp.identity(grid.ny)
    return sp.kron(avg(grid.nx), iy).toarray(), sp.kron(ix, avg(grid.ny)).toarray()


def _skew_convection_matrix(grid: Grid, u: np.ndarray) -> np.ndarray:
    gx, gy = (m.toarray() for m in grad_matrices(grid, "neumann"))
    dx, dy = (m.toarray() for m in div_matrices(grid))
    ux, uy = u[0].ravel(), u[1].ravel()
    return 0.5 * (ux[:, None] * gx + uy[:, None] * gy + dx * ux[None, :] + dy * uy[None, :])


def assemble_J(q: GenericState) -> np.ndarray:
    """Poisson bracket: transport of ``s`` and ``phi`` by ``u``, the forces
    ``theta grad s + mu grad phi`` on ``u``, and skew convection."""
    g = q.grid
    _check_budget(g)
    n = g.size
    gx, gy = grad_matrices(g, "neumann")
    j0 = np.zeros((4 * n, 4 * n))
    for k, f in enumerate((q.s, q.phi)):
        blk = k * n
        fx, fy = gx @ f.ravel(), gy @ f.ravel()
        j0[blk:blk + n, 2 * n:3 * n] = -np.diag(fx)
        j0[blk:blk + n, 3 * n:] = -np.diag(fy)
        j0[2 * n:3 * n, blk:blk + n] = np.diag(fx)
        j0[3 * n:, blk:blk + n] = np.diag(fy)
    c = _skew_convection_matrix(g, q.u)
    j0[2 * n:3 * n, 2 * n:3 * n] = -c
    j0[3 * n:, 3 * n:] = -c
    pi = _pi(g)
    return pi.T @ j0 @ pi


def flux_map(q: GenericState, params: PhysParams):
    """``(B, w)``: generalised fluxes of a test vector and their quadrature weights."""
    g = q.grid
    n = g.size
    th = q.theta
    mu = chemical_potential(g, q.phi, th, params).ravel()
    lth = np.log(th).ravel()
    gxf, gyf, _, _ = (m.toarray() for m in face_operators(g, "neumann"))
    ax, ay = _face_average(g)
    kap = thermo.kappa(th, params).ravel()
    thr = th.ravel()
    rows, weights = [], []
    for gf, af in ((gxf, ax), (gyf, ay)):
        b = np.zeros((gf.shape[0], 4 * n))
        b[:, :n] = gf - (gf @ lth)[:, None] * af
        rows.append(b)
        weights.append(af @ kap)
    for gf, af in ((gxf, ax), (gyf, ay)):
        thf = af @ thr
        inner = thf > 0
        b = np.zeros((gf.shape[0], 4 * n))
        b[:, n:2 * n] = gf
        ratio = np.zeros_like(thf)
        ratio[inner] = (gf @ mu)[inner] / thf[inner]
        b[:, :n] = -ratio[:, None] * af
        rows.append(b)
        weights.append(thf)
    cx, cy = (m.toarray() for m in grad_matrices(g, "dirichlet0"))
    ux, uy = q.u[0].ravel(), q.u[1].ravel()
    s_u = (cx @ ux, 0.5 * (cy @ ux + cx @ uy), cy @ uy)
    wv = thermo.nu(th, params).ravel() * thr
    for k, mult in enumerate((1.0, 2.0, 1.0)):
        b = np.zeros((n, 4 * n))
        if k == 0:
            b[:, 2 * n:3 * n] = cx
        elif k == 1:
            b[:, 2 * n:3 * n] = 0.5 * cy
            b[:, 3 * n:] = 0.5 * cx
        else:
            b[:, 3 * n:] = cy
        b[:, :n] = -np.diag(s_u[k] / thr)
        rows.append(b)
        weights.append(mult * wv)
    return np.vstack(rows), np.concatenate(weights)


def assemble_K(q: GenericState, params: PhysParams) -> np.ndarray:
    """Dissipative bracket ``Pi^T B^T diag(w) B Pi``; symmetric and PSD by construction."""
    _check_budget(q.grid)
    b, w = flux_map(q, params)
    k0 = b.T @ (w[:, None] * b)
    pi = _pi(q.grid)
    return pi.T @ k0 @ pi


def displayed_phase_block(q: GenericState) -> np.ndarray:
    """``phi``-``phi`` block of the bracket as written term by term,
    ``-grad(a).grad(theta) b + a grad(theta).grad(b) + theta grad(a).grad(b)``,
    with central gradients.  Its antisymmetric part is what the
    factorised assembly removes."""
    g = q.grid
    _check_budget(g)
    th = q.theta.ravel()
    out = np.zeros((g.size, g.size))
    for gm in grad_matrices(g, "neumann"):
        gm = gm.toarray()
        gt = gm @ th
        out += -gm.T * gt[None, :] + gt[:, None] * gm + gm.T @ (th[:, None] * gm)
    return out


# ---------------------------------------------------------------------------
# Checks


def _rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a) / nb) if nb > 0 else float(np.linalg.norm(a))


def antisymmetry_residual(j: np.ndarray) -> float:
    return _rel(j + j.T, j)


def symmetry_residual(k: np.ndarray) -> float:
    return _rel(k - k.T, k)


def check_noninteraction(q: GenericState, params: PhysParams, j=None, k=None):
    """``(|J DS| / |J|, |K DE| / (|K| |DE|))``."""
    j = assemble_J(q) if j is None else j
    k = assemble_K(q, params) if k is None else k
    de, ds = gradient_E(q, params), gradient_S(q)
    nk = np.linalg.norm(k) * np.linalg.norm(de)
    r2 = float(np.linalg.norm(k @ de) / nk) if nk > 0 else 0.0
    return _rel(j @ ds, j), r2


def check_rates(q: GenericState, params: PhysParams, j=None, k=None):
    """``(dE/dt, dS/dt)`` of the bracket dynamics ``J DE + K DS``."""
    j = assemble_J(q) if j is None else j
    k = assemble_K(q, params) if k is None else k
    de, ds = gradient_E(q, params), gradient_S(q)
    qdot = j @ de + k @ ds
    a = q.grid.cell_area
    return a * float(de @ qdot), a * float(ds @ qdot)


def psd_probe(k: np.ndarray, rng: np.random.Generator, probes: int = 200) -> float:
    """Smallest ``<xi, K xi> / |xi|^2`` over random probes."""
    xi = rng.standard_normal((probes, k.shape[0]))
    return float(np.min(np.einsum("ij,jk,ik->i", xi, k, xi) / np.sum(xi * xi, axis=1)))


def ds_target(q: GenericState, params: PhysParams) -> np.ndarray:
    """The prescribed ``K DS``: entropy production plus ``div(kappa grad log theta)``
    in the ``s`` row, ``lap(mu)`` in the ``phi`` row, ``div(nu (grad u)_sym)``
    (projected) in the ``u`` rows; evaluated with the same fluxes as ``K``."""
    g = q.grid
    n = g.size
    b, w = flux_map(q, params)
    flux = b @ gradient_S(q)
    return np.concatenate([b[:, :n].T @ (w * flux), b[:, n:2 * n].T @ (w * flux),
                           leray_matrix(g) @ (b[:, 2 * n:].T @ (w * flux))])


def ds_target_mismatch(q: GenericState, params: PhysParams, k=None) -> dict[str, float]:
    """Relative difference between ``K DS`` and independent grid-operator
    discretisations of the prescribed rows ``lap(mu)`` and the ``s``-row
    integral (total entropy production)."""
    g = q.grid
    n = g.size
    k = assemble_K(q, params) if k is None else k
    kds = k @ gradient_S(q)
    th = q.theta
    mu = chemical_potential(g, q.phi, th, params)
    lap_mu = laplace(g, mu).ravel()
    from .ledger import entropy_production_density

    st = State(g, q.phi, th, q.u, mu, np.zeros(g.shape))
    prod = float(np.sum(entropy_production_density(st, params)))
    return {"phase_row": _rel(kds[n:2 * n] - lap_mu, lap_mu),
            "entropy_production": abs(float(np.sum(kds[:n])) - prod) / max(abs(prod), 1e-300)}


# ---------------------------------------------------------------------------
# States and reports


def random_generic_state(grid: Grid, params: PhysParams, rng: np.random.Generator,
                         amp_u: float = 0.5) -> GenericState:
    """Smooth random ``theta`` in ``[0.5, 1.5]``, ``phi`` in ``[-1, 1]``, projected ``u``."""
    th = 1.0 + 0.5 * thermo.smooth_random_field(grid, rng)
    phi = thermo.smooth_random_field(grid, rng)
    u = np.stack([thermo.smooth_random_field(grid, rng), thermo.smooth_random_field(grid, rng)])
    u, _ = project(grid, amp_u * u)
    s = -thermo.f_prime(th, params.delta) + phi
    return GenericState(grid, s, phi, u, params.delta)


def smooth_generic_state(grid: Grid, params: PhysParams) -> GenericState:
    """A fixed smooth state defined by cosines, for refinement studies."""
    x, y = grid.centers()
    sx, sy = np.pi * x / grid.lx, np.pi * y / grid.ly
    th = 1.0 + 0.3 * np.cos(sx) * np.cos(2 * sy)
    phi = 0.6 * np.cos(2 * sx) * np.cos(sy)
    ux = np.sin(sx) ** 2 * np.sin(2 * sy)
    uy = -np.sin(2 * sx) * np.sin(sy) ** 2
    u, _ = project(grid, 0.3 * np.stack([ux, uy]))
    s = -thermo.f_prime(th, params.delta) + phi
    return GenericState(grid, s, phi, u, params.delta)


@dataclass
class BracketReport:
    n: int
    J_antisymmetry: float
    K_symmetry: float
    K_min_probe: float
    K_min_eig: float
    K_norm: float
    J_DS: float
    K_DE: float
    dE_rate: float
    dS_rate: float
    displayed_asymmetry: float

    def rows(self):
        return [(name, getattr(self, name)) for name in self.__dataclass_fields__]


def check_brackets(grid: Grid, params: PhysParams, rng: np.random.Generator, probes: int = 200,
                   state: GenericState | None = None) -> BracketReport:
    q = random_generic_state(grid, params, rng) if state is None else state
    j, k = assemble_J(q), assemble_K(q, params)
    nj, nk = check_noninteraction(q, params, j, k)
    de_rate, ds_rate = check_rates(q, params, j, k)
    disp = displayed_phase_block(q)
    return BracketReport(grid.size, antisymmetry_residual(j), symmetry_residual(k),
                         psd_probe(k, rng, probes), float(np.linalg.eigvalsh(0.5 * (k + k.T))[0]),
                         float(np.linalg.norm(k)), nj, nk, de_rate, ds_rate,
                         symmetry_residual(disp))


def noninteraction_rate(params: PhysParams, sizes=(8, 16)) -> tuple[list[float], float]:
    """``K DE`` residual of :func:`smooth_generic_state` at each size and the
    observed order in ``h`` between the first and last size."""
    res = []
    for n in sizes:
        q = smooth_generic_state(Grid(n, n), params)
        res.append(check_noninteraction(q, params)[1])
    rate = float(np.log(res[0] / res[-1]) / np.log(sizes[-1] / sizes[0]))
    return res, rate
