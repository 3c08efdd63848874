"""Cell-centred finite differences on a rectangle.

Fields are numpy arrays of shape ``(nx, ny)`` (axis 0 is x); vector fields
have shape ``(2, nx, ny)``.  Boundary conditions are imposed through a ghost
band of width one:

* ``"neumann"``: mirror ghosts, zero normal derivative on the wall faces;
* ``"dirichlet0"``: negated ghosts, the field vanishes on the wall faces.

Two gradient flavours coexist.  :func:`grad` is the collocated central
difference, paired with the face-averaged flux divergence :func:`div` so that
``<grad f, v> = -<f, div v>`` holds to round-off.  Face gradients
(:func:`face_gradients`) feed the compact five-point :func:`laplace` and the
quadratic forms built from it.  Their composition ``div(grad f)`` is the wide
(spacing ``2h``) Laplacian, not the compact one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch, IncompatibleRHS, NonConvergence

SCALAR_BCS = ("neumann", "dirichlet0")
VECTOR_BCS = ("noflux", "dirichlet0")


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``[0, lx] x [0, ly]``."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def refine(self, factor: int) -> "Grid":
        return Grid(self.nx * factor, self.ny * factor, self.lx, self.ly)


def check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch(f"grid {a} differs from {b}")


def _check_bc(bc, allowed):
    if bc not in allowed:
        raise ValueError(f"unknown boundary condition {bc!r}; expected one of {allowed}")


def pad(f: np.ndarray, bc: str = "neumann") -> np.ndarray:
    """Return ``f`` with a one-cell ghost band filled according to ``bc``."""
    _check_bc(bc, SCALAR_BCS)
    g = np.pad(f, 1, mode="edge")
    if bc == "dirichlet0":
        g[0, 1:-1] *= -1.0
        g[-1, 1:-1] *= -1.0
        g[1:-1, 0] *= -1.0
        g[1:-1, -1] *= -1.0
    return g


# ---------------------------------------------------------------------------
# Collocated operators


def grad(grid: Grid, f: np.ndarray, bc: str = "neumann") -> np.ndarray:
    """Central-difference gradient at cell centres."""
    g = pad(f, bc)
    gx = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * grid.hx)
    gy = (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * grid.hy)
    return np.stack([gx, gy])


def div(grid: Grid, v: np.ndarray, bc: str = "noflux") -> np.ndarray:
    """Flux-form divergence from face-averaged fluxes.

    Both admissible ``bc`` values close the wall faces with zero flux, so the
    result integrates to zero exactly.
    """
    _check_bc(bc, VECTOR_BCS)
    nx, ny = grid.shape
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    fx[1:-1] = 0.5 * (v[0, :-1] + v[0, 1:])
    fy[:, 1:-1] = 0.5 * (v[1, :, :-1] + v[1, :, 1:])
    return flux_divergence(grid, fx, fy)


def advect(grid: Grid, u: np.ndarray, f: np.ndarray, bc: str = "neumann") -> np.ndarray:
    """Non-conservative transport ``u . grad f`` with central differences."""
    g = grad(grid, f, bc)
    return u[0] * g[0] + u[1] * g[1]


# ---------------------------------------------------------------------------
# Face-based operators


def face_gradients(grid: Grid, f: np.ndarray, bc: str = "neumann"):
    """Normal derivatives on x-faces ``(nx+1, ny)`` and y-faces ``(nx, ny+1)``."""
    _check_bc(bc, SCALAR_BCS)
    nx, ny = grid.shape
    gx = np.zeros((nx + 1, ny))
    gy = np.zeros((nx, ny + 1))
    gx[1:-1] = (f[1:] - f[:-1]) / grid.hx
    gy[:, 1:-1] = (f[:, 1:] - f[:, :-1]) / grid.hy
    if bc == "dirichlet0":
        gx[0] = 2.0 * f[0] / grid.hx
        gx[-1] = -2.0 * f[-1] / grid.hx
        gy[:, 0] = 2.0 * f[:, 0] / grid.hy
        gy[:, -1] = -2.0 * f[:, -1] / grid.hy
    return gx, gy


def face_values(c):
    """Arithmetic face averages of a cell field; wall faces copy the cell.

    A ``(cx, cy)`` tuple of face arrays is passed through unchanged.
    """
    if isinstance(c, tuple):
        return c
    cx = np.concatenate([c[:1], 0.5 * (c[:-1] + c[1:]), c[-1:]], axis=0)
    cy = np.concatenate([c[:, :1], 0.5 * (c[:, :-1] + c[:, 1:]), c[:, -1:]], axis=1)
    return cx, cy


def flux_divergence(grid: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    return (fx[1:] - fx[:-1]) / grid.hx + (fy[:, 1:] - fy[:, :-1]) / grid.hy


def laplace(grid: Grid, f: np.ndarray, bc: str = "neumann", coef=None) -> np.ndarray:
    """Five-point Laplacian, optionally ``div(coef grad f)``.

    ``coef`` is a cell field (averaged to faces) or a ``(cx, cy)`` face tuple.
    """
    gx, gy = face_gradients(grid, f, bc)
    if coef is not None:
        cx, cy = face_values(coef)
        gx, gy = cx * gx, cy * gy
    return flux_divergence(grid, gx, gy)


def face_density(grid: Grid, f: np.ndarray, bc: str = "neumann", coef=None) -> np.ndarray:
    """Cell density ``e`` of the quadratic form ``-<f, laplace(f, coef)>``.

    Each face contributes ``coef_f |d_f f|^2``; interior faces split it
    evenly between their two cells, wall faces (present only for
    ``dirichlet0``) carry half weight and give it to their one cell.  Hence
    ``integrate(e) == -integrate(f * laplace(f, bc, coef))`` to round-off and
    ``e >= 0`` pointwise.
    """
    gx, gy = face_gradients(grid, f, bc)
    qx, qy = gx * gx, gy * gy
    if coef is not None:
        cx, cy = face_values(coef)
        qx, qy = cx * qx, cy * qy
    return 0.5 * (qx[:-1] + qx[1:]) + 0.5 * (qy[:, :-1] + qy[:, 1:])


# ---------------------------------------------------------------------------
# Quadrature and norms


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Midpoint rule ``hx*hy*sum(f)`` (all components for vector fields)."""
    return float(grid.cell_area * np.sum(f))


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return integrate(grid, a * b)


def mean(grid: Grid, f: np.ndarray) -> float:
    return integrate(grid, f) / (grid.lx * grid.ly)


def _grad_sq(grid, f):
    if f.ndim == 3:
        return sum(np.sum(grad(grid, fk, "neumann") ** 2) for fk in f)
    return np.sum(grad(grid, f, "neumann") ** 2)


def l1(grid: Grid, f: np.ndarray) -> float:
    return integrate(grid, np.abs(f))


def l2(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(integrate(grid, f * f)))


def linf(grid: Grid, f: np.ndarray) -> float:
    return float(np.max(np.abs(f)))


def h1(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(integrate(grid, f * f) + grid.cell_area * _grad_sq(grid, f)))


def w1d_proxy(grid: Grid, f: np.ndarray) -> float:
    """``(|f|_2^2 + |grad f|_2^2)^(1/2)``, the stand-in for the W^{1,d} norm in 2-D."""
    return h1(grid, f)


def restrict(f: np.ndarray, factor: int) -> np.ndarray:
    """Block-average a fine cell field (or vector field) onto a grid ``factor`` times coarser."""
    if factor == 1:
        return f.copy()
    *lead, nx, ny = f.shape
    if nx % factor or ny % factor:
        raise GridMismatch(f"shape {f.shape} not divisible by {factor}")
    g = f.reshape(*lead, nx // factor, factor, ny // factor, factor)
    return g.mean(axis=(-3, -1))


# ---------------------------------------------------------------------------
# Sparse matrices (C-order flattening, index i*ny + j)


def _face_grad_1d(n, h, bc):
    rows, cols, vals = [], [], []
    for k in range(1, n):
        rows += [k, k]
        cols += [k - 1, k]
        vals += [-1.0 / h, 1.0 / h]
    if bc == "dirichlet0":
        rows += [0, n]
        cols += [0, n - 1]
        vals += [2.0 / h, -2.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _face_div_1d(n, h):
    e = np.ones(n) / h
    return sp.diags([-e, e], [0, 1], shape=(n, n + 1), format="csr")


def _central_1d(n, h, bc):
    a = 0.5 / h
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -a
        m[i, i + 1] = a
    if bc == "neumann":
        m[0, 0], m[0, 1] = -a, a
        m[n - 1, n - 2], m[n - 1, n - 1] = -a, a
    else:
        m[0, 0], m[0, 1] = a, a
        m[n - 1, n - 2], m[n - 1, n - 1] = -a, -a
    return m.tocsr()


def _average_div_1d(n, h):
    a = 0.5 / h
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -a
        m[i, i + 1] = a
    m[0, 0], m[0, 1] = a, a
    m[n - 1, n - 2], m[n - 1, n - 1] = -a, -a
    return m.tocsr()


@lru_cache(maxsize=32)
def face_operators(grid: Grid, bc: str = "neumann"):
    """Sparse ``(Gx, Gy, Dx, Dy)``: cell-to-face gradients and face-to-cell divergences."""
    _check_bc(bc, SCALAR_BCS)
    ix, iy = sp.identity(grid.nx, format="csr"), sp.identity(grid.ny, format="csr")
    gx = sp.kron(_face_grad_1d(grid.nx, grid.hx, bc), iy, format="csr")
    gy = sp.kron(ix, _face_grad_1d(grid.ny, grid.hy, bc), format="csr")
    dx = sp.kron(_face_div_1d(grid.nx, grid.hx), iy, format="csr")
    dy = sp.kron(ix, _face_div_1d(grid.ny, grid.hy), format="csr")
    return gx, gy, dx, dy


def laplace_matrix(grid: Grid, bc: str = "neumann", coef=None) -> sp.csr_matrix:
    """Sparse matrix of :func:`laplace`."""
    gx, gy, dx, dy = face_operators(grid, bc)
    if coef is None:
        return (dx @ gx + dy @ gy).tocsr()
    cx, cy = face_values(coef)
    return (dx @ sp.diags(cx.ravel()) @ gx + dy @ sp.diags(cy.ravel()) @ gy).tocsr()


@lru_cache(maxsize=32)
def grad_matrices(grid: Grid, bc: str = "neumann"):
    """Sparse matrices of the two components of :func:`grad`."""
    _check_bc(bc, SCALAR_BCS)
    ix, iy = sp.identity(grid.nx, format="csr"), sp.identity(grid.ny, format="csr")
    return (sp.kron(_central_1d(grid.nx, grid.hx, bc), iy, format="csr"),
            sp.kron(ix, _central_1d(grid.ny, grid.hy, bc), format="csr"))


@lru_cache(maxsize=32)
def div_matrices(grid: Grid):
    """Sparse matrices of the two component contributions to :func:`div`."""
    ix, iy = sp.identity(grid.nx, format="csr"), sp.identity(grid.ny, format="csr")
    return (sp.kron(_average_div_1d(grid.nx, grid.hx), iy, format="csr"),
            sp.kron(ix, _average_div_1d(grid.ny, grid.hy), format="csr"))


def upwind_matrix(grid: Grid, u: np.ndarray) -> sp.csr_matrix:
    """Conservative first-order upwind transport ``div(u theta)``.

    Face velocities are averages of the adjacent cell velocities; wall faces
    carry no flux.  Off-diagonal entries are nonpositive.
    """
    nx, ny = grid.shape
    ux = np.zeros((nx + 1, ny))
    uy = np.zeros((nx, ny + 1))
    ux[1:-1] = 0.5 * (u[0, :-1] + u[0, 1:])
    uy[:, 1:-1] = 0.5 * (u[1, :, :-1] + u[1, :, 1:])
    ix, iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")

    def sel(n, side):
        # faces x cells; interior face k sits between cells k-1 and k
        k = np.arange(1, n)
        c = k - 1 if side == "left" else k
        return sp.csr_matrix((np.ones(n - 1), (k, c)), shape=(n + 1, n))

    lx_, rx_ = sp.kron(sel(nx, "left"), iy), sp.kron(sel(nx, "right"), iy)
    ly_, ry_ = sp.kron(ix, sel(ny, "left")), sp.kron(ix, sel(ny, "right"))
    fx = sp.diags(np.maximum(ux, 0).ravel()) @ lx_ + sp.diags(np.minimum(ux, 0).ravel()) @ rx_
    fy = sp.diags(np.maximum(uy, 0).ravel()) @ ly_ + sp.diags(np.minimum(uy, 0).ravel()) @ ry_
    _, _, dx, dy = face_operators(grid, "neumann")
    return (dx @ fx + dy @ fy).tocsr()


# ---------------------------------------------------------------------------
# Neumann Poisson problem


def _neumann_diagonal(grid: Grid) -> np.ndarray:
    nx, ny = grid.shape
    dx = np.full(nx, 2.0 / grid.hx**2)
    dy = np.full(ny, 2.0 / grid.hy**2)
    dx[[0, -1]] = 1.0 / grid.hx**2
    dy[[0, -1]] = 1.0 / grid.hy**2
    return dx[:, None] + dy[None, :]


def poisson_neumann(grid: Grid, rhs: np.ndarray, tol: float = 1e-10,
                    maxiter: int | None = None) -> np.ndarray:
    """Solve ``-laplace(phi) = rhs`` with homogeneous Neumann data, ``mean(phi) = 0``.

    Jacobi-preconditioned conjugate gradients on the mean-zero subspace; the
    residual and search direction are re-projected every iteration.

    Raises:
        IncompatibleRHS: if ``|integral(rhs)| > 1e-10 * |rhs|_1``.
        NonConvergence: if the relative residual stays above ``tol`` after
            ``maxiter`` (default ``10*nx*ny``) iterations.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != grid.shape:
        raise GridMismatch(f"rhs shape {rhs.shape} != grid shape {grid.shape}")
    total = integrate(grid, rhs)
    if abs(total) > 1e-10 * l1(grid, rhs):
        raise IncompatibleRHS(f"integral of rhs is {total:.3e}")
    maxiter = 10 * grid.size if maxiter is None else maxiter
    inv_diag = 1.0 / _neumann_diagonal(grid)

    def op(x):
        return -laplace(grid, x, "neumann")

    b = rhs - rhs.mean()
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x
    r = b.copy()
    z = inv_diag * r
    z -= z.mean()
    p = z.copy()
    rz = np.vdot(r, z)
    for _ in range(maxiter):
        ap = op(p)
        alpha = rz / np.vdot(p, ap)
        x += alpha * p
        r -= alpha * ap
        r -= r.mean()
        if np.linalg.norm(r) <= tol * bnorm:
            return x - x.mean()
        z = inv_diag * r
        z -= z.mean()
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        p -= p.mean()
        rz = rz_new
    raise NonConvergence(f"PCG did not reach {tol:g} in {maxiter} iterations")
