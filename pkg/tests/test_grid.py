import numpy as np
import pytest

from nschtherm.errors import GridMismatch, IncompatibleRHS
from nschtherm.grid import (Grid, check_same_grid, div, div_matrices, face_density, grad,
                            grad_matrices, integrate, l2, laplace, laplace_matrix, pad,
                            poisson_neumann, restrict, upwind_matrix)


@pytest.fixture
def g():
    return Grid(12, 10, 1.0, 0.8)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(3, 8)
    with pytest.raises(ValueError):
        Grid(8, 8, -1.0)
    with pytest.raises(GridMismatch):
        check_same_grid(Grid(8, 8), Grid(8, 16))


def test_centers_and_quadrature(g):
    x, y = g.centers()
    assert x.shape == g.shape
    assert x[0, 0] == pytest.approx(0.5 * g.hx)
    assert integrate(g, np.ones(g.shape)) == pytest.approx(0.8)
    # midpoint rule is exact for linear functions
    assert integrate(g, x + 2 * y) == pytest.approx(0.5 * 0.8 + 0.8**2)


def test_pad_ghosts():
    f = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(pad(f)[0, 1:-1], f[0])
    assert np.array_equal(pad(f, "dirichlet0")[0, 1:-1], -f[0])
    with pytest.raises(ValueError):
        pad(f, "periodic")


def test_grad_div_adjoint(g, rng):
    # <grad f, v> = -<f, div v> for every f and v
    f = rng.normal(size=g.shape)
    v = rng.normal(size=(2,) + g.shape)
    lhs = integrate(g, grad(g, f, "neumann") * v)
    rhs = -integrate(g, f * div(g, v))
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(lhs)))
    # both wall closures of div carry zero flux
    assert np.array_equal(div(g, v, "dirichlet0"), div(g, v))
    assert abs(integrate(g, div(g, v))) < 1e-12


def test_div_grad_is_wide_laplacian(g, rng):
    f = rng.normal(size=g.shape)
    dg = div(g, grad(g, f))
    wide = ((f[4:, 2:-2] - 2 * f[2:-2, 2:-2] + f[:-4, 2:-2]) / (4 * g.hx**2)
            + (f[2:-2, 4:] - 2 * f[2:-2, 2:-2] + f[2:-2, :-4]) / (4 * g.hy**2))
    assert np.allclose(dg[2:-2, 2:-2], wide, atol=1e-9)
    # and it is not the compact five-point operator
    assert not np.allclose(dg, laplace(g, f))


def test_laplace_exact_on_quadratics(g):
    x, y = g.centers()
    lap = laplace(g, x**2 + 3 * y**2)
    assert np.allclose(lap[1:-1, 1:-1], 8.0)
    # Neumann closure: the flux form integrates to zero
    assert abs(integrate(g, lap)) < 1e-10


@pytest.mark.parametrize("bc", ["neumann", "dirichlet0"])
def test_face_density_summation_by_parts(g, rng, bc):
    f = rng.normal(size=g.shape)
    c = 1.0 + rng.uniform(size=g.shape)
    e = face_density(g, f, bc, c)
    assert np.all(e >= 0)
    assert integrate(g, e) == pytest.approx(-integrate(g, f * laplace(g, f, bc, c)), rel=1e-12)


def test_sparse_matrices_match(g, rng):
    f = rng.normal(size=g.shape)
    c = 1.0 + rng.uniform(size=g.shape)
    for bc in ("neumann", "dirichlet0"):
        assert np.allclose((laplace_matrix(g, bc, c) @ f.ravel()).reshape(g.shape),
                           laplace(g, f, bc, c))
        gx, gy = grad_matrices(g, bc)
        gr = grad(g, f, bc)
        assert np.allclose((gx @ f.ravel()).reshape(g.shape), gr[0])
        assert np.allclose((gy @ f.ravel()).reshape(g.shape), gr[1])
    v = rng.normal(size=(2,) + g.shape)
    dx, dy = div_matrices(g)
    assert np.allclose((dx @ v[0].ravel() + dy @ v[1].ravel()).reshape(g.shape), div(g, v))


def test_upwind_matrix_structure(g, rng):
    u = rng.normal(size=(2,) + g.shape)
    a = upwind_matrix(g, u).toarray()
    off = a - np.diag(np.diag(a))
    assert np.all(off <= 0)
    # conservative: columns sum to zero (no flux through the walls)
    assert np.allclose(a.sum(axis=0), 0.0, atol=1e-10)


def test_poisson_neumann(g):
    x, y = g.centers()
    f = np.cos(np.pi * x) * np.cos(np.pi * y / 0.8)
    f -= f.mean()
    phi = poisson_neumann(g, f, tol=1e-12)
    assert abs(phi.mean()) < 1e-12
    assert l2(g, -laplace(g, phi) - f) < 1e-10
    with pytest.raises(IncompatibleRHS):
        poisson_neumann(g, f + 1.0)
    assert not np.any(poisson_neumann(g, np.zeros(g.shape)))


def test_restrict_preserves_integrals(rng):
    fine, coarse = Grid(16, 8), Grid(8, 4)
    f = rng.normal(size=(2,) + fine.shape)
    r = restrict(f, 2)
    assert r.shape == (2,) + coarse.shape
    assert integrate(coarse, r) == pytest.approx(integrate(fine, f))
    with pytest.raises(GridMismatch):
        restrict(np.zeros((9, 8)), 2)
