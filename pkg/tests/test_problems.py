"""Manufactured problems must actually solve their PDE.

The source of each problem is checked against finite differences of the
exact solution: du/dt - laplace(u) + F(grad u, u) - f should vanish at
random interior points. That catches any sign or factor slip in the
hand-derived f without trusting the same algebra twice.
"""
import numpy as np
import pytest

from ihdg.problems import PROBLEM_NAMES, get_problem

DELTA = 1e-4


def fd_time(u, x, t):
    return (u(x, t + DELTA) - u(x, t - DELTA)) / (2 * DELTA)


def fd_grad(u, x, t):
    g = np.empty_like(x)
    for s in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[s] = DELTA
        g[:, s] = (u(x + e, t) - u(x - e, t)) / (2 * DELTA)
    return g


def fd_laplace(u, x, t):
    out = np.zeros(len(x))
    for s in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[s] = DELTA
        out += (u(x + e, t) - 2 * u(x, t) + u(x - e, t)) / DELTA ** 2
    return out


def interior_points(dim, m, rng):
    return 0.1 + 0.8 * rng.random((m, dim))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_source_closes_the_pde(name, dim):
    prob = get_problem(name, dim)
    rng = np.random.default_rng(11)
    x = interior_points(dim, 40, rng)
    for t in (0.3, 1.0):
        ut = fd_time(prob.exact_u, x, t)
        lap = fd_laplace(prob.exact_u, x, t)
        grad = fd_grad(prob.exact_u, x, t)
        F = prob.term.value(grad, prob.exact_u(x, t))
        resid = ut - lap + F - prob.source(x, t)
        assert np.abs(resid).max() < 1e-5


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_exact_flux_is_negative_gradient(name, dim):
    prob = get_problem(name, dim)
    rng = np.random.default_rng(12)
    x = interior_points(dim, 40, rng)
    for t in (0.0, 0.7):
        grad = fd_grad(prob.exact_u, x, t)
        assert np.abs(prob.exact_flux(x, t) + grad).max() < 1e-7


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_initial_datum_consistency(name, dim):
    prob = get_problem(name, dim)
    rng = np.random.default_rng(13)
    x = interior_points(dim, 30, rng)
    assert np.abs(prob.u0(x) - prob.exact_u(x, 0.0)).max() < 1e-13

    # homogeneous Dirichlet data: u vanishes on every boundary facet
    m = 20
    for s in range(dim):
        for val in (0.0, 1.0):
            xb = rng.random((m, dim))
            xb[:, s] = val
            assert np.abs(prob.exact_u(xb, 0.5)).max() < 1e-13


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_separated_source_agrees(name, dim):
    prob = get_problem(name, dim)
    assert prob.source_parts is not None
    rng = np.random.default_rng(14)
    x = interior_points(dim, 50, rng)
    for t in (0.0, 0.4, 1.0):
        combo = np.zeros(len(x))
        for coef, field in prob.source_parts:
            combo += coef(t) * field(x)
        assert np.abs(combo - prob.source(x, t)).max() < 1e-12


def test_unknown_names_rejected():
    with pytest.raises(ValueError, match="unknown problem"):
        get_problem("heat", 2)
    with pytest.raises(ValueError, match="dim"):
        get_problem("allen_cahn", 4)
