import itertools
import math

import numpy as np
import pytest

from ihdg.polybasis import (
    MAX_QUAD_DEGREE,
    eval_basis,
    eval_basis_grad,
    nodal_basis,
    simplex_measure,
    simplex_monomial_integral,
    simplex_quadrature,
)

ALL_BASES = [(k, dim) for dim in (1, 2, 3) for k in range(4)]


def random_simplex_points(dim, n, seed):
    # Dirichlet sampling keeps points strictly inside the simplex.
    rng = np.random.default_rng(seed)
    bary = rng.dirichlet(np.ones(dim + 1), size=n)
    return bary[:, :dim]


@pytest.mark.parametrize("k,dim", ALL_BASES)
def test_nodal_property(k, dim):
    b = nodal_basis(k, dim)
    vals = eval_basis(b, b.nodes)
    assert np.abs(vals - np.eye(b.n_basis)).max() < 1e-12


@pytest.mark.parametrize("k,dim", ALL_BASES)
def test_partition_of_unity_and_grad_sum(k, dim):
    b = nodal_basis(k, dim)
    pts = random_simplex_points(dim, 100, seed=k + 10 * dim)
    vals = eval_basis(b, pts)
    assert np.abs(vals.sum(axis=1) - 1.0).max() < 1e-12
    grads = eval_basis_grad(b, pts)
    assert np.abs(grads.sum(axis=1)).max() < 1e-12


def test_basis_counts_and_nodes():
    b = nodal_basis(1, 2)
    # Vertex nodes in reference order: origin, e1, e2.
    assert np.allclose(b.nodes, [[0, 0], [1, 0], [0, 1]])
    b0 = nodal_basis(0, 2)
    assert np.allclose(b0.nodes, [[1 / 3, 1 / 3]])
    b2 = nodal_basis(2, 2)
    assert b2.n_basis == 6
    expected = {(0, 0), (1, 0), (0, 1), (0.5, 0), (0, 0.5), (0.5, 0.5)}
    got = {tuple(np.round(p, 12)) for p in b2.nodes}
    assert got == expected
    for k, dim in ALL_BASES:
        assert nodal_basis(k, dim).n_basis == math.comb(k + dim, dim)


def test_vertex_basis_gradient_constant():
    # phi at vertex (0,0) for k=1 is 1-x-y, gradient (-1,-1) everywhere.
    b = nodal_basis(1, 2)
    pts = random_simplex_points(2, 20, seed=3)
    grads = eval_basis_grad(b, pts)
    assert np.abs(grads[:, 0, :] - (-1.0)).max() < 1e-12


def test_eval_rejects_far_outside_point():
    b = nodal_basis(1, 2)
    with pytest.raises(ValueError):
        eval_basis(b, [[2.0, 2.0]])
    # Slight roundoff excursions are tolerated.
    eval_basis(b, [[-1e-14, 0.5]])


def test_degree_caps():
    with pytest.raises(ValueError):
        nodal_basis(4, 2)
    with pytest.raises(ValueError):
        simplex_quadrature(MAX_QUAD_DEGREE + 1, 2)
    with pytest.raises(ValueError):
        nodal_basis(1, 4)


@pytest.mark.parametrize("dim,max_deg", [(1, 9), (2, 9), (3, 7)])
def test_quadrature_exactness(dim, max_deg):
    for deg in range(max_deg + 1):
        q = simplex_quadrature(deg, dim)
        assert q.exactness_degree >= deg
        assert (q.weights > 0).all()
        assert abs(q.weights.sum() - simplex_measure(dim)) < 1e-14
        for e in itertools.product(range(q.exactness_degree + 1), repeat=dim):
            if sum(e) > q.exactness_degree:
                continue
            approx = (q.weights * np.prod(q.points ** np.array(e), axis=1)).sum()
            assert abs(approx - simplex_monomial_integral(e)) < 1e-12


def test_quadrature_frozen_values():
    # Midpoint rule on the triangle: one point, weight 1/2.
    q0 = simplex_quadrature(0, 2)
    assert len(q0.weights) == 1
    assert abs(q0.weights[0] - 0.5) < 1e-15
    # int xy over the reference triangle is 1/24.
    q2 = simplex_quadrature(2, 2)
    val = (q2.weights * q2.points[:, 0] * q2.points[:, 1]).sum()
    assert abs(val - 1.0 / 24.0) < 1e-15
    # int 1 over the reference tetrahedron is 1/6.
    q3 = simplex_quadrature(1, 3)
    assert abs(q3.weights.sum() - 1.0 / 6.0) < 1e-15


def test_reference_mass_matrix_oracle():
    # Closed-form (symbolically integrated) k=1 mass matrix on the
    # reference triangle, frozen: (1/24) [[2,1,1],[1,2,1],[1,1,2]].
    b = nodal_basis(1, 2)
    q = simplex_quadrature(2, 2)
    vals = eval_basis(b, q.points)
    M = np.einsum("q,qi,qj->ij", q.weights, vals, vals)
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    assert np.abs(M - expected).max() < 1e-14
