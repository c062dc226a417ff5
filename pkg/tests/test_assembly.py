import math

import numpy as np
import pytest

from conftest import reference_triangle_mesh
from ihdg.assembly import (
    assemble_load,
    assemble_standard_nonlinear,
    assemble_static,
    blockdiag_csr,
    interpolatory_nonlinear,
)
from ihdg.mesh import build_structured_mesh
from ihdg.nonlinear import BUILTIN_TERMS, NonlinearTerm, eval_nodal
from ihdg.polybasis import eval_basis, nodal_basis, simplex_quadrature
from ihdg.spaces import build_dof_layout


class LinearTerm(NonlinearTerm):
    """F(u) = u, for which the Newton objects have closed forms."""

    name = "linear"

    def value(self, p, u):
        return np.asarray(u).copy()

    def d_dp(self, p, u, s):
        return np.zeros_like(u)

    def d_du(self, p, u):
        return np.ones_like(u)


def setup(dim, n, k, tau=1.0):
    mesh = build_structured_mesh(dim, n)
    basis = nodal_basis(k, dim)
    layout = build_dof_layout(mesh, k)
    system = assemble_static(mesh, basis, layout, tau)
    return mesh, basis, layout, system


def test_reference_triangle_mass_block():
    mesh = reference_triangle_mesh()
    basis = nodal_basis(1, 2)
    layout = build_dof_layout(mesh, 1)
    system = assemble_static(mesh, basis, layout, 1.0)
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    assert np.abs(system.A1_blk[0] - expected).max() < 1e-14


def test_reference_triangle_boundary_mass():
    # Symbolically integrated <phi_i phi_j> over the three edges, tau = 1:
    # the two legs contribute 1D mass blocks, the hypotenuse sqrt(2) times one.
    mesh = reference_triangle_mesh()
    basis = nodal_basis(1, 2)
    layout = build_dof_layout(mesh, 1)
    system = assemble_static(mesh, basis, layout, 1.0)
    r2 = math.sqrt(2.0)
    expected = np.array([
        [2 / 3, 1 / 6, 1 / 6],
        [1 / 6, (1 + r2) / 3, r2 / 6],
        [1 / 6, r2 / 6, (1 + r2) / 3],
    ])
    assert np.abs(system.A6_blk[0] - expected).max() < 1e-14
    # All faces of the single element are boundary: no trace coupling.
    assert np.abs(system.A7_blk).max() == 0.0
    assert np.abs(system.A8_blk).max() == 0.0
    assert np.abs(system.face_blk).max() == 0.0


def test_gradient_blocks_vanish_at_k0():
    mesh, basis, layout, system = setup(2, 2, 0)
    assert np.abs(system.grad_blk).max() < 1e-14


def test_symmetry_and_spd():
    for dim, n, k in [(2, 2, 1), (2, 3, 2), (3, 2, 1)]:
        mesh, basis, layout, system = setup(dim, n, k)
        for blk in (system.A1_blk, system.A6_blk, system.A8_blk):
            assert np.abs(blk - blk.transpose(0, 2, 1)).max() < 1e-13
        eig = np.linalg.eigvalsh(system.A1_blk)
        assert eig.min() > 0
        # A6 + dt^-1 A1 stays positive definite for any positive step.
        for dt in (1e-3, 1.0, 1e3):
            eig = np.linalg.eigvalsh(system.A6_blk + system.A1_blk / dt)
            assert eig.min() > 0


def test_single_cell_trace_blocks_hand_values():
    # k = 0 on the one-cell mesh: every interior face has length sqrt(2)/2.
    # The trace mass gets tau |F| from both sides, the scalar-trace
    # coupling tau |F| once per incident element, and the flux coupling
    # n_s |F| with the outward normal of that element.
    mesh, basis, layout, system = setup(2, 1, 0)
    A8 = system.A8_csr().toarray()
    assert np.abs(A8 - math.sqrt(2.0) * np.eye(4)).max() < 1e-14
    A7 = system.A7_csr().toarray()
    assert A7.shape == (4, 4)
    assert np.abs(A7.sum(axis=1) - math.sqrt(2.0)).max() < 1e-14
    assert (np.abs((A7 > 1e-14).sum(axis=1) - 2) == 0).all()
    nz = A7[A7 > 1e-14]
    assert np.abs(nz - math.sqrt(2.0) / 2).max() < 1e-14
    # Triangle 0 (bottom) couples to the face {(0,0),(1/2,1/2)} with
    # outward normal (-1, 1)/sqrt(2): entries -1/2 and +1/2.
    f = np.flatnonzero([set(fr) == {0, 4} for fr in mesh.faces.tolist()])[0]
    col = layout.interior_face_index[f]
    A4 = system.face_csr(0).toarray()
    A5 = system.face_csr(1).toarray()
    assert abs(A4[0, col] + 0.5) < 1e-14
    assert abs(A5[0, col] - 0.5) < 1e-14


def test_load_vector_oracles():
    mesh = reference_triangle_mesh()
    basis = nodal_basis(1, 2)
    layout = build_dof_layout(mesh, 1)
    quad = simplex_quadrature(6, 2)
    z = assemble_load(lambda x, t: np.zeros(len(x)), 0.0, layout, mesh, basis, quad)
    assert np.abs(z).max() == 0.0
    # f = x against the vertex basis ((0,0),(1,0),(0,1)): (1, 2, 1)/24.
    b = assemble_load(lambda x, t: x[:, 0], 0.0, layout, mesh, basis, quad)
    assert np.abs(b - np.array([1, 2, 1]) / 24.0).max() < 1e-14


def test_load_constant_k0_gives_volumes():
    mesh, basis, layout, system = setup(2, 2, 0)
    quad = simplex_quadrature(4, 2)
    b = assemble_load(lambda x, t: np.ones(len(x)), 0.0, layout, mesh, basis, quad)
    assert np.abs(b - mesh.detB / 2.0).max() < 1e-14


def test_standard_nonlinear_zero_and_linear():
    mesh, basis, layout, system = setup(2, 2, 1)
    rng = np.random.default_rng(0)
    gamma = rng.standard_normal(layout.N1)
    quad = simplex_quadrature(5, 2)
    A9, b2 = assemble_standard_nonlinear(BUILTIN_TERMS["zero"], gamma,
                                         layout, mesh, basis, quad)
    assert np.abs(A9.blocks).max() == 0.0 and np.abs(b2).max() == 0.0
    A9, b2 = assemble_standard_nonlinear(LinearTerm(), gamma,
                                         layout, mesh, basis, quad)
    assert np.abs(A9.blocks - system.A1_blk).max() < 1e-13
    direct = np.einsum("eij,ej->ei", system.A1_blk,
                       gamma.reshape(-1, 3)).reshape(-1)
    assert np.abs(b2 - direct).max() < 1e-13


def test_standard_rejects_gradient_terms():
    mesh, basis, layout, system = setup(2, 1, 1)
    quad = simplex_quadrature(5, 2)
    with pytest.raises(ValueError):
        assemble_standard_nonlinear(BUILTIN_TERMS["grad_squared"],
                                    np.zeros(layout.N1), layout, mesh,
                                    basis, quad)


def test_k0_standard_equals_interpolatory():
    # Piecewise-constant iterates make the quadrature objects equal the
    # interpolatory ones exactly.
    mesh, basis, layout, system = setup(2, 2, 0)
    rng = np.random.default_rng(1)
    gamma = rng.standard_normal(layout.N1)
    flux = np.zeros((2, layout.N1))
    term = BUILTIN_TERMS["allen_cahn"]
    quad = simplex_quadrature(2, 2)
    A9, b2 = assemble_standard_nonlinear(term, gamma, layout, mesh, basis, quad)
    applied, jac = interpolatory_nonlinear(term, flux, gamma, system)
    scale = np.abs(A9.blocks).max()
    assert np.abs(A9.blocks - jac.d_gamma).max() < 1e-12 * scale
    assert np.abs(b2 - applied).max() < 1e-12 * max(np.abs(b2).max(), 1.0)
    expected = system.A1_blk * (3.0 * gamma.reshape(-1, 1, 1) ** 2 - 1.0)
    assert np.abs(A9.blocks - expected).max() < 1e-12 * scale


def test_interpolatory_against_quadrature_of_interpolant():
    # The applied vector must equal the exact integral of the nodal
    # interpolant of F against the basis; an independent high-order rule
    # integrates that product (a polynomial of degree 2k) exactly.
    mesh, basis, layout, system = setup(2, 2, 1)
    rng = np.random.default_rng(2)
    gamma = rng.standard_normal(layout.N1)
    flux = rng.standard_normal((2, layout.N1))
    term = BUILTIN_TERMS["allen_cahn"]
    applied, _ = interpolatory_nonlinear(term, flux, gamma, system)
    fnod = eval_nodal(term, flux, gamma).reshape(mesh.n_elements, 3)
    hi = simplex_quadrature(7, 2)
    vals = eval_basis(basis, hi.points)
    pq = np.einsum("ql,el->eq", vals, fnod)
    ref = np.einsum("e,q,eq,qi->ei", mesh.detB, hi.weights, pq, vals)
    assert np.abs(applied - ref.reshape(-1)).max() < 1e-13


def test_interpolatory_zero_and_linear():
    mesh, basis, layout, system = setup(2, 1, 1)
    rng = np.random.default_rng(3)
    gamma = rng.standard_normal(layout.N1)
    flux = rng.standard_normal((2, layout.N1))
    applied, jac = interpolatory_nonlinear(BUILTIN_TERMS["zero"], flux,
                                           gamma, system)
    assert np.abs(applied).max() == 0.0
    assert jac.d_flux is None and np.abs(jac.d_gamma).max() == 0.0
    applied, jac = interpolatory_nonlinear(LinearTerm(), flux, gamma, system)
    direct = np.einsum("eij,ej->ei", system.A1_blk,
                       gamma.reshape(-1, 3)).reshape(-1)
    assert np.abs(applied - direct).max() < 1e-14
    assert np.abs(jac.d_gamma - system.A1_blk).max() < 1e-14


def test_gradient_jacobian_blocks_are_scaled_mass():
    # For F(grad u, u) = u (d_x u + d_y u) the flux sensitivity is -u at
    # every node, so each jacobian block is A1 with its columns scaled.
    mesh, basis, layout, system = setup(2, 2, 1)
    rng = np.random.default_rng(4)
    gamma = rng.standard_normal(layout.N1)
    flux = rng.standard_normal((2, layout.N1))
    _, jac = interpolatory_nonlinear(BUILTIN_TERMS["burgers"], flux, gamma, system)
    assert jac.d_flux is not None
    assert jac.d_flux.shape == (2,) + system.A1_blk.shape
    g = gamma.reshape(mesh.n_elements, 3)
    for s in range(2):
        expected = system.A1_blk * (-g[:, None, :])
        assert np.abs(jac.d_flux[s] - expected).max() < 1e-13


def test_blockdiag_csr_roundtrip():
    rng = np.random.default_rng(5)
    blocks = rng.standard_normal((3, 2, 2))
    A = blockdiag_csr(blocks)
    dense = np.zeros((6, 6))
    for e in range(3):
        dense[2 * e:2 * e + 2, 2 * e:2 * e + 2] = blocks[e]
    assert np.abs(A.toarray() - dense).max() == 0.0
