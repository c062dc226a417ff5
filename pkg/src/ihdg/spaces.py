"""Degree-of-freedom layouts, grid functions, interpolation and projections.

Three discrete spaces share one nodal basis per entity type: the scalar
space (discontinuous, one block of l_K coefficients per element), the
flux space (dim componentwise copies of the scalar layout), and the
trace space (one block of l_face coefficients per interior face; traces
vanish on boundary faces, which carry no unknowns).

Scalar coefficients are element-contiguous: the dofs of element e occupy
the slice [e*l_K, (e+1)*l_K), which the per-element elimination relies
on. Face dofs use the face's canonical chart, built on its sorted global
vertex list, so both incident elements address identical trace values.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .polybasis import (
    QuadratureRule,
    ReferenceBasis,
    eval_basis,
    nodal_basis,
    simplex_measure,
    simplex_quadrature,
)


@dataclass(frozen=True)
class DofLayout:
    """Index maps for the scalar, flux and trace coefficient vectors."""

    dim: int
    k: int
    n_elements: int
    l_K: int
    l_face: int
    N1: int                        # scalar dofs; flux dofs are dim * N1
    N2: int                        # trace dofs (interior faces only)
    interior_face_index: np.ndarray  # (n_faces,) position or -1 on boundary
    elem_trace_dofs: np.ndarray    # (ne, (dim+1)*l_face); N2 pads boundary slots
    elem_trace_mask: np.ndarray    # (ne, (dim+1)*l_face) bool, True at real dofs

    @property
    def n_trace_cols(self) -> int:
        return (self.dim + 1) * self.l_face


def build_dof_layout(mesh: Mesh, k: int) -> DofLayout:
    """Lay out coefficients for degree k on the given mesh."""
    basis = nodal_basis(k, mesh.dim)
    fbasis = nodal_basis(k, mesh.dim - 1)
    l_K, l_face = basis.n_basis, fbasis.n_basis
    interior = ~mesh.boundary_mask
    interior_face_index = np.full(mesh.n_faces, -1, dtype=np.int64)
    interior_face_index[interior] = np.arange(interior.sum())
    N1 = mesh.n_elements * l_K
    N2 = int(interior.sum()) * l_face

    fidx = interior_face_index[mesh.element_faces]        # (ne, dim+1)
    base = np.where(fidx >= 0, fidx * l_face, N2)
    cols = base[:, :, None] + np.arange(l_face)[None, None, :]
    cols = np.where(fidx[:, :, None] >= 0, cols, N2)
    elem_trace_dofs = cols.reshape(mesh.n_elements, -1)
    elem_trace_mask = elem_trace_dofs < N2
    return DofLayout(dim=mesh.dim, k=k, n_elements=mesh.n_elements,
                     l_K=l_K, l_face=l_face, N1=N1, N2=N2,
                     interior_face_index=interior_face_index,
                     elem_trace_dofs=elem_trace_dofs,
                     elem_trace_mask=elem_trace_mask)


@dataclass
class GridFunction:
    """Coefficient vector tagged by its space: W (scalar), V (flux), M (trace).

    W holds shape (N1,), V holds (dim, N1) with the components stacked,
    M holds (N2,).
    """

    space: str
    data: np.ndarray

    def copy(self) -> "GridFunction":
        return GridFunction(self.space, self.data.copy())


def check_gridfunction(gf: GridFunction, layout: DofLayout) -> None:
    shapes = {"W": (layout.N1,), "V": (layout.dim, layout.N1), "M": (layout.N2,)}
    if gf.space not in shapes:
        raise ValueError(f"unknown space tag {gf.space!r}")
    if gf.data.shape != shapes[gf.space]:
        raise ValueError(f"{gf.space} coefficients have shape {gf.data.shape}, "
                         f"expected {shapes[gf.space]}")


def physical_nodes(mesh: Mesh, basis: ReferenceBasis) -> np.ndarray:
    """Mapped basis nodes of every element, shape (ne, l_K, dim)."""
    return (np.einsum("eij,lj->eli", mesh.B, basis.nodes)
            + mesh.offset[:, None, :])


def interpolate_elementwise(g, layout: DofLayout, mesh: Mesh,
                            basis: ReferenceBasis) -> GridFunction:
    """Elementwise nodal interpolant of g into the scalar space.

    g is called with an (m, dim) array of points and must return (m,)
    values; continuity inside each closed element is the caller's
    responsibility. The coefficient at (element, node) is exactly the
    point value there.
    """
    pts = physical_nodes(mesh, basis).reshape(-1, mesh.dim)
    vals = np.asarray(g(pts), dtype=float).reshape(layout.N1)
    return GridFunction("W", vals)


def _reference_mass(basis: ReferenceBasis, quad: QuadratureRule) -> np.ndarray:
    vals = eval_basis(basis, quad.points, validate=False)
    return np.einsum("q,qi,qj->ij", quad.weights, vals, vals)


def l2_project_W(g, layout: DofLayout, mesh: Mesh, basis: ReferenceBasis,
                 quad: QuadratureRule) -> GridFunction:
    """Elementwise L2 projection of g into the scalar space.

    Solves the local mass system per element; the affine Jacobian cancels
    between the two sides, so the reference mass matrix serves every
    element.
    """
    mass = _reference_mass(basis, quad)
    vals = eval_basis(basis, quad.points, validate=False)   # (nq, l)
    pts = (np.einsum("eij,qj->eqi", mesh.B, quad.points)
           + mesh.offset[:, None, :])
    gq = np.asarray(g(pts.reshape(-1, mesh.dim)), dtype=float)
    gq = gq.reshape(mesh.n_elements, len(quad.weights))
    rhs = np.einsum("q,eq,qi->ei", quad.weights, gq, vals)
    coeff = np.linalg.solve(mass, rhs.T).T
    resid = np.abs(coeff @ mass.T - rhs).max()
    scale = max(np.abs(rhs).max(), 1e-30)
    assert resid / scale < 1e-12, "local mass solve lost accuracy"
    return GridFunction("W", coeff.reshape(-1))


def face_chart_points(mesh: Mesh, ref_pts: np.ndarray) -> np.ndarray:
    """Map reference face points through every face's canonical chart.

    The chart of face f interpolates its sorted global vertices v_0..v_{d-1}
    affinely; returns (n_faces, n_pts, dim).
    """
    fcoords = mesh.vertices[mesh.faces]            # (nf, dim, dim)
    lam0 = 1.0 - ref_pts.sum(axis=1)               # (nq,)
    lam = np.column_stack([lam0, ref_pts])         # (nq, dim)
    return np.einsum("qm,fmi->fqi", lam, fcoords)


def pm_project(y, layout: DofLayout, mesh: Mesh, face_basis: ReferenceBasis,
               face_quad: QuadratureRule) -> GridFunction:
    """Face-by-face L2 projection into the trace space (interior faces).

    y is called with physical points (m, dim) lying on faces and must
    return (m,) values.
    """
    interior = np.flatnonzero(~mesh.boundary_mask)
    if layout.N2 == 0:
        return GridFunction("M", np.zeros(0))
    mass = _reference_mass(face_basis, face_quad)
    fvals = eval_basis(face_basis, face_quad.points, validate=False)
    pts = face_chart_points(mesh, face_quad.points)[interior]
    yq = np.asarray(y(pts.reshape(-1, mesh.dim)), dtype=float)
    yq = yq.reshape(len(interior), len(face_quad.weights))
    rhs = np.einsum("q,fq,qi->fi", face_quad.weights, yq, fvals)
    coeff = np.linalg.solve(mass, rhs.T).T
    resid = np.abs(coeff @ mass.T - rhs).max()
    scale = max(np.abs(rhs).max(), 1e-30)
    assert resid / scale < 1e-12, "face mass solve lost accuracy"
    return GridFunction("M", coeff.reshape(-1))


def tau_array(mesh: Mesh, tau) -> np.ndarray:
    """Normalize the stabilization parameter to shape (ne, dim+1)."""
    arr = np.asarray(tau, dtype=float)
    if arr.ndim == 0:
        arr = np.full((mesh.n_elements, mesh.dim + 1), float(arr))
    if arr.shape != (mesh.n_elements, mesh.dim + 1):
        raise ValueError("tau must be a scalar or an (ne, dim+1) array")
    return arr


def hdg_project(q_exact, u_exact, tau, layout: DofLayout, mesh: Mesh,
                basis: ReferenceBasis, quad: QuadratureRule,
                face_quad: QuadratureRule = None):
    """Coupled flux/scalar projection defined by moment and flux matching.

    Per element it enforces, in one square local system per element:
    component moments of the flux against polynomials one degree down,
    scalar moments against the same set, and matching of the stabilized
    normal flux (q . n + tau u) against the full face polynomial space on
    every face. q_exact maps (m, dim) points to (m, dim) vectors, u_exact
    maps them to (m,) values.

    Returns (flux GridFunction, scalar GridFunction). Requires tau >= 0
    with a positive maximum on each element.
    """
    from .polybasis import _multi_indices  # moment exponents, degree k-1

    dim, k, l = mesh.dim, layout.k, layout.l_K
    taus = tau_array(mesh, tau)
    if (taus < 0).any() or (taus.max(axis=1) <= 0).any():
        raise ValueError("tau must be nonnegative with max > 0 per element")
    fbasis = nodal_basis(k, dim - 1)
    if face_quad is None:
        face_quad = simplex_quadrature(2 * k + 4, dim - 1)
    lf = fbasis.n_basis
    size = (dim + 1) * l
    ne = mesh.n_elements

    # Element moments against monomials of degree <= k-1 (none for k=0).
    n_m = 0 if k == 0 else _multi_indices(k - 1, dim).shape[0]
    vals = eval_basis(basis, quad.points, validate=False)
    if n_m:
        expo = _multi_indices(k - 1, dim)
        mom = np.prod(quad.points[:, None, :] ** expo[None, :, :], axis=2)
        Vm = np.einsum("q,qr,qj->rj", quad.weights, mom, vals)   # (n_m, l)

    # Face data: canonical basis values, physical points, element-side
    # traces of the volume basis.
    fvals = eval_basis(fbasis, face_quad.points, validate=False)  # (nq, lf)
    Xf = face_chart_points(mesh, face_quad.points)                # (nf, nq, dim)
    ref_meas = simplex_measure(dim - 1)
    wq_f = mesh.face_measure[:, None] / ref_meas * face_quad.weights[None, :]
    nq = len(face_quad.weights)
    Xe = Xf[mesh.element_faces]                                   # (ne, d+1, nq, dim)
    xi_e = np.einsum("eij,efqj->efqi", np.linalg.inv(mesh.B),
                     Xe - mesh.offset[:, None, None, :])
    phi_f = eval_basis(basis, xi_e.reshape(-1, dim), validate=False)
    phi_f = phi_f.reshape(ne, dim + 1, nq, l)
    wf = wq_f[mesh.element_faces]                                 # (ne, d+1, nq)

    A = np.zeros((ne, size, size))
    rhs = np.zeros((ne, size))
    qx = np.asarray(q_exact(Xe.reshape(-1, dim)), dtype=float)
    qx = qx.reshape(ne, dim + 1, nq, dim)
    ux = np.asarray(u_exact(Xe.reshape(-1, dim)), dtype=float)
    ux = ux.reshape(ne, dim + 1, nq)

    if n_m:
        pts_e = (np.einsum("eij,qj->eqi", mesh.B, quad.points)
                 + mesh.offset[:, None, :])
        qv = np.asarray(q_exact(pts_e.reshape(-1, dim)), dtype=float)
        qv = qv.reshape(ne, len(quad.weights), dim)
        uv = np.asarray(u_exact(pts_e.reshape(-1, dim)), dtype=float)
        uv = uv.reshape(ne, len(quad.weights))
        momq = np.einsum("q,qr,eqs->ers", quad.weights, mom, qv)
        momu = np.einsum("q,qr,eq->er", quad.weights, mom, uv)
        for s in range(dim):
            rows = slice(s * n_m, (s + 1) * n_m)
            A[:, rows, s * l:(s + 1) * l] = mesh.detB[:, None, None] * Vm
            rhs[:, rows] = mesh.detB[:, None] * momq[:, :, s]
        rows = slice(dim * n_m, (dim + 1) * n_m)
        A[:, rows, dim * l:(dim + 1) * l] = mesh.detB[:, None, None] * Vm
        rhs[:, rows] = mesh.detB[:, None] * momu

    row0 = (dim + 1) * n_m
    for lfc in range(dim + 1):
        rows = slice(row0 + lfc * lf, row0 + (lfc + 1) * lf)
        w = wf[:, lfc, :]                                          # (ne, nq)
        trace = phi_f[:, lfc]                                      # (ne, nq, l)
        block_uu = np.einsum("eq,qi,eqj->eij", w, fvals, trace)    # (ne, lf, l)
        for s in range(dim):
            ns = mesh.normals[:, lfc, s]
            A[:, rows, s * l:(s + 1) * l] = ns[:, None, None] * block_uu
        A[:, rows, dim * l:(dim + 1) * l] = \
            taus[:, lfc][:, None, None] * block_uu
        qn = np.einsum("eqs,es->eq", qx[:, lfc], mesh.normals[:, lfc])
        target = qn + taus[:, lfc][:, None] * ux[:, lfc]
        rhs[:, rows] = np.einsum("eq,qi,eq->ei", w, fvals, target)

    sol = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
    resid = np.abs(np.einsum("eij,ej->ei", A, sol) - rhs).max()
    scale = max(np.abs(rhs).max(), 1e-30)
    if resid / scale > 1e-10:
        raise RuntimeError(f"projection system residual {resid/scale:.2e}")
    flux = np.stack([sol[:, s * l:(s + 1) * l].reshape(-1) for s in range(dim)])
    scalar = sol[:, dim * l:(dim + 1) * l].reshape(-1)
    return GridFunction("V", flux), GridFunction("W", scalar)


def eval_gridfunction(gf: GridFunction, layout: DofLayout, mesh: Mesh,
                      basis: ReferenceBasis, element: int, ref_points):
    """Evaluate a scalar or flux grid function on one element.

    Returns (n_pts,) for W and (n_pts, dim) for V. Trace functions live
    on faces and are not evaluable here.
    """
    vals = eval_basis(basis, ref_points)
    sl = slice(element * layout.l_K, (element + 1) * layout.l_K)
    if gf.space == "W":
        return vals @ gf.data[sl]
    if gf.space == "V":
        return np.stack([vals @ gf.data[s, sl] for s in range(layout.dim)],
                        axis=1)
    raise ValueError("only W and V grid functions are element-evaluable")
