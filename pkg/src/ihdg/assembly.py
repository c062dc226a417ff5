"""Assembly of the time-independent blocks and the per-iteration objects.

The saddle-point system couples flux, scalar and trace unknowns through
eight time-independent blocks: the scalar mass (block diagonal, one
l_K-by-l_K block per element), the gradient couplings per component, the
trace couplings per component, and three stabilization blocks (scalar
boundary mass over all element faces, scalar-trace coupling and trace
mass over interior faces). Everything element-local is stored as batched
(ne, ., .) arrays; trace-coupled blocks use per-element column layouts
of (dim+1)*l_face slots, with boundary-face slots zeroed and their
column index pointing at a padding dof.

Blocks are stored unsigned (each equals its defining bilinear form); the
solver composes the saddle-point matrix with the appropriate signs, so
the sign convention lives in exactly one place.

Per Newton iteration the standard path integrates F and F' against the
current iterate by quadrature, while the interpolatory path only scales
mass-block columns by nodal values, with no quadrature at all.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .nonlinear import NonlinearTerm, eval_nodal, eval_nodal_jacobian
from .polybasis import (
    QuadratureRule,
    ReferenceBasis,
    eval_basis,
    eval_basis_grad,
    nodal_basis,
    simplex_measure,
    simplex_quadrature,
)
from .spaces import DofLayout, face_chart_points, tau_array


@dataclass(frozen=True)
class BlockDiagMatrix:
    """Square matrix whose nonzeros sit in per-element diagonal blocks."""

    blocks: np.ndarray   # (ne, l, l)

    @property
    def shape(self):
        n = self.blocks.shape[0] * self.blocks.shape[1]
        return (n, n)

    def tocsr(self) -> sp.csr_matrix:
        return blockdiag_csr(self.blocks)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        ne, l, _ = self.blocks.shape
        return np.einsum("eij,ej->ei", self.blocks, v.reshape(ne, l)).reshape(-1)


def blockdiag_csr(blocks: np.ndarray) -> sp.csr_matrix:
    ne, l, _ = blocks.shape
    rows = (np.arange(ne)[:, None, None] * l + np.arange(l)[None, :, None])
    rows = np.broadcast_to(rows, blocks.shape).ravel()
    cols = (np.arange(ne)[:, None, None] * l + np.arange(l)[None, None, :])
    cols = np.broadcast_to(cols, blocks.shape).ravel()
    n = ne * l
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class TracePattern:
    """Precomputed CSR skeleton for scattering (ne, nt, nt) element
    contributions into the global trace matrix. The sparsity, the entry
    ordering and the duplicate groups never change between iterations,
    so each assembly is a permutation plus a segmented sum."""

    N2: int
    sel: np.ndarray          # positions of interior-interior entries
    perm: np.ndarray         # sorts selected entries by (row, col)
    group_starts: np.ndarray
    indices: np.ndarray      # CSR column indices
    indptr: np.ndarray

    def assemble(self, contrib: np.ndarray) -> sp.csr_matrix:
        data = contrib.reshape(-1)[self.sel][self.perm]
        vals = np.add.reduceat(data, self.group_starts)
        return sp.csr_matrix((vals, self.indices, self.indptr),
                             shape=(self.N2, self.N2))


def _build_trace_pattern(layout: DofLayout) -> TracePattern:
    dofs = layout.elem_trace_dofs
    mask = layout.elem_trace_mask
    rows = np.broadcast_to(dofs[:, :, None], dofs.shape + dofs.shape[1:2])
    cols = np.broadcast_to(dofs[:, None, :], rows.shape)
    keep = np.broadcast_to(mask[:, :, None] & mask[:, None, :], rows.shape)
    sel = np.flatnonzero(keep.reshape(-1))
    r = rows.reshape(-1)[sel]
    c = cols.reshape(-1)[sel]
    perm = np.lexsort((c, r))
    rs, cs = r[perm], c[perm]
    if len(rs):
        new = np.flatnonzero((np.diff(rs) != 0) | (np.diff(cs) != 0)) + 1
        group_starts = np.concatenate([[0], new])
    else:
        group_starts = np.zeros(0, dtype=np.int64)
    grow = rs[group_starts] if len(rs) else np.zeros(0, dtype=np.int64)
    gcol = cs[group_starts] if len(rs) else np.zeros(0, dtype=np.int64)
    counts = np.bincount(grow, minlength=layout.N2)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return TracePattern(N2=layout.N2, sel=sel, perm=perm,
                        group_starts=group_starts, indices=gcol,
                        indptr=indptr.astype(np.int64))


@dataclass(frozen=True)
class HDGSystem:
    """Time-independent discrete operators plus shared evaluation caches."""

    mesh: Mesh
    basis: ReferenceBasis
    face_basis: ReferenceBasis
    layout: DofLayout
    taus: np.ndarray          # (ne, dim+1)
    quad: QuadratureRule
    face_quad: QuadratureRule
    mass_ref: np.ndarray      # (l, l) reference mass matrix
    mass_ref_inv: np.ndarray
    A1_blk: np.ndarray        # (ne, l, l) scalar mass
    grad_blk: np.ndarray      # (dim, ne, l, l)  [(phi_j, d_s phi_i)]
    face_blk: np.ndarray      # (dim, ne, l, nt) [<psi_j, phi_i n_s>], interior
    A6_blk: np.ndarray        # (ne, l, l) tau-weighted boundary mass, all faces
    A7_blk: np.ndarray        # (ne, l, nt) tau-weighted scalar-trace coupling
    A8_blk: np.ndarray        # (ne, nt, nt) per-element side of the trace mass
    nl_weights: np.ndarray    # (ne, nq) jacobian-scaled weights, degree 3k+2
    nl_vals: np.ndarray       # (nq, l)
    trace_pattern: TracePattern

    @property
    def dim(self) -> int:
        return self.mesh.dim

    # Static products consumed by the elementwise elimination.  E is the
    # per-element inverse of the scalar mass; everything E-weighted here
    # is iterate-independent, so the Newton loop only assembles what the
    # nonlinearity actually changes.
    @cached_property
    def E_blk(self) -> np.ndarray:
        return self.mass_ref_inv[None] / self.mesh.detB[:, None, None]

    @cached_property
    def EG(self) -> np.ndarray:
        return np.matmul(self.E_blk[None], self.grad_blk)

    @cached_property
    def EF(self) -> np.ndarray:
        return np.matmul(self.E_blk[None], self.face_blk)

    @cached_property
    def GtEG_sum(self) -> np.ndarray:
        Gt = self.grad_blk.transpose(0, 1, 3, 2)
        return np.matmul(Gt, self.EG).sum(axis=0)

    @cached_property
    def GtEF_sum(self) -> np.ndarray:
        Gt = self.grad_blk.transpose(0, 1, 3, 2)
        return np.matmul(Gt, self.EF).sum(axis=0)

    @cached_property
    def FtEG_A7t(self) -> np.ndarray:
        Ft = self.face_blk.transpose(0, 1, 3, 2)
        return (np.matmul(Ft, self.EG).sum(axis=0)
                + self.A7_blk.transpose(0, 2, 1))

    @cached_property
    def FtEF_sum(self) -> np.ndarray:
        Ft = self.face_blk.transpose(0, 1, 3, 2)
        return np.matmul(Ft, self.EF).sum(axis=0)

    def gather_trace(self, z: np.ndarray) -> np.ndarray:
        """Per-element view (ne, nt) of a trace vector, zero on boundary slots."""
        return np.append(z, 0.0)[self.layout.elem_trace_dofs]

    def scatter_trace(self, contrib: np.ndarray) -> np.ndarray:
        """Accumulate per-element (ne, nt) face contributions into (N2,)."""
        flat = np.bincount(self.layout.elem_trace_dofs.reshape(-1),
                           weights=contrib.reshape(-1),
                           minlength=self.layout.N2 + 1)
        return flat[:self.layout.N2]

    # Global CSR views, used by the unreduced solve path and by tests.
    def A1_csr(self):
        return blockdiag_csr(self.A1_blk)

    def A6_csr(self):
        return blockdiag_csr(self.A6_blk)

    def grad_csr(self, s):
        return blockdiag_csr(self.grad_blk[s])

    def face_csr(self, s):
        return self._coupling_csr(self.face_blk[s])

    def A7_csr(self):
        return self._coupling_csr(self.A7_blk)

    def A8_csr(self):
        lay = self.layout
        rows = np.broadcast_to(lay.elem_trace_dofs[:, :, None], self.A8_blk.shape)
        cols = np.broadcast_to(lay.elem_trace_dofs[:, None, :], self.A8_blk.shape)
        keep = (rows < lay.N2) & (cols < lay.N2)
        return sp.coo_matrix(
            (self.A8_blk[keep], (rows[keep], cols[keep])),
            shape=(lay.N2, lay.N2)).tocsr()

    def _coupling_csr(self, blk):
        lay = self.layout
        ne, l, nt = blk.shape
        rows = np.broadcast_to(
            (np.arange(ne)[:, None, None] * l + np.arange(l)[None, :, None]),
            blk.shape)
        cols = np.broadcast_to(lay.elem_trace_dofs[:, None, :], blk.shape)
        keep = cols < lay.N2
        return sp.coo_matrix((blk[keep], (rows[keep], cols[keep])),
                             shape=(lay.N1, lay.N2)).tocsr()


def assemble_static(mesh: Mesh, basis: ReferenceBasis, layout: DofLayout,
                    tau) -> HDGSystem:
    """Assemble every time-independent block of the discrete system.

    Element integrals use quadrature exact to degree 2k+1, face integrals
    to degree 2k+1 as well (the integrands are products of two degree-k
    traces). tau must be positive on every face side.
    """
    taus = tau_array(mesh, tau)
    if (taus <= 0).any():
        raise ValueError("tau must be positive on every face side")
    dim, k, l = mesh.dim, layout.k, layout.l_K
    ne, nt = mesh.n_elements, layout.n_trace_cols
    fbasis = nodal_basis(k, dim - 1)

    quad = simplex_quadrature(2 * k + 1, dim)
    vals = eval_basis(basis, quad.points, validate=False)
    grads = eval_basis_grad(basis, quad.points, validate=False)
    mass_ref = np.einsum("q,qi,qj->ij", quad.weights, vals, vals)
    grad_ref = np.einsum("q,qir,qj->rij", quad.weights, grads, vals)
    A1_blk = mesh.detB[:, None, None] * mass_ref
    grad_blk = np.einsum("e,esr,rij->seij", mesh.detB, mesh.invBT, grad_ref)

    face_quad = simplex_quadrature(2 * k + 1, dim - 1)
    fvals = eval_basis(fbasis, face_quad.points, validate=False)
    Xf = face_chart_points(mesh, face_quad.points)
    wq_f = (mesh.face_measure[:, None] / simplex_measure(dim - 1)
            * face_quad.weights[None, :])
    nq = len(face_quad.weights)
    Xe = Xf[mesh.element_faces]
    xi = np.einsum("eij,efqj->efqi", np.linalg.inv(mesh.B),
                   Xe - mesh.offset[:, None, None, :])
    phi_f = eval_basis(basis, xi.reshape(-1, dim), validate=False)
    phi_f = phi_f.reshape(ne, dim + 1, nq, l)
    wf = wq_f[mesh.element_faces]
    elem_int = layout.interior_face_index[mesh.element_faces] >= 0

    lf = fbasis.n_basis
    face_blk = np.zeros((dim, ne, l, nt))
    A6_blk = np.zeros((ne, l, l))
    A7_blk = np.zeros((ne, l, nt))
    A8_blk = np.zeros((ne, nt, nt))
    for lfc in range(dim + 1):
        w = wf[:, lfc]
        phi = phi_f[:, lfc]
        t = taus[:, lfc][:, None, None]
        pp = np.einsum("eq,eqi,eqj->eij", w, phi, phi)
        A6_blk += t * pp
        pf = np.einsum("eq,eqi,qj->eij", w, phi, fvals)
        ff = np.einsum("eq,qi,qj->eij", w, fvals, fvals)
        keep = elem_int[:, lfc].astype(float)[:, None, None]
        cols = slice(lfc * lf, (lfc + 1) * lf)
        for s in range(dim):
            face_blk[s, :, :, cols] = \
                mesh.normals[:, lfc, s][:, None, None] * pf * keep
        A7_blk[:, :, cols] = t * pf * keep
        A8_blk[:, cols, cols] = t * ff * keep

    nl_quad = simplex_quadrature(3 * k + 2, dim)
    nl_vals = eval_basis(basis, nl_quad.points, validate=False)
    nl_weights = mesh.detB[:, None] * nl_quad.weights[None, :]

    return HDGSystem(mesh=mesh, basis=basis, face_basis=fbasis, layout=layout,
                     taus=taus, quad=quad, face_quad=face_quad,
                     mass_ref=mass_ref, mass_ref_inv=np.linalg.inv(mass_ref),
                     A1_blk=A1_blk, grad_blk=grad_blk, face_blk=face_blk,
                     A6_blk=A6_blk, A7_blk=A7_blk, A8_blk=A8_blk,
                     nl_weights=nl_weights, nl_vals=nl_vals,
                     trace_pattern=_build_trace_pattern(layout))


def assemble_load(f, t: float, layout: DofLayout, mesh: Mesh,
                  basis: ReferenceBasis, quad: QuadratureRule) -> np.ndarray:
    """Load vector of (f(., t), phi_i) over all elements.

    f is called as f(points, t) with points of shape (m, dim).
    """
    vals = eval_basis(basis, quad.points, validate=False)
    pts = (np.einsum("eij,qj->eqi", mesh.B, quad.points)
           + mesh.offset[:, None, :])
    fq = np.asarray(f(pts.reshape(-1, mesh.dim), t), dtype=float)
    fq = fq.reshape(mesh.n_elements, len(quad.weights))
    b = np.einsum("e,q,eq,qi->ei", mesh.detB, quad.weights, fq, vals)
    return b.reshape(layout.N1)


def _standard_kernel(term, gamma_e, weights, vals, want_matrix):
    """Quadrature of F and optionally F' against the current scalar iterate."""
    uq = np.einsum("ql,el->eq", vals, gamma_e)
    p = np.zeros(uq.shape + (1,))     # F(u) only; gradient slot unused
    b2 = np.einsum("eq,ql->el", weights * term.value(p, uq), vals)
    if not want_matrix:
        return None, b2
    A9 = np.einsum("eq,qi,qj->eij", weights * term.d_du(p, uq), vals, vals)
    return A9, b2


def assemble_standard_nonlinear(term: NonlinearTerm, gamma: np.ndarray,
                                layout: DofLayout, mesh: Mesh,
                                basis: ReferenceBasis, quad: QuadratureRule):
    """Quadrature-based Newton objects of the standard method.

    Returns (A9, b2) with A9 sharing the scalar mass sparsity. Only
    terms with F = F(u) are admitted on this path.
    """
    if term.depends_on_gradient:
        raise ValueError(
            f"{term.name} depends on the gradient; the standard path "
            "supports F = F(u) only")
    vals = eval_basis(basis, quad.points, validate=False)
    weights = mesh.detB[:, None] * quad.weights[None, :]
    gamma_e = gamma.reshape(mesh.n_elements, layout.l_K)
    A9, b2 = _standard_kernel(term, gamma_e, weights, vals, True)
    return BlockDiagMatrix(A9), b2.reshape(layout.N1)


def standard_nonlinear(term: NonlinearTerm, gamma: np.ndarray,
                       system: "HDGSystem"):
    """Per-iteration Newton objects by quadrature, reusing cached basis data.

    Same mathematics as assemble_standard_nonlinear but returns the raw
    block array and skips re-evaluating the basis at the quadrature
    points; this is the hot path timed against the interpolatory one.
    """
    if term.depends_on_gradient:
        raise ValueError(
            f"{term.name} depends on the gradient; the standard path "
            "supports F = F(u) only")
    lay = system.layout
    gamma_e = gamma.reshape(lay.n_elements, lay.l_K)
    A9, b2 = _standard_kernel(term, gamma_e, system.nl_weights,
                              system.nl_vals, True)
    return A9, b2.reshape(lay.N1)


@dataclass(frozen=True)
class InterpolatoryJacobian:
    """Jacobian blocks of the interpolated nonlinear term.

    d_gamma is the scalar-coefficient block (ne, l, l); d_flux holds one
    block per flux component, or None when F is gradient-independent
    (those blocks vanish identically).
    """

    d_flux: np.ndarray | None
    d_gamma: np.ndarray


def interpolatory_nonlinear(term: NonlinearTerm, flux: np.ndarray,
                            gamma: np.ndarray, system: HDGSystem):
    """Nodal-interpolant nonlinear term: applied vector and Jacobian blocks.

    The applied vector is the scalar mass matrix times the nodal values
    of F (a sparse product, no quadrature); each Jacobian block is the
    mass with its columns scaled by the corresponding nodal derivative.
    """
    lay = system.layout
    ne, l = lay.n_elements, lay.l_K
    fvals = eval_nodal(term, flux, gamma)
    applied = np.einsum("eij,ej->ei", system.A1_blk,
                        fvals.reshape(ne, l)).reshape(lay.N1)
    d_flux, d_gamma = eval_nodal_jacobian(term, flux, gamma)
    jac_gamma = system.A1_blk * d_gamma.reshape(ne, 1, l)
    if term.depends_on_gradient:
        jac_flux = system.A1_blk[None] * d_flux.reshape(-1, ne, 1, l)
    else:
        jac_flux = None
    return applied, InterpolatoryJacobian(d_flux=jac_flux, d_gamma=jac_gamma)
