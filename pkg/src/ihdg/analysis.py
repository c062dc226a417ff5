"""Error measurement and convergence-order reporting.

Errors are elementwise L2 norms against callable exact fields; the
discrete nodal norm uses the coefficient values directly (the basis is
nodal) weighted by h_K^(d/2).  Orders are pairwise log2 ratios between
successively halved meshes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .polybasis import ReferenceBasis, eval_basis, simplex_quadrature
from .spaces import DofLayout, GridFunction


def _quad_data(mesh: Mesh, basis: ReferenceBasis, layout: DofLayout):
    quad = simplex_quadrature(2 * layout.k + 4, mesh.dim)
    vals = eval_basis(basis, quad.points, validate=False)
    pts = (np.einsum("eij,qj->eqi", mesh.B, quad.points)
           + mesh.offset[:, None, :])
    return quad, vals, pts


def l2_error(field: GridFunction, exact, t: float, layout: DofLayout,
             mesh: Mesh, basis: ReferenceBasis) -> float:
    """L2 norm over all elements of (discrete field - exact(x, t)).

    Scalar fields call exact(points, t) -> (m,); flux fields get
    (m, dim) back and the componentwise errors are summed under the
    square root.
    """
    quad, vals, pts = _quad_data(mesh, basis, layout)
    flat = pts.reshape(-1, mesh.dim)
    wq = mesh.detB[:, None] * quad.weights[None, :]
    ne, l = mesh.n_elements, layout.l_K
    if field.space == "W":
        uh = np.einsum("ql,el->eq", vals, field.data.reshape(ne, l))
        diff = uh - np.asarray(exact(flat, t)).reshape(ne, -1)
        return float(np.sqrt((wq * diff ** 2).sum()))
    if field.space == "V":
        coeff = field.data.reshape(mesh.dim, ne, l)
        qh = np.einsum("ql,sel->seq", vals, coeff)
        ex = np.asarray(exact(flat, t))
        ex = ex.reshape(ne, -1, mesh.dim).transpose(2, 0, 1)
        return float(np.sqrt((wq * (qh - ex) ** 2).sum()))
    raise ValueError(f"unsupported space {field.space!r}")


def discrete_h_norm(field: GridFunction, layout: DofLayout,
                    mesh: Mesh) -> float:
    """Nodal-value norm: sqrt(sum_K sum_i w(xi_i)^2 h_K^d).

    The nodal basis makes the coefficient values the nodal values, so no
    evaluation is needed.
    """
    hpow = mesh.element_diameter ** mesh.dim
    ne, l = mesh.n_elements, layout.l_K
    if field.space == "W":
        sq = (field.data.reshape(ne, l) ** 2).sum(axis=1)
    elif field.space == "V":
        sq = (field.data.reshape(mesh.dim, ne, l) ** 2).sum(axis=(0, 2))
    else:
        raise ValueError(f"unsupported space {field.space!r}")
    return float(np.sqrt((hpow * sq).sum()))


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-level errors and pairwise orders for one polynomial degree."""

    k: int
    levels: tuple            # mesh resolution n per level
    n_elements: tuple
    h: tuple
    err_q: tuple
    err_u: tuple
    order_q: tuple           # None at the first level
    order_u: tuple

    def rows(self):
        for i in range(len(self.levels)):
            yield {"k": self.k, "mesh": self.n_elements[i],
                   "err_q": self.err_q[i], "order_q": self.order_q[i],
                   "err_u": self.err_u[i], "order_u": self.order_u[i]}


def pairwise_orders(errors) -> tuple:
    """log2 of successive error ratios; None leads the list."""
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("need at least two levels")
    if any(e < 0 for e in errors):
        raise ValueError("errors must be nonnegative")
    out = [None]
    for a, b in zip(errors, errors[1:]):
        if a > 0 and b > 0:
            out.append(float(np.log2(a / b)))
        else:
            out.append(None)
    return tuple(out)


def convergence_report(k, levels, n_elements, h, err_q, err_u) -> ConvergenceReport:
    return ConvergenceReport(
        k=k, levels=tuple(levels), n_elements=tuple(n_elements),
        h=tuple(h), err_q=tuple(err_q), err_u=tuple(err_u),
        order_q=pairwise_orders(err_q), order_u=pairwise_orders(err_u))
