"""Nodal Lagrange bases and quadrature rules on reference simplices.

The reference element in dimension d is the unit simplex
{x in R^d : x_i >= 0, sum_i x_i <= 1}; its vertices are the origin and
the canonical unit vectors, in that order. Bases are nodal (Lagrange) on
the equispaced lattice, so a coefficient vector doubles as the point
values at the nodes. Quadrature uses the conical-product construction
(Gauss-Legendre crossed with Gauss-Jacobi on the collapsed coordinates),
which keeps every weight positive at any order.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

# Practical caps: degrees above these are rejected with a clear error.
MAX_BASIS_DEGREE = 3
MAX_QUAD_DEGREE = 25


def simplex_measure(dim: int) -> float:
    """Measure of the unit reference simplex: 1, 1/2, 1/6 for d = 1, 2, 3."""
    return 1.0 / math.factorial(dim)


def _multi_indices(k: int, dim: int) -> np.ndarray:
    """Exponent tuples with total degree <= k, ordered by degree then
    by last-component-first lexicographic order, so for k = 1 the tuples
    after the constant follow the coordinate order (1,0,..), (0,1,..), ...
    """
    idx = [e for e in itertools.product(range(k + 1), repeat=dim) if sum(e) <= k]
    idx.sort(key=lambda e: (sum(e), e[::-1]))
    return np.array(idx, dtype=np.int64).reshape(-1, dim)


@dataclass(frozen=True)
class ReferenceBasis:
    """Nodal Lagrange basis of degree k on the reference dim-simplex.

    phi_j(x) = sum_m coeffs[m, j] * x**exponents[m], and phi_j(nodes[i])
    = delta_ij. For k = 0 the single node is the barycenter.
    """

    k: int
    dim: int
    nodes: np.ndarray       # (n_basis, dim)
    exponents: np.ndarray   # (n_mono, dim) integer
    coeffs: np.ndarray      # (n_mono, n_basis)

    @property
    def n_basis(self) -> int:
        return self.nodes.shape[0]


def nodal_basis(k: int, dim: int) -> ReferenceBasis:
    """Build the equispaced nodal basis of degree k on the dim-simplex.

    Parameters
    ----------
    k : int
        Polynomial degree, 0 <= k <= MAX_BASIS_DEGREE.
    dim : int
        Simplex dimension, 1, 2 or 3.

    Returns
    -------
    ReferenceBasis
        Basis with C(k+dim, dim) functions satisfying the Kronecker
        property at its nodes.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    if not 0 <= k <= MAX_BASIS_DEGREE:
        raise ValueError(f"degree {k} outside supported range 0..{MAX_BASIS_DEGREE}")
    expo = _multi_indices(k, dim)
    if k == 0:
        nodes = np.full((1, dim), 1.0 / (dim + 1))
    else:
        nodes = expo.astype(float) / k
    # Vandermonde in the monomial ordering; its inverse gives the
    # monomial coefficients of each Lagrange function.
    vand = np.prod(nodes[:, None, :] ** expo[None, :, :], axis=2)
    coeffs = np.linalg.inv(vand)
    resid = np.abs(vand @ coeffs - np.eye(len(nodes))).max()
    if resid > 1e-10:
        raise RuntimeError(f"nodal system ill-conditioned (residual {resid:.2e})")
    return ReferenceBasis(k=k, dim=dim, nodes=nodes, exponents=expo, coeffs=coeffs)


def _check_points(points: np.ndarray, tol: float) -> None:
    bary = 1.0 - points.sum(axis=1)
    worst = min(points.min(initial=np.inf), bary.min(initial=np.inf))
    if worst < -tol:
        raise ValueError(f"point outside reference simplex by {-worst:.3e}")


def eval_basis(basis: ReferenceBasis, points, validate: bool = True,
               tol: float = 1e-8) -> np.ndarray:
    """Evaluate all basis functions at reference points.

    Returns an array of shape (n_points, n_basis). Points must lie in
    the closed reference simplex up to `tol` when `validate` is set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if validate:
        _check_points(pts, tol)
    mono = np.prod(pts[:, None, :] ** basis.exponents[None, :, :], axis=2)
    return mono @ basis.coeffs


def eval_basis_grad(basis: ReferenceBasis, points, validate: bool = True,
                    tol: float = 1e-8) -> np.ndarray:
    """Reference gradients of all basis functions at the given points.

    Returns an array of shape (n_points, n_basis, dim).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if validate:
        _check_points(pts, tol)
    expo = basis.exponents
    n_pts, dim = pts.shape
    dmono = np.empty((n_pts, expo.shape[0], dim))
    for s in range(dim):
        e_s = expo[:, s]
        # d/dx_s of prod x_r^{e_r}: zero when e_s = 0, else lower the power.
        lowered = pts[:, None, s] ** np.maximum(e_s - 1, 0)[None, :]
        others = np.ones((n_pts, expo.shape[0]))
        for r in range(dim):
            if r != s:
                others *= pts[:, None, r] ** expo[None, :, r]
        dmono[:, :, s] = e_s[None, :] * lowered * others
    return np.einsum("pms,ml->pls", dmono, basis.coeffs)


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference dim-simplex.

    Integrates every polynomial of total degree <= exactness_degree
    exactly; the weights sum to the simplex measure.
    """

    dim: int
    points: np.ndarray    # (n, dim)
    weights: np.ndarray   # (n,)
    exactness_degree: int


def _gauss01(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def _gauss_jacobi01(n: int, alpha: int):
    """Nodes/weights such that sum w_i f(x_i) = int_0^1 f(x) (1-x)^alpha dx."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def simplex_quadrature(min_degree: int, dim: int) -> QuadratureRule:
    """Quadrature on the reference simplex, exact to at least min_degree.

    The conical-product rule with n points per direction integrates all
    polynomials of total degree 2n-1; n is chosen as the smallest count
    meeting the request. Degrees above MAX_QUAD_DEGREE are rejected.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    if min_degree < 0:
        raise ValueError("min_degree must be nonnegative")
    if min_degree > MAX_QUAD_DEGREE:
        raise ValueError(
            f"requested exactness {min_degree} above implemented maximum "
            f"{MAX_QUAD_DEGREE}")
    n = min_degree // 2 + 1
    if dim == 1:
        x, w = _gauss01(n)
        pts = x[:, None]
        wts = w
    elif dim == 2:
        a, wa = _gauss01(n)
        b, wb = _gauss_jacobi01(n, 1)
        # Collapse the square onto the triangle: (a, b) -> (a(1-b), b);
        # the Jacobian (1-b) is absorbed into the Jacobi weight.
        A, B = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        wts = np.outer(wa, wb).ravel()
    else:
        a, wa = _gauss01(n)
        b, wb = _gauss_jacobi01(n, 1)
        c, wc = _gauss_jacobi01(n, 2)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        x = A * (1.0 - B) * (1.0 - C)
        y = B * (1.0 - C)
        pts = np.column_stack([x.ravel(), y.ravel(), C.ravel()])
        wts = np.einsum("i,j,k->ijk", wa, wb, wc).ravel()
    return QuadratureRule(dim=dim, points=pts, weights=wts,
                          exactness_degree=2 * n - 1)


def simplex_monomial_integral(expo) -> float:
    """Closed-form integral of x^a y^b z^c over the unit simplex:
    a! b! c! / (a + b + c + dim)!. Used as the quadrature oracle."""
    expo = tuple(int(e) for e in expo)
    num = 1.0
    for e in expo:
        num *= math.factorial(e)
    return num / math.factorial(sum(expo) + len(expo))
