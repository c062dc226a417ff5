"""Pointwise semilinear terms F(p, u), with p standing for grad u.

Each term exposes its value and the partial derivatives the Newton
linearization needs, all vectorized over numpy arrays (p has shape
(..., d), u has shape (...)). The discrete flux satisfies q = -grad u,
so the stored flux coefficients enter F negated; that sign lives in
exactly one place, eval_nodal / eval_nodal_jacobian, and nowhere else.

None of the built-ins is globally Lipschitz; no clipping is applied.
"""

import numpy as np


class NonlinearTerm:
    """Contract: value(p, u), d_dp(p, u, s), d_du(p, u)."""

    name = "base"
    depends_on_gradient = False

    def value(self, p, u):
        raise NotImplementedError

    def d_dp(self, p, u, s):
        raise NotImplementedError

    def d_du(self, p, u):
        raise NotImplementedError


class AllenCahn(NonlinearTerm):
    """F = u^3 - u."""

    name = "allen_cahn"

    def value(self, p, u):
        return u ** 3 - u

    def d_dp(self, p, u, s):
        return np.zeros_like(u)

    def d_du(self, p, u):
        return 3.0 * u ** 2 - 1.0


class GradSquared(NonlinearTerm):
    """F = |p|^2."""

    name = "grad_squared"
    depends_on_gradient = True

    def value(self, p, u):
        return (p ** 2).sum(axis=-1)

    def d_dp(self, p, u, s):
        return 2.0 * p[..., s]

    def d_du(self, p, u):
        return np.zeros_like(u)


class Burgers(NonlinearTerm):
    """F = u * (p_1 + ... + p_d), the convective product term."""

    name = "burgers"
    depends_on_gradient = True

    def value(self, p, u):
        return u * p.sum(axis=-1)

    def d_dp(self, p, u, s):
        return np.asarray(u).copy()

    def d_du(self, p, u):
        return p.sum(axis=-1)


class Zero(NonlinearTerm):
    """F = 0, the linear heat baseline."""

    name = "zero"

    def value(self, p, u):
        return np.zeros_like(u)

    def d_dp(self, p, u, s):
        return np.zeros_like(u)

    def d_du(self, p, u):
        return np.zeros_like(u)


BUILTIN_TERMS = {t.name: t for t in (AllenCahn(), GradSquared(), Burgers(), Zero())}


def eval_nodal(term: NonlinearTerm, flux: np.ndarray, gamma: np.ndarray):
    """Nodal values of F at every scalar dof.

    flux has shape (d, N1) (the stored flux coefficients), gamma (N1,).
    Entry j is F(p = -flux[:, j], u = gamma[j]): the flux coefficients
    are negated because they approximate -grad u.
    """
    p = -flux.T
    return term.value(p, gamma)


def eval_nodal_jacobian(term: NonlinearTerm, flux: np.ndarray, gamma: np.ndarray):
    """Partial derivatives of the nodal values of F w.r.t. the coefficients.

    Returns (d_flux, d_gamma): d_flux[s] is the derivative with respect
    to flux component s (chain rule through p_s = -flux_s flips the
    sign), d_gamma the derivative with respect to the scalar dofs.
    """
    p = -flux.T
    d_flux = np.stack([-term.d_dp(p, gamma, s) for s in range(flux.shape[0])])
    d_gamma = term.d_du(p, gamma)
    return d_flux, d_gamma
