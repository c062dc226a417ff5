"""Manufactured problems driving the convergence studies.

Every problem prescribes an exact solution of

    du/dt - laplace(u) + F(grad u, u) = f,   u = 0 on the boundary,

on the unit square or cube, with f worked out analytically from u and
F.  Exact fields are vectorized over point arrays of shape (m, dim);
the exact flux is -grad u, matching the discrete flux variable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nonlinear import BUILTIN_TERMS, NonlinearTerm


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    term: NonlinearTerm
    u0: object          # u0(x) -> (m,)
    source: object      # f(x, t) -> (m,)
    exact_u: object     # u(x, t) -> (m,), None if unknown
    exact_flux: object  # -grad u (x, t) -> (m, dim), None if unknown
    # Optional separated form f(x, t) = sum_i c_i(t) g_i(x), as (c_i, g_i)
    # pairs.  Time steppers project each g_i once and form loads as linear
    # combinations; must agree with source() wherever both are defined.
    source_parts: tuple = None


def _sinprod(x):
    return np.prod(np.sin(np.pi * x), axis=1)


def _cosgrad(x):
    """Componentwise cos(pi x_s) times the sines of the other coordinates."""
    s = np.sin(np.pi * x)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        cols = [s[:, i] for i in range(x.shape[1]) if i != j]
        out[:, j] = np.cos(np.pi * x[:, j]) * np.prod(cols, axis=0)
    return out


def _make_allen_cahn(dim):
    # u = sin(t) prod sin(pi x_i); F = u^3 - u
    lam = dim * np.pi ** 2

    def exact_u(x, t):
        return np.sin(t) * _sinprod(x)

    def exact_flux(x, t):
        return -np.sin(t) * np.pi * _cosgrad(x)

    def source(x, t):
        S = _sinprod(x)
        u = np.sin(t) * S
        return np.cos(t) * S + lam * u + u ** 3 - u

    parts = (
        (lambda t: np.cos(t) + (lam - 1.0) * np.sin(t), _sinprod),
        (lambda t: np.sin(t) ** 3, lambda x: _sinprod(x) ** 3),
    )
    return Problem("allen_cahn", dim, BUILTIN_TERMS["allen_cahn"],
                   u0=lambda x: exact_u(x, 0.0), source=source,
                   exact_u=exact_u, exact_flux=exact_flux,
                   source_parts=parts)


def _make_grad_squared(dim):
    # u = exp(-t) prod sin(pi x_i); F = |grad u|^2
    lam = dim * np.pi ** 2

    def exact_u(x, t):
        return np.exp(-t) * _sinprod(x)

    def exact_flux(x, t):
        return -np.exp(-t) * np.pi * _cosgrad(x)

    def source(x, t):
        u = exact_u(x, t)
        g = np.exp(-t) * np.pi * _cosgrad(x)
        return (lam - 1.0) * u + (g ** 2).sum(axis=1)

    parts = (
        (lambda t: (lam - 1.0) * np.exp(-t), _sinprod),
        (lambda t: np.exp(-2.0 * t),
         lambda x: np.pi ** 2 * (_cosgrad(x) ** 2).sum(axis=1)),
    )
    return Problem("grad_squared", dim, BUILTIN_TERMS["grad_squared"],
                   u0=lambda x: exact_u(x, 0.0), source=source,
                   exact_u=exact_u, exact_flux=exact_flux,
                   source_parts=parts)


def _make_burgers(dim):
    # u = exp(-t) prod sin(pi x_i); F = u * sum_s du/dx_s
    lam = dim * np.pi ** 2

    def exact_u(x, t):
        return np.exp(-t) * _sinprod(x)

    def exact_flux(x, t):
        return -np.exp(-t) * np.pi * _cosgrad(x)

    def source(x, t):
        u = exact_u(x, t)
        g = np.exp(-t) * np.pi * _cosgrad(x)
        return (lam - 1.0) * u + u * g.sum(axis=1)

    parts = (
        (lambda t: (lam - 1.0) * np.exp(-t), _sinprod),
        (lambda t: np.exp(-2.0 * t),
         lambda x: np.pi * _sinprod(x) * _cosgrad(x).sum(axis=1)),
    )
    return Problem("burgers", dim, BUILTIN_TERMS["burgers"],
                   u0=lambda x: exact_u(x, 0.0), source=source,
                   exact_u=exact_u, exact_flux=exact_flux,
                   source_parts=parts)


def _make_zero(dim):
    def zfield(x, t=None):
        return np.zeros(len(x))

    return Problem("zero", dim, BUILTIN_TERMS["zero"],
                   u0=lambda x: np.zeros(len(x)), source=zfield,
                   exact_u=zfield,
                   exact_flux=lambda x, t: np.zeros_like(x),
                   source_parts=())


_FACTORIES = {
    "allen_cahn": _make_allen_cahn,
    "grad_squared": _make_grad_squared,
    "burgers": _make_burgers,
    "zero": _make_zero,
}

PROBLEM_NAMES = tuple(_FACTORIES)


def get_problem(name: str, dim: int) -> Problem:
    if name not in _FACTORIES:
        raise ValueError(f"unknown problem {name!r}, expected one of "
                         f"{sorted(_FACTORIES)}")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    return _FACTORIES[name](dim)
