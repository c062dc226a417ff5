"""Self-contained property suites behind the `checks` subcommand.

Each suite runs on meshes small enough to finish in seconds and reports
one CheckResult. The `mutate` hook deliberately corrupts one input of
the condensation cross-check (gradient-block sign fed to the
elimination path only), so the suite must then report a failure; it
exists to prove the oracle can detect a wrong assembly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .assembly import assemble_static
from .mesh import build_structured_mesh
from .nonlinear import BUILTIN_TERMS
from .polybasis import eval_basis, nodal_basis, simplex_quadrature
from .solver import (apply_operator, backward_euler_residual,
                     condense_and_solve, full_solve)
from .spaces import (GridFunction, build_dof_layout, hdg_project,
                     interpolate_elementwise, l2_project_W)
from .analysis import discrete_h_norm, l2_error

MUTATIONS = ("a2_sign_flip",)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _system(dim, n, k, tau=1.0):
    mesh = build_structured_mesh(dim, n)
    layout = build_dof_layout(mesh, k)
    return mesh, layout, assemble_static(mesh, nodal_basis(k, dim),
                                         layout, tau)


def check_basis(rng) -> CheckResult:
    worst = 0.0
    for dim in (2, 3):
        for k in (0, 1, 2):
            basis = nodal_basis(k, dim)
            ident = eval_basis(basis, basis.nodes)
            worst = max(worst, np.abs(ident - np.eye(basis.n_basis)).max())
            pts = rng.random((20, dim)) * (1.0 / dim)
            worst = max(worst,
                        np.abs(eval_basis(basis, pts).sum(axis=1) - 1).max())
    return CheckResult("basis_nodal_delta_and_unity", worst <= 1e-10,
                       f"max deviation {worst:.2e}")


def check_quadrature(rng) -> CheckResult:
    # monomial integrals over the reference simplex have the closed form
    # a! b! (c!) / (|a| + dim)!
    worst = 0.0
    for dim in (2, 3):
        for deg in (1, 3, 6):
            quad = simplex_quadrature(deg, dim)
            for _ in range(10):
                expo = rng.integers(0, deg + 1, size=dim)
                while expo.sum() > deg:
                    expo = rng.integers(0, deg + 1, size=dim)
                got = (quad.weights
                       * np.prod(quad.points ** expo, axis=1)).sum()
                num = 1.0
                for e in expo:
                    num *= math.factorial(e)
                exact = num / math.factorial(expo.sum() + dim)
                worst = max(worst, abs(got - exact) / exact)
    return CheckResult("quadrature_monomial_exactness", worst <= 1e-12,
                       f"max relative deviation {worst:.2e}")


def check_projections(rng) -> CheckResult:
    # an element of the space is reproduced by both interpolation and
    # L2 projection; the coupled projection must satisfy its own system
    worst = 0.0
    for dim, n, k in ((2, 3, 1), (3, 2, 1)):
        mesh, layout, _ = _system(dim, n, k)
        basis = nodal_basis(k, dim)
        quad = simplex_quadrature(2 * k + 4, dim)
        coef = rng.standard_normal(dim + 1)

        def poly(x):
            return coef[0] + x @ coef[1:]

        pi = interpolate_elementwise(poly, layout, mesh, basis)
        pr = l2_project_W(poly, layout, mesh, basis, quad)
        worst = max(worst, np.abs(pi.data - pr.data).max())
        try:
            hdg_project(lambda x: np.tile(coef[1:], (len(x), 1)), poly,
                        1.0, layout, mesh, basis, quad)
        except RuntimeError as exc:
            return CheckResult("projection_consistency", False, str(exc))
    return CheckResult("projection_consistency", worst <= 1e-11,
                       f"interpolation vs projection {worst:.2e}")


def check_condensation(rng, mutate=None) -> CheckResult:
    mesh, lay, system = _system(2, 3, 1)
    term = BUILTIN_TERMS["allen_cahn"]
    quad = simplex_quadrature(2 * lay.k + 4, 2)
    gamma = l2_project_W(lambda x: np.prod(np.sin(np.pi * x), axis=1),
                         lay, mesh, nodal_basis(1, 2), quad).data
    flux = 0.4 * rng.standard_normal((2, lay.N1))
    trace = 0.4 * rng.standard_normal(lay.N2)
    _, blocks = backward_euler_residual(
        "interpolatory", system, term, flux, gamma, trace, gamma, 0.05,
        np.zeros(lay.N1))
    b1 = rng.standard_normal((2, lay.N1))
    b2 = rng.standard_normal(lay.N1)
    b3 = rng.standard_normal(lay.N2)

    cond_system = system
    if mutate == "a2_sign_flip":
        cond_system = replace(system, grad_blk=-system.grad_blk)
    try:
        xc, yc, zc = condense_and_solve(cond_system, blocks, b1, b2, b3)
    except ArithmeticError as exc:
        return CheckResult("condensation_vs_full", False, str(exc))
    xf, yf, zf = full_solve(system, blocks, b1, b2, b3)
    scale = max(np.abs(xf).max(), np.abs(yf).max(), np.abs(zf).max())
    diff = max(np.abs(xc - xf).max(), np.abs(yc - yf).max(),
               np.abs(zc - zf).max()) / scale
    return CheckResult("condensation_vs_full", diff <= 1e-9,
                       f"relative deviation {diff:.2e}")


def check_jacobian_fd(rng) -> CheckResult:
    mesh, lay, system = _system(2, 3, 1)
    term = BUILTIN_TERMS["burgers"]
    quad = simplex_quadrature(2 * lay.k + 4, 2)
    gamma = l2_project_W(lambda x: 0.5 * np.prod(np.sin(np.pi * x), axis=1),
                         lay, mesh, nodal_basis(1, 2), quad).data
    flux = 0.5 * rng.standard_normal((2, lay.N1))
    trace = 0.3 * rng.standard_normal(lay.N2)
    load = np.zeros(lay.N1)
    r0, jac = backward_euler_residual(
        "interpolatory", system, term, flux, gamma, trace, gamma, 0.1, load)

    def flat(r):
        return np.concatenate([r[0].ravel(), r[1], r[2]])

    g0 = flat(r0)
    vx = rng.standard_normal(flux.shape)
    vy = rng.standard_normal(lay.N1)
    vz = rng.standard_normal(lay.N2)
    jv = flat(apply_operator(system, jac, vx, vy, vz))

    def remainder(eps):
        r = backward_euler_residual(
            "interpolatory", system, term, flux + eps * vx, gamma + eps * vy,
            trace + eps * vz, gamma, 0.1, load)[0]
        return np.abs(flat(r) - g0 - eps * jv).max()

    ratio = remainder(1e-4) / remainder(5e-5)
    return CheckResult("jacobian_directional_fd", 3.5 <= ratio <= 4.5,
                       f"halving ratio {ratio:.3f}")


def sample_norm_ratios(dim, k, n, rng, count, space):
    """Ratios |w|_L2 / |w|_h for random single-element fields.

    The equivalence constants are per-element quantities; localized
    samples draw from the same ratio distribution on every level
    (congruent elements), so the sampled bracket is h-independent.
    Dense iid fields would concentrate as the element count grows and
    systematically tighten the extremes.
    """
    mesh, layout, _ = _system(dim, n, k)
    basis = nodal_basis(k, dim)
    ratios = []
    for _ in range(count):
        e = rng.integers(layout.n_elements)
        if space == "W":
            data = np.zeros(layout.N1)
            data.reshape(-1, layout.l_K)[e] = rng.standard_normal(layout.l_K)
            gf = GridFunction("W", data)
            zero = lambda x, t: np.zeros(len(x))
        else:
            data = np.zeros((dim, layout.N1))
            data.reshape(dim, -1, layout.l_K)[:, e] = \
                rng.standard_normal((dim, layout.l_K))
            gf = GridFunction("V", data)
            zero = lambda x, t: np.zeros_like(x)
        ratios.append(l2_error(gf, zero, 0.0, layout, mesh, basis)
                      / discrete_h_norm(gf, layout, mesh))
    return ratios


def check_norm_equivalence(rng) -> CheckResult:
    drifts = []
    for space in ("W", "V"):
        lo, hi = [], []
        for n in (2, 4, 8):
            ratios = sample_norm_ratios(2, 1, n, rng, 100, space)
            lo.append(min(ratios))
            hi.append(max(ratios))
        drifts.append(max(max(hi) / min(hi), max(lo) / min(lo)) - 1.0)
    drift = max(drifts)
    return CheckResult("norm_equivalence_bracket", drift < 0.05,
                       f"endpoint drift {100 * drift:.2f}%")


def run_all(seed: int = 0, mutate: str | None = None) -> list:
    """Run every suite with independent seeded rngs; deterministic."""
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}, expected one of "
                         f"{MUTATIONS}")
    ss = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(6)]
    return [
        check_basis(rngs[0]),
        check_quadrature(rngs[1]),
        check_projections(rngs[2]),
        check_condensation(rngs[3], mutate=mutate),
        check_jacobian_fd(rngs[4]),
        check_norm_equivalence(rngs[5]),
    ]
