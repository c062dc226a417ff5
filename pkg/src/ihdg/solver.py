"""Backward-Euler stepping with Newton iteration and static condensation.

Each implicit step solves a block system in the flux components x_s, the
scalar y and the trace z.  With the time-independent blocks of
``HDGSystem`` and the state-dependent Newton blocks, the system reads

    [ A1           -grad_s      +face_s ] [x_s]   [b1_s]
    [ grad_s^T+J_s  W           -A7     ] [ y ] = [b2  ]
    [ face_s^T      A7^T        -A8     ] [ z ]   [b3  ]

with W = A6 + dt^-1 A1 + (d/dy of the nonlinear term) and J_s the
flux-coupling blocks of a gradient-dependent nonlinearity (absent
otherwise).  The flux rows are eliminated per element (A1 is block
diagonal), the scalar rows are eliminated through the local Schur
complement Q, and only the trace system is solved globally.  A sparse
unreduced path over the same blocks serves as oracle.

Coefficient ordering of the unreduced vector: x_1, .., x_d, y, z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from time import perf_counter

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (HDGSystem, assemble_load, assemble_static,
                       blockdiag_csr, interpolatory_nonlinear,
                       standard_nonlinear)
from .mesh import Mesh
from .polybasis import eval_basis, nodal_basis, simplex_quadrature
from .spaces import build_dof_layout, l2_project_W

METHODS = ("interpolatory", "standard")


class NonConvergenceError(RuntimeError):
    """Newton exhausted its iteration budget."""

    def __init__(self, iterations: int, residual: float, detail: str = ""):
        self.iterations = iterations
        self.residual = residual
        msg = (f"Newton did not converge in {iterations} iterations "
               f"(last residual {residual:.3e})")
        super().__init__(msg + detail)


class SingularTraceError(RuntimeError):
    """The condensed trace matrix could not be factorized."""


class SingularBlockError(RuntimeError):
    """A local Schur block Q was singular during elimination."""

    def __init__(self, element: int):
        self.element = element
        super().__init__(
            f"local elimination failed on element {element}: the scalar "
            "Schur block is singular; this can happen for large time "
            "steps, retry with a smaller dt")


@dataclass(frozen=True)
class NewtonConfig:
    residual_tol: float = 1e-10   # absolute inf-norm of the step residual
    step_tol: float = 1e-12       # inf-norm of the Newton update
    max_iterations: int = 25

    def __post_init__(self):
        if self.residual_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class StepState:
    """Coefficients at one time level plus diagnostics of the step."""

    index: int
    time: float
    flux: np.ndarray      # (dim, N1)
    scalar: np.ndarray    # (N1,)
    trace: np.ndarray     # (N2,)
    n_newton: int = 0
    residual: float = 0.0
    residual_history: tuple = ()
    t_nonlinear: float = 0.0   # nonlinear evaluation / quadrature
    t_jacobian: float = 0.0    # condensation algebra and trace assembly
    t_solve: float = 0.0       # trace factorization and back-substitution
    # one (t_nonlinear, t_jacobian, t_solve) triple per Newton iteration;
    # the trailing convergence check is counted in the totals only
    iteration_times: tuple = ()


@dataclass(frozen=True)
class JacobianBlocks:
    """State-dependent blocks completing the static operator.

    W is the scalar/scalar block (ne, l, l); flux_coupling holds the
    per-component scalar-row blocks (dim, ne, l, l) or None when the
    nonlinearity does not couple to the flux.
    """

    W: np.ndarray
    flux_coupling: np.ndarray | None = None


@dataclass(frozen=True)
class CondensedSystem:
    """Trace system plus the element data recovering the inner unknowns."""

    Eb1: np.ndarray            # (dim, ne, l) mass-solved flux right side
    Bt2: np.ndarray            # (ne, l, nt)
    bt2: np.ndarray            # (ne, l)
    trace_matrix: sp.csr_matrix
    trace_rhs: np.ndarray

    def back_substitute(self, system: HDGSystem, z: np.ndarray):
        """Recover (flux, scalar) from a trace solution.

        The scalar comes from the stored Schur data; the flux then
        follows from its own (block diagonal) equation, which avoids
        materializing the per-element flux recovery matrices.
        """
        lay = system.layout
        ze = system.gather_trace(z)
        y = np.einsum("eln,en->el", self.Bt2, ze) + self.bt2
        flux = (self.Eb1 + np.einsum("seij,ej->sei", system.EG, y)
                - np.einsum("seln,en->sel", system.EF, ze))
        return flux.reshape(system.dim, lay.N1), y.reshape(lay.N1)


def nonlinear_parts(method: str, term, flux, gamma, system: HDGSystem):
    """Applied nonlinear vector and Jacobian blocks at the given iterate.

    Returns (applied, d_gamma, d_flux) with applied of shape (N1,),
    d_gamma (ne, l, l) and d_flux (dim, ne, l, l) or None.
    """
    if method == "interpolatory":
        applied, jac = interpolatory_nonlinear(term, flux, gamma, system)
        return applied, jac.d_gamma, jac.d_flux
    if method == "standard":
        A9, b2 = standard_nonlinear(term, gamma, system)
        return b2, A9, None
    raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")


def apply_operator(system: HDGSystem, blocks: JacobianBlocks,
                   flux, scalar, trace):
    """Action of the block operator on (flux, scalar, trace)."""
    lay = system.layout
    d, ne, l = system.dim, lay.n_elements, lay.l_K
    x = flux.reshape(d, ne, l)
    y = scalar.reshape(ne, l)
    ze = system.gather_trace(trace)

    r1 = (np.einsum("eij,sej->sei", system.A1_blk, x)
          - np.einsum("seij,ej->sei", system.grad_blk, y)
          + np.einsum("seln,en->sel", system.face_blk, ze))

    C = system.grad_blk.transpose(0, 1, 3, 2)
    if blocks.flux_coupling is not None:
        C = C + blocks.flux_coupling
    r2 = (np.einsum("seij,sej->sei", C, x).sum(axis=0)
          + np.einsum("eij,ej->ei", blocks.W, y)
          - np.einsum("eln,en->el", system.A7_blk, ze))

    r3c = (np.einsum("seln,sel->en", system.face_blk, x)
           + np.einsum("eln,el->en", system.A7_blk, y)
           - np.einsum("enm,em->en", system.A8_blk, ze))
    return (r1.reshape(d, lay.N1), r2.reshape(lay.N1),
            system.scatter_trace(r3c))


def _mass_apply(system: HDGSystem, y: np.ndarray) -> np.ndarray:
    lay = system.layout
    out = np.einsum("eij,ej->ei", system.A1_blk,
                    y.reshape(lay.n_elements, lay.l_K))
    return out.reshape(lay.N1)


def backward_euler_residual(method: str, system: HDGSystem, term,
                            flux, scalar, trace, prev_scalar,
                            dt: float, load):
    """Residual G of one implicit step and the Jacobian blocks at the iterate.

    load is the assembled source vector at the new time level.  Returns
    ((r1, r2, r3), JacobianBlocks).
    """
    applied, d_gamma, d_flux = nonlinear_parts(method, term, flux, scalar,
                                               system)
    lin_W = system.A6_blk + system.A1_blk / dt
    r1, r2, r3 = apply_operator(system, JacobianBlocks(W=lin_W),
                                flux, scalar, trace)
    r2 = r2 + applied - load - _mass_apply(system, prev_scalar) / dt
    return (r1, r2, r3), JacobianBlocks(W=lin_W + d_gamma,
                                        flux_coupling=d_flux)


def _residual_norm(r1, r2, r3) -> float:
    n = max(np.abs(r1).max(), np.abs(r2).max())
    if r3.size:
        n = max(n, np.abs(r3).max())
    return float(n)


def _solve_blocks(Q, rhs):
    """Batched solve of many small dense systems Q[e] X[e] = rhs[e].

    The degree 0/1 block sizes (1 and 3) dominate runtime, so those get
    closed-form inverses; everything else goes through LAPACK.
    """
    l = Q.shape[1]
    if l == 1:
        det = Q[:, 0, 0]
        bad = ~np.isfinite(det) | (det == 0.0)
        if bad.any():
            raise SingularBlockError(int(np.argmax(bad)))
        return rhs / det[:, None, None]
    if l == 3:
        a, b, c = Q[:, 0, 0], Q[:, 0, 1], Q[:, 0, 2]
        d, e, f = Q[:, 1, 0], Q[:, 1, 1], Q[:, 1, 2]
        g, h, i = Q[:, 2, 0], Q[:, 2, 1], Q[:, 2, 2]
        ca, cb, cc = e * i - f * h, f * g - d * i, d * h - e * g
        det = a * ca + b * cb + c * cc
        scale = np.abs(Q).max(axis=(1, 2)) ** 3
        bad = ~np.isfinite(det) | (np.abs(det) <= 1e-14 * scale)
        if bad.any():
            ratio = np.abs(det) / np.maximum(scale, np.finfo(float).tiny)
            raise SingularBlockError(int(np.argmin(ratio)))
        adj = np.empty_like(Q)
        adj[:, 0, 0] = ca
        adj[:, 0, 1] = c * h - b * i
        adj[:, 0, 2] = b * f - c * e
        adj[:, 1, 0] = cb
        adj[:, 1, 1] = a * i - c * g
        adj[:, 1, 2] = c * d - a * f
        adj[:, 2, 0] = cc
        adj[:, 2, 1] = b * g - a * h
        adj[:, 2, 2] = a * e - b * d
        return np.matmul(adj, rhs) / det[:, None, None]
    try:
        return np.linalg.solve(Q, rhs)
    except np.linalg.LinAlgError:
        dets = np.abs(np.linalg.det(Q))
        raise SingularBlockError(int(np.argmin(dets))) from None


def _condense(system: HDGSystem, blocks: JacobianBlocks,
              b1, b2, b3) -> CondensedSystem:
    """Eliminate flux and scalar unknowns elementwise.

    The flux rows give x_s = E (b1_s + grad_s y - face_s z) with E the
    per-element mass inverse; substituting into the scalar rows yields
    the small Schur systems Q y = rhs + R z, and the trace rows then
    close a global system in z alone.
    """
    lay = system.layout
    d, ne, l = system.dim, lay.n_elements, lay.l_K
    nt = lay.n_trace_cols

    b1e = b1.reshape(d, ne, l)
    Eb1 = np.einsum("eij,sej->sei", system.E_blk, b1e)

    if blocks.flux_coupling is None:
        # C = grad^T elementwise; every C-product is precomputed.
        Q = blocks.W + system.GtEG_sum
        Rz = system.A7_blk + system.GtEF_sum
        ry = (b2.reshape(ne, l)
              - np.einsum("seji,sej->ei", system.grad_blk, Eb1))
    else:
        C = system.grad_blk.transpose(0, 1, 3, 2) + blocks.flux_coupling
        Q = blocks.W + np.matmul(C, system.EG).sum(axis=0)
        Rz = system.A7_blk + np.matmul(C, system.EF).sum(axis=0)
        ry = b2.reshape(ne, l) - np.einsum("seij,sej->ei", C, Eb1)

    rhs = np.concatenate([Rz, ry[:, :, None]], axis=2)
    sol = _solve_blocks(Q, rhs)
    Bt2, bt2 = sol[:, :, :nt], sol[:, :, nt]

    # Trace rows after substituting both recoveries; the iterate enters
    # only through Bt2 / bt2.
    Kc = (np.matmul(system.FtEG_A7t, Bt2) - system.FtEF_sum
          - system.A8_blk)
    rc = (-np.einsum("seln,sel->en", system.face_blk, Eb1)
          - np.einsum("enl,el->en", system.FtEG_A7t, bt2))
    return CondensedSystem(
        Eb1=Eb1, Bt2=Bt2, bt2=bt2,
        trace_matrix=system.trace_pattern.assemble(Kc),
        trace_rhs=system.scatter_trace(rc) + b3)


def _solve_condensed(system: HDGSystem, cond: CondensedSystem):
    if cond.trace_rhs.size == 0:
        z = np.zeros(0)
    else:
        try:
            # The trace matrix is structurally symmetric and close to
            # symmetric in value; minimum degree on K + K^T plus
            # threshold pivoting roughly halves the 3D factor time.
            lu = splu(cond.trace_matrix.tocsc(),
                      permc_spec="MMD_AT_PLUS_A",
                      options={"SymmetricMode": True,
                               "DiagPivotThresh": 0.001})
            z = lu.solve(cond.trace_rhs)
        except RuntimeError as exc:
            raise SingularTraceError(
                f"trace factorization failed: {exc}") from None
        if not np.isfinite(z).all():
            raise SingularTraceError("trace solve produced non-finite values")
    flux, scalar = cond.back_substitute(system, z)
    return flux, scalar, z


def condense_and_solve(system: HDGSystem, blocks: JacobianBlocks,
                       b1, b2, b3):
    """Solve the block system by local elimination plus a trace solve.

    Verifies the unreduced residual of the result (relative inf-norm
    1e-10) before returning; the Newton loop uses the unchecked internal
    path since its own next residual evaluation subsumes the check.
    """
    cond = _condense(system, blocks, b1, b2, b3)
    flux, scalar, z = _solve_condensed(system, cond)
    r1, r2, r3 = apply_operator(system, blocks, flux, scalar, z)
    scale = max(np.abs(b1).max(), np.abs(b2).max(),
                np.abs(b3).max() if b3.size else 0.0, 1e-30)
    err = _residual_norm(r1 - b1.reshape(r1.shape), r2 - b2,
                         r3 - b3 if r3.size else r3)
    if err > 1e-10 * max(scale, 1.0):
        raise ArithmeticError(
            f"condensed solve residual {err:.3e} exceeds tolerance")
    return flux, scalar, z


def full_solve(system: HDGSystem, blocks: JacobianBlocks, b1, b2, b3):
    """Direct solve of the unreduced sparse block system (oracle path)."""
    lay = system.layout
    d, N1, N2 = system.dim, lay.N1, lay.N2
    A1 = system.A1_csr()
    W = blockdiag_csr(blocks.W)
    A7 = system.A7_csr()
    rows = []
    for s in range(d):
        row = [None] * (d + 2)
        row[s] = A1
        row[d] = -system.grad_csr(s)
        row[d + 1] = system.face_csr(s)
        rows.append(row)
    yrow = []
    for s in range(d):
        Cs = system.grad_csr(s).T.tocsr()
        if blocks.flux_coupling is not None:
            Cs = Cs + blockdiag_csr(blocks.flux_coupling[s])
        yrow.append(Cs)
    rows.append(yrow + [W, -A7])
    rows.append([system.face_csr(s).T for s in range(d)]
                + [A7.T, -system.A8_csr()])
    if N2 == 0:
        rows = [row[:-1] for row in rows[:-1]]
    A = sp.bmat(rows, format="csc")
    rhs = np.concatenate([np.asarray(b1).reshape(-1), b2, b3])
    sol = splu(A).solve(rhs)
    if not np.isfinite(sol).all():
        raise ArithmeticError("unreduced solve produced non-finite values")
    resid = np.abs(A @ sol - rhs).max()
    if resid > 1e-10 * max(np.abs(rhs).max(), 1.0):
        raise ArithmeticError(
            f"unreduced solve residual {resid:.3e} exceeds tolerance")
    flux = sol[:d * N1].reshape(d, N1)
    scalar = sol[d * N1:(d + 1) * N1]
    z = sol[(d + 1) * N1:] if N2 else np.zeros(0)
    return flux, scalar, z


def newton_solve_step(method: str, state: StepState, dt: float,
                      system: HDGSystem, term, load,
                      config: NewtonConfig | None = None) -> StepState:
    """Advance one implicit step, warm-started from the previous state.

    load is the assembled source vector at the new time (or a callable
    f(points, t) assembled here).  The residual is evaluated before any
    solve, so an affine problem costs exactly one linear solve.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if config is None:
        config = NewtonConfig()
    lay = system.layout
    if callable(load):
        quad = simplex_quadrature(2 * lay.k + 4, system.dim)
        load = assemble_load(load, state.time + dt, lay, system.mesh,
                             system.basis, quad)

    flux = state.flux.copy()
    scalar = state.scalar.copy()
    trace = state.trace.copy()
    prev_scalar = state.scalar
    t_nl = t_jac = t_solve = 0.0
    n_solves = 0
    norms = []
    lin_W = system.A6_blk + system.A1_blk / dt
    bn = load + _mass_apply(system, prev_scalar) / dt

    iters = []
    while True:
        t0 = perf_counter()
        applied, d_gamma, d_flux = nonlinear_parts(method, term, flux,
                                                   scalar, system)
        cur_nl = perf_counter() - t0
        t_nl += cur_nl
        r1, r2, r3 = apply_operator(system, JacobianBlocks(W=lin_W),
                                    flux, scalar, trace)
        r2 = r2 + applied - bn
        rnorm = _residual_norm(r1, r2, r3)
        norms.append(rnorm)
        if rnorm <= config.residual_tol:
            break
        if n_solves >= config.max_iterations:
            raise NonConvergenceError(n_solves, rnorm)

        t0 = perf_counter()
        jac = JacobianBlocks(W=lin_W + d_gamma, flux_coupling=d_flux)
        cond = _condense(system, jac, -r1, -r2, -r3)
        cur_jac = perf_counter() - t0
        t_jac += cur_jac
        t0 = perf_counter()
        dx, dy, dz = _solve_condensed(system, cond)
        cur_solve = perf_counter() - t0
        t_solve += cur_solve
        iters.append((cur_nl, cur_jac, cur_solve))
        n_solves += 1
        flux += dx
        scalar += dy
        trace += dz
        if _residual_norm(dx, dy, dz) <= config.step_tol:
            break

    return StepState(index=state.index + 1, time=state.time + dt,
                     flux=flux, scalar=scalar, trace=trace,
                     n_newton=n_solves, residual=rnorm,
                     residual_history=tuple(norms),
                     t_nonlinear=t_nl, t_jacobian=t_jac, t_solve=t_solve,
                     iteration_times=tuple(iters))


def initial_state(u0, system: HDGSystem) -> StepState:
    """Project the initial datum and solve for compatible flux and trace.

    The scalar part is the elementwise L2 projection of u0.  Holding it
    fixed, the flux and trace rows form a symmetric positive definite
    system in the trace (the local part eliminates like the Newton
    system), giving a discrete gradient consistent with the flux law.
    """
    lay = system.layout
    quad = simplex_quadrature(2 * lay.k + 4, system.dim)
    gamma = l2_project_W(u0, lay, system.mesh, system.basis, quad).data
    y = gamma.reshape(lay.n_elements, lay.l_K)

    Kc = system.FtEF_sum + system.A8_blk
    gy = np.einsum("enl,el->en", system.FtEG_A7t, y)
    g = system.scatter_trace(gy)
    if lay.N2:
        K = system.trace_pattern.assemble(Kc)
        try:
            z = splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(g)
        except RuntimeError as exc:
            raise SingularTraceError(
                f"initial trace factorization failed: {exc}") from None
    else:
        z = np.zeros(0)
    ze = system.gather_trace(z)
    xs = (np.einsum("seij,ej->sei", system.EG, y)
          - np.einsum("seln,en->sel", system.EF, ze))
    return StepState(index=0, time=0.0, flux=xs.reshape(system.dim, lay.N1),
                     scalar=gamma, trace=z)


@dataclass(frozen=True)
class StepDiagnostics:
    index: int
    time: float
    n_newton: int
    residual: float
    t_nonlinear: float
    t_jacobian: float
    t_solve: float
    iteration_times: tuple = ()


def time_steps(T: float, dt: float):
    """Step sizes covering (0, T], the last one truncated to land on T."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n_full = int(math.floor(T / dt + 1e-9))
    rem = T - n_full * dt
    steps = [dt] * n_full
    if rem > 1e-9 * dt:
        steps.append(rem)
    return steps


def time_integrate(problem, mesh: Mesh, k: int, tau=1.0,
                   dt_rule: str = "h_pow_kp1", dt: float | None = None,
                   T: float = 1.0, method: str = "interpolatory",
                   config: NewtonConfig | None = None,
                   system: HDGSystem | None = None):
    """Run backward Euler from the projected initial datum to time T.

    problem provides the nonlinear term and the callables u0(x) and
    source(x, t).  dt_rule "h_pow_kp1" sets dt = h^(k+1); "fixed" uses
    the dt argument.  Returns (final StepState, list of StepDiagnostics).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of "
                         f"{METHODS}")
    term = problem.term
    if method == "standard" and term.depends_on_gradient:
        raise ValueError(
            f"the standard method supports F = F(u) only; "
            f"{term.name} depends on the gradient")
    if dt_rule == "h_pow_kp1":
        dt = (1.0 / mesh.n) ** (k + 1)
    elif dt_rule == "fixed":
        if dt is None or dt <= 0:
            raise ValueError("fixed dt_rule needs a positive dt")
    else:
        raise ValueError(f"unknown dt_rule {dt_rule!r}")

    if system is None:
        layout = build_dof_layout(mesh, k)
        system = assemble_static(mesh, nodal_basis(k, mesh.dim), layout, tau)
    lay = system.layout

    # Source assembly data is reused across steps; only the nodal values
    # of f change with t.
    quad = simplex_quadrature(2 * lay.k + 4, system.dim)
    vals = eval_basis(system.basis, quad.points, validate=False)
    pts = (np.einsum("eij,qj->eqi", mesh.B, quad.points)
           + mesh.offset[:, None, :]).reshape(-1, mesh.dim)
    wmat = mesh.detB[:, None] * quad.weights[None, :]
    nq = len(quad.weights)

    parts = getattr(problem, "source_parts", None)
    if parts is not None:
        # f(x,t) = sum_i c_i(t) g_i(x): project each g_i once, then every
        # load is a small linear combination.
        coefs = [c for c, _ in parts]
        gvecs = np.array([
            np.einsum("eq,eq,qi->ei",
                      wmat,
                      np.asarray(g(pts), dtype=float).reshape(lay.n_elements, nq),
                      vals).reshape(lay.N1)
            for _, g in parts]).reshape(len(parts), lay.N1)

        def load_at(t):
            if not coefs:
                return np.zeros(lay.N1)
            weights = np.array([c(t) for c in coefs])
            return weights @ gvecs
    else:
        def load_at(t):
            fq = np.asarray(problem.source(pts, t), dtype=float)
            fq = fq.reshape(lay.n_elements, nq)
            return np.einsum("eq,eq,qi->ei", wmat, fq, vals).reshape(lay.N1)

    state = initial_state(problem.u0, system)
    diagnostics = []
    for step_dt in time_steps(T, dt):
        t_new = state.time + step_dt
        try:
            state = newton_solve_step(method, state, step_dt, system, term,
                                      load_at(t_new), config)
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                exc.iterations, exc.residual,
                f" at step {state.index + 1} (t = {t_new:.6g})") from None
        except (SingularBlockError, SingularTraceError) as exc:
            exc.args = (f"{exc} at step {state.index + 1} "
                        f"(t = {t_new:.6g})",)
            raise
        diagnostics.append(StepDiagnostics(
            index=state.index, time=state.time, n_newton=state.n_newton,
            residual=state.residual, t_nonlinear=state.t_nonlinear,
            t_jacobian=state.t_jacobian, t_solve=state.t_solve,
            iteration_times=state.iteration_times))
    return state, diagnostics
