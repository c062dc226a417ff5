"""Command-line front end: convergence tables, method comparison, checks.

Subcommands:
  convergence   mesh-refinement study, one CSV row per level
  compare       both methods on one mesh, per-Newton-iteration timings
  checks        property suites with pass/fail lines

Options come from flags or from a flat key=value config file; flags
override the file.  Only the standard library is imported at module
level so that --threads (or the IHDG_THREADS variable) can cap the BLAS
thread pools before numpy loads.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

PROBLEMS = ("allen_cahn", "grad_squared", "burgers", "zero")
METHODS = ("interpolatory", "standard")
DT_RULES = ("h_pow_kp1", "fixed")
GRADIENT_DEPENDENT = ("grad_squared", "burgers")

CSV_HEADER = "k,mesh,err_q,order_q,err_u,order_u"
COMPARE_HEADER = "method,step,iteration,t_nonlinear,t_jacobian,t_solve"

# errors at or below this are treated as exact zeros when computing
# orders, so the zero problem reports blank order columns
ZERO_ORDER_FLOOR = 1e-13

# default mesh caps; larger runs need --big
MAX_N_3D = 8
MAX_N_2D = 64


class CliError(Exception):
    """User-facing failure; printed to stderr with exit code 1."""


def parse_levels(text) -> tuple:
    try:
        levels = tuple(int(p) for p in str(text).split(","))
    except ValueError:
        raise CliError(f"could not parse mesh levels {text!r}; expected "
                       "comma-separated integers like 8,16,32") from None
    return levels


@dataclass(frozen=True)
class RunConfig:
    problem: str
    levels: tuple
    dim: int = 2
    k: int = 1
    tau: float = 1.0
    T: float = 1.0
    dt_rule: str = "h_pow_kp1"
    dt: float | None = None
    method: str = "interpolatory"
    newton_tol: float = 1e-10
    newton_max: int = 25
    seed: int = 0
    big: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise CliError(f"unknown problem {self.problem!r}; expected one "
                           f"of {', '.join(PROBLEMS)}")
        if self.dim not in (2, 3):
            raise CliError("dim must be 2 or 3")
        if not 0 <= self.k <= 3:
            raise CliError("polynomial degree k must be between 0 and 3")
        if not self.levels:
            raise CliError("at least one mesh level is required (--levels)")
        if any(n < 1 for n in self.levels):
            raise CliError("mesh levels must be positive")
        for a, b in zip(self.levels, self.levels[1:]):
            if b != 2 * a:
                raise CliError("each mesh level must double the previous "
                               "one (orders are log2 ratios)")
        if self.tau <= 0:
            raise CliError("tau must be positive")
        if self.T <= 0:
            raise CliError("final time T must be positive")
        if self.dt_rule not in DT_RULES:
            raise CliError(f"unknown dt rule {self.dt_rule!r}; expected "
                           f"one of {', '.join(DT_RULES)}")
        if self.dt_rule == "fixed" and (self.dt is None or self.dt <= 0):
            raise CliError("dt_rule=fixed needs a positive --dt")
        if self.method not in METHODS:
            raise CliError(f"unknown method {self.method!r}")
        if self.method == "standard" and self.problem in GRADIENT_DEPENDENT:
            raise CliError(f"the standard method supports F = F(u) only; "
                           f"{self.problem} depends on the gradient "
                           f"(use --method interpolatory)")
        if self.newton_tol <= 0:
            raise CliError("newton tolerance must be positive")
        if self.newton_max < 1:
            raise CliError("newton iteration budget must be at least 1")
        if not self.big:
            if self.dim == 3 and max(self.levels) > MAX_N_3D:
                raise CliError(f"3D runs stop at n={MAX_N_3D} by default; "
                               "pass --big for larger meshes")
            if self.dim == 2 and max(self.levels) > MAX_N_2D:
                raise CliError(f"2D runs stop at n={MAX_N_2D} by default; "
                               "pass --big for larger meshes")


# keys accepted in a config file, with their coercions
_FILE_KEYS = {
    "problem": str, "dim": int, "k": int, "levels": parse_levels,
    "tau": float, "T": float, "dt_rule": str, "dt": float, "method": str,
    "seed": int, "newton_tol": float, "newton_max": int,
    "threads": int, "out": str,
}


def read_config_file(path) -> dict:
    """Parse a flat key=value file; blank lines and # comments ignored."""
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key=value, "
                                   f"got {line!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in _FILE_KEYS:
                    raise CliError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _FILE_KEYS[key](value)
                except ValueError:
                    raise CliError(f"{path}:{lineno}: bad value for "
                                   f"{key!r}: {value!r}") from None
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    return values


def _merged_config(args, file_values) -> RunConfig:
    def pick(name, default=None):
        value = getattr(args, name, None)
        if value is None:
            value = file_values.get(name, default)
        return value

    problem = pick("problem")
    if problem is None:
        raise CliError("--problem is required (or set it in the config file)")
    levels = pick("levels")
    if levels is None:
        raise CliError("--levels is required (or set it in the config file)")
    if isinstance(levels, str):
        levels = parse_levels(levels)
    return RunConfig(
        problem=problem, levels=levels,
        dim=pick("dim", 2), k=pick("k", 1),
        tau=pick("tau", 1.0), T=pick("T", 1.0),
        dt_rule=pick("dt_rule", "h_pow_kp1"), dt=pick("dt"),
        method=pick("method", "interpolatory"),
        newton_tol=pick("newton_tol", 1e-10),
        newton_max=pick("newton_max", 25),
        seed=pick("seed", 0), big=bool(getattr(args, "big", False)))


def apply_thread_limit(threads) -> None:
    """Cap BLAS pools; must run before numpy is first imported."""
    if threads is None:
        threads = os.environ.get("IHDG_THREADS") or None
    if threads is None:
        return
    try:
        count = int(threads)
    except ValueError:
        raise CliError(f"thread count must be an integer, got "
                       f"{threads!r}") from None
    if count < 1:
        raise CliError("thread count must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(count)


def _fmt_err(value) -> str:
    return "%.2e" % value


def _fmt_ord(value) -> str:
    return "" if value is None else "%.2f" % value


def render_report(report) -> str:
    lines = [CSV_HEADER]
    for row in report.rows():
        lines.append("%d,%d,%s,%s,%s,%s" % (
            row["k"], row["mesh"],
            _fmt_err(row["err_q"]), _fmt_ord(row["order_q"]),
            _fmt_err(row["err_u"]), _fmt_ord(row["order_u"])))
    return "\n".join(lines) + "\n"


def _emit(text, out) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump_trace(n, diagnostics, stream) -> None:
    for d in diagnostics:
        print(f"# n={n} step={d.index} t={d.time:.6f} newton={d.n_newton} "
              f"residual={d.residual:.3e} t_nl={d.t_nonlinear:.4f} "
              f"t_jac={d.t_jacobian:.4f} t_solve={d.t_solve:.4f}",
              file=stream)


def _solve_level(config, problem, n, method, newton, trace, system_cache):
    """Integrate one level, reusing the static assembly across methods."""
    from .analysis import l2_error
    from .assembly import assemble_static
    from .mesh import build_structured_mesh
    from .polybasis import nodal_basis
    from .solver import time_integrate
    from .spaces import GridFunction, build_dof_layout

    if n in system_cache:
        mesh, layout, system = system_cache[n]
    else:
        mesh = build_structured_mesh(config.dim, n)
        layout = build_dof_layout(mesh, config.k)
        system = assemble_static(mesh, nodal_basis(config.k, config.dim),
                                 layout, config.tau)
        system_cache[n] = (mesh, layout, system)
    try:
        state, diagnostics = time_integrate(
            problem, mesh, config.k, tau=config.tau, dt_rule=config.dt_rule,
            dt=config.dt, T=config.T, method=method, config=newton,
            system=system)
    except RuntimeError as exc:
        raise CliError(f"solver failure at level n={n}: {exc}") from exc
    if trace:
        _dump_trace(n, diagnostics, sys.stderr)
    basis = system.basis
    err_u = l2_error(GridFunction("W", state.scalar), problem.exact_u,
                     state.time, layout, mesh, basis)
    err_q = l2_error(GridFunction("V", state.flux), problem.exact_flux,
                     state.time, layout, mesh, basis)
    return state, diagnostics, err_q, err_u, mesh


def run_convergence(config: RunConfig, trace=False):
    """Solve every level and return the ConvergenceReport."""
    from .analysis import ConvergenceReport, pairwise_orders
    from .problems import get_problem
    from .solver import NewtonConfig

    problem = get_problem(config.problem, config.dim)
    newton = NewtonConfig(residual_tol=config.newton_tol,
                          max_iterations=config.newton_max)
    err_q, err_u, n_elements = [], [], []
    cache = {}
    for n in config.levels:
        _, _, eq, eu, mesh = _solve_level(config, problem, n, config.method,
                                          newton, trace, cache)
        err_q.append(eq)
        err_u.append(eu)
        n_elements.append(mesh.n_elements)
    orders_q = pairwise_orders(
        [0.0 if e <= ZERO_ORDER_FLOOR else e for e in err_q])
    orders_u = pairwise_orders(
        [0.0 if e <= ZERO_ORDER_FLOOR else e for e in err_u])
    return ConvergenceReport(
        k=config.k, levels=tuple(config.levels),
        n_elements=tuple(n_elements),
        h=tuple(1.0 / n for n in config.levels),
        err_q=tuple(err_q), err_u=tuple(err_u),
        order_q=orders_q, order_u=orders_u)


def cmd_convergence(config: RunConfig, out=None, trace=False) -> int:
    if len(config.levels) < 2:
        raise CliError("a convergence study needs at least two mesh levels")
    report = run_convergence(config, trace=trace)
    _emit(render_report(report), out)
    return 0


def run_compare(config: RunConfig, trace=False) -> dict:
    """Run both methods on the same assembled system; return per-method
    states, diagnostics, and errors keyed by method name."""
    from .problems import get_problem
    from .solver import NewtonConfig

    problem = get_problem(config.problem, config.dim)
    newton = NewtonConfig(residual_tol=config.newton_tol,
                          max_iterations=config.newton_max)
    cache = {}
    results = {}
    for method in METHODS:
        state, diagnostics, eq, eu, _ = _solve_level(
            config, problem, config.levels[0], method, newton, trace, cache)
        results[method] = {"state": state, "diagnostics": diagnostics,
                           "err_q": eq, "err_u": eu}
    return results


def _check_compare_agreement(config, results):
    import numpy as np

    a = results["interpolatory"]
    b = results["standard"]
    if config.k == 0:
        # both methods collapse to the same piecewise-constant scheme
        sa, sb = a["state"], b["state"]
        diff = max(float(np.abs(sa.flux - sb.flux).max()),
                   float(np.abs(sa.scalar - sb.scalar).max()),
                   float(np.abs(sa.trace - sb.trace).max()))
        if diff > 1e-10:
            raise CliError(f"methods disagree at k=0: max coefficient "
                           f"discrepancy {diff:.3e} exceeds 1e-10")
        return [f"k0_coefficient_discrepancy={diff:.3e}"]
    notes = []
    for key in ("err_q", "err_u"):
        x, y = a[key], b[key]
        if abs(x - y) <= 1e-12:
            continue
        rel = abs(x - y) / max(x, y)
        if rel > 0.10:
            raise CliError(f"methods disagree: {key} differs by "
                           f"{100 * rel:.1f}% (interpolatory {x:.3e}, "
                           f"standard {y:.3e})")
        notes.append(f"{key}_relative_gap={rel:.4f}")
    return notes


def cmd_compare(config: RunConfig, out=None, trace=False) -> int:
    if config.problem not in ("allen_cahn", "zero"):
        raise CliError("compare needs a problem both methods support: "
                       "allen_cahn or zero")
    if len(config.levels) != 1:
        raise CliError("compare runs a single mesh level; pass one value "
                       "to --levels")
    results = run_compare(config, trace=trace)

    lines = [COMPARE_HEADER]
    for method in METHODS:
        for d in results[method]["diagnostics"]:
            for i, (t_nl, t_jac, t_solve) in enumerate(d.iteration_times, 1):
                lines.append(f"{method},{d.index},{i},{t_nl:.6f},"
                             f"{t_jac:.6f},{t_solve:.6f}")
    csv = "\n".join(lines) + "\n"

    notes = _check_compare_agreement(config, results)
    summary = []
    totals = {}
    for method in METHODS:
        r = results[method]
        t_nl = sum(d.t_nonlinear for d in r["diagnostics"])
        t_jac = sum(d.t_jacobian for d in r["diagnostics"])
        t_solve = sum(d.t_solve for d in r["diagnostics"])
        newton = sum(d.n_newton for d in r["diagnostics"])
        totals[method] = t_nl
        summary.append(
            f"method={method} steps={len(r['diagnostics'])} "
            f"newton_total={newton} err_q={r['err_q']:.6e} "
            f"err_u={r['err_u']:.6e} t_nonlinear={t_nl:.6f} "
            f"t_jacobian={t_jac:.6f} t_solve={t_solve:.6f}")
    if totals["interpolatory"] > 0:
        ratio = totals["standard"] / totals["interpolatory"]
        summary.append(f"nonlinear_time_ratio={ratio:.3f}")
    summary.extend(notes)

    _emit(csv, out)
    # keep the CSV stream clean: the summary goes to stdout only when the
    # CSV went to a file
    print("\n".join(summary), file=sys.stdout if out else sys.stderr)
    return 0


def cmd_checks(seed=0, mutate=None) -> int:
    from .checks import run_all

    try:
        results = run_all(seed=seed, mutate=mutate)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.ok for r in results) else 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ihdg",
        description="Hybridizable DG solver for semilinear parabolic "
                    "problems: convergence tables, method comparison, and "
                    "property checks.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=None,
                         help="cap BLAS threads (also: IHDG_THREADS)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", help="flat key=value file; flags override")
    run.add_argument("--problem", choices=PROBLEMS)
    run.add_argument("--dim", type=int, choices=(2, 3))
    run.add_argument("--k", type=int, help="polynomial degree, 0..3")
    run.add_argument("--levels",
                     help="comma-separated mesh resolutions, each double "
                          "the previous, e.g. 8,16,32")
    run.add_argument("--tau", type=float, help="stabilization (default 1)")
    run.add_argument("--T", type=float, dest="T",
                     help="final time (default 1)")
    run.add_argument("--dt-rule", choices=DT_RULES, dest="dt_rule",
                     help="h_pow_kp1 sets dt = h^(k+1); fixed uses --dt")
    run.add_argument("--dt", type=float)
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--seed", type=int)
    run.add_argument("--newton-tol", type=float, dest="newton_tol")
    run.add_argument("--newton-max", type=int, dest="newton_max")
    run.add_argument("--out", help="write CSV here instead of stdout")
    run.add_argument("--trace", action="store_true",
                     help="dump per-step diagnostics to stderr")
    run.add_argument("--big", action="store_true",
                     help="lift the default mesh-size caps")

    p = sub.add_parser("convergence", parents=[run, threads],
                       help="refinement study; CSV columns " + CSV_HEADER)
    p.set_defaults(cmd="convergence")
    p = sub.add_parser("compare", parents=[run, threads],
                       help="interpolatory vs standard on one mesh with "
                            "per-Newton-iteration timings")
    p.set_defaults(cmd="compare")
    p = sub.add_parser("checks", parents=[threads],
                       help="run the property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", default=None,
                   help="inject a named defect (test harness hook)")
    p.set_defaults(cmd="checks")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.cmd == "checks":
            apply_thread_limit(args.threads)
            return cmd_checks(seed=args.seed, mutate=args.mutate)
        file_values = read_config_file(args.config) if args.config else {}
        threads = args.threads
        if threads is None:
            threads = file_values.get("threads")
        apply_thread_limit(threads)
        config = _merged_config(args, file_values)
        out = args.out if args.out is not None else file_values.get("out")
        if args.cmd == "convergence":
            return cmd_convergence(config, out=out, trace=args.trace)
        return cmd_compare(config, out=out, trace=args.trace)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
