#!/usr/bin/env python3
import asyncio
import logging
import sys
from optparse import OptionParser
from typing import Optional

import numpy as np

from fracsing.barriers import build_h, lambda_window
from fracsing.branch import BifurcationBranch, BranchRow, lower_bound_check, trace_branch, uniqueness_scan
from fracsing.cache import KernelCache
from fracsing.config import RunConfig, load_config
from fracsing.core import cone_inf, make_grid
from fracsing.enumutils import OutputFormat, SolutionKind
from fracsing.errors import ConfigurationError, DomainError, SolverError
from fracsing.export import audit_branch, export, render
from fracsing.multiplicity import minimal_solution, three_solutions
from fracsing.operator import GreenOperator, assemble, principal_eigenpair
from fracsing.semipositone import continue_theta, solve_I0, verify_Lambda

COMMANDS = ("torsion-check", "eigen", "window", "solve", "three-solutions", "branch", "uniqueness-scan",
            "semipositone")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def make_operator(cfg: RunConfig, opts) -> GreenOperator:
    spec = cfg.spec
    cache = None if opts.no_cache else KernelCache(cfg.options.cache_dir)
    return assemble(make_grid(spec.n, spec.grading), spec.s, torsion_tol=spec.torsion_tol, cache=cache)


def emit(obj, opts, audit: bool = False):
    if opts.out:
        export(obj, opts.out, opts.format or OutputFormat.CSV, audit)
    else:
        sys.stdout.write(render(obj, opts.format, audit))


def need_lambda(opts):
    if opts.lam is None:
        raise ConfigurationError("No --lambda specified")


async def do_torsion_check(op: GreenOperator):
    print("N\t%d" % op.n)
    print("s\t%r" % op.s)
    print("Torsion error\t%.6e" % op.torsion_error)


async def do_eigen(op: GreenOperator):
    eig = principal_eigenpair(op)
    print("Principal eigenvalue\t%r" % eig.value)
    print("Iterations\t%d" % eig.iterations)
    print("Residual\t%.3e" % eig.residual)


async def do_solve(op: GreenOperator, cfg: RunConfig, opts):
    need_lambda(opts)
    spec = cfg.spec
    run = minimal_solution(op, spec)
    u = run.result
    margin = lower_bound_check(op, spec, u, spec.lam)
    logging.getLogger("fractool").info("Lower bound margin %.3e after %d iterations", margin, len(run.iterates_sup))
    row = BranchRow(lam=spec.lam, kind=SolutionKind.MINIMAL, sup_norm=float(np.max(u)), residual=run.residual,
                    cone_inf=cone_inf(u, principal_eigenpair(op).vector), u=u)
    emit(BifurcationBranch(rows=[row]), opts, opts.audit)


async def do_branch(op: GreenOperator, cfg: RunConfig, opts):
    spec = cfg.spec
    window = lambda_window(op, spec, build_h(spec.nl, spec))
    grid = cfg.options.lambda_grid(window)
    branch = await trace_branch(op, spec, grid, workers=cfg.options.workers, window=window)
    emit(branch, opts, opts.audit)
    if opts.audit and opts.out and opts.format == OutputFormat.JSON:
        worst = audit_branch(op, spec, opts.out)
        logging.getLogger("fractool").info("Audit passed, largest residual %.3e", worst)


async def do_uniqueness_scan(op: GreenOperator, cfg: RunConfig, opts):
    spec = cfg.spec
    window = None
    if cfg.options.lambda_min is None:
        window = lambda_window(op, spec, build_h(spec.nl, spec))
    report = await uniqueness_scan(op, spec, cfg.options.lambda_grid(window), workers=cfg.options.workers)
    emit(report, opts)


async def do_semipositone(op: GreenOperator, cfg: RunConfig, opts):
    sp = cfg.options.semipositone(cfg.spec.q)
    v0 = solve_I0(op, sp.p)
    value = verify_Lambda(op, v0, sp.p)
    logging.getLogger("fractool").info("Linearized eigenvalue at v0: %r", value)
    emit(continue_theta(op, sp, v0), opts)


async def run(opts, cmd):
    overrides = {"n": opts.n, "s": opts.s, "q": opts.q, "alpha": opts.alpha, "seed": opts.seed,
                 "lambda": opts.lam, "p": opts.p, "gamma": opts.gamma, "theta_max": opts.theta_max,
                 "steps": opts.steps, "workers": opts.workers}
    cfg = load_config(opts.config, overrides)
    op = make_operator(cfg, opts)
    spec = cfg.spec

    if cmd == "torsion-check":
        await do_torsion_check(op)
    elif cmd == "eigen":
        await do_eigen(op)
    elif cmd == "window":
        emit(lambda_window(op, spec, build_h(spec.nl, spec)), opts)
    elif cmd == "solve":
        await do_solve(op, cfg, opts)
    elif cmd == "three-solutions":
        need_lambda(opts)
        emit(three_solutions(op, spec), opts)
    elif cmd == "branch":
        await do_branch(op, cfg, opts)
    elif cmd == "uniqueness-scan":
        await do_uniqueness_scan(op, cfg, opts)
    elif cmd == "semipositone":
        await do_semipositone(op, cfg, opts)
    else:
        raise ConfigurationError("Unknown command")


def make_parser() -> OptionParser:
    parser = OptionParser("fractool.py [options] " + "|".join(COMMANDS))
    parser.add_option("--config", dest="config", help="key=value config file")
    parser.add_option("--n", dest="n", type="int", help="number of grid nodes")
    parser.add_option("--s", dest="s", type="float", help="fractional order s in (0, 1/2)")
    parser.add_option("--q", dest="q", type="float", help="singular exponent q in (0, 1)")
    parser.add_option("--alpha", dest="alpha", type="float", help="exemplar nonlinearity parameter")
    parser.add_option("--lambda", dest="lam", type="float", help="the parameter lambda")
    parser.add_option("--seed", dest="seed", type="int", help="seed for the deflation multistart")
    parser.add_option("--p", dest="p", type="float", help="sublinear exponent p in (0, 1)")
    parser.add_option("--gamma", dest="gamma", type="float", help="semipositone exponent gamma in (q, 1)")
    parser.add_option("--theta-max", dest="theta_max", type="float", help="end of the theta continuation")
    parser.add_option("--steps", dest="steps", type="int", help="number of theta continuation steps")
    parser.add_option("--workers", dest="workers", type="int", help="number of concurrent lambda workers")
    parser.add_option("--out", dest="out", help="output file")
    parser.add_option("--format", dest="format", type="choice", choices=[f.value for f in OutputFormat],
                      help="output format (csv or json)")
    parser.add_option("--no-cache", dest="no_cache", action="store_true", default=False,
                      help="do not read or write the kernel cache")
    parser.add_option("--audit", dest="audit", action="store_true", default=False,
                      help="store nodal values in JSON output and re-validate them")
    parser.add_option("--verbose", dest="verbose", action="store_true", default=False,
                      help="debug logging")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = make_parser()
    (options, args) = parser.parse_args(argv)
    if len(args) == 0 or args[0] not in COMMANDS:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG

    logging.basicConfig(level=logging.DEBUG if options.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        asyncio.run(run(options, args[0]))
    except ConfigurationError as e:
        print("Configuration error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, DomainError) as e:
        print("Solver failure: %s" % e, file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == '__main__':
    sys.exit(main())
