"""Minimal and maximal fixed points of T on order intervals, and the search for a third solution."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fracsing.barriers import BarrierSet, Window, build_barriers, build_h, lambda_window, lower_barrier, upper_barrier
from fracsing.core import GridFunction, ProblemSpec, cone_inf, order_compare
from fracsing.enumutils import Direction, Ordering, SolutionKind
from fracsing.errors import (CertificationError, ConvergenceError, DomainError, MonotonicityError, SolverError,
                             WindowError)
from fracsing.operator import GreenOperator, principal_eigenpair
from fracsing.singular_solver import apply_T, residual_P

logger = logging.getLogger("fracsing.multiplicity")

MAX_ITERATIONS = 500
MAX_ITERATIONS_CEILING = 20000
POLISH_EVERY = 50
POLISH_MAX_ITER = 30
POLISH_REACH = 10.0
STAGNATION_STEPS = 10
STAGNATION_PROGRESS = 1e-14
DEFLATION_MAX_ITER = 100
DEFLATION_BLEND = (0.25, 0.5, 0.75)
DEFLATION_PERTURBATIONS = 3


@dataclass(frozen=True)
class FixedPointRun:
    start: GridFunction
    iterates_sup: list[float]
    result: GridFunction
    direction: Direction
    residual: float
    interval: tuple[GridFunction, GridFunction]
    shift: float = 0.0


@dataclass(frozen=True)
class Solution:
    u: GridFunction
    kind: SolutionKind
    residual: float
    cone_inf: float

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.u))


@dataclass(frozen=True)
class SolutionSet:
    lam: float
    u1: GridFunction
    u2: GridFunction
    u3: Optional[GridFunction]
    residuals: list[float]
    separations: list[float]
    window: Window
    solutions: list[Solution] = field(default_factory=list)


def _newton_polish(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> Optional[GridFunction]:
    """Plain Newton on u - K(lambda f0(u)) started from a monotone iterate."""
    v = np.array(u, dtype=np.float64)
    for _ in range(POLISH_MAX_ITER):
        res = _problem_residual(op, spec, v)
        if float(np.max(np.abs(res))) <= spec.tol_residual / 10.0:
            return v
        try:
            step = np.linalg.solve(_problem_jacobian(op, spec, v), -res)
        except np.linalg.LinAlgError:
            return None
        v = v + _boundary_fraction(v, step) * step
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            return None
    return None


def _accept_polish(op: GreenOperator, spec: ProblemSpec, u: GridFunction, v: Optional[GridFunction],
                   interval: tuple[GridFunction, GridFunction], direction: Direction, reach: float) -> bool:
    # The limit lies on the far side of every iterate and inside the interval
    if v is None:
        return False
    lo, hi = interval
    tol = spec.tol_order
    if np.any(v < lo - tol) or np.any(v > hi + tol):
        return False
    if direction == Direction.UPWARD and np.any(v < u - tol):
        return False
    if direction == Direction.DOWNWARD and np.any(v > u + tol):
        return False
    if float(np.max(np.abs(v - u))) > reach + tol:
        return False
    return residual_P(op, spec, v) <= spec.tol_residual


def _iteration_cap(op: GreenOperator, shift: float) -> int:
    # Contraction slows like (k + f')/(k + lambda1) for large shifts k
    lambda1 = principal_eigenpair(op).value
    return int(min(MAX_ITERATIONS_CEILING, MAX_ITERATIONS * max(1.0, math.ceil(shift / lambda1))))


def _run(op: GreenOperator, spec: ProblemSpec, interval: tuple[GridFunction, GridFunction],
         direction: Direction) -> FixedPointRun:
    lo, hi = interval
    tol = spec.tol_order
    if order_compare(lo, hi, tol) not in (Ordering.LE, Ordering.EQUAL):
        raise DomainError("Interval endpoints are not ordered")

    shift = spec.nl.monotone_shift(spec.q, spec.lam, 1.05 * float(np.max(hi)))
    t_lo = apply_T(op, spec, lo, shift=shift)
    t_hi = apply_T(op, spec, hi, shift=shift, z0=t_lo.z)
    if np.any(t_lo.z < lo - tol):
        raise CertificationError("T(y1) >= y1 violated by %.3e" % float(np.max(lo - t_lo.z)))
    if np.any(t_hi.z > hi + tol):
        raise CertificationError("T(y2) <= y2 violated by %.3e" % float(np.max(t_hi.z - hi)))

    start = lo if direction == Direction.UPWARD else hi
    u = (t_lo if direction == Direction.UPWARD else t_hi).z
    sups = [float(np.max(start)), float(np.max(u))]
    prev_dist = float(np.max(np.abs(u - start)))
    width = float(np.max(hi - lo))
    cap = _iteration_cap(op, shift)
    stalled = 0
    residual = np.inf
    for it in range(cap):
        z = apply_T(op, spec, u, shift=shift, z0=u).z
        step = z - u
        if direction == Direction.UPWARD and np.min(step) < -tol:
            raise MonotonicityError("Upward iterate decreased by %.3e at step %d" % (-float(np.min(step)), it))
        if direction == Direction.DOWNWARD and np.max(step) > tol:
            raise MonotonicityError("Downward iterate increased by %.3e at step %d" % (float(np.max(step)), it))
        dist = float(np.max(np.abs(step)))
        u = z
        sups.append(float(np.max(u)))
        logger.debug("%s iteration %d: sup %.10g, step %.3e", direction, it, sups[-1], dist)
        if dist < spec.tol_residual / 10.0:
            residual = residual_P(op, spec, u)
            if residual <= spec.tol_residual:
                break

        stagnating = prev_dist > 0 and abs(prev_dist - dist) / prev_dist < STAGNATION_PROGRESS
        stalled = stalled + 1 if stagnating else 0
        if (it + 1) % POLISH_EVERY == 0 or stalled >= STAGNATION_STEPS or it == cap - 1:
            rate = dist / prev_dist if prev_dist > 0 else 1.0
            reach = width if rate >= 1.0 else min(width, POLISH_REACH * dist / (1.0 - rate))
            v = _newton_polish(op, spec, u)
            if _accept_polish(op, spec, u, v, interval, direction, reach):
                logger.debug("%s iteration polished by Newton at step %d", direction, it)
                u = v
                sups.append(float(np.max(u)))
                residual = residual_P(op, spec, u)
                break
            if stalled >= STAGNATION_STEPS:
                raise ConvergenceError("Fixed-point iteration stagnated", iterations=it, residual=dist)
        prev_dist = dist
    else:
        raise ConvergenceError("Fixed-point iteration hit the cap", iterations=cap, residual=prev_dist)

    if residual > spec.tol_residual:
        raise CertificationError("Fixed point residual %.3e above %.3e" % (residual, spec.tol_residual))
    return FixedPointRun(start=start, iterates_sup=sups, result=u, direction=direction, residual=residual,
                         interval=(lo, hi), shift=shift)


def minimal_fixed_point(op: GreenOperator, spec: ProblemSpec,
                        interval: tuple[GridFunction, GridFunction]) -> FixedPointRun:
    return _run(op, spec, interval, Direction.UPWARD)


def maximal_fixed_point(op: GreenOperator, spec: ProblemSpec,
                        interval: tuple[GridFunction, GridFunction]) -> FixedPointRun:
    return _run(op, spec, interval, Direction.DOWNWARD)


class DeflationOperator(object):
    """eta(u) = prod_k (1/|u - u_k|^2 + 1) in the sup norm."""

    def __init__(self, solutions: list[GridFunction], power: int = 2, shift: float = 1.0):
        self.solutions = list(solutions)
        self.power = power
        self.shift = shift

    def operator(self, u: GridFunction) -> float:
        return float(np.prod([np.max(np.abs(u - uk)) ** -self.power + self.shift for uk in self.solutions]))

    def log_gradient(self, u: GridFunction) -> GridFunction:
        grad = np.zeros_like(u)
        for uk in self.solutions:
            e = u - uk
            i = int(np.argmax(np.abs(e)))
            r = abs(float(e[i]))
            if r == 0:
                continue
            # d/dr log(r^-p + shift)
            grad[i] += np.sign(e[i]) * (-self.power * r ** (-self.power - 1)) / (r ** -self.power + self.shift)
        return grad


def _problem_residual(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> GridFunction:
    return u - op.apply(spec.lam * spec.nl.f0(u, spec.q))


def _problem_jacobian(op: GreenOperator, spec: ProblemSpec, u: GridFunction):
    deriv = spec.lam * spec.nl.f0_prime(u, spec.q)
    return np.eye(op.n) - op.matrix * deriv[None, :]


def _boundary_fraction(u: GridFunction, step: GridFunction) -> float:
    neg = step < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, 0.95 * float(np.min(-u[neg] / step[neg])))


def deflated_step(op: GreenOperator, spec: ProblemSpec, deflation: DeflationOperator,
                  u: GridFunction) -> Optional[GridFunction]:
    """Newton step for eta(u) F(u) = 0, or None when the deflated Jacobian is singular.

    With delta = -J^-1 F, Sherman-Morrison on J + F (grad log eta)^T gives
    d = delta / (1 - grad log eta . delta).
    """
    res = _problem_residual(op, spec, u)
    try:
        delta = np.linalg.solve(_problem_jacobian(op, spec, u), -res)
    except np.linalg.LinAlgError:
        return None
    denom = 1.0 - float(deflation.log_gradient(u) @ delta)
    if abs(denom) < 1e-14:
        return None
    return delta / denom


def _deflated_newton(op: GreenOperator, spec: ProblemSpec, deflation: DeflationOperator,
                     u0: GridFunction) -> Optional[GridFunction]:
    u = np.array(u0, dtype=np.float64)
    for _ in range(DEFLATION_MAX_ITER):
        if float(np.max(np.abs(_problem_residual(op, spec, u)))) <= spec.tol_residual / 10.0:
            return u
        step = deflated_step(op, spec, deflation, u)
        if step is None:
            return None
        u = u + _boundary_fraction(u, step) * step
        if not np.all(np.isfinite(u)) or float(np.max(u)) > 1e12:
            return None
    return None


def deflated_search(op: GreenOperator, spec: ProblemSpec, known: list[GridFunction],
                    barriers: Optional[BarrierSet] = None,
                    starts: Optional[list[GridFunction]] = None) -> Optional[GridFunction]:
    """Deflated Newton multistart. Returns a certified solution separated from all known ones, or None."""
    if len(known) < 2 and not starts:
        raise DomainError("Deflated search needs two known solutions or explicit starts")
    candidates = list(starts or [])
    if len(known) >= 2:
        u1, u2 = known[0], known[1]
        candidates += [t * u1 + (1.0 - t) * u2 for t in DEFLATION_BLEND]
    if barriers is not None:
        base = np.minimum(barriers.zeta2, barriers.theta2)
        rng = np.random.default_rng(spec.seed)
        candidates += [base * np.exp(0.1 * rng.standard_normal(op.n)) for _ in range(DEFLATION_PERTURBATIONS)]

    deflation = DeflationOperator(known)
    separation = 10.0 * spec.tol_residual
    for idx, start in enumerate(candidates):
        if np.any(start <= 0):
            continue
        u = _deflated_newton(op, spec, deflation, start)
        if u is None or np.any(u <= 0):
            logger.debug("Deflation start %d did not converge", idx)
            continue
        if known and min(float(np.max(np.abs(u - uk))) for uk in known) < separation:
            logger.debug("Deflation start %d returned a known solution", idx)
            continue
        if residual_P(op, spec, u) > spec.tol_residual:
            continue
        logger.info("Deflation start %d found a new solution, sup %.6g", idx, float(np.max(u)))
        return u
    return None


def three_solutions(op: GreenOperator, spec: ProblemSpec, window: Optional[Window] = None) -> SolutionSet:
    h = build_h(spec.nl, spec)
    window = window or lambda_window(op, spec, h)
    if not window.contains(spec.lam):
        raise WindowError("lambda=%g outside the window [%g, %g]" % (spec.lam, window.lambda1, window.lambda2))
    b = build_barriers(op, spec, h=h, window=window)

    run1 = maximal_fixed_point(op, spec, (b.zeta1, b.theta2))
    run2 = minimal_fixed_point(op, spec, (b.zeta2, b.theta1))
    u1, u2 = run1.result, run2.result
    u3 = None
    try:
        u3 = deflated_search(op, spec, [u1, u2], barriers=b)
    except SolverError:
        logger.warning("Deflated search failed at lambda=%g", spec.lam, exc_info=True)

    phi = principal_eigenpair(op).vector
    solutions = [Solution(u1, SolutionKind.MAXIMAL, run1.residual, cone_inf(u1, phi)),
                 Solution(u2, SolutionKind.MINIMAL, run2.residual, cone_inf(u2, phi))]
    found = [u1, u2]
    if u3 is not None:
        solutions.append(Solution(u3, SolutionKind.DEFLATED, residual_P(op, spec, u3), cone_inf(u3, phi)))
        found.append(u3)
    separations = [float(np.max(np.abs(a - b))) for i, a in enumerate(found) for b in found[i + 1:]]
    return SolutionSet(lam=spec.lam, u1=u1, u2=u2, u3=u3, residuals=[s.residual for s in solutions],
                       separations=separations, window=window, solutions=solutions)


def strong_increasing_gap(op: GreenOperator, spec: ProblemSpec, u1: GridFunction, u2: GridFunction) -> float:
    """cone_inf(T(u2) - T(u1), phi) for ordered distinct u1 <= u2."""
    if order_compare(u1, u2, spec.tol_order) != Ordering.LE:
        raise DomainError("strong_increasing_gap needs u1 <= u2 and u1 != u2")
    t1 = apply_T(op, spec, u1)
    t2 = apply_T(op, spec, u2, z0=t1.z)
    return cone_inf(t2.z - t1.z, principal_eigenpair(op).vector)


def solution_bounds(op: GreenOperator, spec: ProblemSpec) -> tuple[GridFunction, GridFunction]:
    """[Theta_lambda w, theta1], an order interval holding every solution at spec.lam."""
    return lower_barrier(op, spec), upper_barrier(op, spec)


def minimal_solution(op: GreenOperator, spec: ProblemSpec) -> FixedPointRun:
    return minimal_fixed_point(op, spec, solution_bounds(op, spec))


def maximal_solution(op: GreenOperator, spec: ProblemSpec) -> FixedPointRun:
    return maximal_fixed_point(op, spec, solution_bounds(op, spec))
