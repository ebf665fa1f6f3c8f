"""Solvers for the singular problems with a fixed forcing.

z + k K z = K(c (z + eps)^-q + g)

is the Euler-Lagrange equation of the strictly convex energy

E(z) = 1/2 <A z, z>_w + k/2 sum w z^2 - c/(1-q) sum w (z + eps)^(1-q) - sum w g z

so every solve is a globalized Newton minimization. The map T is the eps -> 0 limit, reached by halving eps and
finishing with an eps = 0 polish.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from fracsing.core import GridFunction, ProblemSpec, check_grid_function, cone_inf
from fracsing.errors import ConvergenceError, DomainError, LineSearchError, RefinementError, SolverError
from fracsing.operator import GreenOperator, principal_eigenpair

logger = logging.getLogger("fracsing.solver")

# Newton stops at this fraction of the requested residual, or at the roundoff floor
NEWTON_FRACTION = 1e-2
ROUNDOFF_FLOOR = 1e-14
NEWTON_MAX_ITER = 200
ARMIJO_C1 = 1e-4
FRACTION_TO_BOUNDARY = 0.95
MAX_BACKTRACKS = 60
EPS_START = 1.0
REFINE_HINT = "refine the grid (increase N) or lower eps_min"


class EpsStep(NamedTuple):
    eps: float
    sup_norm: float
    energy: float
    z: GridFunction


@dataclass(frozen=True)
class RegularizedSolve:
    z: GridFunction
    eps: float
    energy: float
    newton_iters: int
    grad_norm: float
    energies: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class TResult:
    z: GridFunction
    eps_trace: list[EpsStep]
    residual: float
    cone_lower: float
    m_lower: float = math.nan
    M_upper: float = math.nan
    barriers_ok: Optional[bool] = None
    shift: float = 0.0


def regularized_energy(op: GreenOperator, z: GridFunction, g: GridFunction, c_sing: float, q: float, eps: float,
                       shift: float = 0.0) -> float:
    w = op.weights
    return (0.5 * op.energy_form(z) + 0.5 * shift * float(np.sum(w * z * z))
            - c_sing / (1.0 - q) * float(np.sum(w * (z + eps) ** (1.0 - q))) - float(np.sum(w * g * z)))


def regularized_gradient(op: GreenOperator, z: GridFunction, g: GridFunction, c_sing: float, q: float, eps: float,
                         shift: float = 0.0) -> GridFunction:
    """Euclidean gradient of regularized_energy."""
    w = op.weights
    return op.stiffness(z) + shift * w * z - w * (c_sing * (z + eps) ** (-q) + g)


def equation_residual(op: GreenOperator, z: GridFunction, g: GridFunction, c_sing: float, q: float, eps: float = 0.0,
                      shift: float = 0.0) -> GridFunction:
    res = z - op.apply(c_sing * (z + eps) ** (-q) + g)
    if shift:
        res += shift * op.apply(z)
    return res


def _minimize(op: GreenOperator, g: GridFunction, c_sing: float, q: float, eps: float, z0: GridFunction,
              shift: float, tol: float, damping: float = 1.0) -> RegularizedSolve:
    z = np.array(z0, dtype=np.float64)
    energy = regularized_energy(op, z, g, c_sing, q, eps, shift)
    energies = [energy]
    eye = np.eye(op.n)
    base = eye + shift * op.matrix if shift else eye

    for it in range(NEWTON_MAX_ITER + 1):
        zs = z + eps
        resid = equation_residual(op, z, g, c_sing, q, eps, shift)
        grad_norm = float(np.max(np.abs(resid)))
        target = max(NEWTON_FRACTION * tol, ROUNDOFF_FLOOR * max(1.0, float(np.max(z))))
        if grad_norm <= target:
            return RegularizedSolve(z=z, eps=eps, energy=energy, newton_iters=it, grad_norm=grad_norm,
                                    energies=energies)
        if it == NEWTON_MAX_ITER:
            break

        grad = op.stiffness(resid)
        jac = base + op.matrix * (c_sing * q * zs ** (-q - 1.0))[None, :]
        direction = np.linalg.solve(jac, -resid)
        slope = float(grad @ direction)
        if not slope < 0:
            logger.debug("Newton direction is not a descent direction, using the gradient")
            direction = -resid
            slope = float(grad @ direction)

        neg = direction < 0
        step = damping
        if np.any(neg):
            step = min(step, FRACTION_TO_BOUNDARY * float(np.min(-z[neg] / direction[neg])))

        slack = 1e-13 * max(1.0, abs(energy))
        for _ in range(MAX_BACKTRACKS):
            trial = z + step * direction
            trial_energy = regularized_energy(op, trial, g, c_sing, q, eps, shift)
            if trial_energy <= energy + ARMIJO_C1 * step * slope + slack:
                break
            step *= 0.5
        else:
            # The energy is flat to roundoff here, accept if the residual is nearly converged
            if grad_norm <= tol:
                return RegularizedSolve(z=z, eps=eps, energy=energy, newton_iters=it, grad_norm=grad_norm,
                                        energies=energies)
            raise LineSearchError("Line search failed at eps=%g (residual %.3e)" % (eps, grad_norm),
                                  iterations=it, residual=grad_norm)

        z = trial
        energy = trial_energy
        energies.append(energy)
        logger.debug("Newton eps=%g it=%d step=%.3g residual=%.3e energy=%.12g", eps, it, step, grad_norm, energy)

    raise ConvergenceError("Newton did not converge at eps=%g" % eps, iterations=NEWTON_MAX_ITER, residual=grad_norm)


def _restart_guess(op: GreenOperator, g: GridFunction, c_sing: float, q: float, eps: float,
                   z0: GridFunction) -> GridFunction:
    level = float(np.max(z0)) + eps
    return np.maximum(op.apply(c_sing * level ** (-q) + np.maximum(g, 0.0)), 1e-300)


def _solve(op: GreenOperator, g: GridFunction, c_sing: float, q: float, eps: float, z0: GridFunction,
           shift: float, tol: float) -> RegularizedSolve:
    try:
        return _minimize(op, g, c_sing, q, eps, z0, shift, tol)
    except (LineSearchError, ConvergenceError) as e:
        logger.warning("Newton failed at eps=%g, restarting damped: %s", eps, e)
    return _minimize(op, g, c_sing, q, eps, _restart_guess(op, g, c_sing, q, eps, z0), shift, tol,
                     damping=0.5)


def solve_regularized(op: GreenOperator, g: GridFunction, c_sing: float, q: float, eps: float, z0: GridFunction,
                      shift: float = 0.0, tol: float = 1e-7) -> RegularizedSolve:
    check_grid_function(op.grid, g)
    check_grid_function(op.grid, z0)
    if not c_sing > 0:
        raise DomainError("Singular coefficient must be positive, got %g" % c_sing)
    if not eps > 0:
        raise DomainError("Regularization eps must be positive, got %g" % eps)
    if np.any(z0 <= 0):
        raise DomainError("Initial iterate must be positive at every interior node")
    if shift < 0:
        raise DomainError("Shift must be nonnegative, got %g" % shift)
    return _solve(op, g, c_sing, q, eps, z0, shift, tol)


def _initial_guess(op: GreenOperator, g: GridFunction, c_sing: float, q: float) -> GridFunction:
    return np.maximum(op.apply(c_sing * EPS_START ** (-q) + np.maximum(g, 0.0)), 1e-300)


def _continuation(op: GreenOperator, g: GridFunction, c_sing: float, q: float, shift: float, eps_min: float,
                  tol: float) -> list[EpsStep]:
    trace: list[EpsStep] = []
    z = _initial_guess(op, g, c_sing, q)
    eps = EPS_START
    while eps >= eps_min:
        res = _solve(op, g, c_sing, q, eps, z, shift, tol)
        trace.append(EpsStep(eps=eps, sup_norm=float(np.max(np.abs(res.z))), energy=res.energy, z=res.z))
        done = float(np.max(np.abs(res.z - z))) < tol / 10.0 and len(trace) > 1
        z = res.z
        if done:
            break
        eps *= 0.5

    polish = _solve(op, g, c_sing, q, 0.0, z, shift, tol)
    trace.append(EpsStep(eps=0.0, sup_norm=float(np.max(np.abs(polish.z))), energy=polish.energy, z=polish.z))
    logger.debug("Continuation finished after %d steps, sup %.6g", len(trace), trace[-1].sup_norm)
    return trace


def solve_singular(op: GreenOperator, g: GridFunction, c_sing: float, q: float, shift: float = 0.0,
                   eps_min: float = 1e-8, tol: float = 1e-7, z0: Optional[GridFunction] = None) -> list[EpsStep]:
    """Solves z + k K z = K(c z^-q + g). With a warm start only the final polish runs."""
    check_grid_function(op.grid, g)
    if z0 is not None and np.all(z0 > 0):
        try:
            res = _solve(op, g, c_sing, q, 0.0, z0, shift, tol)
            return [EpsStep(eps=0.0, sup_norm=float(np.max(res.z)), energy=res.energy, z=res.z)]
        except SolverError:
            logger.warning("Warm-started solve failed, running the full eps schedule", exc_info=True)
    return _continuation(op, g, c_sing, q, shift, eps_min, tol)


def solve_pure_singular(op: GreenOperator, q: float, c: float, tol_residual: float = 1e-7,
                        eps_min: float = 1e-8) -> GridFunction:
    """Positive solution of (-Delta)^s w = c / w^q."""
    if not c > 0:
        raise DomainError("Coefficient c must be positive, got %g" % c)
    g = np.zeros(op.n)
    w = solve_singular(op, g, c, q, eps_min=eps_min, tol=tol_residual)[-1].z
    residual = float(np.max(np.abs(w - c * op.apply(w ** (-q)))))
    if residual > tol_residual:
        raise RefinementError(residual, tol_residual, REFINE_HINT)
    return w


def pure_singular_profile(op: GreenOperator, q: float) -> GridFunction:
    """The profile w of (-Delta)^s w = 1 / w^q, memoized on the operator."""

    def build():
        w = solve_pure_singular(op, q, 1.0)
        w.setflags(write=False)
        return w

    return op.memo(("pure_singular", q), build)


def _subsolution_level(lambda1: float, c_sing: float, q: float) -> float:
    # Largest m with m lambda1 (m + 1)^q <= c
    lo, hi = 0.0, 1.0
    while hi * lambda1 * (hi + 1.0) ** q <= c_sing:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * lambda1 * (mid + 1.0) ** q <= c_sing:
            lo = mid
        else:
            hi = mid
    return lo


def _supersolution_level(c_sing: float, q: float, target: float) -> float:
    # Smallest dyadic M with M - c M^-q >= target
    level = 1.0
    while level - c_sing * level ** (-q) < target:
        level *= 2.0
    return level


def apply_T(op: GreenOperator, spec: ProblemSpec, u: GridFunction, shift: float = 0.0,
            z0: Optional[GridFunction] = None) -> TResult:
    check_grid_function(op.grid, u)
    q = spec.q
    c_sing = spec.c_sing()
    g = spec.nl.ftilde(u, q, spec.lam)
    if shift:
        g = g + shift * u

    trace = solve_singular(op, g, c_sing, q, shift=shift, eps_min=spec.eps_min, tol=spec.tol_residual, z0=z0)
    z = trace[-1].z
    residual = float(np.max(np.abs(equation_residual(op, z, g, c_sing, q, shift=shift))))
    if residual > spec.tol_residual:
        raise RefinementError(residual, spec.tol_residual, REFINE_HINT)

    eig = principal_eigenpair(op)
    res = TResult(z=z, eps_trace=trace, residual=residual, cone_lower=cone_inf(z, eig.vector), shift=shift)
    if shift:
        return res

    w = pure_singular_profile(op, q)
    m_lower = _subsolution_level(eig.value, c_sing, q)
    M_upper = _supersolution_level(c_sing, q, float(np.max(g * w ** q)))
    ok = bool(np.all(z >= m_lower * eig.vector - spec.tol_order) and np.all(z <= M_upper * w + spec.tol_order))
    if not ok:
        logger.warning("Barrier certificate m phi <= T(u) <= M w failed (m=%g, M=%g)", m_lower, M_upper)
    return TResult(z=z, eps_trace=trace, residual=residual, cone_lower=res.cone_lower, m_lower=m_lower,
                   M_upper=M_upper, barriers_ok=ok, shift=shift)


def residual_P(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> float:
    """Sup-norm residual of u = K(lambda f(u) / u^q)."""
    check_grid_function(op.grid, u)
    if np.any(u <= 0):
        raise DomainError("Residual needs a positive function, %d nonpositive nodes" % int(np.sum(u <= 0)))
    return float(np.max(np.abs(u - op.apply(spec.lam * spec.nl.f(u) / u ** spec.q))))
