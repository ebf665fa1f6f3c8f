"""The sublinear problem (-Delta)^s v = v^p, its perturbation v^p - theta / v^gamma and their continuation in theta."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fracsing.core import GridFunction, ProblemSpec, check_grid_function, cone_inf
from fracsing.errors import ConfigurationError, ConvergenceError, DiscretizationError, DomainError, LineSearchError
from fracsing.operator import GreenOperator, linearized_eigenvalue, principal_eigenpair

logger = logging.getLogger("fracsing.semipositone")

I0_TOL = 1e-12
I0_MAX_ITER = 200
I0_RESTARTS = 3
I0_ZERO_LEVEL = 1e-8
CORRECTOR_MAX_ITER = 50
MAX_HALVINGS = 10
ARMIJO_C1 = 1e-4
FRACTION_TO_BOUNDARY = 0.95


@dataclass(frozen=True)
class SemipositoneSpec:
    p: float = 0.5
    gamma: Optional[float] = None
    theta_max: Optional[float] = None
    steps: int = 20
    q: float = 1.0 / 3.0
    tol: float = 1e-9
    cone_floor_fraction: float = 0.05

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ConfigurationError("q must lie in (0, 1), got %g" % self.q)
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.5 * (1.0 + self.q))
        if not 0 < self.p < 1:
            raise ConfigurationError("p must lie in (0, 1), got %g" % self.p)
        if not self.q < self.gamma < 1:
            raise ConfigurationError("gamma must lie in (q, 1) = (%g, 1), got %g" % (self.q, self.gamma))
        if self.theta_max is not None and not self.theta_max > 0:
            raise ConfigurationError("theta_max must be positive, got %g" % self.theta_max)
        if self.steps < 1:
            raise ConfigurationError("steps must be at least 1, got %d" % self.steps)


@dataclass(frozen=True)
class BranchPoint:
    theta: float
    v: GridFunction
    residual: float
    cone_inf: float

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.v))


@dataclass
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    theta_max: float = math.nan
    stop_reason: str = "theta_max"


@dataclass(frozen=True)
class I0Solve:
    v: GridFunction
    energies: list[float]
    iterations: int
    restarts: int


def i0_energy(op: GreenOperator, v: GridFunction, p: float) -> float:
    return 0.5 * op.energy_form(v) - float(np.sum(op.weights * np.abs(v) ** (p + 1.0))) / (p + 1.0)


def i0_gradient(op: GreenOperator, v: GridFunction, p: float) -> GridFunction:
    return op.stiffness(v) - op.weights * np.sign(v) * np.abs(v) ** p


def i0_residual(op: GreenOperator, v: GridFunction, p: float) -> GridFunction:
    return v - op.apply(v ** p)


def i0_initial_guess(op: GreenOperator, p: float, factor: float = 1.0) -> GridFunction:
    """factor times the torsion function, scaled so that sup K(v^p) = sup v."""
    t = op.torsion()
    ratio = float(np.max(op.apply(t ** p)) / np.max(t))
    return factor * ratio ** (1.0 / (1.0 - p)) * t


def _minimize_i0(op: GreenOperator, p: float, v0: GridFunction, tol: float) -> tuple[GridFunction, list[float], int]:
    v = np.array(v0, dtype=np.float64)
    energy = i0_energy(op, v, p)
    energies = [energy]
    for it in range(I0_MAX_ITER):
        res = i0_residual(op, v, p)
        res_norm = float(np.max(np.abs(res)))
        if res_norm <= tol * max(1.0, float(np.max(v))):
            return v, energies, it
        grad = op.stiffness(res)
        jac = np.eye(op.n) - op.matrix * (p * v ** (p - 1.0))[None, :]
        try:
            direction = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            direction = -res
        slope = float(grad @ direction)
        if not slope < 0:
            direction = -res
            slope = float(grad @ direction)

        neg = direction < 0
        step = 1.0
        if np.any(neg):
            step = min(step, FRACTION_TO_BOUNDARY * float(np.min(-v[neg] / direction[neg])))
        slack = 1e-13 * max(1.0, abs(energy))
        for _ in range(60):
            trial = v + step * direction
            trial_energy = i0_energy(op, trial, p)
            if trial_energy <= energy + ARMIJO_C1 * step * slope + slack:
                break
            step *= 0.5
        else:
            raise LineSearchError("Line search failed for the sublinear problem", iterations=it, residual=res_norm)
        v, energy = trial, trial_energy
        energies.append(energy)
        logger.debug("I0 Newton it=%d step=%.3g residual=%.3e energy=%.15g", it, step, res_norm, energy)
    raise ConvergenceError("Sublinear Newton did not converge", iterations=I0_MAX_ITER, residual=res_norm)


def minimize_i0(op: GreenOperator, p: float, factor: float = 1.0, tol: float = I0_TOL) -> I0Solve:
    if not 0 < p < 1:
        raise DomainError("Exponent p must lie in (0, 1), got %g" % p)
    for restart in range(I0_RESTARTS + 1):
        v, energies, iters = _minimize_i0(op, p, i0_initial_guess(op, p, factor), tol)
        if float(np.max(v)) > I0_ZERO_LEVEL and np.all(v > 0):
            return I0Solve(v=v, energies=energies, iterations=iters, restarts=restart)
        logger.warning("Sublinear solve collapsed to zero from factor %g, restarting larger", factor)
        factor *= 4.0
    raise ConvergenceError("Sublinear solve collapsed to the zero solution after %d restarts" % I0_RESTARTS,
                           iterations=I0_RESTARTS)


def solve_I0(op: GreenOperator, p: float, factor: float = 1.0, tol: float = I0_TOL) -> GridFunction:
    """The positive minimizer v0 of E0(v) = 1/2 <A v, v> - 1/(p+1) sum w |v|^(p+1)."""
    return minimize_i0(op, p, factor, tol).v


def verify_Lambda(op: GreenOperator, v0: GridFunction, p: float) -> float:
    """Principal eigenvalue of the linearization A - p v0^(p-1) at v0, which must be positive."""
    pair = linearized_eigenvalue(op, v0, p)
    if not pair.value > 0:
        raise DiscretizationError("Linearized eigenvalue %.6g is not positive, refine the grid" % pair.value)
    if np.any(pair.vector <= 0):
        raise DiscretizationError("Linearized eigenfunction changes sign at %d nodes" % int(np.sum(pair.vector <= 0)))
    gap = cone_inf(pair.vector, principal_eigenpair(op).vector)
    logger.info("Linearized eigenvalue %.10g, eigenfunction cone ratio %.6g", pair.value, gap)
    return pair.value


def theta_residual(op: GreenOperator, sp: SemipositoneSpec, theta: float, v: GridFunction) -> GridFunction:
    return v - op.apply(v ** sp.p - theta * v ** (-sp.gamma))


def _theta_jacobian(op: GreenOperator, sp: SemipositoneSpec, theta: float, v: GridFunction):
    d = sp.p * v ** (sp.p - 1.0) + theta * sp.gamma * v ** (-sp.gamma - 1.0)
    return np.eye(op.n) - op.matrix * d[None, :]


def solve_theta(op: GreenOperator, sp: SemipositoneSpec, theta: float, v_start: GridFunction) -> BranchPoint:
    """Corrector Newton for v = K(v^p - theta v^-gamma) from a positive start."""
    check_grid_function(op.grid, v_start)
    if np.any(v_start <= 0):
        raise DomainError("Corrector start must be positive at every interior node")
    v = np.array(v_start, dtype=np.float64)
    res = theta_residual(op, sp, theta, v)
    norm = float(np.max(np.abs(res)))
    for it in range(CORRECTOR_MAX_ITER):
        if norm <= sp.tol:
            break
        try:
            step = np.linalg.solve(_theta_jacobian(op, sp, theta, v), -res)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError("Singular corrector Jacobian at theta=%g" % theta, iterations=it,
                                   residual=norm) from e
        neg = step < 0
        t = 1.0
        if np.any(neg):
            t = min(1.0, FRACTION_TO_BOUNDARY * float(np.min(-v[neg] / step[neg])))
        for _ in range(30):
            trial = v + t * step
            trial_res = theta_residual(op, sp, theta, trial)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < norm:
                break
            t *= 0.5
        else:
            raise ConvergenceError("Corrector stalled at theta=%g" % theta, iterations=it, residual=norm)
        v, res, norm = trial, trial_res, trial_norm
        logger.debug("Corrector theta=%g it=%d residual=%.3e", theta, it, norm)
    else:
        raise ConvergenceError("Corrector did not converge at theta=%g" % theta, iterations=CORRECTOR_MAX_ITER,
                               residual=norm)
    return BranchPoint(theta=theta, v=v, residual=norm, cone_inf=cone_inf(v, principal_eigenpair(op).vector))


def _tangent(op: GreenOperator, sp: SemipositoneSpec, theta: float, v: GridFunction) -> GridFunction:
    return -np.linalg.solve(_theta_jacobian(op, sp, theta, v), op.apply(v ** (-sp.gamma)))


def default_theta_max(sp: SemipositoneSpec, v0: GridFunction) -> float:
    return sp.theta_max if sp.theta_max is not None else float(np.max(v0)) ** (sp.p + sp.gamma)


def continue_theta(op: GreenOperator, sp: SemipositoneSpec, v0: GridFunction) -> Branch:
    """Tangent predictor, Newton corrector in theta from theta = 0 until theta_max or the cone exit."""
    verify_Lambda(op, v0, sp.p)
    theta_max = default_theta_max(sp, v0)
    anchor = solve_theta(op, sp, 0.0, v0)
    floor = sp.cone_floor_fraction * anchor.cone_inf
    branch = Branch(points=[anchor], theta_max=theta_max)

    base = theta_max / sp.steps
    d_theta = base
    current = anchor
    while current.theta < theta_max * (1.0 - 1e-12):
        target = min(theta_max, current.theta + d_theta)
        predictor = current.v + (target - current.theta) * _tangent(op, sp, current.theta, current.v)
        if np.any(predictor <= 0):
            predictor = current.v
        try:
            point = solve_theta(op, sp, target, predictor)
        except (ConvergenceError, DomainError) as e:
            d_theta *= 0.5
            logger.debug("Corrector failed at theta=%g, halving the step: %s", target, e)
            if d_theta < base / 2 ** MAX_HALVINGS:
                if len(branch.points) == 1:
                    raise ConvergenceError("Continuation failed at the first step", iterations=MAX_HALVINGS)
                branch.stop_reason = "corrector"
                break
            continue
        if np.any(point.v <= 0) or point.cone_inf < floor:
            logger.info("Branch leaves the cone at theta=%g (cone ratio %.3g)", target, point.cone_inf)
            branch.stop_reason = "cone_exit"
            break
        branch.points.append(point)
        current = point
        d_theta = min(base, 2.0 * d_theta)
    logger.info("Theta branch with %d points up to theta=%g (%s)", len(branch.points), current.theta,
                branch.stop_reason)
    return branch


def si_barrier(op: GreenOperator, spec: ProblemSpec, sp: SemipositoneSpec, point: BranchPoint,
               k: Optional[float] = None) -> tuple[GridFunction, float]:
    """Largest strip width eta with v^p - theta v^-gamma + k v / delta^(s(q+1)) <= 0 wherever delta < eta.

    Returns eta = 0 when the inequality fails at the node closest to the boundary.
    """
    if k is None:
        k = spec.nl.h1_constant(spec.q, spec.lam)
    v = point.v
    delta = op.grid.delta
    lhs = v ** sp.p - point.theta * v ** (-sp.gamma) + k * v / delta ** (op.s * (spec.q + 1.0))
    failing = lhs > 0
    if not np.any(failing):
        return v, 1.0
    eta = float(np.min(delta[failing]))
    if eta <= float(np.min(delta)):
        logger.info("No boundary strip satisfies the barrier inequality at theta=%g, k=%g", point.theta, k)
        return v, 0.0
    return v, eta
