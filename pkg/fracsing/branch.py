"""Bifurcation branches in lambda, the lower bound check and the large-lambda uniqueness scan."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from fracsing.barriers import Window, build_barriers, build_h, lambda_window, lower_barrier
from fracsing.core import GridFunction, ProblemSpec, cone_inf
from fracsing.enumutils import SolutionKind
from fracsing.errors import CertificationError, ConfigurationError, FracSingException
from fracsing.multiplicity import deflated_search, maximal_fixed_point, minimal_fixed_point, solution_bounds
from fracsing.operator import GreenOperator, principal_eigenpair
from fracsing.pool import DEFAULT_WORKERS, WorkerPool
from fracsing.singular_solver import residual_P

logger = logging.getLogger("fracsing.branch")

FLAG_OK = "ok"
DEFAULT_GRID_POINTS = 40


@dataclass(frozen=True)
class BranchRow:
    lam: float
    kind: SolutionKind
    sup_norm: float
    residual: float
    cone_inf: float
    flag: str = FLAG_OK
    u: Optional[GridFunction] = field(default=None, compare=False, repr=False)

    @property
    def ok(self) -> bool:
        return self.flag == FLAG_OK

    def sort_key(self) -> tuple:
        return self.lam, not self.ok, self.sup_norm if self.ok else math.inf


@dataclass
class BifurcationBranch:
    rows: list[BranchRow] = field(default_factory=list)
    window: Optional[Window] = None
    empirical_lambda_star: Optional[float] = None

    def lambdas(self) -> list[float]:
        return sorted({r.lam for r in self.rows})

    def rows_at(self, lam: float) -> list[BranchRow]:
        return [r for r in self.rows if r.lam == lam]

    def solution_count(self, lam: float) -> int:
        return sum(1 for r in self.rows_at(lam) if r.ok)


@dataclass(frozen=True)
class UniquenessRow:
    lam: float
    min_sup: float
    max_sup: float
    gap: float
    unique: bool
    flag: str = FLAG_OK
    contraction: float = math.nan


@dataclass
class UniquenessReport:
    rows: list[UniquenessRow] = field(default_factory=list)
    lambda_star: Optional[float] = None
    decay_exponent: Optional[float] = None
    contraction_exponent: Optional[float] = None
    predicted_exponent: float = math.nan
    f5_verified: bool = False


def default_lambda_grid(window: Optional[Window], points: int = DEFAULT_GRID_POINTS) -> list[float]:
    if window is not None and not window.empty:
        lo, hi = 0.01 * window.lambda1, 100.0 * window.lambda2
    else:
        lo, hi = 1e-2, 1e3
    return [float(v) for v in np.geomspace(lo, hi, points)]


def _check_lambda_grid(lambda_grid: Sequence[float]) -> list[float]:
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ConfigurationError("Lambda grid is empty")
    if any(v <= 0 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError("Lambda grid must be positive and strictly increasing")
    return grid


def threshold_lambda(lams: Sequence[float], unique: Sequence[bool]) -> Optional[float]:
    """Smallest lambda after which every flag is set, None if the last one is not."""
    if not unique or not unique[-1]:
        return None
    k = len(unique)
    while k > 0 and unique[k - 1]:
        k -= 1
    return lams[k]


def _row(spec: ProblemSpec, kind: SolutionKind, u: GridFunction, residual: float, phi: GridFunction) -> BranchRow:
    return BranchRow(lam=spec.lam, kind=kind, sup_norm=float(np.max(u)), residual=residual, cone_inf=cone_inf(u, phi),
                     u=u)


def _failure_row(lam: float, kind: SolutionKind, e: Exception) -> BranchRow:
    return BranchRow(lam=lam, kind=kind, sup_norm=math.nan, residual=math.nan, cone_inf=math.nan,
                     flag=type(e).__name__)


def _solve_at(op: GreenOperator, spec: ProblemSpec, window: Optional[Window]) -> list[BranchRow]:
    phi = principal_eigenpair(op).vector
    rows = []
    try:
        lo, hi = solution_bounds(op, spec)
        run = minimal_fixed_point(op, spec, (lo, hi))
        rows.append(_row(spec, SolutionKind.MINIMAL, run.result, run.residual, phi))
    except FracSingException as e:
        logger.warning("Minimal solution failed at lambda=%g", spec.lam, exc_info=True)
        rows.append(_failure_row(spec.lam, SolutionKind.MINIMAL, e))

    if window is None or not window.contains(spec.lam):
        return rows
    try:
        b = build_barriers(op, spec, window=window)
        run1 = maximal_fixed_point(op, spec, (b.zeta1, b.theta2))
        run2 = minimal_fixed_point(op, spec, (b.zeta2, b.theta1))
        rows.append(_row(spec, SolutionKind.MAXIMAL, run1.result, run1.residual, phi))
        rows.append(_row(spec, SolutionKind.MINIMAL, run2.result, run2.residual, phi))
    except FracSingException as e:
        logger.warning("Window solutions failed at lambda=%g", spec.lam, exc_info=True)
        rows.append(_failure_row(spec.lam, SolutionKind.MAXIMAL, e))
    return rows


def merge_rows(rows: list[BranchRow], separation: float) -> list[BranchRow]:
    """Drops successful rows within `separation` in sup norm of an earlier row at the same lambda."""
    kept: list[BranchRow] = []
    for r in rows:
        dup = r.ok and r.u is not None and any(
            k.ok and k.lam == r.lam and k.u is not None and float(np.max(np.abs(k.u - r.u))) < separation
            for k in kept)
        if not dup:
            kept.append(r)
    return kept


async def trace_branch(op: GreenOperator, spec: ProblemSpec, lambda_grid: Sequence[float],
                       workers: int = DEFAULT_WORKERS, window: Optional[Window] = None,
                       search: bool = True) -> BifurcationBranch:
    grid = _check_lambda_grid(lambda_grid)
    if window is None:
        try:
            window = lambda_window(op, spec, build_h(spec.nl, spec))
        except FracSingException:
            logger.warning("Lambda window is unavailable, tracing minimal solutions only", exc_info=True)

    async with WorkerPool(workers) as pool:
        per_lambda = await pool.map(lambda lam: _solve_at(op, spec.with_lambda(lam), window), grid)

    separation = 10.0 * spec.tol_residual
    phi = principal_eigenpair(op).vector
    previous: list[GridFunction] = []
    rows: list[BranchRow] = []
    for lam, lam_rows in zip(grid, per_lambda):
        lam_rows = merge_rows(lam_rows, separation)
        known = [r.u for r in lam_rows if r.ok]
        if search and (len(known) >= 2 or (known and previous)):
            lam_spec = spec.with_lambda(lam)
            try:
                u3 = deflated_search(op, lam_spec, known, starts=previous)
                if u3 is not None:
                    lam_rows.append(_row(lam_spec, SolutionKind.DEFLATED, u3, residual_P(op, lam_spec, u3), phi))
            except FracSingException:
                logger.warning("Deflated search failed at lambda=%g", lam, exc_info=True)
        rows.extend(lam_rows)
        previous = [r.u for r in lam_rows if r.ok]
        logger.info("lambda=%g: %d solution(s)", lam, len(previous))

    rows.sort(key=BranchRow.sort_key)
    branch = BifurcationBranch(rows=rows, window=window)
    counts = [branch.solution_count(lam) for lam in grid]
    branch.empirical_lambda_star = threshold_lambda(grid, [c == 1 for c in counts])
    return branch


def lower_bound_check(op: GreenOperator, spec: ProblemSpec, u: GridFunction, lam: float) -> float:
    """min(u - Theta_lambda w); every solution at lambda has a margin >= -tol_order."""
    return float(np.min(u - lower_barrier(op, spec.with_lambda(lam))))


def uniqueness_contraction(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> float:
    """Spectral radius of lambda K diag(max(f0'(u), 0)) at the minimal solution u.

    Linearizes v - u <= lambda K(f0'_+ (v - u)) for a second solution v >= u near u.
    Decays like lambda^(-(1-q)/(1+q)).
    """
    gain = np.maximum(spec.lam * spec.nl.f0_prime(u, spec.q), 0.0)
    if not np.any(gain > 0):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(op.matrix * gain[None, :]))))


def _scan_at(op: GreenOperator, spec: ProblemSpec) -> UniquenessRow:
    try:
        interval = solution_bounds(op, spec)
        lo = minimal_fixed_point(op, spec, interval).result
        hi = maximal_fixed_point(op, spec, interval).result
    except FracSingException as e:
        logger.warning("Uniqueness scan failed at lambda=%g", spec.lam, exc_info=True)
        return UniquenessRow(lam=spec.lam, min_sup=math.nan, max_sup=math.nan, gap=math.nan, unique=False,
                             flag=type(e).__name__)
    gap = float(np.max(np.abs(hi - lo)))
    return UniquenessRow(lam=spec.lam, min_sup=float(np.max(lo)), max_sup=float(np.max(hi)), gap=gap,
                         unique=gap < 10.0 * spec.tol_residual, contraction=uniqueness_contraction(op, spec, lo))


def decay_exponent(rows: Sequence[UniquenessRow], floor: float) -> Optional[float]:
    """Slope of log(gap) against log(lambda) over rows with a gap above `floor`."""
    pts = [(r.lam, r.gap) for r in rows if r.flag == FLAG_OK and r.gap > floor]
    if len(pts) < 2:
        return None
    lams, gaps = np.array(pts).T
    return float(np.polyfit(np.log(lams), np.log(gaps), 1)[0])


def contraction_exponent(rows: Sequence[UniquenessRow]) -> Optional[float]:
    """Slope of log(contraction) against log(lambda) from the largest contraction on."""
    pts = [(r.lam, r.contraction) for r in rows if r.flag == FLAG_OK and r.contraction > 0]
    if len(pts) < 2:
        return None
    lams, radii = np.array(pts).T
    peak = int(np.argmax(radii))
    if len(lams) - peak < 2:
        return None
    return float(np.polyfit(np.log(lams[peak:]), np.log(radii[peak:]), 1)[0])


async def uniqueness_scan(op: GreenOperator, spec: ProblemSpec, lambda_list: Sequence[float],
                          workers: int = DEFAULT_WORKERS) -> UniquenessReport:
    grid = _check_lambda_grid(lambda_list)
    async with WorkerPool(workers) as pool:
        rows = await pool.map(lambda lam: _scan_at(op, spec.with_lambda(lam)), grid)

    report = UniquenessReport(rows=rows, predicted_exponent=-(1.0 - spec.q) / (1.0 + spec.q),
                              decay_exponent=decay_exponent(rows, 10.0 * spec.tol_residual),
                              contraction_exponent=contraction_exponent(rows))
    report.f5_verified = spec.nl.satisfies_f5(spec.q, spec.alpha_f5)
    if report.f5_verified:
        report.lambda_star = threshold_lambda(grid, [r.unique for r in rows])
    else:
        logger.warning("f(t)/t^q is not verified nonincreasing beyond %s, not reporting lambda*", spec.alpha_f5)
    return report


def audit_rows(op: GreenOperator, spec: ProblemSpec, rows: Sequence[BranchRow]) -> float:
    """Recomputes the residual of every stored solution. Returns the largest one."""
    worst = 0.0
    for r in rows:
        if not r.ok:
            continue
        if r.u is None:
            raise CertificationError("Row at lambda=%g carries no nodal values" % r.lam)
        res = residual_P(op, spec.with_lambda(r.lam), r.u)
        if res > spec.tol_residual:
            raise CertificationError("Row at lambda=%g (%s) fails the audit: residual %.3e" % (r.lam, r.kind, res))
        worst = max(worst, res)
    return worst
