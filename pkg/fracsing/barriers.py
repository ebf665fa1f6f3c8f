"""Sub- and supersolutions of the singular problem and the admissible lambda window."""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import numpy.typing as npt
from scipy.optimize import minimize_scalar

from fracsing.core import GridFunction, Nonlinearity, ProblemSpec, order_compare
from fracsing.enumutils import Ordering
from fracsing.errors import BarrierError, ConfigurationError, WindowError
from fracsing.operator import EigenPair, GreenOperator, OperatorConstants, constants, principal_eigenpair
from fracsing.singular_solver import pure_singular_profile

logger = logging.getLogger("fracsing.barriers")

M_BRACKET = (1.0, 2.0 ** 60)
M_FLOOR = 1e-12
WINDOW_SLACK = 1e-12
A_GRID_POINTS = 4000
H_TABLE_POINTS = 4096
H_SAMPLE_POINTS = 10000


class TruncationH(object):
    """Nondecreasing truncation of f(u)/u^q below sigma1.

    h(u) is the running minimum of f(t)/t^q over [u, sigma1] on a table of points (taken at the table point just
    below u), f*(sigma) for u <= 0 and f(u)/u^q itself above sigma1.
    """

    def __init__(self, nl: Nonlinearity, q: float, sigma: float, fstar: float, argmin: float,
                 table_t: npt.NDArray[np.float64], table_h: npt.NDArray[np.float64]):
        self.nl = nl
        self.q = q
        self.sigma = sigma
        self.fstar = fstar
        self.argmin = argmin
        self.table_t = table_t
        self.table_h = table_h

    def __call__(self, u: npt.ArrayLike) -> npt.NDArray[np.float64]:
        u = np.asarray(u, dtype=np.float64)
        idx = np.searchsorted(self.table_t, u, side="right") - 1
        below = np.where(idx >= 0, self.table_h[np.clip(idx, 0, len(self.table_h) - 1)], self.fstar)
        above = self.nl.f0(np.maximum(u, self.sigma), self.q)
        return np.where(u >= self.sigma, above, below)


def _fstar(nl: Nonlinearity, q: float, sigma: float) -> tuple[float, float]:
    t = np.geomspace(sigma * 1e-8, sigma, 2001)
    vals = nl.f0(t, q)
    k = int(np.argmin(vals))
    best_t, best = float(t[k]), float(vals[k])
    if 0 < k < len(t) - 1:
        res = minimize_scalar(lambda x: float(nl.f0(np.array([x]), q)[0]), method="golden",
                              bracket=(float(t[k - 1]), best_t, float(t[k + 1])))
        if res.success and t[k - 1] <= res.x <= t[k + 1] and res.fun < best:
            best_t, best = float(res.x), float(res.fun)
    return best, best_t


def build_h(nl: Nonlinearity, spec: ProblemSpec) -> TruncationH:
    q, sigma = spec.q, spec.sigma1
    fstar, argmin = _fstar(nl, q, sigma)
    table_t = np.unique(np.concatenate([np.geomspace(sigma * 1e-8, sigma, H_TABLE_POINTS), [argmin]]))
    vals = nl.f0(table_t, q)
    vals[table_t == argmin] = fstar
    # Running minimum from the right
    table_h = np.minimum.accumulate(vals[::-1])[::-1]
    h = TruncationH(nl, q, sigma, fstar, argmin, table_t, table_h)

    sample = np.linspace(0.0, spec.sigma2, H_SAMPLE_POINTS + 1)[1:]
    hs = h(sample)
    drop = float(np.min(np.diff(hs)))
    if drop < -1e-12 * float(np.max(hs)):
        raise BarrierError("h nondecreasing on (0, sigma2]", drop)
    excess = float(np.max(hs - nl.f0(sample, q)))
    if excess > 1e-12 * float(np.max(hs)):
        raise BarrierError("h(u) <= f(u)/u^q", excess)
    return h


class FirstPair(NamedTuple):
    zeta1: GridFunction
    theta1: GridFunction
    m_lambda: float
    M_lambda: float


def _m_condition(spec: ProblemSpec, M: float, w_sup: float) -> bool:
    return M ** (spec.q + 1.0) >= spec.lam * float(spec.nl.f(np.array([M * w_sup]))[0])


def first_pair(op: GreenOperator, spec: ProblemSpec, w: GridFunction, eig: EigenPair,
               cap: Optional[GridFunction] = None, floor: Optional[GridFunction] = None) -> FirstPair:
    """zeta1 = m phi and theta1 = M w. A cap bounds zeta1 from above, a floor bounds theta1 from below."""
    w_sup = float(np.max(w))
    lo, hi = M_BRACKET
    if _m_condition(spec, lo, w_sup):
        big_m = lo
    else:
        if not _m_condition(spec, hi, w_sup):
            raise BarrierError("M^(q+1) >= lambda f(M |w|)", hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _m_condition(spec, mid, w_sup):
                hi = mid
            else:
                lo = mid
        big_m = hi

    if floor is not None:
        big_m = max(big_m, float(np.max(floor / w)))
        while not _m_condition(spec, big_m, w_sup):
            big_m *= 2.0
            if big_m > M_BRACKET[1]:
                raise BarrierError("M^(q+1) >= lambda f(M |w|)", big_m)
    theta1 = big_m * w

    phi = eig.vector
    m = 1.0
    while m >= M_FLOOR:
        zeta = m * phi
        ok = np.all(eig.value * zeta <= spec.lam * spec.nl.f0(zeta, spec.q)) and np.all(zeta <= theta1)
        if ok and (cap is None or np.all(zeta <= cap)):
            logger.debug("First pair m=%g M=%g", m, big_m)
            return FirstPair(zeta1=zeta, theta1=theta1, m_lambda=m, M_lambda=big_m)
        m *= 0.5
    raise BarrierError("lambda1 m phi <= lambda f(m phi)/(m phi)^q", M_FLOOR)


def supersolution_bound(spec: ProblemSpec, w_sup: float) -> float:
    s1 = spec.sigma1
    return s1 ** (spec.q + 1.0) / (float(spec.nl.f(np.array([s1]))[0]) * w_sup ** (spec.q + 1.0))


def second_supersolution(op: GreenOperator, spec: ProblemSpec, w: GridFunction) -> GridFunction:
    w_sup = float(np.max(w))
    bound = supersolution_bound(spec, w_sup)
    if spec.lam > bound * (1.0 + WINDOW_SLACK):
        raise WindowError("lambda=%g violates lambda <= sigma1^(q+1)/(f(sigma1) |w|^(q+1)) = %g" % (spec.lam, bound))
    theta2 = (w / w_sup) * spec.sigma1
    margin = float(np.min(theta2 - op.apply(spec.lam * spec.nl.f0(theta2, spec.q))))
    if margin < -spec.tol_order:
        raise BarrierError("theta2 >= K(lambda f(theta2)/theta2^q)", margin)
    return theta2


def second_subsolution(op: GreenOperator, spec: ProblemSpec, h: TruncationH, R: float, a: float) -> GridFunction:
    if not spec.sigma1 < a <= spec.sigma2:
        raise ConfigurationError("Level a must lie in (sigma1, sigma2], got %g" % a)
    chi = op.grid.indicator(R)
    inside = chi > 0
    v = a * chi
    zeta2 = spec.lam * op.apply(h(v))

    lower = float(np.min(zeta2[inside]) - a)
    if lower < -spec.tol_order:
        raise BarrierError("v1 >= a on [-R, R]", lower)
    upper = float(spec.sigma2 - np.max(zeta2))
    if upper < -spec.tol_order:
        raise BarrierError("v1 <= sigma2", upper)
    if np.any(zeta2 <= 0):
        raise BarrierError("v1 > 0", float(np.min(zeta2)))
    return zeta2


@dataclass(frozen=True)
class Window:
    lambda1: float
    lambda2: float
    a_star: float
    M2: float
    M3: float
    C1: float
    R: float
    w_sup: float
    binding: str

    @property
    def empty(self) -> bool:
        return not self.lambda1 <= self.lambda2

    def contains(self, lam: float) -> bool:
        return not self.empty and self.lambda1 * (1 - WINDOW_SLACK) <= lam <= self.lambda2 * (1 + WINDOW_SLACK)

    def to_json(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "a_star": self.a_star, "M2": self.M2,
                "M3": self.M3, "C1": self.C1, "R": self.R, "w_sup": self.w_sup, "binding": self.binding,
                "empty": self.empty}


def window_bounds(consts: OperatorConstants, spec: ProblemSpec, h: TruncationH, w_sup: float,
                  a: npt.ArrayLike) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], float]:
    ha = h(a)
    lambda1 = consts.M2 * np.asarray(a) / ha
    sup_bound = supersolution_bound(spec, w_sup)
    lambda2 = np.minimum(sup_bound, consts.M3 * spec.sigma2 / ha)
    return lambda1, lambda2, sup_bound


def lambda_window(op: GreenOperator, spec: ProblemSpec, h: TruncationH) -> Window:
    consts = constants(op, spec.R)
    w_sup = float(np.max(pure_singular_profile(op, spec.q)))
    a = np.linspace(spec.sigma1, spec.sigma2, A_GRID_POINTS + 1)[1:]
    lambda1, lambda2, sup_bound = window_bounds(consts, spec, h, w_sup, a)
    k = int(np.argmax(lambda2 / lambda1))
    a_star = float(a[k])
    binding = "sigma1" if sup_bound <= consts.M3 * spec.sigma2 / float(h(a_star)) else "sigma2"
    window = Window(lambda1=float(lambda1[k]), lambda2=float(lambda2[k]), a_star=a_star, M2=consts.M2, M3=consts.M3,
                    C1=consts.C1, R=spec.R, w_sup=w_sup, binding=binding)
    logger.info("Lambda window [%.6g, %.6g] at a*=%.6g (%s)", window.lambda1, window.lambda2, a_star,
                "empty" if window.empty else "binding " + binding)
    return window


@dataclass(frozen=True)
class BarrierSet:
    zeta1: GridFunction
    theta1: GridFunction
    zeta2: GridFunction
    theta2: GridFunction
    m_lambda: float
    M_lambda: float
    a: float
    lambda1: float
    lambda2: float
    w_sup: float


def one_sided_margin(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> float:
    """min(K(lambda f(u)/u^q) - u). Subsolutions have a margin >= -tol, supersolutions a margin <= tol."""
    return float(np.min(op.apply(spec.lam * spec.nl.f0(u, spec.q)) - u))


def supersolution_margin(op: GreenOperator, spec: ProblemSpec, u: GridFunction) -> float:
    return float(np.min(u - op.apply(spec.lam * spec.nl.f0(u, spec.q))))


def build_barriers(op: GreenOperator, spec: ProblemSpec, h: Optional[TruncationH] = None,
                   window: Optional[Window] = None) -> BarrierSet:
    h = h or build_h(spec.nl, spec)
    window = window or lambda_window(op, spec, h)
    if not window.contains(spec.lam):
        raise WindowError("lambda=%g outside the window [%g, %g]" % (spec.lam, window.lambda1, window.lambda2))

    w = pure_singular_profile(op, spec.q)
    zeta2 = second_subsolution(op, spec, h, spec.R, window.a_star)
    theta2 = second_supersolution(op, spec, w)
    pair = first_pair(op, spec, w, principal_eigenpair(op), cap=np.minimum(zeta2, theta2),
                      floor=np.maximum(zeta2, theta2))

    tol = spec.tol_order
    for name, lo, hi in (("zeta1 <= zeta2", pair.zeta1, zeta2), ("zeta1 <= theta2", pair.zeta1, theta2),
                         ("zeta2 <= theta1", zeta2, pair.theta1), ("theta2 <= theta1", theta2, pair.theta1)):
        if order_compare(lo, hi, tol) not in (Ordering.LE, Ordering.EQUAL):
            raise BarrierError(name, float(np.min(hi - lo)))
    if float(np.max(zeta2)) <= spec.sigma1:
        raise BarrierError("sup zeta2 > sigma1", float(np.max(zeta2)) - spec.sigma1)
    check_one_sided(op, spec, {"zeta1": pair.zeta1, "zeta2": zeta2}, {"theta1": pair.theta1, "theta2": theta2})

    return BarrierSet(zeta1=pair.zeta1, theta1=pair.theta1, zeta2=zeta2, theta2=theta2, m_lambda=pair.m_lambda,
                      M_lambda=pair.M_lambda, a=window.a_star, lambda1=window.lambda1, lambda2=window.lambda2,
                      w_sup=float(np.max(w)))


def lower_barrier(op: GreenOperator, spec: ProblemSpec) -> GridFunction:
    """Theta_lambda w, a subsolution lying below every solution."""
    return spec.theta_lambda() * pure_singular_profile(op, spec.q)


def upper_barrier(op: GreenOperator, spec: ProblemSpec) -> GridFunction:
    w = pure_singular_profile(op, spec.q)
    return first_pair(op, spec, w, principal_eigenpair(op), floor=lower_barrier(op, spec)).theta1


def check_one_sided(op: GreenOperator, spec: ProblemSpec, subs: dict[str, GridFunction],
                    sups: dict[str, GridFunction]) -> None:
    """Raise BarrierError naming the first barrier that misses its one-sided inequality."""
    tol = spec.tol_order
    for name, u in subs.items():
        margin = one_sided_margin(op, spec, u)
        if margin < -tol:
            raise BarrierError("%s <= K(lambda f(%s)/%s^q)" % (name, name, name), margin)
    for name, u in sups.items():
        margin = supersolution_margin(op, spec, u)
        if margin < -tol:
            raise BarrierError("%s >= K(lambda f(%s)/%s^q)" % (name, name, name), margin)
