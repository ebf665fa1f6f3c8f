import math
from typing import Optional

import numpy as np
import numpy.typing as npt

from fracsing.errors import ConvergenceError, DomainError

_FPMIN = 1e-300
_MAX_ITER = 500
# Relative accuracy of the continued fraction
_EPS = 1e-14


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def beta(a: float, b: float) -> float:
    return math.exp(log_beta(a, b))


def _guard(v: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return np.where(np.abs(v) < _FPMIN, _FPMIN, v)


# Modified Lentz evaluation of the incomplete beta continued fraction, vectorized over x.
# All entries run the same number of terms, the loop ends once every entry has converged.
def _betacf(a: float, b: float, x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 / _guard(1.0 - qab * x / qap)
    h = d.copy()
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 / _guard(1.0 + aa * d)
        c = _guard(1.0 + aa / c)
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 / _guard(1.0 + aa * d)
        c = _guard(1.0 + aa / c)
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < _EPS):
            return h
    raise ConvergenceError("Incomplete beta continued fraction did not converge (a=%g, b=%g)" % (a, b),
                           iterations=_MAX_ITER)


def incomplete_beta(a: float, b: float, x: npt.ArrayLike,
                    xc: Optional[npt.ArrayLike] = None) -> npt.NDArray[np.float64]:
    """Regularized incomplete beta function I_x(a, b), elementwise over x.

    `xc` is 1 - x; pass it when it is known more accurately than the subtraction would give.
    """
    if a <= 0 or b <= 0:
        raise DomainError("Incomplete beta needs a > 0 and b > 0, got a=%g, b=%g" % (a, b))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    xc = 1.0 - x if xc is None else np.atleast_1d(np.asarray(xc, dtype=np.float64))
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise DomainError("Incomplete beta argument outside [0, 1]")

    res = np.empty_like(x)
    res[x <= 0] = 0.0
    res[xc <= 0] = 1.0
    inner = (x > 0) & (xc > 0)
    lower = inner & (x < (a + 1.0) / (a + b + 2.0))
    upper = inner & ~lower
    lb = log_beta(a, b)
    if np.any(lower):
        xl, xlc = x[lower], xc[lower]
        front = np.exp(a * np.log(xl) + b * np.log(xlc) - lb)
        res[lower] = front * _betacf(a, b, xl) / a
    if np.any(upper):
        xu, xuc = x[upper], xc[upper]
        front = np.exp(a * np.log(xu) + b * np.log(xuc) - lb)
        res[upper] = 1.0 - front * _betacf(b, a, xuc) / b
    return res


def incomplete_beta_complement(a: float, b: float, x: npt.ArrayLike,
                               xc: Optional[npt.ArrayLike] = None) -> npt.NDArray[np.float64]:
    """1 - I_x(a, b) computed without cancellation, i.e. I_{1-x}(b, a)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    xc = 1.0 - x if xc is None else np.atleast_1d(np.asarray(xc, dtype=np.float64))
    return incomplete_beta(b, a, xc, x)
