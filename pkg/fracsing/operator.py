"""The Green operator of the fractional Laplacian on (-1, 1) and its spectral data.

The kernel matrix `S` is symmetric with S[i, j] = G(x_i, x_j) off the diagonal. The diagonal carries the
remainder of the row integral, so the operator K = S diag(w) reproduces

    (K g)(x_i) = sum_{j != i} G(x_i, x_j) w_j (g_j - g_i) + g_i * int G(x_i, y) dy

The row integral splits into the weakly singular part |x - y|^(2s-1), integrated analytically, and a bounded
regular part integrated on a mesh graded towards the endpoints.
"""
import logging
import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import numpy.typing as npt
from numpy.polynomial.legendre import leggauss
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from fracsing.core import Grid, GridFunction, check_grid_function
from fracsing.errors import AssemblyError, ConfigurationError, ConvergenceError, DomainError, GridError
from fracsing.special import beta, incomplete_beta

EIGEN_TOL = 1e-10
EIGEN_MAX_ITER = 20000

# Geometric grading of the row quadrature
_GRADING_RATIO = 0.15
_GRADING_LEVELS = 20
_GAUSS_ORDER = 16
_ROW_CHUNK = 64


def kernel_constant(s: float) -> float:
    """kappa * B(s, 1/2 - s), the coefficient of |x - y|^(2s-1) in G near the diagonal."""
    return beta(s, 0.5 - s) / (2.0 ** (2.0 * s) * math.gamma(s) ** 2)


def torsion_profile(x: npt.ArrayLike, s: float) -> npt.NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum((1.0 - x) * (1.0 + x), 0.0) ** s / math.gamma(1.0 + 2.0 * s)


def _green_parts(u, omx, opx, omy, opy, s: float, regular: bool = False):
    # u = |x - y|, omx = 1 - x, opx = 1 + x, ...
    one_m_xy = 0.5 * (omx * opy + opx * omy)
    big_x = np.clip((omx * opx) * (omy * opy) / one_m_xy ** 2, 0.0, 1.0)
    big_y = np.clip((u / one_m_xy) ** 2, 0.0, 1.0)
    singular = kernel_constant(s) * u ** (2.0 * s - 1.0)
    if regular:
        return singular * incomplete_beta(0.5 - s, s, big_y, big_x)
    return singular * incomplete_beta(s, 0.5 - s, big_x, big_y)


def green_kernel(x: npt.ArrayLike, y: npt.ArrayLike, s: float) -> npt.NDArray[np.float64]:
    """Green function of (-Delta)^s on (-1, 1) with zero exterior data, elementwise over x and y."""
    if not 0 < s < 0.5:
        raise DomainError("Order s must lie in (0, 1/2), got %g" % s)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    if np.any(x == y):
        raise DomainError("Green function is singular on the diagonal x = y")
    res = np.zeros(x.shape, dtype=np.float64)
    inside = (np.abs(x) < 1.0) & (np.abs(y) < 1.0)
    if np.any(inside):
        xi, yi = x[inside], y[inside]
        res[inside] = _green_parts(np.abs(xi - yi), 1.0 - xi, 1.0 + xi, 1.0 - yi, 1.0 + yi, s)
    return res


def _graded_rule() -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Gauss rule on [0, 1] graded towards both endpoints. Returns (t, 1 - t, weights)."""
    gx, gw = leggauss(_GAUSS_ORDER)
    breaks = np.concatenate([[0.0], 0.5 * _GRADING_RATIO ** np.arange(_GRADING_LEVELS, -1, -1)])
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    t = ((lo + hi) * 0.5)[:, None] + half[:, None] * gx[None, :]
    wt = half[:, None] * gw[None, :]
    t, wt = t.ravel(), wt.ravel()
    # Mirror the half graded towards 0 onto [1/2, 1], keeping 1 - t exact
    return np.concatenate([t, 1.0 - t]), np.concatenate([1.0 - t, t]), np.concatenate([wt, wt])


def row_integrals(grid: Grid, s: float) -> npt.NDArray[np.float64]:
    """int_{-1}^{1} G(x_i, y) dy for every node."""
    x = grid.nodes
    omx, opx = 1.0 - x, 1.0 + x
    singular = kernel_constant(s) * (opx ** (2.0 * s) + omx ** (2.0 * s)) / (2.0 * s)

    t, tc, wt = _graded_rule()
    regular = np.empty_like(x)
    for start in range(0, grid.n, _ROW_CHUNK):
        sl = slice(start, min(start + _ROW_CHUNK, grid.n))
        mx, px = omx[sl, None], opx[sl, None]
        # Right of the node: y = x + (1 - x) t
        u = mx * t
        right = _green_parts(u, mx, px, mx * tc, px + u, s, regular=True)
        # Left of the node: y = x - (1 + x) t
        u = px * t
        left = _green_parts(u, mx, px, mx + u, px * tc, s, regular=True)
        regular[sl] = (mx[:, 0] * (right @ wt)) + (px[:, 0] * (left @ wt))
    return singular - regular


def build_kernel(grid: Grid, s: float) -> npt.NDArray[np.float64]:
    if not 0 < s < 0.5:
        raise DomainError("Order s must lie in (0, 1/2), got %g" % s)
    x = grid.nodes
    omx, opx = 1.0 - x, 1.0 + x
    iu, ju = np.triu_indices(grid.n, k=1)
    kernel = np.zeros((grid.n, grid.n), dtype=np.float64)
    upper = _green_parts(x[ju] - x[iu], omx[iu], opx[iu], omx[ju], opx[ju], s)
    kernel[iu, ju] = upper
    kernel[ju, iu] = upper

    totals = row_integrals(grid, s)
    off = kernel @ grid.weights
    kernel[np.diag_indices(grid.n)] = (totals - off) / grid.weights
    return kernel


@dataclass(frozen=True)
class OperatorConstants:
    M2: float
    M3: float
    C1: float
    R: float
    Rhat: float = 1.0


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: GridFunction
    residual: float = 0.0
    iterations: int = 0


class GreenOperator(object):
    def __init__(self, grid: Grid, s: float, kernel: npt.NDArray[np.float64], torsion_tol: Optional[float] = 5e-2,
                 scale: float = 1.0, logger: logging.Logger = logging.getLogger("fracsing.operator")):
        if kernel.shape != (grid.n, grid.n):
            raise GridError("Kernel has shape %s, grid has %d nodes" % (kernel.shape, grid.n))
        self.grid = grid
        self.s = s
        self.scale = scale
        self.logger = logger

        kernel = 0.5 * (kernel + kernel.T)
        negative = int(np.count_nonzero(kernel < 0))
        if negative:
            self.logger.debug("Clipped %d negative kernel entries", negative)
            kernel = np.maximum(kernel, 0.0)
        kernel.setflags(write=False)
        self.kernel = kernel
        self.weights = grid.weights
        self.matrix = kernel * grid.weights[None, :]
        self.matrix.setflags(write=False)

        try:
            self._factor = cho_factor(kernel, lower=True)
        except LinAlgError as e:
            raise AssemblyError("Kernel matrix is not positive definite (N=%d, s=%g)" % (grid.n, s)) from e

        self._memo: dict[Any, Any] = {}
        self._memo_lock = threading.RLock()

        oracle = scale * torsion_profile(grid.nodes, s)
        self.torsion_error = float(np.max(np.abs(self.apply(np.ones(grid.n)) - oracle)) / np.max(oracle))
        if torsion_tol is not None and self.torsion_error > torsion_tol:
            raise AssemblyError("Torsion self-check failed: relative error %.3e above %.3e (N=%d, s=%g)" % (
                self.torsion_error, torsion_tol, grid.n, s))
        self.logger.info("Green operator N=%d s=%g ready, torsion error %.3e", grid.n, s, self.torsion_error)

    @property
    def n(self) -> int:
        return self.grid.n

    def apply(self, g: GridFunction) -> GridFunction:
        check_grid_function(self.grid, g)
        return self.matrix @ g

    def stiffness(self, z: GridFunction) -> GridFunction:
        """S^-1 z, so that the stiffness form is <A z, z>_w = z . S^-1 z."""
        return cho_solve(self._factor, z)

    def energy_form(self, z: GridFunction) -> float:
        return float(z @ self.stiffness(z))

    def torsion(self) -> GridFunction:
        return self.memo("torsion", lambda: self.apply(np.ones(self.n)))

    def memo(self, key: Any, factory: Callable[[], Any]) -> Any:
        with self._memo_lock:
            if key not in self._memo:
                self._memo[key] = factory()
            return self._memo[key]

    def scaled(self, c: float) -> 'GreenOperator':
        if not c > 0:
            raise DomainError("Operator scale must be positive, got %g" % c)
        return GreenOperator(self.grid, self.s, c * self.kernel, torsion_tol=None, scale=self.scale * c,
                             logger=self.logger)


def assemble(grid: Grid, s: float, torsion_tol: Optional[float] = 5e-2, cache=None,
             logger: logging.Logger = logging.getLogger("fracsing.operator")) -> GreenOperator:
    kernel = None
    if cache is not None:
        kernel = cache.load(grid, s)
    if kernel is None:
        logger.debug("Assembling kernel N=%d s=%g", grid.n, s)
        kernel = build_kernel(grid, s)
        if cache is not None:
            cache.store(grid, s, kernel)
    return GreenOperator(grid, s, kernel, torsion_tol=torsion_tol, logger=logger)


def constants(op: GreenOperator, R: float) -> OperatorConstants:
    if not 0 < R < 1:
        raise ConfigurationError("Ball radius R must lie in (0, 1), got %g" % R)
    chi = op.grid.indicator(R)
    inside = chi > 0
    if not np.any(inside):
        raise GridError("No grid nodes inside [-%g, %g]" % (R, R))
    k_chi = op.apply(chi)
    return OperatorConstants(M2=1.0 / float(np.min(k_chi[inside])), M3=1.0 / float(np.max(op.torsion())),
                             C1=float(np.max(k_chi)), R=R)


def _weighted_dot(op: GreenOperator, a: GridFunction, b: GridFunction) -> float:
    return float(np.sum(op.weights * a * b))


def _power_iteration(op: GreenOperator) -> EigenPair:
    v = op.torsion() / np.max(op.torsion())
    mu = 0.0
    residual = np.inf
    for it in range(1, EIGEN_MAX_ITER + 1):
        kv = op.apply(v)
        mu = _weighted_dot(op, kv, v) / _weighted_dot(op, v, v)
        residual = float(np.max(np.abs(kv - mu * v)))
        if residual <= EIGEN_TOL * mu * np.max(np.abs(v)):
            break
        v = kv / np.max(np.abs(kv))
    else:
        raise ConvergenceError("Power iteration did not converge", iterations=EIGEN_MAX_ITER, residual=residual)

    v = v / np.max(np.abs(v))
    if np.sum(v) < 0:
        v = -v
    if np.any(v <= 0):
        raise ConvergenceError("Principal eigenfunction is not positive", iterations=it, residual=residual)
    v.setflags(write=False)
    op.logger.debug("Principal eigenvalue %.12g after %d iterations", 1.0 / mu, it)
    return EigenPair(value=1.0 / mu, vector=v, residual=residual, iterations=it)


def principal_eigenpair(op: GreenOperator) -> EigenPair:
    return op.memo("principal", lambda: _power_iteration(op))


def linearized_eigenvalue(op: GreenOperator, v0: GridFunction, p: float, tol: float = 1e-12) -> EigenPair:
    """Smallest eigenvalue of the pencil (A - p v0^(p-1), mass) by shifted inverse iteration."""
    check_grid_function(op.grid, v0)
    if np.any(v0 <= 0):
        raise DomainError("Linearization point must be positive at every interior node")
    if not 0 < p < 1:
        raise DomainError("Exponent p must lie in (0, 1), got %g" % p)

    root_w = np.sqrt(op.weights)
    potential = p * v0 ** (p - 1.0)
    mat = op.stiffness(np.diag(1.0 / root_w)) / root_w[:, None]
    mat = 0.5 * (mat + mat.T) - np.diag(potential)
    shift = -float(np.max(potential)) - 1.0
    # Roundoff floor of the residual grows with the stiffness scale
    scale = float(np.linalg.norm(mat, ord=np.inf))
    try:
        factor = cho_factor(mat - shift * np.eye(op.n), lower=True)
    except LinAlgError as e:
        raise ConvergenceError("Shifted linearization is not positive definite") from e

    y = root_w * principal_eigenpair(op).vector
    y /= np.linalg.norm(y)
    value = float(y @ mat @ y)
    residual = np.inf
    for it in range(1, EIGEN_MAX_ITER + 1):
        y = cho_solve(factor, y)
        y /= np.linalg.norm(y)
        my = mat @ y
        value = float(y @ my)
        residual = float(np.linalg.norm(my - value * y))
        if residual <= tol * scale:
            break
    else:
        raise ConvergenceError("Inverse iteration did not converge", iterations=EIGEN_MAX_ITER, residual=residual)

    psi = y / root_w
    if np.sum(psi * op.weights) < 0:
        psi = -psi
    psi = psi / np.max(np.abs(psi))
    return EigenPair(value=value, vector=psi, residual=residual, iterations=it)


def rayleigh_quotient(op: GreenOperator, psi: GridFunction, v0: GridFunction, p: float) -> float:
    num = op.energy_form(psi) - p * float(np.sum(op.weights * v0 ** (p - 1.0) * psi * psi))
    return num / float(np.sum(op.weights * psi * psi))


def green_bound_constant(grid: Grid, s: float) -> float:
    """Smallest C with G(x, y) <= C min(d(x)^s d(y)^s / |x - y|, d(x)^s / |x - y|^(1-s)) on node pairs."""
    iu, ju = np.triu_indices(grid.n, k=1)
    # Both orientations, the bound is not symmetric in x and y
    xi = np.concatenate([iu, ju])
    yi = np.concatenate([ju, iu])
    x, y = grid.nodes[xi], grid.nodes[yi]
    dist = np.abs(x - y)
    dx, dy = grid.delta[xi] ** s, grid.delta[yi] ** s
    bound = np.minimum(dx * dy / dist, dx / dist ** (1.0 - s))
    return float(np.max(green_kernel(x, y, s) / bound))
