"""Problem data: grids, grid functions, the nonlinearity f and problem specifications"""
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import numpy.typing as npt

from fracsing.enumutils import Grading, NonlinearityKind, Ordering, parse_enum
from fracsing.errors import ConfigurationError, DomainError, GridError, NonlinearityError

# Values at the interior nodes, the function is implicitly zero outside (-1, 1)
type GridFunction = npt.NDArray[np.float64]
type ScalarFunction = Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]]

MIN_GRID_NODES = 8
# Relative slack for sampled monotonicity checks
MONOTONICITY_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    n: int
    nodes: npt.NDArray[np.float64]
    weights: npt.NDArray[np.float64]
    delta: npt.NDArray[np.float64]
    grading: Grading

    def indicator(self, radius: float) -> GridFunction:
        return (np.abs(self.nodes) <= radius).astype(np.float64)

    def profile(self, s: float, x: Optional[npt.ArrayLike] = None) -> npt.NDArray[np.float64]:
        pts = self.nodes if x is None else np.asarray(x, dtype=np.float64)
        return np.maximum(1.0 - pts * pts, 0.0) ** s

    def interpolate(self, values: GridFunction, x: npt.ArrayLike, s: float) -> npt.NDArray[np.float64]:
        """Evaluates a grid function between the nodes.

        Functions on this grid behave like (1-x^2)^s at the boundary, so the ratio to that profile is
        interpolated linearly (and held constant between the outermost nodes and +-1).
        """
        check_grid_function(self, values)
        pts = np.asarray(x, dtype=np.float64)
        ratio = values / self.profile(s)
        return np.interp(pts, self.nodes, ratio) * self.profile(s, pts)


def check_grid_function(grid: Grid, u: GridFunction):
    if u.shape != (grid.n,):
        raise GridError("Grid function has shape %s, expected (%d,)" % (u.shape, grid.n))


def _fejer_weights(theta: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    n = len(theta)
    k = np.arange(1, n // 2 + 1)
    series = np.cos(2.0 * np.outer(theta, k)) / (4.0 * k * k - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * series.sum(axis=1))


def make_grid(n: int, grading: Grading | str = Grading.CHEBYSHEV) -> Grid:
    grading = parse_enum(Grading, grading)
    if n < MIN_GRID_NODES:
        raise GridError("Grid needs at least %d nodes, got %d" % (MIN_GRID_NODES, n))

    theta = np.pi * (np.arange(n) + 0.5) / n
    nodes = -np.cos(theta)
    # Exact mirror symmetry, cos() is not symmetric to the last bit
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = _fejer_weights(theta)
    weights = 0.5 * (weights + weights[::-1])
    delta = 1.0 - np.abs(nodes)
    return Grid(n=n, nodes=nodes, weights=weights, delta=delta, grading=grading)


class NonlinearityValues(NamedTuple):
    f: npt.NDArray[np.float64]
    df: npt.NDArray[np.float64]
    f0: npt.NDArray[np.float64]
    ftilde: npt.NDArray[np.float64]


def _positive_part(t: npt.ArrayLike) -> npt.NDArray[np.float64]:
    return np.maximum(np.asarray(t, dtype=np.float64), 0.0)


class Nonlinearity(object):
    """The nonlinearity f of (-Delta)^s u = lambda f(u) / u^q.

    Values at t <= 0 follow the extension rule f(t) = f(0), so f_tilde(t) = 0 there.
    """

    def __init__(self, kind: NonlinearityKind, parameters: tuple[float, ...],
                 f: ScalarFunction, df: ScalarFunction, name: str = ""):
        self.kind = kind
        self.parameters = tuple(float(p) for p in parameters)
        self._f = f
        self._df = df
        self.name = name or str(kind)

    @staticmethod
    def exemplar(alpha: float) -> 'Nonlinearity':
        def f(t):
            tp = _positive_part(t)
            return np.exp(alpha * tp / (alpha + tp))

        def df(t):
            tp = _positive_part(t)
            return np.where(np.asarray(t) > 0, f(tp) * alpha * alpha / (alpha + tp) ** 2, 0.0)

        return Nonlinearity(NonlinearityKind.EXEMPLAR, (alpha,), f, df, name="exp(a*t/(a+t))")

    @staticmethod
    def frozen(value: float = 1.0) -> 'Nonlinearity':
        return Nonlinearity(NonlinearityKind.FROZEN, (value,),
                            lambda t: np.full(np.shape(t), value, dtype=np.float64),
                            lambda t: np.zeros(np.shape(t), dtype=np.float64), name="const")

    @staticmethod
    def custom(f: ScalarFunction, df: ScalarFunction, name: str = "custom",
               parameters: tuple[float, ...] = ()) -> 'Nonlinearity':
        def ext_f(t):
            return np.asarray(f(_positive_part(t)), dtype=np.float64)

        def ext_df(t):
            return np.where(np.asarray(t) > 0, np.asarray(df(_positive_part(t)), dtype=np.float64), 0.0)

        return Nonlinearity(NonlinearityKind.CUSTOM, parameters, ext_f, ext_df, name=name)

    def __eq__(self, other):
        if not isinstance(other, Nonlinearity):
            return NotImplemented
        if self.kind == NonlinearityKind.CUSTOM:
            return self is other
        return self.kind == other.kind and self.parameters == other.parameters

    def __hash__(self):
        if self.kind == NonlinearityKind.CUSTOM:
            return id(self)
        return hash((self.kind, self.parameters))

    def __repr__(self):
        return "Nonlinearity(%s, %s)" % (self.kind, self.parameters)

    def f(self, t: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self._f(np.asarray(t, dtype=np.float64))

    def df(self, t: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self._df(np.asarray(t, dtype=np.float64))

    def f_at_zero(self) -> float:
        return float(self.f(np.zeros(1))[0])

    def f0(self, t: npt.ArrayLike, q: float) -> npt.NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        ts = np.where(t > 0, t, 1.0)
        return np.where(t > 0, self.f(ts) / ts ** q, np.inf)

    def f0_prime(self, t: npt.ArrayLike, q: float) -> npt.NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        ts = np.where(t > 0, t, 1.0)
        return np.where(t > 0, self.df(ts) / ts ** q - q * self.f(ts) / ts ** (q + 1.0), -np.inf)

    def ftilde(self, t: npt.ArrayLike, q: float, lam: float) -> npt.NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        ts = np.where(t > 0, t, 1.0)
        return np.where(t > 0, lam * (self.f(ts) - self.f_at_zero()) / ts ** q, 0.0)

    def ftilde_prime(self, t: npt.ArrayLike, q: float, lam: float) -> npt.NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        ts = np.where(t > 0, t, 1.0)
        val = lam * (self.df(ts) / ts ** q - q * (self.f(ts) - self.f_at_zero()) / ts ** (q + 1.0))
        return np.where(t > 0, val, 0.0)

    def f0_increasing_interval(self, q: float) -> Optional[tuple[float, float]]:
        if self.kind == NonlinearityKind.EXEMPLAR:
            alpha = self.parameters[0]
            # f0' = 0 at the roots of q t^2 + (2 q alpha - alpha^2) t + q alpha^2
            b = alpha * alpha - 2.0 * q * alpha
            disc = b * b - 4.0 * q * q * alpha * alpha
            if b <= 0 or disc <= 0:
                return None
            root = math.sqrt(disc)
            return (b - root) / (2.0 * q), (b + root) / (2.0 * q)
        if self.kind == NonlinearityKind.FROZEN:
            return None

        t = np.geomspace(1e-6, 1e6, 20001)
        rising = np.diff(self.f0(t, q)) > 0
        if not np.any(rising):
            return None
        # Longest run of increasing samples
        best, best_start, run_start = 0, 0, None
        for i, r in enumerate(np.append(rising, False)):
            if r and run_start is None:
                run_start = i
            elif not r and run_start is not None:
                if i - run_start > best:
                    best, best_start = i - run_start, run_start
                run_start = None
        return float(t[best_start]), float(t[best_start + best])

    def satisfies_f5(self, q: float, threshold: Optional[float]) -> bool:
        if threshold is None:
            return False
        t = np.geomspace(max(threshold, 1e-12), max(threshold, 1e-12) * 1e6, 4001)
        vals = self.f0(t, q)
        return bool(np.all(np.diff(vals) <= MONOTONICITY_SLACK * np.abs(vals[:-1])))

    def _tilde_samples(self, t_max: float) -> npt.NDArray[np.float64]:
        return np.unique(np.concatenate([np.geomspace(1e-10, t_max, 4096), np.linspace(0.0, t_max, 4096)]))

    def monotone_shift(self, q: float, lam: float, t_max: float) -> float:
        """Smallest k >= 0 making f_tilde(t) + k t nondecreasing on a sample of [0, t_max]."""
        slope = self.ftilde_prime(self._tilde_samples(t_max), q, lam)
        return max(0.0, -float(np.min(slope)))

    def h1_constant(self, q: float, lam: float, t_max: float = 1e6) -> float:
        t = self._tilde_samples(t_max)
        k = self.monotone_shift(q, lam, t_max) + 1.0
        shifted = self.ftilde(t, q, lam) + k * t
        if np.any(np.diff(shifted) <= 0):
            raise NonlinearityError("f_tilde(t) + %g t is not increasing on the sample" % k)
        return k

    def validate(self, q: float, sigma1: float, sigma2: float, relaxed: bool = False) -> float:
        """Checks (f1)-(f4) on samples. Returns the k of the relaxed condition f(t) + k t nondecreasing."""
        if not self.f_at_zero() > 0:
            raise NonlinearityError("(f1) violated: f(0) = %g" % self.f_at_zero())

        t = np.concatenate([[0.0], np.geomspace(1e-8, 1e4, 4001)])
        vals = self.f(t)
        if not np.all(np.isfinite(vals)):
            raise NonlinearityError("f is not finite on the sample")
        k = 0.0
        if np.any(np.diff(vals) < -MONOTONICITY_SLACK * np.abs(vals[:-1])):
            if not relaxed:
                raise NonlinearityError("(f3) violated: f is not nondecreasing on the sample")
            k = max(0.0, -float(np.min(self.df(t))))
            if np.any(np.diff(vals + k * t) < -MONOTONICITY_SLACK * np.abs(vals[:-1])):
                raise NonlinearityError("(f3') violated: f(t) + %g t is not nondecreasing" % k)

        big = np.geomspace(1e6, 1e12, 7)
        growth = self.f(big) / big ** (q + 1.0)
        if not (growth[-1] < growth[0] and growth[-1] < 1e-2 * max(1.0, self.f_at_zero())):
            raise NonlinearityError("(f2) violated: f(t)/t^(q+1) does not vanish at large t")

        if self.kind == NonlinearityKind.FROZEN:
            # Only used below the window, where (f4) plays no role
            return k
        band = np.linspace(sigma1, sigma2, 2049)
        f0 = self.f0(band, q)
        if np.any(np.diff(f0) < -MONOTONICITY_SLACK * np.abs(f0[:-1])):
            raise NonlinearityError("(f4) violated: f(t)/t^q decreases somewhere on (%g, %g)" % (sigma1, sigma2))
        return k


def eval_nonlinearity(nl: Nonlinearity, t: npt.ArrayLike, q: float, lam: float = 1.0) -> NonlinearityValues:
    return NonlinearityValues(f=nl.f(t), df=nl.df(t), f0=nl.f0(t, q), ftilde=nl.ftilde(t, q, lam))


@dataclass(frozen=True)
class ProblemSpec:
    s: float = 0.25
    q: float = 1.0 / 3.0
    lam: float = 1.0
    alpha: float = 2.0
    sigma1: float = 0.6
    sigma2: float = 7.0
    alpha_f5: Optional[float] = None
    tol_residual: float = 1e-7
    tol_order: float = 1e-6
    eps_min: float = 1e-8
    n: int = 256
    grading: Grading = Grading.CHEBYSHEV
    R: float = 0.5
    seed: int = 0
    torsion_tol: float = 5e-2
    nonlinearity: Optional[Nonlinearity] = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "grading", parse_enum(Grading, self.grading))
        if not 0 < self.s < 0.5:
            raise ConfigurationError("s must lie in (0, 1/2) on the interval, got %g" % self.s)
        if not 0 < self.q < 1:
            raise ConfigurationError("q must lie in (0, 1), got %g" % self.q)
        if not self.lam > 0:
            raise ConfigurationError("lambda must be positive, got %g" % self.lam)
        if not 0 < self.sigma1 < self.sigma2:
            raise ConfigurationError("Need 0 < sigma1 < sigma2, got %g, %g" % (self.sigma1, self.sigma2))
        if not 0 < self.R < 1:
            raise ConfigurationError("R must lie in (0, 1), got %g" % self.R)
        if self.n < MIN_GRID_NODES:
            raise GridError("Grid needs at least %d nodes, got %d" % (MIN_GRID_NODES, self.n))
        for name in ("tol_residual", "tol_order", "eps_min", "torsion_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("%s must be positive" % name)

        if self.nonlinearity is None:
            if not self.alpha > 4.0 * self.q:
                raise ConfigurationError("The exemplar needs alpha > 4q, got alpha=%g, q=%g" % (self.alpha, self.q))
            object.__setattr__(self, "nonlinearity", Nonlinearity.exemplar(self.alpha))
        self.nonlinearity.validate(self.q, self.sigma1, self.sigma2)

        if self.alpha_f5 is None:
            interval = self.nonlinearity.f0_increasing_interval(self.q)
            if interval is not None and self.nonlinearity.kind == NonlinearityKind.EXEMPLAR:
                object.__setattr__(self, "alpha_f5", interval[1])

    @property
    def nl(self) -> Nonlinearity:
        return self.nonlinearity

    def with_lambda(self, lam: float) -> 'ProblemSpec':
        return dataclasses.replace(self, lam=lam)

    def frozen(self) -> 'ProblemSpec':
        return dataclasses.replace(self, nonlinearity=Nonlinearity.frozen(self.nl.f_at_zero()))

    def c_sing(self) -> float:
        return self.lam * self.nl.f_at_zero()

    def theta_lambda(self) -> float:
        return self.c_sing() ** (1.0 / (1.0 + self.q))

    def to_config(self) -> str:
        from fracsing.config import dump_config
        return dump_config(self)


def cone_norm(u: GridFunction, phi: GridFunction) -> float:
    _check_profile(u, phi)
    return float(np.max(np.abs(u / phi)))


def cone_inf(u: GridFunction, phi: GridFunction) -> float:
    _check_profile(u, phi)
    return float(np.min(u / phi))


def _check_profile(u: GridFunction, phi: GridFunction):
    if u.shape != phi.shape:
        raise GridError("Grid function shapes differ: %s vs %s" % (u.shape, phi.shape))
    if np.any(phi <= 0):
        raise DomainError("Cone profile must be positive at every interior node")


def order_compare(u: GridFunction, v: GridFunction, tol: float) -> Ordering:
    if u.shape != v.shape:
        raise GridError("Grid function shapes differ: %s vs %s" % (u.shape, v.shape))
    d = u - v
    if np.all(np.abs(d) <= tol):
        return Ordering.EQUAL
    if np.all(d >= -tol):
        return Ordering.GE
    if np.all(d <= tol):
        return Ordering.LE
    return Ordering.INCOMPARABLE
