import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fracsing.core import Grid, Nonlinearity, ProblemSpec, cone_inf, cone_norm, eval_nonlinearity, make_grid, \
    order_compare
from fracsing.enumutils import Grading, NonlinearityKind, Ordering, parse_enum
from fracsing.errors import ConfigurationError, DomainError, GridError, NonlinearityError


def test_grid_is_symmetric_and_integrates_polynomials() -> None:
    g = make_grid(64)
    assert np.array_equal(g.nodes, -g.nodes[::-1])
    assert np.all(np.abs(g.nodes) < 1)
    assert math.isclose(float(np.sum(g.weights)), 2.0, rel_tol=1e-13)
    assert math.isclose(float(np.sum(g.weights * g.nodes ** 2)), 2.0 / 3.0, rel_tol=1e-12)
    assert np.all(g.weights > 0)
    assert np.allclose(g.delta, 1.0 - np.abs(g.nodes))


def test_grid_rejects_too_few_nodes() -> None:
    with pytest.raises(GridError):
        make_grid(4)
    with pytest.raises(ConfigurationError):
        make_grid(16, "uniform")


def test_interpolation_reproduces_profile() -> None:
    # Multiples of (1 - x^2)^s are reproduced exactly
    g = make_grid(32)
    s = 0.25
    values = 3.0 * g.profile(s)
    x = np.linspace(-1.0, 1.0, 41)
    assert np.allclose(g.interpolate(values, x, s), 3.0 * np.maximum(1 - x * x, 0) ** s, atol=1e-14)


def test_exemplar_values() -> None:
    nl = Nonlinearity.exemplar(2.0)
    assert nl.f_at_zero() == 1.0
    t = np.array([0.5, 1.0, 4.0])
    assert np.allclose(nl.f(t), np.exp(2.0 * t / (2.0 + t)))
    # Extension below zero
    assert nl.f(np.array([-1.0]))[0] == 1.0
    vals = eval_nonlinearity(nl, t, 1.0 / 3.0, lam=2.0)
    assert np.allclose(vals.ftilde, 2.0 * (vals.f - 1.0) / t ** (1.0 / 3.0))
    assert np.all(np.isinf(nl.f0(np.array([0.0, -1.0]), 0.5)))


def test_exemplar_derivative_matches_differences() -> None:
    nl = Nonlinearity.exemplar(3.0)
    t = np.linspace(0.1, 20.0, 50)
    h = 1e-6
    fd = (nl.f(t + h) - nl.f(t - h)) / (2 * h)
    assert np.allclose(nl.df(t), fd, rtol=1e-7)


def test_f0_increasing_interval_closed_form() -> None:
    # Roots of q t^2 + (2 q alpha - alpha^2) t + q alpha^2
    q = 1.0 / 3.0
    lo, hi = Nonlinearity.exemplar(2.0).f0_increasing_interval(q)
    assert math.isclose(lo, 4.0 - 2.0 * math.sqrt(3.0), rel_tol=1e-12)
    assert math.isclose(hi, 4.0 + 2.0 * math.sqrt(3.0), rel_tol=1e-12)
    assert Nonlinearity.exemplar(1.0).f0_increasing_interval(q) is None
    assert Nonlinearity.frozen(1.0).f0_increasing_interval(q) is None


def test_sampled_interval_matches_closed_form() -> None:
    ex = Nonlinearity.exemplar(2.0)
    custom = Nonlinearity.custom(ex.f, ex.df)
    lo, hi = custom.f0_increasing_interval(1.0 / 3.0)
    assert abs(lo - (4.0 - 2.0 * math.sqrt(3.0))) < 3e-2
    assert abs(hi - (4.0 + 2.0 * math.sqrt(3.0))) < 3e-2


def test_f5_beyond_upper_root() -> None:
    nl = Nonlinearity.exemplar(2.0)
    q = 1.0 / 3.0
    assert nl.satisfies_f5(q, 4.0 + 2.0 * math.sqrt(3.0))
    assert not nl.satisfies_f5(q, 1.0)
    assert not nl.satisfies_f5(q, None)


def test_monotone_shift() -> None:
    nl = Nonlinearity.exemplar(10.0)
    q = 1.0 / 3.0
    # f_tilde is not monotone on [0, 1000] for alpha=10
    k = nl.monotone_shift(q, 1.0, 1000.0)
    assert k > 0
    t = np.linspace(0.0, 1000.0, 10001)
    shifted = nl.ftilde(t, q, 1.0) + k * t
    assert np.all(np.diff(shifted) >= -1e-6)
    assert nl.h1_constant(q, 1.0, 1000.0) == pytest.approx(k + 1.0)


def test_validate_rejects_bad_nonlinearities() -> None:
    q = 1.0 / 3.0
    with pytest.raises(NonlinearityError):
        # f(0) = 0
        Nonlinearity.custom(lambda t: t, lambda t: np.ones_like(t)).validate(q, 0.6, 7.0)
    with pytest.raises(NonlinearityError):
        # Superlinear growth
        Nonlinearity.custom(lambda t: 1 + t * t, lambda t: 2 * t).validate(q, 0.6, 7.0)
    decreasing = Nonlinearity.custom(lambda t: 2.0 + np.cos(t), lambda t: -np.sin(t))
    with pytest.raises(NonlinearityError):
        decreasing.validate(q, 0.6, 0.7)


def test_problem_spec_defaults_and_validation() -> None:
    spec = ProblemSpec()
    assert spec.nl.kind == NonlinearityKind.EXEMPLAR
    assert spec.grading == Grading.CHEBYSHEV
    assert math.isclose(spec.alpha_f5, 4.0 + 2.0 * math.sqrt(3.0), rel_tol=1e-12)
    for bad in [dict(s=0.5), dict(q=1.0), dict(lam=0.0), dict(sigma1=8.0), dict(R=1.0), dict(tol_order=0.0)]:
        with pytest.raises(ConfigurationError):
            ProblemSpec(**bad)
    with pytest.raises(GridError):
        ProblemSpec(n=4)
    # alpha must exceed 4q
    with pytest.raises(ConfigurationError):
        ProblemSpec(alpha=1.0)
    # (f4) fails beyond the increasing interval of f(t)/t^q
    with pytest.raises(NonlinearityError):
        ProblemSpec(sigma2=10.0)


def test_theta_lambda() -> None:
    # lambda=16, f(0)=1, q=1/3 -> 16^(3/4) = 8
    spec = ProblemSpec(lam=16.0)
    assert math.isclose(spec.theta_lambda(), 8.0, rel_tol=1e-14)
    assert spec.frozen().nl.kind == NonlinearityKind.FROZEN
    assert spec.with_lambda(2.0).lam == 2.0
    assert spec.with_lambda(2.0).nl == spec.nl


def test_cone_functions() -> None:
    phi = np.array([1.0, 2.0, 4.0])
    u = np.array([2.0, 2.0, 2.0])
    assert cone_inf(u, phi) == 0.5
    assert cone_norm(-u, phi) == 2.0
    with pytest.raises(DomainError):
        cone_inf(u, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(GridError):
        cone_inf(u, np.ones(2))


def test_order_compare_cases() -> None:
    u = np.array([1.0, 2.0])
    assert order_compare(u, u + 1e-9, 1e-6) == Ordering.EQUAL
    assert order_compare(u, u + 1.0, 1e-6) == Ordering.LE
    assert order_compare(u + 1.0, u, 1e-6) == Ordering.GE
    assert order_compare(u, np.array([2.0, 1.0]), 1e-6) == Ordering.INCOMPARABLE


vectors = arrays(np.float64, 8, elements=st.floats(min_value=-10, max_value=10))


@settings(max_examples=100, deadline=None)
@given(vectors, vectors)
def test_order_compare_antisymmetry(u, v) -> None:
    flipped = {Ordering.LE: Ordering.GE, Ordering.GE: Ordering.LE}
    a, b = order_compare(u, v, 1e-6), order_compare(v, u, 1e-6)
    assert b == flipped.get(a, a)


@settings(max_examples=100, deadline=None)
@given(vectors, vectors)
def test_order_compare_of_max(u, v) -> None:
    assert order_compare(np.maximum(u, v), u, 0.0) in (Ordering.GE, Ordering.EQUAL)


def test_parse_enum() -> None:
    assert parse_enum(Grading, "chebyshev") == Grading.CHEBYSHEV
    assert str(Ordering.LE) == "le"
    with pytest.raises(ConfigurationError):
        parse_enum(Grading, "bogus")


def test_grid_is_frozen() -> None:
    g = make_grid(16)
    assert isinstance(g, Grid)
    with pytest.raises(Exception):
        g.n = 3
