import math

import numpy as np
import pytest

from fracsing.barriers import build_barriers, build_h, lambda_window, lower_barrier
from fracsing.core import ProblemSpec, make_grid
from fracsing.enumutils import Direction, SolutionKind
from fracsing.errors import CertificationError, DomainError, WindowError
from fracsing.multiplicity import DeflationOperator, _problem_jacobian, _problem_residual, deflated_search, \
    deflated_step, maximal_fixed_point, maximal_solution, minimal_fixed_point, minimal_solution, solution_bounds, \
    strong_increasing_gap, three_solutions
from fracsing.operator import assemble, principal_eigenpair
from fracsing.singular_solver import residual_P

THREE = dict(alpha=10.0, sigma1=0.6, sigma2=270.0, R=0.5, n=128)


@pytest.fixture(scope="module")
def op():
    return assemble(make_grid(64), 0.25)


@pytest.fixture(scope="module")
def three():
    op = assemble(make_grid(128), 0.25)
    spec = ProblemSpec(**THREE)
    h = build_h(spec.nl, spec)
    window = lambda_window(op, spec, h)
    if window.empty:
        pytest.skip("window is empty at this resolution")
    spec = spec.with_lambda(math.sqrt(window.lambda1 * window.lambda2))
    return op, spec, window


def test_minimal_and_maximal_solution(op) -> None:
    spec = ProblemSpec(n=64, lam=0.05)
    lo, hi = solution_bounds(op, spec)
    assert np.all(lo <= hi)

    run = minimal_solution(op, spec)
    assert run.direction == Direction.UPWARD
    assert run.residual <= spec.tol_residual
    assert np.all(np.diff(run.iterates_sup) >= -spec.tol_order)
    assert np.all(run.result >= lo - spec.tol_order)

    top = maximal_solution(op, spec)
    assert top.direction == Direction.DOWNWARD
    assert np.all(np.diff(top.iterates_sup) <= spec.tol_order)
    assert np.all(run.result <= top.result + spec.tol_order)


def test_unordered_interval(op) -> None:
    spec = ProblemSpec(n=64)
    lo, hi = solution_bounds(op, spec)
    with pytest.raises(DomainError):
        minimal_fixed_point(op, spec, (hi, lo))


def test_interval_without_certificate(op) -> None:
    # T(u) >= Theta w for every u >= 0, so a box below Theta w is not invariant
    spec = ProblemSpec(n=64)
    base = lower_barrier(op, spec)
    with pytest.raises(CertificationError):
        maximal_fixed_point(op, spec, (0.25 * base, 0.5 * base))


def test_strong_increasing_gap(op) -> None:
    spec = ProblemSpec(n=64)
    u1 = lower_barrier(op, spec)
    u2 = u1 + principal_eigenpair(op).vector
    assert strong_increasing_gap(op, spec, u1, u2) > 0
    with pytest.raises(DomainError):
        strong_increasing_gap(op, spec, u2, u1)


def test_deflation_operator() -> None:
    u0 = np.zeros(5)
    d = DeflationOperator([u0])
    far = np.full(5, 1e6)
    assert d.operator(far) == pytest.approx(1.0)
    assert d.operator(np.full(5, 1e-3)) > 1e5
    u = np.array([0.1, -0.5, 0.2, 0.0, 0.3])
    g = d.log_gradient(u)
    # Only the node carrying the sup norm moves the sup norm
    assert np.count_nonzero(g) == 1
    assert g[1] > 0
    h = 1e-7
    v = u.copy()
    v[1] -= h
    fd = (math.log(d.operator(v)) - math.log(d.operator(u))) / -h
    assert fd == pytest.approx(g[1], rel=1e-4)


def test_deflated_search_needs_inputs(op) -> None:
    spec = ProblemSpec(n=64)
    with pytest.raises(DomainError):
        deflated_search(op, spec, [np.ones(op.n)])


def test_deflated_search_rejects_known_solutions(op) -> None:
    spec = ProblemSpec(n=64, lam=0.05)
    u = minimal_solution(op, spec).result
    # Without deflation the start is returned as is
    found = deflated_search(op, spec, [], starts=[u])
    assert found is not None
    assert residual_P(op, spec, found) <= spec.tol_residual
    assert deflated_search(op, spec, [u], starts=[u]) is None


def test_three_solutions_outside_window(three) -> None:
    op, spec, window = three
    with pytest.raises(WindowError):
        three_solutions(op, spec.with_lambda(10.0 * window.lambda2), window)


def test_three_solutions(three) -> None:
    op, spec, window = three
    tol = spec.tol_order
    for lam in np.geomspace(window.lambda1, window.lambda2, 7)[1:-1]:
        s = spec.with_lambda(float(lam))
        sols = three_solutions(op, s, window)
        b = build_barriers(op, s, window=window)

        assert sols.lam == s.lam
        assert [x.kind for x in sols.solutions[:2]] == [SolutionKind.MAXIMAL, SolutionKind.MINIMAL]
        assert all(r <= 1e-6 for r in sols.residuals)
        # sup u1 <= sigma1 < a <= sup u2
        assert np.max(sols.u1) <= s.sigma1 + tol
        assert s.sigma1 < b.a <= np.max(sols.u2) + tol
        assert np.all(sols.u1 <= b.theta2 + tol)
        assert np.all(sols.u1 >= b.zeta1 - tol)
        assert np.all(sols.u2 >= b.zeta2 - tol)
        assert np.all(sols.u2 <= b.theta1 + tol)
        assert min(sols.separations) > 0
        if sols.u3 is not None:
            assert sols.solutions[2].kind == SolutionKind.DEFLATED
            assert min(sols.separations) >= 10 * s.tol_residual
            assert residual_P(op, s, sols.u3) <= s.tol_residual


def test_deflation_finds_a_third_solution(three) -> None:
    op, spec, window = three
    sols = three_solutions(op, spec, window)
    u3 = sols.u3
    if u3 is None:
        starts = [t * sols.u1 + (1.0 - t) * sols.u2 for t in np.linspace(0.05, 0.95, 19)]
        u3 = deflated_search(op, spec, [sols.u1, sols.u2], starts=starts)
    assert u3 is not None
    assert np.all(u3 > 0)
    assert residual_P(op, spec, u3) <= spec.tol_residual
    for known in (sols.u1, sols.u2):
        assert np.max(np.abs(u3 - known)) >= 10 * spec.tol_residual


def test_deflation_finds_the_other_solution(three) -> None:
    op, spec, window = three
    sols = three_solutions(op, spec, window)
    # u1 deflated, a start at u2 still converges there
    found = deflated_search(op, spec, [sols.u1], starts=[sols.u2])
    assert found is not None
    assert np.max(np.abs(found - sols.u2)) <= 1e-6 * max(1.0, float(np.max(sols.u2)))


def test_deflated_step_matches_dense_solve() -> None:
    op = assemble(make_grid(32), 0.25)
    spec = ProblemSpec(n=32, lam=0.05)
    uk = minimal_solution(op, spec).result
    u = uk * (1.0 + 0.05 * np.cos(np.arange(op.n)))
    deflation = DeflationOperator([uk])

    # Newton on eta F: (eta J + F grad(eta)^T) d = -eta F
    eta = deflation.operator(u)
    grad_eta = eta * deflation.log_gradient(u)
    res = _problem_residual(op, spec, u)
    dense = np.linalg.solve(eta * _problem_jacobian(op, spec, u) + np.outer(res, grad_eta), -eta * res)
    step = deflated_step(op, spec, deflation, u)
    assert step is not None
    assert np.allclose(step, dense, rtol=1e-8, atol=1e-12)

    # Near a deflated root the step points away from it
    plain = np.linalg.solve(_problem_jacobian(op, spec, u), -res)
    r = np.max(np.abs(u - uk))
    assert np.max(np.abs(u + plain - uk)) < r
    assert np.max(np.abs(u + step - uk)) > r


@pytest.mark.parametrize("lam", [1e3, 5e3])
def test_large_lambda_is_certified(op, lam) -> None:
    spec = ProblemSpec(n=64, lam=lam)
    low = minimal_solution(op, spec)
    top = maximal_solution(op, spec)
    assert low.residual <= spec.tol_residual
    assert top.residual <= spec.tol_residual
    assert residual_P(op, spec, low.result) <= spec.tol_residual
    assert np.all(low.result <= top.result + spec.tol_order)
    assert np.max(top.result - low.result) < 1e-5 * max(1.0, float(np.max(top.result)))


def test_deflated_search_finds_nothing_when_unique(op) -> None:
    spec = ProblemSpec(n=64, lam=1e3)
    u = minimal_solution(op, spec).result
    starts = [0.5 * u, 2.0 * u, u * (1.0 + 0.2 * np.cos(np.arange(op.n)))]
    assert deflated_search(op, spec, [u], starts=starts) is None
