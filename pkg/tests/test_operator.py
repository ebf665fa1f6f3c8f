import math

import numpy as np
import pytest

from fracsing.core import make_grid
from fracsing.errors import AssemblyError, ConfigurationError, DomainError, GridError
from fracsing.operator import GreenOperator, assemble, build_kernel, constants, green_bound_constant, \
    green_kernel, kernel_constant, linearized_eigenvalue, principal_eigenpair, rayleigh_quotient, row_integrals, \
    torsion_profile


@pytest.fixture(scope="module")
def op():
    return assemble(make_grid(64), 0.25)


def test_green_kernel_is_symmetric_and_positive() -> None:
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.999, 0.999, 200)
    y = rng.uniform(-0.999, 0.999, 200)
    gxy = green_kernel(x, y, 0.25)
    assert np.all(gxy > 0)
    assert np.allclose(gxy, green_kernel(y, x, 0.25), rtol=1e-12)
    # Zero exterior data
    assert np.all(green_kernel(np.array([1.0, -1.5]), np.array([0.3, 0.2]), 0.25) == 0)


def test_green_kernel_near_diagonal() -> None:
    # The weakly singular part dominates as y -> x
    s = 0.25
    x = 0.1
    for u in [1e-4, 1e-6, 1e-8]:
        g = green_kernel(np.array([x]), np.array([x + u]), s)[0]
        assert math.isclose(g / (kernel_constant(s) * u ** (2 * s - 1)), 1.0, rel_tol=10 * u ** (1 - 2 * s))


def test_green_kernel_rejects_diagonal_and_bad_order() -> None:
    with pytest.raises(DomainError):
        green_kernel(np.array([0.2]), np.array([0.2]), 0.25)
    with pytest.raises(DomainError):
        green_kernel(np.array([0.2]), np.array([0.3]), 0.5)


def test_row_integrals_match_torsion() -> None:
    # int G(x, y) dy is the torsion function
    for s in [0.1, 0.25, 0.4]:
        g = make_grid(32)
        oracle = torsion_profile(g.nodes, s)
        assert np.max(np.abs(row_integrals(g, s) - oracle) / oracle) < 1e-7


def test_torsion_oracle_and_refinement() -> None:
    errors = []
    for n in [128, 256, 512]:
        op = assemble(make_grid(n), 0.25)
        errors.append(op.torsion_error)
    assert errors[-1] < 1e-3
    for a, b in zip(errors, errors[1:]):
        assert b <= a or b < 1e-9


def test_kernel_is_symmetric_positive_definite(op) -> None:
    assert np.array_equal(op.kernel, op.kernel.T)
    assert np.all(np.linalg.eigvalsh(op.kernel) > 0)
    z = np.random.default_rng(2).uniform(0.1, 1.0, op.n)
    assert np.allclose(op.stiffness(op.kernel @ z), z, rtol=1e-8)
    assert op.energy_form(z) > 0


def test_apply_is_positive_and_self_adjoint(op) -> None:
    rng = np.random.default_rng(3)
    a = rng.uniform(0.0, 1.0, op.n)
    b = rng.uniform(0.0, 1.0, op.n)
    assert np.all(op.apply(a) >= 0)
    w = op.weights
    assert math.isclose(float(np.sum(w * op.apply(a) * b)), float(np.sum(w * a * op.apply(b))), rel_tol=1e-12)
    with pytest.raises(GridError):
        op.apply(np.ones(op.n + 1))


def test_scaled_operator(op) -> None:
    g = np.linspace(0.5, 1.5, op.n)
    assert np.allclose(op.scaled(3.0).apply(g), 3.0 * op.apply(g), rtol=1e-13)
    with pytest.raises(DomainError):
        op.scaled(0.0)


def test_rejects_bad_kernels() -> None:
    grid = make_grid(16)
    with pytest.raises(GridError):
        GreenOperator(grid, 0.25, np.eye(8))
    # Torsion self-check
    with pytest.raises(AssemblyError):
        GreenOperator(grid, 0.25, np.eye(16))
    # Not positive definite after clipping
    with pytest.raises(AssemblyError):
        GreenOperator(grid, 0.25, -np.eye(16), torsion_tol=None)


def test_assembly_matches_build_kernel() -> None:
    grid = make_grid(32)
    op = assemble(grid, 0.3)
    assert np.allclose(op.kernel, build_kernel(grid, 0.3), rtol=1e-14)


def test_principal_eigenpair_bounds(op) -> None:
    eig = principal_eigenpair(op)
    assert np.all(eig.vector > 0)
    assert math.isclose(float(np.max(eig.vector)), 1.0)
    # K phi = phi / lambda1
    assert np.max(np.abs(op.apply(eig.vector) - eig.vector / eig.value)) < 1e-8
    # 1/sup(K 1) <= lambda1 <= Rayleigh quotient of the torsion function
    t = op.torsion()
    w = op.weights
    assert 1.0 / float(np.max(t)) <= eig.value * (1 + 1e-9)
    assert eig.value <= float(np.sum(w * t * t)) / float(np.sum(w * op.apply(t) * t)) * (1 + 1e-9)
    # Memoized
    assert principal_eigenpair(op) is eig


def test_constants(op) -> None:
    c = constants(op, 0.5)
    # M3 = 1/sup torsion = Gamma(1 + 2s)
    assert math.isclose(c.M3, math.gamma(1.5), rel_tol=1e-3)
    assert c.M2 > c.M3
    assert c.C1 > 0
    with pytest.raises(ConfigurationError):
        constants(op, 1.0)


def test_linearized_eigenvalue_is_rayleigh_minimum(op) -> None:
    v0 = op.torsion()
    pair = linearized_eigenvalue(op, v0, 0.5)
    assert abs(rayleigh_quotient(op, pair.vector, v0, 0.5) - pair.value) < 1e-8 * max(1.0, abs(pair.value))
    rng = np.random.default_rng(4)
    for _ in range(5):
        psi = rng.uniform(0.1, 1.0, op.n)
        assert rayleigh_quotient(op, psi, v0, 0.5) >= pair.value - 1e-8 * abs(pair.value)
    with pytest.raises(DomainError):
        linearized_eigenvalue(op, -v0, 0.5)


def test_principal_eigenvalue_converges_under_refinement() -> None:
    values = [principal_eigenpair(assemble(make_grid(n), 0.25)).value for n in (32, 64, 128, 256)]
    diffs = np.abs(np.diff(values))
    assert np.all(diffs[1:] < diffs[:-1])


def test_linearized_eigenvalue_tends_to_lambda1(op) -> None:
    v0 = op.torsion()
    lambda1 = principal_eigenpair(op).value
    errors = []
    for p in (0.1, 0.01, 0.001):
        value = linearized_eigenvalue(op, v0, p).value
        # 0 <= p v0^(p-1) <= max potential shifts the bottom of the spectrum by at most that much
        bound = p * float(np.max(v0 ** (p - 1.0)))
        assert lambda1 - bound - 1e-7 * lambda1 <= value <= lambda1 + 1e-7 * lambda1
        errors.append(abs(value - lambda1))
    assert errors[2] < errors[1] < errors[0]


def test_green_bound_constant() -> None:
    c = green_bound_constant(make_grid(32), 0.25)
    assert 0 < c < math.inf
