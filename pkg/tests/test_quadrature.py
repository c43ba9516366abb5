import numpy as np
import pytest

from nlcflow import geometry, kernels, quadrature

import oracles


@pytest.fixture(scope="module")
def k1():
    return kernels.make_builtin("fractional_two_exponent", 2)


@pytest.fixture(scope="module")
def circle_chart():
    circ = geometry.ball(1.0)
    return circ, geometry.graph_chart(circ, np.array([1.0, 0.0]), radius=0.5)


def test_budget_validation():
    with pytest.raises(ValueError):
        quadrature.QuadratureBudget(rel_tol=0.0)
    with pytest.raises(ValueError):
        quadrature.QuadratureBudget(grading=1.0)


def test_cylinder_flat_chart_is_zero(k1):
    hs = geometry.halfspace(np.array([np.cos(0.3), np.sin(0.3)]))
    chart = geometry.graph_chart(hs, np.zeros(2), radius=0.5)
    assert quadrature.symmetrized_cylinder_integral(k1, chart) == 0.0


def test_cylinder_positive_and_oracle_agreement(k1, circle_chart):
    _, chart = circle_chart
    val = quadrature.symmetrized_cylinder_integral(k1, chart)
    assert val > 0.0
    oracle = oracles.fixed_grid_cylinder(k1, chart, n_shells=180, n_rho=64, n_t=32)
    assert val == pytest.approx(oracle, abs=1e-5)


def test_cylinder_reflected_chart_antisymmetry(k1, circle_chart):
    circ, chart = circle_chart
    val = quadrature.symmetrized_cylinder_integral(k1, chart)

    class Reflected:
        normal = chart.normal
        tangent_frame = chart.tangent_frame
        radius = chart.radius

        @staticmethod
        def f_at(z):
            return -chart.f_at(-np.asarray(z))

    refl = quadrature.symmetrized_cylinder_integral(k1, Reflected())
    assert refl == pytest.approx(-val, rel=1e-9)


def test_farfield_halfspace_exact_zero(k1):
    hs = geometry.halfspace(np.array([np.cos(0.7), np.sin(0.7)]))
    val = quadrature.farfield_integral(k1, hs, np.zeros(2), 0.5)
    assert val == 0.0


def test_farfield_ball_sign_and_magnitude(k1):
    circ = geometry.ball(1.0)
    x = np.array([1.0, 0.0])
    val = quadrature.farfield_integral(k1, circ, x, 0.5)
    assert val < 0.0
    assert abs(val) <= kernels.tail_mass(k1, 0.5)


def test_farfield_fixed_grid_oracle(k1):
    circ = geometry.ball(1.0)
    x = np.array([1.0, 0.0])
    budget = quadrature.QuadratureBudget(rel_tol=1e-6)
    val = quadrature.farfield_integral(k1, circ, x, 0.5, budget)
    oracle = oracles.fixed_grid_farfield(k1, circ, x, 0.5, n_theta=4 * 2048)
    assert val == pytest.approx(oracle, abs=10 * 1e-6 * abs(oracle))


def test_hyperplane_quadratic_weight(k1):
    e = np.array([0.0, 1.0])
    val = quadrature.hyperplane_integral(
        k1, e, lambda z: (z ** 2).sum(axis=-1), quad_bound=1.0)
    assert val == pytest.approx(8.0, rel=1e-5)


def test_hyperplane_odd_weight_vanishes(k1):
    e = np.array([np.cos(1.1), np.sin(1.1)])
    frame = quadrature.tangent_basis(e)

    def odd(z):
        return (np.asarray(z) @ frame[0]) * np.abs(np.asarray(z) @ frame[0])

    val = quadrature.hyperplane_integral(k1, e, odd, quad_bound=1.0)
    assert val == pytest.approx(0.0, abs=1e-10)


def test_hyperplane_invalid_weight_rejected(k1):
    e = np.array([0.0, 1.0])
    with pytest.raises(quadrature.InvalidWeightError):
        quadrature.hyperplane_integral(k1, e, lambda z: (z ** 2).sum(axis=-1) ** 2,
                                       quad_bound=1.0)


def test_second_moments_psd_and_structure(k1):
    e = np.array([np.cos(0.4), np.sin(0.4)])
    block = quadrature.hyperplane_second_moments(k1, e)
    assert block.shape == (1, 1)
    assert block[0, 0] == pytest.approx(8.0, rel=1e-5)


def test_paraboloid_mass_monotone_in_lambda(k1):
    e = np.array([0.0, 1.0])
    masses = [quadrature.paraboloid_mass(k1, e, lam) for lam in (0.25, 0.5, 1.0, 2.0)]
    assert all(b > a for a, b in zip(masses, masses[1:]))


def test_paraboloid_small_lambda_quotient_approaches_trace(k1):
    # quotients approach the hyperplane second moment from below at rate
    # sqrt(lambda) (the opening paraboloid's far region)
    e = np.array([0.0, 1.0])
    quots = [quadrature.paraboloid_mass(k1, e, lam) / lam
             for lam in (2.0 ** -7, 2.0 ** -9, 2.0 ** -11)]
    errs = [8.0 - q for q in quots]
    assert all(e > 0 for e in errs)
    assert errs[1] == pytest.approx(errs[0] / 2.0, rel=0.05)
    assert errs[2] == pytest.approx(errs[1] / 2.0, rel=0.05)
    assert quots[-1] == pytest.approx(8.0, rel=1e-2)


def test_unit_directions_structure():
    dirs = quadrature.unit_directions(2, 8)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    dirs3 = quadrature.unit_directions(3, 32)
    assert np.allclose(np.linalg.norm(dirs3, axis=1), 1.0)


def test_tangent_basis_orthonormal_3d():
    e = np.array([0.3, -0.5, 0.81])
    e = e / np.linalg.norm(e)
    frame = quadrature.tangent_basis(e)
    assert frame.shape == (2, 3)
    gram = frame @ frame.T
    assert np.allclose(gram, np.eye(2), atol=1e-12)
    assert np.allclose(frame @ e, 0.0, atol=1e-12)
