import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nlcflow import kernels, quadrature

from oracles import frac2_profile


@pytest.fixture(scope="module")
def k1():
    return kernels.make_builtin("fractional_two_exponent", 2, s=0.5, m=1.0,
                                sigma=0.5, mu=1.0)


@pytest.fixture(scope="module")
def k2():
    return kernels.make_builtin("fractional_exp_tail", 2, s=0.5, m=1.0, mu=1.0)


def test_family1_closed_form_values(k1):
    # tail branch at |y| = 2
    val = k1.evaluate_at(np.array([[2.0, 0.0]]))[0]
    assert val == pytest.approx(2.0 ** -3.5, rel=1e-15)
    # continuity across |y| = 1 with mu = m
    inner = k1.evaluate_at(np.array([[1.0 - 1e-12, 0.0]]))[0]
    outer = k1.evaluate_at(np.array([[1.0 + 1e-12, 0.0]]))[0]
    assert inner == pytest.approx(outer, rel=1e-9)


def test_family1_tail_mass_closed_form(k1):
    assert kernels.tail_mass(k1, 1.0) == pytest.approx(2 * np.pi / 1.5, rel=1e-14)
    assert kernels.tail_mass(k1, 2.0) == pytest.approx(
        (2 * np.pi / 1.5) * 2.0 ** -1.5, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=2).filter(
    lambda y: 1e-6 < np.hypot(*y) < 3.0))
def test_evenness(y):
    k = kernels.make_builtin("fractional_two_exponent", 2)
    pts = np.array([y, [-y[0], -y[1]]])
    vals = k.evaluate_at(pts)
    assert vals[0] == vals[1]


def test_evenness_bulk_sample(k1, k2):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10_000, 2))
    pts *= (0.01 + 3.0 * rng.random(10_000))[:, None] / np.linalg.norm(pts, axis=1)[:, None]
    for k in (k1, k2):
        assert np.max(np.abs(k.evaluate_at(pts) - k.evaluate_at(-pts))) == 0.0


def test_gradient_matches_finite_differences(k1, k2):
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(50, 2))
    pts = pts / np.linalg.norm(pts, axis=1)[:, None] * (0.3 + 2.0 * rng.random(50))[:, None]
    for k in (k1, k2):
        g = k.gradient_at(pts)
        eps = 1e-6
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = eps
            fd = (k.evaluate_at(pts + step) - k.evaluate_at(pts - step)) / (2 * eps)
            keep = np.abs(np.abs(np.linalg.norm(pts, axis=1)) - 1.0) > 1e-3
            assert np.allclose(g[keep, axis], fd[keep], rtol=1e-5, atol=1e-8)


def test_rescale_identity_and_values(k1):
    same = kernels.rescale(k1, 1.0)
    pts = np.array([[0.3, 0.4], [1.5, -0.2]])
    assert np.array_equal(same.evaluate_at(pts), k1.evaluate_at(pts))
    half = kernels.rescale(k1, 0.5)
    got = half.evaluate_at(np.array([[1.0, 0.0]]))[0]
    assert got == pytest.approx(4.0 * 2.0 ** -3.5, rel=1e-14)


def test_rescale_parameter_validation(k1):
    with pytest.raises(kernels.KernelParameterError):
        kernels.rescale(k1, 0.0)
    with pytest.raises(kernels.KernelParameterError):
        kernels.rescale(k1, -0.25)


def test_rescale_mass_preservation(k1):
    # L1 mass over an annulus equals the base mass over the rescaled annulus
    eps = 0.37
    zoomed = kernels.rescale(k1, eps)
    lo, hi = 1e-3, 1e3

    def mass(kern, a, b):
        val, _ = integrate.quad(
            lambda r: 2 * np.pi * r * kern.radial_profile(np.asarray(r))[()],
            a, b, epsabs=1e-12, epsrel=1e-10, limit=400, points=[1.0, eps])
        return val

    m_zoomed = mass(zoomed, lo, hi)
    m_base = mass(k1, lo / eps, hi / eps)
    assert m_zoomed == pytest.approx(m_base, abs=1e-6)


def test_tail_mass_quadrature_against_quad_oracle(k2):
    # exponential-tail family has no closed form; check the shell walk
    got = kernels.tail_mass(k2, 1.0)
    oracle, _ = integrate.quad(lambda r: 2 * np.pi * np.exp(-r) * r ** -1.5,
                               1.0, np.inf, epsabs=1e-13, epsrel=1e-12)
    assert got == pytest.approx(oracle, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(1.05, 3.0))
def test_tail_mass_monotone(r1, factor):
    k = kernels.make_builtin("fractional_two_exponent", 2)
    assert kernels.tail_mass(k, r1) >= kernels.tail_mass(k, r1 * factor)


def test_domination_envelope_holds(k1, k2):
    rng = np.random.default_rng(3)
    radii = np.logspace(0.0, 3.0, 40)
    dirs = quadrature.unit_directions(2, 8)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    for k in (k1, k2):
        vals = k.evaluate_at(pts)
        bound = k.domination_envelope(np.linalg.norm(pts, axis=1))
        assert np.all(vals <= bound * (1.0 + 1e-12))


def test_builtin_parameter_validation():
    with pytest.raises(kernels.KernelParameterError):
        kernels.make_builtin("fractional_two_exponent", 1)
    with pytest.raises(kernels.KernelParameterError):
        kernels.make_builtin("fractional_two_exponent", 2, s=1.5)
    with pytest.raises(kernels.KernelParameterError):
        kernels.make_builtin("fractional_exp_tail", 2, m=-1.0)
    with pytest.raises(kernels.KernelParameterError):
        kernels.make_builtin("no_such_family", 2)


def test_rotated_kernel_values(k1):
    th = 0.4
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    rot = kernels.rotated(k1, R)
    pts = np.array([[0.7, -0.2], [2.2, 1.1]])
    assert np.allclose(rot.evaluate_at(pts), k1.evaluate_at(pts))


@pytest.mark.slow
def test_admissibility_family1_passes(k1):
    report = kernels.validate_admissibility(k1)
    assert report.passed, {n: v.passed for n, v in report.verdicts.items()}
    # a_lambda masses nondecreasing in lambda for each direction
    table = report.a_lambda_table
    for j in range(int(table[:, 1].max()) + 1):
        rows = table[table[:, 1] == j]
        order = np.argsort(rows[:, 0])
        assert np.all(np.diff(rows[order, 2]) >= -1e-12)
    assert np.isfinite(report.a0_estimate)
    assert report.a0_estimate == pytest.approx(8.0, rel=1e-3)


@pytest.mark.slow
def test_admissibility_family2_passes(k2):
    report = kernels.validate_admissibility(k2)
    assert report.passed, {n: v.passed for n, v in report.verdicts.items()}


@pytest.mark.slow
def test_admissibility_adversarial_fails_domination():
    bad = kernels.make_adversarial(2, s=0.5, m=1.0)
    report = kernels.validate_admissibility(bad)
    assert not report.verdicts["fractional_domination"].passed
    assert not report.passed


def test_report_serialization(k1):
    cfg = kernels.AdmissibilityConfig(
        small_lambdas=tuple(2.0 ** (-j) for j in range(1, 6)),
        large_lambdas=(2.0, 4.0),
        r_ladder=tuple(2.0 ** (-j) for j in range(0, 31, 6)),
        n_directions=2)
    report = kernels.validate_admissibility(k1, cfg)
    text = kernels.report_to_text(report)
    assert "a0_estimate" in text and "check.fractional_domination" in text
    rows = kernels.report_to_csv_rows(report)
    assert len(rows) == (5 + 2) * 2
