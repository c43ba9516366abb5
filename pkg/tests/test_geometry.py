import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcflow import geometry


def test_normal_data_unit_circle():
    circ = geometry.ball(1.0)
    data = geometry.normal_and_curvature_data(circ, np.array([1.0, 0.0]))
    assert np.allclose(data.normal, [1.0, 0.0])
    assert data.gradient_norm == pytest.approx(2.0)
    assert np.allclose(data.hessian, -2.0 * np.eye(2))


def test_normal_data_halfspace():
    e = np.array([0.6, 0.8])
    hs = geometry.halfspace(e)
    data = geometry.normal_and_curvature_data(hs, np.zeros(2))
    assert np.allclose(data.normal, e)
    assert np.allclose(data.hessian, 0.0)


def test_normal_data_ellipse():
    ell = geometry.ellipsoid([2.0, 1.0])
    data = geometry.normal_and_curvature_data(ell, np.array([2.0, 0.0]))
    assert np.allclose(data.normal, [1.0, 0.0])
    assert data.gradient_norm == pytest.approx(1.0)
    assert np.allclose(data.hessian, np.diag([-0.5, -2.0]))


def test_normal_data_degenerate_and_off_boundary():
    circ = geometry.ball(1.0)
    with pytest.raises(ValueError):
        geometry.normal_and_curvature_data(circ, np.array([0.5, 0.0]))
    flat = geometry.ImplicitSurface(
        2, lambda p: np.zeros(p.shape[0]), lambda p: np.zeros_like(p),
        lambda p: np.zeros((p.shape[0], 2, 2)), 1.0)
    with pytest.raises(geometry.DegenerateGradientError):
        geometry.normal_and_curvature_data(flat, np.zeros(2))


def test_project_to_boundary():
    circ = geometry.ball(1.0)
    x = geometry.project_to_boundary(circ, np.array([1.7, 0.4]))
    assert np.hypot(*x) == pytest.approx(1.0, abs=1e-12)


def test_chart_circle_values():
    circ = geometry.ball(1.0)
    chart = geometry.graph_chart(circ, np.array([1.0, 0.0]), radius=0.5)
    f = chart.f_at(np.array([[0.3]]))[0]
    assert f == pytest.approx(1.0 - np.sqrt(1.0 - 0.09), abs=1e-12)
    assert chart.hess0[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert chart.grad_f_at(np.array([[0.0]]))[0, 0] == pytest.approx(0.0, abs=1e-10)


def test_chart_halfspace_flat():
    hs = geometry.halfspace(np.array([np.cos(0.3), np.sin(0.3)]))
    chart = geometry.graph_chart(hs, np.zeros(2), radius=0.5)
    zs = np.linspace(-0.49, 0.49, 21)[:, None]
    assert np.max(np.abs(chart.f_at(zs))) <= 1e-15  # bisection roundoff floor
    assert chart.sup_hess == 0.0


def test_chart_residual_tangency_hessian():
    ell = geometry.ellipsoid([2.0, 1.0])
    x = np.array([2.0 * np.cos(0.9), np.sin(0.9)])
    chart = geometry.graph_chart(ell, x, radius=0.4)
    rng = np.random.default_rng(7)
    zs = rng.uniform(-0.39, 0.39, size=(1000, 1))
    f = chart.f_at(zs)
    pts = x[None, :] + zs @ chart.tangent_frame - f[:, None] * chart.normal[None, :]
    assert np.max(np.abs(ell.phi_at(pts))) <= 1e-10
    # Hessian against centered differences of f itself
    h = 1e-4
    zs_small = rng.uniform(-0.3, 0.3, size=(40, 1))
    fd = (chart.f_at(zs_small + h) - 2 * chart.f_at(zs_small)
          + chart.f_at(zs_small - h)) / h ** 2
    hess = chart.hess_f_at(zs_small)[:, 0, 0]
    assert np.allclose(hess, fd, rtol=1e-5, atol=1e-5)
    # quadratic bound with the sampled sup
    zs_all = np.linspace(-0.399, 0.399, 101)[:, None]
    f_all = chart.f_at(zs_all)
    bound = 0.5 * chart.sup_hess * zs_all[:, 0] ** 2 * (1.0 + 1e-6)
    assert np.all(np.abs(f_all) <= bound + 1e-14)


def test_chart_radius_error_and_auto_shrink():
    ell = geometry.ellipsoid([2.0, 1.0])
    x = np.array([2.0 * np.cos(0.5), np.sin(0.5)])
    with pytest.raises(geometry.ChartRadiusError):
        geometry.graph_chart(ell, x, radius=0.9)
    chart = geometry.graph_chart(ell, x)  # default radius auto-shrinks
    assert chart.radius > 0.05


def test_chart_modulus_monotone():
    circ = geometry.ball(1.0)
    chart = geometry.graph_chart(circ, np.array([0.0, 1.0]), radius=0.6)
    deltas = np.linspace(0.01, 0.6, 25)
    vals = [chart.modulus(d) for d in deltas]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    assert chart.modulus(0.3) == pytest.approx((1 - 0.09) ** -1.5 - 1.0, rel=0.05)


def test_paraboloid_membership_examples():
    e = np.array([0.0, 1.0])
    assert geometry.paraboloid_membership(e, 1.0, np.array([0.5, 0.0]))
    assert not geometry.paraboloid_membership(e, 5.0, e)
    assert geometry.paraboloid_membership(e, 2.0, np.array([1.0, 1.0]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 4.0), st.floats(0, 2 * np.pi))
def test_paraboloid_membership_definition(y0, y1, lam, angle):
    e = np.array([np.cos(angle), np.sin(angle)])
    y = np.array([y0, y1])
    axial = float(y @ e)
    perp = y - axial * e
    expected = abs(axial) <= 0.5 * lam * float(perp @ perp)
    assert geometry.paraboloid_membership(e, lam, y) == expected


def test_tangent_frame_rotation_covariant_2d():
    from nlcflow.quadrature import tangent_basis
    th = 0.77
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    n = np.array([0.6, 0.8])
    assert np.allclose(tangent_basis(R @ n), (R @ tangent_basis(n).T).T)


def test_translate_and_rotate_surface():
    circ = geometry.ball(1.0)
    sh = geometry.translate(circ, [3.0, -7.0])
    x = np.array([4.0, -7.0])
    assert sh.phi_at(x[None])[0] == pytest.approx(0.0, abs=1e-12)
    data = geometry.normal_and_curvature_data(sh, x)
    assert np.allclose(data.normal, [1.0, 0.0])
    th = 0.3
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    ell = geometry.ellipsoid([2.0, 1.0])
    rot = geometry.rotate_surface(ell, R)
    x2 = R @ np.array([2.0, 0.0])
    assert rot.phi_at(x2[None])[0] == pytest.approx(0.0, abs=1e-12)
    d_rot = geometry.normal_and_curvature_data(rot, x2)
    assert np.allclose(d_rot.normal, R @ [1.0, 0.0])


def test_sampled_surface_bicubic():
    n, L = 128, 1.5
    xs = np.linspace(-L, L, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    values = 1.0 - X ** 2 - Y ** 2
    surf = geometry.from_sampled(values, L)
    pts = np.array([[0.31, 0.17], [-0.52, 0.4]])
    assert np.allclose(surf.phi_at(pts), 1 - (pts ** 2).sum(axis=1), atol=1e-9)
    assert np.allclose(surf.grad_at(pts), -2 * pts, atol=1e-7)
    H = surf.hess_at(pts)
    assert np.allclose(H, np.broadcast_to(-2 * np.eye(2), H.shape), atol=1e-5)
    assert np.allclose(H[:, 0, 1], H[:, 1, 0])
