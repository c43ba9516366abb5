"""Independent oracles used to freeze expected values in the tests.

Everything here deliberately avoids the package's own quadrature paths:
scipy.integrate.quad on 1-D reductions, brute-force polar sums, and
fixed-grid (non-adaptive) integrators for the adaptivity checks.
"""

import numpy as np
from scipy import integrate

TWO_PI = 2.0 * np.pi


def frac2_profile(r, d=2, s=0.5, sigma=0.5, m=1.0, mu=1.0):
    r = np.asarray(r, dtype=float)
    return np.where(r <= 1.0, mu * r ** (-(d + sigma)), m * r ** (-(d + 1 + s)))


def ball_band_integrand(r, eps, R, profile):
    """Radial density of H_eps for a ball of radius R at a boundary point.

    The antipodally paired indicator of a ball at a boundary point is -2 on
    the band |cos theta| < r / (2R) and zero elsewhere, which reduces the
    curvature to a 1-D integral.
    """
    c = np.minimum(r / (2.0 * R), 1.0)
    return (1.0 / eps) * profile(r / eps) * eps ** -2 * r * (TWO_PI - 4.0 * np.arccos(c))


def ball_curvature_oracle(eps, R=1.0, profile=frac2_profile):
    pieces = [(0.0, eps), (eps, 2.0 * R), (2.0 * R, np.inf)]
    total = 0.0
    for a, b in pieces:
        val, _ = integrate.quad(ball_band_integrand, a, b,
                                args=(eps, R, profile),
                                epsabs=1e-13, epsrel=1e-12, limit=400)
        total += val
    return total


def excision_ladder_oracle(kernel, surface, x, r_ladder, n_theta=8192):
    """Brute-force polar evaluation of the raw excised-ball definition.

    Sharp per-ray crossings, closed-form radial masses, analytic far tail.
    The tangential sliver converges only like the angular resolution, so
    the extrapolated value carries an O(10^-1) residual at this density.
    """
    from nlcflow import kernels as kmod
    x = np.asarray(x, dtype=float)
    R_geom = float(np.linalg.norm(x)) + surface.bounding_radius + 1.0
    theta = (np.arange(n_theta) + 0.5) * (TWO_PI / n_theta)
    area = TWO_PI
    tail = kernel.tail_mass_closed_form
    vals = []
    for r in r_ladder:
        total = 0.0
        for th in theta:
            u = np.array([np.cos(th), np.sin(th)])
            roots = surface.ray_crossings(x, u, r, R_geom)
            edges = np.concatenate([[r], np.sort(roots), [R_geom]])
            mids = 0.5 * (edges[:-1] + edges[1:])
            pts = x[None, :] + mids[:, None] * u[None, :]
            signs = np.where(surface.phi_at(pts) >= 0.0, 1.0, -1.0)
            masses = (tail(edges[:-1]) - tail(edges[1:])) / area
            total += float((signs * masses).sum())
        total *= TWO_PI / n_theta
        total += -kmod.tail_mass(kernel, R_geom)
        vals.append(-total)
    return np.asarray(vals)


def extrapolate_power(r_ladder, values, exponent):
    """Least-squares fit values ~ a + b r^exponent, returning a."""
    r = np.asarray(r_ladder, dtype=float)
    A = np.column_stack([np.ones_like(r), r ** exponent])
    coef, *_ = np.linalg.lstsq(A, np.asarray(values), rcond=None)
    return float(coef[0])


def fixed_grid_cylinder(kernel, chart, n_shells, n_rho, n_t):
    """Non-adaptive cylinder integral on log-spaced shells, d = 2.

    Independent of the production shell walk: fixed resolution, plain
    Gauss nodes, no refinement, no closure estimates.
    """
    from numpy.polynomial.legendre import leggauss
    delta = chart.radius
    n_hat = chart.normal
    tangent = chart.tangent_frame[0]
    edges = np.geomspace(delta * 1e-13, delta, n_shells + 1)
    xg, wg = leggauss(n_rho)
    xg = (xg + 1.0) / 2.0
    wg = wg / 2.0
    xt, wt = leggauss(n_t)
    xt = (xt + 1.0) / 2.0
    wt = wt / 2.0
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        rho = a + (b - a) * xg
        z = rho[:, None]
        hi = chart.f_at(z)
        lo = -chart.f_at(-z)
        width = hi - lo
        taus = lo[:, None] + width[:, None] * xt[None, :]
        pts = rho[:, None, None] * tangent[None, None, :] \
            - taus[..., None] * n_hat[None, None, :]
        vals = kernel.evaluate_at(pts.reshape(-1, 2)).reshape(taus.shape)
        inner = (vals * wt[None, :]).sum(axis=1) * width
        total += 2.0 * float((inner * wg).sum() * (b - a))
    return total


def fixed_grid_farfield(kernel, surface, x, delta_bar, n_theta):
    """Non-adaptive far field: fixed antipodal ray fan, sharp crossings."""
    from nlcflow import kernels as kmod
    x = np.asarray(x, dtype=float)
    g = surface.grad_at(x[None, :])[0]
    n_hat = -g / np.linalg.norm(g)
    t_hat = np.array([-n_hat[1], n_hat[0]])
    bounded = np.isfinite(surface.bounding_radius)
    R_geom = float(np.linalg.norm(x)) + surface.bounding_radius + delta_bar + 1.0 \
        if bounded else max(64.0 * delta_bar, 32.0 * (float(np.linalg.norm(x)) + 1.0))
    area = TWO_PI
    tail = kernel.tail_mass_closed_form
    half = n_theta // 2
    th = (np.arange(half) + 0.5) * (TWO_PI / n_theta)
    total = 0.0
    for j in range(half):
        u0 = np.cos(th[j]) * t_hat + np.sin(th[j]) * n_hat
        lo = delta_bar / max(abs(np.cos(th[j])), abs(np.sin(th[j])))
        for sgn in (1.0, -1.0):
            u = sgn * u0
            roots = surface.ray_crossings(x, u, lo, R_geom)
            edges = np.concatenate([[lo], np.sort(roots), [R_geom]])
            mids = 0.5 * (edges[:-1] + edges[1:])
            pts = x[None, :] + mids[:, None] * u[None, :]
            signs = np.where(surface.phi_at(pts) >= 0.0, 1.0, -1.0)
            masses = (tail(edges[:-1]) - tail(edges[1:])) / area
            total += float((signs * masses).sum()) * (TWO_PI / n_theta)
    if bounded:
        total += -kmod.tail_mass(kernel, R_geom)
    return total


def anisotropic_test_kernel(d=2, s=0.5, sigma=0.5, stretch=1.5):
    """Even, non-radial kernel K(y) = profile(|A y|) for rotation tests."""
    from nlcflow.kernels import Kernel, NearField
    A = np.diag([stretch, 1.0]) if d == 2 else np.diag([stretch] + [1.0] * (d - 1))
    p_near = d + sigma
    p_far = d + 1.0 + s

    def metric(points):
        return np.linalg.norm(np.asarray(points, dtype=float) @ A.T, axis=-1)

    def evaluate(points):
        r = metric(points)
        with np.errstate(divide="ignore"):
            return np.where(r <= 1.0, r ** (-p_near), r ** (-p_far))

    def gradient(points):
        pts = np.asarray(points, dtype=float)
        r = metric(pts)
        with np.errstate(divide="ignore"):
            dk = np.where(r <= 1.0, -p_near * r ** (-p_near - 1.0),
                          -p_far * r ** (-p_far - 1.0))
        direction = (pts @ A.T @ A) / r[..., None]
        return dk[..., None] * direction

    m_dom = float(stretch ** 0 * 1.0)  # |Ay| >= |y| for stretch >= 1
    return Kernel(
        dimension=d, evaluate_at=evaluate, gradient_at=gradient,
        s=s, m=m_dom, near_field=NearField("power", sigma, 1.0),
        radial_breakpoints=(1.0 / stretch, 1.0),
        family="custom", label=f"metric_stretch{stretch:g}")
