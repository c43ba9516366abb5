"""Implicit C^2 surfaces, local graph charts, and geometric regions.

A set E is described by a level function phi with E = {phi >= 0} and
boundary Sigma = {phi = 0}; the outer unit normal is -grad phi / |grad phi|.
Charts write Sigma locally as a graph over the tangent hyperplane,
y = x + z - f(z) n, with f produced by vectorized bisection on the level
function and its derivatives assembled from the implicit relations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .quadrature import tangent_basis

__all__ = [
    "ImplicitSurface",
    "GraphChart",
    "NormalData",
    "DegenerateGradientError",
    "ChartRadiusError",
    "ball",
    "ellipsoid",
    "halfspace",
    "translate",
    "rotate_surface",
    "from_sampled",
    "normal_and_curvature_data",
    "project_to_boundary",
    "graph_chart",
    "paraboloid_membership",
]


class DegenerateGradientError(RuntimeError):
    pass


class ChartRadiusError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImplicitSurface:
    """Level-set description of a set E = {phi >= 0}.

    ``phi_at``, ``grad_at``, ``hess_at`` are batched over points of shape
    (n, d).  ``bounding_radius`` is any R with Sigma inside B(0, R); it is
    +inf for unbounded boundaries such as halfspaces.  ``ray_crossings``,
    when present, returns the boundary crossings along x + rho u for
    rho in (lo, hi) in closed form.
    """

    dimension: int
    phi_at: Callable[[np.ndarray], np.ndarray]
    grad_at: Callable[[np.ndarray], np.ndarray]
    hess_at: Callable[[np.ndarray], np.ndarray]
    bounding_radius: float
    label: str = "surface"
    ray_crossings: Optional[Callable] = None


@dataclass(frozen=True)
class NormalData:
    normal: np.ndarray
    gradient_norm: float
    hessian: np.ndarray


def _pts(points, d):
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, d)
    return arr


def ball(radius: float, center=None, dimension: int = 2) -> ImplicitSurface:
    d = dimension
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    R = float(radius)

    def phi(points):
        p = _pts(points, d)
        return R * R - ((p - c) ** 2).sum(axis=-1)

    def grad(points):
        p = _pts(points, d)
        return -2.0 * (p - c)

    def hess(points):
        p = _pts(points, d)
        return np.broadcast_to(-2.0 * np.eye(d), (p.shape[0], d, d)).copy()

    def crossings(x, u, lo, hi):
        w = np.asarray(x, dtype=float) - c
        b = 2.0 * float(w @ u)
        c0 = float(w @ w) - R * R
        disc = b * b - 4.0 * c0
        if disc <= 0.0:
            return np.empty(0)
        sq = math.sqrt(disc)
        roots = np.array([(-b - sq) / 2.0, (-b + sq) / 2.0])
        return roots[(roots > lo) & (roots < hi)]

    return ImplicitSurface(d, phi, grad, hess, float(np.linalg.norm(c)) + R,
                           label=f"ball_r{R:g}", ray_crossings=crossings)


def ellipsoid(semiaxes) -> ImplicitSurface:
    axes = np.asarray(semiaxes, dtype=float)
    d = axes.size
    inv2 = 1.0 / axes ** 2

    def phi(points):
        p = _pts(points, d)
        return 1.0 - (p ** 2 * inv2[None, :]).sum(axis=-1)

    def grad(points):
        p = _pts(points, d)
        return -2.0 * p * inv2[None, :]

    def hess(points):
        p = _pts(points, d)
        return np.broadcast_to(np.diag(-2.0 * inv2), (p.shape[0], d, d)).copy()

    def crossings(x, u, lo, hi):
        x = np.asarray(x, dtype=float)
        A = float((u ** 2 * inv2).sum())
        B = 2.0 * float((x * u * inv2).sum())
        C = float((x ** 2 * inv2).sum()) - 1.0
        disc = B * B - 4.0 * A * C
        if disc <= 0.0:
            return np.empty(0)
        sq = math.sqrt(disc)
        roots = np.array([(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)])
        return roots[(roots > lo) & (roots < hi)]

    axes_label = "x".join(f"{a:g}" for a in axes)
    return ImplicitSurface(d, phi, grad, hess, float(axes.max()),
                           label=f"ellipsoid_{axes_label}", ray_crossings=crossings)


def halfspace(normal, through=None) -> ImplicitSurface:
    e = np.asarray(normal, dtype=float)
    e = e / np.linalg.norm(e)
    d = e.size
    p0 = np.zeros(d) if through is None else np.asarray(through, dtype=float)

    def phi(points):
        p = _pts(points, d)
        return -((p - p0) @ e)

    def grad(points):
        p = _pts(points, d)
        return np.broadcast_to(-e, (p.shape[0], d)).copy()

    def hess(points):
        p = _pts(points, d)
        return np.zeros((p.shape[0], d, d))

    def crossings(x, u, lo, hi):
        ue = float(np.asarray(u, dtype=float) @ e)
        if ue == 0.0:
            return np.empty(0)
        rho = -float((np.asarray(x, dtype=float) - p0) @ e) / ue
        if lo < rho < hi:
            return np.array([rho])
        return np.empty(0)

    return ImplicitSurface(d, phi, grad, hess, math.inf,
                           label="halfspace", ray_crossings=crossings)


def translate(surface: ImplicitSurface, shift) -> ImplicitSurface:
    h = np.asarray(shift, dtype=float)
    base_phi, base_grad, base_hess = surface.phi_at, surface.grad_at, surface.hess_at

    def phi(points):
        return base_phi(np.asarray(points, dtype=float) - h)

    def grad(points):
        return base_grad(np.asarray(points, dtype=float) - h)

    def hess(points):
        return base_hess(np.asarray(points, dtype=float) - h)

    crossings = None
    if surface.ray_crossings is not None:
        base_cross = surface.ray_crossings

        def crossings(x, u, lo, hi):
            return base_cross(np.asarray(x, dtype=float) - h, u, lo, hi)

    radius = surface.bounding_radius
    if math.isfinite(radius):
        radius = radius + float(np.linalg.norm(h))
    return replace(surface, phi_at=phi, grad_at=grad, hess_at=hess,
                   bounding_radius=radius, label=surface.label + "_shift",
                   ray_crossings=crossings)


def rotate_surface(surface: ImplicitSurface, rotation) -> ImplicitSurface:
    """The rotated set R E, with level function phi(R^t y)."""
    R = np.asarray(rotation, dtype=float)
    base_phi, base_grad, base_hess = surface.phi_at, surface.grad_at, surface.hess_at

    def phi(points):
        return base_phi(np.asarray(points, dtype=float) @ R)

    def grad(points):
        return base_grad(np.asarray(points, dtype=float) @ R) @ R.T

    def hess(points):
        H = base_hess(np.asarray(points, dtype=float) @ R)
        return np.einsum("ij,njk,lk->nil", R, H, R)

    crossings = None
    if surface.ray_crossings is not None:
        base_cross = surface.ray_crossings

        def crossings(x, u, lo, hi):
            return base_cross(np.asarray(x, dtype=float) @ R,
                              np.asarray(u, dtype=float) @ R, lo, hi)

    return replace(surface, phi_at=phi, grad_at=grad, hess_at=hess,
                   label=surface.label + "_rot", ray_crossings=crossings)


# ---------------------------------------------------------------------------
# grid-sampled surfaces (bicubic interpolation)
# ---------------------------------------------------------------------------

def _catmull_rom_weights(t: np.ndarray, order: int) -> np.ndarray:
    """Weights for the four surrounding samples; order 0, 1, 2 derivatives."""
    t2 = t * t
    t3 = t2 * t
    if order == 0:
        return 0.5 * np.stack([
            -t3 + 2.0 * t2 - t,
            3.0 * t3 - 5.0 * t2 + 2.0,
            -3.0 * t3 + 4.0 * t2 + t,
            t3 - t2,
        ], axis=-1)
    if order == 1:
        return 0.5 * np.stack([
            -3.0 * t2 + 4.0 * t - 1.0,
            9.0 * t2 - 10.0 * t,
            -9.0 * t2 + 8.0 * t + 1.0,
            3.0 * t2 - 2.0 * t,
        ], axis=-1)
    return 0.5 * np.stack([
        -6.0 * t + 4.0,
        18.0 * t - 10.0,
        -18.0 * t + 8.0,
        6.0 * t - 2.0,
    ], axis=-1)


def from_sampled(values: np.ndarray, half_width: float,
                 label: str = "sampled") -> ImplicitSurface:
    """Bicubic C^1 surface from node samples on the box [-L, L]^2.

    Values are node centered, index [i, j] at (-L + i h, -L + j h).
    Queries outside the box clamp to the edge rows, which is exact when
    the outer band of the sampling is constant.
    """
    V = np.asarray(values, dtype=float)
    n = V.shape[0] - 1
    L = float(half_width)
    h = 2.0 * L / n

    def _prep(points):
        p = _pts(points, 2)
        uv = (p + L) / h
        base = np.floor(uv).astype(int)
        t = uv - base
        idx = base[..., None] + np.arange(-1, 3)[None, None, :]
        idx = np.clip(idx, 0, n)
        return idx, t

    def _tensor(points, ox, oy):
        idx, t = _prep(points)
        wx = _catmull_rom_weights(t[:, 0], ox) / h ** ox
        wy = _catmull_rom_weights(t[:, 1], oy) / h ** oy
        patch = V[idx[:, 0][:, :, None], idx[:, 1][:, None, :]]
        return np.einsum("na,nab,nb->n", wx, patch, wy)

    def phi(points):
        return _tensor(points, 0, 0)

    def grad(points):
        return np.stack([_tensor(points, 1, 0), _tensor(points, 0, 1)], axis=-1)

    def hess(points):
        dxx = _tensor(points, 2, 0)
        dxy = _tensor(points, 1, 1)
        dyy = _tensor(points, 0, 2)
        H = np.empty((dxx.size, 2, 2))
        H[:, 0, 0] = dxx
        H[:, 0, 1] = dxy
        H[:, 1, 0] = dxy
        H[:, 1, 1] = dyy
        return H

    return ImplicitSurface(2, phi, grad, hess, L * math.sqrt(2.0), label=label)


# ---------------------------------------------------------------------------
# normals, projection, charts
# ---------------------------------------------------------------------------

def normal_and_curvature_data(surface: ImplicitSurface, x,
                              boundary_tol: float = 1e-8) -> NormalData:
    """Outer normal, gradient magnitude, and Hessian at a boundary point."""
    x = np.asarray(x, dtype=float)
    val = float(surface.phi_at(x[None, :])[0])
    g = surface.grad_at(x[None, :])[0]
    gn = float(np.linalg.norm(g))
    if gn < 1e-12:
        raise DegenerateGradientError(f"|grad phi| = {gn:g} at {x}")
    if abs(val) > boundary_tol * max(1.0, gn):
        raise ValueError(f"point {x} is off the boundary: phi = {val:g}")
    H = surface.hess_at(x[None, :])[0]
    return NormalData(normal=-g / gn, gradient_norm=gn, hessian=H)


def project_to_boundary(surface: ImplicitSurface, x0, tol: float = 1e-12,
                        max_iter: int = 60) -> np.ndarray:
    """Newton projection of x0 onto {phi = 0} along the gradient."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        val = float(surface.phi_at(x[None, :])[0])
        g = surface.grad_at(x[None, :])[0]
        gn2 = float(g @ g)
        if gn2 < 1e-24:
            raise DegenerateGradientError("projection hit a critical point")
        if abs(val) <= tol:
            return x
        x = x - val * g / gn2
    raise RuntimeError("boundary projection did not converge")


def paraboloid_membership(e, lam: float, y) -> np.ndarray:
    """Test |y.e| <= (lam/2) |y - (y.e) e|^2, vectorized over rows of y."""
    e = np.asarray(e, dtype=float)
    pts = np.asarray(y, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts.reshape(1, -1)
    axial = pts @ e
    perp = pts - axial[:, None] * e[None, :]
    inside = np.abs(axial) <= 0.5 * lam * (perp ** 2).sum(axis=-1)
    return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class GraphChart:
    """Local graph description of the boundary over the tangent plane.

    f maps tangent coordinates z (shape (n, d-1)) to the graph height, with
    f(0) = 0 and grad f(0) = 0.  ``sup_hess`` is the sampled sup of the
    Hessian norm over the chart disk and ``modulus`` the sampled modulus
    of continuity of the Hessian, both entering the convergence budget.
    """

    base_point: np.ndarray
    normal: np.ndarray
    tangent_frame: np.ndarray
    radius: float
    f_at: Callable[[np.ndarray], np.ndarray]
    grad_f_at: Callable[[np.ndarray], np.ndarray]
    hess_f_at: Callable[[np.ndarray], np.ndarray]
    hess0: np.ndarray
    sup_hess: float
    _modulus_rho: np.ndarray
    _modulus_val: np.ndarray

    def modulus(self, delta: float) -> float:
        """Monotone interpolation of sup_{|z| < delta} |hess f(z) - hess f(0)|."""
        return float(np.interp(delta, self._modulus_rho, self._modulus_val))

    def hess0_norm(self) -> float:
        return float(np.linalg.norm(self.hess0))


def _chart_hess0(data: NormalData, frame: np.ndarray) -> np.ndarray:
    T = frame
    return -(T @ data.hessian @ T.T) / data.gradient_norm


def graph_chart(surface: ImplicitSurface, x, radius: Optional[float] = None,
                boundary_tol: float = 1e-8, n_ladder: int = 24) -> GraphChart:
    """Construct the tangent graph chart at a boundary point.

    With an explicit radius, failure to bracket the graph inside the
    cylinder raises ChartRadiusError; with the default radius the chart is
    shrunk geometrically until construction succeeds.
    """
    x = np.asarray(x, dtype=float)
    d = surface.dimension
    data = normal_and_curvature_data(surface, x, boundary_tol)
    n_hat = data.normal
    frame = tangent_basis(n_hat)
    hess0 = _chart_hess0(data, frame)

    if radius is None:
        guess = min(surface.bounding_radius / 4.0 if math.isfinite(surface.bounding_radius) else 1.0,
                    0.8 / max(float(np.linalg.norm(hess0)), 0.8))
        candidates = [guess * 0.7 ** k for k in range(9)]
    else:
        candidates = [float(radius)]

    last_err = None
    for delta in candidates:
        try:
            return _build_chart(surface, x, n_hat, frame, hess0, data, delta, n_ladder)
        except ChartRadiusError as err:
            last_err = err
    raise last_err


def _build_chart(surface, x, n_hat, frame, hess0, data, delta, n_ladder) -> GraphChart:
    d = surface.dimension
    # below this tangent radius the level function cannot resolve the graph
    # (frho ~ |z|^2 drops under float noise); the osculating quadratic is
    # exact there to relative order |z| * modulus
    z_floor = 1e-5 * delta

    def solve_f(Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, d - 1)
        out = np.einsum("na,ab,nb->n", Z, hess0, Z) * 0.5
        big = np.linalg.norm(Z, axis=1) >= z_floor
        if not np.any(big):
            return out
        Zb = Z[big]
        base = x[None, :] + Zb @ frame

        def phi_of_t(t):
            return surface.phi_at(base - t[:, None] * n_hat[None, :])

        lo = np.full(Zb.shape[0], -delta)
        hi = np.full(Zb.shape[0], delta)
        f_lo = phi_of_t(lo)
        f_hi = phi_of_t(hi)
        if np.any(f_lo >= 0.0) or np.any(f_hi < 0.0):
            raise ChartRadiusError(
                f"graph not bracketed inside the cylinder of radius {delta:g}")
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            fm = phi_of_t(mid)
            neg = fm < 0.0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        out[big] = 0.5 * (lo + hi)
        return out

    def f_at(Z):
        return solve_f(Z)

    def _implicit_derivatives(Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, d - 1)
        f = solve_f(Z)
        pts = x[None, :] + Z @ frame - f[:, None] * n_hat[None, :]
        g = surface.grad_at(pts)
        H = surface.hess_at(pts)
        F_t = -(g @ n_hat)
        if np.any(np.abs(F_t) < 1e-12):
            raise ChartRadiusError("level function degenerates inside the chart")
        F_a = g @ frame.T                                  # (n, d-1)
        f_a = -F_a / F_t[:, None]
        TH = np.einsum("ad,ndk->nak", frame, H)
        F_ab = np.einsum("nak,bk->nab", TH, frame)
        F_at = -np.einsum("nak,k->na", TH, n_hat)
        F_tt = np.einsum("k,nkl,l->n", n_hat, H, n_hat)
        cross = F_at[:, :, None] * f_a[:, None, :] + F_at[:, None, :] * f_a[:, :, None]
        quad = F_tt[:, None, None] * f_a[:, :, None] * f_a[:, None, :]
        f_ab = -(F_ab + cross + quad) / F_t[:, None, None]
        return f, f_a, f_ab

    def grad_f_at(Z):
        return _implicit_derivatives(Z)[1]

    def hess_f_at(Z):
        return _implicit_derivatives(Z)[2]

    # residual check plus Hessian ladder for sup and modulus
    fractions = np.linspace(1.0 / n_ladder, 1.0 - 1e-9, n_ladder)
    if d == 2:
        zs = np.concatenate([fractions, -fractions])[:, None] * delta
        rho_of = np.abs(zs[:, 0])
    else:
        angles = (np.arange(8) + 0.5) * (2.0 * math.pi / 8)
        ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        zs = (fractions[:, None, None] * ring[None, :, :]).reshape(-1, 2) * delta
        rho_of = np.linalg.norm(zs, axis=1)

    f_vals, _, f_hess = _implicit_derivatives(zs)
    pts = x[None, :] + zs @ frame - f_vals[:, None] * n_hat[None, :]
    residual = np.max(np.abs(surface.phi_at(pts)))
    if residual > 1e-10 * max(1.0, data.gradient_norm):
        raise ChartRadiusError(f"chart residual {residual:g} too large")
    if np.any(np.abs(f_vals) >= delta):
        raise ChartRadiusError("graph escapes the cylinder")

    norms = np.linalg.norm(f_hess.reshape(f_hess.shape[0], -1), axis=1)
    gaps = np.linalg.norm((f_hess - hess0[None, :, :]).reshape(f_hess.shape[0], -1), axis=1)
    order = np.argsort(rho_of)
    rho_sorted = rho_of[order]
    gap_sorted = np.maximum.accumulate(gaps[order])
    sup_hess = float(max(norms.max(), np.linalg.norm(hess0)))

    return GraphChart(
        base_point=x,
        normal=n_hat,
        tangent_frame=frame,
        radius=float(delta),
        f_at=f_at,
        grad_f_at=grad_f_at,
        hess_f_at=hess_f_at,
        hess0=hess0,
        sup_hess=sup_hess,
        _modulus_rho=np.concatenate([[0.0], rho_sorted]),
        _modulus_val=np.concatenate([[0.0], gap_sorted]),
    )
