"""The four curvature quantities and the convergence error budget.

* ``nonlocal_curvature``: the kernel-weighted curvature of E at a boundary
  point, evaluated as symmetrized cylinder integral minus far field.  The
  sign convention is fixed so that balls seen from outside have positive
  curvature.
* ``rescaled_curvature``: (1/eps) times the curvature of the zoomed kernel.
* ``anisotropy_matrix``: the hyperplane second-moment matrix M(e) encoding
  the directional weights of the local limit.
* ``local_curvature``: the anisotropic local curvature
  -(1/|grad phi|) tr(M(n) hess phi).
* ``convergence_error_bound``: the explicit budget controlling
  |rescaled - local| in terms of (eps, delta) and chart data.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry, kernels, quadrature

__all__ = [
    "AnisotropyMatrix",
    "ConvergenceBudget",
    "OutOfRegimeError",
    "anisotropy_matrix",
    "nonlocal_curvature",
    "rescaled_curvature",
    "local_curvature",
    "radial_constant",
    "convergence_error_bound",
    "clear_anisotropy_cache",
]


class OutOfRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class AnisotropyMatrix:
    direction: np.ndarray
    matrix: np.ndarray
    rel_tol: float
    frame: np.ndarray = None       # tangent rows spanning direction-perp
    block: np.ndarray = None       # moments in tangent coordinates

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """M @ vec through the tangent factorization.

        The integration domain is the hyperplane orthogonal to the
        direction, so applying through the frame annihilates the direction
        exactly (frame @ direction is exactly zero in the plane, where the
        frame is the quarter-turn).
        """
        # elementwise products then summation: the two terms of the planar
        # frame-direction product are exact negations, so the coefficient
        # vanishes exactly (a fused BLAS dot would leave one rounding)
        coeffs = (self.frame * np.asarray(vec, dtype=float)[None, :]).sum(axis=1)
        return self.frame.T @ (self.block @ coeffs)


@dataclass(frozen=True)
class ConvergenceBudget:
    """Parameters of the quantitative convergence estimate.

    Exponents alpha, beta live in (0, s) where s is the kernel tail
    exponent; gamma in (0, alpha / (1 + alpha)) gives the coupling
    delta = q eps^gamma along which the budget vanishes.
    """

    s: float
    alpha: float
    beta: float
    gamma: float
    q: float
    eps_bar: float
    delta_bar: float

    def __post_init__(self):
        if not (0.0 < self.alpha < self.s):
            raise OutOfRegimeError(f"alpha={self.alpha} outside (0, s={self.s})")
        if not (0.0 < self.beta < self.s):
            raise OutOfRegimeError(f"beta={self.beta} outside (0, s={self.s})")
        lim = self.alpha / (1.0 + self.alpha)
        if not (0.0 < self.gamma < lim):
            raise OutOfRegimeError(f"gamma={self.gamma} outside (0, {lim:g})")
        if not self.q > 1.0:
            raise OutOfRegimeError("q must exceed 1")
        if not (0.0 < self.eps_bar < 1.0):
            raise OutOfRegimeError("eps_bar must lie in (0, 1)")
        if self.q * self.eps_bar > self.delta_bar:
            raise OutOfRegimeError("q * eps_bar must not exceed delta_bar")

    def delta_of(self, eps: float) -> float:
        return self.q * eps ** self.gamma


_aniso_cache: dict = {}
_aniso_lock = threading.Lock()


def clear_anisotropy_cache():
    with _aniso_lock:
        _aniso_cache.clear()


def anisotropy_matrix(kernel, e, budget: Optional[quadrature.QuadratureBudget] = None) -> AnisotropyMatrix:
    """Second-moment matrix of the kernel on the hyperplane orthogonal to e.

    Assembled in tangent coordinates from a single node set, so M e = 0
    exactly and M is positive semidefinite by construction.  Results are
    memoized per (kernel, direction, tolerance); the cache is read-mostly
    with last-writer-wins semantics.
    """
    budget = budget or quadrature.QuadratureBudget()
    e = np.asarray(e, dtype=float)
    norm = np.linalg.norm(e)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"direction must be unit, |e| = {norm:.17g}")
    key = (kernel.cache_token, tuple(np.round(e, 14)), budget.rel_tol, budget.radial_nodes)
    cached = _aniso_cache.get(key)
    if cached is not None:
        return cached
    block = quadrature.hyperplane_second_moments(kernel, e, budget)
    frame = quadrature.tangent_basis(e)
    M = frame.T @ block @ frame
    M = 0.5 * (M + M.T)
    result = AnisotropyMatrix(direction=e, matrix=M, rel_tol=budget.rel_tol,
                              frame=frame, block=block)
    with _aniso_lock:
        _aniso_cache[key] = result
    return result


def nonlocal_curvature(kernel, surface, x, delta_bar: Optional[float] = None,
                       budget: Optional[quadrature.QuadratureBudget] = None,
                       chart: Optional[geometry.GraphChart] = None) -> float:
    """Kernel curvature of E at the boundary point x.

    Cylinder contribution plus the negated far field; positive on convex
    sets seen from outside.  A prebuilt chart can be passed to amortize
    chart construction across kernels or scales.
    """
    budget = budget or quadrature.QuadratureBudget()
    x = np.asarray(x, dtype=float)
    if chart is None:
        chart = geometry.graph_chart(surface, x, radius=delta_bar)
    cylinder = quadrature.symmetrized_cylinder_integral(kernel, chart, budget)
    far = quadrature.farfield_integral(kernel, surface, x, chart.radius, budget)
    return cylinder - far


def rescaled_curvature(kernel, eps: float, surface, x,
                       budget: Optional[quadrature.QuadratureBudget] = None,
                       delta_bar: Optional[float] = None,
                       chart: Optional[geometry.GraphChart] = None) -> float:
    """Zoomed curvature (1/eps) H_{K_eps}(E, x)."""
    if not (0.0 < eps <= 1.0):
        raise kernels.KernelParameterError(f"eps={eps} outside (0, 1]")
    zoomed = kernels.rescale(kernel, eps)
    value = nonlocal_curvature(zoomed, surface, x, delta_bar=delta_bar,
                               budget=budget, chart=chart)
    return value / eps


def local_curvature(kernel, surface, x,
                    budget: Optional[quadrature.QuadratureBudget] = None) -> float:
    """Anisotropic local curvature -(1/|grad phi|) tr(M(n) hess phi)."""
    data = geometry.normal_and_curvature_data(surface, np.asarray(x, dtype=float))
    M = anisotropy_matrix(kernel, data.normal, budget)
    return -float(np.trace(M.matrix @ data.hessian)) / data.gradient_norm


def radial_constant(kernel, budget: Optional[quadrature.QuadratureBudget] = None,
                    check_tol: float = 1e-4) -> float:
    """The 1-D moment c = int_0^inf r^d K0(r) dr of a radial kernel.

    Also cross-checks the reduction to standard mean curvature on the unit
    sphere: the local curvature there must equal (sphere area) * c * H with
    H the normalized mean curvature.
    """
    if not kernel.is_radial:
        raise kernels.UnsupportedKernelError("radial reduction needs a radial kernel")
    budget = budget or quadrature.QuadratureBudget()
    d = kernel.dimension
    prof = kernel.radial_profile

    def density(r):
        return prof(r) * r ** d

    # graded shells toward zero plus envelope-closed tail
    total = 0.0
    anchor = max([1.0] + list(kernel.radial_breakpoints))
    a = anchor
    prev = None
    for k in range(budget.max_depth):
        seg = quadrature.integrate_radial_shells(density, a / 2.0, a, budget.rel_tol)
        total += seg
        a /= 2.0
        if k >= 6 and prev is not None and abs(seg) <= abs(prev) and \
                abs(seg) <= 0.25 * budget.rel_tol * max(abs(total), 1e-300):
            if abs(prev) > 0:
                r = abs(seg) / abs(prev)
                if r < 0.95:
                    total += seg * r / (1.0 - r)
            break
        prev = seg
    else:
        raise quadrature.BudgetExceededError("radial constant: inner walk exhausted")

    if kernel.tail_power_exact is not None:
        coef, p = kernel.tail_power_exact
        if p <= d + 1:
            raise kernels.UnsupportedKernelError("radial moment diverges")
        total += coef * anchor ** (d + 1 - p) / (p - d - 1)
    else:
        a = anchor
        for k in range(budget.max_depth):
            seg = quadrature.integrate_radial_shells(density, a, 2.0 * a, budget.rel_tol)
            total += seg
            a *= 2.0
            envelope = kernel.m * a ** (-kernel.s) / kernel.s
            if envelope <= budget.rel_tol * max(abs(total), 1e-300):
                break
        else:
            raise quadrature.BudgetExceededError("radial constant: tail never closed")

    # consistency with the normalized mean curvature of the unit sphere
    sphere = geometry.ball(1.0, dimension=d)
    x0 = np.zeros(d)
    x0[0] = 1.0
    h0 = local_curvature(kernel, sphere, x0, budget)
    area = kernels.sphere_area(d)
    data = geometry.normal_and_curvature_data(sphere, x0)
    frame = quadrature.tangent_basis(data.normal)
    ring = frame  # unit directions of the tangent sphere, d=2 gives one pair
    if d == 2:
        mean_h = -(2.0 * float(ring[0] @ data.hessian @ ring[0])) / (area * data.gradient_norm)
    else:
        n_dir = 64
        theta = (np.arange(n_dir) + 0.5) * (2.0 * math.pi / n_dir)
        dirs = np.cos(theta)[:, None] * frame[0][None, :] + \
            np.sin(theta)[:, None] * frame[1][None, :]
        vals = np.einsum("nd,de,ne->n", dirs, data.hessian, dirs)
        mean_h = -(vals.mean() * 2.0 * math.pi) / (area * data.gradient_norm)
    reduced = area * total * mean_h
    if abs(reduced - h0) > check_tol * max(1.0, abs(h0)):
        raise quadrature.BudgetExceededError(
            f"radial reduction mismatch: {reduced:.8g} vs {h0:.8g}")
    return total


def convergence_error_bound(budget: ConvergenceBudget, eps: float, delta: float,
                            chart: geometry.GraphChart, a0: float, b0: float) -> float:
    """Explicit error budget E(eps, delta) for |H_eps - H_0| at one point.

    Valid in the regime q eps <= delta <= chart radius, eps < eps_bar;
    outside it the estimate is meaningless and an error is raised.
    """
    if not (0.0 < eps < budget.eps_bar):
        raise OutOfRegimeError(f"eps={eps:g} outside (0, {budget.eps_bar:g})")
    if not (budget.q * eps <= delta <= chart.radius * (1.0 + 1e-12)):
        raise OutOfRegimeError(
            f"delta={delta:g} outside [q eps, chart radius] = "
            f"[{budget.q * eps:g}, {chart.radius:g}]")
    ratio = eps / delta
    sup2 = chart.sup_hess
    return (ratio ** budget.alpha / delta
            + (b0 + 1.0) * sup2 ** 2 * delta
            + a0 * chart.modulus(delta)
            + chart.hess0_norm() * ratio ** budget.beta)
