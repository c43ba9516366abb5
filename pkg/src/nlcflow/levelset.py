"""Monotone explicit solvers for the nonlocal and local level-set flows.

Both steppers are monotone in every nodal value, which is the property the
discrete comparison tests and the viscosity-limit reasoning rest on.

Local flow: a diffusion-threshold (level-ladder) scheme.  For every level
of a fixed value ladder, the indicator of the superlevel set is smoothed
by a Gaussian whose direction-resolved second moments match dt times the
anisotropy matrix, and the updated value interpolates where the smoothed
occupancy crosses one half.  The scheme is unconditionally stable; its
time step is tied to the smoothing width (sigma = sqrt(2 g dt)), which
must live between roughly two and a dozen cells for consistency.

Nonlocal flow: forward Euler with Godunov upwind gradients and the
kernel-weighted occupancy sum over the whole grid.  Cell kernel masses are
exact (subdivided near the singular scale), set membership is smoothed
over one cell of value width (a ramp, which keeps monotonicity while
removing the divergence of sharp nodal signs at lattice tangencies), and
the mass outside the computational box is closed analytically using the
constant exterior value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from . import curvature, kernels, quadrature

__all__ = [
    "GridFunction",
    "FlowConfig",
    "Trajectory",
    "AprioriReport",
    "CFLError",
    "DomainTooSmallError",
    "clamped_distance_disc",
    "grid_from_callable",
    "lipschitz_seminorm",
    "step_local",
    "step_nonlocal",
    "nonlocal_speed",
    "evolve",
    "check_apriori",
    "marching_squares",
    "front_mean_radius",
    "grid_to_csv",
    "grid_to_binary",
    "grid_from_binary",
    "polylines_to_csv",
]


class CFLError(RuntimeError):
    pass


class DomainTooSmallError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridFunction:
    """Node-centered samples of u on the box [-L, L]^2.

    values[i, j] sits at (-L + i h, -L + j h) with h = 2 L / N.  The outer
    band of width >= 3 h must equal the exterior constant c_out.
    """

    values: np.ndarray
    half_width: float
    c_out: float
    time: float = 0.0

    @property
    def n_cells(self) -> int:
        return self.values.shape[0] - 1

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.values.shape[0])

    def validate(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 8:
            raise ValueError("grid must be square and at least 8x8 nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid contains non-finite values")
        band = max(3, 1)
        ring = np.concatenate([
            v[:band, :].ravel(), v[-band:, :].ravel(),
            v[:, :band].ravel(), v[:, -band:].ravel(),
        ])
        if not np.allclose(ring, self.c_out, rtol=0.0, atol=0.0):
            raise ValueError("padding band of width 3h must equal c_out exactly")
        return self


def lipschitz_seminorm(grid: GridFunction) -> float:
    """Max of |u_i - u_j| / h over axis-neighbor pairs."""
    v = grid.values
    dx = np.abs(np.diff(v, axis=0)).max() if v.shape[0] > 1 else 0.0
    dy = np.abs(np.diff(v, axis=1)).max() if v.shape[1] > 1 else 0.0
    return float(max(dx, dy) / grid.h)


def grid_from_callable(fn: Callable, n_cells: int, half_width: float,
                       c_out: float, time: float = 0.0) -> GridFunction:
    xs = np.linspace(-half_width, half_width, n_cells + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return GridFunction(np.asarray(fn(X, Y), dtype=float), half_width, c_out, time)


def clamped_distance_disc(radius: float, n_cells: int, half_width: float,
                          clamp: float = 0.15, center=(0.0, 0.0)) -> GridFunction:
    """Signed distance to a circle, clamped to [-clamp, clamp]."""
    cx, cy = center

    def fn(X, Y):
        return np.clip(radius - np.hypot(X - cx, Y - cy), -clamp, clamp)

    return grid_from_callable(fn, n_cells, half_width, c_out=-clamp)


@dataclass(frozen=True)
class FlowConfig:
    """Experiment parameters for one flow run."""

    kernel: kernels.Kernel
    eps: float = 0.0                 # 0 selects the local problem
    final_time: float = 0.02
    cfl: float = 0.5
    theta: float = 1e-3              # retained knob; monotone schemes need no
    snapshot_dt: float = 0.005       # gradient regularization (see module doc)
    sigma_cells: float = 6.0         # local smoothing width in cells
    n_levels: int = 48
    ramp_cells: float = 1.0          # local occupancy ramp width
    chi_width_cells: float = 1.0     # nonlocal membership ramp width
    value_range: Optional[tuple] = None  # fixed ladder range (lo, hi)
    speed_bound: Optional[float] = None  # run-level sup |H_eps| estimate;
    label: str = "flow"                  # fixes the step sequence, and steps
                                         # exceeding it are rejected

    def __post_init__(self):
        if self.final_time <= 0.0:
            raise ValueError("final_time must be positive")
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("CFL factor must lie in (0, 1]")
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")


@dataclass(frozen=True)
class Trajectory:
    snapshots: list
    lip_history: np.ndarray          # (time, Lip_h) rows, every step
    speed_history: np.ndarray        # (time, sup |speed|) rows, nonlocal runs

    @property
    def times(self) -> np.ndarray:
        return np.asarray([g.time for g in self.snapshots])

    def final(self) -> GridFunction:
        return self.snapshots[-1]


# ---------------------------------------------------------------------------
# local stepper: anisotropic diffusion-threshold on a level ladder
# ---------------------------------------------------------------------------

_local_cache: dict = {}


def _mobility_table(kernel, n_angles: int = 64):
    """Mobility g(v) multiplying the tangential second derivative.

    g(v) is the trace of the anisotropy matrix for the normal direction
    orthogonal to v; constant for radial kernels.
    """
    budget = quadrature.QuadratureBudget(rel_tol=1e-8)
    if kernel.is_radial:
        e = np.zeros(kernel.dimension)
        e[-1] = 1.0
        g = curvature.anisotropy_matrix(kernel, e, budget).trace
        return None, g
    thetas = np.arange(n_angles) * (math.pi / n_angles)
    vals = np.empty(n_angles)
    for j, th in enumerate(thetas):
        v = np.array([math.cos(th), math.sin(th)])
        e = np.array([-v[1], v[0]])
        vals[j] = curvature.anisotropy_matrix(kernel, e, budget).trace
    return vals, float(vals.max())


def _local_workspace(kernel, h: float, dt: float):
    key = ("local", kernel.cache_token, round(h, 15), round(dt, 18))
    ws = _local_cache.get(key)
    if ws is not None:
        return ws
    table, g_max = _mobility_table(kernel)
    sigma_max = math.sqrt(2.0 * g_max * dt) / h
    if not (1.8 <= sigma_max <= 14.0):
        raise CFLError(
            f"time step outside the scheme's consistency window: smoothing "
            f"width {sigma_max:.2f} cells (valid range 1.8 .. 14)")
    if table is None:
        ws = {"separable": True, "sigma": sigma_max, "g_max": g_max}
    else:
        n = int(math.ceil(4.0 * sigma_max))
        offs = np.arange(-n, n + 1)
        OX, OY = np.meshgrid(offs, offs, indexing="ij")
        ang = np.mod(np.arctan2(OY, OX), math.pi)
        n_angles = table.size
        idx = ang / (math.pi / n_angles)
        lo = np.floor(idx).astype(int) % n_angles
        frac = idx - np.floor(idx)
        g_dir = table[lo] * (1 - frac) + table[(lo + 1) % n_angles] * frac
        sig2 = 2.0 * g_dir * dt / h ** 2
        W = np.exp(-(OX ** 2 + OY ** 2) / (2.0 * np.maximum(sig2, 1e-300)))
        W[n, n] = 1.0
        ws = {"separable": False, "W": W / W.sum(), "pad": n, "g_max": g_max}
    _local_cache[key] = ws
    return ws


def _ladder(grid: GridFunction, cfg_range, n_levels: int):
    lo = grid.c_out
    hi = float(grid.values.max()) if cfg_range is None else cfg_range[1]
    if cfg_range is not None:
        lo = cfg_range[0]
    if hi <= lo:
        return None
    dm = (hi - lo) / n_levels
    return lo + (np.arange(n_levels) + 0.5) * dm


def _smooth_indicator(ind: np.ndarray, outside: float, ws) -> np.ndarray:
    if ws["separable"]:
        return gaussian_filter(ind, ws["sigma"], mode="constant", cval=outside)
    pad = ws["pad"]
    ext = np.pad(ind, pad, mode="constant", constant_values=outside)
    from scipy.signal import fftconvolve
    out = fftconvolve(ext, ws["W"], mode="same")
    return out[pad:-pad, pad:-pad]


def step_local(grid: GridFunction, kernel, dt: float,
               n_levels: int = 48, value_range: Optional[tuple] = None,
               ramp_cells: float = 1.0) -> GridFunction:
    """One monotone step of the local anisotropic flow.

    The value ladder is anchored at c_out and the data's top value (or the
    explicit value_range, which comparison runs must share).  Superlevel
    occupancies use a one-cell value ramp instead of hard indicators; that
    keeps monotonicity and suppresses the lattice dither of sampled sets.
    """
    ws = _local_workspace(kernel, grid.h, dt)
    levels = _ladder(grid, value_range, n_levels)
    if levels is None:
        return replace(grid, time=grid.time + dt)
    dm = levels[1] - levels[0] if levels.size > 1 else 0.0
    u = grid.values
    n_lev = levels.size
    w_f = ramp_cells * grid.h
    C = np.empty((n_lev,) + u.shape)
    for k2, m in enumerate(levels):
        outside = float(np.clip((grid.c_out - m) / w_f + 0.5, 0.0, 1.0))
        field = np.clip((u - m) / w_f + 0.5, 0.0, 1.0)
        C[k2] = _smooth_indicator(field, outside, ws)
    above = C >= 0.5
    P = above.sum(axis=0)
    kstar = np.clip(P - 1, 0, n_lev - 1)
    C_lo = np.take_along_axis(C, kstar[None], axis=0)[0]
    C_hi = np.where(kstar + 1 <= n_lev - 1,
                    np.take_along_axis(C, np.minimum(kstar + 1, n_lev - 1)[None], axis=0)[0],
                    0.0)
    theta = np.clip((C_lo - 0.5) / np.maximum(C_lo - C_hi, 1e-300), 0.0, 1.0)
    out = levels[kstar] + theta * dm
    # end intervals: interpolate the occupancy between its deep-plateau
    # baseline (the smoothed constant ramp value, reproduced exactly) and
    # the one-half crossing, so the skirt between c_out and the first
    # level, and between the last level and the top, stays continuous
    bottom = levels[0] - 0.5 * dm
    top = levels[-1] + 0.5 * dm
    base_lo = float(np.clip(0.5 - 0.5 * dm / w_f, 0.0, 1.0))
    base_hi = float(np.clip(0.5 + 0.5 * dm / w_f, 0.0, 1.0))
    slope_lo = 0.5 * dm / max(0.5 - base_lo, 1e-300)
    slope_hi = 0.5 * dm / max(base_hi - 0.5, 1e-300)
    skirt_lo = bottom + slope_lo * np.clip(C[0] - base_lo, 0.0, 0.5 - base_lo)
    skirt_hi = top - slope_hi * np.clip(base_hi - C[-1], 0.0, base_hi - 0.5)
    out = np.where(P == 0, skirt_lo, out)
    out = np.where(P == n_lev, skirt_hi, out)
    return GridFunction(out, grid.half_width, grid.c_out, grid.time + dt)


# ---------------------------------------------------------------------------
# nonlocal stepper
# ---------------------------------------------------------------------------

_nonlocal_cache: dict = {}


def _cell_mass_table(kernel, eps: float, n_cells: int, h: float) -> np.ndarray:
    """Exact kernel masses of every grid-offset cell, center cell excised."""
    zoomed = kernels.rescale(kernel, eps)
    N = n_cells
    offs = np.arange(-N, N + 1) * h
    OX, OY = np.meshgrid(offs, offs, indexing="ij")
    RR = np.hypot(OX, OY)
    pts = np.stack([OX.ravel(), OY.ravel()], axis=1)
    table = zoomed.evaluate_at(pts).reshape(2 * N + 1, 2 * N + 1) * h * h
    sub = 8
    so = (np.arange(sub) + 0.5) / sub - 0.5
    SX, SY = np.meshgrid(so * h, so * h, indexing="ij")
    near = (RR <= max(8.0 * eps, 4.0 * h)) & (RR > 0)
    for i, j in zip(*np.nonzero(near)):
        pp = np.stack([(offs[i] + SX).ravel(), (offs[j] + SY).ravel()], axis=1)
        table[i, j] = zoomed.evaluate_at(pp).mean() * h * h
    table[N, N] = 0.0
    return table


def _nonlocal_workspace(kernel, eps: float, grid: GridFunction):
    key = ("nl", kernel.cache_token, round(eps, 15), grid.n_cells,
           round(grid.half_width, 12))
    ws = _nonlocal_cache.get(key)
    if ws is not None:
        return ws
    if not kernel.is_radial and kernel.tail_mass_closed_form is None:
        raise kernels.UnsupportedKernelError(
            "the solver's exterior closure needs a radial profile or a "
            "closed-form tail mass")
    N = grid.n_cells
    h = grid.h
    L = grid.half_width
    table = _cell_mass_table(kernel, eps, N, h)
    sat = np.zeros((2 * N + 2, 2 * N + 2))
    sat[1:, 1:] = np.cumsum(np.cumsum(table, axis=0), axis=1)
    ii, jj = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
    r0 = (N - ii).ravel()
    c0 = (N - jj).ravel()
    S_in = (sat[r0 + N + 1, c0 + N + 1] - sat[r0, c0 + N + 1]
            - sat[r0 + N + 1, c0] + sat[r0, c0]).reshape(N + 1, N + 1)

    xs = np.linspace(-L, L, N + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    n_rays = 128
    th = (np.arange(n_rays) + 0.5) * (2.0 * math.pi / n_rays)
    ux, uy = np.cos(th), np.sin(th)
    Lb = L + 0.5 * h
    with np.errstate(divide="ignore"):
        tx = np.where(ux > 0, (Lb - X.ravel()[:, None]) / ux[None, :],
                      np.where(ux < 0, (-Lb - X.ravel()[:, None]) / ux[None, :], np.inf))
        ty = np.where(uy > 0, (Lb - Y.ravel()[:, None]) / uy[None, :],
                      np.where(uy < 0, (-Lb - Y.ravel()[:, None]) / uy[None, :], np.inf))
    rho_exit = np.maximum(np.minimum(tx, ty), 0.25 * h)
    if kernel.tail_mass_closed_form is not None:
        zoom_tail = kernels.rescale(kernel, eps).tail_mass_closed_form
        M_out = zoom_tail(rho_exit).mean(axis=1).reshape(N + 1, N + 1)
    else:
        uniq, inv = np.unique(np.round(rho_exit / eps, 10), return_inverse=True)
        vals = np.array([kernels.tail_mass(kernel, float(r)) for r in uniq])
        M_out = vals[inv].reshape(rho_exit.shape).mean(axis=1).reshape(N + 1, N + 1)
    ws = {"table": table, "S_in": S_in, "M_out": M_out, "N": N, "h": h}
    _nonlocal_cache[key] = ws
    return ws


def nonlocal_speed(grid: GridFunction, kernel, eps: float,
                   chi_width_cells: float = 1.0,
                   active: Optional[np.ndarray] = None) -> np.ndarray:
    """Discrete curvature of the superlevel set through each active node.

    Membership is the one-cell value ramp and the exterior is closed with
    the analytic tail mass against c_out.  Returns the speed field (zero on
    inactive nodes).
    """
    ws = _nonlocal_workspace(kernel, eps, grid)
    N, h = ws["N"], ws["h"]
    u = grid.values
    uf = u.ravel()
    w_v = chi_width_cells * h
    if active is None:
        active = np.ones_like(u, dtype=bool)
    ii, jj = np.nonzero(active)
    H = np.zeros_like(u)
    windows = np.lib.stride_tricks.sliding_window_view(ws["table"], (N + 1, N + 1))
    chunk = 192
    for a in range(0, ii.size, chunk):
        I = ii[a:a + chunk]
        J = jj[a:a + chunk]
        KW = windows[N - I, N - J].reshape(I.size, -1)
        frac = np.clip((uf[None, :] - u[I, J][:, None]) / w_v + 0.5, 0.0, 1.0)
        T = (KW * frac).sum(axis=1)
        chi_out = np.clip(2.0 * (grid.c_out - u[I, J]) / w_v, -1.0, 1.0)
        H[I, J] = -(2.0 * T - ws["S_in"][I, J] + chi_out * ws["M_out"][I, J]) / eps
    return H


def _godunov_gradients(u: np.ndarray, h: float):
    dxm = np.zeros_like(u)
    dxp = np.zeros_like(u)
    dym = np.zeros_like(u)
    dyp = np.zeros_like(u)
    dxm[1:, :] = (u[1:, :] - u[:-1, :]) / h
    dxp[:-1, :] = (u[1:, :] - u[:-1, :]) / h
    dym[:, 1:] = (u[:, 1:] - u[:, :-1]) / h
    dyp[:, :-1] = (u[:, 1:] - u[:, :-1]) / h
    gp = np.sqrt(np.maximum(dxm, 0.0) ** 2 + np.minimum(dxp, 0.0) ** 2
                 + np.maximum(dym, 0.0) ** 2 + np.minimum(dyp, 0.0) ** 2)
    gm = np.sqrt(np.minimum(dxm, 0.0) ** 2 + np.maximum(dxp, 0.0) ** 2
                 + np.minimum(dym, 0.0) ** 2 + np.maximum(dyp, 0.0) ** 2)
    return gp, gm


def nonlocal_cfl_bound(grid: GridFunction, eps: float, sup_speed: float) -> float:
    """Largest admissible dt for the upwind step at the given speed bound."""
    return min(eps, grid.h / (2.0 * math.sqrt(2.0))) / (sup_speed + 1.0)


def step_nonlocal(grid: GridFunction, kernel, eps: float, dt: float,
                  chi_width_cells: float = 1.0) -> GridFunction:
    """One monotone upwind step of the rescaled nonlocal flow."""
    if eps <= 0.0:
        raise ValueError("eps must be positive for the nonlocal step")
    u = grid.values
    gp, gm = _godunov_gradients(u, grid.h)
    active = (gp > 0.0) | (gm > 0.0)
    V = nonlocal_speed(grid, kernel, eps, chi_width_cells, active)
    sup = float(np.abs(V).max())
    if dt > nonlocal_cfl_bound(grid, eps, sup) * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:g} above the monotone bound "
                       f"{nonlocal_cfl_bound(grid, eps, sup):g}")
    flux = np.maximum(V, 0.0) * gp + np.minimum(V, 0.0) * gm
    out = u - dt * flux
    return GridFunction(out, grid.half_width, grid.c_out, grid.time + dt)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def evolve(u0: GridFunction, cfg: FlowConfig) -> Trajectory:
    """Advance to the final time, emitting snapshots on the configured cadence."""
    u0.validate()
    snapshots = [u0]
    lips = [(0.0, lipschitz_seminorm(u0))]
    speeds = []
    grid = u0
    n_snap = max(1, int(round(cfg.final_time / cfg.snapshot_dt)))
    snap_times = [cfg.snapshot_dt * (k + 1) for k in range(n_snap)]
    snap_times[-1] = cfg.final_time

    if cfg.eps == 0.0:
        table, g_max = _mobility_table(cfg.kernel)
        dt_target = (cfg.sigma_cells * u0.h) ** 2 / (2.0 * g_max)
        vr = cfg.value_range or (u0.c_out, float(u0.values.max()))
        t_prev = 0.0
        for t_snap in snap_times:
            span = t_snap - t_prev
            n_sub = max(1, int(math.ceil(span / dt_target - 1e-9)))
            dt = span / n_sub
            for _ in range(n_sub):
                grid = step_local(grid, cfg.kernel, dt,
                                  n_levels=cfg.n_levels, value_range=vr,
                                  ramp_cells=cfg.ramp_cells)
                lips.append((grid.time, lipschitz_seminorm(grid)))
            snapshots.append(grid)
            t_prev = t_snap
    else:
        if cfg.speed_bound is not None:
            sup = float(cfg.speed_bound)
        else:
            sup = float(np.abs(nonlocal_speed(
                grid, cfg.kernel, cfg.eps, cfg.chi_width_cells,
                (_godunov_gradients(grid.values, grid.h)[0] > 0)
                | (_godunov_gradients(grid.values, grid.h)[1] > 0))).max())
        t = 0.0
        for t_snap in snap_times:
            while t < t_snap - 1e-14:
                dt = cfg.cfl * nonlocal_cfl_bound(grid, cfg.eps, sup)
                dt = min(dt, t_snap - t)
                grid = step_nonlocal(grid, cfg.kernel, cfg.eps, dt,
                                     cfg.chi_width_cells)
                t = grid.time
                lips.append((t, lipschitz_seminorm(grid)))
                if cfg.speed_bound is None:
                    gp, gm = _godunov_gradients(grid.values, grid.h)
                    V = nonlocal_speed(grid, cfg.kernel, cfg.eps,
                                       cfg.chi_width_cells, (gp > 0) | (gm > 0))
                    sup = float(np.abs(V).max())
                    speeds.append((t, sup))
                else:
                    speeds.append((t, sup))
            snapshots.append(grid)

    return Trajectory(snapshots, np.asarray(lips),
                      np.asarray(speeds) if speeds else np.zeros((0, 2)))


@dataclass(frozen=True)
class AprioriReport:
    lipschitz_ok: bool
    hoelder_ok: bool
    hoelder_constant: float
    max_lip_ratio: float


def check_apriori(traj: Trajectory, u0: GridFunction, tol: float = 0.01) -> AprioriReport:
    """Equi-Lipschitz and time-Hoelder diagnostics of a trajectory.

    The Lipschitz seminorm must never grow beyond its initial value (up to
    tol); the Hoelder constant c is fitted so that the bound
    |u(t) - u(s)| <= Lip(u0) sqrt(c |t - s|) holds with equality somewhere.
    """
    lip0 = max(lipschitz_seminorm(u0), 1e-300)
    lip_max = float(traj.lip_history[:, 1].max())
    lipschitz_ok = lip_max <= lip0 * (1.0 + tol)
    c_fit = 0.0
    snaps = traj.snapshots
    for a in range(len(snaps)):
        for b in range(a + 1, len(snaps)):
            gap = abs(snaps[b].time - snaps[a].time)
            if gap <= 0.0:
                continue
            dv = float(np.abs(snaps[b].values - snaps[a].values).max())
            c_fit = max(c_fit, (dv / lip0) ** 2 / gap)
    return AprioriReport(
        lipschitz_ok=bool(lipschitz_ok),
        hoelder_ok=bool(np.isfinite(c_fit)),
        hoelder_constant=float(c_fit),
        max_lip_ratio=float(lip_max / lip0),
    )


# ---------------------------------------------------------------------------
# front extraction and serialization
# ---------------------------------------------------------------------------

def marching_squares(grid: GridFunction, level: float = 0.0) -> np.ndarray:
    """Zero-level polyline segments by edge-linear interpolation, (M, 2, 2)."""
    v = grid.values - level
    xs = grid.axis()
    segs = []
    n = grid.n_cells

    def cross(pa, pb, fa, fb):
        t = fa / (fa - fb)
        return pa + t * (pb - pa)

    for i in range(n):
        for j in range(n):
            f = [v[i, j], v[i + 1, j], v[i + 1, j + 1], v[i, j + 1]]
            corners = [np.array([xs[i], xs[j]]), np.array([xs[i + 1], xs[j]]),
                       np.array([xs[i + 1], xs[j + 1]]), np.array([xs[i], xs[j + 1]])]
            case = sum(1 << k for k in range(4) if f[k] >= 0.0)
            if case in (0, 15):
                continue
            pts = []
            for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
                if (f[a] >= 0.0) != (f[b] >= 0.0):
                    pts.append(cross(corners[a], corners[b], f[a], f[b]))
            if len(pts) == 2:
                segs.append(np.stack(pts))
            elif len(pts) == 4:
                # saddle: connect by the center-average decider
                center = 0.25 * sum(f)
                if (center >= 0.0) == (f[0] >= 0.0):
                    segs.append(np.stack([pts[0], pts[3]]))
                    segs.append(np.stack([pts[1], pts[2]]))
                else:
                    segs.append(np.stack([pts[0], pts[1]]))
                    segs.append(np.stack([pts[2], pts[3]]))
    return np.asarray(segs) if segs else np.zeros((0, 2, 2))


def front_mean_radius(grid: GridFunction, center=(0.0, 0.0), level: float = 0.0) -> float:
    segs = marching_squares(grid, level)
    if segs.shape[0] == 0:
        return math.nan
    pts = segs.reshape(-1, 2) - np.asarray(center)[None, :]
    return float(np.hypot(pts[:, 0], pts[:, 1]).mean())


def grid_to_csv(grid: GridFunction, path, header_lines=()):
    xs = grid.axis()
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("x,y,u\n")
        for i, x in enumerate(xs):
            for j, y in enumerate(xs):
                fh.write(f"{x:.17g},{y:.17g},{grid.values[i, j]:.17g}\n")


def grid_to_binary(grid: GridFunction, path):
    """Header: d, h, L, c_out, t; payload row-major float64, little endian."""
    import struct
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i4d", 2, grid.h, grid.half_width,
                             grid.c_out, grid.time))
        fh.write(grid.values.astype("<f8").tobytes())


def grid_from_binary(path) -> GridFunction:
    import struct
    with open(path, "rb") as fh:
        d, h, L, c_out, t = struct.unpack("<i4d", fh.read(4 + 32))
        if d != 2:
            raise ValueError("only d = 2 grids are serialized")
        n = int(round(2.0 * L / h)) + 1
        payload = np.frombuffer(fh.read(n * n * 8), dtype="<f8").reshape(n, n)
    return GridFunction(payload.copy(), L, c_out, t)


def polylines_to_csv(segments: np.ndarray, path, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("segment,x0,y0,x1,y1\n")
        for k, seg in enumerate(segments):
            fh.write(f"{k},{seg[0, 0]:.17g},{seg[0, 1]:.17g},"
                     f"{seg[1, 0]:.17g},{seg[1, 1]:.17g}\n")
