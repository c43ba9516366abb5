"""Interaction kernels, their rescalings, and hypothesis certificates.

A kernel is an even, nonnegative weight K on R^d minus the origin.  Two
builtin families are provided:

* ``fractional_two_exponent``: K(y) = mu |y|^-(d+sigma) on 0 < |y| <= 1 and
  K(y) = m |y|^-(d+1+s) on |y| > 1, with s, sigma in (0,1).
* ``fractional_exp_tail``: K(y) = mu exp(-m |y|) |y|^-(d+s).

Every kernel carries the certificate pair (s, m) for the fractional
domination bound K(y) <= m |y|^-(d+1+s) on |y| >= 1, near-origin metadata
used by the graded quadratures, and, when available, a closed-form tail
mass r -> integral of K over the complement of B(0, r).

``validate_admissibility`` estimates each structural hypothesis numerically
(vanishing origin singularity, paraboloid-region integrability and its
small/large scale quotients, fractional domination) and returns a report
with per-hypothesis verdicts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import quadrature

__all__ = [
    "Kernel",
    "NearField",
    "AdmissibilityConfig",
    "AdmissibilityReport",
    "HypothesisVerdict",
    "KernelParameterError",
    "UnsupportedKernelError",
    "make_builtin",
    "make_adversarial",
    "rescale",
    "rotated",
    "tail_mass",
    "validate_admissibility",
    "sphere_area",
    "report_to_text",
    "report_to_csv_rows",
]

_token_counter = itertools.count()


def sphere_area(dimension: int) -> float:
    """Surface measure of the unit sphere in R^dimension."""
    return 2.0 * math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0)


class KernelParameterError(ValueError):
    pass


class UnsupportedKernelError(ValueError):
    pass


@dataclass(frozen=True)
class NearField:
    """Behaviour on the unit ball: K ~ constant * |y|^-(d + exponent)."""

    kind: str          # "power" or "exp_power"
    exponent: float    # in (0, 1)
    constant: float


@dataclass(frozen=True)
class Kernel:
    """Even interaction kernel with decay metadata.

    ``evaluate_at`` and ``gradient_at`` take arrays of shape (n, d) and
    return shape (n,), resp. (n, d).  ``radial_profile``, when present,
    maps radii to K0 values and certifies the kernel is radial.
    ``tail_power_exact = (coef, p)`` means K(y) equals coef * |y|^-p
    exactly beyond the last radial breakpoint.
    """

    dimension: int
    evaluate_at: Callable[[np.ndarray], np.ndarray]
    gradient_at: Callable[[np.ndarray], np.ndarray]
    s: float
    m: float
    near_field: NearField
    tail_mass_closed_form: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radial_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radial_breakpoints: tuple = ()
    tail_power_exact: Optional[tuple] = None
    family: str = "custom"
    label: str = "custom"
    cache_token: int = field(default_factory=lambda: next(_token_counter), compare=False)

    def __post_init__(self):
        if self.dimension < 2:
            raise KernelParameterError("kernel dimension must be >= 2")
        if not (0.0 < self.s < 1.0):
            raise KernelParameterError(f"tail exponent s={self.s} outside (0, 1)")
        if self.m <= 0.0:
            raise KernelParameterError(f"tail constant m={self.m} must be positive")

    @property
    def is_radial(self) -> bool:
        return self.radial_profile is not None

    def domination_envelope(self, r: np.ndarray) -> np.ndarray:
        """Upper bound m * r^-(d+1+s), valid for r >= 1."""
        r = np.asarray(r, dtype=float)
        return self.m * r ** (-(self.dimension + 1.0 + self.s))


def _as_points(points: np.ndarray, dimension: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, dimension)
    return pts


def make_builtin(family: str, dimension: int, s: float = 0.5, m: float = 1.0,
                 sigma: Optional[float] = None, mu: Optional[float] = None) -> Kernel:
    """Construct one of the two builtin families.

    For ``fractional_two_exponent`` the default mu = m makes the kernel
    continuous across |y| = 1, which keeps the graded quadratures free of
    spurious jump terms.
    """
    if dimension < 2:
        raise KernelParameterError("dimension must be >= 2")
    if not (0.0 < s < 1.0):
        raise KernelParameterError(f"s={s} outside (0, 1)")
    if m <= 0.0:
        raise KernelParameterError(f"m={m} must be positive")
    d = int(dimension)

    if family == "fractional_two_exponent":
        sig = s if sigma is None else float(sigma)
        amp = m if mu is None else float(mu)
        if not (0.0 < sig < 1.0):
            raise KernelParameterError(f"sigma={sig} outside (0, 1)")
        if amp <= 0.0:
            raise KernelParameterError(f"mu={amp} must be positive")
        p_near = d + sig
        p_far = d + 1.0 + s

        def profile(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return np.where(r <= 1.0, amp * r ** (-p_near), m * r ** (-p_far))

        def deriv(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return np.where(r <= 1.0,
                                -amp * p_near * r ** (-p_near - 1.0),
                                -m * p_far * r ** (-p_far - 1.0))

        def evaluate(points):
            pts = _as_points(points, d)
            return profile(np.linalg.norm(pts, axis=-1))

        def gradient(points):
            pts = _as_points(points, d)
            r = np.linalg.norm(pts, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = deriv(r) / r
            return pts * scale[..., None]

        area = sphere_area(d)
        tail_at_one = m * area / (1.0 + s)

        def tail_closed(r):
            r = np.asarray(r, dtype=float)
            far = m * area / (1.0 + s) * np.maximum(r, 1.0) ** (-(1.0 + s))
            rn = np.minimum(r, 1.0)
            near = amp * area * (rn ** (-sig) - 1.0) / sig
            return np.where(r >= 1.0, far, near + tail_at_one)

        return Kernel(
            dimension=d,
            evaluate_at=evaluate,
            gradient_at=gradient,
            s=s,
            m=m,
            near_field=NearField("power", sig, amp),
            tail_mass_closed_form=tail_closed,
            radial_profile=profile,
            radial_breakpoints=(1.0,),
            tail_power_exact=(m, p_far),
            family=family,
            label=f"frac2exp_d{d}_s{s:g}_sig{sig:g}_m{m:g}_mu{amp:g}",
        )

    if family == "fractional_exp_tail":
        amp = m if mu is None else float(mu)
        if amp <= 0.0:
            raise KernelParameterError(f"mu={amp} must be positive")
        p = d + s

        def profile(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return amp * np.exp(-m * r) * r ** (-p)

        def deriv(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return -profile(r) * (m + p / r)

        def evaluate(points):
            pts = _as_points(points, d)
            return profile(np.linalg.norm(pts, axis=-1))

        def gradient(points):
            pts = _as_points(points, d)
            r = np.linalg.norm(pts, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = deriv(r) / r
            return pts * scale[..., None]

        # sup_{r>=1} r exp(-m r) certifies K <= m_dom |y|^-(d+1+s) off the unit ball
        sup_factor = math.exp(-1.0) / m if m <= 1.0 else math.exp(-m)
        m_dom = amp * sup_factor
        return Kernel(
            dimension=d,
            evaluate_at=evaluate,
            gradient_at=gradient,
            s=s,
            m=m_dom,
            near_field=NearField("exp_power", s, amp),
            tail_mass_closed_form=None,
            radial_profile=profile,
            radial_breakpoints=(),
            tail_power_exact=None,
            family=family,
            label=f"fracexp_d{d}_s{s:g}_m{m:g}_mu{amp:g}",
        )

    raise KernelParameterError(f"unknown builtin family {family!r}")


def make_adversarial(dimension: int = 2, s: float = 0.5, m: float = 1.0,
                     sigma: float = 0.5, mu: float = 1.0) -> Kernel:
    """Kernel with tail |y|^-(d+1), which violates fractional domination.

    The declared certificate (s, m) is the claim that the admissibility
    checker is expected to refute.
    """
    d = int(dimension)
    p_near = d + sigma
    p_far = d + 1.0

    def profile(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r <= 1.0, mu * r ** (-p_near), r ** (-p_far))

    def deriv(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r <= 1.0,
                            -mu * p_near * r ** (-p_near - 1.0),
                            -p_far * r ** (-p_far - 1.0))

    def evaluate(points):
        pts = _as_points(points, d)
        return profile(np.linalg.norm(pts, axis=-1))

    def gradient(points):
        pts = _as_points(points, d)
        r = np.linalg.norm(pts, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = deriv(r) / r
        return pts * scale[..., None]

    return Kernel(
        dimension=d,
        evaluate_at=evaluate,
        gradient_at=gradient,
        s=s,
        m=m,
        near_field=NearField("power", sigma, mu),
        radial_profile=profile,
        radial_breakpoints=(1.0,),
        tail_power_exact=(1.0, p_far),
        family="adversarial_power_tail",
        label=f"adversarial_d{d}",
    )


def rescale(kernel: Kernel, eps: float) -> Kernel:
    """Mass-preserving zoom K_eps(y) = eps^-d K(y / eps)."""
    if not eps > 0.0:
        raise KernelParameterError(f"rescaling parameter eps={eps} must be positive")
    if eps == 1.0:
        return kernel
    d = kernel.dimension
    scale = eps ** (-d)
    base_eval = kernel.evaluate_at
    base_grad = kernel.gradient_at

    def evaluate(points):
        return scale * base_eval(np.asarray(points, dtype=float) / eps)

    def gradient(points):
        return (scale / eps) * base_grad(np.asarray(points, dtype=float) / eps)

    tail_closed = None
    if kernel.tail_mass_closed_form is not None:
        base_tail = kernel.tail_mass_closed_form

        def tail_closed(r):
            return base_tail(np.asarray(r, dtype=float) / eps)

    radial = None
    if kernel.radial_profile is not None:
        base_prof = kernel.radial_profile

        def radial(r):
            return scale * base_prof(np.asarray(r, dtype=float) / eps)

    if eps <= 1.0:
        m_eff = kernel.m * eps ** (1.0 + kernel.s)
    else:
        # crude but valid envelope once the near branch pokes past |y| = 1
        m_eff = max(kernel.m, kernel.near_field.constant) * eps ** (1.0 + max(kernel.s, kernel.near_field.exponent))

    tail_exact = None
    if kernel.tail_power_exact is not None:
        coef, p = kernel.tail_power_exact
        tail_exact = (coef * eps ** (p - d), p)

    return Kernel(
        dimension=d,
        evaluate_at=evaluate,
        gradient_at=gradient,
        s=kernel.s,
        m=m_eff,
        near_field=NearField(kernel.near_field.kind, kernel.near_field.exponent,
                             kernel.near_field.constant * eps ** kernel.near_field.exponent),
        tail_mass_closed_form=tail_closed,
        radial_profile=radial,
        radial_breakpoints=tuple(eps * b for b in kernel.radial_breakpoints),
        tail_power_exact=tail_exact,
        family=kernel.family,
        label=f"{kernel.label}_eps{eps:g}",
    )


def rotated(kernel: Kernel, rotation: np.ndarray) -> Kernel:
    """The transported kernel K o R^t used by the change-of-variable identity."""
    R = np.asarray(rotation, dtype=float)
    if R.shape != (kernel.dimension, kernel.dimension):
        raise KernelParameterError("rotation matrix shape mismatch")
    if kernel.is_radial:
        return replace(kernel, label=kernel.label + "_rot", cache_token=next(_token_counter))
    base_eval = kernel.evaluate_at
    base_grad = kernel.gradient_at

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        return base_eval(pts @ R)

    def gradient(points):
        pts = np.asarray(points, dtype=float)
        return base_grad(pts @ R) @ R.T

    return replace(kernel, evaluate_at=evaluate, gradient_at=gradient,
                   radial_profile=None, label=kernel.label + "_rot",
                   cache_token=next(_token_counter))


def tail_mass(kernel: Kernel, r: float, rel_tol: float = 1e-9) -> float:
    """Mass of K outside the ball of radius r > 0.

    Uses the closed form when available; otherwise graded radial shells with
    the exact power tail or the fractional domination envelope closing the
    integral beyond a cutoff.
    """
    if not r > 0.0:
        raise KernelParameterError(f"tail radius r={r} must be positive")
    if kernel.tail_mass_closed_form is not None:
        return float(kernel.tail_mass_closed_form(np.asarray(r, dtype=float)))
    d = kernel.dimension
    area = sphere_area(d)

    if kernel.is_radial:
        prof = kernel.radial_profile

        def shell_density(rad):
            return area * rad ** (d - 1) * prof(rad)
    else:
        n_dir = 128
        dirs = quadrature.unit_directions(d, n_dir)
        ev = kernel.evaluate_at

        def shell_density(rad):
            pts = rad[:, None, None] * dirs[None, :, :]
            vals = ev(pts.reshape(-1, d)).reshape(rad.size, n_dir)
            return area * rad ** (d - 1) * vals.mean(axis=1)

    # exact power tail lets us stop at the last breakpoint
    if kernel.tail_power_exact is not None:
        coef, p = kernel.tail_power_exact
        start = max([r] + [b for b in kernel.radial_breakpoints])
        if p <= d:
            raise UnsupportedKernelError("tail power does not integrate")
        exact_tail = coef * area * start ** (d - p) / (p - d)
        if start <= r * (1.0 + 1e-15):
            return float(exact_tail)
        total = quadrature.integrate_radial_shells(shell_density, r, start, rel_tol)
        return float(total + exact_tail)

    # envelope-closed adaptive walk
    total = 0.0
    a = r
    width = max(r, 1.0)
    for _ in range(400):
        b = a + width
        seg = quadrature.integrate_radial_shells(shell_density, a, b, rel_tol)
        total += seg
        a = b
        width *= 2.0
        envelope = kernel.m * area * a ** (-(1.0 + kernel.s)) / (1.0 + kernel.s)
        if envelope <= rel_tol * max(abs(total), 1e-300) or seg == 0.0:
            break
    return float(total)


# ---------------------------------------------------------------------------
# admissibility certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityConfig:
    small_lambdas: tuple = tuple(2.0 ** (-k) for k in range(1, 11))
    large_lambdas: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)
    r_ladder: tuple = tuple(2.0 ** (-k) for k in range(0, 31, 2))
    n_directions: int = 6
    hypothesis_tol: float = 1e-3
    rel_tol: float = 1e-6
    domination_radii: tuple = tuple(np.logspace(0.0, 3.0, 25))
    evenness_samples: int = 10_000
    seed: int = 7


@dataclass(frozen=True)
class HypothesisVerdict:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class AdmissibilityReport:
    kernel_label: str
    singularity_limit: np.ndarray        # rows (r, r * tail_mass(r))
    a_lambda_table: np.ndarray           # rows (lambda, direction index, mass)
    a0_estimate: float
    b0_estimate: float
    large_lambda_decay: np.ndarray       # rows (lambda, max_e quotient)
    verdicts: dict
    directions: np.ndarray
    hypothesis_tol: float

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())


def _extrapolate_quotients(lams: np.ndarray, quotients: np.ndarray):
    """Estimate the small-lambda limit from a decreasing ladder.

    Returns (estimate, converged).  One geometric Richardson step based on
    the observed difference ratio; a ladder whose differences do not shrink
    is flagged as non-convergent.
    """
    q = np.asarray(quotients, dtype=float)
    if not np.all(np.isfinite(q)):
        return float(np.nanmax(q)), False
    diffs = np.abs(np.diff(q))
    if diffs.size < 2 or diffs[-1] == 0.0:
        return float(q[-1]), True
    ratio = diffs[-1] / diffs[-2] if diffs[-2] > 0 else 1.0
    if ratio < 0.9:
        est = q[-1] + np.sign(q[-1] - q[-2]) * diffs[-1] * ratio / (1.0 - ratio)
        return float(est), True
    return float(q.max()), False


def validate_admissibility(kernel: Kernel, cfg: Optional[AdmissibilityConfig] = None) -> AdmissibilityReport:
    """Numerically certify the standing kernel hypotheses.

    Produces estimates for each hypothesis and a pass/fail verdict at the
    configured tolerance.  Quadrature failures surface as a diagnostic
    failure naming the offending hypothesis.
    """
    cfg = cfg or AdmissibilityConfig()
    d = kernel.dimension
    budget = quadrature.QuadratureBudget(rel_tol=cfg.rel_tol)
    dirs = quadrature.unit_directions(d, cfg.n_directions, stagger=0.37)

    verdicts = {}

    # evenness on a random sample
    rng = np.random.default_rng(cfg.seed)
    pts = rng.normal(size=(cfg.evenness_samples, d))
    pts *= (0.05 + 3.0 * rng.random(cfg.evenness_samples))[:, None] / np.linalg.norm(pts, axis=1)[:, None]
    even_gap = float(np.max(np.abs(kernel.evaluate_at(pts) - kernel.evaluate_at(-pts))))
    verdicts["evenness"] = HypothesisVerdict(
        "evenness", even_gap == 0.0, even_gap, "max |K(y) - K(-y)| over sample")

    # vanishing origin singularity: r * tail_mass(r) -> 0
    r_ladder = np.asarray(cfg.r_ladder, dtype=float)
    rt = np.array([r * tail_mass(kernel, r, rel_tol=cfg.rel_tol) for r in r_ladder])
    k_max = int(np.argmax(rt))
    decreasing = bool(np.all(np.diff(rt[k_max:]) <= 0.0))
    sing_ok = decreasing and rt[-1] <= cfg.hypothesis_tol
    verdicts["origin_singularity"] = HypothesisVerdict(
        "origin_singularity", sing_ok, float(rt[-1]),
        "r*tail_mass(r) must decrease below tolerance along the r-ladder")

    # paraboloid-region masses over both ladders and all directions
    def grad_weight(points):
        g = kernel.gradient_at(points)
        return np.linalg.norm(g, axis=-1) * np.linalg.norm(points, axis=-1)

    all_lams = list(cfg.small_lambdas) + list(cfg.large_lambdas)
    mass_rows = []
    masses = np.empty((len(all_lams), len(dirs)))
    grad_masses = np.empty((len(cfg.small_lambdas), len(dirs)))
    try:
        for i, lam in enumerate(all_lams):
            for j, e in enumerate(dirs):
                masses[i, j] = quadrature.paraboloid_mass(kernel, e, lam, budget)
                mass_rows.append((lam, j, masses[i, j]))
        for i, lam in enumerate(cfg.small_lambdas):
            for j, e in enumerate(dirs):
                grad_masses[i, j] = quadrature.paraboloid_mass(
                    kernel, e, lam, budget, integrand=grad_weight)
    except quadrature.BudgetExceededError as exc:
        raise quadrature.BudgetExceededError(
            f"paraboloid-region quadrature failed while certifying "
            f"integrability hypotheses: {exc}") from exc

    finite_ok = bool(np.all(np.isfinite(masses)) and np.all(np.isfinite(grad_masses)))
    verdicts["paraboloid_integrability"] = HypothesisVerdict(
        "paraboloid_integrability", finite_ok, float(np.max(masses)),
        "masses over paraboloid regions are finite for every lambda, e")

    small = np.asarray(cfg.small_lambdas, dtype=float)
    order = np.argsort(small)[::-1]  # decreasing lambda
    a0_vals, a0_ok = [], True
    b0_vals, b0_ok = [], True
    for j in range(len(dirs)):
        q = masses[: len(small), j][order] / small[order]
        est, conv = _extrapolate_quotients(small[order], q)
        a0_vals.append(est)
        a0_ok = a0_ok and conv
        qg = grad_masses[:, j][order] / small[order]
        est_g, conv_g = _extrapolate_quotients(small[order], qg)
        b0_vals.append(est_g)
        b0_ok = b0_ok and conv_g
    a0_estimate = float(np.max(a0_vals))
    b0_estimate = float(np.max(b0_vals))
    verdicts["small_lambda_kernel_quotient"] = HypothesisVerdict(
        "small_lambda_kernel_quotient", a0_ok and np.isfinite(a0_estimate), a0_estimate,
        "(1/lambda) * paraboloid mass of K converges as lambda -> 0")
    verdicts["small_lambda_gradient_quotient"] = HypothesisVerdict(
        "small_lambda_gradient_quotient", b0_ok and np.isfinite(b0_estimate), b0_estimate,
        "(1/lambda) * paraboloid mass of |grad K||y| converges as lambda -> 0")

    large = np.asarray(cfg.large_lambdas, dtype=float)
    large_rows = masses[len(small):, :]
    large_quot = large_rows.max(axis=1) / large
    k_top = int(np.argmax(large_quot))
    decay_ok = bool(np.all(np.diff(large_quot[k_top:]) < 0.0)) and large_quot[-1] < large_quot[0]
    verdicts["large_lambda_decay"] = HypothesisVerdict(
        "large_lambda_decay", decay_ok, float(large_quot[-1]),
        "(1/lambda) * paraboloid mass decays for growing lambda")

    # fractional domination on a sample of radii and directions
    radii = np.asarray(cfg.domination_radii, dtype=float)
    pts = radii[:, None, None] * dirs[None, :, :]
    vals = kernel.evaluate_at(pts.reshape(-1, d)).reshape(radii.size, len(dirs))
    ratio = vals * (radii[:, None] ** (d + 1.0 + kernel.s)) / kernel.m
    worst = float(np.max(ratio))
    verdicts["fractional_domination"] = HypothesisVerdict(
        "fractional_domination", worst <= 1.0 + cfg.hypothesis_tol, worst,
        "K(y) |y|^(d+1+s) <= m on sampled |y| >= 1")

    return AdmissibilityReport(
        kernel_label=kernel.label,
        singularity_limit=np.column_stack([r_ladder, rt]),
        a_lambda_table=np.asarray(mass_rows, dtype=float),
        a0_estimate=a0_estimate,
        b0_estimate=b0_estimate,
        large_lambda_decay=np.column_stack([large, large_quot]),
        verdicts=verdicts,
        directions=dirs,
        hypothesis_tol=cfg.hypothesis_tol,
    )


def report_to_text(report: AdmissibilityReport) -> str:
    lines = [
        f"kernel = {report.kernel_label}",
        f"overall = {'pass' if report.passed else 'fail'}",
        f"hypothesis_tol = {report.hypothesis_tol:.17g}",
        f"a0_estimate = {report.a0_estimate:.17g}",
        f"b0_estimate = {report.b0_estimate:.17g}",
    ]
    for name, v in report.verdicts.items():
        lines.append(f"check.{name} = {'pass' if v.passed else 'fail'}")
        lines.append(f"check.{name}.value = {v.value:.17g}")
    for r, val in report.singularity_limit:
        lines.append(f"singularity[{r:.17g}] = {val:.17g}")
    for lam, q in report.large_lambda_decay:
        lines.append(f"large_lambda[{lam:.17g}] = {q:.17g}")
    return "\n".join(lines) + "\n"


def report_to_csv_rows(report: AdmissibilityReport):
    """Rows (lambda, direction index, paraboloid mass) for CSV emission."""
    return [(float(lam), int(j), float(mass)) for lam, j, mass in report.a_lambda_table]
