"""Experiment harness and command line interface.

Four experiment kinds reproduce the two convergence statements at desk
scale and certify the kernel hypotheses and the a-priori estimates:

* ``validate``  - kernel admissibility report
* ``curvature`` - rescaled curvatures against the local limit on a shape,
                  with the explicit error budget along delta = q eps^gamma
* ``flow``      - nonlocal evolutions against the local evolution
* ``apriori``   - equi-Lipschitz / equi-Hoelder diagnostics across the
                  eps ladder

Configs are flat ``key = value`` sections, one section per experiment
kind.  Every CSV carries a header comment with the config hash and the
package version, and all reductions run in a fixed order, so identical
configs and seeds give byte-identical outputs.

Exit codes: 0 pass, 2 acceptance-threshold failure, 3 numeric-budget
failure, 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, curvature, geometry, kernels, levelset, quadrature

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "run_admissibility",
    "run_curvature_convergence",
    "run_flow_convergence",
    "run_apriori",
    "main",
]

EXIT_PASS = 0
EXIT_THRESHOLD = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    """Flat key = value sections introduced by [name] lines."""
    sections = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line or current is None:
            raise ConfigError(f"cannot parse config line: {raw!r}")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    return sections


def _floats(text: str):
    return tuple(float(tok) for tok in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    options: dict
    seed: int = 0

    def get(self, key, default=None):
        return self.options.get(key, default)

    def get_float(self, key, default):
        return float(self.options.get(key, default))

    def get_int(self, key, default):
        return int(self.options.get(key, default))

    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.options[k]}" for k in sorted(self.options))
        canon = f"[{self.kind}]\n{canon}\nseed={self.seed}"
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def header_lines(self):
        return [f"config_hash={self.config_hash()}",
                f"nlcflow_version={__version__}"]


def load_experiment(path, kind: str, seed: int = 0) -> ExperimentConfig:
    sections = parse_config(Path(path).read_text())
    if kind not in sections:
        raise ConfigError(f"config file has no [{kind}] section")
    return ExperimentConfig(kind=kind, options=sections[kind], seed=seed)


def _build_kernel(cfg: ExperimentConfig) -> kernels.Kernel:
    family = cfg.get("kernel", "fractional_two_exponent")
    d = cfg.get_int("d", 2)
    s = cfg.get_float("s", 0.5)
    m = cfg.get_float("m", 1.0)
    sigma = cfg.get_float("sigma", s)
    mu = cfg.get_float("mu", m)
    if family == "adversarial_power_tail":
        return kernels.make_adversarial(d, s=s, m=m, sigma=sigma, mu=mu)
    return kernels.make_builtin(family, d, s=s, m=m, sigma=sigma, mu=mu)


def _build_shape(cfg: ExperimentConfig):
    shape = cfg.get("shape", "circle")
    if shape in ("circle", "ball"):
        return geometry.ball(cfg.get_float("radius", 1.0))
    if shape in ("ellipse", "ellipsoid"):
        axes = _floats(cfg.get("semiaxes", "2 1"))
        return geometry.ellipsoid(axes)
    if shape == "halfspace":
        normal = np.asarray(_floats(cfg.get("normal", "0 1")))
        return geometry.halfspace(normal)
    raise ConfigError(f"unknown shape {shape!r}")


def _boundary_points(surface, count: int):
    if surface.label.startswith("ball"):
        R = surface.bounding_radius
        th = (np.arange(count) + 0.5) * (2.0 * math.pi / count)
        return np.column_stack([R * np.cos(th), R * np.sin(th)])
    if surface.label.startswith("ellipsoid"):
        axes = [float(tok) for tok in surface.label.split("_")[1].split("x")]
        th = (np.arange(count) + 0.5) * (2.0 * math.pi / count)
        return np.column_stack([axes[0] * np.cos(th), axes[1] * np.sin(th)])
    raise ConfigError("boundary sampling implemented for balls and ellipses")


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(
                f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)
                for v in row) + "\n")


_PLOT_TEMPLATE = '''"""Plot template emitted by the experiment harness.

Reads {csv_name} from the same directory and renders {description}.
"""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent
rows = [r for r in csv.DictReader(
    ln for ln in open(here / "{csv_name}") if not ln.startswith("#"))]

fig, ax = plt.subplots(figsize=(6, 4.5))
{body}
ax.legend()
fig.tight_layout()
fig.savefig(here / "{png_name}", dpi=150)
print("wrote {png_name}")
'''


def _emit_plot_script(outdir, name, csv_name, description, body):
    path = Path(outdir) / name
    path.write_text(_PLOT_TEMPLATE.format(csv_name=csv_name, png_name=csv_name.replace(".csv", ".png"),
                                          description=description, body=body))
    return path


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_admissibility(cfg: ExperimentConfig, outdir) -> int:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(cfg)
    acfg = kernels.AdmissibilityConfig(
        n_directions=cfg.get_int("directions", 6),
        hypothesis_tol=cfg.get_float("hypothesis_tol", 1e-3),
        rel_tol=cfg.get_float("rel_tol", 1e-6),
        seed=cfg.seed,
    )
    try:
        report = kernels.validate_admissibility(kernel, acfg)
    except quadrature.BudgetExceededError as exc:
        (outdir / "admissibility_report.txt").write_text(
            f"kernel = {kernel.label}\nfailure = {exc}\n")
        return EXIT_NUMERIC
    (outdir / "admissibility_report.txt").write_text(kernels.report_to_text(report))
    _write_csv(outdir / "a_lambda.csv", cfg.header_lines(),
               ["lambda", "direction_index", "mass"],
               kernels.report_to_csv_rows(report))
    expect_fail = cfg.get("expect", "pass") == "fail"
    ok = report.passed != expect_fail
    return EXIT_PASS if ok else EXIT_THRESHOLD


def run_curvature_convergence(cfg: ExperimentConfig, outdir, threads: int = 1) -> int:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(cfg)
    surface = _build_shape(cfg)
    eps_ladder = _floats(cfg.get("eps_ladder", "0.25 0.125 0.0625 0.03125 0.015625 0.0078125"))
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise ConfigError("eps ladder must be strictly decreasing")
    n_points = cfg.get_int("n_points", 64)
    chart_radius = cfg.get_float("chart_radius", 0.5)
    rel_tol = cfg.get_float("rel_tol", 1e-6)
    budget = quadrature.QuadratureBudget(rel_tol=rel_tol)
    conv = curvature.ConvergenceBudget(
        s=kernel.s,
        alpha=cfg.get_float("alpha", 0.4),
        beta=cfg.get_float("beta", 0.4),
        gamma=cfg.get_float("gamma", 0.2),
        q=cfg.get_float("q", 1.01),
        eps_bar=cfg.get_float("eps_bar", 0.3),
        delta_bar=chart_radius,
    )
    points = _boundary_points(surface, n_points)
    a0 = cfg.get_float("a0", 8.0)
    b0 = cfg.get_float("b0", 24.0)

    def work(point):
        radius = chart_radius
        chart = None
        for _ in range(12):
            try:
                chart = geometry.graph_chart(surface, point, radius=radius)
                break
            except geometry.ChartRadiusError:
                radius *= 0.85
        if chart is None:
            raise geometry.ChartRadiusError(f"no chart at {point}")
        h_local = curvature.local_curvature(kernel, surface, point, budget)
        out = []
        for eps in eps_ladder:
            h_eps = curvature.rescaled_curvature(kernel, eps, surface, point,
                                                 budget=budget, chart=chart)
            delta = min(conv.delta_of(eps), 0.98 * chart.radius)
            bound = curvature.convergence_error_bound(conv, eps, delta, chart, a0, b0)
            out.append((eps, h_eps, h_local, abs(h_eps - h_local), bound))
        return out

    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, points))
        else:
            results = [work(p) for p in points]
    except quadrature.BudgetExceededError:
        return EXIT_NUMERIC

    rows = []
    for point, res in zip(points, results):
        for eps, h_eps, h_loc, err, bound in res:
            rows.append((surface.label, kernel.label,
                         float(point[0]), float(point[1]),
                         float(eps), float(h_eps), float(h_loc),
                         float(err), float(bound)))
    _write_csv(outdir / "curvature_convergence.csv", cfg.header_lines(),
               ["shape", "kernel", "x0", "x1", "eps", "H_eps", "H_0",
                "error", "bound_E"], rows)
    _emit_plot_script(
        outdir, "plot_curvature_convergence.py", "curvature_convergence.csv",
        "log-log error against eps with the fitted bound line",
        "\n".join([
            "import collections",
            "groups = collections.defaultdict(list)",
            "for r in rows: groups[float(r['eps'])].append(float(r['error']))",
            "eps = sorted(groups)",
            "err = [max(groups[e]) for e in eps]",
            "ax.loglog(eps, err, 'o-', label='max error')",
            "bounds = collections.defaultdict(list)",
            "for r in rows: bounds[float(r['eps'])].append(float(r['bound_E']))",
            "c = max(max(groups[e]) / max(bounds[e]) for e in eps)",
            "ax.loglog(eps, [c * max(bounds[e]) for e in eps], 's--', label='c E(eps, q eps^gamma)')",
            "ax.set_xlabel('eps'); ax.set_ylabel('max |H_eps - H_0|')",
        ]))

    max_err = {}
    for point, res in zip(points, results):
        for eps, h_eps, h_loc, err, bound in res:
            max_err[eps] = max(max_err.get(eps, 0.0), err)
    ladder = sorted(max_err, reverse=True)
    if len(ladder) == 1:
        sys.stderr.write("warning: single-entry ladder, monotonicity check skipped\n")
        return EXIT_PASS
    decreasing = all(max_err[a] > max_err[b] for a, b in zip(ladder, ladder[1:]))
    return EXIT_PASS if decreasing else EXIT_THRESHOLD


def _flow_initial(cfg: ExperimentConfig, n_cells: int):
    half_width = cfg.get_float("half_width", 1.3)
    clamp = cfg.get_float("clamp", 0.15)
    radius = cfg.get_float("radius", 1.0)
    return levelset.clamped_distance_disc(radius, n_cells, half_width, clamp=clamp)


def run_flow_convergence(cfg: ExperimentConfig, outdir) -> int:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(cfg)
    eps_ladder = _floats(cfg.get("eps_ladder", "0.125 0.0625 0.03125"))
    n_cells = cfg.get_int("n_cells", 128)
    T = cfg.get_float("final_time", 0.02)
    snapshot_dt = cfg.get_float("snapshot_dt", T / 2.0)
    sigma_cells = cfg.get_float("sigma_cells", 6.0)

    u0 = _flow_initial(cfg, n_cells)
    base = dict(kernel=kernel, final_time=T, snapshot_dt=snapshot_dt,
                cfl=cfg.get_float("cfl", 0.5), sigma_cells=sigma_cells,
                n_levels=cfg.get_int("n_levels", 48),
                ramp_cells=cfg.get_float("ramp_cells", 1.0),
                chi_width_cells=cfg.get_float("chi_width_cells", 1.0),
                value_range=(u0.c_out, float(u0.values.max())))
    local_traj = levelset.evolve(u0, levelset.FlowConfig(eps=0.0, **base))
    u_fine0 = _flow_initial(cfg, 2 * n_cells)
    fine_cfg = levelset.FlowConfig(eps=0.0, **{**base,
                                               "value_range": (u_fine0.c_out, float(u_fine0.values.max()))})
    fine_traj = levelset.evolve(u_fine0, fine_cfg)
    self_conv = float(np.abs(fine_traj.final().values[::2, ::2]
                             - local_traj.final().values).max())

    rows = []
    distances = []
    for eps in eps_ladder:
        traj = levelset.evolve(u0, levelset.FlowConfig(eps=eps, **base))
        for snap, ref in zip(traj.snapshots, local_traj.snapshots):
            dist = float(np.abs(snap.values - ref.values).max())
            rows.append((float(eps), float(snap.time), dist,
                         levelset.front_mean_radius(snap),
                         levelset.front_mean_radius(ref)))
        distances.append(float(np.abs(traj.final().values
                                      - local_traj.final().values).max()))

    rows.append((0.0, float(local_traj.final().time), self_conv,
                 levelset.front_mean_radius(local_traj.final()),
                 levelset.front_mean_radius(fine_traj.final())))
    _write_csv(outdir / "flow_convergence.csv", cfg.header_lines(),
               ["eps", "time", "sup_distance", "front_radius", "front_radius_ref"],
               rows)
    _emit_plot_script(
        outdir, "plot_flow_convergence.py", "flow_convergence.csv",
        "sup-norm distances to the local solution along the eps ladder",
        "\n".join([
            "pts = [(float(r['eps']), float(r['sup_distance'])) for r in rows",
            "       if float(r['eps']) > 0]",
            "by_eps = {}",
            "for e, d in pts: by_eps[e] = d",
            "eps = sorted(by_eps, reverse=True)",
            "ax.semilogx(eps, [by_eps[e] for e in eps], 'o-', label='sup |u_eps - u|')",
            "ax.set_xlabel('eps'); ax.set_ylabel('sup distance at final time')",
        ]))

    decreasing = all(a > b for a, b in zip(distances, distances[1:]))
    within = distances[-1] <= 3.0 * self_conv
    (outdir / "flow_convergence_summary.txt").write_text(
        "\n".join([
            f"distances = {distances}",
            f"self_convergence = {self_conv:.17g}",
            f"strictly_decreasing = {decreasing}",
            f"within_3x_self_convergence = {within}",
        ]) + "\n")
    return EXIT_PASS if (decreasing and within) else EXIT_THRESHOLD


def run_apriori(cfg: ExperimentConfig, outdir) -> int:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(cfg)
    eps_ladder = _floats(cfg.get("eps_ladder", "0.125 0.0625 0.03125"))
    n_cells = cfg.get_int("n_cells", 64)
    T = cfg.get_float("final_time", 0.02)
    u0 = _flow_initial(cfg, n_cells)
    tol = cfg.get_float("lip_tol", 0.01)

    rows = []
    constants = []
    for eps in list(eps_ladder) + [0.0]:
        flow_cfg = levelset.FlowConfig(
            kernel=kernel, eps=eps, final_time=T,
            snapshot_dt=cfg.get_float("snapshot_dt", T / 4.0),
            cfl=cfg.get_float("cfl", 0.5),
            sigma_cells=cfg.get_float("sigma_cells", 6.0),
            n_levels=cfg.get_int("n_levels", 48),
            ramp_cells=cfg.get_float("ramp_cells", 1.0),
            chi_width_cells=cfg.get_float("chi_width_cells", 1.0),
            value_range=(u0.c_out, float(u0.values.max())))
        traj = levelset.evolve(u0, flow_cfg)
        rep = levelset.check_apriori(traj, u0, tol=tol)
        rows.append((float(eps), rep.lipschitz_ok, float(rep.max_lip_ratio),
                     float(rep.hoelder_constant)))
        if eps > 0.0:
            constants.append(rep.hoelder_constant)
    _write_csv(outdir / "apriori.csv", cfg.header_lines(),
               ["eps", "lipschitz_ok", "max_lip_ratio", "hoelder_constant"],
               rows)
    lip_ok = all(r[1] for r in rows)
    c_arr = np.asarray(constants)
    spread_ok = (c_arr.max() - c_arr.min()) <= 0.25 * c_arr.max()
    (outdir / "apriori_summary.txt").write_text(
        f"lipschitz_ok = {lip_ok}\n"
        f"hoelder_constants = {constants}\n"
        f"spread_within_25pct = {spread_ok}\n")
    return EXIT_PASS if (lip_ok and spread_ok) else EXIT_THRESHOLD


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_VERBS = {
    "validate": ("admissibility", run_admissibility),
    "curvature": ("curvature", run_curvature_convergence),
    "flow": ("flow", run_flow_convergence),
    "apriori": ("apriori", run_apriori),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlcflow",
        description="desk-scale experiments for nonlocal curvature flows")
    parser.add_argument("verb", choices=sorted(_VERBS))
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    section, runner = _VERBS[args.verb]
    try:
        cfg = load_experiment(args.config, section, seed=args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    try:
        if args.verb == "curvature":
            status = runner(cfg, args.out, threads=max(1, args.threads))
        else:
            status = runner(cfg, args.out)
    except quadrature.BudgetExceededError as exc:
        sys.stderr.write(f"numeric budget exceeded: {exc}\n")
        return EXIT_NUMERIC
    except levelset.CFLError as exc:
        sys.stderr.write(f"time step rejected: {exc}\n")
        return EXIT_NUMERIC
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    return status


if __name__ == "__main__":
    sys.exit(main())
