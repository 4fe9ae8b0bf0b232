"""Config-driven experiment runners.

Each runner performs one study end to end: simulate/solve, write delimited
tables, render figures, and judge PASS/FAIL verdicts.  A run leaves behind

* ``*.csv`` — every number the run produced, printed losslessly,
* ``*.png`` — the figures,
* ``report.txt`` — human-readable statistics and verdicts (the only file
  carrying a timestamp),
* ``summary.json`` — machine-readable verdicts for scripting.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, plotting
from .config import ExperimentConfig, parse_model
from .errors import ConfigInvalidError
from .finance import (
    build_deflator,
    martingale_report,
    viability_bound_check,
)
from .hjm import (
    HjmModel,
    discounted_bond_report,
    drift_restriction_residual,
    ho_lee,
    integrated_fields,
    simulate_surface,
    viability_norm_hjm,
)
from .integration import (
    integrate,
    roundtrip_residual,
    roundtrip_refinement_study,
    structural_condition_report,
)
from .rkhs import default_schedule, norm_via_limit, regularized_coefficients, spectral_norm, KernelSpectrum
from .simulate import realized_covariation, simulate_ensemble
from .stoch_kernel import IncrementFamily
from .tree import deflator_polytope, hedge_value_recursion, superhedge_duality


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str

    @property
    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} — {self.detail}"


@dataclass
class ExperimentResult:
    kind: str
    seed: int
    out_dir: Path
    verdicts: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    figures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def check(self, name: str, passed, detail: str) -> None:
        self.verdicts.append(Verdict(name, bool(passed), detail))

    def stat(self, label: str, mean: float, se: float, target: float) -> None:
        z = 0.0 if se == 0 and mean == target else (mean - target) / se if se else float("inf")
        self.stats.append(
            f"{label}: mean={io.fmt(mean)} se={io.fmt(se)} target={io.fmt(target)} z={z:+.3f}"
        )

    def table(self, name: str, header, rows) -> Path:
        path = io.write_table(self.out_dir / name, header, rows)
        self.tables.append(path)
        return path

    def figure(self, path: Path) -> Path:
        self.figures.append(path)
        return path


def _write_report(result: ExperimentResult, config: ExperimentConfig) -> None:
    lines = [
        f"covint {result.kind} experiment",
        f"generated: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
        f"seed: {result.seed}",
        f"output: {result.out_dir}",
        "",
    ]
    if result.stats:
        lines.append("[statistics]")
        lines.extend(result.stats)
        lines.append("")
    lines.append("[verdicts]")
    lines.extend(v.line for v in result.verdicts)
    lines.append("")
    lines.append(f"overall: {'PASS' if result.passed else 'FAIL'}")
    (result.out_dir / "report.txt").write_text("\n".join(lines) + "\n")

    summary = {
        "kind": result.kind,
        "seed": result.seed,
        "overall": result.passed,
        "verdicts": [
            {"name": v.name, "passed": v.passed, "detail": v.detail}
            for v in result.verdicts
        ],
        "tables": sorted(p.name for p in result.tables),
        "figures": sorted(p.name for p in result.figures),
    }
    (result.out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message, flush=True)


def _vs(value: float, bound: float, fmt: str = ".3e") -> str:
    """Render ``value <= bound`` with the comparator that actually holds."""
    op = "<=" if value <= bound else ">"
    return f"{value:{fmt}} {op} {bound:g}"


# --------------------------------------------------------------------------
# kernel: dual-route norms on a fixture kernel and named test vectors


def _run_kernel(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    kernel = io.read_kernel_csv(config.files["kernel"])
    labels, vectors = io.read_vectors_csv(config.files["vectors"])
    if labels != kernel.labels:
        raise ConfigInvalidError(
            "vector labels do not match kernel labels",
            kernel=list(kernel.labels),
            vectors=list(labels),
        )
    agreement = config.tolerance("agreement", 1e-8)
    schedule = default_schedule()

    spectrum = KernelSpectrum(kernel)
    result.table(
        "spectrum.csv",
        ["mode", "eigenvalue", "retained"],
        [
            [i, ev, str(bool(keep)).lower()]
            for i, (ev, keep) in enumerate(zip(spectrum.eigenvalues, spectrum.retained))
        ],
    )
    result.figure(
        plotting.spectrum_figure(
            spectrum.eigenvalues, spectrum.retained, result.out_dir / "spectrum.png"
        )
    )

    rows, profiles = [], {}
    worst_gap, verdicts_agree = 0.0, True
    for name, vec in vectors.items():
        direct = spectral_norm(kernel, vec)
        limit = norm_via_limit(kernel, vec, schedule)
        profiles[name] = [
            regularized_coefficients(kernel, vec, float(n)) @ vec for n in schedule
        ]
        member = direct.finite
        verdicts_agree &= member == limit.finite
        if member and limit.finite:
            gap = abs(direct.value - limit.value) / (1.0 + direct.value)
            worst_gap = max(worst_gap, gap)
        rows.append(
            [name, direct.value, limit.value, str(member).lower(), str(limit.finite).lower()]
        )
        _say(quiet, f"[kernel] {name}: spectral={direct.value:g} limit={limit.value:g}")
    result.table(
        "norms.csv", ["name", "spectral", "limit", "member_spectral", "member_limit"], rows
    )
    result.table(
        "regularization_path.csv",
        ["level", *profiles],
        [[n, *(profiles[name][i] for name in profiles)] for i, n in enumerate(schedule)],
    )
    result.figure(
        plotting.regularization_figure(
            schedule, profiles, result.out_dir / "regularization.png"
        )
    )

    result.check(
        "route-agreement",
        worst_gap <= agreement,
        f"max relative norm gap {_vs(worst_gap, agreement)}",
    )
    result.check(
        "membership-coincidence",
        verdicts_agree,
        f"spectral and limit membership verdicts "
        f"{'coincide' if verdicts_agree else 'disagree'}",
    )


# --------------------------------------------------------------------------
# integrate: isometry + round trip + structural condition for one model


def _theta_family(sak, theta) -> IncrementFamily:
    increments = np.einsum("kij,j->ki", sak.increments, theta)
    return IncrementFamily(sak.labels, increments)


def _run_integrate(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    model = parse_model(config.params["model"])
    grid = config.grid
    theta = np.asarray(config.params.get("theta", np.ones(model.dim)), dtype=float)
    if theta.shape != (model.dim,):
        raise ConfigInvalidError("theta must have one weight per asset")
    n_paths = config.n_paths or 256

    chunk = int(config.params.get("chunk_size", 4096))
    _say(quiet, f"[integrate] simulating {n_paths} paths x {grid.steps} steps")
    ensemble = simulate_ensemble(model, grid, n_paths, config.seed, chunk_size=chunk)
    saks = realized_covariation(ensemble)
    families = [_theta_family(sak, theta) for sak in saks]
    integral = integrate(saks, families, ensemble)

    qv = np.sum(np.diff(integral.X, axis=1) ** 2, axis=1)
    iso_tol = config.tolerance("isometry", 1e-10)
    scale = 1.0 + float(np.max(qv))
    result.check(
        "isometry",
        integral.isometry_residual <= iso_tol * scale,
        f"residual {_vs(integral.isometry_residual, iso_tol * scale)}"
        f" (tol {iso_tol:g} scaled by 1+[X,X])",
    )

    rt = roundtrip_residual(saks, families, ensemble)
    result.stats.append(
        f"roundtrip metric: value={io.fmt(rt.value)} se={io.fmt(rt.standard_error)}"
        f" (horizon k_max={rt.k_max})"
    )
    rt_tol = config.tolerance("roundtrip", 1e-10)
    result.check(
        "roundtrip", rt.value <= rt_tol, f"metric {_vs(rt.value, rt_tol)}"
    )

    levels = int(config.params.get("levels", 4))
    report = structural_condition_report(model, grid, levels=levels)
    expect = str(config.params.get("expect_structural", "pass")).upper()
    result.check(
        "structural-condition",
        report.verdict == expect,
        f"verdict {report.verdict} (exponent {report.exponent:.4f}), expected {expect}",
    )

    result.table(
        "integral_paths.csv",
        ["t", *(f"path{p}" for p in range(min(8, n_paths)))],
        [[t, *integral.X[: min(8, n_paths), k]] for k, t in enumerate(grid.times)],
    )
    result.table(
        "structural.csv",
        ["dt", "norm_sq"],
        list(zip(report.step_sizes, report.values)),
    )
    result.figure(
        plotting.paths_figure(grid.times, integral.X, result.out_dir / "paths.png")
    )
    finite = np.isfinite(report.values)
    if finite.all():
        result.figure(
            plotting.loglog_decay_figure(
                report.step_sizes,
                report.values,
                result.out_dir / "structural.png",
                ylabel="cumulative norm",
                slope=-report.exponent,
            )
        )


# --------------------------------------------------------------------------
# viability: deflator moment tests + wealth tail envelope


def _run_viability(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    model = parse_model(config.params["model"])
    grid = config.grid
    n_paths = config.n_paths or 10_000
    band = config.tolerance("z_band", 3.5)

    chunk = int(config.params.get("chunk_size", 4096))
    _say(quiet, f"[viability] simulating {n_paths} paths x {grid.steps} steps")
    ensemble = simulate_ensemble(model, grid, n_paths, config.seed, chunk_size=chunk)
    sak = model.kernel(grid)
    drift = IncrementFamily(model.labels, model.drift_increments(grid))
    deflator = build_deflator(sak, drift, ensemble)
    report = martingale_report(deflator, ensemble)

    rows = []
    for check in report.checks:
        result.stat(check.label, check.mean, check.se, check.target)
        rows.append([check.label, check.mean, check.se, check.target, check.z])
    result.table("moments.csv", ["statistic", "mean", "se", "target", "z"], rows)
    result.check(
        "deflator-moments",
        report.all_within(band),
        f"max |z| = {_vs(report.max_abs_z, band, '.2f')} "
        f"({report.retained_paths} paths, {report.excluded_paths} excluded)",
    )
    min_retained = config.tolerance("min_retained", 0.99)
    frac = deflator.retained_fraction
    result.check(
        "deflator-positivity",
        frac >= min_retained,
        f"retained fraction {frac:.4f} {'>=' if frac >= min_retained else '<'} "
        f"{min_retained:g}",
    )
    result.figure(
        plotting.deflator_figure(
            deflator.Y[deflator.retained, -1], result.out_dir / "deflator_hist.png"
        )
    )

    strategies = [
        (str(entry["name"]), np.asarray(entry["theta"], dtype=float))
        for entry in config.params.get("strategies", [])
    ]
    if strategies:
        ells = np.asarray(config.params.get("levels", [1.0, 2.0, 5.0, 10.0]), dtype=float)
        initial = float(config.params.get("initial_wealth", 1.0))
        via = viability_bound_check(sak, ensemble, deflator, strategies, ells, initial=initial)
        tails = {}
        rows = []
        for i, name in enumerate(via.strategy_names):
            tails[name] = via.tail[i]
            result.stat(
                f"deflated terminal wealth [{name}]",
                via.deflated_mean[i],
                via.deflated_se[i],
                initial,
            )
            for j, ell in enumerate(via.ell_grid):
                rows.append([name, ell, via.tail[i, j], via.tail_se[i, j], 1.0 / ell])
        result.table(
            "tails.csv", ["strategy", "level", "tail", "se", "envelope"], rows
        )
        result.figure(plotting.tails_figure(via.ell_grid, tails, result.out_dir / "tails.png"))
        result.check(
            "tail-envelope",
            via.passed,
            f"P[X>l] {'<=' if via.passed else 'exceeds'} 1/l within 3 SE "
            f"across {len(strategies)} strategies",
        )


# --------------------------------------------------------------------------
# hedge-tree: polytope geometry + superhedging duality on a finite tree


def _run_hedge_tree(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    tree = io.read_tree_csv(config.files["tree"])
    stream = io.read_node_values_csv(config.files["stream"])
    if stream.shape != (tree.n_nodes,):
        raise ConfigInvalidError(
            "stream length does not match tree size",
            nodes=tree.n_nodes,
            stream=int(stream.size),
        )
    gap_tol = config.tolerance("gap", 1e-9)

    poly = deflator_polytope(tree)
    _say(
        quiet,
        f"[hedge-tree] polytope dimension {poly.dimension}, radius {poly.radius:.3e}",
    )
    result.table(
        "interior_deflator.csv", ["node", "y"], list(enumerate(poly.interior))
    )
    if poly.vertices is not None:
        result.table(
            "vertices.csv",
            ["vertex", *(f"node{v}" for v in range(tree.n_nodes))],
            [[i, *vert] for i, vert in enumerate(poly.vertices)],
        )

    duality = superhedge_duality(tree, stream)
    values = hedge_value_recursion(tree, stream)
    recursion_root = values[0] + stream[0]
    result.table(
        "duality.csv",
        ["primal", "dual", "gap", "recursion_root", "polytope_dim", "radius"],
        [[duality.primal, duality.dual, duality.gap, recursion_root, poly.dimension, poly.radius]],
    )
    result.table("hedge_values.csv", ["node", "value"], list(enumerate(values)))
    result.figure(
        plotting.tree_figure(tree, values, result.out_dir / "tree.png", value_name="hedge value")
    )

    result.check(
        "deflator-exists",
        True,
        f"interior radius {poly.radius:.3e}, dimension {poly.dimension} "
        f"({'complete' if poly.is_complete else 'incomplete'} market)",
    )
    result.check(
        "duality-gap",
        abs(duality.gap) <= gap_tol,
        f"primal {io.fmt(duality.primal)} vs dual {io.fmt(duality.dual)}",
    )
    result.check(
        "recursion-consistency",
        abs(recursion_root - duality.primal) <= gap_tol,
        f"dynamic-programming root {io.fmt(recursion_root)} vs primal "
        f"{io.fmt(duality.primal)}",
    )


# --------------------------------------------------------------------------
# hjm: drift restriction, bond martingale tests, viability norm


def _run_hjm(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    grid = config.grid
    params = config.params
    if "curve" in config.files:
        maturities, curve = io.read_curve_csv(config.files["curve"])
    else:
        max_maturity = float(params.get("max_maturity", 2 * grid.horizon))
        cells = int(params.get("maturity_cells", 2 * grid.steps))
        maturities = np.linspace(0.0, max_maturity, cells + 1)
        curve = np.full(maturities.size, float(params.get("initial_rate", 0.02)))
    sigma0 = float(params.get("sigma0", 0.2))
    kappa_bias = float(params.get("kappa_bias", 0.0))
    n_paths = config.n_paths or 10_000
    band = config.tolerance("z_band", 3.5)

    model = ho_lee(grid, maturities, sigma0, initial_curve=curve)
    if kappa_bias:
        alive = maturities[None, :] >= grid.times[:-1, None]
        model = HjmModel(
            grid, maturities, model.initial_curve,
            model.kappa + np.where(alive, kappa_bias, 0.0), model.sigma,
        )

    residual = drift_restriction_residual(model)
    restriction_tol = config.tolerance("restriction", 1e-12)
    result.check(
        "drift-restriction",
        residual <= restriction_tol,
        f"max restriction residual {_vs(residual, restriction_tol)}",
    )

    norm_path = viability_norm_hjm(model)
    viability_tol = config.tolerance("viability", 1e-12)
    result.check(
        "viability-norm",
        float(norm_path[-1]) <= viability_tol,
        f"cumulative drift norm {_vs(float(norm_path[-1]), viability_tol)}",
    )
    result.table(
        "viability_norm.csv", ["t", "cumulative_norm_sq"], list(zip(grid.times, norm_path))
    )

    chunk = int(config.params.get("chunk_size", 4096))
    _say(quiet, f"[hjm] simulating {n_paths} surfaces x {grid.steps} steps")
    surface = simulate_surface(model, n_paths, config.seed, chunk_size=chunk)
    sel = params.get("maturity_indices")
    sel = [int(i) for i in sel] if sel is not None else None
    checks = discounted_bond_report(surface, maturity_indices=sel)
    rows = []
    for check in checks:
        result.stat(check.label, check.mean, check.se, check.target)
        rows.append([check.label, check.mean, check.se, check.target, check.z])
    result.table("bond_checks.csv", ["statistic", "mean", "se", "target", "z"], rows)
    worst = max(abs(c.z) for c in checks)
    result.check(
        "bond-martingales",
        all(c.within(band) for c in checks),
        f"max |z| = {_vs(worst, band, '.2f')} over {len(checks)} maturities",
    )

    kappa_star, sigma_star = integrated_fields(model)
    result.table(
        "curve.csv",
        ["maturity", "value"],
        list(zip(maturities, model.initial_curve)),
    )
    times_left = grid.times[:-1]
    io_paths = [
        io.write_field_csv(result.out_dir / "kappa.csv", times_left, maturities, model.kappa)
    ]
    for d in range(model.n_drivers):
        io_paths.append(
            io.write_field_csv(
                result.out_dir / f"sigma_d{d}.csv", times_left, maturities, model.sigma[:, :, d]
            )
        )
    io_paths.append(
        io.write_field_csv(
            result.out_dir / "kappa_star.csv", times_left, maturities, kappa_star
        )
    )
    result.tables.extend(io_paths)
    result.figure(
        plotting.forward_curves_figure(
            grid.times, maturities, surface.forwards[0], result.out_dir / "forwards.png"
        )
    )
    result.figure(
        plotting.zscores_figure(
            [c.label for c in checks], [c.z for c in checks],
            result.out_dir / "zscores.png", band=band,
        )
    )


# --------------------------------------------------------------------------
# refine-study: round-trip discrepancy decay under grid refinement


def _run_refine_study(config: ExperimentConfig, result: ExperimentResult, quiet: bool):
    model = parse_model(config.params["model"])
    grid = config.grid
    theta = np.asarray(config.params.get("theta", np.ones(model.dim)), dtype=float)
    levels = int(config.params.get("levels", 3))
    n_paths = config.n_paths or 10_000

    _say(quiet, f"[refine-study] {levels} dyadic levels, {n_paths} paths each")
    study = roundtrip_refinement_study(model, theta, grid, levels, n_paths, config.seed)
    rows = [
        [
            study.step_sizes[i],
            study.mean_discrepancy[i],
            study.rms_discrepancy[i],
            study.ratios[i - 1] if i else "",
        ]
        for i in range(len(study.step_sizes))
    ]
    result.table("refinement.csv", ["dt", "mean_gap", "rms_gap", "ratio"], rows)
    lo = config.tolerance("ratio_low", 0.4)
    hi = config.tolerance("ratio_high", 0.6)
    ratios_ok = np.all((study.ratios >= lo) & (study.ratios <= hi))
    result.check(
        "bias-halving",
        ratios_ok,
        f"refinement ratios {np.round(study.ratios, 3).tolist()} "
        f"{'within' if ratios_ok else 'outside'} [{lo:g}, {hi:g}]",
    )

    s_levels = int(config.params.get("structural_levels", 4))
    report = structural_condition_report(model, grid, levels=s_levels)
    expect = str(config.params.get("expect_structural", "pass")).upper()
    result.check(
        "structural-condition",
        report.verdict == expect,
        f"verdict {report.verdict} (exponent {report.exponent:.4f}), expected {expect}",
    )
    result.table(
        "structural.csv", ["dt", "norm_sq"], list(zip(report.step_sizes, report.values))
    )
    result.figure(
        plotting.loglog_decay_figure(
            study.step_sizes,
            study.mean_discrepancy,
            result.out_dir / "refinement.png",
            ylabel="mean terminal gap",
            slope=1.0,
        )
    )


_RUNNERS = {
    "kernel": _run_kernel,
    "integrate": _run_integrate,
    "viability": _run_viability,
    "hedge-tree": _run_hedge_tree,
    "hjm": _run_hjm,
    "refine-study": _run_refine_study,
}


def run_experiment(config: ExperimentConfig, *, quiet: bool = False) -> ExperimentResult:
    """Run one configured experiment and write its artifact bundle."""
    result = ExperimentResult(kind=config.kind, seed=config.seed, out_dir=config.out_dir)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    _RUNNERS[config.kind](config, result, quiet)
    _write_report(result, config)
    _say(quiet, f"[{config.kind}] {'PASS' if result.passed else 'FAIL'} -> {config.out_dir}")
    return result
