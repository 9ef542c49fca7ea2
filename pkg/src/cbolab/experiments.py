"""Experiment drivers: wire configuration to the numerical modules and CSV.

Each driver takes the resolved config and an output directory, runs the
experiment, writes its CSV artifacts plus a one-page text summary, and
returns a list of (name, passed, detail) check results for `--check` mode.
Checks only run when the config's `check` section provides thresholds.
"""

from __future__ import annotations

import csv
import os
from datetime import datetime, timezone

import numpy as np

from . import galerkin as spectral
from . import streams
from .config import ConfigError
from .cutoffs import (CoefficientField, CutoffSpec, cbo_coefficients,
                      check_base_growth, check_truncated_growth)
from .diagnostics import (DecaySeries, consensus_path_speeds,
                          fit_exponential_rate, mean_field_scaling_fit,
                          success_probability)
from .objectives import builtin_objective
from .particle import CouplingExperiment, run_coupling, run_optimization


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, float) or isinstance(x, np.floating):
        return "%.17g" % x
    return x


def _summary(outdir: str, lines) -> None:
    stamp = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write(f"# generated {stamp}\n")
        for line in lines:
            fh.write(line + "\n")


def _objective(cfg):
    return builtin_objective(cfg["objective"]["name"], cfg["objective"]["dim"])


def _seed(cfg):
    return cfg["cbo"].get("seed", cfg["seed"])


def _run_cbo_trajectory(cfg):
    obj = _objective(cfg)
    c = cfg["cbo"]
    return obj, run_optimization(
        obj, n_particles=c["n_particles"], dt=c["dt"], lam=c["lambda"],
        sigma=c["sigma"], alpha=c["alpha"], horizon=c["horizon"],
        seed=_seed(cfg), init_center=c["init_center"],
        init_spread=c["init_spread"], record_every=c["record_every"])


def _trajectory_rows(run, dt):
    rows = []
    for i, t in enumerate(run.times):
        step_idx = int(round(t / dt))
        rows.append([step_idx, t, *run.valpha[i], run.w2_to_target[i],
                     run.variance[i], run.ess[i], run.log_normalizer[i]])
    return rows


def _trajectory_header(dim):
    return (["step", "time"] + [f"valpha_{j + 1}" for j in range(dim)]
            + ["w2_sq_to_vstar", "variance", "ess", "log_normalizer"])


def run_optimize(cfg, outdir):
    obj, run = _run_cbo_trajectory(cfg)
    _write_csv(os.path.join(outdir, "trajectory.csv"),
               _trajectory_header(obj.dim), _trajectory_rows(run, cfg["cbo"]["dt"]))
    final_w2 = float(run.w2_to_target[-1])
    lines = [f"experiment: optimize",
             f"steps: {run.steps}",
             f"final W2^2 to target: {final_w2:.6e}",
             f"final consensus point: {np.array2string(run.valpha[-1], precision=6)}"]
    checks = []
    cmax = cfg["check"].get("final_w2_max")
    if cmax is not None:
        checks.append(("final_w2_max", final_w2 <= cmax,
                       f"{final_w2:.3e} <= {cmax:.3e}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_decay_fit(cfg, outdir):
    obj, run = _run_cbo_trajectory(cfg)
    _write_csv(os.path.join(outdir, "trajectory.csv"),
               _trajectory_header(obj.dim), _trajectory_rows(run, cfg["cbo"]["dt"]))
    window = cfg["diagnostics"]["fit_window"]
    if not window:
        t0 = cfg["diagnostics"]["transient_steps"] * cfg["cbo"]["dt"]
        window = [t0, cfg["cbo"]["horizon"]]
    series = DecaySeries(times=run.times, values=run.w2_to_target, label="w2")
    rate, r2 = fit_exponential_rate(series, tuple(window))
    lines = [f"experiment: decay-fit",
             f"fit window: [{window[0]:g}, {window[1]:g}]",
             f"fitted exponential rate: {rate:.6f}",
             f"r_squared: {r2:.6f}"]
    checks = []
    for name, ok in (("rate_min", rate >= cfg["check"].get("rate_min", -np.inf)),
                     ("rate_max", rate <= cfg["check"].get("rate_max", np.inf)),
                     ("r2_min", r2 >= cfg["check"].get("r2_min", -np.inf))):
        if cfg["check"].get(name) is not None:
            checks.append((name, bool(ok), f"rate={rate:.4f} r2={r2:.5f}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_mfl_scaling(cfg, outdir):
    obj = _objective(cfg)
    c = cfg["coupling"]
    exp = CouplingExperiment(sizes=[int(n) for n in c["sizes"]],
                             reference_size=c["reference_size"],
                             horizon=c["horizon"], dt=c["dt"], seed=cfg["seed"],
                             init_center=c["init_center"],
                             init_spread=c["init_spread"])
    rows = run_coupling(exp, obj, {"lam": c["lambda"], "sigma": c["sigma"],
                                   "alpha": c["alpha"]})
    _write_csv(os.path.join(outdir, "scaling.csv"), ["n", "sup_mse"], rows)
    slope, intercept = mean_field_scaling_fit(rows)
    lines = [f"experiment: mfl-scaling",
             f"log-log slope: {slope:.4f}", f"intercept: {intercept:.4f}"]
    checks = []
    if cfg["check"].get("slope_min") is not None:
        checks.append(("slope_min", slope >= cfg["check"]["slope_min"], f"{slope:.3f}"))
    if cfg["check"].get("slope_max") is not None:
        checks.append(("slope_max", slope <= cfg["check"]["slope_max"], f"{slope:.3f}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_success_prob(cfg, outdir):
    obj = _objective(cfg)
    c = cfg["cbo"]
    s = cfg["success"]
    report = success_probability(
        obj, runs=s["runs"], epsilon=s["epsilon"], n_particles=c["n_particles"],
        dt=c["dt"], lam=c["lambda"], sigma=c["sigma"], alpha=c["alpha"],
        horizon=c["horizon"], seed=_seed(cfg), init_center=c["init_center"],
        init_spread=c["init_spread"], workers=cfg["workers"])
    rows = [[i, streams.derive_seed(_seed(cfg), i), e, int(e <= s["epsilon"]),
             int(i in report.diverged_runs)]
            for i, e in enumerate(report.final_errors)]
    _write_csv(os.path.join(outdir, "success.csv"),
               ["run", "seed", "final_error", "hit", "diverged"], rows)
    lines = [f"experiment: success-prob",
             f"runs: {report.runs}  epsilon: {report.epsilon:g}",
             f"hits: {report.hits}  fraction: {report.fraction:.4f}",
             f"diverged runs: {report.diverged_runs or 'none'}"]
    checks = []
    if cfg["check"].get("fraction_min") is not None:
        checks.append(("fraction_min",
                       report.fraction >= cfg["check"]["fraction_min"],
                       f"{report.fraction:.3f}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def _coefficient_field(cfg) -> CoefficientField:
    kind = cfg["cutoff"]["field"]
    vbar = np.asarray(cfg["cutoff"]["valpha_const"], dtype=float)
    dim = len(vbar)
    if kind == "cbo":
        return cbo_coefficients(lambda t: vbar, dim=dim)
    if kind == "quartic":
        return CoefficientField(
            dim=dim,
            G=lambda p, t: np.sum(np.square(p), axis=-1) ** 2,
            J=lambda p, t: np.asarray(p, dtype=float),
            g=lambda p, t: np.zeros(np.shape(p)[:-1]))
    raise ConfigError(f"cutoff.field: unknown coefficient field {kind!r}")


def _cutoff_spec(cfg) -> CutoffSpec:
    c = cfg["cutoff"]
    return CutoffSpec(shell_radius=c["R"], plateau_scale=c["n"],
                      h_table=c["h_table"], h_fd=c["h_fd"])


def _inequality_rows(report):
    return [[name, sup, count, "" if sat is None else int(sat)]
            for name, sup, count, sat in report.rows()]


def run_assumptions_check(cfg, outdir):
    field = _coefficient_field(cfg)
    box = cfg["cutoff"]["box"]
    report = check_base_growth(field, [-box] * field.dim, [box] * field.dim,
                               cfg["cutoff"]["samples"], seed=cfg["seed"],
                               h_fd=cfg["cutoff"]["h_fd"])
    _write_csv(os.path.join(outdir, "inequalities.csv"),
               ["quantity", "sup", "sample_count", "satisfied"],
               _inequality_rows(report))
    finite = all(np.isfinite(e.sup) for e in report.entries.values())
    lines = ["experiment: assumptions-check"] + [
        f"{name}: sup={sup:.6g} over {count} samples"
        for name, sup, count, _ in report.rows()]
    checks = []
    if cfg["check"].get("all_satisfied") is not None:
        checks.append(("all_finite", finite, "all ratio sups finite"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_lemma_check(cfg, outdir):
    field = _coefficient_field(cfg)
    spec = _cutoff_spec(cfg)
    n = cfg["cutoff"]["samples"]
    base = check_truncated_growth(field, spec, n, seed=cfg["seed"])
    refined = check_truncated_growth(field, spec, 2 * n, seed=cfg["seed"])
    rows = _inequality_rows(base) + _inequality_rows(refined)
    _write_csv(os.path.join(outdir, "inequalities.csv"),
               ["quantity", "sup", "sample_count", "satisfied"], rows)
    stability, worst = [], 0.0
    for name in base.entries:
        s1, s2 = base[name].sup, refined[name].sup
        rel = abs(s2 - s1) / max(abs(s1), 1e-300)
        worst = max(worst, rel)
        stability.append([name, s1, s2, rel])
    _write_csv(os.path.join(outdir, "stability.csv"),
               ["quantity", "sup", "sup_refined", "rel_change"], stability)
    finite = all(np.isfinite(r[1]) and np.isfinite(r[2]) for r in stability)
    lines = ["experiment: lemma-check",
             f"samples: {n} vs {2 * n}",
             f"worst relative change under refinement: {worst:.4%}",
             f"all sups finite: {finite}"]
    checks = []
    if cfg["check"].get("stability_max") is not None:
        ok = finite and worst <= cfg["check"]["stability_max"]
        checks.append(("stability_max", ok, f"{worst:.4%}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def _build_problem(cfg):
    p = cfg["pde"]
    spec = _cutoff_spec(cfg)
    kwargs = dict(cutoff=spec, integrator=p["integrator"],
                  c_cfl=p["c_cfl"], cbo_assembly=p["assembly"])
    if p["form"] == "cbo":
        if p["valpha_mode"] == "self_consistent":
            obj = _objective(cfg)
            return spectral.PDEProblem(form="cbo", objective=obj,
                                       alpha=cfg["cbo"]["alpha"],
                                       valpha_mode="self_consistent", **kwargs)
        vbar = np.asarray(p["valpha_const"], dtype=float)
        return spectral.PDEProblem(form="cbo", valpha_mode="frozen",
                                   valpha_path=lambda t: vbar, **kwargs)
    field = _coefficient_field(cfg)
    return spectral.PDEProblem(form=p["form"], coefficients=field, **kwargs)


def _initial_field(cfg, problem):
    p = cfg["pde"]
    center = np.asarray(p["init_center"], dtype=float)[: p["dim"]]
    radius = p["init_radius"]

    def bump(pts):
        r2 = np.sum(np.square((pts - center) / radius), axis=-1)
        return np.where(r2 < 1.0,
                        np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)

    f = spectral.project_initial(bump, problem, p["dim"], p["L"], p["K"], p["M"])
    total = f.mass()
    if total <= 0:
        raise ConfigError("pde.init_center/init_radius give an empty density")
    f.data /= total
    return f


def _pde_series_rows(res):
    rows = []
    for i, t in enumerate(res.times):
        row = [t, res.mass_series[i]]
        if res.valpha_series is not None:
            row.extend(res.valpha_series[i])
        for name in sorted(res.observed):
            row.append(res.observed[name][i])
        rows.append(row)
    return rows


def _pde_series_header(res, dim):
    header = ["time", "mass"]
    if res.valpha_series is not None:
        header += [f"valpha_{j + 1}" for j in range(dim)]
    header += sorted(res.observed)
    return header


def _write_snapshots(outdir, res):
    for idx, (t, f) in enumerate(res.snapshots):
        coeffs = f.coefficients
        ks = np.arange(-f.modes, f.modes + 1)
        rows = []
        if f.dim == 1:
            rows = [[k, c.real, c.imag] for k, c in zip(ks, coeffs)]
            header = ["k1", "re", "im"]
        else:
            header = ["k1", "k2", "re", "im"]
            for i1, k1 in enumerate(ks):
                for i2, k2 in enumerate(ks):
                    rows.append([k1, k2, coeffs[i1, i2].real, coeffs[i1, i2].imag])
        _write_csv(os.path.join(outdir, f"snapshot_coeffs_{idx:04d}.csv"),
                   header, rows)
        pts = f.grid_points()
        vals = f.grid_values()
        if f.dim == 1:
            grid_rows = [[pts[i, 0], vals[i]] for i in range(len(vals))]
            grid_header = ["v1", "rho"]
        else:
            grid_header = ["v1", "v2", "rho"]
            grid_rows = [[pts[i, j, 0], pts[i, j, 1], vals[i, j]]
                         for i in range(vals.shape[0]) for j in range(vals.shape[1])]
        _write_csv(os.path.join(outdir, f"grid_{idx:04d}.csv"),
                   grid_header, grid_rows)


def run_pde(cfg, outdir, extra_observers=None):
    p = cfg["pde"]
    problem = _build_problem(cfg)
    f0 = _initial_field(cfg, problem)
    observers = dict(extra_observers or {})
    res = spectral.evolve(f0, problem, horizon=p["horizon"], dt=p["dt"],
                          record_every=p["record_every"],
                          snapshot_times=p["snapshot_times"],
                          observers=observers)
    _write_csv(os.path.join(outdir, "series.csv"),
               _pde_series_header(res, p["dim"]), _pde_series_rows(res))
    _write_snapshots(outdir, res)
    return problem, res


def run_pde_run(cfg, outdir):
    _, res = run_pde(cfg, outdir)
    drift = float(np.max(np.abs(res.mass_series - res.mass_series[0])))
    lines = ["experiment: pde-run",
             f"steps recorded: {len(res.times)}",
             f"mass drift: {drift:.3e}",
             f"wall time: {res.wall_time:.1f}s"]
    checks = []
    if cfg["check"].get("mass_drift_max") is not None:
        checks.append(("mass_drift_max", drift <= cfg["check"]["mass_drift_max"],
                       f"{drift:.3e}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_positivity(cfg, outdir):
    p = cfg["pde"]
    problem, res = run_pde(cfg, outdir)
    vbar = res.valpha_series[-1]
    min_val, argmin = spectral.positivity_probe(res.final, vbar,
                                                p["annulus_inner"],
                                                p["annulus_outer"])
    speeds = consensus_path_speeds(res.times, res.valpha_series)
    drift = float(np.max(np.abs(res.mass_series - res.mass_series[0])))
    _write_csv(os.path.join(outdir, "probe.csv"),
               ["min_density", "argmin_1", "argmin_2", "mass_drift",
                "speed_sup", "holder_sup"],
               [[min_val, argmin[0], argmin[-1], drift,
                 speeds.speed_sup, speeds.holder_sup]])
    positive = min_val > 0.0
    lines = ["experiment: positivity",
             f"min density on annulus {'>' if positive else '<='} 0"
             f" (value {min_val:.6e} at {np.array2string(argmin, precision=3)})",
             f"mass drift: {drift:.3e}",
             f"consensus speed sup: {speeds.speed_sup:.4f}",
             f"wall time: {res.wall_time:.1f}s"]
    checks = []
    if cfg["check"].get("positivity_floor") is not None:
        checks.append(("positivity_floor",
                       min_val > cfg["check"]["positivity_floor"],
                       f"{min_val:.3e}"))
    if cfg["check"].get("mass_drift_max") is not None:
        checks.append(("mass_drift_max", drift <= cfg["check"]["mass_drift_max"],
                       f"{drift:.3e}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def run_confinement(cfg, outdir):
    if cfg["pde"]["dim"] != 1:
        raise ConfigError("pde.dim: confinement-1d needs dim = 1")
    v_star = cfg["pde"]["v_star"]
    observers = {"right_mass": lambda t, f: spectral.confinement_probe_1d(f, v_star)}
    _, res = run_pde(cfg, outdir, extra_observers=observers)
    worst = float(np.max(res.observed["right_mass"]))
    lines = ["experiment: confinement-1d",
             f"sup over recorded times of mass right of v*: {worst:.6e}",
             f"wall time: {res.wall_time:.1f}s"]
    checks = []
    if cfg["check"].get("confinement_max") is not None:
        checks.append(("confinement_max", worst <= cfg["check"]["confinement_max"],
                       f"{worst:.3e}"))
    _summary(outdir, lines + _check_lines(checks))
    return checks


def _check_lines(checks):
    if not checks:
        return []
    return ["checks:"] + [f"  {name}: {'PASS' if ok else 'FAIL'} ({detail})"
                          for name, ok, detail in checks]


DRIVERS = {
    "optimize": run_optimize,
    "decay-fit": run_decay_fit,
    "mfl-scaling": run_mfl_scaling,
    "success-prob": run_success_prob,
    "assumptions-check": run_assumptions_check,
    "lemma-check": run_lemma_check,
    "pde-run": run_pde_run,
    "positivity": run_positivity,
    "confinement-1d": run_confinement,
}
