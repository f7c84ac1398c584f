"""Experiment drivers behind the command line.

Each ``run_*`` function takes an :class:`~pkslab.config.ExperimentConfig`
and returns an :class:`ExperimentResult` holding plain tables; nothing in a
table depends on the worker count or on wall-clock time, so the CSV files
written by :func:`emit_results` are byte-for-byte reproducible.
"""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .config import ExperimentConfig, initial_density
from .diagnostics import EnsembleSnapshot, default_marginal_M, hn_estimate, kn_estimate, marginal_l1
from .errors import ConfigError, OutputError
from .io import write_csv, write_snapshot
from .ldp import (
    exp_moment_estimate,
    fit_bound_constants,
    ldp_fixed_point,
    log_znm_exact,
    stirling_check,
    znm_bounds,
    znm_monte_carlo,
)
from .liouville import entropy_dissipation_report, run_liouville, tensor_power
from .meanfield import MeanFieldSolver, run_pde
from .particle import SimParams, default_eps, pair_energy, simulate_ensemble
from .potentials import PotentialSpec, kernel_on_grid, split_short_long

__all__ = [
    "Table",
    "ExperimentResult",
    "run_simulate",
    "run_pde_experiment",
    "run_liouville_experiment",
    "run_ldp_experiment",
    "run_converge",
    "run_phase_diagram",
    "run_experiment",
    "emit_results",
    "fit_slope",
]


@dataclass
class Table:
    name: str
    columns: list
    rows: list
    description: str = ""


@dataclass
class ExperimentResult:
    kind: str
    tables: list
    summary: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (name, kind, data, t, seed)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _output_times(values, t_end: float) -> tuple:
    times = sorted(float(t) for t in values) if values else [float(t_end)]
    if times[-1] > t_end + 1e-12 or times[0] < 0:
        raise ConfigError("output times must lie in [0, t_end]")
    return tuple(times)


# --- simulate ------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    spec = cfg.potential_spec()
    n, reps = cfg["simulate.n"], cfg["simulate.replicas"]
    seed, dt = cfg["experiment.seed"], cfg["simulate.dt"]
    eps = cfg["simulate.eps"] or default_eps(n, spec.d, dt, spec.lam)
    params = SimParams(dt, cfg["simulate.t_end"], spec.sigma, seed, eps, _output_times(cfg["simulate.output_times"], cfg["simulate.t_end"]))
    trajs = simulate_ensemble(initial_density(cfg), params, spec, reps, threads=cfg["experiment.threads"], n=n)
    pos_rows, energy_rows, snaps = [], [], []
    for r, tr in enumerate(trajs):
        for t, x in zip(tr.times, tr.snapshots):
            energy_rows.append((r, t, pair_energy(x, spec, eps) / n**2))
            for i, xi in enumerate(x):
                pos_rows.append((r, t, i, *xi))
            if cfg["simulate.snapshots"]:
                snaps.append((f"replica{r:04d}_t{t:.6f}", "particles", x, t, seed + r))
    cols = ["replica", "t", "particle"] + [f"x_{j}" for j in range(spec.d)]
    tables = [
        Table("positions", cols, pos_rows, "particle positions per replica and output time"),
        Table("energy", ["replica", "t", "pair_energy"], energy_rows, "(1/N^2) sum_{i!=j} V_eps(x_i - x_j)"),
    ]
    summary = {"n": n, "replicas": reps, "eps": eps, "dt": dt, "rounded_times": trajs[0].metadata["rounded_times"]}
    return ExperimentResult("simulate", tables, summary, [seed + r for r in range(reps)], snaps)


# --- pde -----------------------------------------------------------------


def run_pde_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    spec = cfg.potential_spec()
    rho0 = initial_density(cfg, m=cfg["pde.m"])
    rep = run_pde(
        rho0,
        spec,
        cfg["pde.t_end"],
        cfg["pde.dt"],
        blowup_threshold=cfg["pde.threshold"] or None,
        eps=cfg["pde.eps"] or None,
        record_every=cfg["pde.record_every"],
    )
    summary = {
        "blowup": rep.blowup_flag,
        "blowup_time": rep.blowup_time,
        "reason": rep.reason,
        "steps": rep.steps,
        "mass_drift": rep.mass_drift,
        "min_density": rep.min_density,
        "initial_max": rep.max_series[0],
        "final_max": rep.max_series[-1],
    }
    snaps = []
    if cfg["pde.snapshots"]:
        snaps.append(("final", "density", rep.final.values, rep.times[-1], cfg["experiment.seed"]))
    table = Table("series", ["t", "mass", "min", "max", "free_energy"], rep.rows(), "density statistics and free energy")
    return ExperimentResult("pde", [table], summary, [cfg["experiment.seed"]], snaps)


# --- liouville -----------------------------------------------------------


def run_liouville_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    spec = cfg.potential_spec()
    n, m = cfg["liouville.n"], cfg["liouville.m"]
    eps = cfg["liouville.eps"] or 2.0 / m
    rho_bar = initial_density(cfg, m=m)
    rho0 = tensor_power(rho_bar, n)
    rho0.eps = eps
    tr = run_liouville(rho0, spec, cfg["liouville.dt"], cfg["liouville.t_end"], cfg["liouville.output_every"], rho_bar0=rho_bar, rtol=cfg["liouville.rtol"])
    ent = [(r.t, r.entropy, r.dissipation_cum, r.lhs, r.rhs, r.slack) for r in entropy_dissipation_report(tr)]
    e0 = tr.energies[0].total
    mod = []
    for t, e, dm, cm in zip(tr.times, tr.energies, tr.modulated_dissipation_cum, tr.commutator_cum):
        mod.append((t, e.total, dm, cm, e.total - e0 + dm - cm))
    tables = [
        Table("series", ["t", "mass", "entropy", "dissipation_cum", "E_N", "H_N", "K_N"], tr.rows(), "Liouville run"),
        Table("entropy", ["t", "entropy", "dissipation_cum", "lhs", "rhs", "slack"], ent, "entropy inequality lhs <= rhs"),
        Table("modulated", ["t", "E_N", "dissipation_cum", "commutator_cum", "residual"], mod, "E(t) - E(0) + int D - int R <= 0"),
    ]
    summary = {
        "n": n,
        "m": m,
        "eps": eps,
        "min_entropy_slack": min(r[-1] for r in ent),
        "max_modulated_residual": max(r[-1] for r in mod),
        "mass_drift": max(abs(x - 1.0) for x in tr.mass),
    }
    snaps = [("final", "liouville", tr.snapshots[-1], tr.times[-1], cfg["experiment.seed"])]
    return ExperimentResult("liouville", tables, summary, [cfg["experiment.seed"]], snaps)


# --- ldp -----------------------------------------------------------------


def fixed_point_kernel(m: int, l1: float, eta: float = 0.05, d: int = 1) -> np.ndarray:
    """Cell-averaged short-range log kernel rescaled to L1 norm ``l1``."""
    v0 = split_short_long(PotentialSpec(lam=1.0, sigma=1.0, d=d, eta=eta)).v0
    table = np.asarray(kernel_on_grid(v0, m, d, mode="cell"))
    norm = float(np.abs(table).sum()) * float(m) ** (-d)
    return table * (l1 / norm)


def run_ldp_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    d = cfg["potential.d"]
    seed = cfg["experiment.seed"]
    n_values, p_values = cfg["ldp.n_values"], cfg["ldp.p_values"]
    mc_key = (cfg["ldp.mc_n"], cfg["ldp.mc_p"])
    pairs = [(N, p) for p in p_values for N in n_values if p <= N / 2]
    if mc_key not in pairs:
        pairs.append(mc_key)
    # one constant per side over every tabulated pair
    fitted = [fit_bound_constants([N], [p], d) for N, p in pairs]
    c_low = max(f[0] for f in fitted)
    c_up = max(f[1] for f in fitted)
    rho_bar = initial_density(cfg)
    rows = []
    for N, p in pairs:
        M = round(p ** (1.0 / d))
        if M**d != p:
            raise ConfigError(f"ldp.p_values: {p} is not a perfect {d}-th power")
        z = math.exp(log_znm_exact(N, M, d))
        lo, up = znm_bounds(N, p, c_low, c_up)
        mc, se = float("nan"), float("nan")
        if (N, p) == mc_key:
            res = znm_monte_carlo(N, M, rho_bar, cfg["ldp.mc_samples"], seed=seed)
            mc, se = res.mean, res.stderr
        rows.append((N, M, p, z, lo, up, mc, se))
    ok_lower, c_stirling, n_star = stirling_check(1000)

    alpha = cfg["ldp.alpha"]
    coarse = initial_density(cfg, m=min(cfg["initial.m"], 64))

    def f(x, y):
        return np.cos(2 * np.pi * (x - y))[..., 0]

    moments = []
    for N in cfg["ldp.moment_n_values"]:
        r = exp_moment_estimate(f, coarse, N, alpha, cfg["ldp.moment_samples"], seed=seed + N)
        moments.append((N, alpha, r.mean, r.stderr, r.log_mean, r.log_stderr, r.n_samples))

    fm = cfg["ldp.fixed_point_m"]
    table = fixed_point_kernel(fm, cfg["ldp.fixed_point_l1"], d=d)
    ref = initial_density(cfg, m=fm)
    u0 = 0.1 * np.cos(2 * np.pi * (np.arange(fm) + 0.5) / fm)
    u0 = np.broadcast_to(u0.reshape((fm,) + (1,) * (d - 1)), (fm,) * d)
    fp = ldp_fixed_point(table, ref, damping=cfg["ldp.damping"], u0=u0)
    fixed = {
        "kernel_l1": cfg["ldp.fixed_point_l1"],
        "grid": fm,
        "damping": cfg["ldp.damping"],
        "converged": fp.converged,
        "iterations": fp.iterations,
        "u_sup": float(np.max(np.abs(fp.u))),
        "residual": fp.residual,
        "i_value": fp.i_value,
        "m_u": fp.m_u,
        "undamped_ratio": fp.undamped_ratio(cfg["ldp.damping"]),
        "contraction_bound": 4.0 * cfg["ldp.fixed_point_l1"] * float(ref.values.max()),
        "residuals": fp.residuals,
    }
    tables = [
        Table("znm", ["N", "M", "p", "Z_exact", "lower_bound", "upper_bound", "MC_estimate", "stderr"], rows, "partition function and fitted envelope"),
        Table("moments", ["N", "alpha", "mean", "stderr", "log_mean", "log_stderr", "n_samples"], moments, "exponential moment of cos(2 pi (x - y))"),
    ]
    summary = {
        "c_lower": c_low,
        "c_upper": c_up,
        "stirling_lower_ok": ok_lower,
        "stirling_c": c_stirling,
        "stirling_argmax": n_star,
        "fixed_point": fixed,
    }
    return ExperimentResult("ldp", tables, summary, [seed])


# --- convergence ---------------------------------------------------------


def fit_slope(n_values, distances, level: float = 0.95):
    """OLS fit ``log dist = a - theta log N``; returns ``(theta, stderr, lo, hi)``.

    All NaN when some distance is not positive (e.g. a single-bin histogram).
    """
    x = np.log(np.asarray(n_values, dtype=float))
    if x.size < 3:
        raise ConfigError("need at least three N values to fit a slope with an interval")
    dist = np.asarray(distances, dtype=float)
    if not np.all(dist > 0):
        return (float("nan"),) * 4
    y = np.log(dist)
    fit = stats.linregress(x, y)
    q = float(stats.t.ppf(0.5 + level / 2, x.size - 2))
    theta = -float(fit.slope)
    se = float(fit.stderr)
    return theta, se, theta - q * se, theta + q * se


def run_converge(cfg: ExperimentConfig) -> ExperimentResult:
    spec = cfg.potential_spec()
    if not spec.subcritical:
        raise ConfigError(
            f"lam={spec.lam} is not below 2 d sigma = {spec.critical_lambda}; the convergence "
            "estimate only holds in the subcritical regime"
        )
    d, seed, threads = spec.d, cfg["experiment.seed"], cfg["experiment.threads"]
    n_values = sorted(cfg["converge.n_values"])
    reps, dt, t_end = cfg["converge.replicas"], cfg["converge.dt"], cfg["converge.t_end"]
    times = _output_times(cfg["converge.output_times"], t_end)
    rho0 = initial_density(cfg)
    m = rho0.m
    solver = MeanFieldSolver(rho0, spec, cfg["converge.pde_dt"])
    refs = {}
    for t in times:
        refs[t] = solver.advance_to(t) if t > 0 else rho0
    n_min = n_values[0]
    M1 = cfg["converge.marginal_M1"] or default_marginal_M(n_min * reps, 1, d, m)
    M2 = cfg["converge.marginal_M2"] or default_marginal_M((n_min // 2) * reps, 2, d, m)
    hn_M = cfg["converge.hn_M"]
    rows = []
    for n in n_values:
        eps = default_eps(n, d, dt, spec.lam)
        params = SimParams(dt, t_end, spec.sigma, seed, eps, times)
        trajs = simulate_ensemble(rho0, params, spec, reps, threads=threads, n=n)
        for k, t in enumerate(trajs[0].times):
            ref = refs[min(times, key=lambda s: abs(s - t))]
            ens = EnsembleSnapshot(t, [tr.snapshots[k] for tr in trajs], seed)
            kn = kn_estimate(ens, ref, spec, eps=eps)
            hn = hn_estimate(ens, ref, hn_M)
            l1 = marginal_l1(ens, ref, 1, M=M1)
            l2 = marginal_l1(ens, ref, 2, M=M2)
            rows.append((n, t, kn.mean, kn.stderr, hn.mean, hn.stderr, l1, l2, eps))
    t_final = max(r[1] for r in rows)
    final = [r for r in rows if r[1] == t_final]
    fits = []
    for k, col in ((1, 6), (2, 7)):
        theta, se, lo, hi = fit_slope([r[0] for r in final], [r[col] for r in final])
        fits.append((t_final, k, theta, se, lo, hi))
    tables = [
        Table(
            "table",
            ["N", "t", "kn", "kn_stderr", "hn", "hn_stderr", "l1_k1", "l1_k2", "eps"],
            rows,
            "ensemble diagnostics against the co-evolved mean-field density",
        ),
        Table("fit", ["t", "k", "theta", "theta_stderr", "ci_low", "ci_high"], fits, "log-log slope of marginal L1 distance vs N"),
    ]
    summary = {"marginal_M1": M1, "marginal_M2": M2, "hn_M": hn_M, "theta_k1": fits[0][2], "theta_k2": fits[1][2]}
    return ExperimentResult("converge", tables, summary, [seed + r for r in range(reps)])


# --- phase diagram -------------------------------------------------------


def _phase_point(rho0, base: PotentialSpec, ratio: float, cfg: ExperimentConfig):
    spec = replace(base, lam=ratio * base.sigma)
    rep = run_pde(rho0, spec, cfg["phase.t_end"], cfg["phase.dt"], blowup_threshold=cfg["phase.threshold"])
    return (
        ratio,
        rep.blowup_flag,
        rep.blowup_time if rep.blowup_flag else float("nan"),
        max(rep.max_series),
        max(rep.max_series) / rep.max_series[0],
        rep.times[-1],
        rep.steps,
    )


def run_phase_diagram(cfg: ExperimentConfig) -> ExperimentResult:
    base = cfg.potential_spec()
    if base.d != 2:
        raise ConfigError("the phase diagram is defined for potential.d = 2")
    rho0 = initial_density(cfg, m=cfg["phase.m"])
    ratios = sorted(cfg["phase.lam_values"])
    sweep = _pool_map(lambda r: _phase_point(rho0, base, r, cfg), ratios, cfg["experiment.threads"])
    blow = [r[0] for r in sweep if r[1]]
    bis = []
    lo = hi = None
    if blow:
        hi = min(blow)
        below = [r[0] for r in sweep if not r[1] and r[0] < hi]
        lo = max(below) if below else None
    if lo is not None:
        for step in range(cfg["phase.bisect_steps"]):
            mid = 0.5 * (lo + hi)
            point = _phase_point(rho0, base, mid, cfg)
            if point[1]:
                hi = mid
            else:
                lo = mid
            bis.append((step, mid, point[1], lo, hi))
    estimate = 0.5 * (lo + hi) if lo is not None else float("nan")
    cols = ["lam_over_sigma", "blowup", "blowup_time", "max_density", "max_ratio", "t_reached", "steps"]
    tables = [
        Table("sweep", cols, sweep, "blow-up flags over lambda / sigma"),
        Table("bisection", ["step", "lam_over_sigma", "blowup", "low", "high"], bis, "bisection of the transition"),
    ]
    summary = {
        "m": cfg["phase.m"],
        "threshold": cfg["phase.threshold"],
        "transition_estimate": estimate,
        "bracket_low": lo,
        "bracket_high": hi,
        "critical_lambda_over_sigma": 2.0 * base.d,
    }
    return ExperimentResult("phase", tables, summary, [cfg["experiment.seed"]])


RUNNERS = {
    "simulate": run_simulate,
    "pde": run_pde_experiment,
    "liouville": run_liouville_experiment,
    "ldp": run_ldp_experiment,
    "converge": run_converge,
    "phase": run_phase_diagram,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg["experiment.kind"]](cfg)


# --- output --------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _versions() -> dict:
    import numba
    import scipy

    return {
        "pkslab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _write_json(path: Path, data) -> None:
    try:
        path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def emit_results(result: ExperimentResult, out_dir, cfg: ExperimentConfig, wall_time: float | None = None) -> dict:
    """Write ``config.toml``, one ``<kind>_<table>.csv`` per table, binary
    snapshots, ``<kind>_summary.json`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    files = {"config": cfg.save(out / "config.toml").name}
    schema = {}
    for t in result.tables:
        name = f"{result.kind}_{t.name}.csv"
        write_csv(out / name, t.columns, t.rows)
        schema[name] = {"columns": list(t.columns), "rows": len(t.rows), "description": t.description}
    snaps = []
    for name, kind, data, t, seed in result.snapshots:
        fname = f"{result.kind}_{name}.bin"
        write_snapshot(out / fname, kind, data, t, seed)
        snaps.append(fname)
    summary_name = f"{result.kind}_summary.json"
    _write_json(out / summary_name, result.summary)
    manifest = {
        "kind": result.kind,
        "config_hash": cfg.hash(),
        "versions": _versions(),
        "seeds": result.seeds,
        "threads": cfg["experiment.threads"],
        "wall_time_s": wall_time,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "files": {**files, "tables": schema, "snapshots": snaps, "summary": summary_name},
    }
    _write_json(out / "manifest.json", manifest)
    return manifest
