"""Command-line experiment runner.

    subquad-bsde run CONFIG [--seed N] [--paths N] [--steps N] [--out DIR] [--threads N] [--deterministic]
    subquad-bsde selftest
    subquad-bsde envelope-certify --alpha A --beta B --gamma G --eps E

Exit status: 0 when every gated check passes, 1 when one fails, 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, envelope as env
from .bsde_solver import (MarkovBsdeProblem, RegressionBasis, additive_schedule, class_D_diagnostic,
                          comparison_experiment, g0_integral, make_terminal, solve_backward,
                          solve_truncated_sequence, stability_experiment, truncation_report)
from .config import ExperimentConfig, Named, ProblemCfg, load_config
from .errors import ConfigError, SubQuadError
from .feynman_kac import McParams, PdeProblem, cross_validate, fd_solve, growth_check, profile_table
from .generator import make_generator
from .report import DIAGNOSTIC, FAIL, PASS, Report, to_jsonable
from .sde import make_diffusion, simulate

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass
class Outcome:
    reports: list[Report]
    csv: dict[str, tuple[list[str], np.ndarray]] = field(default_factory=dict)
    dat: dict[str, tuple[str, np.ndarray]] = field(default_factory=dict)


# --------------------------------------------------------------------------
# building objects from config sections
# --------------------------------------------------------------------------

def _build(factory, named: Named, where: str):
    try:
        return factory(named.name, **named.args)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_problem(pc: ProblemCfg, where: str = "problem") -> MarkovBsdeProblem:
    diff = _build(make_diffusion, pc.diffusion, f"{where}.diffusion")
    g = _build(make_generator, pc.generator, f"{where}.generator")
    h = _build(make_terminal, pc.terminal, f"{where}.terminal")
    if pc.generator_shift:
        g = g.shifted(pc.generator_shift)
    if pc.terminal_shift:
        h = h.plus(pc.terminal_shift)
    if len(pc.x0) != diff.dim_x:
        raise ConfigError(f"{where}.x0: expected {diff.dim_x} coordinate(s), got {len(pc.x0)}")
    if not pc.T > pc.t0:
        raise ConfigError(f"{where}.T: must exceed t0")
    return MarkovBsdeProblem(diff, h, g, pc.t0, np.array(pc.x0, dtype=float), pc.T)


def build_pde(cfg: ExperimentConfig) -> PdeProblem:
    pc = cfg.pde
    try:
        return PdeProblem(_build(make_diffusion, pc.diffusion, "pde.diffusion"),
                          _build(make_generator, pc.generator, "pde.generator"),
                          _build(make_terminal, pc.terminal, "pde.terminal"),
                          pc.x_lo, pc.x_hi, pc.T, pc.boundary)
    except ValueError as exc:
        raise ConfigError(f"pde: {exc}") from None


def _basis(cfg: ExperimentConfig) -> RegressionBasis:
    b = cfg.mc.basis
    return RegressionBasis(kind=b.kind, degree=b.degree, n_bins=b.n_bins)


def _solver_kw(cfg: ExperimentConfig) -> dict:
    return {"picard_tol": cfg.mc.picard_tol, "picard_max": cfg.mc.picard_max, "deterministic": cfg.deterministic}


def _batch(cfg: ExperimentConfig, problem: MarkovBsdeProblem):
    return simulate(problem.diffusion, problem.t0, problem.x0, problem.T, cfg.mc.n_steps, cfg.mc.n_paths, cfg.seed)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _envelope_certify(cfg: ExperimentConfig) -> Outcome:
    e = cfg.envelope
    try:
        params = env.SubQuadParams(e.alpha, e.beta, e.gamma)
        curve = env.EnvelopeCurve.for_params(params, e.eps, e.T)
    except ValueError as exc:
        raise ConfigError(f"envelope: {exc}") from None
    cert = env.certify_delta_details(curve)
    g = e.grid
    ineq = env.verify_envelope_inequality(curve, cert.delta, env.GridSpec(g.n_s, g.n_x, g.x_hi, g.n_z, g.z_hi))
    s_in = np.linspace(0.0, e.T, 102)[1:-1]
    resid = float(np.max(np.abs(curve.mu_prime(s_in) - curve.ode_rhs(curve.mu(s_in)))
                         / np.maximum(1.0, np.abs(curve.mu_prime(s_in)))))
    table = env.mu_table(curve, e.n_curve_samples)
    reps = [
        Report("delta_certificate", PASS if cert.delta > 0 else FAIL,
               metrics={"delta": cert.delta, "x_min": cert.x_min, "x_max": cert.x_max, "expansions": cert.expansions,
                        "curve": curve.kind.value, "k_eps": curve.k_eps, "log_c_const": curve.log_c_const}),
        ineq,
        Report("mu_curve_ode", PASS if resid <= 1e-7 else FAIL, metrics={"max_relative_residual": resid,
                                                                         "mu_T": float(curve.mu(e.T))}),
    ]
    return Outcome(reps, csv={"mu_curve.csv": (["s", "mu"], table)}, dat={"mu_curve.dat": ("s mu", table)})


def _solve_report(sol, name="solve") -> Report:
    return Report(name, DIAGNOSTIC, metrics=sol.summary(), stderr=sol.y0_stderr)


def _apriori(cfg: ExperimentConfig, problem, batch, sol) -> Report:
    p = problem.generator.params
    horizon = problem.T - problem.t0
    mu_target = cfg.apriori.mu_factor * env.mu_zero(p, horizon)
    eps = env.match_epsilon(p, horizon, mu_target)
    curve = env.EnvelopeCurve.for_params(p, eps, horizon)
    bound = env.AprioriBound.from_curve(curve)
    xi = np.abs(problem.terminal(batch.states[:, -1, :])) + g0_integral(problem, batch)
    return class_D_diagnostic(sol, curve, bound, xi)


def _solve_bsde(cfg: ExperimentConfig) -> Outcome:
    problem = build_problem(cfg.problem)
    batch = _batch(cfg, problem)
    sol = solve_backward(problem, batch, _basis(cfg), **_solver_kw(cfg))
    reps = [_solve_report(sol)]
    if cfg.apriori.enabled:
        reps.append(_apriori(cfg, problem, batch, sol))
    table = sol.per_time_table()
    return Outcome(reps, csv={"solution.csv": (["t", "mean_Y", "stderr_Y", "mean_abs_Z"], table)},
                   dat={"solution.dat": ("t mean_Y stderr_Y mean_abs_Z", table)})


def _truncation(cfg: ExperimentConfig) -> Outcome:
    problem = build_problem(cfg.problem)
    batch = _batch(cfg, problem)
    tc = cfg.truncation
    res = solve_truncated_sequence(problem, batch, _basis(cfg), tc.n_list, tc.p_list, **_solver_kw(cfg))
    reps = [truncation_report(res, tc.slack)]
    if cfg.apriori.enabled and res.untruncated is not None:
        reps.append(_apriori(cfg, problem, batch, res.untruncated))
    n_col = np.asarray(tc.n_list, float)[:, None]
    head = ["n"] + [f"y0_p{p:g}" for p in tc.p_list]
    y_tab = np.hstack([n_col, res.y0])
    s_tab = np.hstack([n_col, res.stderr])
    return Outcome(reps, csv={"truncation_y0.csv": (head, y_tab),
                              "truncation_stderr.csv": (["n"] + [f"se_p{p:g}" for p in tc.p_list], s_tab)},
                   dat={"truncation.dat": (" ".join(head), y_tab)})


def _comparison(cfg: ExperimentConfig) -> Outcome:
    problem = build_problem(cfg.problem)
    prime = build_problem(cfg.problem_prime, "problem_prime")
    if (prime.t0, prime.T, tuple(prime.x0)) != (problem.t0, problem.T, tuple(problem.x0)):
        raise ConfigError("problem_prime: t0, T and x0 must match problem (paired batch)")
    batch = _batch(cfg, problem)
    try:
        rep = comparison_experiment(problem, prime, batch, _basis(cfg), **_solver_kw(cfg))
    except SubQuadError as exc:
        rep = Report("comparison", FAIL, notes=[f"{type(exc).__name__}: {exc}"],
                     metrics={"nodes": getattr(exc, "nodes", [])[:10]})
        return Outcome([rep])
    tab = np.asarray(rep.tables["q99_vs_t"])
    return Outcome([rep], csv={"comparison.csv": (["t", "q99_diff", "pooled_stderr"], tab)},
                   dat={"comparison.dat": ("t q99_diff pooled_stderr", tab)})


def _stability(cfg: ExperimentConfig) -> Outcome:
    problem = build_problem(cfg.problem)
    sc = cfg.stability
    h_shape = _build(make_terminal, sc.terminal_shape, "stability.terminal_shape") if sc.terminal_shape else None
    g_shape = _build(make_generator, sc.generator_shape, "stability.generator_shape") if sc.generator_shape else None
    batch = _batch(cfg, problem)
    sched = additive_schedule(problem, sc.n_max, h_shape, g_shape)
    rep = stability_experiment(problem, sched, batch, _basis(cfg), **_solver_kw(cfg))
    tab = np.asarray(rep.tables["S_vs_n"])
    head = ["n", "delta", "S", "S_stderr", "D", "D_stderr"]
    return Outcome([rep], csv={"stability.csv": (head, tab)}, dat={"stability.dat": (" ".join(head), tab)})


def _mc(cfg: ExperimentConfig) -> McParams:
    return McParams(n_paths=cfg.mc.n_paths, n_steps=cfg.mc.n_steps, seed=cfg.seed, basis=_basis(cfg),
                    deterministic=cfg.deterministic)


def _feynman_kac(cfg: ExperimentConfig) -> Outcome:
    pde = build_pde(cfg)
    if not cfg.points:
        raise ConfigError("points: FeynmanKac needs at least one (t, x) point")
    rep, rows = cross_validate(pde, cfg.points, _mc(cfg), cfg.fd.n_t, cfg.fd.n_x)
    cols = ["t", "x", "u_fd", "u_mc", "stderr", "abs_diff"]
    u_tab = np.array([[float(r[c]) for c in cols] for r in rows])
    prof = profile_table(fd_solve(pde, cfg.fd.n_t, cfg.fd.n_x), 0)
    return Outcome([rep], csv={"u_table.csv": (cols, u_tab), "u_profile.csv": (["x", "u"], prof)},
                   dat={"u_profile.dat": ("x u(t0,x)", prof)})


def _growth(cfg: ExperimentConfig) -> Outcome:
    pde = build_pde(cfg)
    sol = fd_solve(pde, cfg.fd.n_t, cfg.fd.n_x)
    gc = cfg.growth
    rep = growth_check(sol.x_window, sol.u_window, gc.p, fit=True, split=gc.split, factor=gc.factor)
    rep.metrics["fd"] = sol.meta
    prof = profile_table(sol, 0)
    return Outcome([rep], csv={"u_profile.csv": (["x", "u"], prof)}, dat={"u_profile.dat": ("x u(t0,x)", prof)})


def _selftest(cfg: ExperimentConfig) -> Outcome:
    from .selftest import run_all

    return Outcome(run_all(timed=not cfg.deterministic))


EXPERIMENTS = {
    "EnvelopeCertify": _envelope_certify,
    "SolveBsde": _solve_bsde,
    "TruncationLadder": _truncation,
    "Comparison": _comparison,
    "Stability": _stability,
    "FeynmanKac": _feynman_kac,
    "GrowthCheck": _growth,
    "SelfTest": _selftest,
}


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(table):
            w.writerow([repr(float(v)) for v in row])


def emit_plot_data(outcome: Outcome, out_dir) -> list[Path]:
    """Whitespace-separated column files, one per curve or table, with a ``#`` header line."""
    out_dir = Path(out_dir)
    written = []
    for name, (header, table) in outcome.dat.items():
        path = out_dir / name
        np.savetxt(path, np.atleast_2d(table), fmt="%.17g", header=header)
        written.append(path)
    return written


def build_run_report(cfg: ExperimentConfig, outcome: Outcome, timestamp: str) -> dict:
    echo = cfg.model_dump(mode="json")
    # run-location metadata lives in timings.json so reruns elsewhere compare equal
    echo.pop("output_dir", None)
    failed = [r.name for r in outcome.reports if r.status == FAIL]
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "subquad-bsde",
        "tool_version": __version__,
        "kind": cfg.kind,
        "name": cfg.name,
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "status": FAIL if failed else PASS,
        "failed_checks": failed,
        "config": echo,
        "checks": [r.to_dict() for r in outcome.reports],
        "timestamp": timestamp,
    }


def execute(cfg: ExperimentConfig, out_dir: Path | None = None) -> tuple[int, dict]:
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        outcome = EXPERIMENTS[cfg.kind](cfg)
    except ConfigError:
        raise
    except SubQuadError as exc:
        # numerical failure inside an experiment is a failed check, reported as such
        outcome = Outcome([Report(cfg.kind, FAIL, notes=[f"{type(exc).__name__}: {exc}"])])
    elapsed = time.perf_counter() - t0
    timings = {"total_seconds": elapsed, "output_dir": str(out_dir),
               "checks": {r.name: r.runtime for r in outcome.reports}}
    if cfg.deterministic:
        for r in outcome.reports:
            r.runtime = None
    else:
        for r in outcome.reports:
            if r.runtime is None:
                r.runtime = elapsed / max(1, len(outcome.reports))
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    report = build_run_report(cfg, outcome, stamp)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    with open(out_dir / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(timings), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, (header, table) in outcome.csv.items():
        _write_csv(out_dir / name, header, table)
    emit_plot_data(outcome, out_dir)
    return (EXIT_FAIL if report["status"] == FAIL else EXIT_OK), report


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    upd: dict = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.out is not None:
        upd["output_dir"] = args.out
    if args.deterministic:
        upd["deterministic"] = True
    mc = {}
    if args.paths is not None:
        mc["n_paths"] = args.paths
    if args.steps is not None:
        mc["n_steps"] = args.steps
    data = cfg.model_dump()
    data.update(upd)
    data["mc"].update(mc)
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:
        raise ConfigError(f"override: {exc}") from None


def _summary_line(report: dict) -> str:
    return f"{report['kind']} {report['name']}: {report['status']} ({len(report['checks'])} checks)"


def _print_checks(report: dict) -> None:
    for c in report["checks"]:
        print(f"  [{c['status']:>10}] {c['name']}")


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _set_threads(args.threads)
    code, report = execute(cfg)
    print(_summary_line(report))
    _print_checks(report)
    return code


def cmd_selftest(args) -> int:
    cfg = ExperimentConfig(kind="SelfTest", name="selftest", output_dir=args.out or "selftest_out",
                           deterministic=True)
    code, report = execute(cfg)
    print(_summary_line(report))
    _print_checks(report)
    return code


def cmd_envelope(args) -> int:
    cfg = ExperimentConfig.model_validate({
        "kind": "EnvelopeCertify", "name": "envelope-certify", "deterministic": True,
        "output_dir": args.out or "envelope_out",
        "envelope": {"alpha": args.alpha, "beta": args.beta, "gamma": args.gamma, "eps": args.eps, "T": args.T},
    })
    code, report = execute(cfg)
    print(_summary_line(report))
    for c in report["checks"]:
        key = {"delta_certificate": "delta", "mu_curve_ode": "max_relative_residual"}.get(c["name"], "min_value")
        print(f"  [{c['status']:>10}] {c['name']}: {key} = {c['metrics'].get(key)}")
    return code


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subquad-bsde", description="Sub-quadratic BSDE experiment runner.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment described by a YAML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--paths", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int)
    r.add_argument("--deterministic", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("selftest", help="run the fast sanity suite")
    s.add_argument("--out")
    s.set_defaults(func=cmd_selftest)

    e = sub.add_parser("envelope-certify", help="certify delta and the envelope inequality")
    e.add_argument("--alpha", type=float, required=True)
    e.add_argument("--beta", type=float, default=0.0)
    e.add_argument("--gamma", type=float, default=1.0)
    e.add_argument("--eps", type=float, required=True)
    e.add_argument("--T", type=float, default=1.0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_envelope)
    return ap


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
