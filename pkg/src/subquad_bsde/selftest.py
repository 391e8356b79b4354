"""Fast sanity suite: degenerate cases with exact answers, one batch per module."""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import envelope as env
from . import generator as gen
from .bsde_solver import (MarkovBsdeProblem, additive_schedule, comparison_experiment, make_terminal,
                          solve_backward, stability_experiment)
from .errors import InfeasibleError
from .feynman_kac import PdeProblem, fd_solve, growth_check, u_from_bsde, McParams
from .report import FAIL, PASS, Report
from .sde import brownian, exp_moment_diagnostic, simulate


def _envelope() -> list[Report]:
    p = env.SubQuadParams(1.5, 0.0, 1.0)
    pb = env.SubQuadParams(1.5, 1.0, 1.0)
    ct = env.EnvelopeCurve.for_params(p, 0.5, 1.0)
    cb = env.EnvelopeCurve.for_params(pb, 0.5, 1.0)
    k_pos = all(env.k_alpha_eps(a, e) > 0 for a in (1.1, 1.5, 1.9) for e in (1e-6, 1.0, 1e3))
    scal = env.c_tilde(1.5, 2.0) / env.c_tilde(1.5, 1.0)
    mu0_exact = env.mu(ct, 0.0) == 0.5 and env.mu(cb, 0.0) == 0.5
    rt = env.match_epsilon(p, 1.0, env.mu(env.EnvelopeCurve.for_params(p, 0.3, 1.0), 1.0))
    try:
        env.match_epsilon(p, 1.0, 0.5 * env.mu_zero(p, 1.0))
        infeasible = False
    except InfeasibleError:
        infeasible = True
    tf = env.TestFunction(ct)
    v = env.phi_eval(tf, 0.3, 0.0)
    phi0 = math.exp(env.mu(ct, 0.3) * ct.k_eps ** p.r)
    psi_ok = float(env.psi(0.0, 3.0, 1.5)[0]) == 1.0 and float(env.psi(7.0, 0.0, 1.5)[0]) == 1.0
    bound = env.AprioriBound.from_curve(ct, delta=0.1)
    rhs0, se0 = env.apriori_rhs(bound, np.zeros(5))
    rhsc, sec = env.apriori_rhs(bound, np.full(5, 2.0))
    psic = float(env.psi(2.0, bound.mu_T, 1.5)[0])
    zslice = env.envelope_lhs_over_phi(ct, 0.1, np.linspace(0, 1, 5), 1.0, 0.0)
    return [
        Report("envelope.k_positive", PASS if k_pos else FAIL),
        Report("envelope.c_tilde_gamma_scaling", PASS if abs(scal - 2.0 ** (2 / 0.5)) <= 1e-12 * scal else FAIL,
               metrics={"ratio": scal}),
        Report("envelope.mu_at_zero", PASS if mu0_exact else FAIL),
        Report("envelope.match_roundtrip", PASS if abs(rt - 0.3) <= 1e-8 else FAIL, metrics={"eps": rt}),
        Report("envelope.match_infeasible", PASS if infeasible else FAIL),
        Report("envelope.phi_at_zero", PASS if abs(float(v.phi) - phi0) <= 1e-12 * phi0 else FAIL),
        Report("envelope.psi_trivial", PASS if psi_ok else FAIL),
        Report("envelope.apriori_degenerate",
               PASS if (rhs0 == bound.big_c and se0 == 0 and rhsc == bound.big_c * psic and sec == 0) else FAIL),
        Report("envelope.z_zero_slice", PASS if bool(np.all(zslice >= 0)) else FAIL,
               metrics={"min": float(np.min(zslice))}),
    ]


def _generator() -> list[Report]:
    out = []
    z = gen.make_generator("zero")
    out.append(gen.check_H1(z).to_report("generator.zero_H1"))
    out.append(gen.check_H1(gen.abs_z_alpha(1.0, 1.5)).to_report("generator.abs_z_alpha_H1"))
    c = gen.constant(0.7)
    out.append(gen.check_H1_one_sided(c, variant="H1doubleprime").to_report("generator.constant_H1pp"))
    out.append(gen.check_H2(gen.abs_z_alpha(1.0, 1.5), mode="convex", n_pairs=500).to_report("generator.norm_power_convex"))
    aff = gen.affine(0.3, -0.2, 0.1)
    both = gen.check_H2(aff, mode="convex", n_pairs=500).passed and gen.check_H2(aff, mode="concave", n_pairs=500).passed
    out.append(Report("generator.affine_convex_concave", PASS if both else FAIL))
    t5 = float(gen.truncate_terminal(np.array([5.0]), 3, 1)[0])
    tm5 = float(gen.truncate_terminal(np.array([-5.0]), 3, 2)[0])
    out.append(Report("generator.truncate_terminal", PASS if (t5 == 3.0 and tm5 == -2.0) else FAIL))
    s = gen.sin_y()
    tr = gen.truncate(s, 2, 2)
    x = np.zeros((50, 1))
    y = np.linspace(-10, 10, 50)
    zz = np.zeros((50, 1))
    out.append(Report("generator.truncation_identity_when_bounded",
                      PASS if np.array_equal(tr(0.0, x, y, zz), s(0.0, x, y, zz)) else FAIL))
    return out


def _sde() -> list[Report]:
    still = simulate(brownian(sigma=0.0), 0.0, [1.5], 1.0, 10, 4, seed=1)
    moving = simulate(brownian(sigma=0.0, drift=1.0), 0.0, [1.5], 2.0, 8, 4, seed=1)  # dyadic dt: Euler sum is exact
    est, se, _ = exp_moment_diagnostic(still, 1.5, 1.0)
    b = simulate(brownian(), 0.0, [0.0], 1.0, 20, 500, seed=3)
    mono = [exp_moment_diagnostic(b, 1.2, lam)[0] for lam in (0.5, 1.0, 2.0)]
    return [
        Report("sde.frozen_state", PASS if bool(np.all(still.states == 1.5)) else FAIL),
        Report("sde.constant_drift", PASS if bool(np.all(moving.states[:, -1, 0] == 3.5)) else FAIL,
               metrics={"x_T": float(moving.states[0, -1, 0])}),
        Report("sde.exp_moment_deterministic",
               PASS if (est == math.exp(1.5 ** 1.5) and se == 0.0) else FAIL),
        Report("sde.exp_moment_monotone_in_lambda", PASS if mono[0] <= mono[1] <= mono[2] else FAIL),
    ]


def _solver() -> list[Report]:
    bm = brownian()
    batch = simulate(bm, 0.0, [1.0], 1.0, 20, 4000, seed=11)
    mart = MarkovBsdeProblem(bm, make_terminal("identity"), gen.zero(), 0.0, np.array([1.0]), 1.0)
    sol = solve_backward(mart, batch)
    det = simulate(brownian(sigma=0.0), 0.0, [0.0], 1.0, 20, 8, seed=0)
    cst = MarkovBsdeProblem(brownian(sigma=0.0), make_terminal("zero"), gen.constant(0.7), 0.0,
                            np.array([0.0]), 1.0)
    sc = solve_backward(cst, det)
    shifted = mart.with_(terminal=mart.terminal.plus(1.0))
    comp = comparison_experiment(mart, shifted, batch, check_structure=False)
    same = solve_backward(mart, batch)
    stab = stability_experiment(mart, additive_schedule(mart, 3), batch)
    s_vals = np.asarray(stab.metrics["S"])
    return [
        Report("bsde.terminal_exact", PASS if np.array_equal(sol.Y_hat[:, -1], batch.states[:, -1, 0]) else FAIL),
        Report("bsde.martingale", PASS if abs(sol.y0 - 1.0) <= 3 * sol.y0_stderr else FAIL,
               metrics={"y0": sol.y0}, stderr=sol.y0_stderr),
        Report("bsde.constant_generator", PASS if abs(sc.y0 - 0.7) <= 1e-12 else FAIL, metrics={"y0": sc.y0}),
        Report("bsde.comparison_unit_gap",
               PASS if comp.passed and abs(comp.metrics["min_gap"] - 1) <= 1e-12 and abs(comp.metrics["max_gap"] - 1) <= 1e-12 else FAIL,
               metrics={"min_gap": comp.metrics["min_gap"], "max_gap": comp.metrics["max_gap"]}),
        Report("bsde.rerun_bit_exact", PASS if np.array_equal(same.Y_hat, sol.Y_hat) else FAIL),
        Report("bsde.stability_additive", PASS if np.allclose(s_vals, [0.5, 0.25, 0.125], rtol=0, atol=1e-12) else FAIL,
               metrics={"S": s_vals}),
    ]


def _feynman_kac() -> list[Report]:
    bm = brownian()
    lin = PdeProblem(bm, gen.zero(), make_terminal("identity"), -2.0, 2.0, 1.0)
    sol = fd_solve(lin, 200, 41)
    lin_err = float(np.max(np.abs(sol.u - sol.x[None, :])))
    at_T = u_from_bsde(lin, [(1.0, 0.7)], McParams(n_paths=10))[0]
    bounded = growth_check(sol.x_window, np.cos(sol.x_window)[None, :], p=1.0)
    return [
        Report("fk.linear_data_exact", PASS if lin_err <= 1e-12 else FAIL, metrics={"max_err": lin_err}),
        Report("fk.terminal_time", PASS if at_T.u_hat == 0.7 and at_T.stderr == 0.0 else FAIL),
        Report("fk.bounded_growth", PASS if bounded.metrics["C_hat"] == 1.0 else FAIL,
               metrics={"C_hat": bounded.metrics["C_hat"]}),
    ]


SUITES: dict[str, Callable[[], list[Report]]] = {
    "envelope": _envelope,
    "generator": _generator,
    "sde": _sde,
    "bsde_solver": _solver,
    "feynman_kac": _feynman_kac,
}


def run_all(timed: bool = True) -> list[Report]:
    out = []
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            reps = fn()
        except Exception as exc:  # a crashing suite is a failed check, not a crashed run
            reps = [Report(f"{name}.suite", FAIL, notes=[f"{type(exc).__name__}: {exc}"])]
        dt = time.perf_counter() - t0
        for r in reps:
            r.runtime = dt / len(reps) if timed else None
        out.extend(reps)
    return out
