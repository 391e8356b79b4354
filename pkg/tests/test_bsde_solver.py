import math

import numpy as np
import pytest

from subquad_bsde import envelope as env
from subquad_bsde import generator as gen
from subquad_bsde.bsde_solver import (MarkovBsdeProblem, Perturbation, RegressionBasis, additive_schedule,
                                      class_D_diagnostic, comparison_experiment, g0_integral, make_terminal,
                                      solve_backward, solve_truncated_sequence, stability_experiment,
                                      theta_gap_experiment, truncation_report, write_solution_csv)
from subquad_bsde.errors import PicardDivergenceError, PreconditionError
from subquad_bsde.sde import brownian, simulate


def bm_problem(h="identity", g=None, x0=0.0, T=1.0):
    return MarkovBsdeProblem(brownian(), make_terminal(h) if isinstance(h, str) else h, g or gen.zero(), 0.0,
                             np.array([x0]), T)


@pytest.fixture(scope="module")
def batch_x1():
    return simulate(brownian(), 0.0, [1.0], 1.0, 50, 10000, seed=17)


def test_terminal_consistency_bit_exact(benchmark_problem, small_batch):
    sol = solve_backward(benchmark_problem, small_batch)
    np.testing.assert_array_equal(sol.Y_hat[:, -1], np.cos(small_batch.states[:, -1, 0]))
    np.testing.assert_array_equal(sol.Z_hat[:, -1], sol.Z_hat[:, -2])


def test_martingale(batch_x1):
    sol = solve_backward(bm_problem(x0=1.0), batch_x1)
    assert sol.y0_stderr > 0
    assert abs(sol.y0 - 1.0) <= 3 * sol.y0_stderr
    # Z = 1 for Y = X
    assert abs(np.mean(sol.Z_hat[:, :-1, 0]) - 1.0) < 0.02


def test_linear_decay_closed_form():
    p = bm_problem(h=make_terminal("constant", c=1.0), g=gen.linear_decay(0.5))
    b = simulate(p.diffusion, 0.0, [0.0], 1.0, 100, 2000, seed=3)
    sol = solve_backward(p, b)
    assert abs(sol.y0 - math.exp(-0.5)) <= max(3 * sol.y0_stderr, 0.02 * math.exp(-0.5))


def test_grid_refinement_decreasing_gaps():
    p = bm_problem(h=make_terminal("constant", c=1.0), g=gen.linear_decay(0.5))
    y = [solve_backward(p, simulate(p.diffusion, 0.0, [0.0], 1.0, n, 500, seed=3)).y0 for n in (50, 100, 200, 400)]
    gaps = np.abs(np.diff(y))
    assert np.all(gaps[1:] < gaps[:-1])
    assert abs(y[-1] - math.exp(-0.5)) < 1e-3


def test_constant_generator_exact_deterministic():
    p = MarkovBsdeProblem(brownian(sigma=0.0), make_terminal("zero"), gen.constant(0.7), 0.0, np.array([0.0]), 1.0)
    b = simulate(p.diffusion, 0.0, [0.0], 1.0, 16, 5, seed=0)
    sol = solve_backward(p, b)
    assert abs(sol.y0 - 0.7) <= 1e-12 and sol.y0_stderr == 0.0


def test_constant_generator_stochastic_diffusion(small_batch):
    sol = solve_backward(bm_problem(h="zero", g=gen.constant(0.7)), small_batch)
    assert abs(sol.y0 - 0.7) <= 1e-12


def test_zero_generator_is_plain_regression(small_batch):
    p = bm_problem(h="cos")
    sol = solve_backward(p, small_batch)
    # X_0 is constant, so the basis at t_0 is the constant function
    assert sol.y0 == pytest.approx(float(np.mean(np.cos(small_batch.states[:, -1, 0]))), abs=1e-14)


def test_affine_closed_form():
    a, b, c, x0 = -0.3, 0.2, 0.1, 0.5
    p = bm_problem(g=gen.affine(a, b, c), x0=x0)
    batch = simulate(p.diffusion, 0.0, [x0], 1.0, 100, 10000, seed=9)
    sol = solve_backward(p, batch)
    e = math.exp(a)
    exact = e * x0 + b * e + c * (e - 1) / a
    assert abs(sol.y0 - exact) <= max(3 * sol.y0_stderr, 0.02 * abs(exact))


def test_bins_basis_martingale(batch_x1):
    sol = solve_backward(bm_problem(x0=1.0), batch_x1, RegressionBasis(kind="bins", n_bins=16))
    assert abs(sol.y0 - 1.0) <= 3 * sol.y0_stderr


def test_basis_fallback_recorded():
    b = simulate(brownian(), 0.0, [0.0], 1.0, 4, 6, seed=1)
    sol = solve_backward(bm_problem(h="cos"), b, RegressionBasis(degree=8))
    assert sol.summary()["basis_fallbacks"]


def test_picard_divergence():
    p = bm_problem(h=make_terminal("constant", c=1.0), g=gen.affine(300.0))
    b = simulate(p.diffusion, 0.0, [0.0], 1.0, 10, 50, seed=1)
    with pytest.raises(PicardDivergenceError):
        solve_backward(p, b)


def test_horizon_mismatch(small_batch):
    with pytest.raises(ValueError):
        solve_backward(bm_problem(T=2.0), small_batch)


def test_solution_csv(tmp_path, small_batch):
    sol = solve_backward(bm_problem(h="cos"), small_batch)
    write_solution_csv(sol, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,mean_Y,stderr_Y,mean_abs_Z" and len(lines) == small_batch.n_steps + 2


# ---------------------------------------------------------------- truncation

def test_truncation_bounded_problem_constant(small_batch):
    p = bm_problem(h="cos", g=gen.sin_y())
    res = solve_truncated_sequence(p, small_batch, n_list=(1, 2, 4), p_list=(1, 2, 4))
    sub = res.y0[1:, 1:]
    assert np.all(sub == sub[0, 0])
    assert res.untruncated.y0 == sub[0, 0]
    assert truncation_report(res).passed


def test_truncation_active_monotone(small_batch):
    p = bm_problem(h=make_terminal("abs_power", p=1.2), g=gen.composite_example(p=1.2))
    res = solve_truncated_sequence(p, small_batch, n_list=(1, 2, 4, 16), p_list=(1, 2, 4, 16))
    mono = res.monotonicity()
    assert mono["monotone"], mono
    assert np.ptp(res.y0) > 0.1  # truncation is actually active
    with pytest.raises(ValueError):
        solve_truncated_sequence(p, small_batch, n_list=(2, 1))


# ---------------------------------------------------------------- a-priori bound

def _bound(p, horizon=1.0, factor=1.1):
    eps = env.match_epsilon(p, horizon, factor * env.mu_zero(p, horizon))
    curve = env.EnvelopeCurve.for_params(p, eps, horizon)
    return curve, env.AprioriBound.from_curve(curve)


def test_class_D_zero_problem(small_batch):
    prob = bm_problem(h="zero")
    sol = solve_backward(prob, small_batch)
    curve, bound = _bound(prob.generator.params)
    rep = class_D_diagnostic(sol, curve, bound, np.zeros(small_batch.n_paths))
    assert rep.passed and rep.metrics["rhs"] == bound.big_c


def test_class_D_martingale_and_subquadratic(small_batch):
    for prob in (bm_problem(), bm_problem(h="abs", g=gen.abs_z_alpha(0.5, 1.5))):
        sol = solve_backward(prob, small_batch)
        curve, bound = _bound(prob.generator.params)
        xi = np.abs(prob.terminal(small_batch.states[:, -1, :])) + g0_integral(prob, small_batch)
        rep = class_D_diagnostic(sol, curve, bound, xi)
        assert rep.passed, rep.metrics
        assert np.all(rep.tables["ratio_vs_t"][:, 1] <= 1 + 3 * rep.tables["ratio_vs_t"][:, 2])


# ---------------------------------------------------------------- comparison

def test_comparison_unit_shift_exact(small_batch):
    p = bm_problem()
    rep = comparison_experiment(p, p.with_(terminal=p.terminal.plus(1.0)), small_batch, check_structure=False)
    assert rep.passed
    assert abs(rep.metrics["min_gap"] - 1) <= 1e-12 and abs(rep.metrics["max_gap"] - 1) <= 1e-12


def test_comparison_generator_shift(benchmark_problem, small_batch):
    g = benchmark_problem.generator
    rep = comparison_experiment(benchmark_problem, benchmark_problem.with_(generator=g + gen.constant(0.1)),
                                small_batch)
    assert rep.passed and rep.metrics["y0_prime"] >= rep.metrics["y0"]


def test_comparison_identical_bit_exact(benchmark_problem, small_batch):
    rep = comparison_experiment(benchmark_problem, benchmark_problem, small_batch)
    assert rep.passed and rep.metrics["min_gap"] == 0.0 and rep.metrics["max_gap"] == 0.0


def test_comparison_precondition(small_batch):
    p = bm_problem()
    with pytest.raises(PreconditionError) as ei:
        comparison_experiment(p, p.with_(terminal=p.terminal.plus(-1.0)), small_batch)
    assert ei.value.nodes


# ---------------------------------------------------------------- stability

def test_stability_zero_schedule_bit_exact(benchmark_problem, small_batch):
    sched = [Perturbation(0.0, benchmark_problem) for _ in range(3)]
    rep = stability_experiment(benchmark_problem, sched, small_batch)
    assert np.all(rep.metrics["S"] == 0.0) and np.all(rep.metrics["D"] == 0.0)


def test_stability_additive_constant_zero_generator(small_batch):
    p = bm_problem(h="zero")
    rep = stability_experiment(p, additive_schedule(p, 6), small_batch)
    assert np.array_equal(rep.metrics["S"], 2.0 ** -np.arange(1, 7))
    assert rep.passed


def test_stability_cos_shape_decays(benchmark_problem, small_batch):
    rep = stability_experiment(benchmark_problem, additive_schedule(benchmark_problem, 6, make_terminal("cos")),
                               small_batch)
    S = rep.metrics["S"]
    assert rep.passed and S[-1] < S[0] / 4


def test_stability_generator_shape(benchmark_problem, small_batch):
    sched = additive_schedule(benchmark_problem, 4, generator_shape=gen.sin_y())
    assert sched[0].problem.generator.depends_on_y
    rep = stability_experiment(benchmark_problem, sched, small_batch)
    assert rep.passed


# ---------------------------------------------------------------- theta gap

def test_theta_gap_identical_equals_positive_part(benchmark_problem, small_batch):
    rep = theta_gap_experiment(benchmark_problem, benchmark_problem, [0.1, 0.5, 0.9], small_batch)
    sol = solve_backward(benchmark_problem, small_batch)
    tab = rep.tables["theta_gap"]
    for i, col in ((0, 0), (1, 1)):
        rows = tab[i::2]
        np.testing.assert_allclose(rows[:, 2], np.mean(np.maximum(sol.Y_hat[:, col], 0)), rtol=1e-10, atol=1e-12)


def test_theta_gap_bounded_as_theta_to_one(benchmark_problem, small_batch):
    pp = benchmark_problem.with_(terminal=benchmark_problem.terminal.plus(0.1))
    rep = theta_gap_experiment(benchmark_problem, pp, [0.5, 0.9, 0.99], small_batch)
    solp = solve_backward(pp, small_batch)
    assert np.all(rep.tables["theta_gap"][:, 5] <= np.max(np.abs(solp.Y_hat[:, :2])) + 1e-9)
