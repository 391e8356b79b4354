"""Least-squares Monte-Carlo backward solver and the paired-batch experiments built on it.

Scheme on the simulation grid t_0 < ... < t_N (pathwise multi-step form)::

    zeta_N = h(X_N)
    E_i    = regression of zeta_{i+1} on basis(X_i)
    Z_i    = regression of (zeta_{i+1} - E_i) dW_i / dt on basis(X_i)
    Y_i    = E_i + dt g(t_i, X_i, Y_i, Z_i)          (Picard in Y, Z frozen)
    zeta_i = zeta_{i+1} + dt g(t_i, X_i, Y_i, Z_i)

Subtracting E_i in the Z regression is a control variate; it leaves the
conditional expectation unchanged since E[dW_i | X_i] = 0.  The pathwise
``zeta`` makes the zero-generator solve a plain regression of h(X_T).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre

from . import _kernels
from .envelope import AprioriBound, EnvelopeCurve, apriori_rhs, mu, psi
from .errors import PicardDivergenceError, PreconditionError
from .generator import (MarkovGenerator, SampleGrid, check_H2, check_H2_prime, truncate,
                        truncate_terminal, znorm)
from .report import DIAGNOSTIC, FAIL, PASS, Report
from .sde import DiffusionSpec, PathBatch

# --------------------------------------------------------------------------
# problems and terminal functions
# --------------------------------------------------------------------------


@dataclass
class Terminal:
    fn: Callable[[np.ndarray], np.ndarray]  # (N, n) -> (N,)
    name: str = "custom"
    growth: tuple[float, float] | None = None  # (p, k): |h(x)| <= k (1 + |x|^p)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.asarray(self.fn(x), dtype=float)

    def plus(self, other: "Terminal | float", scale: float = 1.0) -> "Terminal":
        """``h + scale * other`` where ``other`` is a terminal or a constant."""
        base = self.fn
        if isinstance(other, Terminal):
            ofn = other.fn
            return Terminal(lambda x: base(x) + scale * ofn(x), f"{self.name}+{scale:g}*{other.name}")
        c = float(other) * scale
        return Terminal(lambda x: base(x) + c, f"{self.name}{c:+g}", self.growth)


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=1))


TERMINALS: dict[str, Callable[..., Terminal]] = {
    "zero": lambda: Terminal(lambda x: np.zeros(x.shape[0]), "zero", (1.0, 0.0)),
    "constant": lambda c=1.0: Terminal(lambda x: np.full(x.shape[0], float(c)), f"constant({c:g})", (1.0, abs(c))),
    "identity": lambda: Terminal(lambda x: x[:, 0].copy(), "identity", (1.0, 1.0)),
    "cos": lambda: Terminal(lambda x: np.cos(x[:, 0]), "cos", (1.0, 1.0)),
    "abs": lambda: Terminal(lambda x: _norm(x), "abs", (1.0, 1.0)),
    "square": lambda: Terminal(lambda x: x[:, 0] ** 2, "square", (2.0, 1.0)),
    "abs_power": lambda p=1.2: Terminal(lambda x: _norm(x) ** p, f"abs_power({p:g})", (p, 1.0)),
    "abs_power_cos": lambda p=1.5: Terminal(lambda x: _norm(x) ** p * np.cos(_norm(x)), f"abs_power_cos({p:g})", (p, 1.0)),
}


def make_terminal(name: str, **kwargs) -> Terminal:
    try:
        return TERMINALS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown terminal {name!r}; known: {sorted(TERMINALS)}") from None


@dataclass
class MarkovBsdeProblem:
    diffusion: DiffusionSpec
    terminal: Terminal
    generator: MarkovGenerator
    t0: float
    x0: np.ndarray | float
    T: float

    def with_(self, **kw) -> "MarkovBsdeProblem":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# regression basis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FittedBasis:
    kind: str
    size: int  # degree for polynomials, bins per dimension for bins
    lo: np.ndarray
    hi: np.ndarray

    def design(self, X: np.ndarray) -> np.ndarray:
        width = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        u = (np.clip(X, self.lo, self.hi) - self.lo) / width  # in [0, 1]
        n = X.shape[1]
        if self.kind == "polynomial":
            cols = [legendre.legvander(2.0 * u[:, j] - 1.0, self.size) for j in range(n)]
        else:
            idx = np.minimum((u * self.size).astype(np.int64), self.size - 1)
            cols = [np.eye(self.size)[idx[:, j]] for j in range(n)]
        phi = cols[0]
        for c in cols[1:]:
            phi = (phi[:, :, None] * c[:, None, :]).reshape(phi.shape[0], -1)
        return np.ascontiguousarray(phi)


@dataclass(frozen=True)
class RegressionBasis:
    kind: str = "polynomial"
    degree: int = 4
    n_bins: int = 32
    clip: tuple[float, float] = (0.001, 0.999)
    rcond: float = 1e-10

    def fit(self, X: np.ndarray, deterministic: bool = True) -> tuple[FittedBasis, np.ndarray, np.ndarray]:
        """Pick the largest admissible size; returns the basis, its design matrix and Gram matrix."""
        lo = np.quantile(X, self.clip[0], axis=0)
        hi = np.quantile(X, self.clip[1], axis=0)
        if np.all(hi - lo <= 1e-14 * (1.0 + np.abs(lo))):
            fb = FittedBasis("polynomial", 0, lo, hi)
            phi = fb.design(X)
            return fb, phi, None
        size = self.degree if self.kind == "polynomial" else self.n_bins
        floor = 0 if self.kind == "polynomial" else 1
        while True:
            fb = FittedBasis(self.kind, size, lo, hi)
            phi = fb.design(X)
            if size == floor:
                return fb, phi, None
            if self.kind == "bins":
                counts = phi.sum(axis=0)
                if np.all(counts > 0):
                    return fb, phi, None
                size //= 2
                continue
            gram = _gram(phi, None, deterministic)[0]
            ev = np.linalg.eigvalsh(gram)
            if ev[0] > self.rcond * ev[-1]:
                return fb, phi, gram
            size -= 1


def _gram(phi, rhs, deterministic):
    if rhs is None:
        rhs = np.zeros((phi.shape[0], 1))
    if deterministic:
        return _kernels.gram_blocked(phi, rhs)
    rhs2 = rhs if rhs.ndim == 2 else rhs[:, None]
    return phi.T @ phi, phi.T @ rhs2


def _regress(phi, targets, deterministic, gram=None):
    """Fitted values of each target column regressed on the design ``phi``.

    Targets are centred first; the basis contains constants, so the projection
    is unchanged, but a constant target is reproduced exactly.
    """
    targets = targets if targets.ndim == 2 else targets[:, None]
    m = np.mean(targets, axis=0)
    centred = targets - m
    if not np.any(centred):
        return np.broadcast_to(m, targets.shape).copy()
    g, c = _gram(phi, centred, deterministic)
    if gram is not None:
        g = gram
    coef = np.linalg.solve(g, c) if g.shape[0] > 1 else c / g[0, 0]
    return m + phi @ coef


# --------------------------------------------------------------------------
# solution container
# --------------------------------------------------------------------------

@dataclass
class BackwardSolution:
    time_grid: np.ndarray
    Y_hat: np.ndarray  # (paths, N+1)
    Z_hat: np.ndarray  # (paths, N+1, d); row N repeats row N-1
    y0: float
    y0_stderr: float
    picard_iters_used: np.ndarray
    stderr_t: np.ndarray  # per-time Monte-Carlo standard error
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "y0": self.y0, "y0_stderr": self.y0_stderr, "n_paths": int(self.Y_hat.shape[0]),
            "n_steps": int(self.time_grid.size - 1), "picard_max_iters": int(self.picard_iters_used.max(initial=0)),
            "basis_fallbacks": self.diagnostics.get("basis_fallbacks", []),
        }

    def per_time_table(self) -> np.ndarray:
        """Columns: t, mean Y, stderr Y, mean |Z|."""
        zn = np.sqrt(np.sum(self.Z_hat ** 2, axis=2))
        return np.column_stack([self.time_grid, self.Y_hat.mean(axis=0), self.stderr_t, zn.mean(axis=0)])


def write_solution_csv(sol: BackwardSolution, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_Y", "stderr_Y", "mean_abs_Z"])
        for row in sol.per_time_table():
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# backward solver
# --------------------------------------------------------------------------

def _check_alignment(problem: MarkovBsdeProblem, batch: PathBatch) -> None:
    g = batch.time_grid
    if abs(g[-1] - problem.T) > 1e-12 * max(1.0, abs(problem.T)) or abs(g[0] - problem.t0) > 1e-12 * max(1.0, abs(problem.T)):
        raise ValueError(f"batch grid [{g[0]}, {g[-1]}] does not match problem horizon [{problem.t0}, {problem.T}]")


def solve_backward(problem: MarkovBsdeProblem, batch: PathBatch, basis: RegressionBasis | None = None,
                   picard_tol: float = 1e-10, picard_max: int = 50, deterministic: bool = True) -> BackwardSolution:
    _check_alignment(problem, batch)
    basis = basis or RegressionBasis()
    g = problem.generator
    X = batch.states
    n_paths, n1, _ = X.shape
    N = n1 - 1
    d = batch.dW.shape[2]
    grid = batch.time_grid
    Y = np.empty((n_paths, N + 1))
    Z = np.zeros((n_paths, N + 1, d))
    stderr_t = np.zeros(N + 1)
    iters = np.zeros(N, dtype=np.int64)
    fallbacks = []
    zeta = problem.terminal(X[:, N, :])
    Y[:, N] = zeta
    sq_n = math.sqrt(n_paths)
    for i in range(N - 1, -1, -1):
        dt = float(grid[i + 1] - grid[i])
        t = float(grid[i])
        x = X[:, i, :]
        fb, phi, gram = basis.fit(x, deterministic)
        requested = basis.degree if basis.kind == "polynomial" else basis.n_bins
        if fb.size != requested:
            fallbacks.append({"step": i, "requested": requested, "used": fb.size, "kind": fb.kind})
        E = _regress(phi, zeta, deterministic, gram)[:, 0]
        if not batch.deterministic:
            Z[:, i, :] = _regress(phi, (zeta - E)[:, None] * batch.dW[:, i, :] / dt, deterministic, gram)
        z_i = Z[:, i, :]
        y = E.copy()
        if not g.depends_on_y:
            gv = g(t, x, y, z_i)
            y = E + dt * gv
            iters[i] = 1
        else:
            res_prev = math.inf
            for k in range(1, picard_max + 1):
                gv = g(t, x, y, z_i)
                y_new = E + dt * gv
                res = float(np.max(np.abs(y_new - y))) if n_paths else 0.0
                y = y_new
                if not np.isfinite(res):
                    raise PicardDivergenceError(i, res, "reduce the time step; the map has Lipschitz factor dt*|dg/dy|")
                if res <= picard_tol * (1.0 + float(np.max(np.abs(y)))):
                    iters[i] = k
                    gv = g(t, x, y, z_i)
                    break
                if k > 3 and res > res_prev:
                    raise PicardDivergenceError(i, res, "reduce the time step; the map has Lipschitz factor dt*|dg/dy|")
                res_prev = res
            else:
                raise PicardDivergenceError(i, res, "reduce the time step or raise picard_max")
        zeta = zeta + dt * gv
        Y[:, i] = y
        resid = zeta - y
        stderr_t[i] = float(np.std(resid, ddof=1) / sq_n) if n_paths > 1 else 0.0
    if N >= 1:
        Z[:, N, :] = Z[:, N - 1, :]
    if batch.deterministic:
        stderr_t[:] = 0.0
    y0 = float(Y[0, 0]) if np.all(Y[:, 0] == Y[0, 0]) else float(np.mean(Y[:, 0]))
    return BackwardSolution(grid.copy(), Y, Z, y0, float(stderr_t[0]), iters, stderr_t,
                            diagnostics={"basis_fallbacks": fallbacks, "zeta0_mean": float(np.mean(zeta))})


# --------------------------------------------------------------------------
# truncated sequence
# --------------------------------------------------------------------------

def truncated_problem(problem: MarkovBsdeProblem, n: float, p: float) -> MarkovBsdeProblem:
    h = problem.terminal
    ht = Terminal(lambda x: truncate_terminal(h.fn(x), n, p), f"{h.name}^[{n:g},{p:g}]")
    return problem.with_(terminal=ht, generator=truncate(problem.generator, n, p))


@dataclass
class TruncationResult:
    n_list: list
    p_list: list
    y0: np.ndarray
    stderr: np.ndarray
    untruncated: BackwardSolution | None = None

    def monotonicity(self, slack: float = 2.0) -> dict:
        """Worst violations of: nondecreasing in n, nonincreasing in p (in stderr units)."""
        worst_n = worst_p = -math.inf
        for a in range(len(self.n_list)):
            for b in range(len(self.p_list)):
                if a + 1 < len(self.n_list):
                    se = max(self.stderr[a, b], self.stderr[a + 1, b], 1e-300)
                    worst_n = max(worst_n, (self.y0[a, b] - self.y0[a + 1, b]) / se)
                if b + 1 < len(self.p_list):
                    se = max(self.stderr[a, b], self.stderr[a, b + 1], 1e-300)
                    worst_p = max(worst_p, (self.y0[a, b + 1] - self.y0[a, b]) / se)
        return {"worst_n_drop_in_se": worst_n, "worst_p_rise_in_se": worst_p,
                "monotone": bool(worst_n <= slack and worst_p <= slack)}


def solve_truncated_sequence(problem: MarkovBsdeProblem, batch: PathBatch, basis: RegressionBasis | None = None,
                             n_list: Sequence[float] = (1, 2, 4, 8, 16, 32),
                             p_list: Sequence[float] = (1, 2, 4, 8, 16, 32),
                             with_untruncated: bool = True, **solver_kw) -> TruncationResult:
    if list(n_list) != sorted(n_list) or list(p_list) != sorted(p_list):
        raise ValueError("truncation levels must be increasing")
    y0 = np.empty((len(n_list), len(p_list)))
    se = np.empty_like(y0)
    for a, n in enumerate(n_list):
        for b, p in enumerate(p_list):
            sol = solve_backward(truncated_problem(problem, n, p), batch, basis, **solver_kw)
            y0[a, b], se[a, b] = sol.y0, sol.y0_stderr
    full = solve_backward(problem, batch, basis, **solver_kw) if with_untruncated else None
    return TruncationResult(list(n_list), list(p_list), y0, se, full)


def truncation_report(res: TruncationResult, slack: float = 2.0) -> Report:
    mono = res.monotonicity(slack)
    metrics = {"n_list": res.n_list, "p_list": res.p_list, **mono}
    ok = mono["monotone"]
    if res.untruncated is not None:
        gap = abs(res.y0[-1, -1] - res.untruncated.y0)
        se = max(res.stderr[-1, -1], res.untruncated.y0_stderr)
        metrics.update(untruncated_y0=res.untruncated.y0, untruncated_stderr=res.untruncated.y0_stderr,
                       corner_gap=gap, corner_gap_in_se=gap / se if se > 0 else (0.0 if gap == 0 else math.inf))
        ok = ok and gap <= slack * se + 1e-14
    return Report("truncation_ladder", PASS if ok else FAIL, metrics=metrics,
                  tables={"y0": res.y0, "stderr": res.stderr})


# --------------------------------------------------------------------------
# a-priori bound diagnostic (grid-time surrogate for the class (D) bound)
# --------------------------------------------------------------------------

def g0_integral(problem: MarkovBsdeProblem, batch: PathBatch) -> np.ndarray:
    """Per-path left-Riemann sum of |g(s, X_s, 0, 0)| over the grid."""
    g = problem.generator
    grid = batch.time_grid
    acc = np.zeros(batch.n_paths)
    d = batch.dW.shape[2]
    for i in range(grid.size - 1):
        x = batch.states[:, i, :]
        acc += np.abs(g(float(grid[i]), x, np.zeros(batch.n_paths), np.zeros((batch.n_paths, d)))) * (grid[i + 1] - grid[i])
    return acc


def class_D_diagnostic(solution: BackwardSolution, curve: EnvelopeCurve, bound: AprioriBound,
                       xi_plus_g0: np.ndarray, sat_limit: float = 1e-3) -> Report:
    """Compare ``E psi(|Y_t|, mu(t)) + delta/2 E sum_{s>=t} |Z_s|^2 ds`` with the a-priori right side."""
    rhs, rhs_se = apriori_rhs(bound, np.abs(xi_plus_g0))
    grid = solution.time_grid
    s_rel = grid - grid[0]
    dt = np.diff(grid)
    zsq = np.sum(solution.Z_hat[:, :-1, :] ** 2, axis=2) * dt[None, :]
    # tail sums: sum_{j >= i} |Z_j|^2 dt_j
    tail = np.concatenate([np.cumsum(zsq[:, ::-1], axis=1)[:, ::-1], np.zeros((zsq.shape[0], 1))], axis=1)
    n = solution.Y_hat.shape[0]
    ratios, ses, sat_frac = [], [], 0.0
    for i in range(grid.size):
        m = mu(curve, min(s_rel[i], curve.T))
        vals, sat = psi(np.abs(solution.Y_hat[:, i]), m, curve.params.alpha)
        sat_frac = max(sat_frac, float(np.mean(sat)))
        lhs_path = vals + 0.5 * bound.delta * tail[:, i]
        lhs = float(np.mean(lhs_path))
        lse = float(np.std(lhs_path, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        ratios.append(lhs / rhs)
        # delta method on lhs / rhs with independent-error approximation
        ses.append(math.hypot(lse / rhs, lhs * rhs_se / rhs ** 2))
    ratios, ses = np.array(ratios), np.array(ses)
    excess = ratios - (1.0 + 3.0 * ses)
    ok = bool(np.all(excess <= 0.0)) and sat_frac <= sat_limit
    j = int(np.argmax(ratios))
    notes = ["grid-time surrogate: deterministic times only, not all stopping times"]
    if sat_frac > sat_limit:
        notes.append(f"psi saturated on {sat_frac:.2%} of paths")
    return Report("apriori_bound", PASS if ok else FAIL,
                  metrics={"worst_ratio": ratios[j], "worst_ratio_stderr": ses[j], "worst_time": grid[j],
                           "rhs": rhs, "rhs_stderr": rhs_se, "log_big_c": bound.log_big_c, "delta": bound.delta,
                           "mu_T": bound.mu_T, "epsilon": curve.epsilon, "saturated_fraction": sat_frac},
                  stderr=float(ses[j]), notes=notes,
                  tables={"ratio_vs_t": np.column_stack([grid, ratios, ses])})


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

def _probe_order(problem, problem_prime, batch, n_probe: int = 9) -> list:
    bad = []
    xT = batch.states[:, -1, :]
    gap_T = problem_prime.terminal(xT) - problem.terminal(xT)
    for j in np.flatnonzero(gap_T < -1e-12)[:10]:
        bad.append({"kind": "terminal", "path": int(j), "gap": float(gap_T[j])})
    times = batch.time_grid[:: max(1, batch.n_steps // 4)]
    qs = np.quantile(batch.states[:, :, 0].ravel(), np.linspace(0.01, 0.99, n_probe))
    yz = np.linspace(-5.0, 5.0, 11)
    yy, zz, xx = np.meshgrid(yz, yz, qs, indexing="ij")
    d = batch.dW.shape[2]
    zv = np.repeat(zz.ravel()[:, None], d, axis=1) / math.sqrt(d)
    xv = np.repeat(xx.ravel()[:, None], batch.states.shape[2], axis=1)
    for t in times:
        diff = problem_prime.generator(float(t), xv, yy.ravel(), zv) - problem.generator(float(t), xv, yy.ravel(), zv)
        for j in np.flatnonzero(diff < -1e-12)[:10]:
            bad.append({"kind": "generator", "t": float(t), "x": float(xx.ravel()[j]), "y": float(yy.ravel()[j]),
                        "z": float(zz.ravel()[j]), "gap": float(diff[j])})
    return bad


def _structure_ok(problem, problem_prime) -> dict:
    out = {}
    for tag, g in (("g", problem.generator), ("g_prime", problem_prime.generator)):
        conv = check_H2(g, mode="convex", n_pairs=500).passed
        conc = check_H2(g, mode="concave", n_pairs=500).passed
        h2p = check_H2_prime(g).passed if g.h2p is not None else False
        out[tag] = {"H2_convex": conv, "H2_concave": conc, "H2prime": h2p}
    return out


def comparison_experiment(problem: MarkovBsdeProblem, problem_prime: MarkovBsdeProblem, batch: PathBatch,
                          basis: RegressionBasis | None = None, check_structure: bool = True,
                          **solver_kw) -> Report:
    bad = _probe_order(problem, problem_prime, batch)
    if bad:
        raise PreconditionError("terminal or generator ordering fails on probe nodes", bad)
    structure = _structure_ok(problem, problem_prime) if check_structure else {}
    if check_structure and not any(any(v.values()) for v in structure.values()):
        raise PreconditionError("neither generator passes the convexity or theta-difference check", [structure])
    sol = solve_backward(problem, batch, basis, **solver_kw)
    solp = solve_backward(problem_prime, batch, basis, **solver_kw)
    diff = sol.Y_hat - solp.Y_hat
    q99 = np.quantile(diff, 0.99, axis=0)
    pooled = np.sqrt(sol.stderr_t ** 2 + solp.stderr_t ** 2)
    excess = q99 - 3.0 * pooled
    ok = bool(np.all(excess <= 1e-12))
    j = int(np.argmax(excess))
    gap = solp.Y_hat - sol.Y_hat
    return Report(
        "comparison", PASS if ok else FAIL,
        metrics={"y0": sol.y0, "y0_prime": solp.y0, "y0_stderr": sol.y0_stderr, "y0_prime_stderr": solp.y0_stderr,
                 "worst_q99": q99[j], "worst_time": batch.time_grid[j], "pooled_stderr_at_worst": pooled[j],
                 "mean_gap": float(np.mean(gap)), "min_gap": float(np.min(gap)), "max_gap": float(np.max(gap)),
                 "structure": structure},
        stderr=float(pooled[0]),
        tables={"q99_vs_t": np.column_stack([batch.time_grid, q99, pooled])},
    )


# --------------------------------------------------------------------------
# stability
# --------------------------------------------------------------------------

@dataclass
class Perturbation:
    delta: float
    problem: MarkovBsdeProblem


def additive_schedule(problem: MarkovBsdeProblem, n_max: int = 6, terminal_shape: Terminal | None = None,
                      generator_shape: MarkovGenerator | None = None) -> list[Perturbation]:
    """``h^n = h + 2^-n shape_h``, ``g^n = g + 2^-n shape_g``; shapes default to the constant 1 and 0."""
    out = []
    for n in range(1, n_max + 1):
        dn = 2.0 ** (-n)
        h = problem.terminal.plus(terminal_shape, dn) if terminal_shape is not None else problem.terminal.plus(dn)
        g = problem.generator
        if generator_shape is not None:
            base, shape = g, generator_shape
            g = replace(base, fn=lambda t, x, y, z, b=base.fn, s=shape.fn, c=dn: b(t, x, y, z) + c * s(t, x, y, z),
                        name=f"{base.name}+{dn:g}*{shape.name}",
                        depends_on_y=base.depends_on_y or shape.depends_on_y)
        out.append(Perturbation(dn, problem.with_(terminal=h, generator=g)))
    return out


def stability_experiment(problem: MarkovBsdeProblem, schedule: Sequence[Perturbation], batch: PathBatch,
                         basis: RegressionBasis | None = None, slack: float = 2.0, decay: float = 4.0,
                         **solver_kw) -> Report:
    base = solve_backward(problem, batch, basis, **solver_kw)
    dt = np.diff(batch.time_grid)
    S, S_se, D, D_se, sup_dev = [], [], [], [], []
    for pert in schedule:
        sol = solve_backward(pert.problem, batch, basis, **solver_kw)
        sup_abs = np.max(np.abs(sol.Y_hat - base.Y_hat), axis=1)
        zd = np.sqrt(np.sum(np.sum((sol.Z_hat[:, :-1] - base.Z_hat[:, :-1]) ** 2, axis=2) * dt[None, :], axis=1))
        n = sup_abs.size
        S.append(float(np.mean(sup_abs)))
        S_se.append(float(np.std(sup_abs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        D.append(float(np.mean(zd)))
        D_se.append(float(np.std(zd, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        sup_dev.append(float(np.max(np.abs(sup_abs - pert.delta))))
    S, S_se, D, D_se = map(np.array, (S, S_se, D, D_se))
    nonincS = bool(np.all(S[1:] <= S[:-1] + slack * np.maximum(S_se[1:], S_se[:-1])))
    nonincD = bool(np.all(D[1:] <= D[:-1] + slack * np.maximum(D_se[1:], D_se[:-1])))
    decays = bool(S[-1] < S[0] / decay) if S[0] > 0 else bool(S[-1] == 0.0)
    ok = nonincS and nonincD and decays
    deltas = np.array([p.delta for p in schedule])
    return Report(
        "stability", PASS if ok else FAIL,
        metrics={"S": S, "S_stderr": S_se, "D": D, "D_stderr": D_se, "S_nonincreasing": nonincS,
                 "D_nonincreasing": nonincD, "decay_ok": decays,
                 "max_abs_S_minus_delta": max(sup_dev) if sup_dev else 0.0},
        tables={"S_vs_n": np.column_stack([np.arange(1, len(schedule) + 1), deltas, S, S_se, D, D_se])},
    )


# --------------------------------------------------------------------------
# theta-gap diagnostic
# --------------------------------------------------------------------------

def theta_gap_experiment(problem: MarkovBsdeProblem, problem_prime: MarkovBsdeProblem, theta_list: Sequence[float],
                         batch: PathBatch, basis: RegressionBasis | None = None, **solver_kw) -> Report:
    """Distribution of ``(Y_t - theta Y'_t)^+ / (1 - theta)`` at the first two grid times."""
    from .envelope import SubQuadParams, mu as mu_fn

    sol = solve_backward(problem, batch, basis, **solver_kw)
    solp = solve_backward(problem_prime, batch, basis, **solver_kw)
    p = problem.generator.params
    # bound shape with unit-exponent curve
    curve = EnvelopeCurve.for_params(SubQuadParams(p.alpha, p.beta, p.gamma), 1.0, problem.T - problem.t0)
    bound = AprioriBound.from_curve(curve)
    xi_pos = np.maximum(problem.terminal(batch.states[:, -1, :]), 0.0) + g0_integral(problem, batch)
    vals, sat = psi(xi_pos, mu_fn(curve, curve.T), p.alpha)
    log_rhs = bound.log_big_c + math.log(float(np.mean(vals)))
    shape = max(log_rhs, 0.0) ** (p.alpha_star / 2.0)
    rows = []
    for th in theta_list:
        for i in (0, min(1, batch.n_steps)):
            q = np.maximum(sol.Y_hat[:, i] - th * solp.Y_hat[:, i], 0.0) / (1.0 - th)
            rows.append([th, batch.time_grid[i], float(np.mean(q)), float(np.quantile(q, 0.5)),
                         float(np.quantile(q, 0.99)), float(np.max(q)), (1.0 - th) * shape])
    return Report("theta_gap", DIAGNOSTIC,
                  metrics={"y0": sol.y0, "y0_prime": solp.y0, "bound_shape_log_term": shape,
                           "psi_saturated": int(np.count_nonzero(sat))},
                  notes=["columns: theta, t, mean, median, q99, max, (1-theta)*bound"],
                  tables={"theta_gap": np.array(rows)})
