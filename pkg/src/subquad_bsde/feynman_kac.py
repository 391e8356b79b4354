"""PDE side: u(t, x) from BSDE solves and an explicit finite-difference oracle in one space dimension."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels
from .bsde_solver import MarkovBsdeProblem, RegressionBasis, Terminal, solve_backward
from .errors import InstabilityError, SubQuadError
from .generator import AssumptionReport, MarkovGenerator, _assemble, check_H2_prime, inf_convolution
from .report import FAIL, PASS, Report
from .sde import DiffusionSpec, check_A1, simulate

BLOWUP = 1e6


@dataclass
class PdeProblem:
    diffusion: DiffusionSpec
    generator: MarkovGenerator
    terminal: Terminal
    x_lo: float
    x_hi: float
    T: float
    boundary: str = "extrapolate"  # or "dirichlet_terminal"
    pad: float = 0.3  # total extra width as a fraction of the window

    def __post_init__(self):
        if self.diffusion.dim_x != 1 or self.diffusion.dim_w != 1:
            raise ValueError("the finite-difference oracle is one-dimensional")
        if not self.x_hi > self.x_lo:
            raise ValueError("empty spatial window")
        if self.boundary not in ("extrapolate", "dirichlet_terminal"):
            raise ValueError(f"unknown boundary handling {self.boundary!r}")

    def bsde_problem(self, t: float, x: float) -> MarkovBsdeProblem:
        return MarkovBsdeProblem(self.diffusion, self.terminal, self.generator, float(t), np.array([x]), self.T)


def check_A2(g: MarkovGenerator, h: Terminal, p: float, k: float, x_max: float = 20.0, n: int = 401) -> AssumptionReport:
    """Sampled power growth of h and g(., ., 0, 0), plus the generator's theta-difference bound."""
    x = np.linspace(-x_max, x_max, n)[:, None]
    env = k * (1.0 + np.abs(x[:, 0]) ** p)
    lhs = [np.abs(h(x))]
    rhs = [env]
    for t in (0.0, 0.5, 1.0):
        lhs.append(np.abs(g(t, x, np.zeros(n), np.zeros((n, 1)))))
        rhs.append(env)
    rep = _assemble("A2", np.concatenate(lhs), np.concatenate(rhs), {"x": np.tile(x[:, 0], 4)})
    if g.h2p is not None:
        h2 = check_H2_prime(g)
        rep.n_violations += h2.n_violations
        rep.sampled_nodes += h2.sampled_nodes
        rep.margin = min(rep.margin, h2.margin)
        rep.violations += h2.violations[:10]
    else:
        rep.notes.append("generator declares no theta-difference constants; that part is not checked")
    return rep


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

@dataclass
class GridSolution:
    times: np.ndarray
    x: np.ndarray  # full padded grid
    u: np.ndarray  # (n_t + 1, n_x_full)
    window: slice
    meta: dict = field(default_factory=dict)

    @property
    def x_window(self) -> np.ndarray:
        return self.x[self.window]

    @property
    def u_window(self) -> np.ndarray:
        return self.u[:, self.window]

    def at(self, t: float, x) -> np.ndarray:
        """Cubic spline in x; off-node times blend the two bracketing rows linearly."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            j = int(np.searchsorted(self.times, t))
            w = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1])
            return (1 - w) * CubicSpline(self.x, self.u[j - 1])(x) + w * CubicSpline(self.x, self.u[j])(x)
        return CubicSpline(self.x, self.u[i])(x)


def _extrapolate(u: np.ndarray) -> None:
    # quadratic extrapolation, exact on polynomials of degree <= 2
    u[0] = 3.0 * u[1] - 3.0 * u[2] + u[3]
    u[-1] = 3.0 * u[-2] - 3.0 * u[-3] + u[-4]


def fd_solve(pde: PdeProblem, n_t: int, n_x: int, t0: float = 0.0) -> GridSolution:
    if n_x < 5 or n_t < 1:
        raise ValueError("need n_x >= 5 and n_t >= 1")
    dx = (pde.x_hi - pde.x_lo) / (n_x - 1)
    n_pad = int(math.ceil(0.5 * pde.pad * (n_x - 1)))
    x = pde.x_lo + dx * np.arange(-n_pad, n_x + n_pad)
    window = slice(n_pad, n_pad + n_x)
    spec = pde.diffusion
    X2 = x[:, None]
    horizon = pde.T - t0
    # coefficient bounds for the stability condition, sampled on the grid
    probe_t = np.linspace(t0, pde.T, 5)
    s_max = max(float(np.max(np.abs(spec.sigma(float(t), X2)))) for t in probe_t)
    b_max = max(float(np.max(np.abs(spec.drift(float(t), X2)))) for t in probe_t)
    dt_max = dx * dx / (s_max ** 2 + dx * b_max) if (s_max > 0 or b_max > 0) else horizon
    requested = n_t
    if horizon / n_t > dt_max:
        n_t = int(math.ceil(horizon / dt_max * (1.0 + 1e-9)))
    times = t0 + horizon * np.arange(n_t + 1) / n_t
    times[-1] = pde.T
    dt = horizon / n_t
    u = np.empty((n_t + 1, x.size))
    u[-1] = pde.terminal(X2)
    frozen = u[-1].copy()
    g = pde.generator
    for i in range(n_t - 1, -1, -1):
        t = float(times[i + 1])
        un = u[i + 1]
        d1, d2 = _kernels.central_diff(un, dx)
        sig = spec.sigma(t, X2)[:, 0, 0]
        b = spec.drift(t, X2)[:, 0]
        gv = g(t, X2, un, (sig * d1)[:, None])
        nxt = un + dt * (0.5 * sig * sig * d2 + b * d1 + gv)
        if pde.boundary == "extrapolate":
            _extrapolate(nxt)
        else:
            nxt[0], nxt[-1] = frozen[0], frozen[-1]
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > BLOWUP:
            raise InstabilityError(f"finite-difference solution left |u| <= {BLOWUP:g} at t = {times[i]:.6g}")
        u[i] = nxt
    meta = {"dt": dt, "dx": dx, "scheme": "explicit-central", "boundary": pde.boundary,
            "n_t_requested": requested, "n_t_used": n_t, "n_pad": n_pad, "cfl_dt_max": dt_max}
    return GridSolution(times, x, u, window, meta)


# --------------------------------------------------------------------------
# Monte-Carlo side
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class McParams:
    n_paths: int = 20000
    n_steps: int = 100  # for the full horizon; shorter horizons use proportionally fewer
    seed: int = 12345
    basis: RegressionBasis = RegressionBasis()
    deterministic: bool = True


@dataclass
class UPoint:
    t: float
    x: float
    u_hat: float
    stderr: float
    error: str | None = None


def u_from_bsde(pde: PdeProblem, eval_points: Sequence[tuple[float, float]], mc: McParams = McParams(),
                t_ref: float = 0.0) -> list[UPoint]:
    """``u(t, x) = Y^{t,x}_t`` for each point, each on its own stream (stream id = point index)."""
    out = []
    full = pde.T - t_ref
    for k, (t, xv) in enumerate(eval_points):
        t, xv = float(t), float(xv)
        if abs(pde.T - t) <= 1e-14 * max(1.0, pde.T):
            out.append(UPoint(t, xv, float(pde.terminal(np.array([[xv]]))[0]), 0.0))
            continue
        try:
            steps = max(1, int(round(mc.n_steps * (pde.T - t) / full)))
            batch = simulate(pde.diffusion, t, np.array([xv]), pde.T, steps, mc.n_paths, mc.seed, stream_id=k)
            sol = solve_backward(pde.bsde_problem(t, xv), batch, mc.basis, deterministic=mc.deterministic)
            out.append(UPoint(t, xv, sol.y0, sol.y0_stderr))
        except SubQuadError as exc:
            out.append(UPoint(t, xv, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return out


def cross_validate(pde: PdeProblem, points: Sequence[tuple[float, float]], mc: McParams, n_t: int, n_x: int,
                   rel_tol: float = 0.02, k_se: float = 3.0) -> tuple[Report, list[dict]]:
    fd = fd_solve(pde, n_t, n_x)
    mcs = u_from_bsde(pde, points, mc)
    rows, ok = [], True
    for p in mcs:
        u_fd = float(fd.at(p.t, np.array([p.x]))[0])
        diff = abs(p.u_hat - u_fd)
        tol = max(k_se * p.stderr, rel_tol * abs(u_fd))
        good = p.error is None and diff <= tol
        ok &= good
        rows.append({"t": p.t, "x": p.x, "u_fd": u_fd, "u_mc": p.u_hat, "stderr": p.stderr, "abs_diff": diff,
                     "tolerance": tol, "pass": good, "error": p.error})
    rep = Report("feynman_kac_cross_validation", PASS if ok else FAIL,
                 metrics={"n_points": len(rows), "n_fail": sum(not r["pass"] for r in rows),
                          "worst_diff_over_tol": max(r["abs_diff"] / r["tolerance"] if r["tolerance"] > 0 else math.inf
                                                     for r in rows),
                          "fd": fd.meta},
                 notes=["the fine-grid finite-difference solution stands in for the viscosity solution"],
                 tables={"points": rows})
    return rep, rows


def write_u_table_csv(rows: Sequence[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u_fd", "u_mc", "stderr", "abs_diff"])
        for r in rows:
            w.writerow([repr(float(r[k])) for k in ("t", "x", "u_fd", "u_mc", "stderr", "abs_diff")])


# --------------------------------------------------------------------------
# growth and Lipschitz ladder
# --------------------------------------------------------------------------

def growth_check(x: np.ndarray, u: np.ndarray, p: float, fit: bool = False, split: float = 10.0,
                 factor: float = 2.0) -> Report:
    """``C_hat = max |u| / (1 + |x|^p)``, compared between |x| < split and |x| >= split."""
    x = np.asarray(x, float)
    u = np.atleast_2d(np.asarray(u, float))
    ratio = np.max(np.abs(u), axis=0) / (1.0 + np.abs(x) ** p)
    inner = np.abs(x) < split
    outer = ~inner
    c_all = float(np.max(ratio))
    c_in = float(np.max(ratio[inner])) if inner.any() else math.nan
    c_out = float(np.max(ratio[outer])) if outer.any() else math.nan
    stable = bool(np.isfinite(c_all) and c_in > 0 and c_out > 0
                  and c_out <= factor * c_in and c_in <= factor * c_out)
    metrics = {"p": p, "C_hat": c_all, "C_inner": c_in, "C_outer": c_out, "band_stable": stable}
    if fit and outer.any():
        umax = np.max(np.abs(u), axis=0)
        sel = outer & (umax > 0)
        if np.count_nonzero(sel) >= 2:
            metrics["fitted_power"] = float(np.polyfit(np.log(np.abs(x[sel])), np.log(umax[sel]), 1)[0])
    return Report("growth_bound", PASS if stable else FAIL, metrics=metrics)


def lipschitz_pde_ladder(pde: PdeProblem, m_list: Sequence[float], l_list: Sequence[float], n_t: int, n_x: int,
                         slack: float = 1e-6, rel_tol: float = 0.02, half_width: float = 10.0,
                         step: float = 0.05) -> Report:
    ref = fd_solve(pde, n_t, n_x)
    sols = {}
    for m in m_list:
        for l in l_list:
            gm = inf_convolution(pde.generator, m, l, half_width=half_width, step=step)
            sub = PdeProblem(pde.diffusion, gm, pde.terminal, pde.x_lo, pde.x_hi, pde.T, pde.boundary, pde.pad)
            sols[(m, l)] = fd_solve(sub, n_t, n_x).u_window
    worst_l = worst_m = -math.inf
    for m in m_list:
        for a, b in zip(l_list[:-1], l_list[1:]):
            worst_l = max(worst_l, float(np.max(sols[(m, b)] - sols[(m, a)])))
    l_top = l_list[-1]
    for a, b in zip(m_list[:-1], m_list[1:]):
        worst_m = max(worst_m, float(np.max(sols[(a, l_top)] - sols[(b, l_top)])))
    top = sols[(m_list[-1], l_top)]
    scale = max(float(np.max(np.abs(ref.u_window))), 1e-300)
    gap = float(np.max(np.abs(top - ref.u_window)))
    gaps_l = []
    for m in m_list:
        gaps_l.append([float(np.max(np.abs(sols[(m, l)] - ref.u_window))) for l in l_list])
    ok = worst_l <= slack and worst_m <= slack and gap <= rel_tol * scale
    return Report("lipschitz_ladder", PASS if ok else FAIL,
                  metrics={"m_list": list(m_list), "l_list": list(l_list),
                           "worst_increase_in_l": worst_l, "worst_decrease_in_m": worst_m,
                           "top_gap": gap, "top_gap_relative": gap / scale},
                  tables={"gap_to_reference": np.array(gaps_l)})


def profile_table(sol: GridSolution, t_index: int = 0) -> np.ndarray:
    """Two columns: x in the reporting window and u(t_index, x)."""
    return np.column_stack([sol.x_window, sol.u_window[t_index]])
