"""Markovian generators g(t, x, y, z), sampled assumption checks and derived generators.

Array convention for every generator call::

    t : scalar or (N,)      x : (N, n)      y : (N,)      z : (N, d)

and the return value has shape (N,).
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .envelope import SubQuadParams
from .errors import MisalignedPathError, MissingDeclarationError
from .report import FAIL, PASS, Report

GenFn = Callable[[object, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

CHECK_TOL = 1e-10


def znorm(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.abs(z) if z.ndim == 1 else np.sqrt(np.sum(z * z, axis=-1))


def _as_batch(x, y, z):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.shape[0]
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = np.full((n, 1), float(x))
    elif x.ndim == 1:
        x = x[:, None]
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = np.full((n, 1), float(z))
    elif z.ndim == 1:
        z = z[:, None]
    return x, y, z


# --------------------------------------------------------------------------
# declarations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Markovian stand-in for the process f_t: ``f_const + f_coef * |x|^f_pow``."""

    f_const: float = 0.0
    f_coef: float = 0.0
    f_pow: float = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        nx = znorm(x)
        return self.f_const + self.f_coef * nx ** self.f_pow

    def __add__(self, other: "Envelope") -> "Envelope":
        if self.f_coef and other.f_coef and self.f_pow != other.f_pow:
            raise ValueError("cannot add envelopes with different powers")
        pw = self.f_pow if self.f_coef else other.f_pow
        return Envelope(self.f_const + other.f_const, self.f_coef + other.f_coef, pw)


@dataclass(frozen=True)
class H1ppDecl:
    """One-sided bound ``sgn(y) g <= f + beta|y| + gamma|z|^alpha`` plus the
    two-sided ``|g| <= f + h(|y|) + c|z|^2``."""

    f: Envelope
    beta: float
    gamma: float
    h: Callable[[np.ndarray], np.ndarray]
    c: float


@dataclass(frozen=True)
class H2pDecl:
    f: Envelope
    k: float
    beta: float
    gamma: float

    def __add__(self, other: "H2pDecl") -> "H2pDecl":
        return H2pDecl(self.f + other.f, self.k + other.k, self.beta + other.beta, self.gamma + other.gamma)


@dataclass
class MarkovGenerator:
    fn: GenFn
    params: SubQuadParams
    name: str = "custom"
    growth: tuple[float, float] | None = None  # (p, k) with |g(t,x,0,0)| <= k(1+|x|^p)
    h1pp: H1ppDecl | None = None
    h2p: H2pDecl | None = None
    expected: dict = field(default_factory=dict)
    depends_on_t: bool = True
    depends_on_x: bool = True
    depends_on_y: bool = True
    lipschitz: float | None = None  # (y,z)-Lipschitz constant when known
    description: str = ""

    def __call__(self, t, x, y, z) -> np.ndarray:
        x, y, z = _as_batch(x, y, z)
        out = np.asarray(self.fn(t, x, y, z), dtype=float)
        return np.broadcast_to(out, y.shape).copy() if out.shape != y.shape else out

    def __add__(self, other: "MarkovGenerator") -> "MarkovGenerator":
        a, b = self, other

        def fn(t, x, y, z):
            return a.fn(t, x, y, z) + b.fn(t, x, y, z)

        if a.params.alpha != b.params.alpha:
            raise ValueError("summands must share alpha")
        params = SubQuadParams(a.params.alpha, a.params.beta + b.params.beta, a.params.gamma + b.params.gamma)
        h2p = a.h2p + b.h2p if (a.h2p and b.h2p) else None
        return MarkovGenerator(
            fn, params, name=f"({a.name}+{b.name})", h2p=h2p,
            depends_on_t=a.depends_on_t or b.depends_on_t,
            depends_on_x=a.depends_on_x or b.depends_on_x,
            depends_on_y=a.depends_on_y or b.depends_on_y,
        )

    def shifted(self, c: float, name: str | None = None) -> "MarkovGenerator":
        """``g + c``; a constant shift keeps every structural declaration up to f."""
        base = self.fn

        def fn(t, x, y, z):
            return base(t, x, y, z) + c

        h1pp = replace(self.h1pp, f=self.h1pp.f + Envelope(abs(c))) if self.h1pp else None
        h2p = replace(self.h2p, f=self.h2p.f + Envelope(abs(c))) if self.h2p else None
        return replace(self, fn=fn, name=name or f"{self.name}{c:+g}", h1pp=h1pp, h2p=h2p)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

def _young_const(b: float, gamma: float, alpha: float) -> float:
    # sup_r (b r - gamma r^alpha)
    if b == 0.0:
        return 0.0
    r = (b / (gamma * alpha)) ** (1.0 / (alpha - 1.0))
    return b * r * (alpha - 1.0) / alpha


def zero(alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: np.zeros_like(y), SubQuadParams(alpha, 0.0, gamma), name="zero",
        growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(), 0.0, gamma, lambda r: 0.0 * r, 0.0),
        h2p=H2pDecl(Envelope(), 0.0, 0.0, gamma),
        expected=dict(H1=True, H1doubleprime=True, H2_convex=True, H2_concave=True, H2prime=True),
        depends_on_t=False, depends_on_x=False, depends_on_y=False, lipschitz=0.0,
    )


def constant(c: float, alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return zero(alpha, gamma).shifted(c, name=f"constant({c:g})")


def affine(a: float = 0.0, b: float = 0.0, c: float = 0.0, alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    """``a y + b z_1 + c``."""
    f = Envelope(abs(c) + max(_young_const(abs(b), gamma, alpha), 0.25 * b * b))
    return MarkovGenerator(
        lambda t, x, y, z: a * y + b * z[:, 0] + c,
        SubQuadParams(alpha, abs(a), gamma), name="affine", growth=(1.0, abs(c)),
        h1pp=H1ppDecl(f, abs(a), gamma, lambda r: abs(a) * r, 1.0),
        h2p=H2pDecl(Envelope(abs(c) + _young_const(abs(b), gamma, alpha)), 0.0, abs(a), gamma),
        # a linear z-term beats gamma|z|^alpha near z = 0
        expected=dict(H1=(b == 0.0), H1doubleprime=True, H2_convex=True, H2_concave=True, H2prime=True),
        depends_on_t=False, depends_on_x=False, depends_on_y=(a != 0.0),
        lipschitz=abs(a) + abs(b),
    )


def abs_z_alpha(gamma: float = 1.0, alpha: float = 1.5) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: gamma * znorm(z) ** alpha,
        SubQuadParams(alpha, 0.0, gamma), name="abs_z_alpha", growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(gamma), 0.0, gamma, lambda r: 0.0 * r, gamma),
        h2p=H2pDecl(Envelope(), 0.0, 0.0, gamma),
        expected=dict(H1=True, H1doubleprime=True, H2_convex=True, H2_concave=False, H2prime=True),
        depends_on_t=False, depends_on_x=False, depends_on_y=False,
    )


def minus_y_cubed(alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: -(y ** 3), SubQuadParams(alpha, 0.0, gamma), name="minus_y_cubed",
        growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(), 0.0, gamma, lambda r: r ** 3, 0.0),
        h2p=H2pDecl(Envelope(), 0.0, 0.0, gamma),
        expected=dict(H1=False, H1doubleprime=True, H2_convex=False, H2_concave=False, H2prime=False),
        depends_on_t=False, depends_on_x=False,
    )


def plus_y_cubed(alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: y ** 3, SubQuadParams(alpha, 1.0, gamma), name="plus_y_cubed",
        growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(), 1.0, gamma, lambda r: r ** 3, 0.0),
        h2p=H2pDecl(Envelope(), 0.0, 1.0, gamma),
        expected=dict(H1=False, H1doubleprime=False, H2_convex=False, H2_concave=False, H2prime=False),
        depends_on_t=False, depends_on_x=False,
    )


def sin_y(alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: np.sin(y), SubQuadParams(alpha, 1.0, gamma), name="sin_y",
        growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(), 1.0, gamma, lambda r: r, 0.0),
        # Lipschitz in y, trivially convex in z: k = 2 beta
        h2p=H2pDecl(Envelope(), 2.0, 1.0, gamma),
        expected=dict(H1=True, H1doubleprime=True, H2_convex=False, H2_concave=False, H2prime=True),
        depends_on_t=False, depends_on_x=False, lipschitz=1.0,
    )


def lq_product(M: float = 1.0, R: float = 2.0, alpha: float = 1.5) -> MarkovGenerator:
    """``l(y) q(z)`` with ``l = M tanh`` and the tent ``q = M max(0, 1 - |z|/R)``."""
    beta_l, gamma_q = M, M / R

    def fn(t, x, y, z):
        return M * np.tanh(y) * M * np.maximum(0.0, 1.0 - znorm(z) / R)

    return MarkovGenerator(
        fn, SubQuadParams(alpha, M * M, M * gamma_q), name="lq_product", growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(M * M), 0.0, M * gamma_q, lambda r: 0.0 * r, 0.0),
        h2p=H2pDecl(Envelope(M * (5.0 * M + 2.0 * gamma_q * R + gamma_q)), M * beta_l, M * beta_l, M * gamma_q),
        expected=dict(H1=True, H1doubleprime=True, H2_convex=False, H2_concave=False, H2prime=True),
        depends_on_t=False, depends_on_x=False, lipschitz=M * beta_l + M * gamma_q,
    )


def composite_example(alpha: float = 1.5, p: float = 1.5, m: int = 1, M: float = 1.0, R: float = 2.0) -> MarkovGenerator:
    """``1 + |x|^p sin|x| + y^{2m} 1{y<=0} + sin y + |z|^alpha + l(y) q(z)``."""
    lq = lq_product(M, R, alpha)

    def fn(t, x, y, z):
        ax = znorm(x)
        return (1.0 + ax ** p * np.sin(ax) + np.where(y <= 0.0, y ** (2 * m), 0.0)
                + np.sin(y) + znorm(z) ** alpha + lq.fn(t, x, y, z))

    # summed constants: x-part, y^{2m} part, sin y, |z|^alpha, l q
    h2p = (H2pDecl(Envelope(1.0, 1.0, p), 0.0, 0.0, 0.0) + H2pDecl(Envelope(), 2.0, 1.0, 0.0)
           + H2pDecl(Envelope(), 0.0, 0.0, 1.0) + lq.h2p)
    return MarkovGenerator(
        fn, SubQuadParams(alpha, h2p.beta, h2p.gamma), name="composite_example", growth=(p, 1.0),
        h1pp=H1ppDecl(Envelope(2.0 + M * M, 1.0, p), 1.0, 1.0, lambda r: r ** (2 * m) + r, 1.0),
        h2p=h2p,
        expected=dict(H1=False, H1doubleprime=True, H2_convex=False, H2_concave=False, H2prime=True),
        depends_on_t=False,
    )


def quadratic_z(alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    return MarkovGenerator(
        lambda t, x, y, z: znorm(z) ** 2, SubQuadParams(alpha, 0.0, gamma), name="quadratic_z",
        growth=(1.0, 0.0),
        h1pp=H1ppDecl(Envelope(), 0.0, gamma, lambda r: 0.0 * r, 1.0),
        h2p=H2pDecl(Envelope(), 0.0, 0.0, gamma),
        expected=dict(H1=False, H1doubleprime=False, H2_convex=True, H2_concave=False, H2prime=False),
        depends_on_t=False, depends_on_x=False, depends_on_y=False,
    )


def linear_decay(beta: float = 0.5, alpha: float = 1.5, gamma: float = 1.0) -> MarkovGenerator:
    """``-beta y``; closed-form test generator."""
    g = affine(a=-beta, alpha=alpha, gamma=gamma)
    g.name = "linear_decay"
    return g


REGISTRY: dict[str, Callable[..., MarkovGenerator]] = {
    "zero": zero,
    "constant": constant,
    "affine": affine,
    "abs_z_alpha": abs_z_alpha,
    "minus_y_cubed": minus_y_cubed,
    "plus_y_cubed": plus_y_cubed,
    "sin_y": sin_y,
    "lq_product": lq_product,
    "composite_example": composite_example,
    "quadratic_z": quadratic_z,
    "linear_decay": linear_decay,
}

# entries checked by the concordance test with default arguments
CONCORDANCE_SET = ("zero", "affine", "abs_z_alpha", "minus_y_cubed", "plus_y_cubed", "sin_y",
                   "lq_product", "composite_example", "quadratic_z")


def make_generator(name: str, **kwargs) -> MarkovGenerator:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**kwargs)


# --------------------------------------------------------------------------
# sampled assumption checks
# --------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    assumption: str
    sampled_nodes: int
    violations: list
    margin: float
    n_violations: int = 0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def to_report(self, name: str | None = None) -> Report:
        return Report(
            name=name or f"assumption[{self.assumption}]",
            status=PASS if self.passed else FAIL,
            metrics={"sampled_nodes": self.sampled_nodes, "margin": self.margin,
                     "n_violations": self.n_violations},
            notes=list(self.notes), tables={"violations": self.violations[:20]},
        )


def _assemble(assumption, lhs, rhs, nodes: dict, notes=(), max_listed=50, scale=None) -> AssumptionReport:
    margin = rhs - lhs
    if scale is None:
        scale = 1.0 + np.abs(lhs) + np.abs(rhs)
    bad = np.flatnonzero(margin < -CHECK_TOL * scale)
    violations = [
        {**{k: float(v[i]) for k, v in nodes.items()}, "lhs": float(lhs[i]), "rhs": float(rhs[i])}
        for i in bad[:max_listed]
    ]
    return AssumptionReport(
        assumption=assumption, sampled_nodes=int(margin.size), violations=violations,
        margin=float(np.min(margin)) if margin.size else math.inf, n_violations=int(bad.size),
        notes=["sampled check: a pass certifies the inequality on the sampled nodes only", *notes],
    )


@dataclass(frozen=True)
class SampleGrid:
    t: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.5, 1.0]))
    x: np.ndarray = field(default_factory=lambda: np.linspace(-3.0, 3.0, 7)[:, None])
    y: np.ndarray = field(default_factory=lambda: np.linspace(-10.0, 10.0, 41))
    z: np.ndarray = field(default_factory=lambda: np.linspace(-20.0, 20.0, 81)[:, None])

    def product(self):
        """Flattened (t, x, y, z) over the full product grid."""
        nt, nx, ny, nz = len(self.t), len(self.x), len(self.y), len(self.z)
        it, ix, iy, iz = np.meshgrid(np.arange(nt), np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        it, ix, iy, iz = it.ravel(), ix.ravel(), iy.ravel(), iz.ravel()
        return self.t[it], np.asarray(self.x)[ix], self.y[iy], np.asarray(self.z)[iz]


def _node_dict(t, x, y, z):
    return {"t": t, "x": x[:, 0], "y": y, "z": znorm(z)}


def check_H1(g: MarkovGenerator, grid: SampleGrid | None = None) -> AssumptionReport:
    grid = grid or SampleGrid()
    t, x, y, z = grid.product()
    p = g.params
    val = g(t, x, y, z)
    g00 = g(t, x, np.zeros_like(y), np.zeros_like(z))
    rhs = np.abs(g00) + p.beta * np.abs(y) + p.gamma * znorm(z) ** p.alpha
    return _assemble("H1", np.abs(val), rhs, _node_dict(t, x, y, z))


def check_H1_one_sided(g: MarkovGenerator, grid: SampleGrid | None = None, variant: str = "H1prime") -> AssumptionReport:
    grid = grid or SampleGrid()
    t, x, y, z = grid.product()
    p = g.params
    val = g(t, x, y, z)
    nz = znorm(z)
    nodes = _node_dict(t, x, y, z)
    if variant == "H1prime":
        g00 = g(t, x, np.zeros_like(y), np.zeros_like(z))
        lhs = np.where(y > 0.0, val, 0.0)
        rhs = np.abs(g00) + p.beta * np.abs(y) + p.gamma * nz ** p.alpha
        return _assemble("H1prime", lhs, rhs, nodes)
    if variant != "H1doubleprime":
        raise ValueError(f"unknown variant {variant!r}")
    d = g.h1pp
    if d is None:
        raise MissingDeclarationError(f"generator {g.name!r} declares no envelope (f, h, c) for the two-sided bound")
    f = d.f(x)
    ay = np.abs(y)
    lhs1 = np.sign(y) * val
    rhs1 = f + d.beta * ay + d.gamma * nz ** p.alpha
    lhs2 = np.abs(val)
    rhs2 = f + d.h(ay) + d.c * nz ** 2
    lhs = np.concatenate([lhs1, lhs2])
    rhs = np.concatenate([rhs1, rhs2])
    both = {k: np.concatenate([v, v]) for k, v in nodes.items()}
    both["which"] = np.concatenate([np.zeros(y.size), np.ones(y.size)])
    return _assemble("H1doubleprime", lhs, rhs, both)


def check_H2(g: MarkovGenerator, grid: SampleGrid | None = None, mode: str = "convex",
             n_pairs: int = 3000, seed: int = 0) -> AssumptionReport:
    """Sampled convexity (or concavity) in (y, z) at each fixed (t, x)."""
    grid = grid or SampleGrid()
    rng = np.random.default_rng(seed)
    yz_y, yz_z = np.meshgrid(np.arange(len(grid.y)), np.arange(len(grid.z)), indexing="ij")
    yz_y, yz_z = yz_y.ravel(), yz_z.ravel()
    i1 = rng.integers(0, yz_y.size, n_pairs)
    i2 = rng.integers(0, yz_y.size, n_pairs)
    y1, z1 = grid.y[yz_y[i1]], np.asarray(grid.z)[yz_z[i1]]
    y2, z2 = grid.y[yz_y[i2]], np.asarray(grid.z)[yz_z[i2]]
    lams = np.array([0.25, 0.5, 0.75])
    lhs_all, rhs_all, nodes = [], [], {"t": [], "x": [], "y1": [], "y2": [], "lam": []}
    for t in grid.t:
        for xv in np.asarray(grid.x):
            xx = np.broadcast_to(xv, (n_pairs, len(xv)))
            g1 = g(t, xx, y1, z1)
            g2 = g(t, xx, y2, z2)
            for lam in lams:
                gm = g(t, xx, lam * y1 + (1 - lam) * y2, lam * z1 + (1 - lam) * z2)
                chord = lam * g1 + (1 - lam) * g2
                if mode == "convex":
                    lhs_all.append(gm); rhs_all.append(chord)
                elif mode == "concave":
                    lhs_all.append(chord); rhs_all.append(gm)
                else:
                    raise ValueError(f"unknown mode {mode!r}")
                nodes["t"].append(np.full(n_pairs, t)); nodes["x"].append(np.full(n_pairs, xv[0]))
                nodes["y1"].append(y1); nodes["y2"].append(y2); nodes["lam"].append(np.full(n_pairs, lam))
    lhs = np.concatenate(lhs_all)
    rhs = np.concatenate(rhs_all)
    return _assemble(f"H2_{mode}", lhs, rhs, {k: np.concatenate(v) for k, v in nodes.items()})


@dataclass(frozen=True)
class ThetaTuples:
    """Sample of (t, x, y2, z2, dy, dz, theta); y1 and z1 are reconstructed from the deltas."""

    t: np.ndarray
    x: np.ndarray
    y2: np.ndarray
    z2: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    theta: np.ndarray

    @property
    def y1(self) -> np.ndarray:
        return self.theta * self.y2 + (1 - self.theta) * self.dy

    @property
    def z1(self) -> np.ndarray:
        th = self.theta[:, None]
        return th * self.z2 + (1 - th) * self.dz

    @classmethod
    def from_pairs(cls, t, x, y1, z1, y2, z2, theta) -> "ThetaTuples":
        theta = np.asarray(theta, float)
        x, y1, z1 = _as_batch(x, y1, z1)
        _, y2, z2 = _as_batch(x, y2, z2)
        dy = (y1 - theta * y2) / (1 - theta)
        dz = (z1 - theta[:, None] * z2) / (1 - theta[:, None])
        return cls(np.broadcast_to(np.asarray(t, float), y1.shape).copy(), x, y2, z2, dy, dz, theta)


def default_theta_tuples(thetas: Sequence[float] = (0.01, 0.1, 0.5, 0.9, 0.99), span: float = 4.0,
                         n: int = 9, x_vals: Sequence[float] = (-2.0, 0.0, 2.0),
                         t_vals: Sequence[float] = (0.0, 1.0)) -> ThetaTuples:
    ax = np.linspace(-span, span, n)
    grids = np.meshgrid(np.asarray(t_vals), np.asarray(x_vals), ax, ax, ax, ax, np.asarray(thetas), indexing="ij")
    t, xv, y2, z2, dy, dz, th = (a.ravel() for a in grids)
    return ThetaTuples(t, xv[:, None], y2, z2[:, None], dy, dz[:, None], th)


def check_H2_prime(g: MarkovGenerator, tuples: ThetaTuples | None = None, mirrored: bool = False,
                   decl: H2pDecl | None = None) -> AssumptionReport:
    """Sampled theta-difference bound; both sides are divided by (1 - theta)."""
    tuples = tuples or default_theta_tuples()
    d = decl or g.h2p
    if d is None:
        raise MissingDeclarationError(f"generator {g.name!r} declares no constants for the theta-difference bound")
    th = tuples.theta
    g1 = g(tuples.t, tuples.x, tuples.y1, tuples.z1)
    g2 = g(tuples.t, tuples.x, tuples.y2, tuples.z2)
    diff = (g1 - th * g2) / (1 - th)
    if mirrored:
        lhs = np.where(tuples.dy < 0.0, -diff, 0.0)
    else:
        lhs = np.where(tuples.dy > 0.0, diff, 0.0)
    rhs = (d.f(tuples.x) + d.k * np.abs(tuples.y2) + d.beta * np.abs(tuples.dy)
           + d.gamma * znorm(tuples.dz) ** g.params.alpha)
    scale = 1.0 + (np.abs(g1) + np.abs(g2)) / (1 - th) + np.abs(rhs)
    nodes = {"t": tuples.t, "x": tuples.x[:, 0], "y2": tuples.y2, "dy": tuples.dy,
             "z2": znorm(tuples.z2), "dz": znorm(tuples.dz), "theta": th}
    return _assemble("H2prime_mirrored" if mirrored else "H2prime", lhs, rhs, nodes,
                     notes=["theta is sampled; uniformity over all theta in (0,1) is not certified"],
                     scale=scale)


def check_all(g: MarkovGenerator) -> dict[str, AssumptionReport]:
    """Run every sampled check used by the concordance table."""
    return {
        "H1": check_H1(g),
        "H1doubleprime": check_H1_one_sided(g, variant="H1doubleprime"),
        "H2_convex": check_H2(g, mode="convex"),
        "H2_concave": check_H2(g, mode="concave"),
        "H2prime": check_H2_prime(g),
    }


# --------------------------------------------------------------------------
# truncation
# --------------------------------------------------------------------------

def truncate_terminal(xi, n: float, p: float) -> np.ndarray:
    """``xi^+ ^ n - xi^- ^ p`` which is a clip to [-p, n]."""
    return np.clip(np.asarray(xi, dtype=float), -float(p), float(n))


@dataclass
class TruncatedGenerator(MarkovGenerator):
    base: MarkovGenerator | None = None
    n: float = 1.0
    p_trunc: float = 1.0


def truncate(g: MarkovGenerator, n: float, p: float) -> TruncatedGenerator:
    if n < 1 or p < 1:
        raise ValueError("truncation levels must be >= 1")
    base = g.fn

    def fn(t, x, y, z):
        return np.clip(base(t, x, y, z), -float(p), float(n))

    return TruncatedGenerator(
        fn=fn, params=g.params, name=f"{g.name}^[{n:g},{p:g}]", growth=g.growth,
        depends_on_t=g.depends_on_t, depends_on_x=g.depends_on_x, depends_on_y=g.depends_on_y,
        base=g, n=float(n), p_trunc=float(p),
    )


# --------------------------------------------------------------------------
# theta-difference generators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FrozenPaths:
    """Solution samples on the time grid: Y (paths, N+1), Z (paths, N+1, d)."""

    time_grid: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Y_prime: np.ndarray
    Z_prime: np.ndarray

    def __post_init__(self):
        n_t = len(self.time_grid)
        for name in ("Y", "Y_prime"):
            a = getattr(self, name)
            if a.ndim != 2 or a.shape[1] != n_t:
                raise MisalignedPathError(f"{name} has shape {a.shape}, expected (paths, {n_t})")
        for name in ("Z", "Z_prime"):
            a = getattr(self, name)
            if a.ndim != 3 or a.shape[1] != n_t or a.shape[0] != self.Y.shape[0]:
                raise MisalignedPathError(f"{name} has shape {a.shape}, expected (paths, {n_t}, d)")
        if self.Y.shape != self.Y_prime.shape or self.Z.shape != self.Z_prime.shape:
            raise MisalignedPathError("primed and unprimed paths differ in shape")

    def step_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.time_grid - t)))
        if abs(self.time_grid[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise MisalignedPathError(f"time {t} is not a node of the frozen grid")
        return i


@dataclass
class ThetaDifferenceGenerator:
    g: MarkovGenerator
    g_prime: MarkovGenerator
    theta: float
    frozen: FrozenPaths
    mode: str = "convex"

    def __call__(self, t: float, x, y, z, paths: np.ndarray | None = None) -> np.ndarray:
        """Evaluate on the paths ``paths`` (default: all) at grid time ``t``."""
        i = self.frozen.step_of(t)
        x, y, z = _as_batch(x, y, z)
        sel = slice(None) if paths is None else paths
        Yp, Zp = self.frozen.Y_prime[sel, i], self.frozen.Z_prime[sel, i]
        if Yp.shape[0] != y.shape[0]:
            raise MisalignedPathError("evaluation batch does not match the frozen path count")
        th = self.theta
        gap = self.g(t, x, Yp, Zp) - self.g_prime(t, x, Yp, Zp)
        if self.mode == "convex":
            inner = self.g(t, x, (1 - th) * y + th * Yp, (1 - th) * z + th * Zp) - th * self.g(t, x, Yp, Zp)
            return inner / (1 - th) + th / (1 - th) * gap
        Y, Z = self.frozen.Y[sel, i], self.frozen.Z[sel, i]
        inner = th * self.g(t, x, Y, Z) - self.g(t, x, -(1 - th) * y + th * Y, -(1 - th) * z + th * Z)
        return inner / (1 - th) + gap / (1 - th)


def theta_difference(g: MarkovGenerator, g_prime: MarkovGenerator, theta: float, frozen: FrozenPaths,
                     mode: str = "convex") -> ThetaDifferenceGenerator:
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    if mode not in ("convex", "concave"):
        raise ValueError(f"unknown mode {mode!r}")
    return ThetaDifferenceGenerator(g, g_prime, float(theta), frozen, mode)


def check_theta_one_sided(tdg: ThetaDifferenceGenerator, t: float, x, y, z) -> AssumptionReport:
    """``dg 1{y>0} <= g 1{y>0}`` (convex) or ``<= -g(-y,-z) 1{y>0}`` (concave) at frozen paths."""
    x, y, z = _as_batch(x, y, z)
    lhs = np.where(y > 0.0, tdg(t, x, y, z), 0.0)
    if tdg.mode == "convex":
        rhs = np.where(y > 0.0, tdg.g(t, x, y, z), 0.0)
    else:
        rhs = np.where(y > 0.0, -tdg.g(t, x, -y, -z), 0.0)
    return _assemble("theta_one_sided", lhs, rhs, {"y": y, "z": znorm(z)})


# --------------------------------------------------------------------------
# inf-convolution (Lipschitz regularisation), 1-D z
# --------------------------------------------------------------------------

@dataclass
class _Tables:
    pos: np.ndarray
    neg: np.ndarray
    pos_t: np.ndarray
    neg_t: np.ndarray
    pos_edge: np.ndarray  # (k, 3) boundary nodes: y', z', value
    neg_edge: np.ndarray


class InfConvolution(MarkovGenerator):
    def __init__(self, g: MarkovGenerator, m: float, l: float, half_width: float = 10.0,
                 step: float = 0.05, cache_size: int = 32):
        if m < 1 or l < 1:
            raise ValueError("Lipschitz levels must be >= 1")
        self.base, self.m, self.l = g, float(m), float(l)
        self.half_width, self.step = float(half_width), float(step)
        n = int(round(2 * half_width / step)) + 1
        self.nodes = -half_width + step * np.arange(n)
        self.y_nodes = self.nodes if g.depends_on_y else np.zeros(1)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.boundary_hits = 0
        # the edge scan costs O(box perimeter) per query; only run it on the first calls
        self.box_checks_left = 8
        super().__init__(
            fn=self._eval, params=g.params, name=f"{g.name}^inf[{m:g},{l:g}]", growth=g.growth,
            depends_on_t=g.depends_on_t, depends_on_x=g.depends_on_x, depends_on_y=g.depends_on_y,
            lipschitz=max(m, l),
        )

    def _tables(self, t, xv: np.ndarray) -> _Tables:
        key = (float(t) if self.base.depends_on_t else None,
               tuple(np.round(xv, 14)) if self.base.depends_on_x else None)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        yy, zz = np.meshgrid(self.y_nodes, self.nodes, indexing="ij")
        n_tab = yy.size
        vals = self.base(t, np.broadcast_to(xv, (n_tab, xv.size)), yy.ravel(), zz.ravel()[:, None])
        vals = vals.reshape(yy.shape)
        pos, neg = np.maximum(vals, 0.0), np.maximum(-vals, 0.0)
        edge = np.zeros(yy.shape, dtype=bool)
        edge[:, [0, -1]] = True
        if yy.shape[0] > 1:
            edge[[0, -1], :] = True

        def edge_tab(v):
            return np.column_stack([yy[edge], zz[edge], v[edge]])

        tab = _Tables(pos, neg, _kernels.l1_transform_rows(pos, self.m, self.step),
                      _kernels.l1_transform_rows(neg, self.l, self.step), edge_tab(pos), edge_tab(neg))
        self._cache[key] = tab
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return tab

    def _query(self, vals, trans, lip, qy, qz):
        if vals.shape[0] == 1:
            reps = np.broadcast_to(vals, (qz.size, vals.shape[1]))
            trs = np.broadcast_to(trans, (qz.size, vals.shape[1]))
            return _kernels._pl_cone_min_vec(reps, trs, self.nodes[0], self.step, lip, qz)
        return _kernels.infconv_query(vals, trans, self.nodes[0], self.nodes[0], self.step, lip, qy, qz)

    def _edge_min(self, edge, lip, qy, qz):
        ey = edge[:, 0] if self.base.depends_on_y else 0.0 * edge[:, 0]
        out = np.empty(qz.size)
        for s in range(0, qz.size, 2048):
            sl = slice(s, s + 2048)
            dy = np.abs(qy[sl, None] - ey[None, :]) if self.base.depends_on_y else 0.0
            out[sl] = np.min(edge[None, :, 2] + lip * (dy + np.abs(qz[sl, None] - edge[None, :, 1])), axis=1)
        return out

    def _eval(self, t, x, y, z):
        if z.shape[1] != 1:
            raise ValueError("inf-convolution supports a one-dimensional z only")
        out = np.empty(y.shape[0])
        tt = np.broadcast_to(np.asarray(t, float), y.shape)
        if self.base.depends_on_x or self.base.depends_on_t:
            keys = np.column_stack([tt if self.base.depends_on_t else np.zeros_like(tt), x])
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            groups = [(u[0], u[1:], np.flatnonzero(inv.ravel() == j)) for j, u in enumerate(uniq)]
        else:
            groups = [(tt[0] if tt.size else 0.0, x[0] if len(x) else np.zeros(1), slice(None))]
        qz_all = z[:, 0]
        hits = 0
        for tv, xv, idx in groups:
            tab = self._tables(tv, np.asarray(xv))
            qy, qz = y[idx], qz_all[idx]
            up = self._query(tab.pos, tab.pos_t, self.m, qy, qz)
            dn = self._query(tab.neg, tab.neg_t, self.l, qy, qz)
            out[idx] = up - dn
            inside = np.abs(qz) < self.half_width
            if self.base.depends_on_y:
                inside &= np.abs(qy) < self.half_width
            if self.box_checks_left <= 0:
                continue
            # boundary attains (or ties) the infimum: the box may be too small
            e_up = self._edge_min(tab.pos_edge, self.m, qy, qz)
            e_dn = self._edge_min(tab.neg_edge, self.l, qy, qz)
            hits += int(np.count_nonzero(inside & (((e_up <= up + 1e-12) & (up > 1e-12))
                                                   | ((e_dn <= dn + 1e-12) & (dn > 1e-12)))))
            hits += int(np.count_nonzero(~inside))
        self.box_checks_left -= 1
        if hits:
            self.boundary_hits += hits
            warnings.warn(f"inf-convolution minimiser on the search-box boundary for {hits} queries; "
                          "enlarge the box", RuntimeWarning, stacklevel=3)
        return out


def inf_convolution(g: MarkovGenerator, m: float, l: float, half_width: float = 10.0,
                    step: float = 0.05) -> InfConvolution:
    return InfConvolution(g, m, l, half_width=half_width, step=step)
