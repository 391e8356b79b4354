"""Explicit a-priori envelope for sub-quadratic generators.

Notation used throughout::

    q = (2 - alpha) / alpha          exponent of the closed-form mu-curves
    r = 2 (alpha - 1) / alpha        exponent of x inside phi and psi (r = 2/alpha*)

The curve ``mu`` solves ``mu' = (r beta) mu + C (1 + eps) mu^{-r/q}`` with
``mu(0) = eps`` and ``C = q c_tilde``.  Two closed forms exist: one for
``beta = 0`` and one for ``beta > 0``.

The drift-branch constant is taken as ``c_bar = q c_tilde / (r beta)`` which is
the value that makes the closed form an exact solution of the ODE above.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import CertificationError, DomainError, DriftError, EmptySampleError, InfeasibleError
from .report import FAIL, PASS, Report

EXP_CAP = 700.0


# --------------------------------------------------------------------------
# parameters and constants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SubQuadParams:
    """Growth constants: ``|g| <= |g(0,0)| + beta |y| + gamma |z|^alpha``."""

    alpha: float
    beta: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be a finite value >= 0, got {self.beta}")
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be a finite value > 0, got {self.gamma}")

    @property
    def alpha_star(self) -> float:
        return self.alpha / (self.alpha - 1.0)

    @property
    def q(self) -> float:
        return (2.0 - self.alpha) / self.alpha

    @property
    def r(self) -> float:
        return 2.0 * (self.alpha - 1.0) / self.alpha


def _check_alpha(alpha: float) -> None:
    if not (1.0 < alpha < 2.0):
        raise DomainError(f"alpha must lie in (1, 2), got {alpha}")


def log_k_alpha_eps(alpha: float, eps: float) -> float:
    _check_alpha(alpha)
    if not (eps > 0.0 and math.isfinite(eps)):
        raise DomainError(f"eps must be a finite value > 0, got {eps}")
    q = (2.0 - alpha) / alpha
    log_a = q * math.log1p(eps)
    # (1+eps)^q - 1 via expm1 keeps precision for small eps
    denom = 2.0 * (alpha - 1.0) * eps * math.expm1(log_a)
    return alpha / (2.0 * (alpha - 1.0)) * (log_a - math.log(denom))


def k_alpha_eps(alpha: float, eps: float) -> float:
    """Shift ``k`` inside the test function; positive, and finite unless it exceeds double range."""
    lk = log_k_alpha_eps(alpha, eps)
    if lk > 709.0:
        raise OverflowError(f"k(alpha={alpha}, eps={eps}) = exp({lk:.6g}) exceeds double range")
    return math.exp(lk)


def log_c_tilde(alpha: float, gamma: float) -> float:
    _check_alpha(alpha)
    r = 2.0 * (alpha - 1.0) / alpha
    return (2.0 / (2.0 - alpha)) * math.log(alpha * gamma) - math.log(2.0) - (
        2.0 * (alpha - 1.0) / (2.0 - alpha)
    ) * math.log(r)


def c_tilde(alpha: float, gamma: float) -> float:
    # overflows to inf as alpha -> 2; callers needing that regime use the log form
    lc = log_c_tilde(alpha, gamma)
    return math.exp(lc) if lc < 709.0 else math.inf


def _log_c_bar(p: SubQuadParams) -> float:
    return math.log(p.q) + log_c_tilde(p.alpha, p.gamma) - math.log(p.r * p.beta)


def structural_constants(p: SubQuadParams, need_bar: bool = False) -> tuple[float, float | None]:
    """Return ``(c_tilde, c_bar)``; ``c_bar`` is None when ``beta == 0``.

    With ``need_bar=True`` a zero drift raises :class:`DriftError` instead.
    """
    ct = c_tilde(p.alpha, p.gamma)
    if p.beta == 0.0:
        if need_bar:
            raise DriftError("c_bar requires beta > 0")
        return ct, None
    lb = _log_c_bar(p)
    return ct, (math.exp(lb) if lb < 709.0 else math.inf)


# --------------------------------------------------------------------------
# mu-curves
# --------------------------------------------------------------------------

class CurveKind(str, enum.Enum):
    TILDE = "TildeNoDrift"
    BAR = "BarWithDrift"


@dataclass(frozen=True)
class EnvelopeCurve:
    params: SubQuadParams
    epsilon: float
    T: float
    kind: CurveKind
    k_eps: float = field(init=False)
    c_const: float = field(init=False)
    log_c_const: float = field(init=False)

    def __post_init__(self):
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise DomainError(f"horizon must be > 0, got {self.T}")
        kind = CurveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "k_eps", k_alpha_eps(self.params.alpha, self.epsilon))
        ct, cb = structural_constants(self.params, need_bar=kind is CurveKind.BAR)
        object.__setattr__(self, "c_const", cb if kind is CurveKind.BAR else ct)
        lc = _log_c_bar(self.params) if kind is CurveKind.BAR else log_c_tilde(self.params.alpha, self.params.gamma)
        object.__setattr__(self, "log_c_const", lc)

    @classmethod
    def for_params(cls, params: SubQuadParams, epsilon: float, T: float) -> "EnvelopeCurve":
        """Pick the drift branch iff ``beta > 0``."""
        kind = CurveKind.BAR if params.beta > 0.0 else CurveKind.TILDE
        return cls(params, float(epsilon), float(T), kind)

    @property
    def lam(self) -> float:
        # exponential rate of the drift branch
        return self.params.r * self.params.beta / self.params.q

    def mu(self, s):
        return mu(self, s)

    def mu_prime(self, s):
        return mu_prime(self, s)

    def ode_rhs(self, m):
        """Right side of the defining ODE evaluated at the value ``m``."""
        p = self.params
        beta = p.beta if self.kind is CurveKind.BAR else 0.0
        m = np.asarray(m, dtype=float)
        log_c = math.log(p.q) + log_c_tilde(p.alpha, p.gamma) + math.log1p(self.epsilon)
        return p.r * beta * m + np.exp(log_c - (p.r / p.q) * np.log(m))


def _check_s(curve: EnvelopeCurve, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    tol = 1e-12 * max(1.0, curve.T)
    if np.any(~np.isfinite(s)) or np.any(s < -tol) or np.any(s > curve.T + tol):
        raise DomainError(f"s must lie in [0, {curve.T}]")
    return np.clip(s, 0.0, curve.T)


def _log_expm1(x):
    """``log(exp(x) - 1)`` for x >= 0 without overflow."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = x + np.log(-np.expm1(-x))
    return float(out) if out.ndim == 0 else out


def _log_inner(curve: EnvelopeCurve, s: np.ndarray) -> np.ndarray:
    # mu = exp(q * log_inner(s)); log domain survives alpha -> 2
    p = curve.params
    log_e0 = math.log(curve.epsilon) / p.q
    log_scale = math.log1p(curve.epsilon) + curve.log_c_const
    with np.errstate(divide="ignore"):
        if curve.kind is CurveKind.TILDE:
            return np.logaddexp(log_scale + np.log(s), log_e0)
        lam = curve.lam
        return np.logaddexp(log_e0 + lam * s, log_scale + _log_expm1(lam * s))


def _log_d_inner(curve: EnvelopeCurve, s: np.ndarray) -> np.ndarray:
    p = curve.params
    log_scale = math.log1p(curve.epsilon) + curve.log_c_const
    if curve.kind is CurveKind.TILDE:
        return np.full_like(s, log_scale)
    log_e0 = math.log(curve.epsilon) / p.q
    return np.logaddexp(log_e0, log_scale) + math.log(curve.lam) + curve.lam * s


def mu(curve: EnvelopeCurve, s):
    """Closed-form mu(s); scalar in, float out; array in, array out."""
    s_arr = _check_s(curve, s)
    out = np.exp(curve.params.q * _log_inner(curve, s_arr))
    out = np.where(s_arr == 0.0, curve.epsilon, out)
    return float(out) if np.ndim(s) == 0 else out


def mu_prime(curve: EnvelopeCurve, s):
    s_arr = _check_s(curve, s)
    q = curve.params.q
    out = q * np.exp((q - 1.0) * _log_inner(curve, s_arr) + _log_d_inner(curve, s_arr))
    return float(out) if np.ndim(s) == 0 else out


def mu_zero(p: SubQuadParams, T: float) -> float:
    """Limit of ``mu(T)`` as ``eps -> 0+`` for the branch selected by ``beta``."""
    if not (T > 0.0 and math.isfinite(T)):
        raise DomainError(f"horizon must be > 0, got {T}")
    if p.beta == 0.0:
        return math.exp(p.q * (log_c_tilde(p.alpha, p.gamma) + math.log(T)))
    lam = p.r * p.beta / p.q
    return math.exp(p.q * (_log_c_bar(p) + _log_expm1(lam * T)))


def match_epsilon(p: SubQuadParams, T: float, mu_target: float) -> float:
    """Solve ``mu_eps(T) = mu_target`` for eps; the map is strictly increasing."""
    m0 = mu_zero(p, T)
    if not (mu_target > m0):
        raise InfeasibleError(f"target {mu_target} is not above the infimum {m0}")

    def f(log_eps):
        return mu(EnvelopeCurve.for_params(p, math.exp(log_eps), T), T) - mu_target

    lo, hi = -60.0, 1.0
    while f(hi) < 0.0:
        hi += 2.0
        if hi > 700.0:
            raise InfeasibleError("could not bracket the target from above")
    if f(lo) > 0.0:
        raise InfeasibleError("target too close to the infimum to resolve in double precision")
    log_eps = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    eps = math.exp(log_eps)
    # polish in eps itself so the absolute residual meets the contract
    g = lambda e: mu(EnvelopeCurve.for_params(p, e, T), T) - mu_target
    a, b = eps * (1 - 1e-9), eps * (1 + 1e-9)
    if g(a) < 0.0 < g(b):
        eps = optimize.brentq(g, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    return eps


# --------------------------------------------------------------------------
# test function
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    curve: EnvelopeCurve

    __test__ = False  # not a pytest class

    def __call__(self, s, x):
        return phi_eval(self, s, x)


@dataclass(frozen=True)
class PhiValues:
    phi: np.ndarray
    phi_x: np.ndarray
    phi_xx: np.ndarray
    phi_s: np.ndarray
    saturated: np.ndarray
    # derivatives divided by phi; always finite
    ratio_x: np.ndarray
    ratio_xx: np.ndarray
    ratio_s: np.ndarray
    exponent: np.ndarray


def phi_eval(tf: TestFunction, s, x, cap: float = EXP_CAP) -> PhiValues:
    """phi and its three partial derivatives; exponents above ``cap`` are clamped and flagged."""
    curve = tf.curve if isinstance(tf, TestFunction) else tf
    p = curve.params
    s_arr = _check_s(curve, s)
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr >= 0.0)):
        raise DomainError("x must be >= 0")
    s_arr, x_arr = np.broadcast_arrays(s_arr, x_arr)
    m = np.asarray(mu(curve, s_arr), dtype=float)
    dm = np.asarray(mu_prime(curve, s_arr), dtype=float)
    big_x = x_arr + curve.k_eps
    xr = big_x ** p.r
    expo = m * xr
    saturated = expo > cap
    phi = np.exp(np.minimum(expo, cap))
    a = p.alpha
    ratio_x = p.r * m * big_x ** (-p.q)
    ratio_xx = 2.0 * (a - 1.0) * m * (2.0 * (a - 1.0) * m * xr - (2.0 - a)) / (a * a * big_x ** (2.0 / a))
    ratio_s = xr * dm
    return PhiValues(
        phi=phi, phi_x=phi * ratio_x, phi_xx=phi * ratio_xx, phi_s=phi * ratio_s,
        saturated=saturated, ratio_x=ratio_x, ratio_xx=ratio_xx, ratio_s=ratio_s, exponent=expo,
    )


# --------------------------------------------------------------------------
# delta certification
# --------------------------------------------------------------------------

def _log_delta_profile(alpha: float, eps: float, k: float, x):
    big_x = np.asarray(x, dtype=float) + k
    r = 2.0 * (alpha - 1.0) / alpha
    const = math.log(2.0 * (alpha - 1.0) ** 2 * eps / alpha ** 2)
    return eps * big_x ** r + const - (2.0 / alpha) * np.log(big_x)


def delta_profile(curve: EnvelopeCurve, x) -> np.ndarray:
    """The function of x whose infimum over x >= 0 is delta."""
    return np.exp(_log_delta_profile(curve.params.alpha, curve.epsilon, curve.k_eps, x))


@dataclass(frozen=True)
class DeltaCertificate:
    delta: float
    x_min: float
    x_max: float
    expansions: int


def certify_delta_details(curve: EnvelopeCurve, n_grid: int = 4000, max_expansions: int = 12) -> DeltaCertificate:
    a, eps, k = curve.params.alpha, curve.epsilon, curve.k_eps
    prof = lambda x: _log_delta_profile(a, eps, k, x)
    x_max = 10.0 * (k + 1.0)
    for expansion in range(max_expansions + 1):
        grid = np.concatenate(([0.0], np.logspace(-8, math.log10(x_max), n_grid)))
        vals = prof(grid)
        tail = vals[grid >= x_max / 10.0]
        if tail.size >= 2 and np.all(np.diff(tail) > 0.0):
            break
        x_max *= 10.0
    else:
        raise CertificationError(f"tail of delta profile not increasing up to x_max={x_max:.3e}")
    j = int(np.argmin(vals))
    best_x, best_v = grid[j], vals[j]
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(prof, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(1.0, hi)})
        if res.fun < best_v:
            best_x, best_v = float(res.x), float(res.fun)
    delta = math.exp(best_v)
    if not delta > 0.0:
        raise CertificationError("delta underflowed to zero")
    return DeltaCertificate(delta=delta, x_min=float(best_x), x_max=x_max, expansions=expansion)


def certify_delta(curve: EnvelopeCurve) -> float:
    """Infimum over x >= 0 of the delta profile, with a monotone-tail certificate."""
    return certify_delta_details(curve).delta


# --------------------------------------------------------------------------
# grid verification of the differential inequality
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    n_s: int = 50
    n_x: int = 50
    x_hi: float = 50.0
    n_z: int = 50
    z_hi: float = 100.0
    log_floor: float = 1e-3

    def s_nodes(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.n_s)

    def _log_nodes(self, hi: float, n: int) -> np.ndarray:
        # zero plus log-spaced positives
        return np.concatenate(([0.0], np.logspace(math.log10(self.log_floor), math.log10(hi), n - 1)))

    def x_nodes(self) -> np.ndarray:
        return self._log_nodes(self.x_hi, self.n_x)

    def z_nodes(self) -> np.ndarray:
        return self._log_nodes(self.z_hi, self.n_z)


def envelope_lhs_over_phi(curve: EnvelopeCurve, delta: float, s, x, z) -> np.ndarray:
    """Left side of the differential inequality divided by phi (same sign, never overflows)."""
    p = curve.params
    s, x, z = np.broadcast_arrays(np.asarray(s, float), np.asarray(x, float), np.abs(np.asarray(z, float)))
    v = phi_eval(TestFunction(curve), s, x)
    beta = p.beta if curve.kind is CurveKind.BAR else 0.0
    inv_phi = np.exp(-v.exponent)
    return (
        -v.ratio_x * (beta * x + p.gamma * z ** p.alpha)
        + 0.5 * (v.ratio_xx - delta * inv_phi) * z * z
        + v.ratio_s
    )


def verify_envelope_inequality(curve: EnvelopeCurve, delta: float, grid: GridSpec | None = None,
                               tol: float = 1e-9, max_listed: int = 20) -> Report:
    grid = grid or GridSpec()
    s = grid.s_nodes(curve.T)[:, None, None]
    x = grid.x_nodes()[None, :, None]
    z = grid.z_nodes()[None, None, :]
    val = envelope_lhs_over_phi(curve, delta, s, x, z)
    sat = phi_eval(TestFunction(curve), s, x).saturated
    j = np.unravel_index(int(np.argmin(val)), val.shape)
    bad = np.argwhere(val < -tol)
    s1, x1, z1 = grid.s_nodes(curve.T), grid.x_nodes(), grid.z_nodes()
    violations = [
        {"s": s1[i], "x": x1[k], "z": z1[l], "value": val[i, k, l]} for i, k, l in bad[:max_listed]
    ]
    return Report(
        name=f"envelope_inequality[{curve.kind.value}]",
        status=PASS if bad.size == 0 else FAIL,
        metrics={
            "alpha": curve.params.alpha, "beta": curve.params.beta, "gamma": curve.params.gamma,
            "epsilon": curve.epsilon, "delta": delta, "min_value": float(val[j]),
            "argmin": {"s": s1[j[0]], "x": x1[j[1]], "z": z1[j[2]]},
            "n_nodes": int(val.size), "n_violations": int(bad.shape[0]),
            "saturated_phi_nodes": int(np.count_nonzero(sat)) * grid.n_z,
        },
        notes=["values are the left side divided by phi, which has the same sign"],
        tables={"violations": violations},
    )


# --------------------------------------------------------------------------
# psi and the a-priori bound
# --------------------------------------------------------------------------

def psi(x, mu_val, alpha: float, cap: float = EXP_CAP):
    """``exp(mu x^{2/alpha*})`` and a boolean saturation mask."""
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    m = np.asarray(mu_val, dtype=float)
    if np.any(~(x >= 0.0)) or np.any(~(m >= 0.0)):
        raise DomainError("psi requires x >= 0 and mu >= 0")
    expo = m * x ** (2.0 * (alpha - 1.0) / alpha)
    sat = expo > cap
    return np.exp(np.minimum(expo, cap)), sat


@dataclass(frozen=True)
class AprioriBound:
    curve: EnvelopeCurve
    delta: float
    big_c: float
    log_big_c: float

    @classmethod
    def from_curve(cls, curve: EnvelopeCurve, delta: float | None = None) -> "AprioriBound":
        if delta is None:
            delta = certify_delta(curve)
        log_c = mu(curve, curve.T) * curve.k_eps ** curve.params.r
        return cls(curve=curve, delta=float(delta), big_c=math.exp(min(log_c, EXP_CAP)), log_big_c=log_c)

    @property
    def mu_T(self) -> float:
        return mu(self.curve, self.curve.T)


def apriori_rhs(bound: AprioriBound, sample) -> tuple[float, float]:
    """``big_c * E[psi(sample, mu(T))]`` and its Monte-Carlo standard error."""
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size == 0:
        raise EmptySampleError("apriori_rhs needs a nonempty sample")
    vals, sat = psi(np.abs(sample), bound.mu_T, bound.curve.params.alpha)
    if np.any(sat):
        raise OverflowError(f"psi saturated on {int(sat.sum())} of {sample.size} samples")
    mean = float(np.mean(vals))
    if sample.size > 1 and not np.all(vals == vals[0]):
        se = float(np.std(vals, ddof=1) / math.sqrt(sample.size))
    else:
        mean = float(vals[0]) if np.all(vals == vals[0]) else mean
        se = 0.0
    return bound.big_c * mean, bound.big_c * se


def mu_table(curve: EnvelopeCurve, n: int = 101) -> np.ndarray:
    """Two-column (s, mu(s)) samples on a uniform grid."""
    s = np.linspace(0.0, curve.T, n)
    return np.column_stack([s, mu(curve, s)])
