"""Recompute the frozen reference values in tests/frozen_values.py from independent oracles.

Run ``python tools/derive_oracles.py > tests/frozen_values.py``.  Nothing here imports
the package: every value comes from mpmath, scipy ODE integration or quadrature.
"""

import math

import mpmath as mp
import numpy as np
from scipy.integrate import quad, solve_ivp

mp.mp.dps = 40


def k_mp(alpha, eps):
    a, e = mp.mpf(alpha), mp.mpf(eps)
    q = (2 - a) / a
    base = (1 + e) ** q / (2 * (a - 1) * e * ((1 + e) ** q - 1))
    return base ** (a / (2 * (a - 1)))


def c_tilde_mp(alpha, gamma):
    a, g = mp.mpf(alpha), mp.mpf(gamma)
    return (a * g) ** (2 / (2 - a)) / (2 * (2 * (a - 1) / a) ** (2 * (a - 1) / (2 - a)))


def mu_ode(alpha, beta, gamma, eps, T):
    """Integrate mu' = r beta mu + q c_tilde (1 + eps) mu^{-r/q} with an adaptive RK method."""
    q = (2 - alpha) / alpha
    r = 2 * (alpha - 1) / alpha
    ct = float(c_tilde_mp(alpha, gamma))

    def rhs(s, m):
        return [r * beta * m[0] + q * ct * (1 + eps) * m[0] ** (-r / q)]

    sol = solve_ivp(rhs, (0.0, T), [eps], method="DOP853", rtol=1e-13, atol=1e-14)
    return float(sol.y[0, -1])


def delta_scan(alpha, eps, n=10 ** 6):
    """Dense-grid infimum of the delta profile, plus the analytic stationary point."""
    k = float(k_mp(alpha, eps))
    r = 2 * (alpha - 1) / alpha
    u_star = (2.0 / (alpha * eps * r)) ** (1.0 / r)
    x_star = max(0.0, u_star - k)
    hi = 4.0 * max(x_star, 1.0)
    x = np.linspace(0.0, hi, n)
    u = x + k
    logp = eps * u ** r + math.log(2 * (alpha - 1) ** 2 * eps / alpha ** 2) - (2 / alpha) * np.log(u)
    j = int(np.argmin(logp))
    u0 = x_star + k
    exact = math.exp(eps * u0 ** r) * 2 * (alpha - 1) ** 2 * eps / (alpha ** 2 * u0 ** (2 / alpha))
    return float(math.exp(logp[j])), float(x[j]), exact, x_star


def exp_sup_abs_bm(T=1.0):
    """E exp(sup_{s<=T} |B_s|) = 1 + int_0^inf e^m P(M > m) dm, series for P(M < m)."""
    def cdf(m):
        if m <= 0:
            return mp.mpf(0)
        if m >= 0.5:  # reflection series, fast for moderate and large m
            tot = mp.mpf(0)
            for k in range(-40, 41):
                tot += (-1) ** k * (mp.ncdf((2 * k + 1) * m / mp.sqrt(T)) - mp.ncdf((2 * k - 1) * m / mp.sqrt(T)))
            return tot
        tot = mp.mpf(0)  # theta series, fast for small m
        for k in range(0, 60):
            tot += (-1) ** k / (2 * k + 1) * mp.exp(-(2 * k + 1) ** 2 * mp.pi ** 2 * T / (8 * m ** 2))
        return 4 / mp.pi * tot

    return float(1 + mp.quad(lambda m: mp.exp(m) * (1 - cdf(m)), [0, 0.5, 2, 5, 10, 40]))


def lognormal_psi(mu, alpha, m, s):
    r = 2 * (alpha - 1) / alpha
    f = lambda z: math.exp(mu * math.exp(r * (m + s * z))) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return quad(f, -12, 12, epsabs=0, epsrel=1e-13, limit=200)[0]


def main():
    out = ['"""Reference values from tools/derive_oracles.py (mpmath, scipy ODE and quadrature oracles)."""', ""]
    out.append(f"K_1P5_EPS1 = {float(k_mp(1.5, 1.0))!r}")
    out.append(f"K_1P5_LARGE_EPS = {[float(k_mp(1.5, e)) for e in (10, 100, 1000)]!r}")
    out.append(f"C_TILDE_1P5 = {float(c_tilde_mp(1.5, 1.0))!r}")
    cases = [(1.5, 0.0, 1.0, 0.1, 1.0), (1.5, 1.0, 1.0, 0.5, 1.0), (1.2, 0.0, 1.0, 1.0, 1.0),
             (1.8, 0.5, 2.0, 0.3, 0.5), (1.5, 0.2, 0.5, 2.0, 2.0)]
    out.append("# (alpha, beta, gamma, eps, T) -> mu(T) by DOP853 integration")
    out.append("MU_ODE = {")
    for c in cases:
        out.append(f"    {c!r}: {mu_ode(*c)!r},")
    out.append("}")
    out.append("# (alpha, eps) -> (grid min, grid argmin, analytic min, analytic argmin)")
    out.append("DELTA_SCAN = {")
    for a in (1.2, 1.5, 1.8):
        for e in (0.1, 1.0, 10.0):
            out.append(f"    {(a, e)!r}: {delta_scan(a, e)!r},")
    out.append("}")
    out.append(f"EXP_SUP_ABS_BM_T1 = {exp_sup_abs_bm(1.0)!r}")
    out.append("# (mu, alpha, m, s) -> E exp(mu X^{2/alpha*}), X lognormal(m, s)")
    out.append(f"LOGNORMAL_PSI = {{(0.8, 1.5, 0.0, 0.5): {lognormal_psi(0.8, 1.5, 0.0, 0.5)!r}}}")
    print("\n".join(out))


if __name__ == "__main__":
    main()
