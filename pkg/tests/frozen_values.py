"""Reference values from tools/derive_oracles.py (mpmath, scipy ODE and quadrature oracles)."""

K_1P5_EPS1 = 10.672172072454744
K_1P5_LARGE_EPS = [0.07745238796767859, 0.0014370489202506984, 3.703498088967329e-05]
C_TILDE_1P5 = 5.6953125
# (alpha, beta, gamma, eps, T) -> mu(T) by DOP853 integration
MU_ODE = {
    (1.5, 0.0, 1.0, 0.1, 1.0): 1.8435709392322546,
    (1.5, 1.0, 1.0, 0.5, 1.0): 3.044319276794062,
    (1.2, 0.0, 1.0, 1.0, 1.0): 2.406082706978061,
    (1.8, 0.5, 2.0, 0.3, 0.5): 4.6279942000690735,
    (1.5, 0.2, 0.5, 2.0, 2.0): 2.7622539330706397,
}
# (alpha, eps) -> (grid min, grid argmin, analytic min, analytic argmin)
DELTA_SCAN = {
    (1.2, 0.1): (217.60743968913224, 0.0, 217.60743968913306, 0.0),
    (1.2, 1.0): (0.00339138323806392, 0.0, 0.0033913832380639145, 0.0),
    (1.2, 10.0): (2638.4561618362877, 0.09423209423209422, 2638.4561618235857, 0.0942315738481658),
    (1.5, 0.1): (16799219.901463334, 0.0, 16799219.901463304, 0.0),
    (1.5, 1.0): (1.204894351571734, 0.0, 1.204894351571734, 0.0),
    (1.5, 10.0): (410.50311667169007, 0.01199201199201199, 410.50311660725833, 0.011990331132313015),
    (1.8, 0.1): (7.891116881361953e+20, 0.0, 7.891116881361932e+20, 0.0),
    (1.8, 1.0): (126.21206986784108, 0.0, 126.21206986784108, 0.0),
    (1.8, 10.0): (297.572618879295, 0.0, 297.572618879295, 0.0),
}
EXP_SUP_ABS_BM_T1 = 4.102329226009696
# (mu, alpha, m, s) -> E exp(mu X^{2/alpha*}), X lognormal(m, s)
LOGNORMAL_PSI = {(0.8, 1.5, 0.0, 0.5): 2.4420014588416232}
