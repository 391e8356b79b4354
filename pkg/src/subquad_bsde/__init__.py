"""Sub-quadratic BSDEs: envelope certification, Monte-Carlo backward solvers and PDE cross-checks."""

__version__ = "0.1.0"

from .envelope import (AprioriBound, CurveKind, EnvelopeCurve, SubQuadParams, certify_delta, match_epsilon, mu,
                       mu_zero, verify_envelope_inequality)
from .generator import MarkovGenerator, check_all, inf_convolution, make_generator, truncate
from .sde import PathBatch, brownian, make_diffusion, simulate
from .bsde_solver import MarkovBsdeProblem, RegressionBasis, make_terminal, solve_backward
from .feynman_kac import PdeProblem, cross_validate, fd_solve, u_from_bsde
from .report import Report

__all__ = [
    "__version__", "AprioriBound", "CurveKind", "EnvelopeCurve", "SubQuadParams", "certify_delta", "match_epsilon",
    "mu", "mu_zero", "verify_envelope_inequality", "MarkovGenerator", "check_all", "inf_convolution",
    "make_generator", "truncate", "PathBatch", "brownian", "make_diffusion", "simulate", "MarkovBsdeProblem",
    "RegressionBasis", "make_terminal", "solve_backward", "PdeProblem", "cross_validate", "fd_solve",
    "u_from_bsde", "Report",
]
