import numpy as np
import pytest

from subquad_bsde import generator as gen
from subquad_bsde.bsde_solver import MarkovBsdeProblem, make_terminal
from subquad_bsde.sde import brownian, simulate

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def benchmark_problem():
    """g = 0.5 |z|^1.5, h = cos x, Brownian motion from 0, T = 1."""
    return MarkovBsdeProblem(brownian(), make_terminal("cos"), gen.abs_z_alpha(0.5, 1.5), 0.0, np.array([0.0]), 1.0)


@pytest.fixture(scope="session")
def benchmark_batch(benchmark_problem):
    return simulate(benchmark_problem.diffusion, 0.0, [0.0], 1.0, 100, 20000, seed=2024)


@pytest.fixture(scope="session")
def small_batch():
    return simulate(brownian(), 0.0, [0.0], 1.0, 20, 4000, seed=5)
