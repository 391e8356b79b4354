import math

import numpy as np
import pytest

import frozen_values as fv
from subquad_bsde import sde
from subquad_bsde.errors import EmptySampleError, NonFiniteStateError


def test_frozen_state():
    b = sde.simulate(sde.brownian(sigma=0.0), 0.0, [1.5], 1.0, 10, 4, seed=1)
    assert np.all(b.states == 1.5)


def test_constant_drift_exact_on_dyadic_grid():
    b = sde.simulate(sde.brownian(sigma=0.0, drift=1.0), 0.5, [-0.25], 2.5, 16, 3, seed=1)
    assert np.all(b.states[:, -1, 0] == 1.75)


def test_brownian_mean_and_variance():
    n = 100_000
    b = sde.simulate(sde.brownian(), 0.0, [0.3], 1.0, 4, n, seed=7)
    xT = b.states[:, -1, 0]
    assert abs(xT.mean() - 0.3) <= 4 * math.sqrt(1.0 / n)
    assert abs(xT.var() - 1.0) <= 0.1


def test_geometric_euler_mean():
    a, s, x0, T = 0.05, 0.2, 1.0, 1.0
    b = sde.simulate(sde.geometric(a, s), 0.0, [x0], T, 200, 20_000, seed=5)
    xT = b.states[:, -1, 0]
    se = xT.std(ddof=1) / math.sqrt(xT.size)
    target = x0 * math.exp(a * T)
    assert abs(xT.mean() - target) <= 3 * se + 0.02 * target


def test_seed_determinism_and_prefix_consistency():
    bm = sde.brownian()
    a = sde.simulate(bm, 0.0, [0.0], 1.0, 7, 1500, seed=42)
    b = sde.simulate(bm, 0.0, [0.0], 1.0, 7, 1500, seed=42)
    big = sde.simulate(bm, 0.0, [0.0], 1.0, 7, 3000, seed=42)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.states, big.states[:1500])
    other = sde.simulate(bm, 0.0, [0.0], 1.0, 7, 1500, seed=43)
    assert not np.array_equal(a.states, other.states)
    stream = sde.simulate(bm, 0.0, [0.0], 1.0, 7, 1500, seed=42, stream_id=1)
    assert not np.array_equal(a.dW, stream.dW)


def test_increments_block_boundary_independent():
    inc = sde.brownian_increments(3, 0, sde.PATH_BLOCK + 5, 3, 1, 0.25)
    assert not np.array_equal(inc[0], inc[sde.PATH_BLOCK])
    np.testing.assert_array_equal(inc[: sde.PATH_BLOCK + 2], sde.brownian_increments(3, 0, sde.PATH_BLOCK + 2, 3, 1, 0.25))


def test_simulate_preconditions():
    bm = sde.brownian()
    with pytest.raises(ValueError):
        sde.simulate(bm, 0.0, [0.0], 1.0, 0, 10, seed=1)
    with pytest.raises(ValueError):
        sde.simulate(bm, 0.0, [0.0], 1.0, 10, 0, seed=1)
    with pytest.raises(ValueError):
        sde.simulate(bm, 1.0, [0.0], 1.0, 10, 10, seed=1)
    with pytest.raises(ValueError):
        sde.simulate(bm, 0.0, [0.0, 1.0], 1.0, 10, 10, seed=1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_raises():
    blow = sde.DiffusionSpec(lambda t, x: x * 1e200, lambda t, x: np.zeros((x.shape[0], 1, 1)),
                             lipschitz=1.0, dim_x=1, dim_w=1, name="blow")
    with pytest.raises(NonFiniteStateError, match="step"):
        sde.simulate(blow, 0.0, [1e200], 1.0, 5, 3, seed=0)


def test_exp_moment_deterministic_exact():
    b = sde.simulate(sde.brownian(sigma=0.0), 0.0, [1.5], 1.0, 10, 4, seed=1)
    est, se, sat = sde.exp_moment_diagnostic(b, 1.5, 0.7)
    assert est == math.exp(0.7 * 1.5 ** 1.5) and se == 0.0 and sat == 0


def test_exp_moment_monotone_in_lambda():
    b = sde.simulate(sde.brownian(), 0.0, [0.0], 1.0, 20, 2000, seed=3)
    vals = [sde.exp_moment_diagnostic(b, 1.3, lam)[0] for lam in (0.5, 1.0, 2.0)]
    assert vals[0] <= vals[1] <= vals[2]


def test_exp_moment_q_range_and_saturation():
    b = sde.simulate(sde.brownian(sigma=0.0), 0.0, [100.0], 1.0, 2, 3, seed=1)
    with pytest.raises(ValueError):
        sde.exp_moment_diagnostic(b, 2.0, 1.0)
    with pytest.raises(EmptySampleError):
        sde.exp_moment_diagnostic(b, 1.5, 1.0)


@pytest.mark.slow
def test_exp_sup_abs_brownian_against_reflection_quadrature():
    # pooled over independent streams to keep each batch small
    vals = []
    for stream in range(4):
        b = sde.simulate(sde.brownian(), 0.0, [0.0], 1.0, 4000, 5000, seed=2024, stream_id=stream)
        vals.append(np.exp(np.max(np.abs(b.states[:, :, 0]), axis=1)))
        est, _, sat = sde.exp_moment_diagnostic(b, 1.0, 1.0)
        assert math.isfinite(est) and sat == 0
    v = np.concatenate(vals)
    mean, se = v.mean(), v.std(ddof=1) / math.sqrt(v.size)
    assert abs(mean - fv.EXP_SUP_ABS_BM_T1) <= 3 * se


def test_check_A1():
    assert sde.check_A1(sde.brownian()).passed
    assert sde.check_A1(sde.ornstein_uhlenbeck()).passed
    assert sde.check_A1(sde.bounded_nonlinear()).passed
    rep = sde.check_A1(sde.geometric())
    assert not rep.passed and rep.violations


def test_save_load_roundtrip(tmp_path):
    b = sde.simulate(sde.ornstein_uhlenbeck(), 0.0, [0.4], 1.0, 9, 33, seed=8)
    p = tmp_path / "batch.bin"
    sde.save_batch(b, p)
    c = sde.load_batch(p)
    np.testing.assert_array_equal(b.states, c.states)
    np.testing.assert_array_equal(b.dW, c.dW)
    np.testing.assert_array_equal(b.time_grid, c.time_grid)
    assert (c.seed, c.stream_id, c.meta) == (b.seed, b.stream_id, b.meta)
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        sde.load_batch(tmp_path / "junk.bin")


def test_unknown_diffusion():
    with pytest.raises(KeyError):
        sde.make_diffusion("levy")
