"""Euler–Maruyama simulation of the forward diffusion with counter-based random streams."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EmptySampleError, NonFiniteStateError
from .generator import AssumptionReport, _assemble

# paths per RNG block; the block index is the Philox counter, so path j's
# normals depend only on (seed, stream, j)
PATH_BLOCK = 1024
EXP_CAP = 700.0

DriftFn = Callable[[float, np.ndarray], np.ndarray]
SigmaFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class DiffusionSpec:
    """``dX = b(t, X) dt + sigma(t, X) dW``; ``b`` returns (N, n), ``sigma`` returns (N, n, d)."""

    drift: DriftFn
    sigma: SigmaFn
    lipschitz: float
    dim_x: int = 1
    dim_w: int = 1
    name: str = "custom"
    deterministic: bool = False  # sigma identically zero
    bounded_sigma: bool = True
    scalar_sigma: float | None = None  # constant scalar sigma, if any (FD oracle uses it)
    scalar_drift: float | None = None


def brownian(sigma: float = 1.0, drift: float = 0.0, dim: int = 1) -> DiffusionSpec:
    """Arithmetic Brownian motion with constant coefficients."""
    def b(t, x):
        return np.full_like(x, drift)

    def s(t, x):
        out = np.zeros(x.shape + (dim,))
        for i in range(dim):
            out[:, i, i] = sigma
        return out

    return DiffusionSpec(b, s, lipschitz=max(abs(drift) + abs(sigma), 1e-300), dim_x=dim, dim_w=dim,
                         name="brownian", deterministic=(sigma == 0.0),
                         scalar_sigma=float(sigma), scalar_drift=float(drift))


def ornstein_uhlenbeck(kappa: float = 1.0, mean: float = 0.0, sigma: float = 1.0) -> DiffusionSpec:
    def b(t, x):
        return kappa * (mean - x)

    def s(t, x):
        return np.full(x.shape + (1,), sigma)

    return DiffusionSpec(b, s, lipschitz=abs(kappa) * (1 + abs(mean)) + abs(sigma), name="ornstein_uhlenbeck",
                         deterministic=(sigma == 0.0))


def geometric(a: float = 0.05, b: float = 0.2) -> DiffusionSpec:
    """``dX = a X dt + b X dW``; sigma is unbounded, so (A1) does not hold."""
    def drift(t, x):
        return a * x

    def s(t, x):
        return (b * x)[..., None]

    return DiffusionSpec(drift, s, lipschitz=abs(a) + abs(b), name="geometric",
                         deterministic=(b == 0.0), bounded_sigma=False)


def bounded_nonlinear(amp: float = 0.5, base: float = 1.0) -> DiffusionSpec:
    """``b = -amp sin x``, ``sigma = base + amp cos(x)/2``: smooth, bounded, Lipschitz."""
    def drift(t, x):
        return -amp * np.sin(x)

    def s(t, x):
        return (base + 0.5 * amp * np.cos(x))[..., None]

    return DiffusionSpec(drift, s, lipschitz=max(amp + base + 0.5 * amp, 1.5 * amp), name="bounded_nonlinear")


DIFFUSIONS: dict[str, Callable[..., DiffusionSpec]] = {
    "brownian": brownian,
    "ornstein_uhlenbeck": ornstein_uhlenbeck,
    "geometric": geometric,
    "bounded_nonlinear": bounded_nonlinear,
}


def make_diffusion(name: str, **kwargs) -> DiffusionSpec:
    try:
        return DIFFUSIONS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown diffusion {name!r}; known: {sorted(DIFFUSIONS)}") from None


def check_A1(spec: DiffusionSpec, n_samples: int = 2000, box: float = 10.0, t_max: float = 1.0,
             seed: int = 0) -> AssumptionReport:
    """Sampled (A1): ``|b(t,0)| + |sigma(t,x)| <= K`` and Lipschitz quotients ``<= K``."""
    rng = np.random.default_rng(seed)
    n = spec.dim_x
    t = rng.uniform(0.0, t_max, n_samples)
    x1 = rng.uniform(-box, box, (n_samples, n))
    x2 = x1 + rng.normal(0.0, 1.0, (n_samples, n))
    lhs_b, lhs_l = [], []
    for i in range(n_samples):
        ti = float(t[i])
        b0 = np.linalg.norm(spec.drift(ti, np.zeros((1, n)))[0])
        s1 = spec.sigma(ti, x1[i:i + 1])[0]
        s2 = spec.sigma(ti, x2[i:i + 1])[0]
        lhs_b.append(b0 + np.linalg.norm(s1))
        db = np.linalg.norm(spec.drift(ti, x1[i:i + 1])[0] - spec.drift(ti, x2[i:i + 1])[0])
        ds = np.linalg.norm(s1 - s2)
        lhs_l.append((db + ds) / max(np.linalg.norm(x1[i] - x2[i]), 1e-300))
    lhs = np.concatenate([lhs_b, lhs_l])
    rhs = np.full(lhs.shape, spec.lipschitz)
    nodes = {"t": np.concatenate([t, t]), "x": np.concatenate([x1[:, 0], x1[:, 0]]),
             "which": np.concatenate([np.zeros(n_samples), np.ones(n_samples)])}
    return _assemble("A1", lhs, rhs, nodes)


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def _stream_key(seed: int, stream_id: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream_id)]).generate_state(2, np.uint64)


def brownian_increments(seed: int, stream_id: int, n_paths: int, n_steps: int, dim_w: int, dt: float) -> np.ndarray:
    """Increments of shape (paths, steps, dim_w); path j depends only on (seed, stream, j)."""
    key = _stream_key(seed, stream_id)
    out = np.empty((n_paths, n_steps, dim_w))
    sq = math.sqrt(dt)
    for blk, start in enumerate(range(0, n_paths, PATH_BLOCK)):
        stop = min(start + PATH_BLOCK, n_paths)
        bitgen = np.random.Philox(key=key, counter=np.array([0, 0, 0, blk], dtype=np.uint64))
        normals = np.random.Generator(bitgen).standard_normal((PATH_BLOCK, n_steps, dim_w))
        out[start:stop] = normals[: stop - start] * sq
    return out


# --------------------------------------------------------------------------
# path batches
# --------------------------------------------------------------------------

@dataclass
class PathBatch:
    time_grid: np.ndarray
    states: np.ndarray  # (paths, N+1, n)
    dW: np.ndarray  # (paths, N, d)
    seed: int
    stream_id: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.size - 1

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    @property
    def deterministic(self) -> bool:
        return bool(self.meta.get("deterministic", False))


def simulate(spec: DiffusionSpec, t0: float, x0, T: float, n_steps: int, n_paths: int, seed: int,
             stream_id: int = 0) -> PathBatch:
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be >= 1")
    if not T > t0:
        raise ValueError("T must exceed t0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != spec.dim_x:
        raise ValueError(f"x0 has {x0.size} coordinates, diffusion has {spec.dim_x}")
    grid = t0 + (T - t0) * np.arange(n_steps + 1) / n_steps
    grid[-1] = T
    dt = (T - t0) / n_steps
    if spec.deterministic:
        dW = np.zeros((n_paths, n_steps, spec.dim_w))
    else:
        dW = brownian_increments(seed, stream_id, n_paths, n_steps, spec.dim_w, dt)
    states = np.empty((n_paths, n_steps + 1, spec.dim_x))
    states[:, 0, :] = x0
    x = states[:, 0, :].copy()
    for i in range(n_steps):
        t = float(grid[i])
        incr = spec.drift(t, x) * dt
        if not spec.deterministic:
            incr = incr + np.einsum("pnd,pd->pn", spec.sigma(t, x), dW[:, i, :])
        x = x + incr
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise NonFiniteStateError(f"non-finite state on path {bad} at step {i + 1}")
        states[:, i + 1, :] = x
    return PathBatch(grid, states, dW, int(seed), int(stream_id),
                     meta={"diffusion": spec.name, "t0": float(t0), "x0": x0.tolist(), "T": float(T),
                           "deterministic": spec.deterministic})


def exp_moment_diagnostic(batch: PathBatch, q: float, lam: float) -> tuple[float, float, int]:
    """Mean over paths of ``sup_s exp(lam |X_s|^q)`` with stderr and saturation count."""
    if not (1.0 <= q < 2.0):
        raise ValueError("q must lie in [1, 2)")
    nx = np.sqrt(np.sum(batch.states ** 2, axis=2))
    expo = lam * np.max(nx, axis=1) ** q
    sat = expo > EXP_CAP
    n_sat = int(np.count_nonzero(sat))
    if n_sat == expo.size:
        raise EmptySampleError("every path saturated the exponential")
    vals = np.exp(np.minimum(expo, EXP_CAP))
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0, n_sat
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), se, n_sat


# --------------------------------------------------------------------------
# persistence: magic, u64 header length, JSON header, raw little-endian float64
# --------------------------------------------------------------------------

_MAGIC = b"SQBATCH1"


def save_batch(batch: PathBatch, path) -> None:
    header = {
        "time_grid": batch.time_grid.tolist(), "states_shape": list(batch.states.shape),
        "dW_shape": list(batch.dW.shape), "seed": batch.seed, "stream_id": batch.stream_id,
        "meta": batch.meta,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(batch.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.dW, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    with open(Path(path), "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a path-batch file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        s_shape, w_shape = tuple(header["states_shape"]), tuple(header["dW_shape"])
        states = np.frombuffer(fh.read(8 * int(np.prod(s_shape))), dtype="<f8").reshape(s_shape).copy()
        dW = np.frombuffer(fh.read(8 * int(np.prod(w_shape))), dtype="<f8").reshape(w_shape).copy()
    return PathBatch(np.asarray(header["time_grid"]), states, dW, header["seed"], header["stream_id"],
                     header.get("meta", {}))
